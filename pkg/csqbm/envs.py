"""
Seedable toy environments with continuous states and actions.

ContinuousBandit: one-step episodes, r = -(a - a*(s))^2 + noise.
SteerLine: a line of n corrector/monitor pairs, s' = s + G a + noise with the
lower-triangular response G[i, j] = kick_gain * 0.5^(i - j) for j <= i (a kick
reaches every downstream monitor, halving per segment).

Out-of-bound actions are clipped to the bounds and counted.
"""

from __future__ import annotations

import abc
import dataclasses
import logging
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np


LOGGER = logging.getLogger("csqbm.envs")


class EpisodeDoneError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: Tuple[float, ...]
    action_high: Tuple[float, ...]
    horizon: int

    def __post_init__(self) -> None:
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be positive")
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ValueError("one bound pair per action dimension is required")
        for low, high in zip(self.action_low, self.action_high):
            if not (np.isfinite(low) and np.isfinite(high) and low < high):
                raise ValueError(f"invalid action interval [{low}, {high}]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")


@dataclasses.dataclass(frozen=True)
class StepResult:
    s_next: np.ndarray
    r: float
    done: bool
    clipped: bool = False


class Environment(abc.ABC):
    spec: EnvSpec

    def __init__(self) -> None:
        self.clip_count = 0
        self._rng: Optional[np.random.Generator] = None
        self._state: Optional[np.ndarray] = None
        self._steps = 0
        self._done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._rng = rng
        self._steps = 0
        self._done = False
        self._state = self._initial_state(rng)
        return self._state.copy()

    def step(self, a: Any) -> StepResult:
        if self._state is None:
            raise EpisodeDoneError(f"{self.spec.name}: step() before reset()")
        if self._done:
            raise EpisodeDoneError(f"{self.spec.name}: episode finished, call reset() first")
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != self.spec.action_dim:
            raise ValueError(f"{self.spec.name}: expected {self.spec.action_dim} action components, got {a.size}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{self.spec.name}: non-finite action {a.tolist()}")
        bounded = np.clip(a, self.spec.action_low, self.spec.action_high)
        clipped = bool(np.any(bounded != a))
        if clipped:
            self.clip_count += 1
            LOGGER.debug("%s: action %s clipped to %s", self.spec.name, a.tolist(), bounded.tolist())
        self._steps += 1
        s_next, r, done = self._transition(self._state, bounded)
        done = done or self._steps >= self.spec.horizon
        self._state = s_next
        self._done = done
        return StepResult(s_next=s_next.copy(), r=float(r), done=done, clipped=clipped)

    @property
    def rng(self) -> np.random.Generator:
        assert self._rng is not None
        return self._rng

    @abc.abstractmethod
    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        ...

    @abc.abstractmethod
    def _transition(self, s: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        ...

    @abc.abstractmethod
    def optimal_action(self, s: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def cost_bound(self) -> float:
        """Largest possible per-step cost (negated reward) without noise."""

    def return_lower_bound(self) -> float:
        return -self.spec.horizon * self.cost_bound()


class ContinuousBandit(Environment):
    def __init__(
        self,
        slope: float = 0.5,
        offset: float = 0.0,
        noise_sigma: float = 0.0,
        action_bound: float = 2.0,
    ):
        super().__init__()
        if noise_sigma < 0:
            raise ValueError("noise_sigma must not be negative")
        self.slope = float(slope)
        self.offset = float(offset)
        self.noise_sigma = float(noise_sigma)
        self.action_bound = float(action_bound)
        self.spec = EnvSpec("bandit", 1, 1, (-self.action_bound,), (self.action_bound,), 1)

    def target(self, s: np.ndarray) -> np.ndarray:
        return self.slope * np.asarray(s, dtype=float) + self.offset

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=1)

    def _transition(self, s: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        r = -float(np.sum((a - self.target(s)) ** 2))
        if self.noise_sigma > 0:
            r += self.noise_sigma * float(self.rng.normal())
        return s.copy(), r, True

    def optimal_action(self, s: np.ndarray) -> np.ndarray:
        return self.target(s).reshape(-1)

    def cost_bound(self) -> float:
        return (self.action_bound + abs(self.slope) + abs(self.offset)) ** 2


class SteerLine(Environment):
    def __init__(
        self,
        n_segments: int = 1,
        kick_gain: float = 1.0,
        noise_sigma: float = 0.0,
        horizon: int = 10,
        threshold: float = 0.05,
        action_bound: float = 2.0,
    ):
        super().__init__()
        if n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must not be negative")
        if kick_gain == 0:
            raise ValueError("kick_gain must be non-zero")
        self.n_segments = int(n_segments)
        self.kick_gain = float(kick_gain)
        self.noise_sigma = float(noise_sigma)
        self.threshold = float(threshold)
        self.action_bound = float(action_bound)
        rows, cols = np.indices((self.n_segments, self.n_segments))
        self.response = np.where(cols <= rows, self.kick_gain * 0.5 ** (rows - cols), 0.0)
        self.spec = EnvSpec(
            "steerline",
            self.n_segments,
            self.n_segments,
            (-self.action_bound,) * self.n_segments,
            (self.action_bound,) * self.n_segments,
            int(horizon),
        )

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=self.n_segments)

    def _transition(self, s: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        s_next = s + self.response @ a
        if self.noise_sigma > 0:
            s_next = s_next + self.noise_sigma * self.rng.normal(size=self.n_segments)
        r = -float(s_next @ s_next)
        return s_next, r, bool(np.linalg.norm(s_next) < self.threshold)

    def optimal_action(self, s: np.ndarray) -> np.ndarray:
        return -np.linalg.solve(self.response, np.asarray(s, dtype=float))

    def cost_bound(self) -> float:
        drift = np.abs(self.response).sum(axis=1).max() * self.action_bound
        return self.n_segments * (1.0 + self.spec.horizon * drift) ** 2


def bandit_env(
    slope: float = 0.5, offset: float = 0.0, noise_sigma: float = 0.0, action_bound: float = 2.0
) -> ContinuousBandit:
    return ContinuousBandit(slope=slope, offset=offset, noise_sigma=noise_sigma, action_bound=action_bound)


def steering_env(
    n_segments: int = 1,
    kick_gain: float = 1.0,
    noise_sigma: float = 0.0,
    horizon: int = 10,
    threshold: float = 0.05,
    action_bound: float = 2.0,
) -> SteerLine:
    return SteerLine(
        n_segments=n_segments,
        kick_gain=kick_gain,
        noise_sigma=noise_sigma,
        horizon=horizon,
        threshold=threshold,
        action_bound=action_bound,
    )


ENVIRONMENTS: Dict[str, Callable[..., Environment]] = {
    "bandit": bandit_env,
    "steerline": steering_env,
}


def make_env(name: str, params: Optional[Dict[str, Any]] = None) -> Environment:
    try:
        factory = ENVIRONMENTS[name]
    except KeyError as exc:
        raise ValueError(f"unknown environment {name!r}; available: {sorted(ENVIRONMENTS)}") from exc
    return factory(**(params or {}))
