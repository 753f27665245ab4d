"""
Free-energy Q-learning with a CSQBM critic.

Q(s, a) = -F(s, a). The inner maximisation over actions is replaced by
best-of-K posterior sampling: K chains of the alternating Gibbs sampler with
the state clamped, keeping the candidate with the largest Q.

TD step (descent on the squared TD error):
    delta = F(s, a) + r - gamma * F_target(s', a*)     (no bootstrap when done)
    w    <- w - alpha * mean(delta * dF/dw)
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
import time
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .envs import Environment
from .model import (
    DEFAULT_SWEEPS,
    CsqbmModel,
    free_energy_batch,
    gibbs_sample_action,
    q_action_gradient_batch,
    q_values_batch,
    run_chains,
    weight_gradient_batch,
)


LOGGER = logging.getLogger("csqbm.agent")

Policy = Callable[[np.ndarray], np.ndarray]


class TdUpdateError(RuntimeError):
    def __init__(self, message: str, index: Optional[int] = None, residual: Optional[float] = None):
        super().__init__(message)
        self.index = index
        self.residual = residual


class DivergenceError(RuntimeError):
    def __init__(self, step: int, mean_abs_td: float, ceiling: float, patience: int):
        super().__init__(
            f"training diverged at step {step}: mean |td| {mean_abs_td:.4g} above "
            f"{ceiling:.4g} for {patience} consecutive updates"
        )
        self.step = step
        self.mean_abs_td = mean_abs_td


class ExploreMode(str, enum.Enum):
    GIBBS = "gibbs"
    EPSILON_GREEDY = "epsilon_greedy"


@dataclasses.dataclass(frozen=True)
class AgentConfig:
    alpha: float = 0.01
    gamma: float = 0.9
    beta: float = 1.0
    sweeps: int = DEFAULT_SWEEPS
    action_candidates: int = 8
    explore_mode: ExploreMode = ExploreMode.GIBBS
    explore_beta: Optional[float] = None
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 1000
    batch_size: int = 16
    buffer_capacity: int = 10000
    warmup_steps: int = 32
    target_sync: int = 200
    action_refine_steps: int = 0
    refine_step_size: float = 0.05
    beta_final: Optional[float] = None
    beta_anneal_steps: int = 0
    divergence_ceiling: float = 1e6
    divergence_patience: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(self, "explore_mode", ExploreMode(self.explore_mode))
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.explore_beta is not None and not self.explore_beta > 0:
            raise ValueError("explore_beta must be > 0")
        if self.beta_final is not None and not self.beta_final > 0:
            raise ValueError("beta_final must be > 0")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.action_candidates < 1:
            raise ValueError("action_candidates must be >= 1")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be >= 1")
        if self.target_sync < 1:
            raise ValueError("target_sync must be >= 1")
        if self.warmup_steps < 0 or self.epsilon_decay_steps < 0 or self.beta_anneal_steps < 0:
            raise ValueError("step counts must not be negative")
        if self.action_refine_steps < 0 or not self.refine_step_size > 0:
            raise ValueError("action refinement needs steps >= 0 and a positive step size")
        if not self.divergence_ceiling > 0 or self.divergence_patience < 1:
            raise ValueError("divergence guard needs ceiling > 0 and patience >= 1")

    def epsilon_at(self, step: int) -> float:
        if self.epsilon_decay_steps == 0:
            return self.epsilon_end
        fraction = min(1.0, step / self.epsilon_decay_steps)
        return self.epsilon_start + fraction * (self.epsilon_end - self.epsilon_start)

    def beta_at(self, step: int) -> float:
        if self.beta_final is None or self.beta_anneal_steps == 0:
            return self.beta
        fraction = min(1.0, step / self.beta_anneal_steps)
        return self.beta + fraction * (self.beta_final - self.beta)


@dataclasses.dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool

    def __post_init__(self) -> None:
        for name in ("s", "a", "s_next"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "done", bool(self.done))
        if not math.isfinite(self.r):
            raise ValueError(f"transition reward must be finite, got {self.r}")
        if self.s.shape != self.s_next.shape:
            raise ValueError(f"state shapes differ: {self.s.shape} vs {self.s_next.shape}")


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._items: List[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        if not self._items:
            raise ValueError("cannot sample from an empty replay buffer")
        return [self._items[i] for i in rng.integers(0, len(self._items), size=int(batch_size))]


# ==================== 动作选择 ====================

def _refine(
    model: CsqbmModel, states: np.ndarray, actions: np.ndarray, q: np.ndarray, config: AgentConfig
) -> np.ndarray:
    """Gradient ascent on Q(s, .) per row; a row stops at its first non-improving step."""
    actions, q = actions.copy(), q.copy()
    active = np.arange(len(actions))
    for _ in range(config.action_refine_steps):
        if not active.size:
            break
        proposal = actions[active] + config.refine_step_size * q_action_gradient_batch(
            model, states[active], actions[active]
        )
        q_proposal = q_values_batch(model, states[active], proposal)
        improved = q_proposal > q[active]
        actions[active[improved]] = proposal[improved]
        q[active[improved]] = q_proposal[improved]
        active = active[improved]
    return actions


def select_actions_batch(
    model: CsqbmModel, states: np.ndarray, config: AgentConfig, rng: np.random.Generator
) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    count, state_dim = states.shape
    k = config.action_candidates
    if state_dim >= model.n:
        raise ValueError(f"state has {state_dim} components, model has only {model.n} visible units")
    clamp = np.repeat(states, k, axis=0)
    candidates = run_chains(model, np.arange(state_dim), clamp, config.sweeps, rng)
    q = q_values_batch(model, clamp, candidates).reshape(count, k)
    candidates = candidates.reshape(count, k, -1)
    best = np.argmax(q, axis=1)
    chosen = candidates[np.arange(count), best]
    if config.action_refine_steps:
        chosen = _refine(model, states, chosen, q[np.arange(count), best], config)
    return chosen


def select_action(
    model: CsqbmModel, s: Sequence[float], config: AgentConfig, rng: np.random.Generator
) -> np.ndarray:
    return select_actions_batch(model, np.asarray(s, dtype=float)[None], config, rng)[0]


def prior_action(model: CsqbmModel, state_dim: int, rng: np.random.Generator) -> np.ndarray:
    free = list(range(state_dim, model.n))
    theta = model.prior.theta.select_units(free)
    return model.prior.family.sample(theta.values, rng)


def explore_action(
    model: CsqbmModel,
    s: Sequence[float],
    config: AgentConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> np.ndarray:
    s = np.asarray(s, dtype=float).reshape(-1)
    if config.explore_mode is ExploreMode.GIBBS:
        beta = config.explore_beta if config.explore_beta is not None else model.beta
        return gibbs_sample_action(model.with_beta(beta), s, config.sweeps, rng)
    epsilon = config.epsilon_at(step)
    if epsilon >= 1.0:
        return prior_action(model, s.size, rng)
    if epsilon <= 0.0:
        return select_action(model, s, config, rng)
    if rng.random() < epsilon:
        return prior_action(model, s.size, rng)
    return select_action(model, s, config, rng)


# ==================== TD 更新 ====================

@dataclasses.dataclass(frozen=True, eq=False)
class TdUpdateResult:
    model: CsqbmModel
    residuals: np.ndarray
    mean_abs_td: float
    grad_norm: float


def td_update(
    model: CsqbmModel,
    batch: Sequence[Transition],
    target_model: CsqbmModel,
    config: AgentConfig,
    rng: np.random.Generator,
) -> TdUpdateResult:
    if not batch:
        raise TdUpdateError("td_update needs a non-empty batch")
    if target_model.num_weights != model.num_weights or target_model.n != model.n:
        raise TdUpdateError(
            f"target model shape ({target_model.n}, {target_model.num_weights}) does not match "
            f"online model ({model.n}, {model.num_weights})"
        )
    states = np.stack([t.s for t in batch])
    actions = np.stack([t.a for t in batch])
    if states.shape[1] + actions.shape[1] != model.n:
        raise TdUpdateError(
            f"transition dims {states.shape[1]}+{actions.shape[1]} do not match model n={model.n}"
        )
    rewards = np.array([t.r for t in batch])
    done = np.array([t.done for t in batch])
    visible = np.concatenate([states, actions], axis=1)

    residuals = free_energy_batch(model, visible) + rewards
    live = ~done
    if config.gamma > 0 and np.any(live):
        next_states = np.stack([t.s_next for t in batch])[live]
        best = select_actions_batch(target_model, next_states, config, rng)
        target_f = free_energy_batch(target_model, np.concatenate([next_states, best], axis=1))
        residuals[live] -= config.gamma * target_f
    bad = np.flatnonzero(~np.isfinite(residuals))
    if bad.size:
        raise TdUpdateError(
            f"non-finite TD residual at batch index {bad[0]}", index=int(bad[0]), residual=float(residuals[bad[0]])
        )

    direction = np.mean(residuals[:, None] * weight_gradient_batch(model, visible), axis=0)
    updated = model.with_weights(model.weights_vector() - config.alpha * direction)
    return TdUpdateResult(
        model=updated,
        residuals=residuals,
        mean_abs_td=float(np.mean(np.abs(residuals))),
        grad_norm=float(np.linalg.norm(direction)),
    )


# ==================== 训练与评估 ====================

METRIC_FIELDS = ("episode", "steps", "return", "mean_abs_td", "grad_norm", "epsilon_or_beta", "wall_ms")


@dataclasses.dataclass(eq=False)
class TrainingLog:
    records: List[Dict[str, Any]]
    model: CsqbmModel
    target_model: CsqbmModel
    total_steps: int = 0


def train(
    env: Environment,
    config: AgentConfig,
    model: CsqbmModel,
    episodes: int,
    env_rng: np.random.Generator,
    agent_rng: np.random.Generator,
    max_steps: Optional[int] = None,
    record_wall_time: bool = False,
    on_episode: Optional[Callable[[Dict[str, Any]], None]] = None,
    on_step: Optional[Callable[[int, CsqbmModel], None]] = None,
) -> TrainingLog:
    """Run ``episodes`` episodes (or stop once ``max_steps`` environment steps are taken)."""
    if episodes < 0:
        raise ValueError("episodes must not be negative")
    state_dim = env.spec.state_dim
    if state_dim + env.spec.action_dim != model.n:
        raise ValueError(
            f"environment {env.spec.name} needs n = {state_dim + env.spec.action_dim}, model has {model.n}"
        )
    buffer = ReplayBuffer(config.buffer_capacity)
    model = model.with_beta(config.beta_at(0))
    target = model
    log = TrainingLog(records=[], model=model, target_model=target)
    step = 0
    over_ceiling = 0

    for episode in range(episodes):
        if max_steps is not None and step >= max_steps:
            break
        started = time.perf_counter()
        s = env.reset(env_rng)
        total, steps, td_values, grad_values = 0.0, 0, [], []
        done = False
        while not done and (max_steps is None or step < max_steps):
            beta = config.beta_at(step)
            if beta != model.beta:
                model, target = model.with_beta(beta), target.with_beta(beta)
            a = explore_action(model, s, config, agent_rng, step)
            result = env.step(a)
            # the buffer holds the action the environment executed
            executed = np.clip(a, env.spec.action_low, env.spec.action_high)
            buffer.push(Transition(s, executed, result.r, result.s_next, result.done))
            total += result.r
            steps += 1
            step += 1
            done = result.done
            s = result.s_next

            if step > config.warmup_steps:
                update = td_update(model, buffer.sample(config.batch_size, agent_rng), target, config, agent_rng)
                model = update.model
                td_values.append(update.mean_abs_td)
                grad_values.append(update.grad_norm)
                if update.mean_abs_td > config.divergence_ceiling:
                    over_ceiling += 1
                    if over_ceiling == 1:
                        LOGGER.warning(
                            "Mean |td| %.4g above ceiling %.4g at step %d",
                            update.mean_abs_td, config.divergence_ceiling, step,
                        )
                    if over_ceiling >= config.divergence_patience:
                        raise DivergenceError(step, update.mean_abs_td, config.divergence_ceiling, config.divergence_patience)
                else:
                    over_ceiling = 0
            if step % config.target_sync == 0:
                target = model
                LOGGER.debug("Target synced at step %d", step)
            if on_step is not None:
                on_step(step, model)

        record = {
            "episode": episode,
            "steps": steps,
            "return": total,
            "mean_abs_td": float(np.mean(td_values)) if td_values else 0.0,
            "grad_norm": float(np.mean(grad_values)) if grad_values else 0.0,
            "epsilon_or_beta": (
                config.epsilon_at(step)
                if config.explore_mode is ExploreMode.EPSILON_GREEDY
                else (config.explore_beta if config.explore_beta is not None else model.beta)
            ),
            "wall_ms": int((time.perf_counter() - started) * 1000) if record_wall_time else 0,
        }
        log.records.append(record)
        if on_episode is not None:
            on_episode(record)

    log.model, log.target_model, log.total_steps = model, target, step
    return log


@dataclasses.dataclass(frozen=True)
class EvaluationSummary:
    episodes: int
    mean_return: float
    std_return: float
    returns: List[float]
    traces: List[Dict[str, Any]]

    def to_record(self) -> Dict[str, Any]:
        return {
            "episodes": self.episodes,
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "returns": list(self.returns),
        }


def evaluate(
    model: Optional[CsqbmModel],
    env: Environment,
    episodes: int,
    rng: np.random.Generator,
    config: Optional[AgentConfig] = None,
    policy: Optional[Policy] = None,
) -> EvaluationSummary:
    """Greedy rollouts with ``select_action``, or with ``policy`` when one is given."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if policy is None:
        if model is None:
            raise ValueError("evaluate needs a model or a policy")
        config = config or AgentConfig()

        def policy(state: np.ndarray) -> np.ndarray:
            return select_action(model, state, config, rng)

    returns: List[float] = []
    traces: List[Dict[str, Any]] = []
    for _ in range(episodes):
        s = env.reset(rng)
        actions, rewards = [], []
        done = False
        while not done:
            a = np.asarray(policy(s), dtype=float).reshape(-1)
            result = env.step(a)
            actions.append([float(x) for x in a])
            rewards.append(result.r)
            done = result.done
            s = result.s_next
        returns.append(float(np.sum(rewards)))
        traces.append({"actions": actions, "rewards": rewards, "return": returns[-1]})
    return EvaluationSummary(
        episodes=episodes,
        mean_return=float(np.mean(returns)),
        std_return=float(np.std(returns)),
        returns=returns,
        traces=traces,
    )
