"""
Exponential-family priors over the continuous visible units.

A prior has density e^{c(v) - A(theta)} with c(v) = theta^T s(v) + log g(v).
Units are independent; unit i owns k consecutive statistics, so the full
statistic vector has layout (s_1(v_1), s_2(v_2), ...), d = n * k.

Only the Gaussian family ships: s_i(v_i) = (v_i, v_i^2), g = 1,
theta_i = (mu_i / sigma_i^2, -1 / (2 sigma_i^2)).
"""

from __future__ import annotations

import abc
import dataclasses
import logging
import math
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np


LOGGER = logging.getLogger("csqbm.exp_family")


class NonNormalizableError(ValueError):
    """Natural parameters without a finite log partition."""

    def __init__(self, unit: int, value: float, context: str = ""):
        where = f" ({context})" if context else ""
        super().__init__(
            f"natural parameters are not normalizable at visible unit {unit}: "
            f"quadratic component {value!r} must be finite and < 0{where}"
        )
        self.unit = unit
        self.value = value


class ExponentialFamily(abc.ABC):
    tag: str = ""
    stats_per_unit: int = 1

    @abc.abstractmethod
    def sufficient_stats(self, v: np.ndarray) -> np.ndarray:
        """(..., n) -> (..., n * stats_per_unit) in the fixed layout."""

    @abc.abstractmethod
    def stats_jacobian(self, v: np.ndarray) -> np.ndarray:
        """(..., n) -> (..., n, stats_per_unit): d s_i(v_i) / d v_i."""

    @abc.abstractmethod
    def log_base_measure(self, v: np.ndarray) -> np.ndarray:
        """(..., n) -> (...,)"""

    @abc.abstractmethod
    def grad_log_base_measure(self, v: np.ndarray) -> np.ndarray:
        """(..., n) -> (..., n)"""

    @abc.abstractmethod
    def first_non_integrable(self, values: np.ndarray) -> Optional[Tuple[int, float]]:
        """(unit, offending value) of the first non-normalizable unit, or None."""

    @abc.abstractmethod
    def log_partition(self, values: np.ndarray, base_power: float = 1.0) -> np.ndarray:
        """(..., d) -> (...,), assuming integrable parameters."""

    @abc.abstractmethod
    def sample(
        self,
        values: np.ndarray,
        rng: np.random.Generator,
        size: Optional[int] = None,
        base_power: float = 1.0,
    ) -> np.ndarray:
        """Independent draws per unit; (..., d) -> (..., n) or (size, n)."""

    def num_units(self, values: np.ndarray) -> int:
        return int(np.shape(values)[-1]) // self.stats_per_unit

    def check_integrable(self, values: np.ndarray, context: str = "") -> None:
        offending = self.first_non_integrable(values)
        if offending is not None:
            raise NonNormalizableError(offending[0], offending[1], context)


class GaussianFamily(ExponentialFamily):
    tag = "gaussian"
    stats_per_unit = 2

    def sufficient_stats(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        stats = np.stack([v, v * v], axis=-1)
        return stats.reshape(v.shape[:-1] + (2 * v.shape[-1],))

    def stats_jacobian(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.stack([np.ones_like(v), 2.0 * v], axis=-1)

    def log_base_measure(self, v: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(v)[:-1])

    def grad_log_base_measure(self, v: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(v))

    def first_non_integrable(self, values: np.ndarray) -> Optional[Tuple[int, float]]:
        quadratic = np.asarray(values, dtype=float)[..., 1::2]
        bad = ~(np.isfinite(quadratic) & (quadratic < 0.0))
        if not np.any(bad):
            return None
        unit = int(np.argwhere(bad)[0][-1])
        return unit, float(quadratic[tuple(np.argwhere(bad)[0])])

    def log_partition(self, values: np.ndarray, base_power: float = 1.0) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        linear, quadratic = values[..., 0::2], values[..., 1::2]
        per_unit = -linear ** 2 / (4.0 * quadratic) + 0.5 * np.log(math.pi / (-quadratic))
        return per_unit.sum(axis=-1)

    def moments(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(mean, variance) per unit."""
        values = np.asarray(values, dtype=float)
        linear, quadratic = values[..., 0::2], values[..., 1::2]
        return -linear / (2.0 * quadratic), -1.0 / (2.0 * quadratic)

    def sample(
        self,
        values: np.ndarray,
        rng: np.random.Generator,
        size: Optional[int] = None,
        base_power: float = 1.0,
    ) -> np.ndarray:
        mean, variance = self.moments(values)
        shape = mean.shape if size is None else (int(size),) + mean.shape
        return rng.normal(np.broadcast_to(mean, shape), np.sqrt(np.broadcast_to(variance, shape)))


GAUSSIAN = GaussianFamily()
FAMILIES: Dict[str, ExponentialFamily] = {GAUSSIAN.tag: GAUSSIAN}


def family_for(tag: str) -> ExponentialFamily:
    try:
        return FAMILIES[str(tag).lower()]
    except KeyError as exc:
        raise ValueError(f"unknown prior family {tag!r}; available: {sorted(FAMILIES)}") from exc


@dataclasses.dataclass(frozen=True)
class NaturalParams:
    """theta, optionally stacked (..., d), plus the base-measure exponent (g' = g^power)."""

    values: np.ndarray
    family: ExponentialFamily = dataclasses.field(default_factory=lambda: GAUSSIAN)
    base_power: float = 1.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim == 0 or values.shape[-1] % self.family.stats_per_unit:
            raise ValueError(
                f"theta length {values.shape} is not a multiple of "
                f"{self.family.stats_per_unit} statistics per unit"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[-1])

    @property
    def n(self) -> int:
        return self.family.num_units(self.values)

    def select_units(self, units: Sequence[int]) -> "NaturalParams":
        k = self.family.stats_per_unit
        columns = [unit * k + offset for unit in units for offset in range(k)]
        return dataclasses.replace(self, values=self.values[..., columns])


@dataclasses.dataclass(frozen=True)
class ExpFamilyPrior:
    theta: NaturalParams
    log_scale: float = 0.0  # log of the constant factor k in g(v) -> e^k g(v)

    @property
    def family(self) -> ExponentialFamily:
        return self.theta.family

    @property
    def n(self) -> int:
        return self.theta.n

    @property
    def dim(self) -> int:
        return self.theta.dim

    @classmethod
    def gaussian(cls, mu: Sequence[float], sigma: Sequence[float], log_scale: float = 0.0) -> "ExpFamilyPrior":
        return cls(NaturalParams(gaussian_natural_params(mu, sigma)), log_scale=log_scale)

    def with_theta(self, values: np.ndarray) -> "ExpFamilyPrior":
        return dataclasses.replace(self, theta=dataclasses.replace(self.theta, values=values))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.tag,
            "theta": [float(x) for x in self.theta.values],
            "log_scale": float(self.log_scale),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExpFamilyPrior":
        family = family_for(data.get("family", GAUSSIAN.tag))
        theta = NaturalParams(np.asarray(data["theta"], dtype=float), family=family)
        family.check_integrable(theta.values, "prior")
        return cls(theta, log_scale=float(data.get("log_scale", 0.0)))


# ==================== 参数换算 ====================

def gaussian_natural_params(mu: Sequence[float], sigma: Sequence[float]) -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if mu.shape != sigma.shape:
        raise ValueError(f"mu/sigma shape mismatch: {mu.shape} vs {sigma.shape}")
    if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0.0):
        raise ValueError(f"sigma must be finite and > 0, got {sigma.tolist()}")
    values = np.empty(2 * mu.size)
    values[0::2] = mu / sigma ** 2
    values[1::2] = -1.0 / (2.0 * sigma ** 2)
    return values


def gaussian_moments(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """theta -> (mu, sigma)."""
    mean, variance = GAUSSIAN.moments(values)
    return mean, np.sqrt(variance)


def coupling_row_mask(family: ExponentialFamily, n: int, quadratic: bool = False) -> np.ndarray:
    """Rows of W that may be non-zero; only the first statistic of each unit by default."""
    mask = np.zeros((n, family.stats_per_unit), dtype=bool)
    mask[:, 0] = True
    if quadratic:
        mask[:, :] = True
    return mask.reshape(-1)


# ==================== c(v) 及其导数 ====================

def _visible(prior: ExpFamilyPrior, v: Any) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != prior.n:
        raise ValueError(f"expected {prior.n} visible components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"visible vector has non-finite components: {v.tolist()}")
    return v


def c_values(prior: ExpFamilyPrior, v: np.ndarray) -> np.ndarray:
    v = _visible(prior, v)
    stats = prior.family.sufficient_stats(v)
    return stats @ prior.theta.values + prior.family.log_base_measure(v) + prior.log_scale


def c_value(prior: ExpFamilyPrior, v: Sequence[float]) -> float:
    return float(c_values(prior, np.asarray(v, dtype=float).reshape(-1)))


def grad_c_v(prior: ExpFamilyPrior, v: np.ndarray) -> np.ndarray:
    v = _visible(prior, v)
    k = prior.family.stats_per_unit
    theta = prior.theta.values.reshape(prior.n, k)
    jacobian = prior.family.stats_jacobian(v)
    return (jacobian * theta).sum(axis=-1) + prior.family.grad_log_base_measure(v)


def grad_c_theta(prior: ExpFamilyPrior, v: np.ndarray) -> np.ndarray:
    return prior.family.sufficient_stats(_visible(prior, v))


# ==================== 配分函数、倾斜与采样 ====================

def log_partition(theta: NaturalParams) -> float | np.ndarray:
    theta.family.check_integrable(theta.values)
    result = theta.family.log_partition(theta.values, theta.base_power)
    return float(result) if np.ndim(result) == 0 else result


def tilt(theta: NaturalParams, W: np.ndarray, h: np.ndarray, beta: float) -> NaturalParams:
    """theta' = beta * (theta + W h); h may be a single spin vector or a (B, m) stack."""
    W = np.asarray(W, dtype=float)
    h = np.asarray(h, dtype=float)
    if W.shape[0] != theta.dim or W.shape[1] != h.shape[-1]:
        raise ValueError(
            f"coupling shape {W.shape} incompatible with theta dim {theta.dim} "
            f"and {h.shape[-1]} hidden spins"
        )
    beta = float(beta)
    if not math.isfinite(beta) or beta <= 0.0:
        raise ValueError(f"beta must be finite and > 0, got {beta}")
    values = beta * (theta.values + h @ W.T)
    theta.family.check_integrable(values, f"tilted by beta={beta}")
    return NaturalParams(values, family=theta.family, base_power=beta * theta.base_power)


def sample(theta: NaturalParams, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    theta.family.check_integrable(theta.values)
    return theta.family.sample(theta.values, rng, size=size, base_power=theta.base_power)


def log_density(theta: NaturalParams, v: np.ndarray) -> float | np.ndarray:
    theta.family.check_integrable(theta.values)
    v = np.asarray(v, dtype=float)
    stats = theta.family.sufficient_stats(v)
    result = (
        np.sum(stats * theta.values, axis=-1)
        + theta.base_power * theta.family.log_base_measure(v)
        - theta.family.log_partition(theta.values, theta.base_power)
    )
    return float(result) if np.ndim(result) == 0 else result
