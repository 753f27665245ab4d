"""
CSQBM: continuous visible units with an exponential-family prior, coupled to a
register of hidden qubits through a single Pauli basis P.

    H(v)  = -c(v) I + H'(v)
    H'(v) = -sum_ij W_ij s_i(v) P_j + H_hidden

F(v) = -c(v) + F_{H'}(v), Q(s, a) = -F(concat(s, a)).

Trainable weight layout (stable, part of the checkpoint contract):
    1. W entries of the rows enabled by the coupling mask, row-major;
    2. hidden-term coefficients in spec order;
    3. theta, only when ``theta_trainable``.
Rows outside the mask are held at zero and never appear in the vector.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import logging
import math
from typing import Any, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp, softmax

from .exp_family import (
    ExpFamilyPrior,
    NaturalParams,
    c_values,
    coupling_row_mask,
    grad_c_v,
    log_density,
    tilt,
)
from .quantum_core import (
    GibbsState,
    PauliHamiltonianSpec,
    PauliOp,
    PauliTerm,
    all_spin_configurations,
    assemble_hamiltonian,
    basis_rotation,
    diagonal_in_basis,
    embed_operator,
    gibbs_state,
    gibbs_states_batch,
    index_to_spins,
    sample_hidden,
    sample_outcomes,
    spins_to_index,
)


LOGGER = logging.getLogger("csqbm.model")

DEFAULT_SWEEPS = 20

Clamp = Union[Sequence[float], np.ndarray, Mapping[int, float]]


class ModelValidationError(ValueError):
    pass


class GradientTarget(str, enum.Enum):
    WEIGHTS = "weights"
    VISIBLE = "visible"
    BOTH = "both"


@dataclasses.dataclass(frozen=True, eq=False)
class CsqbmModel:
    prior: ExpFamilyPrior
    W: np.ndarray
    hidden_spec: PauliHamiltonianSpec
    coupling_basis: PauliOp = PauliOp.Z
    beta: float = 1.0
    quadratic_coupling: bool = False
    strict_sampler: bool = True
    theta_trainable: bool = False

    def __post_init__(self) -> None:
        W = np.array(self.W, dtype=float)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "coupling_basis", PauliOp.parse(self.coupling_basis))
        object.__setattr__(self, "beta", float(self.beta))
        self._validate()

    def _validate(self) -> None:
        if self.W.ndim != 2:
            raise ModelValidationError(f"W must be a matrix, got shape {self.W.shape}")
        if self.W.shape[0] != self.prior.dim:
            raise ModelValidationError(
                f"W has {self.W.shape[0]} rows but the prior has {self.prior.dim} statistics"
            )
        if self.W.shape[1] != self.hidden_spec.num_qubits:
            raise ModelValidationError(
                f"W has {self.W.shape[1]} columns but hidden_spec has "
                f"{self.hidden_spec.num_qubits} qubits"
            )
        if not np.all(np.isfinite(self.W)):
            raise ModelValidationError("W has non-finite entries")
        if not math.isfinite(self.beta) or self.beta <= 0.0:
            raise ModelValidationError(f"beta must be finite and > 0, got {self.beta}")
        if np.any(self.W[~self.row_mask] != 0.0):
            raise ModelValidationError(
                "W rows of higher-order statistics must be zero unless quadratic_coupling is set"
            )
        if self.strict_sampler and not self.hidden_spec.is_diagonal_in(self.coupling_basis):
            offending = [t.label for t in self.hidden_spec.terms if not t.is_diagonal_in(self.coupling_basis)]
            raise ModelValidationError(
                f"strict_sampler requires hidden terms diagonal in {self.coupling_basis.value}; "
                f"offending terms: {offending}"
            )
        offending_unit = self.prior.family.first_non_integrable(self.prior.theta.values)
        if offending_unit is not None:
            raise ModelValidationError(f"prior is not normalizable at unit {offending_unit[0]}")

    # ---------- shapes ----------

    @property
    def n(self) -> int:
        return self.prior.n

    @property
    def m(self) -> int:
        return self.hidden_spec.num_qubits

    @property
    def d(self) -> int:
        return self.prior.dim

    @functools.cached_property
    def row_mask(self) -> np.ndarray:
        return coupling_row_mask(self.prior.family, self.n, self.quadratic_coupling)

    # ---------- cached operators ----------

    @functools.cached_property
    def hidden_matrix(self) -> np.ndarray:
        return assemble_hamiltonian(self.hidden_spec)

    @functools.cached_property
    def coupling_ops(self) -> np.ndarray:
        """(m, 2^m, 2^m) stack of the embedded coupling-basis operators P_j."""
        return np.stack([embed_operator(self.coupling_basis, j, self.m) for j in range(self.m)])

    @functools.cached_property
    def term_ops(self) -> np.ndarray:
        return self.hidden_spec.term_operators()

    @functools.cached_property
    def hidden_is_diagonal(self) -> bool:
        return self.hidden_spec.is_diagonal_in(self.coupling_basis)

    @functools.cached_property
    def hidden_spins(self) -> np.ndarray:
        """(2^m, m) spins of every measurement outcome."""
        return all_spin_configurations(self.m)

    @functools.cached_property
    def hidden_energies(self) -> np.ndarray:
        """Diagonal of H_hidden in the coupling eigenbasis (only meaningful when diagonal)."""
        energies = np.zeros(2 ** self.m)
        for term in self.hidden_spec.terms:
            energies += term.coefficient * np.prod(self.hidden_spins[:, list(term.qubits)], axis=1)
        return energies

    # ---------- weights ----------

    @property
    def num_weights(self) -> int:
        return len(self.weight_labels)

    @functools.cached_property
    def weight_labels(self) -> Tuple[str, ...]:
        k = self.prior.family.stats_per_unit
        labels: List[str] = []
        for row in np.flatnonzero(self.row_mask):
            for col in range(self.m):
                labels.append(f"W[v{row // k}.s{row % k},h{col}]")
        labels.extend(f"hidden[{term.label}]" for term in self.hidden_spec.terms)
        if self.theta_trainable:
            labels.extend(f"theta[{i}]" for i in range(self.d))
        return tuple(labels)

    def parameter_groups(self) -> List[Tuple[str, slice]]:
        w_count = int(self.row_mask.sum()) * self.m
        t_count = len(self.hidden_spec.terms)
        groups = [("W", slice(0, w_count)), ("hidden", slice(w_count, w_count + t_count))]
        if self.theta_trainable:
            groups.append(("theta", slice(w_count + t_count, w_count + t_count + self.d)))
        return [(name, part) for name, part in groups if part.stop > part.start]

    def weights_vector(self) -> np.ndarray:
        parts = [self.W[self.row_mask].ravel(), self.hidden_spec.coefficients()]
        if self.theta_trainable:
            parts.append(np.asarray(self.prior.theta.values, dtype=float))
        return np.concatenate(parts)

    def with_weights(self, vector: np.ndarray) -> "CsqbmModel":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.num_weights,):
            raise ValueError(f"expected {self.num_weights} weights, got shape {vector.shape}")
        if not np.all(np.isfinite(vector)):
            raise ModelValidationError("weight vector has non-finite entries")
        groups = dict(self.parameter_groups())
        W = np.zeros_like(self.W)
        if "W" in groups:
            W[self.row_mask] = vector[groups["W"]].reshape(-1, self.m)
        hidden = self.hidden_spec
        if "hidden" in groups:
            hidden = hidden.with_coefficients(vector[groups["hidden"]])
        prior = self.prior
        if "theta" in groups:
            prior = prior.with_theta(vector[groups["theta"]])
        return dataclasses.replace(self, W=W, hidden_spec=hidden, prior=prior)

    def with_beta(self, beta: float) -> "CsqbmModel":
        return dataclasses.replace(self, beta=beta)

    def relabel_hidden(self, permutation: Sequence[int]) -> "CsqbmModel":
        """Move hidden qubit q to ``permutation[q]`` together with column q of W."""
        W = np.zeros_like(self.W)
        W[:, list(permutation)] = self.W
        return dataclasses.replace(self, W=W, hidden_spec=self.hidden_spec.relabel(permutation))


@dataclasses.dataclass(frozen=True, eq=False)
class FreeEnergyReport:
    f: float
    f_prime: float
    c: float
    gibbs: GibbsState


@dataclasses.dataclass(frozen=True, eq=False)
class GradientReport:
    d_weights: Optional[np.ndarray]
    d_visible: Optional[np.ndarray]


# ==================== 构造 ====================

def random_hidden_spec(
    m: int,
    basis: PauliOp,
    rng: np.random.Generator,
    scale: float = 1.0,
    pairs: bool = True,
    diagonal_only: bool = True,
) -> PauliHamiltonianSpec:
    """Single-qubit fields on every qubit plus all pair couplings, coefficients ~ U[-scale, scale]."""
    basis = PauliOp.parse(basis)
    ops = [basis] if diagonal_only else list(PauliOp)
    terms: List[PauliTerm] = []
    for q in range(m):
        for op in ops:
            terms.append(PauliTerm.single(rng.uniform(-scale, scale), q, op))
    if pairs:
        for q1 in range(m):
            for q2 in range(q1 + 1, m):
                for op in ops:
                    terms.append(PauliTerm.pair(rng.uniform(-scale, scale), (q1, op), (q2, op)))
    return PauliHamiltonianSpec(m, tuple(terms))


def build_model(
    prior: ExpFamilyPrior,
    hidden_spec: PauliHamiltonianSpec,
    rng: Optional[np.random.Generator] = None,
    w_scale: float = 0.0,
    **options: Any,
) -> CsqbmModel:
    """Model with W ~ U[-w_scale, w_scale] on the enabled rows (zero elsewhere)."""
    mask = coupling_row_mask(prior.family, prior.n, bool(options.get("quadratic_coupling", False)))
    W = np.zeros((prior.dim, hidden_spec.num_qubits))
    if w_scale > 0.0:
        if rng is None:
            raise ValueError("a generator is required for random W initialisation")
        W[mask] = rng.uniform(-w_scale, w_scale, size=(int(mask.sum()), hidden_spec.num_qubits))
    return CsqbmModel(prior=prior, W=W, hidden_spec=hidden_spec, **options)


# ==================== H'(v) 与自由能 ====================

def _visible_batch(model: CsqbmModel, V: Any) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[None]
    if V.ndim != 2 or V.shape[1] != model.n:
        raise ValueError(f"expected visible vectors of length {model.n}, got shape {V.shape}")
    return V


def coupling_fields(model: CsqbmModel, V: np.ndarray) -> np.ndarray:
    """b_j(v) = sum_i W_ij s_i(v), shape (B, m)."""
    return model.prior.family.sufficient_stats(V) @ model.W


def h_prime_batch(model: CsqbmModel, V: np.ndarray) -> np.ndarray:
    V = _visible_batch(model, V)
    fields = coupling_fields(model, V)
    return model.hidden_matrix[None] - np.einsum("bj,jxy->bxy", fields, model.coupling_ops)


def assemble_h_prime(model: CsqbmModel, v: Sequence[float]) -> np.ndarray:
    return h_prime_batch(model, np.asarray(v, dtype=float).reshape(1, -1))[0]


def free_energy(model: CsqbmModel, v: Sequence[float]) -> FreeEnergyReport:
    v = np.asarray(v, dtype=float).reshape(-1)
    c = float(c_values(model.prior, _visible_batch(model, v))[0])
    state = gibbs_state(assemble_h_prime(model, v), model.beta)
    f_prime = state.free_energy
    return FreeEnergyReport(f=-c + f_prime, f_prime=f_prime, c=c, gibbs=state)


def _batch_states(model: CsqbmModel, V: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rho, log_partition, _, _ = gibbs_states_batch(h_prime_batch(model, V), model.beta)
    return rho, log_partition


def free_energy_batch(model: CsqbmModel, V: np.ndarray) -> np.ndarray:
    V = _visible_batch(model, V)
    _, log_partition = _batch_states(model, V)
    return -c_values(model.prior, V) - log_partition / model.beta


def visible_log_weight(model: CsqbmModel, V: np.ndarray) -> np.ndarray:
    """-beta F(v): unnormalised log density of the visible marginal."""
    return -model.beta * free_energy_batch(model, V)


def q_value(model: CsqbmModel, s: Sequence[float], a: Sequence[float]) -> float:
    v = np.concatenate([np.asarray(s, dtype=float).reshape(-1), np.asarray(a, dtype=float).reshape(-1)])
    if v.size != model.n:
        raise ValueError(f"state+action has {v.size} components, model expects {model.n}")
    return -free_energy(model, v).f


def q_values_batch(model: CsqbmModel, S: np.ndarray, A: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float).reshape(len(A), -1)
    A = np.asarray(A, dtype=float).reshape(len(A), -1)
    return -free_energy_batch(model, np.concatenate([S, A], axis=1))


# ==================== 梯度 ====================

def _expectations(rho: np.ndarray, ops: np.ndarray) -> np.ndarray:
    """tr[rho_b O_k] for a (B, d, d) stack and (K, d, d) operators -> (B, K)."""
    if ops.shape[0] == 0:
        return np.zeros((rho.shape[0], 0))
    return np.real(np.einsum("bij,kji->bk", rho, ops))


def _gradients(model: CsqbmModel, V: np.ndarray, target: GradientTarget) -> GradientReport:
    V = _visible_batch(model, V)
    rho, _ = _batch_states(model, V)
    coupling = _expectations(rho, model.coupling_ops)  # <P_j>, (B, m)
    stats = model.prior.family.sufficient_stats(V)
    d_weights = None
    d_visible = None
    if target in (GradientTarget.WEIGHTS, GradientTarget.BOTH):
        parts = [
            -(stats[:, model.row_mask][:, :, None] * coupling[:, None, :]).reshape(len(V), -1),
            _expectations(rho, model.term_ops),
        ]
        if model.theta_trainable:
            parts.append(-stats)
        d_weights = np.concatenate(parts, axis=1)
    if target in (GradientTarget.VISIBLE, GradientTarget.BOTH):
        k = model.prior.family.stats_per_unit
        jacobian = model.prior.family.stats_jacobian(V)  # (B, n, k)
        field_grad = (coupling @ model.W.T).reshape(len(V), model.n, k)
        d_visible = -grad_c_v(model.prior, V) - (jacobian * field_grad).sum(axis=-1)
    return GradientReport(d_weights=d_weights, d_visible=d_visible)


def grad_free_energy(
    model: CsqbmModel, v: Sequence[float], wrt: Union[str, GradientTarget] = GradientTarget.BOTH
) -> GradientReport:
    report = _gradients(model, np.asarray(v, dtype=float).reshape(1, -1), GradientTarget(wrt))
    return GradientReport(
        d_weights=None if report.d_weights is None else report.d_weights[0],
        d_visible=None if report.d_visible is None else report.d_visible[0],
    )


def weight_gradient_batch(model: CsqbmModel, V: np.ndarray) -> np.ndarray:
    return _gradients(model, V, GradientTarget.WEIGHTS).d_weights


def q_action_gradient(model: CsqbmModel, s: Sequence[float], a: Sequence[float]) -> np.ndarray:
    """dQ/da = -dF/dv restricted to the action coordinates."""
    s = np.asarray(s, dtype=float).reshape(-1)
    v = np.concatenate([s, np.asarray(a, dtype=float).reshape(-1)])
    return -grad_free_energy(model, v, GradientTarget.VISIBLE).d_visible[s.size :]


def q_action_gradient_batch(model: CsqbmModel, S: np.ndarray, A: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float).reshape(len(A), -1)
    A = np.asarray(A, dtype=float).reshape(len(A), -1)
    V = np.concatenate([S, A], axis=1)
    return -_gradients(model, V, GradientTarget.VISIBLE).d_visible[:, S.shape[1] :]


# ==================== 条件分布 ====================

def hidden_probabilities(model: CsqbmModel, V: np.ndarray) -> np.ndarray:
    """Measurement distribution of rho'(v) in the coupling basis, shape (B, 2^m)."""
    V = _visible_batch(model, V)
    if model.hidden_is_diagonal:
        energies = -coupling_fields(model, V) @ model.hidden_spins.T + model.hidden_energies
        return softmax(-model.beta * energies, axis=1)
    rho, _ = _batch_states(model, V)
    return diagonal_in_basis(rho, model.coupling_basis)


def conditional_hidden(model: CsqbmModel, v: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    state = gibbs_state(assemble_h_prime(model, v), model.beta)
    return sample_hidden(state, model.coupling_basis, rng)


def conditional_visible_params(model: CsqbmModel, h: Sequence[float]) -> NaturalParams:
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != model.m or np.any(np.abs(h) != 1.0):
        raise ValueError(f"h must be a spin vector in {{-1,+1}}^{model.m}, got {h.tolist()}")
    return tilt(model.prior.theta, model.W, h, model.beta)


def tilted_conditional_discrepancy(
    model: CsqbmModel, h: Sequence[float], grid: np.ndarray
) -> float:
    """Max |closed-form p(v|h) - grid-normalised <h|e^{-beta H(v)}|h>| over a 1-D grid (n = 1)."""
    if model.n != 1:
        raise ValueError(f"grid conditional check needs a single visible unit, model has {model.n}")
    grid = np.asarray(grid, dtype=float).reshape(-1)
    h = np.asarray(h, dtype=float)
    V = grid[:, None]
    _, _, eigvals, eigvecs = gibbs_states_batch(h_prime_batch(model, V), model.beta)
    rotated = np.einsum("xi,bxk->bik", basis_rotation(model.coupling_basis, model.m).conj(), eigvecs)
    overlap = np.abs(rotated[:, int(spins_to_index(h)), :]) ** 2
    with np.errstate(divide="ignore"):
        log_brute = model.beta * c_values(model.prior, V) + logsumexp(
            -model.beta * eigvals + np.log(overlap), axis=1
        )
    brute = np.exp(log_brute - log_brute.max())
    brute /= trapezoid(brute, grid)
    closed = np.exp(log_density(conditional_visible_params(model, h), V))
    return float(np.max(np.abs(closed - brute)))


# ==================== 交替 Gibbs 采样 ====================

def _clamp_layout(model: CsqbmModel, clamp: Clamp) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(clamp, Mapping):
        indices = np.array(sorted(int(k) for k in clamp), dtype=int)
        values = np.array([float(clamp[int(k)]) for k in indices])
    else:
        values = np.asarray(clamp, dtype=float).reshape(-1)
        indices = np.arange(values.size)
    if indices.size and (indices.min() < 0 or indices.max() >= model.n):
        raise ValueError(f"clamp indices {indices.tolist()} out of range for n={model.n}")
    if indices.size >= model.n:
        raise ValueError("clamp assigns every visible unit; nothing left to sample")
    return indices, values


def run_chains(
    model: CsqbmModel,
    clamp_indices: Sequence[int],
    clamp_values: np.ndarray,
    sweeps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run one chain per row of ``clamp_values`` (B, c); returns the free coordinates (B, n - c)."""
    sweeps = int(sweeps)
    if sweeps < 1:
        raise ValueError(f"sweeps must be >= 1, got {sweeps}")
    clamp_indices = np.asarray(clamp_indices, dtype=int)
    clamp_values = np.atleast_2d(np.asarray(clamp_values, dtype=float))
    free = np.setdiff1d(np.arange(model.n), clamp_indices)
    count = clamp_values.shape[0]
    family = model.prior.family
    k = family.stats_per_unit
    free_columns = (free[:, None] * k + np.arange(k)).ravel()
    if not model.hidden_is_diagonal:
        LOGGER.warning(
            "Hidden terms are not diagonal in %s; sampling h from its measurement marginal", model.coupling_basis.value
        )

    V = np.empty((count, model.n))
    V[:, clamp_indices] = clamp_values
    V[:, free] = family.sample(model.prior.theta.select_units(free).values, rng, size=count)
    for _ in range(sweeps):
        outcomes = sample_outcomes(hidden_probabilities(model, V), rng)
        spins = index_to_spins(outcomes, model.m)
        tilted = tilt(model.prior.theta, model.W, spins, model.beta)
        V[:, free] = family.sample(tilted.values[:, free_columns], rng)
    return V[:, free]


def gibbs_sample_action(
    model: CsqbmModel,
    clamp: Clamp,
    sweeps: int = DEFAULT_SWEEPS,
    rng: Optional[np.random.Generator] = None,
    count: Optional[int] = None,
) -> np.ndarray:
    """One free-coordinate sample (or ``count`` independent ones) from p(a | s)."""
    if rng is None:
        raise ValueError("gibbs_sample_action needs an explicit generator")
    indices, values = _clamp_layout(model, clamp)
    chains = 1 if count is None else int(count)
    if chains < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if chains == 0:
        return np.zeros((0, model.n - indices.size))
    result = run_chains(model, indices, np.tile(values, (chains, 1)), sweeps, rng)
    return result[0] if count is None else result
