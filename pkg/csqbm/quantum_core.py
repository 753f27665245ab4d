"""
Pauli-operator algebra and dense Gibbs states for the hidden register.

Conventions (used by every other module):
  - qubit 0 is the leftmost Kronecker factor, i.e. the most significant bit of
    a computational-basis index;
  - eigenvalue +1 <-> spin +1 <-> bit 0, eigenvalue -1 <-> spin -1 <-> bit 1;
  - a measurement uses one Pauli basis for all hidden qubits.

Everything is dense. The intended regime is m <= 10 qubits (dim <= 1024), and
the Hermitian eigendecomposition is the only primitive used for matrix
exponentials, traces and measurements.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import logging
import math
from typing import Any, Dict, Iterable, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp


LOGGER = logging.getLogger("csqbm.quantum_core")

HERMITIAN_RTOL = 1e-12
TRACE_TOL = 1e-10
IMAG_TOL = 1e-10


class NotHermitianError(ValueError):
    def __init__(self, deviation: float):
        super().__init__(
            f"matrix is not Hermitian: relative Frobenius deviation {deviation:.3e} "
            f"> {HERMITIAN_RTOL:.0e}"
        )
        self.deviation = deviation


class GibbsStateError(RuntimeError):
    """Eigendecomposition failed or produced a non-physical state."""


class PauliOp(str, enum.Enum):
    X = "X"
    Y = "Y"
    Z = "Z"

    @classmethod
    def parse(cls, value: Any) -> "PauliOp":
        if isinstance(value, PauliOp):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError as exc:
            raise ValueError(f"unknown Pauli operator {value!r}, expected X/Y/Z") from exc


# ==================== 单比特矩阵 ====================

_IDENTITY = np.eye(2, dtype=complex)
_PAULI = {
    PauliOp.X: np.array([[0, 1], [1, 0]], dtype=complex),
    PauliOp.Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    PauliOp.Z: np.array([[1, 0], [0, -1]], dtype=complex),
}
# Columns are the (+1, -1) eigenvectors of each Pauli matrix.
_EIGENBASIS = {
    PauliOp.X: np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0),
    PauliOp.Y: np.array([[1, 1], [1j, -1j]], dtype=complex) / math.sqrt(2.0),
    PauliOp.Z: np.eye(2, dtype=complex),
}


def pauli_matrix(op: PauliOp) -> np.ndarray:
    return _PAULI[PauliOp.parse(op)].copy()


def _readonly(matrix: np.ndarray) -> np.ndarray:
    matrix.setflags(write=False)
    return matrix


def _kron_all(factors: Sequence[np.ndarray]) -> np.ndarray:
    return functools.reduce(np.kron, factors, np.ones((1, 1), dtype=complex))


@functools.lru_cache(maxsize=4096)
def _product_matrix(factors: Tuple[Tuple[int, PauliOp], ...], num_qubits: int) -> np.ndarray:
    placed = dict(factors)
    return _readonly(
        _kron_all([_PAULI[placed[q]] if q in placed else _IDENTITY for q in range(num_qubits)])
    )


def embed_operator(op: PauliOp, qubit: int, num_qubits: int) -> np.ndarray:
    """P applied to ``qubit`` of an ``num_qubits`` register, identity elsewhere."""
    if num_qubits < 1:
        raise ValueError(f"num_qubits must be >= 1, got {num_qubits}")
    if not 0 <= qubit < num_qubits:
        raise IndexError(f"qubit index {qubit} out of range for {num_qubits} qubits")
    return _product_matrix(((int(qubit), PauliOp.parse(op)),), int(num_qubits)).copy()


# ==================== Hamiltonian 描述 ====================

@dataclasses.dataclass(frozen=True)
class PauliTerm:
    """``coefficient * P_i`` or ``coefficient * P_i Q_j`` with i < j."""

    coefficient: float
    factors: Tuple[Tuple[int, PauliOp], ...]

    def __post_init__(self) -> None:
        factors = tuple((int(q), PauliOp.parse(op)) for q, op in self.factors)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "coefficient", float(self.coefficient))
        if not math.isfinite(self.coefficient):
            raise ValueError(f"term coefficient must be finite, got {self.coefficient}")
        if len(factors) not in (1, 2):
            raise ValueError(f"a term acts on 1 or 2 qubits, got {len(factors)}")
        qubits = [q for q, _ in factors]
        if qubits[0] < 0:
            raise ValueError(f"qubit indices must be non-negative, got {qubits}")
        if len(qubits) == 2 and qubits[0] >= qubits[1]:
            raise ValueError(f"qubit indices must be strictly increasing, got {qubits}")

    @classmethod
    def single(cls, coefficient: float, qubit: int, op: PauliOp) -> "PauliTerm":
        return cls(coefficient, ((qubit, op),))

    @classmethod
    def pair(
        cls, coefficient: float, first: Tuple[int, PauliOp], second: Tuple[int, PauliOp]
    ) -> "PauliTerm":
        return cls(coefficient, tuple(sorted((first, second), key=lambda item: item[0])))

    @property
    def qubits(self) -> Tuple[int, ...]:
        return tuple(q for q, _ in self.factors)

    @property
    def label(self) -> str:
        return " ".join(f"{op.value}{q}" for q, op in self.factors)

    def is_diagonal_in(self, basis: PauliOp) -> bool:
        return all(op is PauliOp.parse(basis) for _, op in self.factors)

    def operator(self, num_qubits: int) -> np.ndarray:
        """Embedded operator without the coefficient (read-only, cached)."""
        if max(self.qubits) >= num_qubits:
            raise IndexError(f"term {self.label} does not fit in {num_qubits} qubits")
        return _product_matrix(self.factors, num_qubits)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PauliTerm":
        qubits = list(data.get("qubits", []))
        paulis = list(data.get("paulis", []))
        if len(qubits) != len(paulis):
            raise ValueError(f"qubits/paulis length mismatch: {qubits} vs {paulis}")
        return cls(float(data["coefficient"]), tuple(zip(qubits, paulis)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "coefficient": self.coefficient,
            "qubits": [q for q, _ in self.factors],
            "paulis": [op.value for _, op in self.factors],
        }


@dataclasses.dataclass(frozen=True)
class PauliHamiltonianSpec:
    num_qubits: int
    terms: Tuple[PauliTerm, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.num_qubits < 1:
            raise ValueError(f"num_qubits must be >= 1, got {self.num_qubits}")
        for term in self.terms:
            if max(term.qubits) >= self.num_qubits:
                raise ValueError(
                    f"term {term.label} uses a qubit outside 0..{self.num_qubits - 1}"
                )

    @property
    def dim(self) -> int:
        return 2 ** self.num_qubits

    def coefficients(self) -> np.ndarray:
        return np.array([term.coefficient for term in self.terms], dtype=float)

    def with_coefficients(self, values: Iterable[float]) -> "PauliHamiltonianSpec":
        values = list(values)
        if len(values) != len(self.terms):
            raise ValueError(f"expected {len(self.terms)} coefficients, got {len(values)}")
        return dataclasses.replace(
            self,
            terms=tuple(
                PauliTerm(float(value), term.factors) for term, value in zip(self.terms, values)
            ),
        )

    def relabel(self, permutation: Sequence[int]) -> "PauliHamiltonianSpec":
        """Move qubit q to ``permutation[q]``."""
        if sorted(permutation) != list(range(self.num_qubits)):
            raise ValueError(f"not a permutation of 0..{self.num_qubits - 1}: {permutation}")
        terms = []
        for term in self.terms:
            moved = [(int(permutation[q]), op) for q, op in term.factors]
            terms.append(PauliTerm(term.coefficient, tuple(sorted(moved, key=lambda f: f[0]))))
        return PauliHamiltonianSpec(self.num_qubits, tuple(terms))

    def is_diagonal_in(self, basis: PauliOp) -> bool:
        return all(term.is_diagonal_in(basis) for term in self.terms)

    def term_operators(self) -> np.ndarray:
        """Stack of embedded term operators, shape (T, dim, dim)."""
        if not self.terms:
            return np.zeros((0, self.dim, self.dim), dtype=complex)
        return np.stack([term.operator(self.num_qubits) for term in self.terms])

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PauliHamiltonianSpec":
        return cls(
            num_qubits=int(data["num_qubits"]),
            terms=tuple(PauliTerm.from_dict(item) for item in data.get("terms", [])),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_qubits": self.num_qubits,
            "terms": [term.to_dict() for term in self.terms],
        }


def check_hermitian(matrix: np.ndarray, rtol: float = HERMITIAN_RTOL) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim < 2 or matrix.shape[-1] != matrix.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {matrix.shape}")
    scale = max(float(np.linalg.norm(matrix)), 1.0)
    deviation = float(np.linalg.norm(matrix - np.conj(np.swapaxes(matrix, -1, -2)))) / scale
    if deviation > rtol:
        raise NotHermitianError(deviation)


def assemble_hamiltonian(spec: PauliHamiltonianSpec) -> np.ndarray:
    """sum_k coefficient_k * embedded(term_k), accumulated in term order."""
    hamiltonian = np.zeros((spec.dim, spec.dim), dtype=complex)
    for term in spec.terms:
        hamiltonian += term.coefficient * term.operator(spec.num_qubits)
    return hamiltonian


# ==================== Gibbs 态 ====================

@dataclasses.dataclass(frozen=True)
class GibbsState:
    rho: np.ndarray
    beta: float
    log_partition: float
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.rho.shape[0])

    @property
    def num_qubits(self) -> int:
        return int(round(math.log2(self.dim)))

    @property
    def weights(self) -> np.ndarray:
        """Boltzmann weights of the eigenvalues, summing to one."""
        return np.exp(-self.beta * self.eigvals - self.log_partition)

    @property
    def free_energy(self) -> float:
        return -self.log_partition / self.beta

    @property
    def mean_energy(self) -> float:
        return float(np.dot(self.weights, self.eigvals))

    @property
    def entropy(self) -> float:
        weights = self.weights
        positive = weights[weights > 0.0]
        return float(-np.dot(positive, np.log(positive)))

    def reconstruct(self) -> np.ndarray:
        return (self.eigvecs * self.weights) @ self.eigvecs.conj().T


def _validate_beta(beta: float) -> float:
    beta = float(beta)
    if not math.isfinite(beta) or beta <= 0.0:
        raise ValueError(f"beta must be finite and > 0, got {beta}")
    return beta


def gibbs_states_batch(h_stack: np.ndarray, beta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched Gibbs states of a (B, d, d) stack.

    Returns (rho, log_partition, eigvals, eigvecs). The log partition uses
    log-sum-exp over -beta*eigvals, which shifts by the extreme eigenvalue.
    """
    beta = _validate_beta(beta)
    try:
        eigvals, eigvecs = np.linalg.eigh(h_stack)
    except np.linalg.LinAlgError as exc:
        raise GibbsStateError(f"eigendecomposition failed: {exc}") from exc
    log_weights = -beta * eigvals
    log_partition = logsumexp(log_weights, axis=-1)
    if not np.all(np.isfinite(log_partition)):
        raise GibbsStateError("non-finite log partition; check the Hamiltonian entries")
    weights = np.exp(log_weights - log_partition[..., None])
    rho = np.einsum("...ik,...k,...jk->...ij", eigvecs, weights, eigvecs.conj())
    return rho, log_partition, eigvals, eigvecs


def gibbs_state(h: np.ndarray, beta: float) -> GibbsState:
    h = np.asarray(h, dtype=complex)
    check_hermitian(h)
    rho, log_partition, eigvals, eigvecs = gibbs_states_batch(h[None], beta)
    return GibbsState(
        rho=_readonly(rho[0]),
        beta=float(beta),
        log_partition=float(log_partition[0]),
        eigvals=_readonly(eigvals[0]),
        eigvecs=_readonly(eigvecs[0]),
    )


def expectation(state: GibbsState, observable: np.ndarray) -> float:
    """tr[rho * observable]; the imaginary residue must vanish."""
    observable = np.asarray(observable)
    if observable.shape != state.rho.shape:
        raise ValueError(
            f"observable shape {observable.shape} does not match state {state.rho.shape}"
        )
    value = np.einsum("ij,ji->", state.rho, observable)
    if abs(value.imag) >= IMAG_TOL:
        raise ValueError(f"expectation has imaginary part {value.imag:.3e}; observable not Hermitian?")
    return float(value.real)


# ==================== 测量 ====================

@functools.lru_cache(maxsize=64)
def basis_rotation(basis: PauliOp, num_qubits: int) -> np.ndarray:
    """Unitary whose columns are the product eigenbasis of ``basis``."""
    single = _EIGENBASIS[PauliOp.parse(basis)]
    return _readonly(_kron_all([single] * num_qubits))


def diagonal_in_basis(rho: np.ndarray, basis: PauliOp) -> np.ndarray:
    """Outcome probabilities of a (..., d, d) density stack measured in ``basis``."""
    basis = PauliOp.parse(basis)
    if basis is PauliOp.Z:
        probabilities = np.real(np.diagonal(rho, axis1=-2, axis2=-1)).copy()
    else:
        num_qubits = int(round(math.log2(rho.shape[-1])))
        unitary = basis_rotation(basis, num_qubits)
        probabilities = np.real(np.einsum("ik,...ij,jk->...k", unitary.conj(), rho, unitary))
    probabilities = np.clip(probabilities, 0.0, None)
    return probabilities / probabilities.sum(axis=-1, keepdims=True)


def measurement_distribution(state: GibbsState, basis: PauliOp) -> np.ndarray:
    return diagonal_in_basis(state.rho, basis)


def index_to_spins(index: np.ndarray | int, num_qubits: int) -> np.ndarray:
    """Big-endian bits -> spins (bit 0 -> +1)."""
    index = np.asarray(index)
    shifts = np.arange(num_qubits - 1, -1, -1)
    bits = (index[..., None] >> shifts) & 1
    return (1 - 2 * bits).astype(float)


def spins_to_index(spins: np.ndarray) -> np.ndarray | int:
    spins = np.asarray(spins)
    bits = (spins < 0).astype(int)
    weights = 2 ** np.arange(spins.shape[-1] - 1, -1, -1)
    return bits @ weights


def all_spin_configurations(num_qubits: int) -> np.ndarray:
    return index_to_spins(np.arange(2 ** num_qubits), num_qubits)


def sample_outcomes(probabilities: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw of one outcome index per row of a (..., d) array."""
    probabilities = np.atleast_2d(probabilities)
    cdf = np.cumsum(probabilities, axis=-1)
    uniforms = rng.random(probabilities.shape[:-1]) * cdf[..., -1]
    index = (uniforms[..., None] >= cdf).sum(axis=-1)
    return np.minimum(index, probabilities.shape[-1] - 1)


def sample_hidden(
    state: GibbsState, basis: PauliOp, rng: np.random.Generator
) -> np.ndarray:
    probabilities = measurement_distribution(state, basis)
    index = sample_outcomes(probabilities, rng)[0]
    return index_to_spins(index, state.num_qubits)
