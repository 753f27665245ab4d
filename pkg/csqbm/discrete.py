"""
Discrete-visible SQBM baseline.

One register of n + m qubits, visible qubits first. Every factor acting on a
visible qubit is Pauli-Z, so the projector onto a visible configuration
commutes with H and the projected trace reduces to a full trace over the
hidden register with each visible Z replaced by its spin value (clamping).
"""

from __future__ import annotations

import dataclasses
import functools
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .model import ModelValidationError
from .quantum_core import (
    PauliHamiltonianSpec,
    PauliOp,
    PauliTerm,
    all_spin_configurations,
    gibbs_state,
)


@dataclasses.dataclass(frozen=True, eq=False)
class DiscreteSqbmModel:
    n: int
    spec: PauliHamiltonianSpec
    beta: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", float(self.beta))
        if self.n < 1:
            raise ModelValidationError(f"need at least one visible unit, got n={self.n}")
        if self.spec.num_qubits < self.n:
            raise ModelValidationError(
                f"spec has {self.spec.num_qubits} qubits, fewer than n={self.n} visible units"
            )
        if not self.beta > 0.0:
            raise ModelValidationError(f"beta must be > 0, got {self.beta}")
        for term in self.spec.terms:
            for qubit, op in term.factors:
                if qubit < self.n and op is not PauliOp.Z:
                    raise ModelValidationError(
                        f"term {term.label} acts on visible qubit {qubit} with {op.value}; "
                        "visible units only take Z"
                    )

    @property
    def m(self) -> int:
        return self.spec.num_qubits - self.n

    @functools.cached_property
    def _split_terms(self) -> Tuple[Tuple[Tuple[int, ...], np.ndarray], ...]:
        """Per term: (visible qubit indices, hidden operator without coefficient or None)."""
        split: List[Tuple[Tuple[int, ...], np.ndarray]] = []
        for term in self.spec.terms:
            visible = tuple(q for q, _ in term.factors if q < self.n)
            hidden = tuple((q - self.n, op) for q, op in term.factors if q >= self.n)
            if self.m == 0:
                operator = np.ones((1, 1), dtype=complex)
            elif hidden:
                operator = PauliTerm(1.0, hidden).operator(self.m)
            else:
                operator = np.eye(2 ** self.m, dtype=complex)
            split.append((visible, operator))
        return tuple(split)

    def clamped_terms(self, v: Sequence[float]) -> np.ndarray:
        """(T, 2^m, 2^m) term operators with visible Z's replaced by the spins of ``v``."""
        v = _spins(self, v)
        if not self.spec.terms:
            size = 2 ** self.m
            return np.zeros((0, size, size), dtype=complex)
        return np.stack([np.prod(v[list(visible)]) * operator for visible, operator in self._split_terms])


def _spins(model: DiscreteSqbmModel, v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != model.n:
        raise ValueError(f"expected {model.n} visible spins, got {v.size}")
    if np.any(np.abs(v) != 1.0):
        raise ValueError(f"visible units must be -1 or +1, got {v.tolist()}")
    return v


def clamped_hamiltonian(model: DiscreteSqbmModel, v: Sequence[float]) -> np.ndarray:
    terms = model.clamped_terms(v)
    coefficients = model.spec.coefficients()
    return np.einsum("k,kxy->xy", coefficients, terms) if terms.size else np.zeros((2 ** model.m,) * 2, dtype=complex)


def discrete_free_energy(model: DiscreteSqbmModel, v: Sequence[float]) -> float:
    h = clamped_hamiltonian(model, v)
    if model.m == 0:
        return float(np.real(h[0, 0]))
    return gibbs_state(h, model.beta).free_energy


def discrete_grad_free_energy(model: DiscreteSqbmModel, v: Sequence[float]) -> np.ndarray:
    """dF/d(coefficient_k) = <clamped term k> under the clamped Gibbs state, in spec order."""
    terms = model.clamped_terms(v)
    if model.m == 0:
        return np.real(terms[:, 0, 0]).copy()
    state = gibbs_state(np.einsum("k,kxy->xy", model.spec.coefficients(), terms), model.beta)
    return np.real(np.einsum("ij,kji->k", state.rho, terms))


def discrete_visible_distribution(model: DiscreteSqbmModel) -> Tuple[np.ndarray, np.ndarray]:
    """All visible configurations (2^n, n) and their exact probabilities e^{-beta F(v)} / Z."""
    configurations = all_spin_configurations(model.n)
    log_weights = np.array(
        [-model.beta * discrete_free_energy(model, v) for v in configurations]
    )
    return configurations, np.exp(log_weights - logsumexp(log_weights))
