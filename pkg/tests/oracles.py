"""Brute-force reference computations and random builders shared by the tests."""

import itertools
import math

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm

from csqbm.discrete import DiscreteSqbmModel
from csqbm.exp_family import ExpFamilyPrior, c_value
from csqbm.model import build_model, random_hidden_spec, visible_log_weight
from csqbm.quantum_core import PauliHamiltonianSpec, PauliOp, PauliTerm, pauli_matrix


def kron_oracle(op, qubit, num_qubits):
    """Entry-wise construction of P on ``qubit``; qubit 0 is the most significant bit."""
    single = pauli_matrix(op)
    dim = 2 ** num_qubits
    result = np.zeros((dim, dim), dtype=complex)
    for row in range(dim):
        for col in range(dim):
            value = 1.0 + 0j
            for q in range(num_qubits):
                shift = num_qubits - 1 - q
                r_bit, c_bit = (row >> shift) & 1, (col >> shift) & 1
                if q == qubit:
                    value *= single[r_bit, c_bit]
                elif r_bit != c_bit:
                    value = 0j
            result[row, col] = value
    return result


def term_oracle(term, num_qubits):
    matrix = np.eye(2 ** num_qubits, dtype=complex)
    for qubit, op in term.factors:
        matrix = matrix @ kron_oracle(op, qubit, num_qubits)
    return matrix


def hamiltonian_oracle(spec):
    dim = 2 ** spec.num_qubits
    matrix = np.zeros((dim, dim), dtype=complex)
    for term in spec.terms:
        matrix += term.coefficient * term_oracle(term, spec.num_qubits)
    return matrix


def direct_free_energy(model, v):
    """-(1/beta) log tr exp(-beta (-c(v) I + H'(v))) with independently built operators."""
    v = np.asarray(v, dtype=float)
    stats = np.column_stack([v, v * v]).ravel()
    h_prime = hamiltonian_oracle(model.hidden_spec)
    for i in range(model.d):
        for j in range(model.m):
            if model.W[i, j]:
                h_prime = h_prime - model.W[i, j] * stats[i] * kron_oracle(model.coupling_basis, j, model.m)
    c = c_value(model.prior, v)
    full = -c * np.eye(h_prime.shape[0]) + h_prime
    trace = np.trace(expm(-model.beta * full)).real
    return -math.log(trace) / model.beta


def random_prior(n, rng):
    return ExpFamilyPrior.gaussian(rng.uniform(-1, 1, size=n), rng.uniform(0.5, 1.5, size=n))


def random_model(n, m, rng, basis=PauliOp.Z, strict=True, beta=None, w_scale=1.0, hidden_scale=1.0):
    hidden = random_hidden_spec(m, basis, rng, scale=hidden_scale, diagonal_only=strict)
    return build_model(
        random_prior(n, rng),
        hidden,
        rng,
        w_scale,
        coupling_basis=basis,
        beta=float(rng.choice([0.5, 1.0, 2.0])) if beta is None else beta,
        strict_sampler=strict,
    )


def central_difference(function, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        plus, minus = x.copy(), x.copy()
        plus[i] += step
        minus[i] -= step
        grad[i] = (function(plus) - function(minus)) / (2 * step)
    return grad


def floored_relative_error(analytic, numeric, floor=0.01):
    return np.abs(np.asarray(analytic) - np.asarray(numeric)) / np.maximum(np.abs(numeric), floor)


def exact_action_density(model, state, grid):
    """p(a | s) on a 1-D action grid from e^{-beta F}, normalised by the trapezoid rule."""
    state = np.atleast_1d(np.asarray(state, dtype=float))
    V = np.column_stack([np.tile(state, (grid.size, 1)), grid])
    log_weight = visible_log_weight(model, V)
    density = np.exp(log_weight - log_weight.max())
    return density / trapezoid(density, grid)


def bin_probabilities(density, grid, edges):
    probabilities = []
    for low, high in zip(edges[:-1], edges[1:]):
        inside = (grid >= low) & (grid <= high)
        probabilities.append(trapezoid(density[inside], grid[inside]))
    probabilities = np.asarray(probabilities)
    return probabilities / probabilities.sum()


# ==================== 离散 SQBM ====================

def random_discrete_model(n, m, rng, beta=1.0):
    terms = []
    ops = [PauliOp.X, PauliOp.Z]
    for q in range(n):
        terms.append(PauliTerm.single(rng.uniform(-1, 1), q, PauliOp.Z))
    for q in range(n, n + m):
        terms.append(PauliTerm.single(rng.uniform(-1, 1), q, ops[int(rng.integers(2))]))
    for q1, q2 in itertools.combinations(range(n + m), 2):
        first = PauliOp.Z if q1 < n else ops[int(rng.integers(2))]
        second = PauliOp.Z if q2 < n else ops[int(rng.integers(2))]
        terms.append(PauliTerm.pair(rng.uniform(-1, 1), (q1, first), (q2, second)))
    return DiscreteSqbmModel(n, PauliHamiltonianSpec(n + m, tuple(terms)), beta)


def visible_projector(n, m, v):
    """Delta_v = |v><v| on the visible qubits (spin +1 -> bit 0) tensored with identity."""
    index = 0
    for spin in v:
        index = 2 * index + (0 if spin > 0 else 1)
    projector = np.zeros((2 ** n, 2 ** n))
    projector[index, index] = 1.0
    return np.kron(projector, np.eye(2 ** m))


def projection_free_energy(model, v):
    full = hamiltonian_oracle(model.spec)
    weight = expm(-model.beta * full) @ visible_projector(model.n, model.m, v)
    return -math.log(np.trace(weight).real) / model.beta


def projection_gradient(model, v):
    """tr[rho_v T_k] with rho_v = Delta_v e^{-beta H} Delta_v / tr[...]."""
    projector = visible_projector(model.n, model.m, v)
    weight = projector @ expm(-model.beta * hamiltonian_oracle(model.spec)) @ projector
    rho = weight / np.trace(weight).real
    return np.array(
        [np.trace(rho @ term_oracle(term, model.spec.num_qubits)).real for term in model.spec.terms]
    )
