"""States, reductions and exact small-register solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .operators import Generator, MINUS_PLUS, P0, SIGMA_PLUS, kron_all

MAX_LIOUVILLE_DIM = 2**12


def basis_state(bits) -> np.ndarray:
    bits = [int(b) for b in bits]
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[int("".join(map(str, bits)), 2) if bits else 0] = 1.0
    return psi


def ring_pair_state(input_bits, output_bits) -> np.ndarray:
    """Computational basis state with the input ring first."""
    if len(input_bits) != len(output_bits):
        raise ValueError("rings must have equal length")
    return basis_state(list(input_bits) + list(output_bits))


def single_site(op: np.ndarray, site: int, n: int) -> np.ndarray:
    return kron_all([op if s == site else np.eye(2) for s in range(n)])


def ring_operator(ops: dict[int, np.ndarray], n: int) -> np.ndarray:
    return kron_all([ops.get(s, np.eye(2)) for s in range(n)])


def mu_operator(site: int, n: int) -> np.ndarray:
    """``P0_{i-1} |-><+|_i P0_{i+1}`` on a single ring of ``n`` sites."""
    return ring_operator({(site - 1) % n: P0, site: MINUS_PLUS, (site + 1) % n: P0}, n)


@dataclass(frozen=True)
class RKState:
    state: np.ndarray
    z: int
    n: int


def build_rk_state(n: int) -> RKState:
    """Apply ``prod_k (1 - P_{k-1} sigma+_k P_{k+1})`` in ascending ``k`` to ``|0...0>``."""
    if n < 3:
        raise ValueError("rings need at least 3 sites")
    psi = basis_state([0] * n)
    eye = np.eye(2**n)
    for k in range(n):
        factor = eye - ring_operator({(k - 1) % n: P0, k: SIGMA_PLUS, (k + 1) % n: P0}, n)
        psi = factor @ psi
    weight = np.vdot(psi, psi).real
    z = int(round(weight))
    return RKState(psi / np.sqrt(weight), z, n)


def hard_dimer_count(n: int) -> int:
    """Brute-force count of ring configurations without adjacent 1s."""
    count = 0
    for c in range(2**n):
        bits = [(c >> s) & 1 for s in range(n)]
        if all(not (bits[s] and bits[(s + 1) % n]) for s in range(n)):
            count += 1
    return count


def projector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def ensemble_density(states) -> np.ndarray:
    """Equal-weight trajectory average of pure-state projectors (fixed order)."""
    states = np.asarray(states, dtype=complex)
    if states.ndim == 1:
        states = states[None]
    if states.shape[0] == 0:
        raise ValueError("need at least one trajectory")
    rho = states.T @ states.conj() / states.shape[0]
    return 0.5 * (rho + rho.conj().T)


def partial_transpose(rho: np.ndarray, subsystem, n_qubits: int) -> np.ndarray:
    subsystem = sorted(set(subsystem))
    t = np.asarray(rho).reshape((2,) * (2 * n_qubits))
    axes = list(range(2 * n_qubits))
    for q in subsystem:
        axes[q], axes[n_qubits + q] = axes[n_qubits + q], axes[q]
    d = 2**n_qubits
    return t.transpose(axes).reshape(d, d)


def negativity(rho: np.ndarray, subsystem, n_qubits: int | None = None) -> float:
    """``(||rho^{T_A}||_1 - 1) / 2`` for qubit subset ``subsystem``."""
    rho = np.asarray(rho, dtype=complex)
    if n_qubits is None:
        n_qubits = int(round(np.log2(rho.shape[0])))
    sub = set(subsystem)
    if not sub or len(sub) >= n_qubits or not sub <= set(range(n_qubits)):
        raise ValueError("subsystem must be a nonempty proper subset of the qubits")
    pt = partial_transpose(0.5 * (rho + rho.conj().T), sub, n_qubits)
    ev = np.linalg.eigvalsh(pt)
    return float((np.abs(ev).sum() - 1.0) / 2.0)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(0.5 * ((a - b) + (a - b).conj().T))
    return float(0.5 * np.abs(ev).sum())


def reduced_density(rho: np.ndarray, keep, n_qubits: int) -> np.ndarray:
    keep = sorted(keep)
    drop = [q for q in range(n_qubits) if q not in keep]
    t = np.asarray(rho).reshape((2,) * (2 * n_qubits))
    perm = keep + drop + [n_qubits + q for q in keep] + [n_qubits + q for q in drop]
    dk, dd = 2 ** len(keep), 2 ** len(drop)
    t = t.transpose(perm).reshape(dk, dd, dk, dd)
    return np.einsum("ajbj->ab", t)


@dataclass
class SteadyState:
    """Null space of a Liouvillian and a representative steady state."""

    rho: np.ndarray
    null_dim: int
    right: np.ndarray  # (dim**2, null_dim) right null vectors
    left: np.ndarray  # (dim**2, null_dim) left null vectors (conserved quantities)

    @property
    def unique(self) -> bool:
        return self.null_dim == 1

    def from_initial(self, rho0: np.ndarray) -> np.ndarray:
        """Infinite-time limit of the evolution started in ``rho0``."""
        v = np.asarray(rho0, dtype=complex).reshape(-1)
        coef = np.linalg.solve(self.left.conj().T @ self.right, self.left.conj().T @ v)
        d = int(round(np.sqrt(self.right.shape[0])))
        return _hermitize(self.right @ coef, d, normalize=False)


def _hermitize(vec, d, normalize=True):
    rho = vec.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    if normalize:
        rho = rho / np.trace(rho).real
    return rho


def _null_space(block: np.ndarray, tol: float):
    u, s, vh = la.svd(block)
    rank = int(np.sum(s > tol))
    return vh[rank:].conj().T, u[:, rank:]


def steady_state(gen: Generator, tol: float = 1e-9, rho0: np.ndarray | None = None) -> SteadyState:
    """Exact null space of the matrixized generator.

    The superoperator is split into the connected components of its
    sparsity graph (a pure permutation, no physics assumed) and each
    component is solved densely by SVD. The representative state is the
    long-time limit from ``rho0`` (default: maximally mixed).
    """
    d = gen.dim
    if d * d > MAX_LIOUVILLE_DIM:
        raise ValueError(f"Liouville dimension {d*d} exceeds {MAX_LIOUVILLE_DIM}")
    sup = gen.liouvillian()
    pattern = (abs(sup) + abs(sup.T)).tocsr()
    pattern.eliminate_zeros()
    n_comp, labels = connected_components(pattern, directed=False)
    dense = sup.toarray()
    right, left = [], []
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        r, l = _null_space(dense[np.ix_(idx, idx)], tol)
        for k in range(r.shape[1]):
            vr = np.zeros(d * d, dtype=complex)
            vl = np.zeros(d * d, dtype=complex)
            vr[idx], vl[idx] = r[:, k], l[:, k]
            right.append(vr)
            left.append(vl)
    right = np.array(right).T
    left = np.array(left).T
    ss = SteadyState(np.zeros((d, d), dtype=complex), right.shape[1], right, left)
    if rho0 is None:
        rho0 = np.eye(d, dtype=complex) / d
    ss.rho = ss.from_initial(rho0)
    return ss


def steady_state_dense(gen: Generator, tol: float = 1e-9) -> tuple[np.ndarray, int]:
    """Whole-matrix SVD of the Liouvillian; slow reference for small registers."""
    sup = gen.liouvillian().toarray()
    _, s, vh = la.svd(sup)
    null_dim = int(np.sum(s <= tol))
    return _hermitize(vh[-1].conj(), gen.dim), null_dim


def dense_null_dim(gen: Generator, tol: float = 1e-6) -> int:
    """Null-space dimension of the whole Liouvillian from the eigenvalues of L^dagger L.

    Counts singular values ``sqrt(w) <= tol``; the Hermitian eigensolver is
    roughly twice as fast as an SVD of the same matrix and needs no vectors.
    """
    sup = gen.liouvillian().toarray()
    w = la.eigvalsh(sup.conj().T @ sup, driver="evd")
    return int(np.sum(np.sqrt(np.abs(w)) <= tol))


def integrate_density(gen: Generator, rho0: np.ndarray, times) -> np.ndarray:
    """Master-equation propagation, ``exp(t L) vec(rho0)`` via the sparse action."""
    sup = gen.liouvillian().tocsc()
    d = gen.dim
    v = np.asarray(rho0, dtype=complex).reshape(-1)
    out, last = [], 0.0
    for t in times:
        if t < last:
            raise ValueError("times must be nondecreasing")
        if t > last:
            v = spla.expm_multiply(sup * (t - last), v)
        last = t
        out.append(v.reshape(d, d).copy())
    return np.array(out)
