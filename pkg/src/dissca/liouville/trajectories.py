"""Wave-function Monte Carlo for the two-ring generators.

With no Hamiltonian the non-Hermitian drift is ``exp(-K t / 2)`` with
``K = sum_j C_j^dag C_j`` Hermitian and positive semidefinite, so it is
propagated exactly in the eigenbasis of ``K``. ``K`` is block diagonal
over the connected components of its sparsity graph (the input-ring
sectors for the conditional jumps), which keeps every basis change small.
Jump times solve ``||psi(t)||^2 = r`` by Newton iteration on the convex
function ``log ||psi(t)||^2``; started from ``t = 0`` it approaches the
root monotonically from below and never leaves the bracket.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.sparse.csgraph import connected_components

from .operators import Generator

_BUFFER = 64
_NEED_RANDOMS, _DONE, _COLLAPSE = 1, 0, 2
NORM_FLOOR = 1e-14


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CompiledGenerator:
    indptr: np.ndarray  # (J, D + 1)
    indices: np.ndarray  # (nnz_total,)
    data: np.ndarray  # (nnz_total,)
    offsets: np.ndarray  # (J + 1,)
    members: np.ndarray  # (X, dmax), -1 padded
    sizes: np.ndarray  # (X,)
    vecs: np.ndarray  # (X, dmax, dmax)
    lam: np.ndarray  # (X, dmax)
    dim: int


def compile_generator(gen: Generator) -> CompiledGenerator:
    if gen.hamiltonian is not None:
        raise ValueError("trajectory sampler supports purely dissipative generators only")
    d = gen.dim
    ops = gen.scaled_jumps()
    indptr = np.zeros((len(ops), d + 1), dtype=np.int64)
    idx, dat, off = [], [], [0]
    for j, c in enumerate(ops):
        c = c.tocsr()
        c.sort_indices()
        indptr[j] = c.indptr
        idx.append(c.indices.astype(np.int64))
        dat.append(c.data.astype(complex))
        off.append(off[-1] + c.nnz)
    k = gen.no_jump_operator()
    pattern = abs(k) + abs(k.T)
    n_comp, labels = connected_components(pattern, directed=False)
    groups = [np.flatnonzero(labels == c) for c in range(n_comp)]
    dmax = max(len(g) for g in groups)
    members = -np.ones((n_comp, dmax), dtype=np.int64)
    vecs = np.zeros((n_comp, dmax, dmax), dtype=complex)
    lam = np.zeros((n_comp, dmax))
    kd = k.toarray()
    for c, g in enumerate(groups):
        w, v = np.linalg.eigh(kd[np.ix_(g, g)])
        members[c, : len(g)] = g
        vecs[c, : len(g), : len(g)] = v
        lam[c, : len(g)] = np.clip(w, 0.0, None)
    return CompiledGenerator(
        indptr,
        np.concatenate(idx) if idx else np.zeros(0, np.int64),
        np.concatenate(dat) if dat else np.zeros(0, complex),
        np.array(off, dtype=np.int64),
        members,
        np.array([len(g) for g in groups], dtype=np.int64),
        vecs,
        lam,
        d,
    )


@numba.njit(cache=True)
def _to_eigen(psi, members, sizes, vecs, coef):
    for x in range(sizes.size):
        m = sizes[x]
        for b in range(m):
            acc = 0j
            for a in range(m):
                acc += np.conj(vecs[x, a, b]) * psi[members[x, a]]
            coef[x, b] = acc


@numba.njit(cache=True)
def _from_eigen(coef, members, sizes, vecs, lam, s, psi, scale):
    for x in range(sizes.size):
        m = sizes[x]
        for a in range(m):
            acc = 0j
            for b in range(m):
                acc += vecs[x, a, b] * coef[x, b] * np.exp(-0.5 * lam[x, b] * s)
            psi[members[x, a]] = acc * scale


@numba.njit(cache=True)
def _norm2(coef, sizes, lam, s):
    tot = 0.0
    for x in range(sizes.size):
        for b in range(sizes[x]):
            c = coef[x, b]
            tot += (c.real * c.real + c.imag * c.imag) * np.exp(-lam[x, b] * s)
    return tot


@numba.njit(cache=True)
def _jump_time(coef, sizes, lam, log_r, s_max):
    s = 0.0
    for _ in range(200):
        f0 = 0.0
        f1 = 0.0
        for x in range(sizes.size):
            for b in range(sizes[x]):
                c = coef[x, b]
                e = (c.real * c.real + c.imag * c.imag) * np.exp(-lam[x, b] * s)
                f0 += e
                f1 += lam[x, b] * e
        if f0 <= 0.0 or f1 <= 0.0:
            break
        g = np.log(f0) - log_r
        ds = g * f0 / f1
        s_new = min(s + ds, s_max)
        if s_new - s <= 1e-13 * max(1.0, s):
            s = s_new
            break
        s = s_new
    return s


@numba.njit(cache=True)
def _run_interval(psi, duration, unif, upos, indptr, indices, data, offsets, members, sizes, vecs, lam):
    n_ops = offsets.size - 1
    dim = psi.size
    coef = np.zeros((sizes.size, vecs.shape[1]), dtype=np.complex128)
    work = np.zeros((max(n_ops, 1), dim), dtype=np.complex128)
    probs = np.zeros(max(n_ops, 1))
    elapsed = 0.0
    jumps = 0
    while True:
        if upos + 2 > unif.size:
            return elapsed, upos, jumps, 1
        r = 1.0 - unif[upos]
        _to_eigen(psi, members, sizes, vecs, coef)
        rem = duration - elapsed
        n_end = _norm2(coef, sizes, lam, rem)
        if n_end > r or n_ops == 0:
            if n_end < NORM_FLOOR * NORM_FLOOR:
                return elapsed, upos, jumps, 2
            _from_eigen(coef, members, sizes, vecs, lam, rem, psi, 1.0 / np.sqrt(n_end))
            return duration, upos + 1, jumps, 0
        s = _jump_time(coef, sizes, lam, np.log(r), rem)
        n_s = _norm2(coef, sizes, lam, s)
        _from_eigen(coef, members, sizes, vecs, lam, s, psi, 1.0 / np.sqrt(n_s))
        total = 0.0
        for j in range(n_ops):
            p = 0.0
            base = offsets[j]
            for row in range(dim):
                acc = 0j
                for q in range(indptr[j, row], indptr[j, row + 1]):
                    acc += data[base + q] * psi[indices[base + q]]
                work[j, row] = acc
                p += acc.real * acc.real + acc.imag * acc.imag
            probs[j] = p
            total += p
        if total < NORM_FLOOR * NORM_FLOOR:
            return elapsed, upos, jumps, 2
        pick = unif[upos + 1] * total
        chosen = n_ops - 1
        cum = 0.0
        for j in range(n_ops):
            cum += probs[j]
            if pick < cum:
                chosen = j
                break
        scale = 1.0 / np.sqrt(probs[chosen])
        for row in range(dim):
            psi[row] = work[chosen, row] * scale
        elapsed += s
        upos += 2
        jumps += 1


def evolve_interval(psi: np.ndarray, cg: CompiledGenerator, duration: float, rng: np.random.Generator) -> int:
    """Advance ``psi`` in place by ``duration``; returns the number of jumps."""
    if psi.shape != (cg.dim,) or psi.dtype != np.complex128 or not psi.flags.c_contiguous:
        raise ValueError(f"state must be a contiguous complex vector of length {cg.dim}")
    if duration <= 0:
        return 0
    jumps = 0
    elapsed = 0.0
    while True:
        unif = rng.random(_BUFFER)
        done, _, nj, status = _run_interval(
            psi, duration - elapsed, unif, 0, cg.indptr, cg.indices, cg.data, cg.offsets,
            cg.members, cg.sizes, cg.vecs, cg.lam,
        )
        jumps += nj
        if status == _COLLAPSE:
            raise NumericalFailure("trajectory norm collapsed below 1e-14")
        if status == _DONE:
            return jumps
        elapsed += done


def swap_rings(psi: np.ndarray, n: int) -> np.ndarray:
    """Exchange input and output rings (first and second half of the qubits)."""
    d = 2**n
    return np.ascontiguousarray(psi.reshape(d, d).T).reshape(-1)


def output_marginals(psi: np.ndarray, n: int) -> np.ndarray:
    """Probability of reading 1 on each output-ring site."""
    d = 2**n
    p_out = (np.abs(psi.reshape(d, d)) ** 2).sum(axis=0).reshape((2,) * n)
    return np.array([p_out.take(1, axis=s).sum() for s in range(n)])


def input_marginals(psi: np.ndarray, n: int) -> np.ndarray:
    d = 2**n
    p_in = (np.abs(psi.reshape(d, d)) ** 2).sum(axis=1).reshape((2,) * n)
    return np.array([p_in.take(1, axis=s).sum() for s in range(n)])


class CycleEvolver:
    """Cycle-by-cycle propagation of two-ring pure states.

    With ``split`` the first half cycle runs ``first`` and the second half
    ``second``, and the snapshot is taken at ``t_c / 2``. Without it,
    ``first`` runs for the whole cycle and the snapshot is taken at the
    cycle end. Rings swap roles after every cycle; snapshots are stored in
    input-first order of the cycle they belong to.
    """

    def __init__(self, n: int, first: Generator, second: Generator | None, t_c: float, split: bool):
        self.n = n
        self.t_c = t_c
        self.split = split
        self.first = compile_generator(first)
        self.second = compile_generator(second) if split and second is not None else None

    def run(self, psi0: np.ndarray, cycles: int, rng: np.random.Generator, keep_states: bool = False):
        """Returns ``(marginals, states, jumps)``.

        ``marginals[t]`` is the output-ring P(1) at the snapshot of cycle
        ``t`` (row 0 holds the input-ring marginals of ``psi0``); ``states``
        holds the snapshot vectors when ``keep_states`` is set.
        """
        n = self.n
        psi = np.array(psi0, dtype=complex, copy=True)
        norm = np.linalg.norm(psi)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError("initial state must be normalized")
        marg = np.empty((cycles + 1, n))
        marg[0] = input_marginals(psi, n)
        states = [] if keep_states else None
        jumps = 0
        for t in range(1, cycles + 1):
            if self.split:
                jumps += evolve_interval(psi, self.first, 0.5 * self.t_c, rng)
                snap = psi.copy()
                if self.second is not None:
                    jumps += evolve_interval(psi, self.second, 0.5 * self.t_c, rng)
            else:
                jumps += evolve_interval(psi, self.first, self.t_c, rng)
                snap = psi
            marg[t] = output_marginals(snap, n)
            if keep_states:
                states.append(snap.copy())
            psi = swap_rings(psi, n)
        return marg, (np.array(states) if keep_states else None), jumps


def evolve_trajectory(psi0, gen, sched, cycles: int, rng, n: int | None = None):
    """Snapshots of one trajectory under ``gen`` (one generator or a pair).

    A pair ``(first, second)`` is used with a split schedule; a single
    generator evolves for whole cycles.
    """
    if isinstance(gen, Generator):
        first, second = gen, None
    else:
        first, second = gen
    if n is None:
        n = first.n_qubits // 2
    ev = CycleEvolver(n, first, second, sched.t_c, sched.split_half)
    marg, states, _ = ev.run(psi0, cycles, rng, keep_states=True)
    return marg, states


@dataclass
class QuantumEnsemble:
    """Snapshot marginals of many trajectories from Gray-code initial states.

    ``marginals`` has shape ``(states, trajectories, cycles + 1, n)``;
    ``late_states[j]`` holds the snapshot vectors of the last ``keep_last``
    cycles for the initial states listed in ``kept``.
    """

    marginals: np.ndarray
    kept: tuple
    late_states: dict
    jumps: int


def run_quantum_ensemble(
    rule,
    n: int,
    gamma: float,
    t_c: float,
    phi: float,
    n_states: int,
    cycles: int,
    trajectories: int,
    master_seed: int,
    first_state: int = 1,
    keep_states_for=(0,),
    keep_last: int = 0,
    split: bool | None = None,
) -> QuantumEnsemble:
    """Trajectory ensemble of the interpolated two-ring dynamics.

    The hidden ring starts as a copy of each initial state. With the
    default ``split`` the cycle is split whenever the quantum part is
    present (``phi < 1``); at ``phi = 1`` whole cycles run the classical
    generator and snapshots are taken at the cycle end. Trajectory ``s`` of
    state ``j`` uses stream ``j * trajectories + s`` of ``master_seed``.
    """
    from ..eca import gray_code_configs
    from ..stochastic import trajectory_rngs
    from .operators import cycle_generators
    from .states import ring_pair_state

    if split is None:
        split = phi < 1.0
    first, second = cycle_generators(rule, n, gamma, phi)
    ev = CycleEvolver(n, first, second, t_c, split)
    marg = np.empty((n_states, trajectories, cycles + 1, n))
    late = {}
    jumps = 0
    kept = tuple(j for j in keep_states_for if j < n_states) if keep_last > 0 else ()
    for j, c0 in enumerate(gray_code_configs(first_state, n_states, n)):
        psi0 = ring_pair_state(c0, c0)
        rngs = trajectory_rngs(master_seed, range(j * trajectories, (j + 1) * trajectories))
        keep = j in kept
        snaps = []
        for s in range(trajectories):
            m, st, nj = ev.run(psi0, cycles, rngs[s], keep_states=keep)
            marg[j, s] = m
            jumps += nj
            if keep:
                snaps.append(st[-keep_last:])
        if keep:
            late[j] = np.array(snaps)
    return QuantumEnsemble(marg, kept, late, jumps)
