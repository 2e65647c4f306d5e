"""Variational simulation of open-system dynamics with a layered circuit.

Each timestep fits a parameterized circuit acting on the previous
variational state so that a set of observables follows the trapezoidal
discretization of the Heisenberg equations. Circuit layers consist of
global single-qubit rotations, weak single-site damping and dephasing
channels, and global unitaries generated by a Rydberg Hamiltonian,
applied first to both rails and then to each rail.

States are dense ``2^q x 2^q`` density matrices in the qubit ordering of
:mod:`dissca.liouville` (input rail first, qubit 0 most significant).
"""

from __future__ import annotations

import functools
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .liouville.operators import IDENTITY2, P0, P1, SIGMA_MINUS, Generator

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
PAULIS = (IDENTITY2, SIGMA_X, SIGMA_Y, SIGMA_Z)


# --- channels ---------------------------------------------------------------


def kraus_damping(theta_d: float) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude damping towards ``|0>``; ``theta_d = 0`` is the identity."""
    if theta_d < 0:
        raise ValueError("theta_d must be nonnegative")
    d1 = np.sqrt(-np.expm1(-theta_d)) * SIGMA_MINUS
    d2 = P0 + np.exp(-0.5 * theta_d) * P1
    return d1, d2


def kraus_dephasing(theta_p: float, printed: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Dephasing Kraus pair ``a 1 +- b sigma_z``.

    The trace-preserving form uses ``a^2 = exp(-theta_p) / 2`` and
    ``b^2 = (1 - exp(-theta_p)) / 2``. ``printed=True`` returns the variant
    with ``a^2 = exp(-theta_p / 2) / 2``, which is not trace preserving for
    ``theta_p > 0``; it exists only for comparison.
    """
    if theta_p < 0:
        raise ValueError("theta_p must be nonnegative")
    a = np.sqrt(np.exp(-0.5 * theta_p if printed else -theta_p) / 2)
    b = np.sqrt(-np.expm1(-theta_p) / 2)
    return a * IDENTITY2 + b * SIGMA_Z, a * IDENTITY2 - b * SIGMA_Z


def embed(op: np.ndarray, site: int, n_qubits: int) -> np.ndarray:
    left = np.eye(2**site)
    right = np.eye(2 ** (n_qubits - site - 1))
    return np.kron(np.kron(left, op), right)


def _apply_local(rho, op, site, n_qubits):
    """``K rho K^dag`` for a single-qubit ``K`` without forming the full operator."""
    d_l, d_r = 2**site, 2 ** (n_qubits - site - 1)
    t = rho.reshape(d_l, 2, d_r, d_l, 2, d_r)
    t = np.einsum("ab,ibjkcl->iajkcl", op, t)
    t = np.einsum("ibjkcl,dc->ibjkdl", t, op.conj())
    return t.reshape(rho.shape)


@dataclass(frozen=True)
class _ChannelTables:
    """Basis-pair tables for the site-averaged channels on ``sites``.

    ``ones`` is the summed count of set bits of x and y, ``both`` the count
    of sites set in both, ``zz`` the mean of ``z_x z_y`` (``z = +-1``) and
    ``shift`` the sum over sites of the map moving each site's |1><1|
    block onto its |0><0| block (acting on row-major vectorized rho).
    """

    m: int
    ones: np.ndarray
    both: np.ndarray
    zz: np.ndarray
    shift: sp.csr_matrix


@functools.lru_cache(maxsize=32)
def _channel_tables(n_qubits: int, sites: tuple[int, ...]) -> _ChannelTables:
    dim = 2**n_qubits
    idx = np.arange(dim)
    bits = np.stack([(idx >> (n_qubits - 1 - s)) & 1 for s in sites]).astype(float)
    ones = bits.sum(axis=0)
    z = 1.0 - 2.0 * bits
    rows, cols = [], []
    for s in sites:
        mask = 1 << (n_qubits - 1 - s)
        set_ = idx[(idx & mask) != 0]
        x, y = np.meshgrid(set_, set_, indexing="ij")
        rows.append(((x - mask) * dim + (y - mask)).ravel())
        cols.append((x * dim + y).ravel())
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    shift = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(dim * dim, dim * dim))
    return _ChannelTables(
        len(sites), ones[:, None] + ones[None, :], bits.T @ bits, z.T @ z / len(sites), shift
    )


def _damping_mixture(rho, theta_d, sites, n_qubits):
    # K2 rho K2^dag scales element (x, y) by q^(b_x + b_y); K1 moves the
    # |1><1| block of a site onto its |0><0| block with weight 1 - q^2
    tab = _channel_tables(n_qubits, tuple(sites))
    q = np.exp(-0.5 * theta_d)
    out = rho * (tab.m + (q - 1.0) * tab.ones + (q - 1.0) ** 2 * tab.both)
    out += -np.expm1(-theta_d) * (tab.shift @ rho.reshape(-1)).reshape(rho.shape)
    return out / tab.m


def apply_channel_layer(rho, theta_d: float, theta_p: float, sites=None, printed: bool = False):
    """Damping then dephasing, each as the ``1/N`` mixture over ``sites``.

    Both mixtures are evaluated in closed form in the computational basis;
    :func:`_apply_local` with the Kraus operators is the reference.
    """
    rho = np.array(rho, dtype=complex)
    n_q = int(round(np.log2(rho.shape[0])))
    sites = tuple(range(n_q)) if sites is None else tuple(sites)
    if theta_d > 0:
        rho = _damping_mixture(rho, theta_d, sites, n_q)
    if theta_p > 0 or printed:
        a2 = np.exp(-0.5 * theta_p if printed else -theta_p) / 2
        b2 = -np.expm1(-theta_p) / 2
        rho = rho * (2 * a2 + 2 * b2 * _channel_tables(n_q, sites).zz)
    return rho


def apply_channel_layer_kraus(rho, theta_d: float, theta_p: float, sites=None, printed: bool = False):
    """Same mixture as :func:`apply_channel_layer` built from Kraus operators."""
    rho = np.asarray(rho, dtype=complex)
    n_q = int(round(np.log2(rho.shape[0])))
    sites = list(range(n_q)) if sites is None else list(sites)
    for kraus in (kraus_damping(theta_d), kraus_dephasing(theta_p, printed)):
        out = np.zeros_like(rho)
        for s in sites:
            for k in kraus:
                out += _apply_local(rho, k, s, n_q)
        rho = out / len(sites)
    return rho


def choi_matrix(kraus) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) E(|i><j|)`` of a single-qubit channel."""
    d = kraus[0].shape[0]
    choi = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = 1
            choi += np.kron(e, sum(k @ e @ k.conj().T for k in kraus))
    return choi


# --- Rydberg model ----------------------------------------------------------


@dataclass(frozen=True)
class RydbergModel:
    """Driven atoms with van der Waals interactions between excited states.

    ``positions`` are 2D coordinates in lattice units; with ``period`` set,
    the first coordinate is periodic and distances use the minimum image.
    """

    positions: np.ndarray
    omega: float = 1.0
    c6: float = 100.0
    period: float | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError("positions must be an (atoms, 2) array")
        if self.c6 <= 0 or self.omega <= 0:
            raise ValueError("C6 and Omega must be positive")
        object.__setattr__(self, "positions", pos)
        dist = self.distances()
        off = dist[~np.eye(len(pos), dtype=bool)]
        if np.any(off < 1e-12):
            raise ValueError("atom positions must be pairwise distinct")

    @classmethod
    def two_rails(cls, n: int, omega: float = 1.0, c6: float = 100.0, separation: float = 1.0):
        """Input rail at ``y = 0`` and output rail at ``y = separation``,
        unit spacing along each rail, periodic with period ``n``."""
        x = np.arange(n, dtype=float)
        pos = np.concatenate([np.column_stack([x, np.zeros(n)]), np.column_stack([x, np.full(n, separation)])])
        return cls(pos, omega, c6, period=float(n))

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    @property
    def blockade_radius(self) -> float:
        return (self.c6 / self.omega) ** (1.0 / 6.0)

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        if self.period is not None:
            dx = np.abs(diff[..., 0]) % self.period
            diff[..., 0] = np.minimum(dx, self.period - dx)
        return np.sqrt((diff**2).sum(axis=-1))


def rydberg_hamiltonian(model: RydbergModel, subset=None) -> np.ndarray:
    """``Omega/2 sum sigma_x + sum_{i<j} C6 / r^6 P1 P1`` over ``subset``.

    Acts on the full register of ``model.n_atoms`` qubits; atoms outside
    the subset carry identities.
    """
    q = model.n_atoms
    subset = list(range(q)) if subset is None else sorted(set(subset))
    if not subset:
        raise ValueError("subset must be nonempty")
    dist = model.distances()
    dim = 2**q
    h = np.zeros((dim, dim), dtype=complex)
    for i in subset:
        h += 0.5 * model.omega * embed(SIGMA_X, i, q)
    occ = (np.arange(dim)[:, None] >> (q - 1 - np.arange(q))[None, :]) & 1
    diag = np.zeros(dim)
    for i, j in itertools.combinations(subset, 2):
        diag += model.c6 / dist[i, j] ** 6 * occ[:, i] * occ[:, j]
    return h + np.diag(diag)


class Propagator:
    """``exp(-i H t)`` from a cached eigendecomposition."""

    def __init__(self, h: np.ndarray):
        self.w, self.v = np.linalg.eigh(h)

    def __call__(self, t: float) -> np.ndarray:
        return (self.v * np.exp(-1j * self.w * t)) @ self.v.conj().T


def apply_global_unitary(rho, model: RydbergModel, t1: float, t2: float, rails=None):
    """Evolve both rails together for ``t1``, then each rail alone for ``t2``.

    ``t2`` may be a pair to give each rail its own time.
    """
    if t1 < 0 or np.any(np.asarray(t2) < 0):
        raise ValueError("unitary times must be nonnegative")
    if rails is None:
        half = model.n_atoms // 2
        rails = (range(half), range(half, model.n_atoms))
    t2a, t2b = np.broadcast_to(np.asarray(t2, dtype=float), (2,))
    u_both = Propagator(rydberg_hamiltonian(model))(t1)
    u_a = Propagator(rydberg_hamiltonian(model, rails[0]))(t2a)
    u_b = Propagator(rydberg_hamiltonian(model, rails[1]))(t2b)
    # the rail Hamiltonians act on disjoint qubits and commute
    u = u_b @ u_a @ u_both
    return u @ rho @ u.conj().T


# --- Heisenberg picture and cost ---------------------------------------------


def heisenberg_action(gen: Generator, obs: np.ndarray) -> np.ndarray:
    """``L_H O = i[H, O] + sum L^dag O L - {L^dag L, O} / 2``."""
    return gen.adjoint(obs)


def pauli_words(groups, n_qubits: int, include_identity: bool = False) -> list[np.ndarray]:
    """All Pauli strings supported on each qubit group, without duplicates."""
    seen = set()
    out = []
    for g in groups:
        g = tuple(g)
        for letters in itertools.product(range(4), repeat=len(g)):
            word = [0] * n_qubits
            for q, p in zip(g, letters):
                word[q] = p
            key = tuple(word)
            if key in seen or (not include_identity and not any(key)):
                continue
            seen.add(key)
            op = np.ones((1, 1), dtype=complex)
            for p in key:
                op = np.kron(op, PAULIS[p])
            out.append(op)
    return out


def local_observables(n: int) -> list[np.ndarray]:
    """3-local Pauli strings per site of the two-ring register.

    For every site ``i`` the groups are the input triple ``(i-1, i, i+1)``,
    the output triple and the rung triple ``(in_i, out_i, out_{i+1})`` that
    couples the rails; each group contributes its ``4^3`` words (identity
    and duplicates dropped).
    """
    groups = []
    for i in range(n):
        tri = [(i - 1) % n, i, (i + 1) % n]
        groups.append(tri)
        groups.append([n + s for s in tri])
        groups.append([i, n + i, n + (i + 1) % n])
    return pauli_words(groups, 2 * n)


class CostFunctional:
    """Trapezoidal residual of the Heisenberg equations over ``observables``."""

    def __init__(self, gen: Generator, observables, tau: float):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.tau = tau
        obs = np.array(observables, dtype=complex)
        lh = np.array([heisenberg_action(gen, o) for o in obs])
        # <A> = sum_ij A_ij rho_ji: store transposes so it is a flat dot product;
        # Pauli words and their images are sparse in the computational basis
        k = len(obs)
        flat = np.concatenate([obs.transpose(0, 2, 1).reshape(k, -1), lh.transpose(0, 2, 1).reshape(k, -1)])
        flat[np.abs(flat) < 1e-14] = 0
        self._k = k
        self._stack = sp.csr_matrix(flat)

    def expectations(self, rho):
        e = (self._stack @ np.asarray(rho).reshape(-1)).real
        return e[: self._k], e[self._k :]

    def __call__(self, rho_next, rho_t, reference=None) -> float:
        o1, l1 = self.expectations(rho_next)
        o0, l0 = reference if reference is not None else self.expectations(rho_t)
        return float(np.abs(o1 - o0 - 0.5 * self.tau * (l1 + l0)).sum())


def cost_fv(rho_next, rho_t, tau: float, observables, gen: Generator) -> float:
    return CostFunctional(gen, observables, tau)(rho_next, rho_t)


# --- ansatz -----------------------------------------------------------------


def _rotation(ax: float, ay: float) -> np.ndarray:
    """``R_y(ay) R_x(ax)`` with ``R_a(t) = exp(-i t sigma_a / 2)``."""
    cx, sx = np.cos(0.5 * ax), np.sin(0.5 * ax)
    cy, sy = np.cos(0.5 * ay), np.sin(0.5 * ay)
    rx = np.array([[cx, -1j * sx], [-1j * sx, cx]])
    ry = np.array([[cy, -sy], [sy, cy]], dtype=complex)
    return ry @ rx


@dataclass
class VariationalParams:
    """Per-layer parameters ``values[layer]`` named by ``names``."""

    values: np.ndarray
    names: tuple[str, ...]

    @property
    def depth(self) -> int:
        return self.values.shape[0]

    def wrapped(self) -> "VariationalParams":
        v = self.values.copy()
        for k, name in enumerate(self.names):
            if name.startswith("angle"):
                v[:, k] = np.mod(v[:, k], 2 * np.pi)
        return VariationalParams(v, self.names)

    def to_lists(self) -> list[dict]:
        return [dict(zip(self.names, map(float, row))) for row in self.wrapped().values]


class LayeredAnsatz:
    """Rotation, channel and global-unitary layers on a two-rail register.

    With ``rail_symmetric`` every layer has six parameters shared by both
    rails (two rotation angles, ``theta_d``, ``theta_p``, ``t1``, ``t2``).
    Otherwise the rotation angles, the channel strengths and ``t2`` are set
    per rail, giving eleven parameters per layer; ``t1`` stays shared.
    """

    def __init__(
        self,
        model: RydbergModel,
        depth: int,
        rail_symmetric: bool = True,
        max_strength: float = 5.0,
        max_time: float = np.pi,
        printed_dephasing: bool = False,
    ):
        self.model = model
        self.depth = depth
        self.rail_symmetric = rail_symmetric
        self.printed_dephasing = printed_dephasing
        self._cache = None
        q = model.n_atoms
        self.n_qubits = q
        half = q // 2
        self.rails = (tuple(range(half)), tuple(range(half, q)))
        self._both = Propagator(rydberg_hamiltonian(model))
        # a rail Hamiltonian acts trivially on the other rail, so its
        # propagator is a Kronecker factor of the rail-sized block
        d = 2**half
        h_in = rydberg_hamiltonian(model, self.rails[0])[::d, ::d]
        h_out = rydberg_hamiltonian(model, self.rails[1])[:d, :d]
        self._rail = [Propagator(h_in), Propagator(h_out)]
        if rail_symmetric:
            self.names = ("angle_x", "angle_y", "theta_d", "theta_p", "t1", "t2")
        else:
            self.names = (
                "angle_x_in", "angle_y_in", "angle_x_out", "angle_y_out",
                "theta_d_in", "theta_p_in", "theta_d_out", "theta_p_out",
                "t1", "t2_in", "t2_out",
            )
        ub = {"angle": np.pi, "theta": max_strength, "t1": max_time, "t2": max_time}
        self._bounds = [
            (-np.pi if n.startswith("angle") else 0.0, next(v for k, v in ub.items() if n.startswith(k)))
            for n in self.names
        ]

    @property
    def n_per_layer(self) -> int:
        return len(self.names)

    @property
    def n_params(self) -> int:
        return self.depth * self.n_per_layer

    def bounds(self) -> list[tuple[float, float]]:
        return self._bounds * self.depth

    def layer_slices(self) -> list[slice]:
        k = self.n_per_layer
        return [slice(i * k, (i + 1) * k) for i in range(self.depth)]

    def params(self, theta) -> VariationalParams:
        return VariationalParams(np.asarray(theta, dtype=float).reshape(self.depth, -1), self.names)

    def initial(self, rng: np.random.Generator, jitter: float = 1e-3) -> np.ndarray:
        """Identity circuit plus a small jitter, clipped into the bounds."""
        theta = jitter * rng.random(self.n_params)
        lo, hi = np.array(self.bounds()).T
        return np.clip(theta, lo, hi)

    def identity_starts(self, rng: np.random.Generator, jitter: float = 1e-3) -> dict:
        """Parameter vectors that all realize the identity circuit (up to jitter).

        Besides the plain identity, a pi rotation about x in the first layer
        undone by the second layer's rotation gives an identity whose first
        channel acts in the flipped frame, i.e. damps towards |1> instead of
        |0>. A local optimizer started at the plain identity cannot reach
        that frame, since it needs two layers to move together.
        """
        starts = {"identity": self.initial(rng, jitter)}
        if self.depth < 2:
            return starts
        k = self.n_per_layer
        frames = {"flip": ("angle_x",)} if self.rail_symmetric else {
            "flip_in": ("angle_x_in",), "flip_out": ("angle_x_out",), "flip_both": ("angle_x_in", "angle_x_out"),
        }
        for label, angles in frames.items():
            theta = self.initial(rng, jitter)
            for a in angles:
                i = self.names.index(a)
                theta[i], theta[k + i] = np.pi, -np.pi
            starts[label] = theta
        return starts

    def _rail_power(self, u: np.ndarray) -> np.ndarray:
        out = u
        for _ in range(len(self.rails[0]) - 1):
            out = np.kron(out, u)
        return out

    def _split(self, p):
        """``(r_in, r_out, channels, t1, t2_in, t2_out)`` of one layer."""
        if self.rail_symmetric:
            ax, ay, td, tp, t1, t2 = p
            r = _rotation(ax, ay)
            return r, r, ((td, tp, None),), t1, t2, t2
        axi, ayi, axo, ayo, tdi, tpi, tdo, tpo, t1, t2_in, t2_out = p
        chans = ((tdi, tpi, self.rails[0]), (tdo, tpo, self.rails[1]))
        return _rotation(axi, ayi), _rotation(axo, ayo), chans, t1, t2_in, t2_out

    def _rotations(self, r_in, r_out) -> np.ndarray:
        return np.kron(self._rail_power(r_in), self._rail_power(r_out))

    def _globals(self, t1, t2_in, t2_out) -> np.ndarray:
        return np.kron(self._rail[0](t2_in), self._rail[1](t2_out)) @ self._both(t1)

    def _channels(self, rho, chans):
        for td, tp, sites in chans:
            rho = apply_channel_layer(rho, td, tp, sites, self.printed_dephasing)
        return rho

    def apply_layer(self, rho, p) -> np.ndarray:
        r_in, r_out, chans, t1, t2_in, t2_out = self._split(p)
        u = self._rotations(r_in, r_out)
        rho = self._channels(u @ rho @ u.conj().T, chans)
        u = self._globals(t1, t2_in, t2_out)
        return u @ rho @ u.conj().T

    def __call__(self, rho_in, theta) -> np.ndarray:
        rho_in = np.asarray(rho_in, dtype=complex)
        layers = np.asarray(theta, dtype=float).reshape(self.depth, -1)
        # layerwise optimization varies one layer at a time, so the states
        # after the leading unchanged layers are reused from the last call
        cache = self._cache
        reuse = 0
        if cache is not None and np.array_equal(cache[0], rho_in):
            while reuse < self.depth and np.array_equal(cache[1][reuse], layers[reuse]):
                reuse += 1
            reuse = min(reuse, self.depth - 1)
            steps = cache[2][:reuse]
        else:
            steps = []
        rho, pending = steps[-1] if steps else (rho_in, None)
        for p in layers[reuse:]:
            r_in, r_out, chans, t1, t2_in, t2_out = self._split(p)
            # the global unitary of a layer and the next layer's rotations
            # are applied as one product
            u = self._rotations(r_in, r_out)
            if pending is not None:
                u = u @ pending
            rho = self._channels(u @ rho @ u.conj().T, chans)
            pending = self._globals(t1, t2_in, t2_out)
            steps.append((rho, pending))
        self._cache = (rho_in.copy(), layers.copy(), steps)
        rho = pending @ rho @ pending.conj().T
        return 0.5 * (rho + rho.conj().T)


# --- optimization -----------------------------------------------------------


@dataclass
class OptimizeResult:
    theta: np.ndarray
    cost: float
    sweeps: int
    converged: bool
    history: list = field(default_factory=list)


def optimize_layerwise(
    cost,
    theta_init,
    bounds,
    layers=None,
    max_sweeps: int = 20,
    rtol: float = 1e-6,
    atol: float = 1e-14,
    maxiter: int = 200,
) -> OptimizeResult:
    """Cyclic optimization over parameter blocks with bounded SLSQP.

    ``layers`` is a list of slices (default: the whole vector as one
    block). A sweep optimizes each block with the others frozen;
    iteration stops when a sweep improves the cost by less than ``rtol``
    relative, when the cost drops below ``atol``, or after ``max_sweeps``
    sweeps, in which case a warning is issued and the best point returned.
    """
    theta = np.array(theta_init, dtype=float)
    bounds = list(bounds)
    if any(not (np.isfinite(lo) and np.isfinite(hi)) for lo, hi in bounds):
        raise ValueError("all bounds must be finite")
    layers = layers or [slice(0, theta.size)]
    best = float(cost(theta))
    history = [best]
    for sweep in range(1, max_sweeps + 1):
        start = best
        for sl in layers:
            def sub(x, sl=sl):
                full = theta.copy()
                full[sl] = x
                return cost(full)

            res = minimize(
                sub, theta[sl], method="SLSQP", bounds=bounds[sl],
                options={"maxiter": maxiter, "ftol": 1e-12},
            )
            if res.fun < best:
                theta[sl] = res.x
                best = float(res.fun)
        history.append(best)
        if best <= atol or start - best <= rtol * abs(start):
            return OptimizeResult(theta, best, sweep, True, history)
    warnings.warn("layerwise optimization hit the sweep cap", RuntimeWarning, stacklevel=2)
    return OptimizeResult(theta, best, max_sweeps, False, history)


# --- fidelity ---------------------------------------------------------------


def _psd_sqrt(rho, tol):
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w.min() < -tol:
        raise ValueError(f"density matrix has eigenvalue {w.min():.3e}")
    # round-off eigenvalues would otherwise enter as their square roots
    w = np.where(w > 1e-13 * max(w.max(), 1.0), w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity_error(rho_v, rho, tol: float = 1e-8) -> float:
    """``1 - (Tr sqrt(sqrt(rho_v) rho sqrt(rho_v)))^2``, clipped to [0, 1].

    The trace equals the nuclear norm of ``sqrt(rho_v) sqrt(rho)``, whose
    singular values avoid square roots of round-off eigenvalues.
    """
    a = _psd_sqrt(np.asarray(rho_v, dtype=complex), tol)
    b = _psd_sqrt(np.asarray(rho, dtype=complex), tol)
    f = float(np.linalg.svd(a @ b, compute_uv=False).sum() ** 2)
    return float(min(1.0, max(0.0, 1.0 - f)))


# --- benchmark against the exact master equation ------------------------------


def swap_rails(rho: np.ndarray, n: int) -> np.ndarray:
    """Exchange the input and output rails of a two-ring density matrix."""
    d = 2**n
    return rho.reshape(d, d, d, d).transpose(1, 0, 3, 2).reshape(d * d, d * d)


@dataclass
class BenchmarkConfig:
    rule: int = 137
    n: int = 3
    phi: float = 0.5
    gamma: float = 1.0
    t_c: float = 10.0
    tau: float = 0.5
    cycles: int = 2
    depth: int = 3
    rail_symmetric: bool = False
    initial_bits: tuple = (0, 0, 0)
    seed: int = 0
    max_sweeps: int = 4
    maxiter: int = 100
    screen_maxiter: int = 20


@dataclass
class BenchmarkRow:
    step: int
    time: float
    f_v: float
    epsilon: float
    negativity_v: float
    negativity_exact: float
    converged: bool


def _multistart(cost, starts: dict, ansatz: LayeredAnsatz, cfg: BenchmarkConfig) -> OptimizeResult:
    """Screen every start with one short sweep, then refine the best one."""
    bounds, layers = ansatz.bounds(), ansatz.layer_slices()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        screened = {
            key: optimize_layerwise(cost, th, bounds, layers, max_sweeps=1, maxiter=cfg.screen_maxiter)
            for key, th in starts.items()
        }
        best = min(screened.values(), key=lambda r: r.cost)
        res = optimize_layerwise(cost, best.theta, bounds, layers, max_sweeps=cfg.max_sweeps, maxiter=cfg.maxiter)
    if not res.converged:
        warnings.warn("layerwise optimization hit its sweep cap", RuntimeWarning, stacklevel=2)
    return res


def run_benchmark(cfg: BenchmarkConfig, progress=None) -> tuple[list[BenchmarkRow], list]:
    """Variational timesteps over ``cfg.cycles`` cycles of the split schedule.

    The first half of every cycle follows the mixed generator and the second
    half the classical part alone; rails swap at each cycle end for both the
    variational and the exact state. Each step acts on the previous
    variational state; its circuit is optimized from the identity-equivalent
    starts of :meth:`LayeredAnsatz.identity_starts` and from the previous
    step's parameters. Returns the per-step rows and the optimized
    parameters of every step.
    """
    import scipy.sparse.linalg as spla

    from .eca import rule_from_number
    from .liouville.operators import cycle_generators
    from .liouville.states import negativity, projector, ring_pair_state

    half_steps = cfg.t_c / 2 / cfg.tau
    if abs(half_steps - round(half_steps)) > 1e-9:
        raise ValueError("tau must divide t_c / 2")
    half_steps = int(round(half_steps))
    n = cfg.n
    first, second = cycle_generators(rule_from_number(cfg.rule), n, cfg.gamma, cfg.phi)
    gens = (first, second)
    sups = [g.liouvillian().tocsc() * cfg.tau for g in gens]
    obs = local_observables(n)
    costs = [CostFunctional(g, obs, cfg.tau) for g in gens]
    model = RydbergModel.two_rails(n)
    ansatz = LayeredAnsatz(model, cfg.depth, rail_symmetric=cfg.rail_symmetric)
    rng = np.random.default_rng(cfg.seed)
    bits = list(cfg.initial_bits)
    rho_v = projector(ring_pair_state(bits, bits))
    rho_x = rho_v.copy()
    d = rho_v.shape[0]
    rows, thetas = [], []
    prev_theta = None
    step = 0
    for cycle in range(cfg.cycles):
        for half in (0, 1):
            for _ in range(half_steps):
                step += 1
                fun = costs[half]
                ref = fun.expectations(rho_v)
                rho_t = rho_v

                def cost(theta, rho_t=rho_t, ref=ref, fun=fun):
                    return fun(ansatz(rho_t, theta), rho_t, ref)

                starts = ansatz.identity_starts(rng)
                if thetas:
                    starts["previous"] = np.asarray(prev_theta)
                res = _multistart(cost, starts, ansatz, cfg)
                prev_theta = res.theta
                rho_v = ansatz(rho_t, res.theta)
                rho_x = spla.expm_multiply(sups[half], rho_x.reshape(-1)).reshape(d, d)
                rho_x = 0.5 * (rho_x + rho_x.conj().T)
                t = cycle * cfg.t_c + (half * half_steps + _ + 1) * cfg.tau
                rows.append(
                    BenchmarkRow(
                        step, t, res.cost, fidelity_error(rho_v, rho_x),
                        negativity(rho_v, range(n)), negativity(rho_x, range(n)), res.converged,
                    )
                )
                thetas.append(ansatz.params(res.theta).to_lists())
                if progress:
                    progress(rows[-1])
        rho_v = swap_rails(rho_v, n)
        rho_x = swap_rails(rho_x, n)
    return rows, thetas
