"""Jump operators and Lindblad generators on the two-ring register.

Qubit layout: input-ring sites ``0..N-1`` come first, output-ring sites
``N..2N-1`` second; qubit 0 is the most significant bit of a basis index.
Density matrices are vectorized row-major, so ``vec(A X B) = (A kron B^T) vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..eca import RuleSet

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|
SIGMA_PLUS = SIGMA_MINUS.T.copy()
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)
KET_PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)
KET_MINUS = np.array([1, -1], dtype=complex) / np.sqrt(2)
MINUS_PLUS = np.outer(KET_MINUS, KET_PLUS.conj())  # |-><+|
IDENTITY2 = np.eye(2, dtype=complex)

RK_LOWERING_NEIGHBORHOOD = 0b110


def kron_all(factors) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for f in factors:
        out = np.kron(out, f)
    return out


def _bits(index: np.ndarray, qubits, n_qubits: int) -> np.ndarray:
    """Integer formed by the bits of ``index`` at ``qubits`` (first is MSB)."""
    val = np.zeros_like(index)
    for q in qubits:
        val = (val << 1) | ((index >> (n_qubits - 1 - q)) & 1)
    return val


@dataclass(frozen=True, eq=False)
class JumpOperator:
    """``sum_k |k><k|_controls (x) local[k]_targets`` on an ``n_qubits`` register.

    ``local`` has shape ``(2**len(controls), 2**len(targets), 2**len(targets))``;
    an operator without controls has a single leading entry.
    """

    n_qubits: int
    controls: tuple[int, ...]
    targets: tuple[int, ...]
    local: np.ndarray
    label: tuple = ()

    def __post_init__(self):
        local = np.asarray(self.local, dtype=complex)
        nt = 2 ** len(self.targets)
        if local.shape != (2 ** len(self.controls), nt, nt):
            raise ValueError(f"local operator has shape {local.shape}")
        if set(self.controls) & set(self.targets):
            raise ValueError("controls and targets overlap")
        object.__setattr__(self, "local", local)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        n, dim = self.n_qubits, self.dim
        idx = np.arange(dim)
        k = _bits(idx, self.controls, n)
        a = _bits(idx, self.targets, n)
        mask = 0
        for q in self.targets:
            mask |= 1 << (n - 1 - q)
        base = idx & ~mask
        rows, cols, vals = [], [], []
        for a_new in range(2 ** len(self.targets)):
            placed = 0
            for pos, q in enumerate(self.targets):
                bit = (a_new >> (len(self.targets) - 1 - pos)) & 1
                placed |= bit << (n - 1 - q)
            v = self.local[k, a_new, a]
            nz = v != 0
            rows.append(base[nz] | placed)
            cols.append(idx[nz])
            vals.append(v[nz])
        m = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
        )
        m.sum_duplicates()
        return m

    @classmethod
    def dense(cls, matrix, label=()) -> "JumpOperator":
        """Wrap an arbitrary dense operator on the full register."""
        matrix = np.asarray(matrix, dtype=complex)
        n = int(round(np.log2(matrix.shape[0])))
        if matrix.shape != (2**n, 2**n):
            raise ValueError("operator must act on a qubit register")
        return cls(n, (), tuple(range(n)), matrix[None], label)


def _ring_sites(i: int, n: int) -> tuple[int, int, int]:
    return ((i - 1) % n, i, (i + 1) % n)


def build_classical_jumps(rule: RuleSet, n: int) -> list[JumpOperator]:
    """Conditional overwrite of each output site with the rule output.

    For input neighborhood ``k`` the output site is lowered (``sigma_-``)
    when ``rule(k) = 0`` and raised (``sigma_+``) when ``rule(k) = 1``; a site
    already holding the rule output is annihilated, so correct
    configurations are dark and a wrong site is fixed at the full rate.
    """
    if n < 3:
        raise ValueError("rings need at least 3 sites")
    local = np.stack([SIGMA_PLUS if b else SIGMA_MINUS for b in rule.table])
    return [
        JumpOperator(2 * n, _ring_sites(i, n), (n + i,), local, label=(i, "classical"))
        for i in range(n)
    ]


def mu_local() -> np.ndarray:
    """``P0 (x) |-><+| (x) P0`` on three consecutive sites."""
    return kron_all([P0, MINUS_PLUS, P0])


def build_rk_jumps(n: int) -> list[JumpOperator]:
    """Jump operators whose dark state is the Rokhsar-Kivelson state per sector."""
    if n < 3:
        raise ValueError("rings need at least 3 sites")
    mu = mu_local()
    lower = kron_all([IDENTITY2, SIGMA_MINUS, IDENTITY2])
    local = np.stack([lower if k == RK_LOWERING_NEIGHBORHOOD else mu for k in range(8)])
    out = []
    for i in range(n):
        targets = tuple(n + s for s in _ring_sites(i, n))
        out.append(JumpOperator(2 * n, _ring_sites(i, n), targets, local, label=(i, "rk")))
    return out


@dataclass(frozen=True, eq=False)
class Generator:
    """Lindblad generator ``-i[H, .] + sum_j rate_j D[C_j]``."""

    n_qubits: int
    jumps: tuple[JumpOperator, ...] = ()
    rates: tuple[float, ...] = ()
    hamiltonian: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.jumps) != len(self.rates):
            raise ValueError("one rate per jump operator")
        if any(r < 0 for r in self.rates):
            raise ValueError("rates must be nonnegative")
        if any(j.n_qubits != self.n_qubits for j in self.jumps):
            raise ValueError("all jump operators must act on the same register")

    @classmethod
    def lindblad(cls, jumps, gamma: float = 1.0, hamiltonian=None) -> "Generator":
        jumps = tuple(jumps)
        if not jumps:
            raise ValueError("use Generator(n_qubits) for an empty generator")
        return cls(jumps[0].n_qubits, jumps, (float(gamma),) * len(jumps), hamiltonian)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def scaled(self, weight: float) -> "Generator":
        h = None if self.hamiltonian is None else weight * self.hamiltonian
        return Generator(self.n_qubits, self.jumps, tuple(weight * r for r in self.rates), h)

    def __add__(self, other: "Generator") -> "Generator":
        if other.n_qubits != self.n_qubits:
            raise ValueError("register sizes differ")
        hs = [h for h in (self.hamiltonian, other.hamiltonian) if h is not None]
        return Generator(
            self.n_qubits,
            self.jumps + other.jumps,
            self.rates + other.rates,
            sum(hs) if hs else None,
        )

    def active(self) -> "Generator":
        """Copy without zero-rate channels."""
        keep = [i for i, r in enumerate(self.rates) if r > 0]
        return Generator(
            self.n_qubits,
            tuple(self.jumps[i] for i in keep),
            tuple(self.rates[i] for i in keep),
            self.hamiltonian,
        )

    def scaled_jumps(self) -> list[sp.csr_matrix]:
        if "jumps" not in self._cache:
            self._cache["jumps"] = [
                np.sqrt(r) * j.matrix for j, r in zip(self.jumps, self.rates) if r > 0
            ]
        return self._cache["jumps"]

    def no_jump_operator(self) -> sp.csr_matrix:
        """``K = sum_j rate_j C_j^dag C_j``; the drift is ``exp(-K t / 2)`` when H = 0."""
        k = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for c in self.scaled_jumps():
            k = k + (c.conj().T @ c)
        return k.tocsr()

    def liouvillian(self) -> sp.csr_matrix:
        d = self.dim
        eye = sp.identity(d, dtype=complex, format="csr")
        sup = sp.csr_matrix((d * d, d * d), dtype=complex)
        if self.hamiltonian is not None:
            h = sp.csr_matrix(self.hamiltonian)
            sup = sup - 1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
        for c in self.scaled_jumps():
            cdc = (c.conj().T @ c).tocsr()
            sup = sup + sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, eye) - 0.5 * sp.kron(eye, cdc.T)
        return sup.tocsr()

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Schrodinger-picture action on a dense density matrix."""
        rho = np.asarray(rho, dtype=complex)
        out = np.zeros_like(rho)
        if self.hamiltonian is not None:
            h = np.asarray(self.hamiltonian)
            out += -1j * (h @ rho - rho @ h)
        for c in self.scaled_jumps():
            cr = c @ rho
            cdc = (c.conj().T @ c)
            out += (c @ cr.conj().T).conj().T - 0.5 * (cdc @ rho + (cdc @ rho.conj().T).conj().T)
        return out

    def adjoint(self, obs: np.ndarray) -> np.ndarray:
        """Heisenberg-picture action ``i[H, O] + sum C^dag O C - {C^dag C, O}/2``."""
        obs = np.asarray(obs, dtype=complex)
        out = np.zeros_like(obs)
        if self.hamiltonian is not None:
            h = np.asarray(self.hamiltonian)
            out += 1j * (h @ obs - obs @ h)
        for c in self.scaled_jumps():
            cd = c.conj().T
            cdc = cd @ c
            out += cd @ (c.T @ obs.T).T - 0.5 * (cdc @ obs + (cdc.T @ obs.T).T)
        return out


def mixed_generator(phi: float, classical: Generator, quantum: Generator) -> Generator:
    """``sin^2(phi pi/2) L_c + cos^2(phi pi/2) L_q``."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError("phi must lie in [0, 1]")
    wc = float(np.sin(phi * np.pi / 2) ** 2)
    return classical.scaled(wc) + quantum.scaled(1.0 - wc)


def cycle_generators(rule: RuleSet, n: int, gamma: float, phi: float) -> tuple[Generator, Generator]:
    """Generators for the two halves of a split cycle.

    The first half runs the mixed generator; in the second half only the
    classical part stays on, at the same weighted rate.
    """
    lc = Generator.lindblad(build_classical_jumps(rule, n), gamma)
    lq = Generator.lindblad(build_rk_jumps(n), gamma)
    first = mixed_generator(phi, lc, lq).active()
    wc = float(np.sin(phi * np.pi / 2) ** 2)
    second = lc.scaled(wc).active() if wc > 0 else Generator(2 * n)
    return first, second
