"""Classical two-ring embedding of an elementary rule.

The output ring relaxes toward the rule applied to the frozen input ring;
every output site carries a Poisson clock and is overwritten with the rule
output whenever it fires. After a cycle time ``t_c`` the two rings swap
roles. Because the input is frozen, repeated firings are idempotent and the
cycle reduces to one Bernoulli draw per site with miss probability
``exp(-rate * t_c)``; the event-driven sampler is kept as the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eca import RuleSet, as_config, step


@dataclass(frozen=True)
class CycleSchedule:
    gamma: float
    t_c: float
    phi: float = 1.0
    split_half: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.t_c > 0:
            raise ValueError("cycle time must be positive")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")

    @property
    def classical_weight(self) -> float:
        return float(np.sin(self.phi * np.pi / 2) ** 2)

    @property
    def quantum_weight(self) -> float:
        return float(np.cos(self.phi * np.pi / 2) ** 2)

    @property
    def classical_rate(self) -> float:
        # active with the same rate during both halves of a split cycle
        return self.gamma * self.classical_weight

    @property
    def p_miss(self) -> float:
        return float(np.exp(-self.classical_rate * self.t_c))


@dataclass(frozen=True)
class RingPair:
    ring_a: np.ndarray
    ring_b: np.ndarray
    input_is_a: bool = True

    def __post_init__(self):
        a = as_config(self.ring_a)
        b = as_config(self.ring_b)
        if a.shape != b.shape:
            raise ValueError("both rings must have the same number of sites")
        object.__setattr__(self, "ring_a", a)
        object.__setattr__(self, "ring_b", b)

    @property
    def n(self) -> int:
        return self.ring_a.shape[-1]

    @property
    def input_ring(self) -> np.ndarray:
        return self.ring_a if self.input_is_a else self.ring_b

    @property
    def output_ring(self) -> np.ndarray:
        return self.ring_b if self.input_is_a else self.ring_a

    def with_output(self, output: np.ndarray) -> "RingPair":
        """New pair with ``output`` written and the roles swapped."""
        if self.input_is_a:
            return RingPair(self.ring_a, output, input_is_a=False)
        return RingPair(output, self.ring_b, input_is_a=True)

    @classmethod
    def from_initial(cls, config) -> "RingPair":
        """Start state: the hidden ring is a copy of the initial ring."""
        config = as_config(config)
        return cls(config.copy(), config.copy(), input_is_a=True)


def bernoulli_update(
    rule: RuleSet, inputs: np.ndarray, outputs: np.ndarray, p_miss: float, uniforms: np.ndarray
) -> np.ndarray:
    """Batched fast path; ``uniforms`` holds one U(0,1) draw per output site."""
    target = step(rule, inputs)
    return np.where(uniforms < p_miss, outputs, target).astype(np.uint8)


def gillespie_update(
    rule: RuleSet,
    inputs: np.ndarray,
    outputs: np.ndarray,
    rate: float,
    duration: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Event-driven update of a batch of ``(S, N)`` output rings.

    N identical channels of ``rate`` each: waiting times are exponential
    with the total rate, the firing site is uniform, and the fired site is
    overwritten with the rule output of its (frozen) input neighborhood.
    """
    inputs = np.atleast_2d(inputs)
    out = np.array(np.atleast_2d(outputs), dtype=np.uint8, copy=True)
    n_samples, n = out.shape
    if rate <= 0:
        return out
    target = step(rule, inputs)
    total = rate * n
    clock = np.zeros(n_samples)
    live = np.arange(n_samples)
    while live.size:
        clock[live] += rng.exponential(1.0 / total, size=live.size)
        live = live[clock[live] < duration]
        if not live.size:
            break
        site = rng.integers(0, n, size=live.size)
        out[live, site] = target[live, site]
    return out


def sample_cycle_bernoulli(
    state: RingPair, rule: RuleSet, p_miss: float, rng: np.random.Generator
) -> RingPair:
    if not 0.0 <= p_miss <= 1.0:
        raise ValueError("p_miss must be a probability")
    u = rng.random(state.n)
    new = bernoulli_update(rule, state.input_ring, state.output_ring, p_miss, u)
    return state.with_output(new)


def sample_cycle_gillespie(
    state: RingPair, rule: RuleSet, sched: CycleSchedule, rng: np.random.Generator
) -> RingPair:
    new = gillespie_update(
        rule, state.input_ring, state.output_ring, sched.classical_rate, sched.t_c, rng
    )[0]
    return state.with_output(new)


def run_trajectory(
    c0, rule: RuleSet, sched: CycleSchedule, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Space-time history of one classical trajectory, shape ``(steps+1, N)``.

    Row ``t`` is the input ring after ``t`` cycles. All randomness for the
    trajectory is drawn up front as a ``(steps, N)`` block so that the
    batched ensemble runner reproduces it bit for bit.
    """
    if steps < 1:
        raise ValueError("need at least one cycle")
    c0 = as_config(c0)
    return _evolve_batch(c0[None], rule, sched.p_miss, rng.random((steps, c0.size))[None])[0]


def trajectory_rngs(master_seed: int, indices) -> list[np.random.Generator]:
    """Independent generators keyed by (master seed, trajectory index)."""
    return [np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(int(i),))) for i in indices]


def run_ensemble(
    c0,
    rule: RuleSet,
    sched: CycleSchedule,
    steps: int,
    n_traj: int,
    master_seed: int,
    first_index: int = 0,
) -> np.ndarray:
    """Histories of ``n_traj`` trajectories from one start, ``(n_traj, steps+1, N)``.

    Trajectory ``k`` uses the generator for index ``first_index + k``, so any
    slice of an ensemble can be recomputed on its own.
    """
    c0 = as_config(c0)
    rngs = trajectory_rngs(master_seed, range(first_index, first_index + n_traj))
    u = np.stack([g.random((steps, c0.size)) for g in rngs])
    starts = np.broadcast_to(c0, (n_traj, c0.size))
    return _evolve_batch(starts, rule, sched.p_miss, u)


def _evolve_batch(starts, rule, p_miss, uniforms):
    n_traj, steps, n = uniforms.shape
    hist = np.empty((n_traj, steps + 1, n), dtype=np.uint8)
    hist[:, 0] = starts
    inp = np.array(starts, dtype=np.uint8)
    out = inp.copy()
    for t in range(steps):
        new = bernoulli_update(rule, inp, out, p_miss, uniforms[:, t])
        inp, out = new, inp
        hist[:, t + 1] = inp
    return hist
