"""Compression-based unpredictability measures.

Compressed lengths are an upper bound on algorithmic complexity up to a
constant program length that cancels in every difference used here, so
that constant is never added.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

COMPRESSION_LEVEL = 9
_ZERO, _ONE = ord("0"), ord("1")


class InsufficientDataError(ValueError):
    pass


def compress_len(data: bytes) -> int:
    """Length of the zlib (DEFLATE) stream of ``data`` at level 9."""
    return len(zlib.compress(data, COMPRESSION_LEVEL))


def encode_history(history: np.ndarray, upto_t: int | None = None) -> bytes:
    """Rows ``0..upto_t`` as one ASCII '0'/'1' character per cell, row-major."""
    history = np.asarray(history)
    if history.ndim != 2:
        raise ValueError("history must be a (time, site) array")
    if upto_t is None:
        upto_t = history.shape[0] - 1
    if not 0 <= upto_t < history.shape[0]:
        raise ValueError(f"time {upto_t} outside the history")
    return (history[: upto_t + 1].astype(np.uint8) + _ZERO).tobytes()


def history_lengths(history: np.ndarray, times=None) -> np.ndarray:
    """Compressed length of every prefix ``encode_history(history, t)``.

    Rows are streamed into one compressor and each prefix is measured by
    flushing a copy, which yields the same stream as compressing the prefix
    in one shot (pinned by the test suite) at a fraction of the cost.
    """
    history = np.asarray(history)
    raw = (history.astype(np.uint8) + _ZERO).tobytes()
    n = history.shape[1]
    wanted = set(range(history.shape[0]) if times is None else times)
    comp = zlib.compressobj(COMPRESSION_LEVEL)
    emitted = 0
    out = {}
    for t in range(max(wanted) + 1):
        emitted += len(comp.compress(raw[t * n : (t + 1) * n]))
        if t in wanted:
            out[t] = emitted + len(comp.copy().flush())
    order = range(history.shape[0]) if times is None else times
    return np.array([out[t] for t in order], dtype=np.int64)


def delta_n(lengths) -> float | np.ndarray:
    """Mean absolute difference of consecutive compressed lengths.

    ``lengths`` runs over initial states along axis 0 (in Gray-code order);
    additional axes, e.g. time, are carried through.
    """
    lengths = np.asarray(lengths, dtype=float)
    if lengths.shape[0] < 2:
        raise ValueError("need at least two initial states")
    d = np.abs(np.diff(lengths, axis=0)).mean(axis=0)
    return float(d) if d.ndim == 0 else d


def fit_window(n_times: int, fractions=(0.5, 1.0)) -> slice:
    lo = int(round(fractions[0] * (n_times - 1)))
    hi = int(round(fractions[1] * (n_times - 1))) + 1
    return slice(lo, hi)


def slope_s_delta(delta, times=None, window: slice | None = None) -> float:
    """Least-squares slope of delta(t) over ``window`` (default second half)."""
    delta = np.asarray(delta, dtype=float)
    if times is None:
        times = np.arange(delta.shape[-1], dtype=float)
    times = np.asarray(times, dtype=float)
    if window is None:
        window = fit_window(delta.shape[-1])
    t, d = times[window], delta[..., window]
    if t.size < 10:
        raise ValueError("fit window must contain at least 10 points")
    tc = t - t.mean()
    denom = float(tc @ tc)
    if denom == 0.0:
        raise ValueError("degenerate fit window")
    slope = (d - d.mean(axis=-1, keepdims=True)) @ tc / denom
    return float(slope) if np.ndim(slope) == 0 else slope


def majority_string(rows: np.ndarray) -> np.ndarray:
    """Per-site majority over trajectories (axis 0); ties go to 0.

    Accepts bits or per-trajectory probabilities of reading 1.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] == 0:
        raise ValueError("empty ensemble")
    return (rows.mean(axis=0) > 0.5).astype(np.uint8)


@dataclass
class CompressionSeries:
    """Compressed lengths of ``n`` initial states and the derived slope.

    ``lengths`` has shape ``(n, T+1)``; when several Monte Carlo samples
    exist per initial state it holds their mean.
    """

    lengths: np.ndarray
    times: np.ndarray
    window: slice
    delta: np.ndarray = field(init=False)
    s_delta: float = field(init=False)
    stderr: float = float("nan")
    c0_note: str = "compressor program length constant; cancels in differences"

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=float)
        self.delta = delta_n(self.lengths)
        self.s_delta = slope_s_delta(self.delta, self.times, self.window)

    @property
    def n(self) -> int:
        return self.lengths.shape[0]


def noise_floor(sample_lengths: np.ndarray) -> np.ndarray:
    """Expected ``delta_n(t)`` of sample-mean lengths when all states agree.

    ``sample_lengths`` has shape ``(n, S, T+1)``. Each sample mean carries
    a standard error ``s_j / sqrt(S)``; for two independent Gaussian means
    ``E|m_j - m_{j+1}| = sqrt(2/pi) sqrt(v_j + v_{j+1})``. Subtracting this
    floor removes the positive bias that finite sampling adds to the slope
    in the chaotic phase, where the spread of the lengths grows with time.
    """
    sample_lengths = np.asarray(sample_lengths, dtype=float)
    s = sample_lengths.shape[1]
    if s < 2:
        return np.zeros(sample_lengths.shape[-1])
    v = sample_lengths.var(axis=1, ddof=1) / s
    return (np.sqrt(2.0 / np.pi) * np.sqrt(v[1:] + v[:-1])).mean(axis=0)


def ensemble_delta(sample_lengths: np.ndarray, corrected: bool = True) -> np.ndarray:
    """``delta_n(t)`` of the per-state sample means, optionally floor-corrected."""
    sample_lengths = np.asarray(sample_lengths, dtype=float)
    d = delta_n(sample_lengths.mean(axis=1))
    if corrected:
        d = d - noise_floor(sample_lengths)
    return d


def bootstrap_s_delta(
    sample_lengths: np.ndarray,
    n_boot: int = 200,
    seed: int = 0,
    corrected: bool = True,
    window: slice | None = None,
) -> np.ndarray:
    """Slopes from resampling the Monte Carlo samples with replacement.

    One index vector is drawn per replicate and applied to every initial
    state, so samples sharing an index stay paired.
    """
    sample_lengths = np.asarray(sample_lengths, dtype=float)
    s = sample_lengths.shape[1]
    rng = np.random.default_rng(seed)
    out = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, s, s)
        out[b] = slope_s_delta(ensemble_delta(sample_lengths[:, idx], corrected), window=window)
    return out


@dataclass
class SlopeEstimate:
    s_delta: float
    stderr: float
    window: slice
    corrected: bool

    @property
    def significance(self) -> float:
        return self.s_delta / self.stderr if self.stderr > 0 else float("inf") * np.sign(self.s_delta)

    def summary(self) -> dict:
        return {
            "s_delta": self.s_delta,
            "stderr": self.stderr,
            "fit_window": [self.window.start, self.window.stop - 1],
            "compressor_level": COMPRESSION_LEVEL,
            "noise_floor_corrected": self.corrected,
        }


def estimate_s_delta(
    sample_lengths: np.ndarray,
    n_boot: int = 200,
    seed: int = 0,
    corrected: bool = True,
    fractions=(0.5, 1.0),
) -> SlopeEstimate:
    """Slope of ``delta_n`` with a bootstrap standard error.

    ``sample_lengths`` has shape ``(n, S, T+1)``; with ``S = 1`` the error
    is zero and no correction applies.
    """
    sample_lengths = np.asarray(sample_lengths, dtype=float)
    if sample_lengths.ndim != 3:
        raise ValueError("expected (states, samples, times) lengths")
    window = fit_window(sample_lengths.shape[-1], fractions)
    corrected = corrected and sample_lengths.shape[1] > 1
    s = slope_s_delta(ensemble_delta(sample_lengths, corrected), window=window)
    if sample_lengths.shape[1] > 1 and n_boot > 1:
        err = float(np.std(bootstrap_s_delta(sample_lengths, n_boot, seed, corrected, window), ddof=1))
    else:
        err = 0.0
    return SlopeEstimate(s, err, window, corrected)


def classical_sample_lengths(
    rule,
    n_sites: int,
    sched,
    n_states: int,
    steps: int,
    samples: int,
    master_seed: int,
    first_state: int = 1,
) -> np.ndarray:
    """Compressed history lengths, shape ``(n_states, samples, steps+1)``.

    Initial states are consecutive Gray-code words starting at
    ``first_state`` (the default skips the quiescent all-zero ring).
    Trajectory ``s`` of state ``j`` uses stream ``j * samples + s`` of
    ``master_seed``.
    """
    from .eca import gray_code_configs
    from .stochastic import run_ensemble

    out = np.empty((n_states, samples, steps + 1), dtype=np.int64)
    for j, c0 in enumerate(gray_code_configs(first_state, n_states, n_sites)):
        hist = run_ensemble(c0, rule, sched, steps, samples, master_seed, first_index=j * samples)
        for s in range(samples):
            out[j, s] = history_lengths(hist[s])
    return out


def transition_point(x, s, fraction: float = 0.5) -> float:
    """Onset of a slope curve ``s(x)``.

    The last upward crossing of ``fraction`` times the largest slope,
    linearly interpolated between grid points; ``nan`` if the curve never
    rises above its starting value.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    order = np.argsort(x)
    x, s = x[order], s[order]
    level = fraction * s.max()
    if s.max() <= 0 or s[0] >= level:
        return float("nan")
    k = int(np.flatnonzero(s < level)[-1])
    if k == len(x) - 1:
        return float("nan")
    return float(x[k] + (level - s[k]) * (x[k + 1] - x[k]) / (s[k + 1] - s[k]))


@dataclass
class FssResult:
    transition: float
    stderr: float
    sizes: tuple
    per_size: tuple
    slope: float


def fss_local_maxima(points, fraction: float = 0.5) -> FssResult:
    """Extrapolate the transition from sizes where the slope is a local maximum.

    ``points`` maps each size ``N`` to a ``(x, s)`` pair: the control
    parameter grid and the slope measured on it. A size is a local maximum
    when its plateau slope (at the largest ``x``) exceeds both neighbouring
    sizes; the first and last size have only one neighbour and are excluded.
    The per-size onsets are fitted linearly in ``1/N`` and the intercept is
    returned with its ordinary least-squares standard error.
    """
    sizes = sorted(points)
    plateau = {}
    for n in sizes:
        x, s = (np.asarray(a, dtype=float) for a in points[n])
        plateau[n] = s[np.argmax(x)]
    maxima = [
        sizes[i]
        for i in range(1, len(sizes) - 1)
        if plateau[sizes[i]] > plateau[sizes[i - 1]] and plateau[sizes[i]] > plateau[sizes[i + 1]]
    ]
    onsets = [transition_point(*points[n], fraction=fraction) for n in maxima]
    keep = [(n, o) for n, o in zip(maxima, onsets) if np.isfinite(o)]
    if len(keep) < 3:
        raise InsufficientDataError(f"need at least 3 local-maximum sizes, found {len(keep)}")
    inv = np.array([1.0 / n for n, _ in keep])
    y = np.array([o for _, o in keep])
    a = np.column_stack([np.ones_like(inv), inv])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    dof = len(y) - 2
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(a.T @ a)
    return FssResult(
        float(coef[0]),
        float(np.sqrt(cov[0, 0])),
        tuple(n for n, _ in keep),
        tuple(y.tolist()),
        float(coef[1]),
    )


def majority_lengths(marginals: np.ndarray, index=None) -> np.ndarray:
    """Compressed lengths of majority-vote histories.

    ``marginals`` has shape ``(states, trajectories, times, sites)`` and
    holds P(1) per trajectory; ``index`` optionally resamples trajectories.
    """
    marginals = np.asarray(marginals)
    if index is not None:
        marginals = marginals[:, index]
    hist = (marginals.mean(axis=1) > 0.5).astype(np.uint8)
    return np.array([history_lengths(h) for h in hist])


def estimate_majority_s_delta(
    marginals: np.ndarray, n_boot: int = 200, seed: int = 0, fractions=(0.5, 1.0)
) -> SlopeEstimate:
    """S_delta of majority-vote histories with a trajectory bootstrap error."""
    marginals = np.asarray(marginals)
    window = fit_window(marginals.shape[2], fractions)
    s = slope_s_delta(delta_n(majority_lengths(marginals)), window=window)
    n_traj = marginals.shape[1]
    if n_traj < 2 or n_boot < 2:
        return SlopeEstimate(s, 0.0, window, False)
    rng = np.random.default_rng(seed)
    boot = [
        slope_s_delta(delta_n(majority_lengths(marginals, rng.integers(0, n_traj, n_traj))), window=window)
        for _ in range(n_boot)
    ]
    return SlopeEstimate(s, float(np.std(boot, ddof=1)), window, False)
