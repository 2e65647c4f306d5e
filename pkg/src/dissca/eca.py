"""Elementary cellular automata on periodic rings.

Configurations are ``uint8`` numpy arrays whose last axis is the ring; any
leading axes are treated as a batch, which is how ensembles are stepped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# neighborhood (left, center, right) -> integer k = 4*left + 2*center + right
NEIGHBORHOODS = tuple((k >> 2 & 1, k >> 1 & 1, k & 1) for k in range(8))


@dataclass(frozen=True)
class RuleSet:
    """Lookup table of an elementary rule.

    ``table[k]`` is the new center bit for neighborhood ``k``; the rule
    number is the table read from ``k = 7`` (111) down to ``k = 0`` (000).
    """

    number: int
    table: tuple[int, ...]

    def __post_init__(self):
        if len(self.table) != 8 or any(b not in (0, 1) for b in self.table):
            raise ValueError("table must hold 8 binary outputs")
        if sum(b << k for k, b in enumerate(self.table)) != self.number:
            raise ValueError("rule number does not match its table")

    @property
    def lut(self) -> np.ndarray:
        return np.array(self.table, dtype=np.uint8)

    def outputs_msb_first(self) -> tuple[int, ...]:
        """Outputs in the conventional column order 111, 110, ..., 000."""
        return self.table[::-1]

    def __call__(self, left: int, center: int, right: int) -> int:
        return self.table[4 * left + 2 * center + right]


def rule_from_number(number: int) -> RuleSet:
    if isinstance(number, bool) or not isinstance(number, (int, np.integer)):
        raise TypeError("rule number must be an integer")
    if not 0 <= number <= 255:
        raise ValueError(f"rule number must lie in [0, 255], got {number}")
    number = int(number)
    return RuleSet(number, tuple((number >> k) & 1 for k in range(8)))


def complement_rule(rule: RuleSet) -> RuleSet:
    """Conjugate a rule by the global bit flip (inputs and outputs inverted)."""
    table = tuple(1 - rule.table[7 - k] for k in range(8))
    return RuleSet(sum(b << k for k, b in enumerate(table)), table)


def as_config(bits, n: int | None = None) -> np.ndarray:
    """Validate and convert ``bits`` (sequence or string of 0/1) to a config."""
    if isinstance(bits, str):
        bits = [int(ch) for ch in bits]
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim < 1:
        raise ValueError("a configuration needs at least one axis")
    if np.any(arr > 1):
        raise ValueError("configurations are binary")
    if arr.shape[-1] < 3:
        raise ValueError("rings need at least 3 sites")
    if n is not None and arr.shape[-1] != n:
        raise ValueError(f"expected {n} sites, got {arr.shape[-1]}")
    return arr


def neighborhood_index(config: np.ndarray) -> np.ndarray:
    """Integer neighborhood code of every site, with periodic wrap."""
    c = config.astype(np.uint8, copy=False)
    return (np.roll(c, 1, axis=-1) << 2) | (c << 1) | np.roll(c, -1, axis=-1)


def step(rule: RuleSet, config: np.ndarray) -> np.ndarray:
    """One synchronous update of every site; batches along leading axes."""
    config = as_config(config)
    return rule.lut[neighborhood_index(config)]


def evolve(rule: RuleSet, config: np.ndarray, steps: int) -> np.ndarray:
    """Noise-free orbit as a ``(steps + 1, N)`` space-time array."""
    config = as_config(config)
    rows = np.empty((steps + 1,) + config.shape, dtype=np.uint8)
    rows[0] = config
    for t in range(steps):
        rows[t + 1] = step(rule, rows[t])
    return rows


def gray_code_config(j: int, n: int) -> np.ndarray:
    """``j``-th reflected binary Gray code word, most significant bit first."""
    if n < 1:
        raise ValueError("width must be positive")
    if not 0 <= j < 2**n:
        raise ValueError(f"Gray index {j} outside [0, 2**{n})")
    g = j ^ (j >> 1)
    return np.array([(g >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.uint8)


def gray_code_configs(start: int, count: int, n: int) -> np.ndarray:
    """Stack of ``count`` consecutive Gray code configurations."""
    return np.stack([gray_code_config(j, n) for j in range(start, start + count)])


def single_seed(n: int, site: int | None = None) -> np.ndarray:
    """All-zero ring with a single 1 (at the center unless ``site`` is given)."""
    c = np.zeros(n, dtype=np.uint8)
    c[n // 2 if site is None else site] = 1
    return c
