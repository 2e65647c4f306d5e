"""Run configuration and deterministic artifact writers.

Configs are flat ``key = value`` text with units spelled out in the key
names. Every artifact carries the package version, the SHA-256 of the
canonical config and the master seed; nothing time-dependent is written,
so identical inputs give byte-identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__

OUTPUT_DIR_ENV = "DISSCA_OUTPUT_DIR"
THREADS_ENV = "DISSCA_MAX_THREADS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Parameters shared by all subcommands.

    ``tc_time_list`` holds cycle durations; ``inf`` requests the noise-free
    limit. Lists must be nonempty.
    """

    rule: int = 110
    sites: tuple = (17,)
    gamma_per_time: float = 1.0
    tc_time_list: tuple = (4.0, 10.0)
    phi_list: tuple = (1.0,)
    initial_states: int = 20
    cycles: int = 150
    trajectories: int = 50
    master_seed: int = 0
    output_dir: str = "dissca-out"
    fit_window_fractions: tuple = (0.5, 1.0)
    bootstrap_resamples: int = 200
    noise_floor_correction: bool = True
    qubit_cap: int = 12
    late_cycles: int = 30
    tau_time: float = 0.5
    depth: int = 3
    vqs_steps_cycles: int = 2
    rail_symmetric: bool = False
    optimizer_sweeps: int = 4
    optimizer_maxiter: int = 100
    initial_config: str = "single_seed"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple) and len(v) == 0:
                raise ConfigError(f"{f.name} must be nonempty")
        if not 0 <= self.rule <= 255:
            raise ConfigError("rule must lie in 0..255")
        if any(n < 3 for n in self.sites):
            raise ConfigError("rings need at least 3 sites")
        if not self.gamma_per_time > 0:
            raise ConfigError("gamma_per_time must be positive")
        if any(not t > 0 for t in self.tc_time_list):
            raise ConfigError("cycle times must be positive")
        if any(not 0.0 <= p <= 1.0 for p in self.phi_list):
            raise ConfigError("phi values must lie in [0, 1]")
        lo, hi = self.fit_window_fractions if len(self.fit_window_fractions) == 2 else (None, None)
        if lo is None or not 0.0 <= lo < hi <= 1.0:
            raise ConfigError("fit_window_fractions must be two increasing fractions in [0, 1]")
        for name in ("initial_states", "cycles", "trajectories", "depth", "vqs_steps_cycles"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.initial_states < 2:
            raise ConfigError("initial_states must be at least 2")

    def canonical(self) -> str:
        """Sorted ``key = value`` text of every field except the output dir."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name == "output_dir":
                continue
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def metadata(self) -> dict:
        return {"version": __version__, "config_sha256": self.config_hash, "master_seed": self.master_seed}

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(kind, text: str):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


_LIST_KINDS = {
    "sites": int,
    "tc_time_list": float,
    "phi_list": float,
    "fit_window_fractions": float,
}


def parse_value(key: str, text: str):
    """Typed value of ``key`` from its textual form."""
    defaults = {f.name: f.default for f in fields(RunConfig)}
    if key not in defaults:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if key in _LIST_KINDS:
            items = [s for s in text.split(",") if s.strip()]
            return tuple(_parse_scalar(_LIST_KINDS[key], s) for s in items)
        return _parse_scalar(type(defaults[key]), text)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def read_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, value)
    return values


def load_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults, then the config file, then ``overrides``, then the env override."""
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        values.update(read_config_text(Path(path).read_text()))
    values.update(overrides or {})
    if env.get(OUTPUT_DIR_ENV):
        values["output_dir"] = env[OUTPUT_DIR_ENV]
    return RunConfig(**values)


def thread_cap(env=None) -> int | None:
    env = os.environ if env is None else env
    value = env.get(THREADS_ENV)
    if not value:
        return None
    cap = int(value)
    if cap < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer")
    return cap


# -- writers ---------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        if any(c in v for c in ",\n\"#"):
            raise ValueError(f"unsafe CSV text {v!r}")
        return v
    raise TypeError(f"unsupported CSV value {type(v).__name__}")


def _meta_line(meta: dict) -> str:
    return "# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta))


def write_csv(path, columns, rows, meta: dict) -> Path:
    """CSV with one metadata comment line, a header and validated rows."""
    path = Path(path)
    columns = list(columns)
    out = [_meta_line(meta), ",".join(columns)]
    for i, row in enumerate(rows):
        row = list(row)
        if len(row) != len(columns):
            raise ValueError(f"row {i} has {len(row)} fields, expected {len(columns)}")
        out.append(",".join(_cell(v) for v in row))
    path.write_text("\n".join(out) + "\n")
    return path


def read_csv(path):
    """``(meta, columns, rows)`` with every cell as text."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError("missing metadata line")
    meta = dict(item.split("=", 1) for item in lines[0][2:].split())
    columns = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:]]
    for i, row in enumerate(rows):
        if len(row) != len(columns):
            raise ValueError(f"row {i} has {len(row)} fields, expected {len(columns)}")
    return meta, columns, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path, payload: dict, meta: dict) -> Path:
    path = Path(path)
    doc = {"meta": meta, **_jsonable(payload)}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")
    return path


def write_pbm(path, history: np.ndarray, meta: dict) -> Path:
    """Plain (P1) bitmap, one row per time step; 1 is a black pixel."""
    history = np.asarray(history)
    if history.ndim != 2 or not np.isin(history, (0, 1)).all():
        raise ValueError("history must be a 2D array of bits")
    h, w = history.shape
    lines = ["P1", _meta_line(meta), f"{w} {h}"]
    lines += [" ".join("1" if b else "0" for b in row) for row in history]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def read_pbm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens += line.split("#", 1)[0].split()
    if not tokens or tokens[0] != "P1":
        raise ValueError("not a plain PBM file")
    w, h = int(tokens[1]), int(tokens[2])
    bits = np.array([int(t) for t in tokens[3:]], dtype=np.uint8)
    if bits.size != w * h:
        raise ValueError("pixel count does not match the header")
    return bits.reshape(h, w)


def packed_hex(row: np.ndarray) -> str:
    """Hex of the MSB-first packed bits (zero-padded to whole bytes)."""
    return np.packbits(np.asarray(row, dtype=np.uint8)).tobytes().hex()


def unpack_hex(text: str, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes.fromhex(text), dtype=np.uint8))[:n]


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path
