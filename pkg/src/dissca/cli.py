"""Command-line front end.

Each subcommand reads a flat ``key = value`` config (see ``dissca.io``),
lets flags override single keys and writes data files only: CSV with a
metadata comment line, JSON summaries and PBM space-time diagrams.
``DISSCA_OUTPUT_DIR`` overrides the output directory and
``DISSCA_MAX_THREADS`` caps the number of worker processes and BLAS threads.
"""

from __future__ import annotations

import os
import sys

_cap = os.environ.get("DISSCA_MAX_THREADS")
if _cap:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _cap)

import argparse  # noqa: E402
import logging  # noqa: E402
import math  # noqa: E402
import warnings  # noqa: E402
from concurrent.futures import ProcessPoolExecutor  # noqa: E402
from dataclasses import fields  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import io  # noqa: E402

log = logging.getLogger("dissca")

# profile defaults per subcommand, applied before the config file
COMMAND_DEFAULTS = {
    "classical-sweep": {},
    "phase-diagram": {"sites": (5,), "tc_time_list": (10.0,), "phi_list": (0.0, 0.6, 1.0)},
    "vqs-bench": {"rule": 137, "sites": (3,), "tc_time_list": (10.0,), "phi_list": (0.5,)},
    "rk-verify": {"sites": (3, 4, 5, 6, 7)},
    "eca-run": {"sites": (101,), "cycles": 100},
}


def parallel_map(fn, tasks, workers: int):
    """``[fn(t) for t in tasks]`` in task order, optionally over processes."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _gtc(cfg, t_c: float) -> float:
    return cfg.gamma_per_time * t_c


# -- classical sweep -------------------------------------------------------


def _sweep_point(args):
    cfg, n, t_c = args
    from .complexity import classical_sample_lengths, ensemble_delta, estimate_s_delta, noise_floor
    from .eca import rule_from_number
    from .stochastic import CycleSchedule

    sched = CycleSchedule(cfg.gamma_per_time, t_c)
    lengths = classical_sample_lengths(
        rule_from_number(cfg.rule), n, sched, cfg.initial_states, cfg.cycles, cfg.trajectories, cfg.master_seed
    )
    est = estimate_s_delta(
        lengths, cfg.bootstrap_resamples, cfg.master_seed, cfg.noise_floor_correction, cfg.fit_window_fractions
    )
    floor = noise_floor(lengths)
    return {
        "n": n,
        "t_c": t_c,
        "mean_lengths": lengths.mean(axis=1),
        "delta_raw": ensemble_delta(lengths, corrected=False),
        "noise_floor": floor,
        "estimate": est,
    }


def cmd_classical_sweep(cfg: io.RunConfig, workers: int = 1) -> dict:
    """S_delta over every (N, t_c) pair plus the finite-size extrapolation."""
    from .complexity import InsufficientDataError, fss_local_maxima
    from .eca import rule_from_number
    from .stochastic import run_ensemble, CycleSchedule

    out = io.ensure_dir(cfg.output_dir)
    meta = cfg.metadata()
    tasks = [(cfg, n, t_c) for n in cfg.sites for t_c in cfg.tc_time_list]
    results = parallel_map(_sweep_point, tasks, workers)

    length_rows, delta_rows, sweep_rows, points = [], [], [], []
    for r in results:
        x = _gtc(cfg, r["t_c"])
        for j, row in enumerate(r["mean_lengths"]):
            length_rows += [(r["n"], x, j, t, float(c)) for t, c in enumerate(row)]
        for t, (d, f) in enumerate(zip(r["delta_raw"], r["noise_floor"])):
            delta_rows.append((r["n"], x, t, float(d), float(f), float(d - f)))
        est = r["estimate"]
        sweep_rows.append((r["n"], x, est.s_delta, est.stderr, float(est.significance)))
        points.append({"n_sites": r["n"], "gamma_t_c": x, **est.summary()})

    io.write_csv(out / "lengths.csv", ("n_sites", "gamma_t_c", "j", "t", "c_c"), length_rows, meta)
    io.write_csv(
        out / "delta.csv",
        ("n_sites", "gamma_t_c", "t", "delta", "noise_floor", "delta_corrected"),
        delta_rows,
        meta,
    )
    io.write_csv(out / "sweep.csv", ("n_sites", "gamma_t_c", "s_delta", "stderr", "significance"), sweep_rows, meta)

    by_size = {}
    for r in results:
        if math.isfinite(r["t_c"]):
            by_size.setdefault(r["n"], []).append((_gtc(cfg, r["t_c"]), r["estimate"].s_delta))
    fss = {"status": "skipped", "reason": "needs at least 3 sizes with at least 3 cycle times"}
    curves = {n: tuple(np.array(sorted(v)).T) for n, v in by_size.items() if len(v) >= 3}
    if len(curves) >= 3:
        try:
            res = fss_local_maxima(curves)
            fss = {
                "status": "ok",
                "transition_gamma_t_c": res.transition,
                "stderr": res.stderr,
                "maxima_sizes": list(res.sizes),
                "onsets": [float(v) for v in res.per_size],
                "slope_per_inverse_size": res.slope,
            }
        except InsufficientDataError as exc:
            fss = {"status": "insufficient", "reason": str(exc)}

    if cfg.trajectories > 0:
        # raw histories of the first initial state, same streams as the sweep
        from .eca import gray_code_config

        c0 = gray_code_config(1, cfg.sites[0])
        sched = CycleSchedule(cfg.gamma_per_time, cfg.tc_time_list[0])
        hist = run_ensemble(c0, rule_from_number(cfg.rule), sched, cfg.cycles, cfg.trajectories, cfg.master_seed)
        rows = [(k, t, io.packed_hex(row)) for k in range(hist.shape[0]) for t, row in enumerate(hist[k])]
        io.write_csv(out / "ensemble.csv", ("trajectory", "time", "packed_row"), rows, meta)

    summary = {
        "command": "classical-sweep",
        "rule": cfg.rule,
        "hidden_ring_init": "copy_of_initial",
        "initial_states": "gray_code_from_index_1",
        "points": points,
        "finite_size_scaling": fss,
    }
    io.write_json(out / "summary.json", summary, meta)
    return summary


# -- quantum phase diagram -------------------------------------------------


def _phase_point(args):
    cfg, n, t_c, phi = args
    from .complexity import estimate_majority_s_delta
    from .eca import rule_from_number
    from .liouville.states import ensemble_density, negativity
    from .liouville.trajectories import run_quantum_ensemble

    late = min(cfg.late_cycles, cfg.cycles)
    ens = run_quantum_ensemble(
        rule_from_number(cfg.rule), n, cfg.gamma_per_time, t_c, phi, cfg.initial_states, cfg.cycles,
        cfg.trajectories, cfg.master_seed, keep_states_for=(0,), keep_last=late,
    )
    est = estimate_majority_s_delta(ens.marginals, cfg.bootstrap_resamples, cfg.master_seed, cfg.fit_window_fractions)
    states = ens.late_states[0]
    negs = np.array([negativity(ensemble_density(states[:, k]), range(n)) for k in range(states.shape[1])])
    p1 = ens.marginals[0].mean(axis=0)
    return {"n": n, "t_c": t_c, "phi": phi, "estimate": est, "negativity": negs, "p1": p1, "jumps": ens.jumps}


def cmd_phase_diagram(cfg: io.RunConfig, workers: int = 1) -> dict:
    """Majority-string S_delta and late-time negativity over a (t_c, phi) grid."""
    for n in cfg.sites:
        if 2 * n > cfg.qubit_cap:
            raise io.ConfigError(
                f"{2 * n} qubits exceed qubit_cap = {cfg.qubit_cap}; lower sites or raise qubit_cap "
                f"(memory grows as 4^N per trajectory step)"
            )
    out = io.ensure_dir(cfg.output_dir)
    meta = cfg.metadata()
    tasks = [(cfg, n, t_c, phi) for n in cfg.sites for t_c in cfg.tc_time_list for phi in cfg.phi_list]
    results = parallel_map(_phase_point, tasks, workers)

    grid, snaps, neg_rows, points = [], [], [], []
    first_late = cfg.cycles - min(cfg.late_cycles, cfg.cycles) + 1
    for r in results:
        x, est, negs = _gtc(cfg, r["t_c"]), r["estimate"], r["negativity"]
        grid.append((r["n"], x, r["phi"], est.s_delta, est.stderr, float(negs.mean()), float(negs.min())))
        for t, row in enumerate(r["p1"]):
            snaps += [(r["n"], x, r["phi"], t, i, int(p > 0.5), float(p)) for i, p in enumerate(row)]
        neg_rows += [(r["n"], x, r["phi"], first_late + k, float(v)) for k, v in enumerate(negs)]
        points.append(
            {"n_sites": r["n"], "gamma_t_c": x, "phi": r["phi"], "negativity_mean": float(negs.mean()),
             "jumps": r["jumps"], **est.summary()}
        )
    io.write_csv(
        out / "phase.csv",
        ("n_sites", "gamma_t_c", "phi", "s_delta", "stderr", "negativity", "negativity_min"),
        grid,
        meta,
    )
    io.write_csv(
        out / "snapshots.csv", ("n_sites", "gamma_t_c", "phi", "cycle", "site", "majority_bit", "p1"), snaps, meta
    )
    io.write_csv(out / "negativity.csv", ("n_sites", "gamma_t_c", "phi", "cycle", "negativity"), neg_rows, meta)
    summary = {
        "command": "phase-diagram",
        "rule": cfg.rule,
        "snapshot": "t_c/2 with split cycle; cycle end at phi=1",
        "negativity_cut": "input ring",
        "points": points,
    }
    io.write_json(out / "summary.json", summary, meta)
    return summary


# -- VQS benchmark ---------------------------------------------------------


def cmd_vqs_bench(cfg: io.RunConfig, workers: int = 1) -> dict:
    """Variational timesteps against the exact propagator."""
    from .vqs import BenchmarkConfig, run_benchmark

    out = io.ensure_dir(cfg.output_dir)
    meta = cfg.metadata()
    bc = BenchmarkConfig(
        rule=cfg.rule, n=cfg.sites[0], phi=cfg.phi_list[0], gamma=cfg.gamma_per_time, t_c=cfg.tc_time_list[0],
        tau=cfg.tau_time, cycles=cfg.vqs_steps_cycles, depth=cfg.depth, rail_symmetric=cfg.rail_symmetric,
        seed=cfg.master_seed, max_sweeps=cfg.optimizer_sweeps, maxiter=cfg.optimizer_maxiter,
    )
    rows, thetas = run_benchmark(bc, progress=lambda r: log.info("step %d eps=%.4f", r.step, r.epsilon))
    io.write_csv(
        out / "vqs.csv",
        ("timestep", "time", "f_v", "epsilon", "negativity_v", "negativity_exact", "converged"),
        [(r.step, r.time, r.f_v, r.epsilon, r.negativity_v, r.negativity_exact, r.converged) for r in rows],
        meta,
    )
    io.write_json(out / "vqs_params.json", {"steps": thetas}, meta)
    summary = {
        "command": "vqs-bench",
        "max_epsilon": max(r.epsilon for r in rows),
        "max_negativity_gap": max(abs(r.negativity_v - r.negativity_exact) for r in rows),
        "unconverged_steps": [r.step for r in rows if not r.converged],
        "config": {f.name: getattr(bc, f.name) for f in fields(bc)},
    }
    io.write_json(out / "summary.json", summary, meta)
    return summary


# -- RK checks -------------------------------------------------------------


def cmd_rk_verify(cfg: io.RunConfig, workers: int = 1) -> dict:
    """Dark-state residuals, hard-dimer counts and the N=3 steady state of L_q."""
    from .liouville import Generator, build_rk_jumps, build_rk_state, negativity, steady_state
    from .liouville.states import basis_state, hard_dimer_count, mu_operator, projector

    out = io.ensure_dir(cfg.output_dir)
    meta = cfg.metadata()
    rows = []
    for n in cfg.sites:
        rk = build_rk_state(n)
        residual = max(float(np.linalg.norm(mu_operator(i, n) @ rk.state)) for i in range(n))
        rows.append((n, rk.z, hard_dimer_count(n), residual))
    io.write_csv(out / "dark_state.csv", ("n_sites", "z", "hard_dimer_count", "max_residual"), rows, meta)

    n = 3
    ss = steady_state(Generator.lindblad(build_rk_jumps(n), cfg.gamma_per_time))
    plus = np.ones(2**n) / np.sqrt(2**n)
    rho = ss.from_initial(projector(np.kron(plus, basis_state([0] * n))))
    np.save(out / "steady_state.npy", rho, allow_pickle=False)
    header = {
        "dimension": int(rho.shape[0]),
        "ordering": "input qubits 0..N-1 then output qubits, row-major, qubit 0 most significant",
        "initial_state": "|+>^N (x) |0>^N",
        "null_space_tolerance": 1e-9,
        "null_dim": ss.null_dim,
        "negativity_input_cut": negativity(rho, range(n)),
    }
    io.write_json(out / "steady_state.json", header, meta)
    summary = {"command": "rk-verify", "dark_state": [list(r) for r in rows], "steady_state": header}
    io.write_json(out / "summary.json", summary, meta)
    return summary


# -- noise-free ECA --------------------------------------------------------


def _initial_config(spec: str, n: int) -> np.ndarray:
    from .eca import gray_code_config, single_seed

    if spec == "single_seed":
        return single_seed(n)
    if spec.startswith("gray:"):
        return gray_code_config(int(spec[5:]), n)
    if set(spec) <= {"0", "1"} and len(spec) == n:
        return np.array([int(c) for c in spec], dtype=np.uint8)
    raise io.ConfigError("initial_config must be single_seed, gray:<index> or an N-character bit string")


def cmd_eca_run(cfg: io.RunConfig, workers: int = 1) -> dict:
    """Noise-free space-time diagrams and their compressed prefix lengths."""
    from .complexity import COMPRESSION_LEVEL, history_lengths
    from .eca import evolve, rule_from_number

    out = io.ensure_dir(cfg.output_dir)
    meta = cfg.metadata()
    summary = {"command": "eca-run", "rule": cfg.rule, "compressor_level": COMPRESSION_LEVEL, "runs": []}
    for n in cfg.sites:
        hist = evolve(rule_from_number(cfg.rule), _initial_config(cfg.initial_config, n), cfg.cycles)
        io.write_pbm(out / f"eca_{cfg.rule}_n{n}.pbm", hist, meta)
        lengths = history_lengths(hist)
        io.write_csv(out / f"lengths_n{n}.csv", ("t", "c_c"), list(enumerate(lengths.tolist())), meta)
        io.write_csv(
            out / f"history_n{n}.csv",
            ("trajectory", "time", "packed_row"),
            [(0, t, io.packed_hex(row)) for t, row in enumerate(hist)],
            meta,
        )
        summary["runs"].append({"n_sites": n, "final_length": int(lengths[-1])})
    io.write_json(out / "summary.json", summary, meta)
    return summary


COMMANDS = {
    "classical-sweep": cmd_classical_sweep,
    "phase-diagram": cmd_phase_diagram,
    "vqs-bench": cmd_vqs_bench,
    "rk-verify": cmd_rk_verify,
    "eca-run": cmd_eca_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dissca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", type=Path, help="flat key = value config file")
        p.add_argument("--workers", type=int, default=None, help="worker processes (capped by the env)")
        for f in fields(io.RunConfig):
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, metavar="VALUE", default=None)
    return parser


def resolve_config(args) -> io.RunConfig:
    overrides = dict(COMMAND_DEFAULTS[args.command])
    file_values = io.read_config_text(args.config.read_text()) if args.config else {}
    overrides.update(file_values)
    for f in fields(io.RunConfig):
        text = getattr(args, f.name)
        if text is not None:
            overrides[f.name] = io.parse_value(f.name, text)
    return io.load_config(None, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (io.ConfigError, OSError) as exc:
        print(f"dissca: {exc}", file=sys.stderr)
        return 2
    workers = args.workers or 1
    cap = io.thread_cap()
    if cap:
        workers = min(workers, cap)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](cfg, workers)
    except io.ConfigError as exc:
        print(f"dissca: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dissca: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
