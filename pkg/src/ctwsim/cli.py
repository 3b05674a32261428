"""Command-line entry point ``ctwsim``.

Exit codes: 0 success, 2 configuration error, 3 convergence failure,
4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .driver import CheckpointError, postprocess_snapshots, restart, run, trace_params
from .material import MaterialError
from .postproc import RoiError
from .stepper import ConvergenceError
from .traces import TraceError, generate_traces

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("ctwsim")


def _progress(every):
    def cb(rs, rep):
        if rs.step % every == 0:
            log.info(
                "step %d t=%.4f s newton=%d gmres=%d (%.2f s)",
                rs.step,
                rs.t,
                rep.newton_iters,
                rep.gmres_iters_total,
                rep.t_total,
            )

    return cb


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    res = run(cfg, progress=_progress(args.log_every))
    log.info("finished at t=%.6f s; outputs in %s", res.state.t, res.out_dir)
    return EXIT_OK


def cmd_restart(args) -> int:
    cfg = load_config(args.config, args.set)
    res = restart(args.checkpoint, cfg, progress=_progress(args.log_every))
    log.info("finished at t=%.6f s; outputs in %s", res.state.t, res.out_dir)
    return EXIT_OK


def cmd_postproc(args) -> int:
    cfg = load_config(args.config, args.set)
    out = postprocess_snapshots(args.snapshot_dir, cfg, args.x0)
    log.info("wrote %s", out)
    return EXIT_OK


def read_columns(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: QoI file is empty")
    header = rows[0]
    return {h: np.array([float(r[i]) for r in rows[1:]]) for i, h in enumerate(header)}


def plot_qoi(csv_paths, selection, out_dir, labels=None) -> list[Path]:
    """One plot-data CSV and one PNG per selected column; several inputs are overlaid."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = [read_columns(p) for p in csv_paths]
    labels = labels or [Path(p).stem if len(csv_paths) == 1 else str(p) for p in csv_paths]
    written = []
    for col in selection:
        for p, d in zip(csv_paths, data):
            if col not in d:
                raise KeyError(f"{p}: missing column {col!r}")
            if "time" not in d:
                raise KeyError(f"{p}: missing column 'time'")
        target = out_dir / f"plot_{col}.csv"
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "time", col])
            for lab, d in zip(labels, data):
                for t, v in zip(d["time"], d[col]):
                    w.writerow([lab, repr(float(t)), repr(float(v))])
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for lab, d in zip(labels, data):
            ax.plot(d["time"], d[col], label=lab)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(col)
        if len(data) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(target.with_suffix(".png"), dpi=120)
        plt.close(fig)
        written.append(target)
    return written


def cmd_plot(args) -> int:
    try:
        files = plot_qoi(args.csv, args.select.split(","), args.out)
    except KeyError as exc:
        log.error("%s", exc.args[0])
        return EXIT_CONFIG
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_IO
    for f in files:
        log.info("wrote %s", f)
    return EXIT_OK


def cmd_gen_traces(args) -> int:
    cfg = load_config(args.config, args.set)
    cfg.validate()
    out = Path(args.out) if args.out else cfg.output_dir() / "traces.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    tr = generate_traces(trace_params(cfg), out)
    log.info("wrote %d frames to %s", tr.n_frames, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctwsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_overrides(sp):
        sp.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config key (repeatable)",
        )

    sp = sub.add_parser("run", help="run a simulation")
    sp.add_argument("config")
    sp.add_argument("--log-every", type=int, default=50)
    with_overrides(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("restart", help="continue from a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("config")
    sp.add_argument("--log-every", type=int, default=50)
    with_overrides(sp)
    sp.set_defaults(func=cmd_restart)

    sp = sub.add_parser("postproc", help="recompute QoIs/cross-sections from snapshots")
    sp.add_argument("snapshot_dir")
    sp.add_argument("--config", required=True)
    sp.add_argument("--x0", type=float, default=None, help="cross-section position (mm)")
    with_overrides(sp)
    sp.set_defaults(func=cmd_postproc)

    sp = sub.add_parser("plot", help="plot QoI time series")
    sp.add_argument("csv", nargs="+")
    sp.add_argument("--select", default="roi_mean_eyy")
    sp.add_argument("--out", default="plots")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("gen-traces", help="write synthetic boundary traces")
    sp.add_argument("config")
    sp.add_argument("--out", default=None)
    with_overrides(sp)
    sp.set_defaults(func=cmd_gen_traces)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, MaterialError, TraceError, RoiError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        log.error("%s", exc)
        if exc.report is not None:
            log.error("residual history: %s", ["%.3e" % r for r in exc.report.residual_norms])
        return EXIT_CONVERGENCE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
