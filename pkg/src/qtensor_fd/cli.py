"""Command-line entry point: ``qtensor-fd {run, convergence-space, convergence-time, verify}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import fields
from .config import RunConfig, parse_config
from .errors import QTensorError
from .experiments import (
    director,
    largest_eigenvalue,
    run_convergence_space,
    run_convergence_time,
    run_simulation,
)
from .io import ensure_writable, write_energy_csv, write_field
from .scheme import StepReport, diagnostics
from .verify import FAULTS, run_battery

log = logging.getLogger("qtensor_fd")

EXIT_CODES = {
    "config": 2,
    "input": 3,
    "argument": 3,
    "io": 4,
    "quadratization": 5,
    "solver": 6,
    "integrity": 7,
}
EXIT_VERIFY_FAILED = 1


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat key = value configuration file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override one setting; repeatable, applied after --config")
    p.add_argument("--out", metavar="DIR", help="output directory (default: ./out)")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="fixed-order reductions for bit-reproducible output")
    p.add_argument("--seed", metavar="S", type=int, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtensor-fd", description="Energy-stable finite-difference Q-tensor solver")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation")
    _common(p)

    for name, what in (("convergence-space", "spatial"), ("convergence-time", "temporal")):
        p = sub.add_parser(name, help=f"{what} refinement study")
        _common(p)
        p.add_argument("--workers", metavar="K", type=int, default=1, help="parallel ladder runs")

    p = sub.add_parser("verify", help="run the seeded property battery")
    p.add_argument("--seed", metavar="S", type=int, default=0)
    p.add_argument("--inject-fault", choices=sorted(FAULTS), action="append", default=[],
                   help="break an operator on purpose to check that the battery notices")
    return parser


def _config(args, command: str) -> RunConfig:
    cfg = parse_config(
        args.config,
        args.overrides,
        command=command,
        out_dir=args.out,
        deterministic=args.deterministic,
        seed=args.seed,
    )
    fields.set_deterministic_reductions(cfg.deterministic)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    target = cfg.out_dir or Path("out")
    try:
        return ensure_writable(target)
    except OSError as exc:
        raise _IOFailure(f"output directory {target} is not writable: {exc.strerror or exc}") from None


class _IOFailure(QTensorError):
    category = "io"


def _initial_report(state, e0: float) -> StepReport:
    diag = diagnostics(state)
    return StepReport(0, 0.0, e0, e0, 0.0, 0.0, 0.0, diag.trace_drift, diag.sym_drift, 0, 0.0)


def cmd_run(args) -> int:
    cfg = _config(args, "run")
    out = _out_dir(cfg)
    header = cfg.header_lines()
    snap_dir = out / "snapshots"
    try:
        snap_dir.mkdir(exist_ok=True)
    except OSError as exc:
        raise _IOFailure(f"cannot create {snap_dir}: {exc.strerror}") from None
    grid = cfg.spec.grid

    def dump(state):
        tag = f"step{state.n:06d}"
        t = state.time
        write_field(snap_dir / f"Q_{tag}.dat", "Q", state.q, grid, t, header)
        write_field(snap_dir / f"r_{tag}.dat", "r", state.r, grid, t, header)
        if grid.dim == 2:
            write_field(snap_dir / f"lambda_max_{tag}.dat", "lambda_max", largest_eigenvalue(state.q), grid, t, header)
            write_field(snap_dir / f"director_{tag}.dat", "director", director(state.q)[0], grid, t, header)

    res = run_simulation(cfg.spec, cfg.solver, snapshot_times=cfg.snapshots, on_snapshot=dump)
    write_energy_csv(out / "energy.csv", _initial_report(res.state, res.initial_energy), res.reports, header)

    final = res.reports[-1]
    mon = res.monitor
    summary = [
        f"steps {final.step}",
        f"time {final.time!r}",
        f"energy_initial {res.initial_energy!r}",
        f"energy_final {final.energy_after!r}",
        f"max_abs_dissipation_residual {max(abs(r.dissipation_residual) for r in res.reports)!r}",
        f"max_trace_drift {max(r.trace_drift for r in res.reports)!r}",
        f"max_sym_drift {max(r.sym_drift for r in res.reports)!r}",
        f"total_cg_iterations {sum(r.solver_iterations for r in res.reports)}",
        f"time_derivative_sum {mon.time_derivative_sum!r} (bound {mon.time_derivative_bound!r})",
    ]
    (out / "summary.txt").write_text("".join(f"# {h}\n" for h in header) + "\n".join(summary) + "\n")
    print("\n".join(summary))
    return 0


def cmd_convergence(args, mode: str) -> int:
    command = f"convergence-{mode}"
    cfg = _config(args, command)
    out = _out_dir(cfg)
    if not cfg.ladder:
        raise _ConfigMissing("convergence.ladder is empty")
    if mode == "space":
        report = run_convergence_space(
            cfg.spec, cfg.ladder, cfg.reference_n, cfg.reference_steps, cfg.solver, workers=args.workers
        )
    else:
        report = run_convergence_time(cfg.spec, cfg.ladder, cfg.reference_steps, cfg.solver, workers=args.workers)
    path = out / f"convergence_{mode}.csv"
    path.write_text(report.to_csv(cfg.header_lines()))
    print(report.format_table())
    log.info("wrote %s", path)
    return 0


class _ConfigMissing(QTensorError):
    category = "config"


def cmd_verify(args) -> int:
    results = run_battery(seed=args.seed, faults=args.inject_fault)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_VERIFY_FAILED if failed else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "convergence-space":
            return cmd_convergence(args, "space")
        if args.command == "convergence-time":
            return cmd_convergence(args, "time")
        return cmd_verify(args)
    except QTensorError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
