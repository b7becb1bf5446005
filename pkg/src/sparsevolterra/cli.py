"""Command-line front end: ``simulate``, ``identify``, ``report`` and ``sweep``.

Exit codes: 0 success, 1 solver infeasibility, 2 I/O or config errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .data import FormatError, Dataset, load_report, load_signals, save_report, save_signals
from .experiment import (
    ConfigError,
    ExperimentConfig,
    build_report,
    identify,
    load_config,
    make_dataset,
    resolve,
    sweep_tau,
    system_model,
    truth_section,
)
from .model import eval_kernels, simulate
from .solvers import IdentificationError, Infeasible

logger = logging.getLogger("sparsevolterra")

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2
H2_SLICES = (0, 1, 2)


def _grid_arg(text: str) -> tuple[int, int]:
    try:
        r, a = text.lower().split("x")
        return int(r), int(a)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 8x16, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--preset", choices=["example1", "example2"], help="published example system")
    common.add_argument("--seed", type=int, help="master seed (input, noise, mask, catalog)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ident = argparse.ArgumentParser(add_help=False)
    ident.add_argument("--solver", choices=["mip", "l1", "fw"])
    ident.add_argument("--grid", type=_grid_arg, metavar="RxA", help="radial x angular pole counts")
    ident.add_argument("--plant-true-poles", action="store_true", help="augment the grid with the true poles")
    ident.add_argument("--mask-drop", type=float, metavar="PCT", help="drop this percentage of samples")
    ident.add_argument("--epsilon", type=float, help="residual bound (default from the noise bound)")
    ident.add_argument("--tau", type=float, help="atomic-cost radius for fw")
    ident.add_argument("--threshold", type=float, help="relative support threshold")
    ident.add_argument("--data", type=Path, help="signals CSV (default: simulate from the config)")
    ident.add_argument("--truth", type=Path, help="ground-truth JSON written by simulate")

    p = argparse.ArgumentParser(prog="sparsevolterra", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("simulate", parents=[common], help="write a dataset and its ground truth")
    sp.add_argument("--mask-drop", type=float, metavar="PCT")
    sp.add_argument("--name", default="signals", help="file stem for the CSV")

    sp = sub.add_parser("identify", parents=[common, ident], help="identify a sparse model, write a report")
    sp.add_argument("--tau-sweep", type=_float_list, metavar="T1,T2,...", help="fw only: one report per tau")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("sweep", parents=[common, ident], help="Frank-Wolfe over several tau values")
    sp.add_argument("--taus", type=_float_list, metavar="T1,T2,...")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("report", help="plot-ready CSV series from a report")
    sp.add_argument("report", type=Path)
    sp.add_argument("--out", type=Path, default=Path("."))
    sp.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.preset:
        cfg.system.preset = args.preset
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "mask_drop", None) is not None:
        cfg.mask.drop_pct = args.mask_drop
    if getattr(args, "solver", None):
        cfg.solver.name = args.solver
    if getattr(args, "grid", None):
        cfg.grid.radial, cfg.grid.angular = args.grid
    if getattr(args, "plant_true_poles", False):
        cfg.grid.plant_true_poles = True
    for flag, attr in (("epsilon", "epsilon"), ("tau", "tau"), ("threshold", "threshold_rel")):
        if getattr(args, flag, None) is not None:
            setattr(cfg.solver, attr, getattr(args, flag))
    if args.command == "sweep":
        cfg.solver.name = "fw"
    return resolve(cfg)


def _load_inputs(args, cfg):
    """Dataset and ground truth: from files when given, else simulated from the config."""
    if args.data:
        dataset = load_signals(args.data)
        if args.truth:
            truth = load_report(args.truth)["model"]
        elif cfg.system.preset or cfg.system.atoms:
            truth = system_model(cfg)
        else:
            truth = None
        return dataset, truth
    if not (cfg.system.preset or cfg.system.atoms or cfg.system.h0):
        raise ConfigError("no dataset: pass --data, --preset or a config with a system")
    truth = load_report(args.truth)["model"] if args.truth else system_model(cfg)
    return make_dataset(cfg, truth), truth


def cmd_simulate(args) -> int:
    cfg = config_from_args(args)
    truth = system_model(cfg)
    dataset = make_dataset(cfg, truth)
    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / f"{args.name}.csv"
    save_signals(csv_path, dataset)
    save_report(args.out / "truth.json", {"config": cfg.to_dict(), **truth_section(truth), "truth": truth_section(truth),
                                          "eta_max": dataset.eta_max})
    print(f"wrote {csv_path} ({dataset.n_samples} samples, eta_max={dataset.eta_max:.6g})")
    return EXIT_OK


def _summary_line(report: dict) -> str:
    line = f"solver={report['solver']} cardinality={report['cardinality']} residual_sq={report['residual_sq']:.6g}"
    if report.get("metrics"):
        m = report["metrics"]
        line += f" output_rmse={m['output_rmse']:.6g} eta_max={report['noise']['eta_max']:.6g}"
    return line


def cmd_identify(args) -> int:
    cfg = config_from_args(args)
    dataset, truth = _load_inputs(args, cfg)
    taus = getattr(args, "tau_sweep", None) or getattr(args, "taus", None)
    if args.command == "sweep" or taus:
        if cfg.solver.name != "fw":
            raise ConfigError("a tau sweep needs the fw solver")
        return _sweep(args, cfg, dataset, truth, taus or cfg.solver.taus)
    run = identify(cfg, dataset, truth)
    report = build_report(cfg, dataset, run, truth)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "report.json"
    save_report(path, report)
    print(_summary_line(report))
    print(f"wrote {path}")
    return EXIT_OK


def _sweep(args, cfg, dataset: Dataset, truth, taus) -> int:
    runs = sweep_tau(cfg, dataset, taus, truth, workers=max(1, args.workers))
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, run in enumerate(runs):
        report = build_report(cfg, dataset, run, truth)
        save_report(args.out / f"report_tau{i:03d}.json", report)
        m = report.get("metrics") or {}
        rows.append([run.problem.tau, run.raw.residual_sq, run.raw.atomic_cost, run.raw.cardinality,
                     run.refit.cardinality, run.refit.residual_sq, int(run.raw.converged), m.get("output_rmse", "")])
    with open(args.out / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "residual_sq", "atomic_cost", "cardinality", "refit_cardinality", "refit_residual_sq",
                    "converged", "output_rmse"])
        w.writerows(rows)
    for r in rows:
        print(f"tau={r[0]:.6g} residual_sq={r[1]:.6g} cardinality={r[3]} refit_residual_sq={r[5]:.6g}")
    print(f"wrote {len(rows)} reports and {args.out / 'sweep_summary.csv'}")
    return EXIT_OK


def _write_csv(path: Path, header, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v) for v in row])


def cmd_report(args) -> int:
    report = load_report(args.report)
    data = report.get("data")
    if not data or data.get("input") is None:
        raise FormatError(f"{args.report}: report carries no input signal")
    x = np.asarray(data["input"], dtype=float)
    L = int(report.get("memory") or x.size)
    est = eval_kernels(report["model"], L)
    truth = report.get("truth_model")
    tru = eval_kernels(truth, L) if truth is not None else None
    if tru is None:
        print("notice: report has no ground truth; writing estimated-only series", file=sys.stderr)
    args.out.mkdir(parents=True, exist_ok=True)
    k = np.arange(L)

    def pair(name, t_vals, e_vals):
        return ([f"true_{name}", f"est_{name}"], [t_vals, e_vals]) if tru is not None else ([f"est_{name}"], [e_vals])

    h, c = pair("h1", None if tru is None else tru.h1, est.h1)
    _write_csv(args.out / "h1.csv", ["k", *h], [k, *c])
    h, c = pair("h2_diag", None if tru is None else np.diag(tru.H2), np.diag(est.H2))
    _write_csv(args.out / "h2_diag.csv", ["k", *h], [k, *c])
    header, cols = ["k2"], [k]
    for row in H2_SLICES:
        if row < L:
            h, c = pair(f"h2_k1_{row}", None if tru is None else tru.H2[row], est.H2[row])
            header += h
            cols += c
    _write_csv(args.out / "h2_slices.csv", header, cols)

    y_est = simulate(est, x)
    clean = data.get("output_clean")
    if clean is None and tru is not None:
        clean = simulate(tru, x)
    t = np.arange(x.size)
    if clean is not None:
        clean = np.asarray(clean, dtype=float)
        _write_csv(args.out / "output.csv", ["t", "true_output", "est_output"], [t, clean, y_est])
        _write_csv(args.out / "error.csv", ["t", "error"], [t, clean - y_est])
    else:
        _write_csv(args.out / "output.csv", ["t", "est_output"], [t, y_est])
    print(f"wrote plot data to {args.out}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "identify": cmd_identify, "sweep": cmd_identify, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    warnings.simplefilter("default")
    try:
        return COMMANDS[args.command](args)
    except Infeasible as exc:
        hint = "" if exc.suggested_epsilon is None else f"; try --epsilon {exc.suggested_epsilon:.6g}"
        print(f"infeasible: {exc}{hint}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except IdentificationError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
