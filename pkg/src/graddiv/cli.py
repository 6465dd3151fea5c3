"""Command-line front door: theory evaluation, Monte Carlo verification,
diversity scans, batch sweeps, and width solving, emitting CSV/JSON.

Exit codes: 0 success (for ``verify``, additionally: every gate passed),
1 runtime failure (with a diagnostic on stderr), 2 usage error.
Unset seeds fall back to the GRADDIV_SEED environment variable, then to 0,
and every output is deterministic given the seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from . import experiments, montecarlo, theory
from .experiments import ParamBudget, TrainTarget
from .idx import load_idx
from .network import ActivationKind, NetworkShape
from .rng import SeedKey

SWEEP_COLUMNS = [
    "dataset", "L", "K", "params", "activation", "B", "tuned_lr",
    "epochs", "converged", "final_metric", "avg_diversity", "seed",
]


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


def parse_batch_grid(text: str) -> list[int]:
    """Grid syntax: 'lo..hix2' for a powers-of-two range, or a comma list."""
    if ".." in text:
        lo_part, hi_part = text.split("..", 1)
        if not hi_part.endswith("x2"):
            raise ValueError(f"range grid must end in 'x2': {text!r}")
        lo, hi = int(lo_part), int(hi_part[:-2])
        if lo < 1 or hi < lo:
            raise ValueError(f"bad batch range {text!r}")
        grid = []
        b = lo
        while b <= hi:
            grid.append(b)
            b *= 2
        return grid
    return _parse_int_list(text)


def _resolve_seed(args) -> SeedKey:
    if args.seed is not None:
        return SeedKey(args.seed)
    env = os.environ.get("GRADDIV_SEED")
    return SeedKey(int(env)) if env else SeedKey(0)


def _apply_config(args: argparse.Namespace) -> None:
    """Fill unset options from the JSON config file; flags win."""
    if not getattr(args, "config", None):
        return
    with open(args.config, encoding="utf-8") as f:
        values = json.load(f)
    for raw_key, value in values.items():
        key = raw_key.replace("-", "_")
        if not hasattr(args, key):
            raise ValueError(f"unknown config key {raw_key!r} for this command")
        if getattr(args, key) is None or getattr(args, key) is False:
            setattr(args, key, value)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _sweep_csv_rows(rows):
    for r in rows:
        yield [r.dataset, r.L, r.K, r.params, r.activation, r.batch_size, r.tuned_lr,
               r.epochs, str(r.converged).lower(), r.final_metric, r.avg_diversity, r.seed]


def cmd_theory(args) -> int:
    widths = _parse_int_list(args.widths)
    rep = theory.mullnn_expectations(widths, args.n)
    payload = {
        "widths": list(rep.widths),
        "n": rep.n,
        "M": rep.M,
        "e_n_sum_sq": rep.e_n_sum_sq,
        "e_cross": rep.e_cross,
        "e_norm_of_sum": rep.e_norm_of_sum,
        "rho": rep.rho,
        "rho_lower_bound": rep.rho_lower_bound,
        "per_layer": [
            {"layer": a, "sq_entry": sq, "cross_entry": cr}
            for a, (sq, cr) in (
                (a, theory.per_layer_expectations(widths, a)) for a in range(1, len(widths) + 1)
            )
        ],
    }
    print(json.dumps(payload, indent=2))
    return 0


def cmd_verify(args) -> int:
    widths = tuple(_parse_int_list(args.widths))
    trials = args.trials if args.trials is not None else 200_000
    cfg = montecarlo.MCConfig(widths, args.n, trials, _resolve_seed(args))
    reports = montecarlo.compare(
        cfg,
        z_tol=args.z_tol if args.z_tol is not None else 4.0,
        rel_tol=args.rel_tol if args.rel_tol is not None else 0.03,
        jobs=args.jobs or 1,
    )
    out = _out_dir(args) / "verify.csv"
    rows = []
    for r in reports:
        rows.append([
            r.name,
            r.empirical.mean if r.empirical else None,
            r.empirical.stderr if r.empirical else None,
            r.empirical.trials if r.empirical else None,
            r.closed_form,
            r.z_score,
            r.rel_error,
            str(r.passed).lower(),
            r.note,
        ])
    _write_csv(out, ["name", "mean", "stderr", "trials", "closed_form", "z_score",
                     "rel_error", "passed", "note"], rows)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        status = "skip" if r.skipped else ("pass" if r.passed else "FAIL")
        print(f"{status:4s} {r.name}: mean={_fmt(r.empirical.mean if r.empirical else None)} "
              f"cf={_fmt(r.closed_form)} z={_fmt(r.z_score)} rel={_fmt(r.rel_error)} {r.note}")
    print(f"wrote {out}")
    return 0 if not failed else 1


def cmd_solve_width(args) -> int:
    budget = ParamBudget(args.params, args.din, args.dout)
    print(experiments.solve_width(budget, args.depth))
    return 0


def cmd_diversity(args) -> int:
    if not args.synthetic:
        raise ValueError("only --synthetic diversity scans are supported")
    seed = _resolve_seed(args)
    din = args.din if args.din is not None else 16
    n = args.n if args.n is not None else 10_000
    depths = _parse_int_list(args.depths)
    runs = args.runs if args.runs is not None else 5
    budget = ParamBudget(args.params, din, 1)

    rows = experiments.synthetic_depth_scan(budget, depths, n, seed, runs=runs)
    for row in rows:
        print(f"L={row.L} K={row.K} params={row.params} avg_diversity={row.avg_diversity:.6g}")
    csv_rows = [
        ["synthetic", r.L, r.K, r.params, r.activation, None, None, None, None, None,
         r.avg_diversity, r.seed]
        for r in rows
    ]
    out = _out_dir(args) / "diversity.csv"
    _write_csv(out, SWEEP_COLUMNS, csv_rows)
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    seed = _resolve_seed(args)
    if args.target_acc is None and args.target_loss is None:
        raise ValueError("pass exactly one of --target-acc / --target-loss")
    if args.target_acc is not None and args.target_loss is not None:
        raise ValueError("pass exactly one of --target-acc / --target-loss")
    target = (TrainTarget("accuracy", args.target_acc) if args.target_acc is not None
              else TrainTarget("loss", args.target_loss))

    if args.dataset == "mnist":
        if not args.idx_images or not args.idx_labels:
            raise ValueError("mnist sweeps need --idx-images and --idx-labels")
        data = load_idx(args.idx_images, args.idx_labels, limit=args.limit)
        d_out = data.classes
        activation = ActivationKind(args.activation or "relu")
        dataset_name = "mnist"
    elif args.dataset == "synthetic":
        din = args.din if args.din is not None else 16
        n = args.n if args.n is not None else 10_000
        teacher_shape = NetworkShape((din, 1), ActivationKind.LINEAR)
        data, _ = experiments.make_synthetic(teacher_shape, n, seed.child(999))
        d_out = 1
        activation = ActivationKind(args.activation or "linear")
        dataset_name = "synthetic"
    else:
        raise ValueError(f"unknown dataset {args.dataset!r}")

    budget = ParamBudget(args.params, data.dim, d_out)
    shape = experiments.budget_shape(budget, args.depth, activation)
    batch_grid = parse_batch_grid(args.batches) if args.batches else list(experiments.DEFAULT_BATCH_GRID)
    lr_grid = _parse_float_list(args.lr_grid) if args.lr_grid else list(experiments.DEFAULT_LR_GRID)
    epoch_cap = args.epoch_cap if args.epoch_cap is not None else experiments.DEFAULT_EPOCH_CAP

    def progress(row):
        print(f"B={row.batch_size}: lr={_fmt(row.tuned_lr)} epochs={_fmt(row.epochs)} "
              f"converged={row.converged} metric={_fmt(row.final_metric)} {row.error}", flush=True)

    result = experiments.batch_sweep(
        shape, data, target, seed, batch_grid=batch_grid, lr_grid=lr_grid,
        epoch_cap=epoch_cap, dataset_name=dataset_name,
        trace_diversity=bool(args.trace_diversity), progress=progress,
    )
    out = _out_dir(args)
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, _sweep_csv_rows(result.rows))
    metadata = {
        "dataset": dataset_name,
        "depth_hidden_layers": args.depth,
        "width": shape.widths[1],
        "params": shape.parameter_count(),
        "activation": activation.value,
        "target": {"kind": target.kind, "value": target.value},
        "batch_grid": list(batch_grid),
        "lr_grid": list(lr_grid),
        "epoch_cap": epoch_cap,
        "threshold_batch": result.threshold_batch,
        "threshold_slack": result.slack,
        "seed": seed.root_seed,
        "limit": args.limit,
        "notes": "epochs exclude the two tuning epochs per step-size candidate; "
                 "indices drawn with replacement",
    }
    with open(out / "metadata.json", "w", encoding="utf-8") as f:
        json.dump(metadata, f, indent=2)
        f.write("\n")
    print(f"threshold batch B* = {result.threshold_batch}")
    print(f"wrote {out / 'sweep.csv'} and {out / 'metadata.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graddiv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="root seed (default: $GRADDIV_SEED or 0)")
        p.add_argument("--jobs", type=int, default=None, help="worker cap for Monte Carlo blocks")
        p.add_argument("--config", default=None, help="JSON file of defaults mirroring flag names")
        p.add_argument("--out", default=None, help="output directory (default: .)")

    p = sub.add_parser("theory", help="print closed-form expectations as JSON")
    p.add_argument("--widths", required=True, help="comma list K_0..K_{L-1}")
    p.add_argument("--n", type=int, required=True)
    common(p)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("verify", help="Monte Carlo vs closed forms; writes verify.csv")
    p.add_argument("--widths", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--z-tol", type=float, default=None)
    p.add_argument("--rel-tol", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("diversity", help="diversity scan over a depth grid; writes diversity.csv")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--params", type=int, required=True)
    p.add_argument("--depths", required=True, help="comma list of hidden-layer counts")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--din", type=int, default=None)
    p.add_argument("--runs", type=int, default=None, help="independent draws to average (default 5)")
    common(p)
    p.set_defaults(func=cmd_diversity)

    p = sub.add_parser("sweep", help="batch-size sweep; writes sweep.csv + metadata.json")
    p.add_argument("--dataset", required=True, choices=["mnist", "synthetic"])
    p.add_argument("--idx-images", default=None)
    p.add_argument("--idx-labels", default=None)
    p.add_argument("--limit", type=int, default=None, help="use only the first N examples")
    p.add_argument("--params", type=int, required=True)
    p.add_argument("--depth", type=int, required=True, help="hidden-layer count")
    p.add_argument("--activation", default=None,
                   choices=[k.value for k in ActivationKind])
    p.add_argument("--batches", default=None, help="e.g. 32..4096x2 or 32,256,4096")
    p.add_argument("--target-acc", type=float, default=None)
    p.add_argument("--target-loss", type=float, default=None)
    p.add_argument("--epoch-cap", type=int, default=None)
    p.add_argument("--lr-grid", default=None)
    p.add_argument("--din", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--trace-diversity", action="store_true")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("solve-width", help="width from the fixed-parameter equation")
    p.add_argument("--params", type=int, required=True)
    p.add_argument("--din", type=int, required=True)
    p.add_argument("--dout", type=int, required=True)
    p.add_argument("--depth", type=int, required=True, help="hidden-layer count")
    common(p)
    p.set_defaults(func=cmd_solve_width)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args)
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
