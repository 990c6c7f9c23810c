"""``dlor`` command line: batch runs that write CSV/JSON artifacts.

Exit codes: 0 success, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import linalg as la
from .activation import NAMES as ACTIVATIONS, make_activation
from .construct import (
    build_augmented_block,
    build_deep_block,
    build_wide_block,
    plan_from_json,
    plan_to_json,
    reference,
    simulate,
)
from .decompose import additive_split, multiplicative_factorize, perturb_to_invertible
from .errors import DlorError
from . import experiments as ex
from .rank1 import scalar_interpolate, thermometer_interpolate
from .train import SchedulerConfig, TrainConfig, make_net, train

EXPERIMENTS = ("construction-deep", "construction-wide", "training", "fixed-budget",
               "time-to-threshold", "param-matched", "spectral")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- io helpers

def write_atomic(path, text) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def read_matrix(path) -> np.ndarray:
    obj = read_json(path)
    if isinstance(obj, dict) and "w" in obj and "rows" not in obj:
        obj = obj["w"]
    try:
        return la.matrix_from_json(obj) if isinstance(obj, dict) else la.as_matrix(obj)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path} is not a matrix: {exc}") from exc


def run_dir(base, name) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S")
    path = Path(base) / name / stamp
    i = 1
    while path.exists():
        path = Path(base) / name / f"{stamp}-{i}"
        i += 1
    path.mkdir(parents=True)
    return path


def resolved_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def write_manifest(path, args, outputs) -> None:
    write_atomic(path, dump_json({"command": args.command, "config": resolved_config(args),
                                  "outputs": sorted(str(o) for o in outputs)}))


def write_sibling_manifest(out, args, outputs) -> Path:
    """Manifest for commands with an explicit --out: ``name.json`` -> ``name.manifest.json``."""
    path = Path(out).with_suffix(".manifest.json")
    write_manifest(path, args, [Path(o).name for o in outputs])
    return path


def parse_grid(spec, dim, seed):
    """"start:end:count" -> (dim, count) columns; a Latin hypercube sample when dim > 1."""
    try:
        start, end, count = spec.split(":")
        start, end, count = float(start), float(end), int(count)
    except ValueError as exc:
        raise UsageError(f"grid must look like start:end:count, got {spec!r}") from exc
    if count < 1 or not end > start:
        raise UsageError("grid needs count >= 1 and end > start")
    if dim == 1:
        return np.linspace(start, end, count)[None, :]
    rng = la.make_rng(seed)
    strata = np.stack([rng.permutation(count) for _ in range(dim)])
    u = (strata + rng.uniform(size=(dim, count))) / count
    return start + (end - start) * u


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma separated integers, got {text!r}") from exc


# ---------------------------------------------------------------- subcommands

def cmd_interpolate(args):
    rows = []
    try:
        with open(args.data, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
    except (OSError, StopIteration, ValueError) as exc:
        raise UsageError(f"cannot read dataset {args.data}: {exc}") from exc
    if not rows or header[-1].strip() != "z":
        raise UsageError("dataset needs a header x_1..x_d,z and at least one row")
    data = np.array(rows)
    x_cols, z = data[:, :-1].T, data[:, -1]
    if args.activation == "heaviside":
        net = thermometer_interpolate(x_cols, z, args.seed)
    else:
        net = scalar_interpolate(x_cols, z, make_activation(args.activation), args.seed)
    pred = net.forward(x_cols)
    report = {"points": int(z.size), "dim": int(x_cols.shape[0]), "activation": args.activation,
              "max_abs_error": float(np.max(np.abs(pred - z))),
              "max_rel_error": float(np.max(np.abs(pred - z)) / max(1.0, float(np.max(np.abs(z)))))}
    out = Path(args.out)
    rep = out.with_suffix(".report.json")
    write_atomic(out, dump_json(net.to_json()))
    write_atomic(rep, dump_json(report))
    return [out, rep, write_sibling_manifest(out, args, [out, rep])]


def cmd_decompose(args):
    w = read_matrix(args.inp)
    if args.mode == "add":
        split = additive_split(w, args.parts)
        obj = {"mode": "add", "parts": args.parts, "groups": split.groups,
               "betas": None if split.betas is None else split.betas.tolist(),
               "summands": [la.matrix_to_json(s) for s in split.summands],
               "reassembly_error": la.frob_norm(split.total() - w) / max(la.frob_norm(w), 1e-300)}
    else:
        if args.perturb:
            w = perturb_to_invertible(w)
        fac = multiplicative_factorize(w, args.rank, args.alpha, args.seed)
        obj = {"mode": "mul", **fac.to_json()}
    out = Path(args.out)
    write_atomic(out, dump_json(obj))
    return [out, write_sibling_manifest(out, args, [out])]


def _load_block(args):
    w = read_matrix(args.inp)
    if args.bias:
        b = la.as_vector(read_json(args.bias))
    else:
        b = np.zeros(w.shape[0])
    return w, b


def _build(kind, w, b, h, args):
    act = make_activation(args.activation, args.c)
    if kind == "deep":
        return build_deep_block(perturb_to_invertible(w), b, args.rank, args.alpha, h, act, args.seed)
    if kind == "wide":
        return build_wide_block(w, b, args.parts, h, act)
    return build_augmented_block(w, b, h, act)


def _grid_error(plan, grid):
    out = simulate(plan, grid)
    if plan.kind == "augmented":
        out = out[plan.n:]
    return float(np.max(np.abs(out - reference(plan, grid))))


def cmd_sweep(args):
    w, b = _load_block(args)
    hs = _floats(args.hs)
    if not hs:
        raise UsageError("--hs needs at least one value")
    grid = parse_grid(args.grid, w.shape[1], args.seed)
    base = run_dir(args.out_dir, f"sweep-{args.kind}")
    rows, outputs = [], []
    for i, h in enumerate(sorted(hs, reverse=True)):
        plan = _build(args.kind, w, b, h, args)
        rows.append((h, _grid_error(plan, grid)))
        p = base / f"plan_{i:02d}.json"
        write_atomic(p, dump_json(plan_to_json(plan)))
        outputs.append(p)
    csv_path = base / "sweep.csv"
    write_atomic(csv_path, ex._csv(["h", "sup_error"], rows))
    outputs.append(csv_path)
    write_manifest(base / "manifest.json", args, [o.name for o in outputs])
    return outputs + [base / "manifest.json"]


def cmd_simulate(args):
    obj = read_json(args.plan)
    try:
        plan = plan_from_json(obj)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid plan file: {exc}") from exc
    if plan.source_w is None:
        raise UsageError("plan has no source matrix in meta; cannot measure the error")
    grid = parse_grid(args.grid, plan.source_w.shape[1], args.seed)
    out = Path(args.out)
    write_atomic(out, ex._csv(["h", "sup_error"], [(plan.h, _grid_error(plan, grid))]))
    return [out, write_sibling_manifest(out, args, [out])]


def cmd_train(args):
    data = ex.make_sawtooth()
    kind = {"dense": "dense_mlp", "deep": "deep_dlor", "wide": "wide_dlor"}[args.arch]
    net = make_net(kind, args.width, args.k, make_activation(args.activation), args.seed, n_hidden=args.hidden)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs,
                      scheduler=None if args.no_scheduler else SchedulerConfig(),
                      seed=args.seed, stop_threshold=args.threshold, record_every=args.record_every)
    res = train(net, data, cfg)
    base = run_dir(args.out_dir, f"train-{args.arch}")
    ck, curve, summ = base / "checkpoint.json", base / "loss.csv", base / "summary.json"
    write_atomic(ck, dump_json(net.to_json()))
    write_atomic(curve, res.curve_csv())
    write_atomic(summ, dump_json({"final_train_mse": res.final_train_mse, "final_test_mse": res.final_test_mse,
                                  "epochs_run": res.epochs_run, "reached_threshold": res.reached_threshold,
                                  "params": net.param_count()}))
    write_manifest(base / "manifest.json", args, [p.name for p in (ck, curve, summ)])
    return [ck, curve, summ, base / "manifest.json"]


def _seed_list(args, default_n):
    if args.seeds:
        return [args.seed + i for i in range(args.seeds)]
    return [args.seed + i for i in range(default_n)]


def cmd_experiment(args):
    base = run_dir(args.out_dir, args.name)
    files = {}
    ks = _ints(args.ks) if args.ks else list(range(1, 17))
    if args.name in ("construction-deep", "construction-wide"):
        which = args.name.split("-")[1]
        seeds = _seed_list(args, 1)
        results = [ex.run_construction_sweep(which, s) for s in seeds]
        if len(results) == 1:
            files["sweep.csv"] = results[0].to_csv()
        else:
            for r in results:
                files[f"sweep_seed{r.seed}.csv"] = r.to_csv()
        files["summary.json"] = dump_json({"seeds": [r.to_json() for r in results],
                                           "top_decades_ok": sum(r.top_decades_ok() for r in results)})
    elif args.name in ("training", "fixed-budget", "time-to-threshold"):
        seeds = _seed_list(args, ex.FULL_SEEDS if args.full else ex.REDUCED_SEEDS)
        fn = {"training": ex.run_training, "fixed-budget": ex.run_fixed_budget,
              "time-to-threshold": ex.run_time_to_threshold}[args.name]
        summary = fn(ks=tuple(ks), full=args.full, seeds=seeds, jobs=args.jobs)
        files["summary.csv"] = summary.to_csv()
        files["runs.csv"] = summary.runs_csv()
        files["summary.json"] = dump_json(summary.to_json())
    elif args.name == "param-matched":
        seeds = _seed_list(args, 5)
        res = ex.run_param_matched(tuple(_ints(args.ks)) if args.ks else (1, 2, 4, 8, 16), seeds,
                                   full=args.full, jobs=args.jobs)
        files["param_table.csv"] = res.table_csv()
        files["summary.csv"] = res.summary.to_csv()
        files["runs.csv"] = res.summary.runs_csv()
        files["summary.json"] = dump_json(res.to_json())
    else:
        rep = ex.run_spectral(args.width or 64, args.rank or 4, args.seed, full=args.full)
        files.update(_spectral_files(rep))
    outputs = []
    for name, text in files.items():
        write_atomic(base / name, text)
        outputs.append(base / name)
    write_manifest(base / "manifest.json", args, list(files))
    return outputs + [base / "manifest.json"]


def _spectral_files(rep):
    return {"deep_spectrum.csv": rep.deep_csv(), "wide_spectrum.csv": rep.wide_csv(),
            "summary.json": dump_json(rep.to_json())}


def cmd_spectral(args):
    rep = ex.run_spectral(args.width, args.rank, args.seed, epochs=args.epochs, full=args.full)
    base = run_dir(args.out_dir, "spectral")
    files = _spectral_files(rep)
    for name, text in files.items():
        write_atomic(base / name, text)
    write_manifest(base / "manifest.json", args, list(files))
    return [base / n for n in files] + [base / "manifest.json"]


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="master seed (default 42)")
    common.add_argument("--out-dir", default=None, help="output root (default $DLOR_OUT_DIR or ./out)")
    common.add_argument("--config", default=None, help="JSON file of flag defaults")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for multi-run experiments")

    parser = _Parser(prog="dlor", description="Diagonal-plus-low-rank network laboratory.", parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("interpolate", parents=[common], help="rank-1 exact interpolation of a scalar dataset")
    p.add_argument("--data", required=True, help="CSV with columns x_1..x_d,z")
    p.add_argument("--activation", default="softplus", choices=ACTIVATIONS)
    p.add_argument("--out", required=True, help="net JSON path (a .report.json is written beside it)")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("decompose", parents=[common], help="additive or multiplicative DLoR decomposition")
    p.add_argument("--mode", choices=("add", "mul"), required=True)
    p.add_argument("--rank", type=int, default=6)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--parts", type=int, default=3, help="number of summands for --mode add")
    p.add_argument("--perturb", action="store_true", help="nudge a singular input to an invertible one")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    def block_flags(p):
        p.add_argument("--kind", choices=("deep", "wide", "augmented"), default="deep")
        p.add_argument("--in", dest="inp", required=True, help="weight matrix JSON")
        p.add_argument("--bias", default=None, help="bias vector JSON (default zeros)")
        p.add_argument("--rank", type=int, default=6)
        p.add_argument("--alpha", type=float, default=0.8)
        p.add_argument("--parts", type=int, default=3)
        p.add_argument("--activation", default="softplus", choices=ACTIVATIONS)
        p.add_argument("--c", type=float, default=None, help="expansion point")
        p.add_argument("--grid", default="-2:2:200")

    p = sub.add_parser("sweep", parents=[common], help="build blocks over an h sweep and record sup-errors")
    block_flags(p)
    p.add_argument("--hs", default="1e-1,1e-2,1e-3,1e-4,1e-5,1e-6")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", parents=[common], help="evaluate a saved plan against its source layer")
    p.add_argument("--plan", required=True)
    p.add_argument("--grid", default="-2:2:200")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train one network on the sawtooth task")
    p.add_argument("--arch", choices=("dense", "deep", "wide"), default="deep")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--hidden", type=int, default=1, help="dense hidden layers")
    p.add_argument("--activation", default="softplus", choices=ACTIVATIONS[:-1])
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--epochs", type=int, default=5000)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--no-scheduler", action="store_true")
    p.add_argument("--record-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", parents=[common], help="run a scripted study")
    p.add_argument("--name", choices=EXPERIMENTS, required=True)
    p.add_argument("--full", action="store_true", help="paper-scale budgets and seeds")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds (from --seed upward)")
    p.add_argument("--ks", default=None, help="comma separated substructure counts")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("spectral", parents=[common], help="spectral split of trained deep/wide nets")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--full", action="store_true")
    p.set_defaults(func=cmd_spectral)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` (explicit flags still win)."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = read_json(args.config)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    known = set(vars(args))
    unknown = sorted(set(k.replace("-", "_") for k in cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        if not args.command:
            parser.print_help(sys.stderr)
            return 1
        args.out_dir = args.out_dir or os.environ.get("DLOR_OUT_DIR") or "out"
        outputs = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DlorError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        # bad inputs (wrong shapes, missing files, malformed JSON) are usage problems
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
