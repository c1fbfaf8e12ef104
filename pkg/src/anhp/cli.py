"""Command-line interface: ``anhp {init,train,eval,sample,check}``.

Exit codes: 0 success, 1 program/compile error, 2 usage or input error,
3 training aborted.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .andtt import AndttModel
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import Dataset, generate_synthetic, load_dataset, save_dataset, split_path
from .dtt.engine import CompileError, possible_events
from .dtt.syntax import ParseError, parse_atom, parse_program
from .evaluation import METRICS, evaluate
from .events import SequenceError
from .flat import AnhpModel, ConfigError
from .likelihood import TrainingConfig, TrainingDiverged, train
from .timeenc import TimeEncodingConfig, estimate_scales

EXIT_OK, EXIT_PROGRAM, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _even(n: int) -> int:
    return n + (n % 2)


def _read_program(path):
    return parse_program(Path(path).read_text(encoding="utf-8"))


def _dataset_file(path, split: str) -> Path:
    p = Path(path)
    return p if p.suffix == ".jsonl" or p.is_file() else split_path(p, split)


def _load(path, split=None, **kw) -> Dataset:
    f = Path(path) if split is None else _dataset_file(path, split)
    if not f.exists():
        raise UsageError(f"dataset file not found: {f}")
    return load_dataset(f, split=split, **kw)


def _constants(datasets) -> list[str]:
    out = set()
    for ds in datasets:
        for s in ds:
            for e in s.types:
                try:
                    out.update(parse_atom(e).args)
                except ParseError:
                    pass
    return sorted(out)


def _build(args, dim: int, layers: int, scales, constants=()):
    tdim = _even(args.time_dim or dim)
    tc = TimeEncodingConfig(scales[0], scales[1], tdim)
    if args.program:
        return AndttModel(_read_program(args.program), tc, layers, constants=constants, seed=args.seed)
    if not args.types:
        raise UsageError("flat models need an event vocabulary (--types or training data)")
    coarse = None if args.coarse == "none" else "single"
    return AnhpModel(args.types, dim, tc, layers, coarse=coarse, use_layer_norm=args.layer_norm,
                     use_ffn=args.ffn, seed=args.seed)


# -- commands ------------------------------------------------------------------------

def cmd_init(args) -> int:
    if args.types:
        args.types = [t for t in args.types.split(",") if t]
    if args.scales:
        scales = tuple(args.scales)
    elif args.data:
        scales = estimate_scales(_load(args.data, "train"))
    else:
        raise UsageError("give --scales M_MIN M_MAX or --data to estimate time scales")
    model = _build(args, args.dim, args.layers, scales, args.constants.split(",") if args.constants else ())
    save_checkpoint(model, args.out, extra={"created_by": "init"})
    print(f"wrote {args.out}: {model.kind} model with {model.params.count()} parameters")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.data:
        tr, dv = _load(args.data, "train"), _load(args.data, "dev")
    elif args.train:
        tr = _load(args.train)
        dv = _load(args.dev) if args.dev else Dataset([])
    else:
        raise UsageError("give --data DIR or --train FILE")
    if len(tr) == 0:
        raise UsageError("training set is empty")
    if args.model == "andtt" and not args.program:
        raise UsageError("--model andtt needs --program")
    args.types = None if args.program else sorted(set(tr.vocabulary()) | set(dv.vocabulary()))
    scales = estimate_scales(tr)
    constants = _constants([tr, dv]) if args.program else ()
    cfg = TrainingConfig(lr=args.lr, max_epochs=args.epochs, patience=args.patience, seed=args.seed,
                         downsample=args.downsample)
    dims = args.grid_dims or [args.dim]
    layer_grid = args.grid_layers or [args.layers]
    grid, best = [], None
    for d in dims:
        for L in layer_grid:
            model = _build(args, d, L, scales, constants)
            log_path = args.log if len(dims) * len(layer_grid) == 1 else None
            try:
                res = train(model, tr, dv, cfg, log_path=log_path, verbose=args.verbose)
            except TrainingDiverged as exc:
                model.params.load_arrays(exc.checkpoint)
                if args.out:
                    save_checkpoint(model, args.out, training={"aborted": str(exc), "log": exc.log})
                print(f"training aborted: {exc}", file=sys.stderr)
                return EXIT_ABORT
            dev_nll = res.log[res.best_epoch - 1].get("dev_nll", res.log[res.best_epoch - 1]["train_nll"])
            grid.append({"dim": d, "layers": L, "dev_nll": dev_nll, "best_epoch": res.best_epoch})
            if best is None or dev_nll < best[0]:
                best = (dev_nll, model, res, d, L)
    dev_nll, model, res, d, L = best
    if len(grid) > 1:
        print(json.dumps({"grid": grid, "winner": {"dim": d, "layers": L}}))
    training = {"config": cfg.to_dict(), "log": [{k: v for k, v in e.items() if k != "wall_time"} for e in res.log],
                "best_epoch": res.best_epoch, "grid": grid}
    save_checkpoint(model, args.out, training=training)
    print(f"wrote {args.out}: dim={d} layers={L} best epoch {res.best_epoch}, dev NLL/event {dev_nll:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    ds = _load(args.data, None if Path(args.data).suffix == ".jsonl" else "test")
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in metrics if m not in METRICS]
    if bad:
        raise UsageError(f"unknown metric(s) {bad}; choose from {list(METRICS)}")
    rep = evaluate(model, ds, metrics, n_time_samples=args.samples, restrict=args.restrict, seed=args.seed,
                   n_replicates=args.replicates, threads=args.threads)
    out = rep.to_dict()
    if "nll" in metrics:
        truth = [s.meta.get("true_ll") for s in ds]
        if truth and all(t is not None for t in truth):
            out["generator_nll_per_event"] = -sum(truth) / max(1, ds.n_events())
    text = json.dumps(out, indent=2)
    if args.out_json:
        Path(args.out_json).write_text(text + "\n", encoding="utf-8")
    if args.out_csv:
        Path(args.out_csv).write_text(rep.to_csv(), encoding="utf-8")
    summary = {k: v for k, v in out.items() if k != "per_sequence"}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_sample(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    if args.horizon is not None:
        ds = generate_synthetic(model, args.n, seed=args.seed, T=args.horizon, record_ll=not args.no_ll)
    else:
        lo, hi = args.length_uniform
        if lo < 1 or hi < lo:
            raise UsageError("--length-uniform needs 1 <= LO <= HI")
        ds = generate_synthetic(model, args.n, seed=args.seed, length=(lo, hi), record_ll=not args.no_ll)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} sequences ({ds.n_events()} events) to {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    prog = _read_program(args.program)
    tc = TimeEncodingConfig(1.0, 2.0, _even(args.time_dim))
    probe = _load(args.probe) if args.probe else None
    model = AndttModel(prog, tc, args.layers, constants=_constants([probe]) if probe else ())
    kinds = {}
    for r in model.program.rules:
        kinds[r.kind] = kinds.get(r.kind, 0) + 1
    print(f"program OK: {len(model.program.rules)} rules "
          f"({', '.join(f'{n} {k}' for k, n in sorted(kinds.items()))}), {len(prog.facts)} initial facts")
    print(f"event functors: {', '.join(sorted(model.event_functors))}")
    print("dimensions: " + ", ".join(f"{f}={n}" for f, n in sorted(model.dims.items())))
    print(f"parameters (layers={args.layers}, time dim={tc.D}): {model.params.count()}")
    if probe is not None:
        for i, seq in enumerate(probe):
            tl = model.timeline(seq, i)
            print(f"sequence {i}:")
            edges = [0.0] + tl.times
            for k, st in enumerate(tl.states):
                evs = sorted(str(a) for a in possible_events(st, model.event_functors))
                end = f"{tl.times[k]:g}]" if k < len(tl.times) else f"{seq.T:g})"
                opening = "[" if k == 0 else "("
                print(f"  {opening}{edges[k]:g}, {end}: {', '.join(evs) if evs else '(none)'}")
                if k < len(tl.events):
                    print(f"  event {tl.events[k]} at {tl.times[k]:g}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anhp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, default=1, help="worker cap for per-sequence evaluation")
    sub = ap.add_subparsers(dest="command", required=True)

    def model_opts(p):
        p.add_argument("--program", help="DTT program; selects the A-NDTT model")
        p.add_argument("--dim", type=int, default=16)
        p.add_argument("--layers", type=int, default=1)
        p.add_argument("--time-dim", type=int, default=None, help="time embedding size (default: --dim)")
        p.add_argument("--coarse", choices=["single", "none"], default="single",
                       help="flat model: share one query stack across types, or embed each type")
        p.add_argument("--layer-norm", action="store_true")
        p.add_argument("--ffn", action="store_true")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("init", help="write a randomly initialised model checkpoint")
    model_opts(p)
    p.add_argument("--types", help="comma-separated event types (flat model)")
    p.add_argument("--scales", type=float, nargs=2, metavar=("M_MIN", "M_MAX"))
    p.add_argument("--data", help="dataset directory used to estimate the time scales")
    p.add_argument("--constants", help="extra constants for :split expansion")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="fit a model by maximum likelihood")
    model_opts(p)
    p.add_argument("--data", help="directory holding train.jsonl and dev.jsonl")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--model", choices=["anhp", "andtt"], default="anhp")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--downsample", type=int, default=None)
    p.add_argument("--grid-dims", type=_ints, default=None, metavar="D1,D2,...")
    p.add_argument("--grid-layers", type=_ints, default=None, metavar="L1,L2,...")
    p.add_argument("--log", help="JSON-lines training log")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="NLL, time RMSE and type error with bootstrap CIs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="test file, or a directory holding test.jsonl")
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--restrict", help="restricted type set, e.g. 'message(eve,sales,*)'")
    p.add_argument("--samples", type=int, default=100, help="thinning draws per time prediction")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="simulate sequences from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--length-uniform", type=int, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--horizon", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-ll", action="store_true", help="skip recording the generator log-likelihood")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("check", help="parse and compile a DTT program")
    p.add_argument("program")
    p.add_argument("--probe", help="dataset whose first sequences are replayed against the program")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--time-dim", type=int, default=8)
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ParseError, CompileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROGRAM
    except (UsageError, ConfigError, SequenceError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
