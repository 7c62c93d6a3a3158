"""Command-line entry point.

Machine-readable JSON goes to stdout and diagnostics to stderr. Failures exit
with status 2 and one stderr line of the form ``error: <Kind>: <message>``;
usage errors exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .accountant import calibrate_sigma, epsilon_for
from .checklist import grade, render_report
from .dpsgd.clipping import GradClipPolicy
from .dpsgd.data import make_blobs, write_csv
from .dpsgd.train import DEFAULT_DELTA, TrainConfig, train
from .errors import DPReliaError, InvalidInputError
from .harness import (
    DEFAULT_ALPHA,
    Comparison,
    ExperimentManifest,
    compare_methods,
    load_records,
    run_sweep,
    split_by_method,
    summarize,
    summary_csv,
)
from .seedhack import ALTERNATIVES, MODES, PAIRINGS, SeedHackConfig, pool_from_records, simulate, synthetic_pool, to_markdown

logger = logging.getLogger("dprelia")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _envelope(command: str, config: dict, **payload) -> dict:
    return {"tool": "dprelia", "version": __version__, "command": command, "config": config, **payload}


def _echo_header(config: dict) -> str:
    return f"<!-- dprelia {__version__} config: {json.dumps(config, sort_keys=True)} -->\n"


def _write(path: Optional[str], text: str) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _write_echo(path: str | Path, command: str, config: dict) -> None:
    Path(str(path) + ".config.json").write_text(_dumps(_envelope(command, config)))


def _emit(obj: dict, out: Optional[str] = None) -> None:
    text = _dumps(obj)
    sys.stdout.write(text)
    _write(out, text)


def _seed(value: str) -> Optional[int]:
    if value == "auto":
        return None
    try:
        return int(value, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seed must be 'auto' or an integer, got {value!r}") from exc


def _epsilon(value: str) -> float:
    return math.inf if value.lower() in ("inf", "infinity") else float(value)


def _inf_safe(x: float):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


# --- subcommands --------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    config = {"n": args.n, "dims": args.dims, "classes": args.classes, "sep": args.sep, "seed": args.seed}
    X, y = make_blobs(**config)
    write_csv(args.out, X, y)
    _write_echo(args.out, "gen-data", config)
    _emit(_envelope("gen-data", config, path=str(args.out), rows=int(len(y))))


def cmd_train(args) -> None:
    if args.epsilon is not None and not math.isinf(args.epsilon) and args.sigma is None:
        raise InvalidInputError(
            f"private run at epsilon={args.epsilon:g} has no noise multiplier; "
            "run `dprelia calibrate` and pass its sigma with --sigma"
        )
    clip = GradClipPolicy.parse(args.clip)
    config = TrainConfig(
        dataset_id=args.dataset, model=args.model, learning_rate=args.lr, batch_size=args.batch_size,
        steps=args.steps, clip=clip, sigma=0.0 if args.sigma is None else args.sigma, delta=args.delta,
        target_epsilon=None if args.epsilon is None or math.isinf(args.epsilon) else args.epsilon,
    )
    rec = train(config, args.seed, unsafe_fixed_seed=args.unsafe_fixed_seed, method_id=args.method_id)
    if args.out:
        with open(args.out, "a") as fh:
            fh.write(rec.to_json() + "\n")
        _write_echo(args.out, "train", config.to_dict())
    _emit(_envelope("train", {k: _inf_safe(v) for k, v in config.to_dict().items()}, record=rec.to_dict()))


def cmd_sweep(args) -> None:
    manifest = ExperimentManifest.load(args.manifest)
    if args.runs is not None:
        manifest = ExperimentManifest.from_dict({**manifest.to_dict(), "runs_per_cell": args.runs})
    out_dir = Path(args.out)
    runs_path = out_dir / "runs.jsonl"
    if runs_path.exists() and runs_path.stat().st_size and not args.overwrite:
        raise InvalidInputError(f"{runs_path} already holds records; pass --overwrite to replace it")
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_path.write_text("")
    config = {**manifest.to_dict(), "workers": args.workers, "unsafe_fixed_seed": args.unsafe_fixed_seed}
    (out_dir / "config.json").write_text(_dumps(_envelope("sweep", config)))
    records = run_sweep(manifest, runs_path, workers=args.workers, unsafe_fixed_seed=args.unsafe_fixed_seed)
    summaries = summarize(records)
    (out_dir / "summary.csv").write_text(summary_csv(summaries))
    failed = sum(not r.ok for r in records)
    _emit(_envelope("sweep", config, runs=str(runs_path), records=len(records), failed=failed,
                    summary=[_summary_dict(s) for s in summaries]))


def _summary_dict(s) -> dict:
    return {k: _inf_safe(v) for k, v in vars(s).items()}


def cmd_summarize(args) -> None:
    summaries = summarize(load_records(args.runs))
    config = {"runs": str(args.runs)}
    if args.csv:
        _write(args.csv, summary_csv(summaries))
        _write_echo(args.csv, "summarize", config)
    _emit(_envelope("summarize", config, cells=[_summary_dict(s) for s in summaries]), args.out)


def cmd_compare(args) -> None:
    records = load_records(args.runs)
    if args.runs_b:
        records = records + load_records(args.runs_b)
    by_method = split_by_method(records)
    for m in (args.method_a, args.method_b):
        if m not in by_method:
            raise InvalidInputError(f"no records for method {m!r}; found {sorted(by_method)}")
    comp = compare_methods(by_method[args.method_a], by_method[args.method_b], args.alpha, args.pair_key)
    config = {"runs": str(args.runs), "runs_b": args.runs_b, "method_a": args.method_a,
              "method_b": args.method_b, "alpha": args.alpha, "pair_key": args.pair_key}
    if args.markdown:
        _write(args.markdown, _echo_header(config) + comp.to_markdown())
    _emit(_envelope("compare", config, **comp.to_dict()), args.out)


def cmd_seedhack(args) -> None:
    if (args.runs is None) == (args.synthetic is None):
        raise InvalidInputError("give exactly one pool source: --runs or --synthetic mean,std,size")
    if args.synthetic is not None:
        try:
            mean, std, size = args.synthetic.split(",")
            pool = synthetic_pool(float(mean), float(std), int(size), args.pool_seed)
        except ValueError as exc:
            raise InvalidInputError(f"--synthetic expects mean,std,size, got {args.synthetic!r}") from exc
        source = {"synthetic": args.synthetic, "pool_seed": args.pool_seed}
    else:
        records = load_records(args.runs)
        if args.method:
            records = [r for r in records if r.method_id == args.method]
        if args.model:
            records = [r for r in records if r.model == args.model]
        if args.epsilon is not None:
            records = [r for r in records if r.epsilon == args.epsilon]
        pool = pool_from_records(records)
        source = {"runs": str(args.runs), "method": args.method, "model": args.model,
                  "epsilon": None if args.epsilon is None else _inf_safe(args.epsilon)}
    config = SeedHackConfig(
        pool_size=len(pool), subset_size=args.subset_size, top_k=args.top_k, baseline_k=args.top_k,
        trials=args.trials, alpha=args.alpha, mode=args.mode, pairing=args.pairing,
        alternative=args.alternative, disjoint=args.disjoint,
    )
    result = simulate(pool, config, args.seed)
    echo = {**source, **vars(config), "seed": result.seed}
    if args.markdown:
        _write(args.markdown, _echo_header(echo) + to_markdown([(math.inf, result)]))
    payload = result.to_dict()
    payload.pop("config")
    _emit(_envelope("seedhack", echo, **payload), args.out)


def cmd_account(args) -> None:
    eps, order = epsilon_for(args.sigma, args.q, args.steps, args.delta)
    config = {"sigma": args.sigma, "sample_rate": args.q, "steps": args.steps, "delta": args.delta}
    _emit(_envelope("account", config, epsilon=_inf_safe(eps), best_order=order), args.out)


def cmd_calibrate(args) -> None:
    sigma = calibrate_sigma(args.epsilon, args.delta, args.q, args.steps)
    eps, order = epsilon_for(sigma, args.q, args.steps, args.delta)
    config = {"target_epsilon": args.epsilon, "sample_rate": args.q, "steps": args.steps, "delta": args.delta}
    _emit(_envelope("calibrate", config, sigma=sigma, epsilon=eps, best_order=order), args.out)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read JSON from {path}: {exc}") from exc


def cmd_checklist(args) -> None:
    manifest = ExperimentManifest.load(args.manifest)
    records = load_records(args.runs) if args.runs else None
    comparison = Comparison.from_dict(_read_json(args.comparison)) if args.comparison else None
    declared = _read_json(args.declared) if args.declared else {}
    report = grade(manifest, records, comparison, declared)
    config = {"manifest": str(args.manifest), "runs": args.runs, "comparison": args.comparison,
              "declared": args.declared, "format": args.format}
    if args.format == "json":
        _emit(_envelope("checklist", config, report=report.to_dict()), args.out)
    else:
        text = _echo_header(config) + render_report(report, "markdown")
        sys.stdout.write(text)
        _write(args.out, text)


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dprelia", description="Run, account and compare differentially private training experiments.")
    p.add_argument("--version", action="version", version=f"dprelia {__version__}")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic Gaussian-blob dataset as CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--dims", type=int, default=20)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--sep", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--dataset", required=True, help="CSV path or blobs:n=..,dims=..,classes=..,sep=..,seed=..")
    t.add_argument("--model", default="logreg", help="logreg or mlp:<width>")
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--clip", default="none", help="none, basic:<C> or auto:<gamma>")
    t.add_argument("--sigma", type=float, default=None, help="noise multiplier (see `calibrate`)")
    t.add_argument("--epsilon", type=_epsilon, default=None, help="target budget the sigma was calibrated for")
    t.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    t.add_argument("--seed", type=_seed, default=None, help="'auto' (default) or an integer")
    t.add_argument("--unsafe-fixed-seed", action="store_true",
                   help="allow a fixed seed on a private run; the record is marked not privacy-valid")
    t.add_argument("--method-id", default="dpsgd")
    t.add_argument("--out", help="append the record to this runs.jsonl")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run every cell of a manifest several times")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--runs", type=int, default=None, help="runs per cell (manifest default: 3)")
    s.add_argument("--workers", type=int, default=None, help="parallel runs (env DPRELIA_WORKERS, default 1)")
    s.add_argument("--unsafe-fixed-seed", action="store_true")
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("summarize", help="per-cell accuracy statistics")
    m.add_argument("--runs", required=True)
    m.add_argument("--csv", help="write summary CSV here")
    m.add_argument("--out", help="also write the JSON here")
    m.set_defaults(func=cmd_summarize)

    c = sub.add_parser("compare", help="paired t-test of two methods")
    c.add_argument("--runs", required=True)
    c.add_argument("--runs-b", default=None, help="second records file, if methods were run separately")
    c.add_argument("--method-a", required=True)
    c.add_argument("--method-b", required=True)
    c.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    c.add_argument("--pair-key", choices=("run", "setting"), default="run")
    c.add_argument("--out", help="write the JSON here")
    c.add_argument("--markdown", help="write a Markdown report here")
    c.set_defaults(func=cmd_compare)

    h = sub.add_parser("seedhack", help="simulate seed cherry-picking")
    h.add_argument("--runs", default=None, help="runs.jsonl holding one cell (filter with --method)")
    h.add_argument("--method", default=None, help="keep only this method's records")
    h.add_argument("--model", default=None, help="keep only this model's records")
    h.add_argument("--epsilon", type=_epsilon, default=None, help="keep only this budget's records")
    h.add_argument("--synthetic", default=None, help="mean,std,size of a normal pool")
    h.add_argument("--pool-seed", type=int, default=0)
    h.add_argument("--mode", choices=MODES, default="cherrypick")
    h.add_argument("--trials", type=int, default=1000)
    h.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    h.add_argument("--subset-size", type=int, default=10)
    h.add_argument("--top-k", type=int, default=3)
    h.add_argument("--pairing", choices=PAIRINGS, default="draw")
    h.add_argument("--alternative", choices=ALTERNATIVES, default="greater")
    h.add_argument("--disjoint", action="store_true")
    h.add_argument("--seed", type=_seed, default=None, help="'auto' (default) or an integer")
    h.add_argument("--out", help="write the JSON here")
    h.add_argument("--markdown", help="write a Markdown table here")
    h.set_defaults(func=cmd_seedhack)

    a = sub.add_parser("account", help="epsilon spent by a DP-SGD run")
    a.add_argument("--sigma", type=float, required=True)
    a.add_argument("--q", type=float, required=True, help="sampling rate L/N")
    a.add_argument("--steps", type=int, required=True)
    a.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    a.add_argument("--out")
    a.set_defaults(func=cmd_account)

    k = sub.add_parser("calibrate", help="smallest noise multiplier meeting a budget")
    k.add_argument("--epsilon", type=float, required=True)
    k.add_argument("--q", type=float, required=True, help="sampling rate L/N")
    k.add_argument("--steps", type=int, required=True)
    k.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    k.add_argument("--out")
    k.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("checklist", help="grade an experiment against the reproducibility checklist")
    r.add_argument("--manifest", required=True)
    r.add_argument("--runs", default=None)
    r.add_argument("--comparison", default=None, help="JSON written by `compare`")
    r.add_argument("--declared", default=None, help="JSON answers for items not derivable from data")
    r.add_argument("--format", choices=("markdown", "json"), default="markdown")
    r.add_argument("--out")
    r.set_defaults(func=cmd_checklist)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DPReliaError, ValueError, ArithmeticError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
