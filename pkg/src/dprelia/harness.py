"""Multi-seed sweeps, variability summaries and paired method comparison.

A manifest crosses every method with every setting and repeats each cell
``runs_per_cell`` times. Records are appended to a JSON-lines file as runs
finish, so an interrupted sweep keeps what it already paid for.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import rng as rngmod
from .accountant import calibrate_sigma, epsilon_for
from .dpsgd.clipping import GradClipPolicy
from .dpsgd.data import load_dataset
from .dpsgd.models import Layout
from .dpsgd.train import DEFAULT_DELTA, RunRecord, TrainConfig, train
from .errors import ConfigurationError, DivergedRunError, InvalidInputError, PairingError, SeedPolicyError
from .stats import PairedSample, TestReport, paired_ttest, raw_summary

logger = logging.getLogger(__name__)

DEFAULT_RUNS_PER_CELL = 3
DEFAULT_ALPHA = 0.05
SUMMARY_COLUMNS = ["method", "dataset", "model", "epsilon", "n", "mean", "median", "max", "min", "std", "max_minus_min"]


def _eps_value(value) -> float:
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "infinity", "none")):
        return math.inf
    return float(value)


def _eps_text(eps: float) -> str:
    return "inf" if math.isinf(eps) else f"{eps:g}"


@dataclass(frozen=True)
class Setting:
    dataset_id: str
    model: str = "logreg"
    epsilon: float = math.inf
    regime: Optional[str] = None  # "from-scratch" / "fine-tune", for the checklist

    @property
    def key(self) -> tuple:
        return (self.dataset_id, self.model, self.epsilon)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilon"] = _eps_text(self.epsilon)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Setting":
        return cls(d["dataset_id"], d.get("model", "logreg"), _eps_value(d.get("epsilon")), d.get("regime"))


@dataclass(frozen=True)
class MethodSpec:
    """Training hyperparameters of a method; the setting supplies data, model and budget."""

    method_id: str
    learning_rate: float = 0.1
    batch_size: int = 256
    steps: int = 200
    clip: str = "basic:5.0"

    def config_for(self, setting: Setting, delta: float, sigma: Optional[float]) -> TrainConfig:
        private = not math.isinf(setting.epsilon)
        return TrainConfig(
            dataset_id=setting.dataset_id,
            model=setting.model,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            steps=self.steps,
            clip=GradClipPolicy.parse(self.clip) if private else GradClipPolicy.none(),
            sigma=sigma if private else 0.0,
            delta=delta,
            target_epsilon=setting.epsilon if private else None,
        )


@dataclass(frozen=True)
class ExperimentManifest:
    methods: tuple
    settings: tuple
    runs_per_cell: int = DEFAULT_RUNS_PER_CELL
    alpha: float = DEFAULT_ALPHA
    delta: float = DEFAULT_DELTA
    seed: Optional[int] = None  # master seed; None draws every run seed from OS entropy

    def __post_init__(self):
        if self.runs_per_cell < 1:
            raise ConfigurationError(f"runs_per_cell must be >= 1, got {self.runs_per_cell}")
        if not self.methods or not self.settings:
            raise ConfigurationError("a manifest needs at least one method and one setting")
        ids = [m.method_id for m in self.methods]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate method ids in {ids}")
        keys = [s.key for s in self.settings]
        if len(set(keys)) != len(keys):
            raise ConfigurationError("duplicate settings in manifest")
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def private(self) -> bool:
        return any(not math.isinf(s.epsilon) for s in self.settings)

    def to_dict(self) -> dict:
        return {
            "methods": [asdict(m) for m in self.methods],
            "settings": [s.to_dict() for s in self.settings],
            "runs_per_cell": self.runs_per_cell,
            "alpha": self.alpha,
            "delta": self.delta,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentManifest":
        try:
            return cls(
                methods=tuple(MethodSpec(**m) for m in d["methods"]),
                settings=tuple(Setting.from_dict(s) for s in d["settings"]),
                runs_per_cell=int(d.get("runs_per_cell", DEFAULT_RUNS_PER_CELL)),
                alpha=float(d.get("alpha", DEFAULT_ALPHA)),
                delta=float(d.get("delta", DEFAULT_DELTA)),
                seed=d.get("seed"),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed manifest: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc


@dataclass(frozen=True)
class Job:
    run_id: str
    method_id: str
    run_index: int
    seed: int
    config: TrainConfig
    privacy_valid: bool


def run_id_for(method_id: str, setting: Setting, run_index: int) -> str:
    return f"{method_id}|{setting.dataset_id}|{setting.model}|eps={_eps_text(setting.epsilon)}|r{run_index:04d}"


def plan(manifest: ExperimentManifest, *, unsafe_fixed_seed: bool = False) -> list[Job]:
    """Resolve every run of the sweep: configs (with calibrated noise) and seeds."""
    if manifest.seed is not None and manifest.private and not unsafe_fixed_seed:
        raise SeedPolicyError(
            "a fixed master seed voids the privacy guarantee of private runs; "
            "opt in with --unsafe-fixed-seed"
        )
    total = len(manifest.methods) * len(manifest.settings) * manifest.runs_per_cell
    if manifest.seed is None:
        seeds = [rngmod.fresh_seed() for _ in range(total)]
    else:
        seeds = rngmod.child_seeds(manifest.seed, total)

    sigma_cache: dict = {}
    jobs = []
    i = 0
    for method in manifest.methods:
        for setting in manifest.settings:
            sigma = None
            if not math.isinf(setting.epsilon):
                n_train = load_dataset(setting.dataset_id).n_train
                if method.batch_size > n_train:
                    raise ConfigurationError(
                        f"{method.method_id}: batch size {method.batch_size} exceeds {n_train} training rows"
                    )
                key = (setting.epsilon, manifest.delta, method.batch_size / n_train, method.steps)
                if key not in sigma_cache:
                    sigma_cache[key] = calibrate_sigma(*key)
                sigma = sigma_cache[key]
            config = method.config_for(setting, manifest.delta, sigma)
            for r in range(manifest.runs_per_cell):
                jobs.append(Job(
                    run_id=run_id_for(method.method_id, setting, r),
                    method_id=method.method_id,
                    run_index=r,
                    seed=seeds[i],
                    config=config,
                    privacy_valid=manifest.seed is None,
                ))
                i += 1
    return jobs


def failed_record(job: Job, error: str) -> RunRecord:
    cfg = job.config
    data = load_dataset(cfg.dataset_id)
    layout = Layout.from_spec(cfg.model, data.input_dim, data.num_classes)
    spent = math.inf
    if cfg.sigma > 0:
        spent, _ = epsilon_for(cfg.sigma, cfg.batch_size / data.n_train, cfg.steps, cfg.delta)
    eps = cfg.target_epsilon if cfg.target_epsilon is not None else spent
    return RunRecord(
        run_id=job.run_id, method_id=job.method_id, dataset_id=cfg.dataset_id, model=cfg.model,
        layout=layout.describe(), epsilon=eps, epsilon_spent=spent,
        delta=cfg.delta, sigma=cfg.sigma, clip=cfg.clip.describe(), seed=job.seed,
        privacy_valid=job.privacy_valid, run_index=job.run_index, steps=cfg.steps,
        epochs=cfg.steps * cfg.batch_size / data.n_train, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, skipped_steps=0, test_accuracy=None, train_accuracy=None,
        wall_time_seconds=0.0, status="diverged", error=error,
    )


def execute(job: Job) -> RunRecord:
    try:
        rec = train(
            job.config, job.seed, unsafe_fixed_seed=True, method_id=job.method_id,
            run_id=job.run_id, run_index=job.run_index,
        )
    except DivergedRunError as exc:
        return failed_record(job, str(exc))
    return replace(rec, privacy_valid=job.privacy_valid)


def resolve_workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = int(os.environ.get("DPRELIA_WORKERS", "1"))
    if workers < 1:
        raise ConfigurationError(f"worker count must be >= 1, got {workers}")
    return workers


def run_sweep(
    manifest: ExperimentManifest,
    out_path: Optional[str | Path] = None,
    *,
    workers: Optional[int] = None,
    unsafe_fixed_seed: bool = False,
) -> list[RunRecord]:
    """Run every cell of the manifest and return records in plan order.

    With ``out_path``, each record is appended to that JSON-lines file as soon as it completes.
    """
    jobs = plan(manifest, unsafe_fixed_seed=unsafe_fixed_seed)
    workers = resolve_workers(workers)
    out = None
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        out = open(out_path, "a")
    results: dict[str, RunRecord] = {}
    try:
        def persist(rec: RunRecord) -> None:
            results[rec.run_id] = rec
            if out is not None:
                out.write(rec.to_json() + "\n")
                out.flush()
            if not rec.ok:
                logger.warning("run %s failed: %s", rec.run_id, rec.error)

        if workers == 1:
            for job in jobs:
                persist(execute(job))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(execute, job) for job in jobs]
                for fut in as_completed(futures):
                    persist(fut.result())
    finally:
        if out is not None:
            out.close()
    return [results[job.run_id] for job in jobs]


def write_records(path: str | Path, records: Iterable[RunRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def load_records(path: str | Path) -> list[RunRecord]:
    records = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        records.append(RunRecord.from_json(line))
                    except (ValueError, TypeError, KeyError) as exc:
                        raise InvalidInputError(f"{path}:{lineno}: bad run record ({exc})") from exc
    except OSError as exc:
        raise InvalidInputError(f"cannot read records {path}: {exc}") from exc
    return records


# --- summaries ----------------------------------------------------------------------

def cell_key(rec: RunRecord) -> tuple:
    return (rec.method_id, rec.dataset_id, rec.model, rec.epsilon)


@dataclass(frozen=True)
class VariabilitySummary:
    method: str
    dataset: str
    model: str
    epsilon: float
    n: int
    mean: float
    median: float
    max: float
    min: float
    std: float
    max_minus_min: float

    def row(self) -> list:
        return [self.method, self.dataset, self.model, _eps_text(self.epsilon), self.n,
                repr(self.mean), repr(self.median), repr(self.max), repr(self.min),
                repr(self.std), repr(self.max_minus_min)]


def summarize_values(values: Sequence[float]) -> dict:
    mean, std = raw_summary(values)
    hi, lo = max(values), min(values)
    return {"n": len(values), "mean": mean, "median": statistics.median(values),
            "max": hi, "min": lo, "std": std, "max_minus_min": hi - lo}


def summarize(records: Iterable[RunRecord]) -> list[VariabilitySummary]:
    """Test-accuracy statistics per (method, dataset, model, epsilon) cell, failed runs excluded."""
    cells: dict[tuple, list[float]] = {}
    for rec in records:
        values = cells.setdefault(cell_key(rec), [])
        if rec.ok:
            values.append(rec.test_accuracy)
    out = []
    for key in sorted(cells, key=lambda k: (k[0], k[1], k[2], k[3])):
        values = cells[key]
        if not values:
            logger.warning("cell %s has no successful runs; excluded from the summary", key)
            continue
        out.append(VariabilitySummary(*key, **summarize_values(values)))
    return out


def summary_csv(summaries: Sequence[VariabilitySummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        w.writerow(s.row())
    return buf.getvalue()


# --- comparison ---------------------------------------------------------------------

@dataclass
class Comparison:
    method_a: str
    method_b: str
    pair_key: str
    report: TestReport
    cells: list = field(default_factory=list)
    dropped_pairs: int = 0
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method_a": self.method_a,
            "method_b": self.method_b,
            "pair_key": self.pair_key,
            "report": _json_safe(self.report.to_dict()),
            "verdict": self.report.verdict(),
            "cells": [_json_safe(c) for c in self.cells],
            "dropped_pairs": self.dropped_pairs,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Comparison":
        rep = {k: _json_restore(v) for k, v in d["report"].items()}
        return cls(d["method_a"], d["method_b"], d["pair_key"], TestReport.from_dict(rep),
                   d.get("cells", []), d.get("dropped_pairs", 0), d.get("warnings", []))

    def to_markdown(self) -> str:
        r = self.report
        lines = [
            f"# {self.method_a} vs {self.method_b}",
            "",
            f"Paired on {self.pair_key}; {r.n} pairs, {self.dropped_pairs} dropped for failed runs.",
            "",
            "| n | mean A | mean B | mean diff | t | p | Cohen's d | significant | runs for 80% power |",
            "|---|---|---|---|---|---|---|---|---|",
            f"| {r.n} | {r.mu1:.4f} | {r.mu2:.4f} | {r.mu_d:.4f} | {r.t_stat:.4g} | {r.p_value:.4g} | "
            f"{r.cohen_d:.4g} | {'yes' if r.significant else 'no'} | "
            f"{'inf' if r.required_n is None else r.required_n} |",
            "",
            "## Per setting",
            "",
            "| dataset | model | epsilon | n | mean A | mean B | p |",
            "|---|---|---|---|---|---|---|",
        ]
        for c in self.cells:
            p = "-" if c.get("p_value") is None else f"{c['p_value']:.4g}"
            lines.append(
                f"| {c['dataset']} | {c['model']} | {c['epsilon']} | {c['n']} | "
                f"{c['mean_a']:.4f} | {c['mean_b']:.4f} | {p} |"
            )
        lines += ["", f"Verdict: {r.verdict()}"]
        for w in self.warnings:
            lines.append(f"Warning: {w}")
        return "\n".join(lines) + "\n"


def _json_safe(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            v = "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
        out[k] = v
    return out


def _json_restore(v):
    if v in ("nan", "inf", "-inf"):
        return float(v)
    return v


def _index(records: Iterable[RunRecord], pair_key: str) -> dict:
    out: dict = {}
    for rec in records:
        key = (rec.dataset_id, rec.model, rec.epsilon, rec.run_index)
        if key in out:
            raise PairingError(f"duplicate pairing key {key} for method {rec.method_id}")
        out[key] = rec
    return out


def compare_methods(
    records_a: Sequence[RunRecord],
    records_b: Sequence[RunRecord],
    alpha: float = DEFAULT_ALPHA,
    pair_key: str = "run",
) -> Comparison:
    """Paired t-test and effect size of method A against method B.

    ``pair_key="run"`` pairs run j of a setting with run j of the same setting;
    ``pair_key="setting"`` pairs the per-setting mean accuracies.
    """
    if pair_key not in ("run", "setting"):
        raise InvalidInputError(f"pair_key must be 'run' or 'setting', got {pair_key!r}")
    for recs in (records_a, records_b):
        if len({r.method_id for r in recs}) > 1:
            raise PairingError("each side of a comparison must hold a single method")
    if not records_a or not records_b:
        raise PairingError("nothing to compare: a record set is empty")
    ia, ib = _index(records_a, pair_key), _index(records_b, pair_key)
    only_a, only_b = sorted(set(ia) - set(ib), key=repr), sorted(set(ib) - set(ia), key=repr)
    if only_a or only_b:
        raise PairingError(
            f"unmatched pairing keys: {len(only_a)} only in A, {len(only_b)} only in B "
            f"(e.g. {(only_a or only_b)[0]})",
            only_a, only_b,
        )
    method_a, method_b = records_a[0].method_id, records_b[0].method_id

    by_setting: dict[tuple, list[tuple[float, float]]] = {}
    dropped = 0
    for key in sorted(ia, key=lambda k: (k[0], k[1], k[2], k[3])):
        ra, rb = ia[key], ib[key]
        if not (ra.ok and rb.ok):
            dropped += 1
            continue
        by_setting.setdefault(key[:3], []).append((ra.test_accuracy, rb.test_accuracy))

    cells = []
    for (dataset, model, eps), pairs in by_setting.items():
        a = [p[0] for p in pairs]
        b = [p[1] for p in pairs]
        cell = {"dataset": dataset, "model": model, "epsilon": _eps_text(eps), "n": len(pairs),
                "mean_a": statistics.fmean(a), "mean_b": statistics.fmean(b), "p_value": None}
        if len(pairs) >= 2:
            cell["p_value"] = paired_ttest(PairedSample.of(a, b), alpha).p_value
        cells.append(cell)

    if pair_key == "run":
        a = [p[0] for pairs in by_setting.values() for p in pairs]
        b = [p[1] for pairs in by_setting.values() for p in pairs]
    else:
        a = [c["mean_a"] for c in cells]
        b = [c["mean_b"] for c in cells]
    if len(a) < 2:
        raise PairingError(f"only {len(a)} usable pairs after dropping failed runs; need at least 2")
    report = paired_ttest(PairedSample.of(a, b), alpha)

    warnings = []
    if dropped:
        warnings.append(f"{dropped} pairs dropped because a run failed")
    if report.required_n is not None and report.required_n > report.n:
        warnings.append(
            f"observed effect size {report.cohen_d:.3g} needs about {report.required_n} pairs "
            f"for 80% power; only {report.n} available"
        )
    for w in warnings:
        logger.warning(w)
    return Comparison(method_a, method_b, pair_key, report, cells, dropped, warnings)


def split_by_method(records: Iterable[RunRecord]) -> dict[str, list[RunRecord]]:
    out: dict[str, list[RunRecord]] = {}
    for rec in records:
        out.setdefault(rec.method_id, []).append(rec)
    return out
