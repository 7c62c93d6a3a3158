"""Reproducibility checklist grading.

Ten items on two axes. Generalizability asks whether a method's gains are
likely to carry over to other settings; reliability asks whether the
evaluation supports the reported numbers. Items that can be read off the
manifest, the run records and the comparison are graded from data. The rest
must be declared by the user and are never guessed.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

from .errors import IncompleteGradingError, InvalidInputError
from .harness import ExperimentManifest, cell_key

PASS, FAIL, NA = "pass", "fail", "n/a"
STATUSES = (PASS, FAIL, NA)
GENERALIZABILITY, RELIABILITY = "generalizability", "reliability"

ITEMS = (
    ("settings", GENERALIZABILITY, "Is the method evaluated in more than one training regime (from scratch, fine-tuning)?"),
    ("datasets", GENERALIZABILITY, "Is the method evaluated on more than one dataset?"),
    ("architectures", GENERALIZABILITY, "Is the method evaluated on more than one model architecture?"),
    ("privacy_range", GENERALIZABILITY, "Does the evaluation span strong and weak privacy budgets?"),
    ("combinations", GENERALIZABILITY, "Is the method studied in combination with other techniques?"),
    ("open_source", RELIABILITY, "Is the code released?"),
    ("multiple_runs", RELIABILITY, "Are results of multiple runs reported with a measure of variability?"),
    ("statistical_significance", RELIABILITY, "Is the claimed improvement statistically significant?"),
    ("hyperparameter_accounting", RELIABILITY, "Is the privacy cost of hyperparameter tuning accounted for?"),
    ("ablation", RELIABILITY, "Are ablations reported for the method's components?"),
)
ITEM_IDS = tuple(i[0] for i in ITEMS)
DECLARED = ("combinations", "open_source", "hyperparameter_accounting", "ablation")


@dataclass(frozen=True)
class Thresholds:
    min_datasets: int = 2
    min_architectures: int = 2
    min_privacy_values: int = 3
    low_epsilon: float = 1.0  # at least one budget at or below this
    high_epsilon: float = 8.0  # and one at or above this
    min_runs: int = 3
    min_regimes: int = 2


@dataclass(frozen=True)
class ChecklistItem:
    id: str
    axis: str
    question: str
    status: str
    evidence: str

    def __post_init__(self):
        if self.status not in STATUSES:
            raise InvalidInputError(f"status must be one of {STATUSES}, got {self.status!r}")


@dataclass(frozen=True)
class ChecklistReport:
    items: tuple
    fingerprint: str

    def __post_init__(self):
        ids = [i.id for i in self.items]
        if sorted(ids) != sorted(ITEM_IDS) or len(ids) != len(ITEM_IDS):
            raise InvalidInputError("a report holds exactly the ten checklist items")

    def score(self, axis: str) -> int:
        return sum(1 for i in self.items if i.axis == axis and i.status == PASS)

    @property
    def generalizability_score(self) -> int:
        return self.score(GENERALIZABILITY)

    @property
    def reliability_score(self) -> int:
        return self.score(RELIABILITY)

    def item(self, item_id: str) -> ChecklistItem:
        for i in self.items:
            if i.id == item_id:
                return i
        raise KeyError(item_id)

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "generalizability_score": self.generalizability_score,
            "reliability_score": self.reliability_score,
            "items": [asdict(i) for i in self.items],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChecklistReport":
        return cls(tuple(ChecklistItem(**i) for i in d["items"]), d["fingerprint"])


def manifest_fingerprint(manifest: ExperimentManifest) -> str:
    canonical = json.dumps(manifest.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _declared(item_id: str, value) -> tuple[str, str]:
    evidence = "declared"
    if isinstance(value, Mapping):
        evidence = str(value.get("evidence", evidence))
        value = value.get("status")
    if isinstance(value, bool):
        return _status(value), evidence
    if isinstance(value, str) and value.lower() in STATUSES:
        return value.lower(), evidence
    raise InvalidInputError(f"declared answer for {item_id!r} must be true/false or one of {STATUSES}, got {value!r}")


def _eps(e: float) -> str:
    return "inf" if math.isinf(e) else f"{e:g}"


def grade(
    manifest: ExperimentManifest,
    records: Optional[Sequence] = None,
    comparison=None,
    declared: Optional[Mapping] = None,
    thresholds: Thresholds = Thresholds(),
) -> ChecklistReport:
    """Grade an experiment. ``comparison`` is a TestReport (or anything with ``.report``)."""
    declared = dict(declared or {})
    unknown = set(declared) - set(ITEM_IDS)
    if unknown:
        raise InvalidInputError(f"unknown checklist items declared: {sorted(unknown)}")
    missing = [i for i in DECLARED if i not in declared]
    if missing:
        raise IncompleteGradingError(missing)

    th = thresholds
    graded: dict[str, tuple[str, str]] = {}

    datasets = sorted({s.dataset_id for s in manifest.settings})
    graded["datasets"] = (_status(len(datasets) >= th.min_datasets),
                          f"{len(datasets)} dataset(s), need {th.min_datasets}")

    models = sorted({s.model for s in manifest.settings})
    graded["architectures"] = (_status(len(models) >= th.min_architectures),
                               f"{len(models)} architecture(s): {', '.join(models)}")

    budgets = sorted({s.epsilon for s in manifest.settings if not math.isinf(s.epsilon)})
    spread = bool(budgets) and budgets[0] <= th.low_epsilon and budgets[-1] >= th.high_epsilon
    graded["privacy_range"] = (
        _status(len(budgets) >= th.min_privacy_values and spread),
        f"epsilon values {{{', '.join(_eps(e) for e in budgets)}}}; need {th.min_privacy_values} "
        f"spanning <= {th.low_epsilon:g} and >= {th.high_epsilon:g}",
    )

    if "settings" in declared:
        graded["settings"] = _declared("settings", declared["settings"])
    else:
        regimes = sorted({s.regime for s in manifest.settings if s.regime})
        if not regimes:
            graded["settings"] = (NA, "no training regime declared in the manifest")
        else:
            graded["settings"] = (_status(len(regimes) >= th.min_regimes), f"regimes: {', '.join(regimes)}")

    if records:
        counts = Counter(cell_key(r) for r in records if r.ok)
        fewest = min(counts.values()) if counts else 0
        source = f"fewest successful runs in a cell: {fewest}"
    else:
        fewest = manifest.runs_per_cell
        source = f"{fewest} run(s) per cell planned"
    graded["multiple_runs"] = (_status(fewest >= th.min_runs), f"{source}, need {th.min_runs}")

    if comparison is None:
        graded["statistical_significance"] = (FAIL, "no paired comparison supplied")
    else:
        rep = getattr(comparison, "report", comparison)
        graded["statistical_significance"] = (
            _status(bool(rep.significant) and rep.mu_d > 0),
            f"p={rep.p_value:.4g} at alpha={rep.alpha:g}, mean gap {rep.mu_d:.4g}, n={rep.n}",
        )

    for item_id in DECLARED:
        graded[item_id] = _declared(item_id, declared[item_id])

    items = tuple(ChecklistItem(i, axis, q, *graded[i]) for i, axis, q in ITEMS)
    return ChecklistReport(items, manifest_fingerprint(manifest))


def render_report(report: ChecklistReport, fmt: str = "markdown") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt != "markdown":
        raise InvalidInputError(f"unknown format {fmt!r}; use markdown or json")
    lines = [
        "# Reproducibility checklist",
        "",
        f"Manifest fingerprint: `{report.fingerprint}`",
        "",
        "| axis | item | question | status | evidence |",
        "|---|---|---|---|---|",
    ]
    for i in report.items:
        lines.append(f"| {i.axis} | {i.id} | {i.question} | {i.status} | {i.evidence} |")
    lines += [
        "",
        f"Generalizability: {report.generalizability_score}/5",
        f"Reliability: {report.reliability_score}/5",
    ]
    return "\n".join(lines) + "\n"
