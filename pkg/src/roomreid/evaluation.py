"""Prediction scoring and report rendering.

Per-class precision, recall and F1 come from a multi-class confusion
matrix and are macro-averaged over the classes present in ground truth;
accuracy is the fraction of correctly matched queries.  Classes with an
empty denominator score 0 rather than being dropped, so class counts stay
fixed across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import UsageError, ValidationError
from .pipeline import STAGE_LABELS, QueryFailure, RetrievalResult, query_batch
from .records import SceneRecord
from .scoring import ScoringConfig

METRIC_SCHEMA = "roomreid-metrics/1"

# Fixed ablation battery: full cascade first, then every documented
# module removal, the global-only baseline, and the no-global variant.
ABLATION_LABELS = (
    "full",
    "no-patch",
    "no-object",
    "no-fine-grained",
    "no-patch-object",
    "no-patch-fine-grained",
    "no-object-fine-grained",
    "global-only",
    "no-global",
)

_ABLATION_FLAGS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "no-patch": {"use_patch": False},
    "no-object": {"use_object": False},
    "no-fine-grained": {"use_fine_grained": False},
    "no-patch-object": {"use_patch": False, "use_object": False},
    "no-patch-fine-grained": {"use_patch": False, "use_fine_grained": False},
    "no-object-fine-grained": {"use_object": False, "use_fine_grained": False},
    "global-only": {"use_patch": False, "use_object": False, "use_fine_grained": False},
    "no-global": {"use_global": False},
}


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are truth classes, columns predicted classes."""

    classes: Tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.shape != (len(self.classes), len(self.classes)):
            raise ValidationError(
                f"confusion counts shape {arr.shape} does not match {len(self.classes)} classes"
            )
        if (arr < 0).any():
            raise ValidationError("confusion counts must be nonnegative")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    room_id: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: Tuple[ClassMetrics, ...]
    confusion: ConfusionMatrix
    n_queries: int
    stage_timings_us: Dict[str, float] = field(default_factory=dict)

    def record_line(self, label: str = "") -> str:
        payload = {
            "schema": METRIC_SCHEMA,
            "label": label,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "n_queries": self.n_queries,
            "per_class": {
                m.room_id: {"precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
                for m in self.per_class
            },
            "stage_timings_us": dict(self.stage_timings_us),
        }
        return json.dumps(payload, separators=(",", ":"))


def score(
    predictions: Mapping[str, str],
    truth: Mapping[str, str],
    timings: Optional[Iterable[Mapping[str, float]]] = None,
) -> MetricReport:
    """Score a prediction map against ground truth.

    Macro averages run over the classes present in truth; classes that were
    only ever predicted appear in the confusion matrix but do not dilute the
    macro means.  ``timings`` may carry per-query stage timing maps, which
    are averaged into the report.
    """
    if not predictions:
        raise UsageError("score over an empty prediction set")
    unknown = set(predictions) - set(truth)
    if unknown:
        raise ValidationError(f"predictions reference unknown image ids: {sorted(unknown)[:5]}")

    truth_classes = sorted({truth[i] for i in predictions})
    predicted_only = sorted({predictions[i] for i in predictions} - set(truth_classes))
    classes = tuple(truth_classes + predicted_only)
    index = {c: i for i, c in enumerate(classes)}

    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for image_id in predictions:
        counts[index[truth[image_id]], index[predictions[image_id]]] += 1
    cm = ConfusionMatrix(classes=classes, counts=counts)

    per_class: List[ClassMetrics] = []
    for c in truth_classes:
        i = index[c]
        tp = int(counts[i, i])
        fp = int(counts[:, i].sum() - tp)
        fn = int(counts[i, :].sum() - tp)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(
            ClassMetrics(room_id=c, precision=precision, recall=recall, f1=f1, support=tp + fn)
        )

    total = cm.total
    accuracy = float(np.trace(counts)) / total
    macro = lambda vals: float(np.mean(vals)) if vals else 0.0  # noqa: E731

    stage_means: Dict[str, float] = {}
    if timings is not None:
        rows = list(timings)
        if rows:
            for label in STAGE_LABELS:
                stage_means[label] = float(np.mean([row.get(label, 0.0) for row in rows]))

    return MetricReport(
        accuracy=accuracy,
        macro_precision=macro([m.precision for m in per_class]),
        macro_recall=macro([m.recall for m in per_class]),
        macro_f1=macro([m.f1 for m in per_class]),
        per_class=tuple(per_class),
        confusion=cm,
        n_queries=total,
        stage_timings_us=stage_means,
    )


def compare_table(runs: Sequence[Tuple[str, MetricReport]]) -> str:
    """Fixed-layout comparison table; best value per column marked with *."""
    if not runs:
        raise UsageError("compare_table over zero runs")
    columns = ("Accuracy", "Precision", "Recall", "F1")
    getters = (
        lambda r: r.accuracy,
        lambda r: r.macro_precision,
        lambda r: r.macro_recall,
        lambda r: r.macro_f1,
    )
    best = [max(g(report) for _, report in runs) for g in getters]

    label_width = max(len("Configuration"), max(len(label) for label, _ in runs))
    header = "Configuration".ljust(label_width) + "".join(c.rjust(12) for c in columns)
    lines = [header]
    for label, report in runs:
        cells = []
        for g, b in zip(getters, best):
            v = g(report)
            mark = "*" if v == b else " "
            cells.append(f"{100.0 * v:10.2f}{mark}")
        lines.append(label.ljust(label_width) + " " + " ".join(cells))
    return "\n".join(lines) + "\n"


def ablation_configs(base: ScoringConfig) -> List[Tuple[str, ScoringConfig]]:
    """The fixed ablation battery derived from a base config."""
    full = base.replace(use_global=True, use_patch=True, use_object=True, use_fine_grained=True)
    return [(label, full.replace(**_ABLATION_FLAGS[label])) for label in ABLATION_LABELS]


def run_ablations(
    queries: Sequence[SceneRecord],
    truth: Mapping[str, str],
    db,
    base_cfg: ScoringConfig,
    providers=None,
    workers: int = 1,
) -> List[Tuple[str, MetricReport]]:
    """Score every ablation configuration over the same query set."""
    out: List[Tuple[str, MetricReport]] = []
    for label, cfg in ablation_configs(base_cfg):
        results = query_batch(queries, db, cfg, providers=providers, workers=workers)
        failures = [r for r in results if isinstance(r, QueryFailure)]
        if failures:
            f = failures[0]
            raise ValidationError(
                f"ablation {label!r}: query {f.query_image_id!r} failed: {f.message}"
            )
        predictions = {r.query_image_id: r.final_room_id for r in results}
        timings = [r.timings_us for r in results]
        out.append((label, score(predictions, truth, timings=timings)))
    return out
