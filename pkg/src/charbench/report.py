"""Benchmark aggregation: summary rows, confusion analysis, CSV/markdown output, audit."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .arch import (
    DISPLAY_NAMES,
    MODEL_IDS,
    ArchSpec,
    classifier_in_features,
    final_hidden_width,
    param_count,
    zoo_spec,
)

EPOCH_COLUMNS = ("model", "epoch", "train_loss", "train_acc", "valid_acc", "lr", "epoch_seconds")
SUMMARY_COLUMNS = ("model", "first_epoch_valid_acc", "best_valid_acc", "best_epoch",
                   "total_seconds", "avg_epoch_seconds", "classifier_in_features")
MARKDOWN_HEADERS = ("Model", "Valid Accuracy (1st epoch)", "Best Accuracy", "Best Epoch",
                    "Total Time", "Average Time per Epoch", "No of in features")


class ReportError(ValueError):
    pass


@dataclass
class BenchmarkRun:
    model_id: str
    scale: str
    config: dict
    metrics: list  # EpochMetrics rows
    classifier_in_features: int
    started_at: str = ""
    host: str = ""
    aborted: Optional[str] = None

    @property
    def name(self) -> str:
        return DISPLAY_NAMES.get(self.model_id, self.model_id)


@dataclass
class SummaryRow:
    model_id: str
    first_epoch_valid_acc: float
    best_valid_acc: float
    best_epoch: int  # 1-based
    total_seconds: float
    avg_epoch_seconds: float
    classifier_in_features: int

    @property
    def first_epoch_percent(self) -> float:
        return round(100 * self.first_epoch_valid_acc, 2)

    @property
    def best_percent(self) -> float:
        return round(100 * self.best_valid_acc, 2)


def summarize(run: BenchmarkRun) -> SummaryRow:
    if not run.metrics:
        raise ReportError(f"run {run.model_id!r} has no epochs")
    accs = [m.valid_accuracy for m in run.metrics]
    best = max(accs)
    total = float(sum(m.wall_seconds for m in run.metrics))
    return SummaryRow(
        model_id=run.name,
        first_epoch_valid_acc=accs[0],
        best_valid_acc=best,
        best_epoch=accs.index(best) + 1,
        total_seconds=total,
        avg_epoch_seconds=total / len(accs),
        classifier_in_features=run.classifier_in_features,
    )


# ---------------------------------------------------------------------------
# confusion analysis


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted
    classes: list = field(default_factory=list)

    @classmethod
    def from_predictions(cls, labels, preds, num_classes: int, classes=None) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(labels), np.asarray(preds)), 1)
        return cls(counts, list(classes) if classes is not None else [str(i) for i in range(num_classes)])

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(network, params, test_samples: Sequence, images, num_classes: Optional[int] = None,
              classes=None, features=None) -> ConfusionMatrix:
    """Confusion counts of ``network`` over ``test_samples`` in eval mode and stored order."""
    from .train import predict

    if not test_samples:
        raise ReportError("empty test set")
    preds = predict(network, test_samples, images, features=features)
    labels = np.array([lbl for _, lbl in test_samples])
    n = num_classes or network.spec.num_classes
    return ConfusionMatrix.from_predictions(labels, preds, n, classes)


def top_confused_pairs(cm, k: int) -> list[tuple[int, int, int]]:
    """Class pairs ranked by counts[a][b] + counts[b][a], largest first, zeros dropped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm)
    sym = counts + counts.T
    a, b = np.triu_indices(counts.shape[0], k=1)
    vals = sym[a, b]
    keep = vals > 0
    a, b, vals = a[keep], b[keep], vals[keep]
    # lexsort: last key is primary
    order = np.lexsort((b, a, -vals))[:k]
    return [(int(a[i]), int(b[i]), int(vals[i])) for i in order]


# ---------------------------------------------------------------------------
# emission


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def summary_csv(runs: Sequence[BenchmarkRun]) -> str:
    rows = []
    for run in runs:
        s = summarize(run)
        rows.append((s.model_id, s.first_epoch_valid_acc, s.best_valid_acc, s.best_epoch,
                     s.total_seconds, s.avg_epoch_seconds, s.classifier_in_features))
    return _csv_text(SUMMARY_COLUMNS, rows)


def _minutes_seconds(sec: float) -> str:
    m, s = divmod(int(round(sec)), 60)
    return f"{m}m {s}s"


def summary_markdown(runs: Sequence[BenchmarkRun]) -> str:
    lines = ["| " + " | ".join(MARKDOWN_HEADERS) + " |",
             "|" + "---|" * len(MARKDOWN_HEADERS)]
    for run in runs:
        s = summarize(run)
        cells = (s.model_id, f"{100 * s.first_epoch_valid_acc:.2f}", f"{100 * s.best_valid_acc:.2f}",
                 str(s.best_epoch), _minutes_seconds(s.total_seconds),
                 f"{s.avg_epoch_seconds / 60:.1f}m", str(s.classifier_in_features))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(runs: Sequence[BenchmarkRun], fmt: str, out) -> None:
    """Write the per-model summary table as ``csv`` or ``markdown``."""
    if not runs:
        raise ReportError("no runs to report")
    if fmt == "csv":
        text = summary_csv(runs)
    elif fmt == "markdown":
        text = summary_markdown(runs)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    _write(out, text)


def emit_epochs(runs: Sequence[BenchmarkRun], out) -> None:
    rows = [(run.name, m.epoch + 1, m.train_loss, m.train_accuracy, m.valid_accuracy, m.lr_used,
             m.wall_seconds) for run in runs for m in run.metrics]
    _write(out, _csv_text(EPOCH_COLUMNS, rows))


def emit_confusion(cm: ConfusionMatrix, out, model: Optional[str] = None) -> None:
    _write(out, confusion_csv(cm, model))


def confusion_csv(cm: ConfusionMatrix, model: Optional[str] = None) -> str:
    corner = model or ""
    rows = [[name] + [int(v) for v in row] for name, row in zip(cm.classes, cm.counts)]
    return _csv_text([corner] + list(cm.classes), rows)


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# architecture audit

EXPECTED_IN_FEATURES = {
    "alexnet": 9216,
    "vgg16": 25088,
    "vgg19": 25088,
    "densenet121": 1024,
    "densenet201": 1920,
    "inception_v3": 2048,
}
REPORTED_IN_FEATURES = dict(EXPECTED_IN_FEATURES, vgg11=4096)
EXPECTED_PARAMS = {"alexnet": 60e6, "vgg11": 134e6, "vgg16": 138e6, "vgg19": 144e6}
REPORTED_PARAMS = dict(EXPECTED_PARAMS, densenet121=25e6, densenet201=20e6, inception_v3=25e6)
PARAM_TOLERANCE = 0.05
AUDIT_COLUMNS = ("model", "params", "expected_params", "params_status", "in_features",
                 "final_hidden_width", "expected_in_features", "in_features_status")


@dataclass
class AuditRow:
    model_id: str
    params: int
    expected_params: Optional[float]
    params_status: str  # pass | fail | informational
    in_features: int
    final_hidden_width: int
    expected_in_features: Optional[int]
    in_features_status: str

    @property
    def passed(self) -> bool:
        return "fail" not in (self.params_status, self.in_features_status)


def audit_spec(spec: ArchSpec) -> AuditRow:
    mid = spec.model_id
    count = param_count(spec)
    feats = classifier_in_features(spec)
    if mid in EXPECTED_PARAMS:
        ok = abs(count - EXPECTED_PARAMS[mid]) <= PARAM_TOLERANCE * EXPECTED_PARAMS[mid]
        pstatus = "pass" if ok else "fail"
    else:
        pstatus = "informational"
    if mid in EXPECTED_IN_FEATURES:
        fstatus = "pass" if feats == EXPECTED_IN_FEATURES[mid] else "fail"
    else:
        fstatus = "informational"
    return AuditRow(mid, count, REPORTED_PARAMS.get(mid), pstatus, feats, final_hidden_width(spec),
                    REPORTED_IN_FEATURES.get(mid), fstatus)


def full_scale_specs() -> list[ArchSpec]:
    # ImageNet heads: the reference parameter counts include the 1000-way classifier
    return [zoo_spec(m, "full", 1000) for m in MODEL_IDS]


def audit_architectures(specs: Optional[Sequence[ArchSpec]] = None) -> list[AuditRow]:
    return [audit_spec(s) for s in (specs if specs is not None else full_scale_specs())]


def audit_csv(rows: Sequence[AuditRow]) -> str:
    return _csv_text(AUDIT_COLUMNS, [
        (DISPLAY_NAMES.get(r.model_id, r.model_id), r.params,
         "" if r.expected_params is None else int(r.expected_params), r.params_status,
         r.in_features, r.final_hidden_width,
         "" if r.expected_in_features is None else r.expected_in_features, r.in_features_status)
        for r in rows
    ])


def audit_text(rows: Sequence[AuditRow]) -> str:
    lines = [f"{'model':<14}{'params':>14}{'expected':>12}  {'status':<14}"
             f"{'in_feat':>8}{'hidden':>8}{'expected':>10}  status"]
    for r in rows:
        exp_p = "-" if r.expected_params is None else f"{r.expected_params / 1e6:.0f}M"
        exp_f = "-" if r.expected_in_features is None else str(r.expected_in_features)
        lines.append(f"{DISPLAY_NAMES.get(r.model_id, r.model_id):<14}{r.params:>14,}{exp_p:>12}  "
                     f"{r.params_status:<14}{r.in_features:>8}{r.final_hidden_width:>8}{exp_f:>10}  "
                     f"{r.in_features_status}")
    return "\n".join(lines) + "\n"
