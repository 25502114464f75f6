"""Metrics and experiment harnesses: top-k accuracy, head/tail breakdowns,
radius sweeps, and cross-model comparison tables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DataError
from .geodesy import GeoPoint, build_index
from .priors import ABSTAIN, PriorConfig, predict_with_prior


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    """Fraction of rows whose true label is among the k best scores.

    Ties rank the lower label index first, matching argmax tie-breaking.
    Rows of all-zero scores with no positive entry still rank labels, so
    abstaining rows should be excluded (or counted wrong) by the caller.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) == 0:
        raise DataError("scores must be a non-empty (n, C) matrix")
    if len(labels) != len(scores):
        raise DataError("scores and labels disagree on row count")
    if k < 1:
        raise DataError("k must be >= 1")
    n, c = scores.shape
    k = min(k, c)
    # lexsort: primary key descending score, secondary ascending label index
    cols = np.arange(c)
    order = np.lexsort((np.broadcast_to(cols, (n, c)), -scores), axis=1)
    topk = order[:, :k]
    return float(np.mean(np.any(topk == labels[:, None], axis=1)))


def head_tail_split(train_counts: np.ndarray, threshold: int) -> tuple[np.ndarray, np.ndarray]:
    """Labels with >= threshold training examples vs the rest."""
    if threshold < 1:
        raise DataError("threshold must be >= 1")
    counts = np.asarray(train_counts)
    head = np.flatnonzero(counts >= threshold)
    tail = np.flatnonzero(counts < threshold)
    return head, tail


@dataclass
class ModelRow:
    name: str
    top1: float
    top5: float
    head_top1: float
    tail_top1: float


@dataclass
class EvalReport:
    n_examples: int
    head_threshold: int
    rows: list[ModelRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        def clean(v: float):
            # empty head/tail subsets give nan; emit null for strict JSON
            return None if np.isnan(v) else v

        return {
            "n_examples": self.n_examples,
            "head_threshold": self.head_threshold,
            "rows": [
                {
                    "name": r.name,
                    "top1": clean(r.top1),
                    "top5": clean(r.top5),
                    "head_top1": clean(r.head_top1),
                    "tail_top1": clean(r.tail_top1),
                }
                for r in self.rows
            ],
        }

    def render_table(self) -> str:
        """Aligned plain-text table for humans."""

        def fmt(v: float) -> str:
            return "n/a" if np.isnan(v) else f"{v:.4f}"

        headers = ["model", "top1", "top5", "head_top1", "tail_top1"]
        body = [
            [r.name, fmt(r.top1), fmt(r.top5), fmt(r.head_top1), fmt(r.tail_top1)]
            for r in self.rows
        ]
        widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(headers)]
        lines = [
            "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
            "  ".join("-" * w for w in widths),
        ]
        for row in body:
            lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
        lines.append(f"n_examples: {self.n_examples}  head_threshold: {self.head_threshold}")
        return "\n".join(lines) + "\n"


def _subset_top1(scores, labels, keep_labels) -> float:
    mask = np.isin(labels, keep_labels)
    if not mask.any():
        return float("nan")
    return topk_accuracy(scores[mask], labels[mask], k=1)


def evaluate_scores(name: str, scores: np.ndarray, labels: np.ndarray, train_counts: np.ndarray, head_threshold: int) -> ModelRow:
    head, tail = head_tail_split(train_counts, head_threshold)
    return ModelRow(
        name=name,
        top1=topk_accuracy(scores, labels, k=1),
        top5=topk_accuracy(scores, labels, k=5),
        head_top1=_subset_top1(scores, labels, head),
        tail_top1=_subset_top1(scores, labels, tail),
    )


def compare_models(
    models: dict[str, object],
    eval_data: Dataset,
    train_counts: np.ndarray,
    head_threshold: int = 100,
) -> EvalReport:
    """One row per model, in the given (insertion) order.

    Every model must expose ``predict_scores`` over the shared X convention
    and agree on the label-map size.
    """
    if len(eval_data) == 0:
        raise DataError("empty evaluation dataset")
    X = eval_data.to_X()
    report = EvalReport(n_examples=len(eval_data), head_threshold=head_threshold)
    for name, model in models.items():
        scores = np.asarray(model.predict_scores(X), dtype=np.float64)
        if scores.shape[1] != eval_data.n_labels:
            raise DataError(
                f"model {name!r} scores {scores.shape[1]} labels, dataset has {eval_data.n_labels}"
            )
        report.rows.append(evaluate_scores(name, scores, eval_data.labels, train_counts, head_threshold))
    return report


def radius_sweep(
    base,
    train_data: Dataset,
    eval_data: Dataset,
    radii,
    mode: str = "whitelist",
    smoothing_alpha: float = 0.0,
    empty_fallback: str = "image_only",
    cell_size_deg: float = 5.0,
) -> list[tuple[float, float]]:
    """Top-1 accuracy of a prior-rescored base model at each radius.

    Priors come from the train split only; accuracy is measured on the eval
    split. Abstained predictions count as wrong.
    """
    radii = list(radii)
    if not radii or any(r <= 0 for r in radii):
        raise DataError("radii must be a non-empty list of positive values")
    points = [(i, GeoPoint(float(train_data.lat[i]), float(train_data.lon[i]))) for i in range(len(train_data))]
    index = build_index(points, cell_size_deg=cell_size_deg)
    base_probs = base.predict_proba(eval_data.to_X())
    results = []
    for radius in radii:
        config = PriorConfig(
            mode=mode,
            theta_miles=float(radius),
            smoothing_alpha=smoothing_alpha,
            empty_fallback=empty_fallback,
        )
        correct = 0
        for i in range(len(eval_data)):
            g = GeoPoint(float(eval_data.lat[i]), float(eval_data.lon[i]))
            label, _ = predict_with_prior(base_probs[i], index, train_data.labels, g, config)
            if label != ABSTAIN and label == eval_data.labels[i]:
                correct += 1
        results.append((float(radius), correct / len(eval_data)))
    return results
