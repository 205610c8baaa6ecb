"""Discrimination and calibration metrics plus attention analyses.

AUC-ROC uses the Mann-Whitney formulation (ties count one half); AUC-PR
is average precision with deterministic doc-id tie-breaking; calibration
uses equal-width bins on [0, 1].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .attention import AttentionRecord
from .data import PatientDocument, Vocabulary
from .exceptions import UndefinedMetricError
from .models import extract_attention_maps, predict_proba


@dataclass(frozen=True)
class PredictionRecord:
    doc_id: str
    score: float
    label: int

    def __post_init__(self):
        if not (np.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score out of [0, 1]: {self.score}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1: {self.label}")


def auc_roc(records: list[PredictionRecord]) -> float:
    """Probability a random positive outranks a random negative."""
    scores = np.array([r.score for r in records])
    labels = np.array([r.label for r in records])
    n_pos = int(labels.sum())
    n_neg = len(records) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs both classes present")
    # average ranks implement the ties-count-half convention
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pr(records: list[PredictionRecord]) -> float:
    """Average precision: precision at each positive's rank, averaged."""
    n_pos = sum(r.label for r in records)
    if n_pos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one positive")
    ranked = sorted(records, key=lambda r: (-r.score, r.doc_id))
    ap = 0.0
    hits = 0
    for rank, rec in enumerate(ranked, start=1):
        if rec.label == 1:
            hits += 1
            ap += hits / rank
    return ap / n_pos


def brier(records: list[PredictionRecord]) -> float:
    if not records:
        raise UndefinedMetricError("Brier score needs at least one record")
    return float(np.mean([(r.score - r.label) ** 2 for r in records]))


@dataclass
class CalibrationBin:
    low: float
    high: float
    count: int
    mean_score: float  # NaN when empty
    positive_fraction: float  # NaN when empty

    @property
    def empty(self) -> bool:
        return self.count == 0


@dataclass
class CalibrationBins:
    bins: list[CalibrationBin]

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)

    def max_deviation(self) -> float:
        devs = [
            abs(b.mean_score - b.positive_fraction)
            for b in self.bins
            if not b.empty
        ]
        return max(devs) if devs else 0.0


def calibration_curve(records: list[PredictionRecord], n_bins: int = 10) -> CalibrationBins:
    """Equal-width reliability bins; empty bins are kept and flagged."""
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    scores = np.array([r.score for r in records])
    labels = np.array([r.label for r in records], dtype=float)
    idx = np.minimum((scores * n_bins).astype(int), n_bins - 1)
    bins = []
    for b in range(n_bins):
        sel = idx == b
        count = int(sel.sum())
        bins.append(
            CalibrationBin(
                low=b / n_bins,
                high=(b + 1) / n_bins,
                count=count,
                mean_score=float(scores[sel].mean()) if count else float("nan"),
                positive_fraction=float(labels[sel].mean()) if count else float("nan"),
            )
        )
    return CalibrationBins(bins)


@dataclass
class MetricsReport:
    auc_roc: float
    auc_pr: float
    brier: float
    bins: CalibrationBins
    n: int
    prevalence: float

    def to_dict(self) -> dict:
        return {
            "auc_roc": self.auc_roc,
            "auc_pr": self.auc_pr,
            "brier": self.brier,
            "n": self.n,
            "prevalence": self.prevalence,
            "calibration": [
                {
                    "low": b.low,
                    "high": b.high,
                    "count": b.count,
                    "mean_score": None if b.empty else b.mean_score,
                    "positive_fraction": None if b.empty else b.positive_fraction,
                }
                for b in self.bins.bins
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_kv(self) -> str:
        lines = [
            f"auc_roc={self.auc_roc:.6f}",
            f"auc_pr={self.auc_pr:.6f}",
            f"brier={self.brier:.6f}",
            f"n={self.n}",
            f"prevalence={self.prevalence:.6f}",
        ]
        return "\n".join(lines) + "\n"


def compute_metrics(records: list[PredictionRecord], n_bins: int = 10) -> MetricsReport:
    labels = [r.label for r in records]
    return MetricsReport(
        auc_roc=auc_roc(records),
        auc_pr=auc_pr(records),
        brier=brier(records),
        bins=calibration_curve(records, n_bins),
        n=len(records),
        prevalence=sum(labels) / len(labels),
    )


# ---------------------------------------------------------------------------
# attention analyses

@dataclass
class AttentionMassSummary:
    """Attention mass received by directive-token columns.

    per_sentence: for each qualifying sentence, the summed weight on
    directive columns averaged over query rows (head 0).
    zero_fraction_nondirective: fraction of real non-directive columns in
    those sentences whose received mass is exactly zero in every row.
    """

    per_sentence: list[float]
    mean: float
    zero_fraction_nondirective: float


def directive_attention_mass(
    model,
    docs: list[PatientDocument],
    vocab: Vocabulary,
    directive_tokens: set[str],
) -> AttentionMassSummary:
    masses: list[float] = []
    zero_cols = 0
    nondir_cols = 0
    for doc in docs:
        if not any(set(s) & directive_tokens for s in doc.sentences):
            continue
        for rec in extract_attention_maps(model, doc, vocab, filter_tokens=directive_tokens):
            w = rec.weights[0]  # head 0, [n, n]
            is_dir = np.array([t in directive_tokens for t in rec.col_labels])
            masses.append(float(w[:, is_dir].sum(axis=1).mean()))
            col_mass = w[:, ~is_dir]
            zero_cols += int((col_mass.max(axis=0) == 0.0).sum())
            nondir_cols += int((~is_dir).sum())
    if not masses:
        raise UndefinedMetricError("no sentences containing directive tokens")
    return AttentionMassSummary(
        per_sentence=masses,
        mean=float(np.mean(masses)),
        zero_fraction_nondirective=zero_cols / nondir_cols if nondir_cols else 0.0,
    )


def sentence_support_fraction(record: AttentionRecord) -> float:
    """Fraction of sentence columns receiving any nonzero weight (head 0)."""
    w = record.weights[0]
    return float((w.max(axis=0) > 0.0).sum() / w.shape[1])


def score_documents(model, docs, vocab, batch_size: int = 16) -> list[PredictionRecord]:
    """Run the model over documents and collect prediction records."""
    from .data import pad_and_batch  # local import to keep module load light

    cfg = model.config
    out = []
    for batch in pad_and_batch(docs, vocab, cfg.max_words, cfg.max_sents, batch_size):
        logits, _ = model.forward(batch, training=False)
        probs = predict_proba(logits)
        for doc_id, p, y in zip(batch.doc_ids, probs, batch.labels):
            out.append(PredictionRecord(doc_id, float(p), int(y)))
    return out


# ---------------------------------------------------------------------------
# heatmap export

def export_heatmap(record: AttentionRecord, path, head: int = 0) -> None:
    """CSV grid: header = column tokens, first cell of each row = row token."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + record.col_labels)
            for label, row in zip(record.row_labels, record.weights[head]):
                writer.writerow([label] + [f"{v:.6f}" for v in row])
    except OSError as e:
        raise OSError(f"failed writing heatmap to {path}: {e}") from e


def read_heatmap(path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    col_labels = rows[0][1:]
    row_labels = [r[0] for r in rows[1:]]
    weights = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return weights, row_labels, col_labels
