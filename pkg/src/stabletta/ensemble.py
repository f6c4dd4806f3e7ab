"""Aggregation strategies, Non-Significant Suppression, and conflict detection.

A logit matrix holds one row per forward pass (expert) and one column per
class.  Three aggregation strategies are provided — hard voting, soft voting,
and logit averaging — together with NSS, which keeps only the Top-K entries
of a logit vector and floors the rest at the vector minimum.

Every tie in the engine (argmax, Top-K membership, vote counts, top-k
accuracy) breaks to the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STRATEGIES = ("hard", "soft", "logit")


def as_logit_matrix(rows) -> np.ndarray:
    """Validate and return rows as a float64 (N, C) array, C >= 2."""
    M = np.asarray(rows, dtype=np.float64)
    if M.ndim == 1:
        M = M[np.newaxis, :]
    if M.ndim != 2:
        raise ValueError(f"logit matrix must be 2-D, got shape {M.shape}")
    if M.shape[0] < 1 or M.shape[1] < 2:
        raise ValueError(f"need N >= 1 rows and C >= 2 classes, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("logits must be finite")
    return M


def softmax(z) -> np.ndarray:
    """Numerically safe softmax: exp(z - max z) / sum."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_class(v) -> int:
    """Index of the maximum entry; ties resolve to the lowest index."""
    v = np.asarray(v)
    if v.size == 0:
        raise ValueError("empty vector")
    return int(np.argmax(v))


def hard_vote(rows) -> int:
    """Plurality over per-row argmax; vote-count ties go to the lowest class."""
    M = as_logit_matrix(rows)
    votes = np.argmax(M, axis=1)
    counts = np.bincount(votes, minlength=M.shape[1])
    return int(np.argmax(counts))


def soft_vote(rows) -> int:
    """Argmax of the mean of per-row softmax probabilities."""
    M = as_logit_matrix(rows)
    return argmax_class(softmax(M).mean(axis=0))


def logit_average(rows) -> tuple[int, np.ndarray]:
    """Mean over rows, then argmax.  Returns (class, mean_logits)."""
    M = as_logit_matrix(rows)
    mean = M.mean(axis=0)
    return argmax_class(mean), mean


def nss(z, K: int) -> np.ndarray:
    """Suppress all but the Top-K entries of a logit vector to its minimum.

    The Top-K set is chosen by value descending; value ties admit the lower
    index.  K = C leaves the vector unchanged.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("nss expects a single logit vector")
    C = z.shape[0]
    if not 1 <= K <= C:
        raise ValueError(f"K must be in [1, {C}], got {K}")
    order = np.argsort(-z, kind="stable")
    out = np.full(C, z.min())
    out[order[:K]] = z[order[:K]]
    return out


def nss_matrix(rows, K: int) -> np.ndarray:
    """Row-wise nss() over a logit matrix (vectorized)."""
    M = as_logit_matrix(rows)
    if not 1 <= K <= M.shape[1]:
        raise ValueError(f"K must be in [1, {M.shape[1]}], got {K}")
    order = np.argsort(-M, axis=1, kind="stable")
    keep = np.zeros(M.shape, dtype=bool)
    np.put_along_axis(keep, order[:, :K], True, axis=1)
    return np.where(keep, M, M.min(axis=1, keepdims=True))


def stable_tta_aggregate(rows, K: int) -> tuple[int, np.ndarray]:
    """Mean of row-wise NSS, then argmax.  Returns (class, aggregate)."""
    agg = nss_matrix(rows, K).mean(axis=0)
    return argmax_class(agg), agg


def topk_accuracy(aggregated, label: int, k: int) -> bool:
    """True iff label is among the k largest entries (ties to lower index)."""
    v = np.asarray(aggregated, dtype=np.float64)
    if not 1 <= k <= v.shape[0]:
        raise ValueError(f"k must be in [1, {v.shape[0]}], got {k}")
    order = np.argsort(-v, kind="stable")
    return int(label) in order[:k]


@dataclass(frozen=True)
class AggregationOutcome:
    """Predictions of the three strategies plus their pairwise disagreements."""

    y_hard: int
    y_soft: int
    y_logit: int
    mean_logits: np.ndarray = field(repr=False)
    mean_probs: np.ndarray = field(repr=False)
    conflict_pairs: frozenset

    def to_json_dict(self) -> dict:
        return {
            "y_hard": self.y_hard,
            "y_soft": self.y_soft,
            "y_logit": self.y_logit,
            "mean_logits": [float(x) for x in self.mean_logits],
            "mean_probs": [float(x) for x in self.mean_probs],
            "conflict_pairs": sorted(sorted(p) for p in self.conflict_pairs),
        }


def detect_conflict(rows) -> AggregationOutcome:
    """Run all three strategies and report which pairs disagree."""
    M = as_logit_matrix(rows)
    y_hard = hard_vote(M)
    mean_probs = softmax(M).mean(axis=0)
    y_soft = argmax_class(mean_probs)
    y_logit, mean_logits = logit_average(M)
    named = {"hard": y_hard, "soft": y_soft, "logit": y_logit}
    pairs = frozenset(
        (a, b)
        for i, a in enumerate(STRATEGIES)
        for b in STRATEGIES[i + 1 :]
        if named[a] != named[b]
    )
    return AggregationOutcome(
        y_hard=y_hard,
        y_soft=y_soft,
        y_logit=y_logit,
        mean_logits=mean_logits,
        mean_probs=mean_probs,
        conflict_pairs=pairs,
    )
