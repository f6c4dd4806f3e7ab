"""Normality testing of logit groups and input/logit variance diagnostics.

The normality suite runs one Jarque-Bera test per (image, class-coordinate)
group — the N per-pass values of one logit entry — and aggregates p-values
into an ECDF.  The variance diagnostics estimate the exponent/constant pair
of a power-law bound ||dz|| <= c·||dx||^d from pass pairs and evaluate the
induced bound Var(z) <= 2^(d-1)·c²·Var(input).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateSamplesError(ValueError):
    """Zero-variance samples: moment ratios are undefined, not p = 0."""


class DegenerateRegressorError(ValueError):
    """All pair distances coincide; the log-log slope is unidentifiable."""


def central_moments(samples) -> tuple[float, float, float, float]:
    """Mean and population central moments (m2, m3, m4), 1/n normalization."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need a flat sequence of at least 2 samples")
    mean = float(x.mean())
    d = x - mean
    return mean, float((d**2).mean()), float((d**3).mean()), float((d**4).mean())


@dataclass(frozen=True)
class JbResult:
    skew: float
    kurt: float
    jb: float
    p_value: float

    def reject(self, alpha: float = 0.05) -> bool:
        return self.p_value <= alpha


def jb_p_value(jb: float) -> float:
    """Chi-square(2) tail probability of the statistic: exactly exp(-jb/2)."""
    if jb < 0.0:
        raise ValueError(f"statistic must be nonnegative, got {jb}")
    return math.exp(-jb / 2.0)


def jb_test(samples) -> JbResult:
    """Jarque-Bera normality test from population skewness and kurtosis.

    jb = n/6·(skew² + (kurt - 3)²/4); the chi-square(2) survival function
    is exactly exp(-jb/2), so that is the p-value — no approximation.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 4:
        raise ValueError(f"need at least 4 samples, got {x.size}")
    _, m2, m3, m4 = central_moments(x)
    if m2 <= 0.0:
        raise DegenerateSamplesError("all samples identical; moments degenerate")
    skew = m3 / m2**1.5
    kurt = m4 / m2**2
    jb = x.size / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)
    return JbResult(skew=skew, kurt=kurt, jb=jb, p_value=jb_p_value(jb))


@dataclass(frozen=True)
class GroupJbReport:
    """One row per (image, class) group plus the p-value ECDF."""

    results: list          # (image_index, class_index, JbResult)
    skipped: int           # degenerate groups counted, never silently dropped
    rejection_fraction: float
    alpha: float

    def ecdf(self) -> list[tuple[float, float]]:
        """Points (p, fraction of p-values <= p), nondecreasing, ends at 1."""
        ps = sorted(r.p_value for _, _, r in self.results)
        n = len(ps)
        return [(p, (i + 1) / n) for i, p in enumerate(ps)]


def jb_over_groups(logit_matrices, alpha: float = 0.05) -> GroupJbReport:
    """Jarque-Bera per class coordinate of each per-sample logit matrix."""
    results = []
    skipped = 0
    for image_index, M in enumerate(logit_matrices):
        M = np.asarray(M, dtype=np.float64)
        for class_index in range(M.shape[1]):
            group = M[:, class_index]
            try:
                results.append((image_index, class_index, jb_test(group)))
            except (DegenerateSamplesError, ValueError):
                skipped += 1
    n = len(results)
    rejected = sum(1 for _, _, r in results if r.p_value <= alpha)
    return GroupJbReport(
        results=results,
        skipped=skipped,
        rejection_fraction=(rejected / n) if n else 0.0,
        alpha=alpha,
    )


def logit_variance(rows) -> float:
    """(1/N)·sum ||z_i - mean||² over logit rows (trace form)."""
    M = np.asarray(rows, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 2:
        raise ValueError("need at least 2 logit rows")
    d = M - M.mean(axis=0, keepdims=True)
    return float((d**2).sum() / M.shape[0])


@dataclass(frozen=True)
class HolderFit:
    c: float
    d: float
    r2: float
    pairs_used: int


def holder_fit(input_passes, logit_rows) -> HolderFit:
    """Least-squares fit of log||dz|| = log c + d·log||dx|| over pass pairs.

    All pairs i < j enter; pairs with input distance below 1e-9 are excluded
    (log of ~0 abscissae would dominate the fit with noise).
    """
    X = [np.asarray(t, dtype=np.float64).ravel() for t in input_passes]
    Z = np.asarray(logit_rows, dtype=np.float64)
    if len(X) != Z.shape[0]:
        raise ValueError("one logit row per input pass required")
    if len(X) < 3:
        raise ValueError(f"need at least 3 passes, got {len(X)}")
    log_dx, log_dz = [], []
    for i in range(len(X)):
        for j in range(i + 1, len(X)):
            dx = float(np.linalg.norm(X[i] - X[j]))
            if dx < 1e-9:
                continue
            dz = float(np.linalg.norm(Z[i] - Z[j]))
            log_dx.append(math.log(dx))
            # a zero logit distance at nonzero input distance is a perfectly
            # flat pair; floor it instead of dropping the evidence
            log_dz.append(math.log(max(dz, 1e-300)))
    if len(log_dx) < 2:
        # identical (or near-identical) passes leave nothing to regress on
        raise DegenerateRegressorError(
            "degenerate regressor: fewer than 2 usable pass pairs"
        )
    u = np.asarray(log_dx)
    v = np.asarray(log_dz)
    if np.ptp(u) < 1e-12:
        raise DegenerateRegressorError(
            "degenerate regressor: all input distances equal"
        )
    # normal equations for v = log c + d·u
    um, vm = u.mean(), v.mean()
    d = float(((u - um) * (v - vm)).sum() / ((u - um) ** 2).sum())
    log_c = vm - d * um
    resid = v - (log_c + d * u)
    ss_tot = float(((v - vm) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float((resid**2).sum()) / ss_tot
    return HolderFit(c=math.exp(log_c), d=d, r2=r2, pairs_used=len(log_dx))


@dataclass(frozen=True)
class VarianceReport:
    var_input: float
    var_logits: float
    jensen_bound: float
    satisfied: bool
    applicable: bool


def jensen_bound_check(fit: HolderFit, var_input: float, var_logits: float) -> VarianceReport:
    """Evaluate Var(z) <= 2^(d-1)·c²·Var(input), valid for d in (0, 1].

    Outside that exponent range the bound does not follow from the power-law
    fit; the report is flagged not-applicable instead of raising.
    """
    applicable = 0.0 < fit.d <= 1.0
    bound = 2.0 ** (fit.d - 1.0) * fit.c**2 * var_input
    return VarianceReport(
        var_input=var_input,
        var_logits=var_logits,
        jensen_bound=bound,
        satisfied=bool(var_logits <= bound * 1.05),
        applicable=applicable,
    )
