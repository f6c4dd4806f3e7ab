"""Two-class Gaussian conflict model: when does logit averaging disagree
with hard voting?

The model draws N expert logit pairs z⁽ⁱ⁾ ~ N((mu1, mu2), sigma²·I).  Logit
averaging picks class 1 iff the mean difference is positive; hard voting
picks class 1 iff more than half the experts do.  Both the closed-form
disagreement probability (via a CLT normal approximation of the joint
(difference-mean, vote-mean) vector) and a direct Monte Carlo estimate are
provided, plus the standard-normal special functions they need.

Convention, confined to this module: an exact hard-vote tie (indicator mean
equal to 1/2) counts as class 2, matching the "<= 1/2" event the closed form
integrates.  The engine-wide lowest-index rule applies everywhere else.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .rng import substream

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
# Trials are simulated in fixed-size shards with per-shard derived streams,
# so a parallel implementation would sum to identical counts.
_SHARD = 1 << 14


class DegenerateCorrelationError(ValueError):
    """|rho| so close to 1 that the bivariate CDF is effectively singular."""


def std_normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT_2PI


def std_normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


# Gauss-Legendre half-tables (weights, abscissae); order picked by |rho|.
_GL6 = (
    [0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
    [0.9324695142031522, 0.6612093864662647, 0.2386191860831970],
)
_GL12 = (
    [0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
     0.2031674267230659, 0.2334925365383547, 0.2491470458134029],
    [0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
     0.5873179542866171, 0.3678314989981802, 0.1252334085114692],
)
_GL20 = (
    [0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
     0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
     0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
     0.1527533871307259],
    [0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
     0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
     0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
     0.07652652113349733],
)


def _bvn_upper(dh: float, dk: float, r: float) -> float:
    """P(X > dh, Y > dk) for standard bivariate normal with correlation r.

    Classic two-branch Drezner-Wesolowsky scheme with Genz's double-precision
    refinements: Gauss-Legendre quadrature over the arcsine substitution for
    moderate |r|, and an asymptotic expansion plus quadrature remainder for
    |r| > 0.925.
    """
    if abs(r) < 0.3:
        w, x = _GL6
    elif abs(r) < 0.75:
        w, x = _GL12
    else:
        w, x = _GL20

    h, k = dh, dk
    hk = h * k
    bvn = 0.0
    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r)
        for wi, xi in zip(w, x):
            for sn in (math.sin(asr * (1.0 - xi) / 2.0),
                       math.sin(asr * (1.0 + xi) / 2.0)):
                bvn += wi * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = bvn * asr / (4.0 * math.pi) + std_normal_cdf(-h) * std_normal_cdf(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        a2 = (1.0 - r) * (1.0 + r)
        a = math.sqrt(a2)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        asr = -(bs / a2 + hk) / 2.0
        if asr > -100.0:
            bvn = a * math.exp(asr) * (
                1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0
                + c * d * a2 * a2 / 5.0
            )
        if -hk < 100.0:
            b = math.sqrt(bs)
            sp = _SQRT_2PI * std_normal_cdf(-b / a)
            bvn -= math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
        a /= 2.0
        for wi, xi in zip(w, x):
            for u in (a * (1.0 - xi), a * (1.0 + xi)):
                xs = u * u
                rs = math.sqrt(1.0 - xs)
                asr = -(bs / xs + hk) / 2.0
                if asr > -100.0:
                    sp = 1.0 + c * xs * (1.0 + d * xs)
                    ep = math.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                    bvn += a * wi * math.exp(asr) * (ep - sp)
        bvn = -bvn / (2.0 * math.pi)
        if r > 0.0:
            bvn += std_normal_cdf(-max(h, k))
        else:
            bvn = -bvn + max(0.0, std_normal_cdf(-h) - std_normal_cdf(-k))
    return min(1.0, max(0.0, bvn))


def bvn_cdf(h: float, k: float, rho: float) -> float:
    """P(X <= h, Y <= k) for the standard bivariate normal, |rho| < 1.

    Absolute error below 1e-7 over the admitted rho range.
    """
    if not (math.isfinite(h) and math.isfinite(k) and math.isfinite(rho)):
        raise ValueError("bvn_cdf arguments must be finite")
    if abs(rho) > 1.0 - 1e-12:
        raise DegenerateCorrelationError(
            f"|rho| = {abs(rho)} too close to 1 for a nondegenerate CDF"
        )
    return _bvn_upper(-h, -k, rho)


@dataclass(frozen=True)
class BinaryGaussianSpec:
    """Parameters of the two-class expert model."""

    mu1: float
    mu2: float
    sigma: float
    n_experts: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.n_experts < 1:
            raise ValueError(f"n_experts must be >= 1, got {self.n_experts}")

    @property
    def a(self) -> float:
        """Standardized margin (mu1 - mu2) / (sqrt(2)·sigma)."""
        return (self.mu1 - self.mu2) / (_SQRT2 * self.sigma)


class IndicatorMoments(NamedTuple):
    mean_diff: float
    mean_ind: float
    var_diff: float
    var_ind: float
    cov: float


def indicator_moments(spec: BinaryGaussianSpec) -> IndicatorMoments:
    """Exact moments of (z1 - z2, 1{z1 > z2}) per expert.

    The indicator is Bernoulli(Phi(a)), so its variance is
    Phi(a) - Phi(a)²; the cross-covariance is sqrt(2)·sigma·phi(a).
    """
    a = spec.a
    pa = std_normal_cdf(a)
    return IndicatorMoments(
        mean_diff=spec.mu1 - spec.mu2,
        mean_ind=pa,
        var_diff=2.0 * spec.sigma**2,
        var_ind=pa - pa * pa,
        cov=_SQRT2 * spec.sigma * std_normal_pdf(a),
    )


@dataclass(frozen=True)
class AnalyticConflict:
    value: float
    saturated: bool = False


def conflict_prob_analytic(
    spec: BinaryGaussianSpec, paper_literal: bool = False
) -> AnalyticConflict:
    """Closed-form CLT approximation of P(logit vote != hard vote).

    P = Phi(-sqrt(N)·a) + Phi(t) - 2·Phi2(-a·sqrt(N), t; rho) with
    t = (1/2 - Phi(a))·sqrt(N) / sqrt(Phi(a) - Phi(a)²) and
    rho = phi(a) / sqrt(Phi(a) - Phi(a)²).

    ``paper_literal`` swaps Phi(a) for phi(a) inside t and the indicator
    variance — an internally inconsistent variant (the indicator is
    Bernoulli(Phi(a))) kept only for side-by-side comparison against the
    corrected form.  When the indicator variance underflows
    (saturated margins), the conflict probability is 0 and the result is
    flagged.
    """
    a = spec.a
    root_n = math.sqrt(spec.n_experts)
    pa = std_normal_cdf(a)
    fa = std_normal_pdf(a)
    q_rho = pa - pa * pa  # the correlation keeps the Phi form in both variants
    if paper_literal:
        center, q = fa, fa - fa * fa
    else:
        center, q = pa, q_rho
    if q < 1e-300 or q_rho < 1e-300:
        return AnalyticConflict(0.0, saturated=True)
    t = (0.5 - center) * root_n / math.sqrt(q)
    rho = fa / math.sqrt(q_rho)
    rho = min(rho, 1.0 - 1e-12)
    p = (
        std_normal_cdf(-root_n * a)
        + std_normal_cdf(t)
        - 2.0 * bvn_cdf(-a * root_n, t, rho)
    )
    return AnalyticConflict(min(1.0, max(0.0, p)))


@dataclass(frozen=True)
class ConflictEstimate:
    rate: float
    trials: int
    std_err: float


def simulate_conflict(
    spec: BinaryGaussianSpec, trials: int, seed: int
) -> ConflictEstimate:
    """Monte Carlo estimate of P(logit vote != hard vote).

    Per trial: draw N logit pairs, conflict iff (mean difference > 0)
    disagrees with (indicator mean > 1/2).  An exact indicator-mean tie
    therefore falls on the hard-vote-class-2 side.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    n = spec.n_experts
    conflicts = 0
    done = 0
    shard = 0
    while done < trials:
        m = min(_SHARD, trials - done)
        g = substream(seed, shard).standard_normal((m, n, 2))
        z1 = spec.mu1 + spec.sigma * g[:, :, 0]
        z2 = spec.mu2 + spec.sigma * g[:, :, 1]
        diff_mean = (z1 - z2).mean(axis=1)
        ind_mean = (z1 > z2).mean(axis=1)
        conflicts += int(np.sum((diff_mean > 0.0) != (ind_mean > 0.5)))
        done += m
        shard += 1
    rate = conflicts / trials
    return ConflictEstimate(
        rate=rate,
        trials=trials,
        std_err=math.sqrt(rate * (1.0 - rate) / trials),
    )


FIG10_MUS = ((1.0, 0.9), (1.0, 0.7), (1.0, 0.5))
FIG10_SIGMAS = (0.05, 0.10, 0.15, 0.20, 0.25)


class SweepRow(NamedTuple):
    mu1: float
    mu2: float
    sigma: float
    n: int
    analytic: float
    empirical: float
    stderr: float


def sweep_fig10(
    mus=FIG10_MUS,
    sigmas=FIG10_SIGMAS,
    n_experts: int = 32,
    trials: int = 10**5,
    seed: int = 1,
    paper_literal: bool = False,
) -> list[SweepRow]:
    """Analytic vs simulated conflict probability over a (mu, sigma) grid.

    Every grid point reuses the same (trials, seed), so a single-point sweep
    reproduces ``simulate_conflict`` exactly.
    """
    if not mus or not sigmas:
        raise ValueError("mus and sigmas must be nonempty")
    rows = []
    for mu1, mu2 in mus:
        for sigma in sigmas:
            spec = BinaryGaussianSpec(mu1, mu2, sigma, n_experts)
            analytic = conflict_prob_analytic(spec, paper_literal=paper_literal)
            est = simulate_conflict(spec, trials, seed)
            rows.append(
                SweepRow(mu1, mu2, sigma, n_experts, analytic.value, est.rate, est.std_err)
            )
    return rows


def write_sweep_csv(rows, path) -> None:
    """Write sweep rows as CSV with 17-significant-digit floats."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["mu1", "mu2", "sigma", "n", "analytic", "empirical", "stderr"])
        for r in rows:
            out.writerow(
                [f"{r.mu1:.17g}", f"{r.mu2:.17g}", f"{r.sigma:.17g}", r.n,
                 f"{r.analytic:.17g}", f"{r.empirical:.17g}", f"{r.stderr:.17g}"]
            )
