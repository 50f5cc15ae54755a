"""Speed and variance estimation from front ensembles.

The variance of the front admits two routes: the regenerative-cycle formula
``Var(dr - v*dk) / E[dk]`` on renewal increments, and a direct regression of
the across-replica variance of ``r_t - v*t`` against ``t``.  The two must
agree when the renewal structure is detected correctly, so both are kept and
cross-checked.  Every estimator is a deterministic function of its inputs and
an explicit seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import HorizonError, InsufficientDataError, ParameterError
from .front import FrontTrace
from .renewal import RenewalRecord

__all__ = [
    "IncrementSample",
    "SpeedEstimate",
    "VarianceEstimate",
    "IidDiagnostics",
    "GaussianProfileReport",
    "BallisticityReport",
    "EstimateReport",
    "increments_from_records",
    "estimate_speed",
    "estimate_variance_renewal",
    "estimate_variance_diffusive",
    "iid_diagnostics",
    "calibrate_two_sample_threshold",
    "gaussian_profile_check",
    "ballisticity_report",
]

Z95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class IncrementSample:
    """One renewal increment (kappa_{i+1} - kappa_i, r_{i+1} - r_i)."""

    d_kappa: float
    d_r: int
    index: int
    replica: int

    def __post_init__(self):
        if self.d_kappa <= 0:
            raise ParameterError("d_kappa must be > 0")
        if self.d_r < 1:
            raise ParameterError("d_r must be >= 1 (each renewal is a fresh record)")


def increments_from_records(
    records: Sequence[RenewalRecord],
    replica: int,
    include_flagged: bool = False,
) -> list[IncrementSample]:
    """Consecutive-record increments, 1-based index; index 0 is the increment
    from the time origin to the first record (different law, kept for
    independence diagnostics only).  Truncation-flagged records are dropped
    unless ``include_flagged``."""
    recs = list(records)
    if not include_flagged:
        recs = [r for r in recs if not r.approx_flags]
    out = []
    if not recs:
        return out
    if recs[0].kappa > 0 and recs[0].r_kappa >= 1:
        out.append(
            IncrementSample(
                d_kappa=recs[0].kappa, d_r=recs[0].r_kappa, index=0, replica=replica
            )
        )
    for i in range(1, len(recs)):
        out.append(
            IncrementSample(
                d_kappa=recs[i].kappa - recs[i - 1].kappa,
                d_r=recs[i].r_kappa - recs[i - 1].r_kappa,
                index=i,
                replica=replica,
            )
        )
    return out


@dataclass(frozen=True)
class SpeedEstimate:
    v_hat: float
    ci_halfwidth: float
    n_used: int
    n_censored: int
    confidence: float = 0.95
    degenerate: bool = False  # single replica: no across-replica error


def estimate_speed(
    fronts: Sequence[FrontTrace], t_burn: float, confidence: float = 0.95
) -> SpeedEstimate:
    """Mean over replicas of the post-burn-in slope, with an across-replica
    standard-error interval.  Censored traces are excluded and counted."""
    if t_burn < 0:
        raise ParameterError("t_burn must be >= 0")
    slopes = []
    n_censored = 0
    for tr in fronts:
        if tr.censored:
            n_censored += 1
            continue
        if tr.t_end < 2 * t_burn:
            raise ParameterError(
                f"trace ends at {tr.t_end} < 2*t_burn={2 * t_burn}"
            )
        slopes.append(
            (tr.position_at(tr.t_end) - tr.position_at(t_burn)) / (tr.t_end - t_burn)
        )
    if not slopes:
        raise InsufficientDataError("no uncensored traces")
    arr = np.asarray(slopes)
    v_hat = float(arr.mean())
    if arr.size == 1:
        return SpeedEstimate(v_hat, math.nan, 1, n_censored, confidence, True)
    z = Z95 if confidence == 0.95 else _z_for(confidence)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size))
    return SpeedEstimate(v_hat, z * se, int(arr.size), n_censored, confidence)


def _z_for(confidence: float) -> float:
    from scipy.stats import norm

    return float(norm.ppf(0.5 + confidence / 2.0))


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2: float
    ci_halfwidth: float
    n: int
    confidence: float = 0.95
    fit_residual_rmse: float = math.nan  # diffusive route only


def _renewal_sigma2(d_kappa: np.ndarray, d_r: np.ndarray, v_hat: float) -> float:
    resid = d_r - v_hat * d_kappa
    return float(resid.var(ddof=1) / d_kappa.mean())


def estimate_variance_renewal(
    samples: Sequence[IncrementSample],
    v_hat: float,
    seed: int = 0,
    n_boot: int = 999,
    confidence: float = 0.95,
) -> VarianceEstimate:
    """Regenerative-cycle variance ``Var(d_r - v*d_kappa)/mean(d_kappa)``.

    Only identically-distributed increments (index >= 1) are admitted.  The
    interval comes from a replica-level bootstrap whose resample plan is
    fixed by ``seed``.
    """
    samples = list(samples)
    if any(s.index < 1 for s in samples):
        raise ParameterError("only increments with index >= 1 are identically "
                             "distributed; filter index 0 out")
    if len(samples) < 30:
        raise InsufficientDataError(
            f"need >= 30 increments, got {len(samples)}"
        )
    d_kappa = np.asarray([s.d_kappa for s in samples])
    d_r = np.asarray([s.d_r for s in samples], dtype=np.float64)
    sigma2 = _renewal_sigma2(d_kappa, d_r, v_hat)
    replicas = np.asarray([s.replica for s in samples])
    uniq = np.unique(replicas)
    if uniq.size < 2:
        return VarianceEstimate(sigma2, math.nan, len(samples), confidence)
    rng = np.random.default_rng(seed)
    groups = {r: np.flatnonzero(replicas == r) for r in uniq}
    boots = []
    for _ in range(n_boot):
        chosen = rng.choice(uniq, size=uniq.size, replace=True)
        idx = np.concatenate([groups[r] for r in chosen])
        if idx.size >= 2:
            boots.append(_renewal_sigma2(d_kappa[idx], d_r[idx], v_hat))
    lo, hi = np.percentile(boots, [100 * (1 - confidence) / 2,
                                   100 * (1 + confidence) / 2])
    return VarianceEstimate(sigma2, float((hi - lo) / 2), len(samples), confidence)


def estimate_variance_diffusive(
    fronts: Sequence[FrontTrace],
    t_grid: Sequence[float],
    v_hat: float,
    confidence: float = 0.95,
) -> VarianceEstimate:
    """Slope of across-replica ``Var(r_t - v*t)`` against ``t``."""
    t_grid = np.asarray(sorted(t_grid), dtype=np.float64)
    if t_grid.size < 3:
        raise ParameterError("need at least 3 grid points")
    used = [tr for tr in fronts if not tr.censored]
    if len(used) < 2:
        raise InsufficientDataError("need >= 2 uncensored traces")
    for tr in used:
        if t_grid[-1] > tr.t_end:
            raise HorizonError("grid exceeds a trace horizon")
    var_t = np.empty(t_grid.size)
    for k, t in enumerate(t_grid):
        vals = np.asarray([tr.position_at(t) - v_hat * t for tr in used])
        var_t[k] = vals.var(ddof=1)
    # ordinary least squares with intercept
    x = np.column_stack([np.ones_like(t_grid), t_grid])
    coef, residuals, *_ = np.linalg.lstsq(x, var_t, rcond=None)
    fit = x @ coef
    rmse = float(np.sqrt(np.mean((var_t - fit) ** 2)))
    dof = t_grid.size - 2
    s2 = float(((var_t - fit) ** 2).sum() / dof) if dof > 0 else math.nan
    sxx = float(((t_grid - t_grid.mean()) ** 2).sum())
    se = math.sqrt(s2 / sxx) if sxx > 0 else math.nan
    z = Z95 if confidence == 0.95 else _z_for(confidence)
    return VarianceEstimate(
        sigma2=float(coef[1]),
        ci_halfwidth=z * se,
        n=len(used),
        confidence=confidence,
        fit_residual_rmse=rmse,
    )


@dataclass(frozen=True)
class IidDiagnostics:
    lag1_d_kappa: float
    lag1_d_r: float
    lag1_threshold: float
    two_sample_d_kappa: float
    two_sample_d_r: float
    n: int
    n_lag_pairs: int


def _lag1_corr(pairs_x: np.ndarray, pairs_y: np.ndarray) -> float:
    if pairs_x.size < 2 or pairs_x.std() == 0 or pairs_y.std() == 0:
        return math.nan
    return float(np.corrcoef(pairs_x, pairs_y)[0, 1])


def _ecdf_distance(a: np.ndarray, b: np.ndarray) -> float:
    grid = np.concatenate([a, b])
    fa = np.searchsorted(np.sort(a), grid, side="right") / a.size
    fb = np.searchsorted(np.sort(b), grid, side="right") / b.size
    return float(np.abs(fa - fb).max())


def iid_diagnostics(samples: Sequence[IncrementSample]) -> IidDiagnostics:
    """Lag-1 autocorrelation within replicas and a first-half/second-half
    two-sample distance on the pooled index->=1 increments."""
    pooled = sorted(
        (s for s in samples if s.index >= 1), key=lambda s: (s.replica, s.index)
    )
    n = len(pooled)
    if n < 50:
        raise InsufficientDataError(f"need >= 50 pooled increments, got {n}")
    # consecutive-index pairs within each replica; index 0 -> 1 transitions
    # are included through the raw samples list when present
    by_rep: dict[int, list[IncrementSample]] = {}
    for s in sorted(samples, key=lambda s: (s.replica, s.index)):
        by_rep.setdefault(s.replica, []).append(s)
    xk, yk, xr, yr = [], [], [], []
    for group in by_rep.values():
        for a, b in zip(group, group[1:]):
            if b.index == a.index + 1:
                xk.append(a.d_kappa)
                yk.append(b.d_kappa)
                xr.append(a.d_r)
                yr.append(b.d_r)
    xk, yk = np.asarray(xk), np.asarray(yk)
    xr, yr = np.asarray(xr, dtype=float), np.asarray(yr, dtype=float)
    if xk.size < 2:
        raise InsufficientDataError("fewer than 2 consecutive-index pairs")
    halves_first, halves_second = [], []
    for group in by_rep.values():
        idx1 = [s for s in group if s.index >= 1]
        half = len(idx1) // 2
        halves_first.extend(idx1[:half])
        halves_second.extend(idx1[half:])
    dk1 = np.asarray([s.d_kappa for s in halves_first])
    dk2 = np.asarray([s.d_kappa for s in halves_second])
    dr1 = np.asarray([s.d_r for s in halves_first], dtype=float)
    dr2 = np.asarray([s.d_r for s in halves_second], dtype=float)
    if dk1.size == 0 or dk2.size == 0:
        raise InsufficientDataError("half pools are empty")
    return IidDiagnostics(
        lag1_d_kappa=_lag1_corr(xk, yk),
        lag1_d_r=_lag1_corr(xr, yr),
        lag1_threshold=3.0 / math.sqrt(xk.size),
        two_sample_d_kappa=_ecdf_distance(dk1, dk2),
        two_sample_d_r=_ecdf_distance(dr1, dr2),
        n=n,
        n_lag_pairs=int(xk.size),
    )


def calibrate_two_sample_threshold(
    n1: int, n2: int, quantile: float = 0.99, n_sim: int = 2000, seed: int = 0
) -> float:
    """Null quantile of the max-ECDF distance for sample sizes (n1, n2).

    The statistic is distribution-free, so uniform draws suffice."""
    rng = np.random.default_rng(seed)
    stats = np.empty(n_sim)
    for i in range(n_sim):
        a = rng.random(n1)
        b = rng.random(n2)
        stats[i] = _ecdf_distance(a, b)
    return float(np.quantile(stats, quantile))


@dataclass(frozen=True)
class GaussianProfileReport:
    decile_rmse: float
    deciles_empirical: tuple
    deciles_normal: tuple
    n: int
    degenerate: bool = False


def gaussian_profile_check(
    fronts: Sequence[FrontTrace], t_eval: float, v_hat: float, sigma2: float
) -> GaussianProfileReport:
    """Compare the standardized front value across replicas to the standard
    normal deciles."""
    if sigma2 <= 0:
        raise ParameterError("sigma2 must be > 0")
    used = [tr for tr in fronts if not tr.censored]
    vals = []
    for tr in used:
        if t_eval > tr.t_end:
            raise HorizonError("t_eval beyond a trace horizon")
        vals.append((tr.position_at(t_eval) - v_hat * t_eval)
                    / math.sqrt(sigma2 * t_eval))
    arr = np.asarray(vals)
    if arr.size < 10:
        raise InsufficientDataError("need >= 10 replicas")
    if arr.std() == 0:
        return GaussianProfileReport(math.nan, (), (), arr.size, degenerate=True)
    from scipy.stats import norm

    qs = np.arange(1, 10) / 10.0
    emp = np.quantile(arr, qs)
    ref = norm.ppf(qs)
    rmse = float(np.sqrt(np.mean((emp - ref) ** 2)))
    return GaussianProfileReport(
        decile_rmse=rmse,
        deciles_empirical=tuple(float(x) for x in emp),
        deciles_normal=tuple(float(x) for x in ref),
        n=int(arr.size),
    )


@dataclass(frozen=True)
class BallisticityReport:
    t_grid: tuple
    line_violation_fraction: tuple  # P(exists s >= t with r_s <= alpha*s)
    max_ratio: tuple  # max over replicas of r_t / t
    alpha: float


def ballisticity_report(
    fronts: Sequence[FrontTrace], alpha: float, t_grid: Sequence[float]
) -> BallisticityReport:
    """Qualitative ballisticity summary; no pass/fail (the comparison
    constants are not published)."""
    t_grid = sorted(t_grid)
    sup_open = []  # sup of violation times inside plateaus (not attained)
    final_hit = []  # the line catches the front at the closed end point
    for tr in fronts:
        times = np.concatenate([[0.0], tr.times, [tr.t_end]])
        vals = np.concatenate(
            [[tr.r0], tr.positions, [tr.positions[-1] if tr.n_jumps else tr.r0]]
        )
        worst = -math.inf
        for b, r in zip(times[1:], vals[:-1]):
            # plateau value r holds on [a, b); the rising line catches it
            # somewhere before b iff r < alpha * b (sup never attained)
            if r < alpha * b:
                worst = max(worst, float(b))
        sup_open.append(worst)
        final_hit.append(vals[-1] <= alpha * tr.t_end)
    frac = tuple(
        float(np.mean([
            (t < lv) or (hit and t <= tr.t_end)
            for lv, hit, tr in zip(sup_open, final_hit, fronts)
        ]))
        for t in t_grid
    )
    ratios = tuple(
        float(max((tr.position_at(t) / t) for tr in fronts)) if t > 0 else math.nan
        for t in t_grid
    )
    return BallisticityReport(
        t_grid=tuple(t_grid),
        line_violation_fraction=frac,
        max_ratio=ratios,
        alpha=alpha,
    )


@dataclass(frozen=True)
class EstimateReport:
    v_hat: float
    v_ci: float
    sigma2_renewal: float
    sigma2_renewal_ci: float
    sigma2_diffusive: float
    sigma2_diffusive_ci: float
    n_increments: int
    n_replicas: int
    n_censored: int
    confidence: float
    lag1_d_kappa: float = math.nan
    lag1_d_r: float = math.nan
    two_sample_distance: float = math.nan
    gaussian_decile_rmse: float = math.nan
    notes: tuple = ()

    def as_json(self) -> str:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["notes"] = list(self.notes)
        return json.dumps(d, indent=2, default=float)
