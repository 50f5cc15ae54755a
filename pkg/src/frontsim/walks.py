"""Two-sided continuous-time nearest-neighbor random walks.

A trajectory is piecewise constant (cadlag in forward time) and is stored as
its jump lists.  The backward half is generated as an independent walk from
``x0`` indexed by ``-t``; a backward jump ``(tau, d)`` with ``tau < 0`` means
the position gains ``d`` as the time axis is crossed at ``tau`` going
backward, so that ``position_at(tau)`` already shows the forward-time
(post-jump) value.  With this convention the full path is cadlag on the whole
simulated window and ``position_at(0) == x0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .errors import HorizonError, ParameterError

if TYPE_CHECKING:  # pragma: no cover
    from .config import Configuration

__all__ = [
    "ParticlePath",
    "TimeChange",
    "BoundReport",
    "ProbabilityReport",
    "simulate_two_sided_walk",
    "extend_forward",
    "apply_time_change",
    "mu_of",
    "check_lemma2_bound",
    "check_line_avoidance",
    "path_to_text",
    "path_from_text",
]


def mu_of(alpha: float, theta: float) -> float:
    """Decay exponent ``alpha*theta - 2*(cosh(theta) - 1)`` of the
    line-hitting bound.  Positive values make the bound summable; callers
    validate positivity themselves."""
    if alpha <= 0 or theta <= 0:
        raise ParameterError(f"alpha and theta must be > 0, got {alpha}, {theta}")
    return alpha * theta - 2.0 * (math.cosh(theta) - 1.0)


@dataclass(frozen=True)
class TimeChange:
    """Residual clock speedup applied to an infected particle.

    ``tau`` is the first front-contact time (real clock); from ``tau`` on the
    particle consumes its base trajectory ``speedup`` times faster.
    """

    tau: float
    speedup: float


@dataclass(frozen=True)
class ParticlePath:
    """A labelled two-sided trajectory on the integers.

    ``fwd_times``/``fwd_steps`` hold the forward jumps (times in
    ``(0, t_fwd]``, ascending).  ``bwd_times``/``bwd_steps`` hold the backward
    jumps (times in ``[t_back, 0)``, descending, i.e. closest to zero first).
    Steps are +-1.  Instances are immutable; extension produces a new value.
    """

    label: float
    x0: int
    fwd_times: np.ndarray
    fwd_steps: np.ndarray
    bwd_times: np.ndarray
    bwd_steps: np.ndarray
    t_back: float
    t_fwd: float
    rate: float = 2.0
    # cumulative positions after k jumps, computed once at construction
    _fwd_cum: np.ndarray = field(init=False, repr=False, compare=False)
    _bwd_cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ft = np.asarray(self.fwd_times, dtype=np.float64)
        fs = np.asarray(self.fwd_steps, dtype=np.int64)
        bt = np.asarray(self.bwd_times, dtype=np.float64)
        bs = np.asarray(self.bwd_steps, dtype=np.int64)
        object.__setattr__(self, "fwd_times", ft)
        object.__setattr__(self, "fwd_steps", fs)
        object.__setattr__(self, "bwd_times", bt)
        object.__setattr__(self, "bwd_steps", bs)
        if ft.size and not np.all(np.diff(ft) > 0):
            raise ParameterError("forward jump times must be strictly increasing")
        if bt.size and not np.all(np.diff(bt) < 0):
            raise ParameterError("backward jump times must be strictly decreasing")
        if ft.size and (ft[0] <= 0 or ft[-1] > self.t_fwd):
            raise ParameterError("forward jump times must lie in (0, t_fwd]")
        if bt.size and (bt[0] >= 0 or bt[-1] < self.t_back):
            raise ParameterError("backward jump times must lie in [t_back, 0)")
        for steps in (fs, bs):
            if steps.size and not np.all(np.abs(steps) == 1):
                raise ParameterError("steps must be +-1")
        if not (self.t_back <= 0.0 <= self.t_fwd):
            raise ParameterError("need t_back <= 0 <= t_fwd")
        object.__setattr__(self, "_fwd_cum", np.concatenate(([0], np.cumsum(fs))))
        object.__setattr__(self, "_bwd_cum", np.concatenate(([0], np.cumsum(bs))))

    @property
    def n_jumps(self) -> int:
        return int(self.fwd_times.size + self.bwd_times.size)

    def position_at(self, t: float) -> int:
        """Cadlag position at time ``t``; raises outside the horizon."""
        if t > self.t_fwd or t < self.t_back:
            raise HorizonError(
                f"t={t} outside simulated horizon [{self.t_back}, {self.t_fwd}]"
            )
        if t >= 0:
            k = int(np.searchsorted(self.fwd_times, t, side="right"))
            return int(self.x0 + self._fwd_cum[k])
        # backward side: include every jump with time > t
        k = int(np.searchsorted(-self.bwd_times, -t, side="left"))
        return int(self.x0 + self._bwd_cum[k])

    def positions_at(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`position_at` (no horizon check skipped)."""
        ts = np.asarray(ts, dtype=np.float64)
        if ts.size and (ts.max() > self.t_fwd or ts.min() < self.t_back):
            raise HorizonError("some query times outside simulated horizon")
        out = np.empty(ts.shape, dtype=np.int64)
        fwd = ts >= 0
        kf = np.searchsorted(self.fwd_times, ts[fwd], side="right")
        out[fwd] = self.x0 + self._fwd_cum[kf]
        kb = np.searchsorted(-self.bwd_times, -ts[~fwd], side="left")
        out[~fwd] = self.x0 + self._bwd_cum[kb]
        return out


def simulate_two_sided_walk(
    x0: int,
    rate: float,
    t_back: float,
    t_fwd: float,
    rng: np.random.Generator,
    label: float = 0.0,
) -> ParticlePath:
    """Simulate a symmetric nearest-neighbor walk in both time directions.

    The forward and backward halves are independent walks from ``x0`` with
    exponential(rate) inter-jump gaps and fair +-1 steps.  The forward half is
    drawn first, then the backward half, so a fixed generator state yields a
    reproducible path.
    """
    if rate < 0:
        raise ParameterError(f"rate must be >= 0, got {rate}")
    if not (t_back <= 0.0 <= t_fwd):
        raise ParameterError("need t_back <= 0 <= t_fwd")
    fwd_t, fwd_s = _draw_jumps(rate, t_fwd, rng)
    bwd_t, bwd_s = _draw_jumps(rate, -t_back, rng)
    return ParticlePath(
        label=label,
        x0=x0,
        fwd_times=fwd_t,
        fwd_steps=fwd_s,
        bwd_times=-bwd_t,
        bwd_steps=bwd_s,
        t_back=t_back,
        t_fwd=t_fwd,
        rate=rate,
    )


def _draw_jumps(rate: float, horizon: float, rng: np.random.Generator):
    """Jump times in (0, horizon] and +-1 steps for one walk half."""
    if horizon <= 0 or rate == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    pieces = []
    t = 0.0
    while True:
        # one chunk covers the remaining span with ~4 sigma of headroom
        mean = rate * (horizon - t)
        chunk = int(mean + 4.0 * math.sqrt(mean + 1.0)) + 16
        cum = t + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
        k = int(np.searchsorted(cum, horizon, side="right"))
        pieces.append(cum[:k])
        if k < chunk:
            break
        t = float(cum[-1])
    times = np.concatenate(pieces) if len(pieces) > 1 else pieces[0]
    steps = rng.integers(0, 2, size=times.size) * 2 - 1
    return times, steps


def extend_forward(
    path: ParticlePath, new_t_fwd: float, rng: np.random.Generator
) -> ParticlePath:
    """Extend the forward horizon with fresh randomness; the existing jump
    list is preserved bit for bit."""
    if new_t_fwd < path.t_fwd:
        raise HorizonError("new horizon must not shrink the path")
    if new_t_fwd == path.t_fwd:
        return path
    extra_t, extra_s = _draw_jumps(path.rate, new_t_fwd - path.t_fwd, rng)
    return ParticlePath(
        label=path.label,
        x0=path.x0,
        fwd_times=np.concatenate([path.fwd_times, path.t_fwd + extra_t]),
        fwd_steps=np.concatenate([path.fwd_steps, extra_s]),
        bwd_times=path.bwd_times,
        bwd_steps=path.bwd_steps,
        t_back=path.t_back,
        t_fwd=new_t_fwd,
        rate=path.rate,
    )


def apply_time_change(
    path: ParticlePath, tau: float, d_r: float, d_b: float
) -> ParticlePath:
    """Speed the residual trajectory up by ``d_r / d_b`` from time ``tau``.

    The returned path agrees with the input on ``[t_back, tau]``; a base jump
    at time ``v > tau`` lands at ``tau + (v - tau) * d_b / d_r``.  The forward
    horizon shrinks accordingly.  ``d_r == d_b`` returns the input unchanged.
    """
    if not (0.0 <= tau <= path.t_fwd):
        raise HorizonError(f"tau={tau} outside [0, {path.t_fwd}]")
    if d_r < d_b or d_b <= 0:
        raise ParameterError("need d_r >= d_b > 0")
    if d_r == d_b:
        return path
    shrink = d_b / d_r
    late = path.fwd_times > tau
    new_times = path.fwd_times.copy()
    new_times[late] = tau + (path.fwd_times[late] - tau) * shrink
    return ParticlePath(
        label=path.label,
        x0=path.x0,
        fwd_times=new_times,
        fwd_steps=path.fwd_steps,
        bwd_times=path.bwd_times,
        bwd_steps=path.bwd_steps,
        t_back=path.t_back,
        t_fwd=tau + (path.t_fwd - tau) * shrink,
        rate=path.rate,
    )


# ---------------------------------------------------------------------------
# Vectorized walk batches (used by the Monte Carlo bound checks)
# ---------------------------------------------------------------------------


def _batch_walks(
    x0s: np.ndarray, rate: float, horizon: float, rng: np.random.Generator
):
    """Simulate ``len(x0s)`` independent forward walks to ``horizon``.

    Returns flattened event arrays ``(walk_id, times, positions)`` where
    ``positions`` are the post-jump values, plus the per-walk jump counts.
    Jump times are uniform order statistics given Poisson counts, which is
    the same law as exponential gaps.
    """
    n = x0s.size
    counts = rng.poisson(rate * horizon, size=n)
    total = int(counts.sum())
    wid = np.repeat(np.arange(n), counts)
    times = rng.uniform(0.0, horizon, size=total)
    order = np.lexsort((times, wid))
    times = times[order]
    steps = rng.integers(0, 2, size=total) * 2 - 1
    # per-walk cumulative positions: global cumsum minus the sum accumulated
    # before each walk's first event
    cum = np.cumsum(steps)
    starts = np.concatenate(([0], np.cumsum(counts)))[:-1]
    prev = np.zeros(n, dtype=np.int64)
    nonzero = counts > 0
    prev[nonzero] = np.where(starts[nonzero] > 0, cum[starts[nonzero] - 1], 0)
    positions = x0s[wid] + cum - prev[wid]
    return wid, times, positions, counts


def _crossing_mask(
    x0s: np.ndarray,
    wid: np.ndarray,
    times: np.ndarray,
    positions: np.ndarray,
    alpha: float,
    t_from: float,
    horizon: float,
) -> np.ndarray:
    """Per-walk indicator of ``exists s in [t_from, horizon]: W_s >= alpha*s``.

    Exact on the jump grid: the line rises between jumps, so it suffices to
    test each post-jump value at its own jump time (for jumps after
    ``t_from``) and the value held at ``t_from`` itself.
    """
    n = x0s.size
    hit = np.zeros(n, dtype=bool)
    # value at time t_from: last event <= t_from per walk, else x0.  Events
    # are sorted by (walk, time), so that event sits at starts + count - 1.
    at_start = x0s.astype(np.float64).copy()
    before = times <= t_from
    if before.any():
        cnt_before = np.bincount(wid[before], minlength=n)
        counts_all = np.bincount(wid, minlength=n)
        starts = np.concatenate(([0], np.cumsum(counts_all)))[:-1]
        has = cnt_before > 0
        at_start[has] = positions[(starts + cnt_before - 1)[has]]
    hit |= at_start >= alpha * t_from
    after = (times > t_from) & (times <= horizon)
    if after.any():
        viol = positions[after] >= alpha * times[after]
        np.logical_or.at(hit, wid[after][viol], True)
    return hit


@dataclass(frozen=True)
class BoundReport:
    """Monte Carlo estimate against a closed-form bound."""

    empirical_prob: float
    ci_halfwidth: float
    bound: float
    passed: bool
    n: int
    horizon: float

    def as_dict(self) -> dict:
        return {
            "empirical_prob": self.empirical_prob,
            "ci_halfwidth": self.ci_halfwidth,
            "bound": self.bound,
            "pass": self.passed,
            "n": self.n,
            "horizon": self.horizon,
        }


@dataclass(frozen=True)
class ProbabilityReport:
    estimate: float
    ci_halfwidth: float
    truncation_bound: float
    n: int
    horizon: float


def _binomial_halfwidth(p_hat: float, n: int) -> float:
    # normal-approximation halfwidth with a 3/n floor so p_hat == 0 does not
    # produce a degenerate interval
    return max(1.96 * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n), 3.0 / n)


def check_lemma2_bound(
    x0: int,
    alpha: float,
    theta: float,
    t: float,
    rate: float,
    n: int,
    rng: np.random.Generator,
) -> BoundReport:
    """Estimate ``P(exists s >= t: W_s >= alpha*s)`` for a single walk from
    ``x0 <= 0`` and compare it to ``exp(theta*x0 - mu*t)``.

    The simulation horizon ``H`` is chosen so that the same bound restarted
    at ``H`` is below a tenth of the CI floor; that residual is added to the
    reported CI so the verdict stays conservative.
    """
    if x0 > 0:
        raise ParameterError("x0 must be <= 0")
    mu = mu_of(alpha, theta)
    if mu <= 0:
        raise ParameterError(f"mu = {mu} must be > 0 (line slope too small)")
    if n < 10**3:
        raise ParameterError("need n >= 1000")
    bound = math.exp(theta * x0 - mu * t)
    # residual tolerance anchored to the CI floor 3/n
    tol = 0.3 / n
    h_needed = (theta * x0 + math.log(1.0 / tol)) / mu
    horizon = max(t + 1.0, h_needed)
    x0s = np.full(n, x0, dtype=np.int64)
    wid, times, positions, _ = _batch_walks(x0s, rate, horizon, rng)
    hit = _crossing_mask(x0s, wid, times, positions, alpha, t, horizon)
    p_hat = float(hit.mean())
    resid = math.exp(theta * x0 - mu * horizon)
    ci = _binomial_halfwidth(p_hat, n) + resid
    return BoundReport(
        empirical_prob=p_hat,
        ci_halfwidth=ci,
        bound=bound,
        passed=(p_hat - 3.0 * ci) <= bound,
        n=n,
        horizon=horizon,
    )


def check_line_avoidance(
    w: "Configuration",
    alpha: float,
    t_fwd: float,
    n: int,
    rng: np.random.Generator,
    theta: float = 0.5,
) -> ProbabilityReport:
    """Estimate the probability that no walk started from ``w`` reaches the
    line ``alpha*s`` on ``(0, t_fwd]``.

    All particles of ``w`` must start at sites <= 0.  The truncation bound
    ``phi_theta(w) * exp(-mu*t_fwd)`` reports how much probability the finite
    horizon can hide.
    """
    from .config import phi_theta  # local import to avoid a module cycle

    starts = []
    for site in sorted(w.sites):
        if site > 0 and w.sites[site]:
            raise ParameterError("all particles must start at sites <= 0")
        starts.extend([site] * len(w.sites[site]))
    mu = mu_of(alpha, theta)
    if mu <= 0:
        raise ParameterError(f"mu = {mu} must be > 0")
    if not starts:
        return ProbabilityReport(1.0, 0.0, 0.0, n, t_fwd)
    k = len(starts)
    x0s = np.tile(np.asarray(starts, dtype=np.int64), n)
    wid, times, positions, _ = _batch_walks(x0s, 2.0, t_fwd, rng)
    # crossing on (0, t_fwd]: any post-jump value on or above the line
    cross = np.zeros(n * k, dtype=bool)
    viol = positions >= alpha * times
    np.logical_or.at(cross, wid[viol], True)
    avoided = ~cross.reshape(n, k).any(axis=1)
    p_hat = float(avoided.mean())
    return ProbabilityReport(
        estimate=p_hat,
        ci_halfwidth=_binomial_halfwidth(p_hat, n),
        truncation_bound=phi_theta(w, theta) * math.exp(-mu * t_fwd),
        n=n,
        horizon=t_fwd,
    )


# ---------------------------------------------------------------------------
# Text trace format: header "label x0 t_back t_fwd", one "time<TAB>step" line
# per jump, backward jumps carrying negative times.
# ---------------------------------------------------------------------------


def path_to_text(path: ParticlePath) -> str:
    lines = [
        f"{path.label:.17g} {path.x0} {path.t_back:.17g} {path.t_fwd:.17g} {path.rate:.17g}"
    ]
    for t, s in zip(path.bwd_times, path.bwd_steps):
        lines.append(f"{t:.17g}\t{int(s)}")
    for t, s in zip(path.fwd_times, path.fwd_steps):
        lines.append(f"{t:.17g}\t{int(s)}")
    return "\n".join(lines) + "\n"


def path_from_text(text: str) -> ParticlePath:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) not in (4, 5):
        raise ParameterError("bad path header")
    label, x0, t_back, t_fwd = float(head[0]), int(head[1]), float(head[2]), float(head[3])
    rate = float(head[4]) if len(head) == 5 else 2.0
    bwd, fwd = [], []
    for ln in lines[1:]:
        t_s, s_s = ln.split("\t")
        t, s = float(t_s), int(s_s)
        (bwd if t < 0 else fwd).append((t, s))
    fwd.sort(key=lambda p: p[0])
    bwd.sort(key=lambda p: -p[0])
    return ParticlePath(
        label=label,
        x0=x0,
        fwd_times=np.asarray([t for t, _ in fwd]),
        fwd_steps=np.asarray([s for _, s in fwd], dtype=np.int64),
        bwd_times=np.asarray([t for t, _ in bwd]),
        bwd_steps=np.asarray([s for _, s in bwd], dtype=np.int64),
        t_back=t_back,
        t_fwd=t_fwd,
        rate=rate,
    )


def scripted_path(
    label: float,
    x0: int,
    fwd: Iterable[tuple[float, int]] = (),
    bwd: Iterable[tuple[float, int]] = (),
    t_back: float = 0.0,
    t_fwd: float = 0.0,
    rate: float = 2.0,
) -> ParticlePath:
    """Convenience constructor for deterministic test trajectories."""
    fwd = sorted(fwd, key=lambda p: p[0])
    bwd = sorted(bwd, key=lambda p: -p[0])
    t_fwd = max([t_fwd] + [t for t, _ in fwd])
    t_back = min([t_back] + [t for t, _ in bwd])
    return ParticlePath(
        label=label,
        x0=x0,
        fwd_times=np.asarray([t for t, _ in fwd], dtype=np.float64),
        fwd_steps=np.asarray([s for _, s in fwd], dtype=np.int64),
        bwd_times=np.asarray([t for t, _ in bwd], dtype=np.float64),
        bwd_steps=np.asarray([s for _, s in bwd], dtype=np.int64),
        t_back=t_back,
        t_fwd=t_fwd,
        rate=rate,
    )
