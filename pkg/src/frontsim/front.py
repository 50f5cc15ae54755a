"""Front construction and pathwise coupling checks.

The front of a particle system is piecewise constant; all checks here are
exact on the merged event grid rather than sampled.  Three dynamics are
provided: the standard two-way front, the modified front that is never
allowed below zero, and the monotone remanent front in which infected
particles run on an accelerated clock.
"""

from __future__ import annotations

import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .config import Configuration
from .errors import (
    ConsistencyError,
    EmptyLeftError,
    FrontsimError,
    HorizonError,
    ParameterError,
)
from .walks import ParticlePath, TimeChange, simulate_two_sided_walk

__all__ = [
    "ParticleSystem",
    "FrontTrace",
    "RedBlueSnapshot",
    "CouplingVerdict",
    "system_from_configuration",
    "build_front_single_rate",
    "build_front_modified",
    "build_front_remanent",
    "symmetrize",
    "red_blue_at",
    "check_coupling_addition",
    "check_coupling_modified",
    "check_coupling_symmetrize",
    "check_lemma6",
    "check_lemma7",
    "front_to_csv",
    "front_from_csv",
]

_psi_counter = itertools.count(1)


@dataclass(frozen=True)
class ParticleSystem:
    """An immutable set of labelled trajectories over a common horizon."""

    paths: tuple[ParticlePath, ...]
    window: tuple[int, int]
    t_back: float
    t_fwd: float
    tau_unresolved: frozenset = frozenset()

    def __post_init__(self):
        labels = [p.label for p in self.paths]
        if len(set(labels)) != len(labels):
            raise ParameterError("labels must be pairwise distinct")
        for p in self.paths:
            if p.t_back > self.t_back or p.t_fwd < self.t_fwd:
                raise ParameterError(
                    f"path {p.label} horizon [{p.t_back}, {p.t_fwd}] does not "
                    f"cover the system horizon [{self.t_back}, {self.t_fwd}]"
                )
        object.__setattr__(self, "paths", tuple(sorted(self.paths, key=lambda p: p.label)))
        object.__setattr__(self, "_token", next(_psi_counter))
        object.__setattr__(self, "_events_cache", None)

    @property
    def n_particles(self) -> int:
        return len(self.paths)

    @property
    def labels(self) -> tuple[float, ...]:
        return tuple(p.label for p in self.paths)

    def index_of(self, label: float) -> int:
        for i, p in enumerate(self.paths):
            if p.label == label:
                return i
        raise KeyError(label)

    def x0s(self) -> np.ndarray:
        return np.asarray([p.x0 for p in self.paths], dtype=np.int64)

    def positions_at(self, t: float) -> np.ndarray:
        """Every particle's position at time t, in path order."""
        return np.asarray([p.position_at(t) for p in self.paths], dtype=np.int64)

    def forward_events(self):
        """Merged forward events sorted by (time, path index).

        Returns (times, pids, steps); cached after the first call.
        """
        cached = getattr(self, "_events_cache")
        if cached is not None:
            return cached
        times = np.concatenate([p.fwd_times for p in self.paths]) if self.paths else np.empty(0)
        steps = (
            np.concatenate([p.fwd_steps for p in self.paths])
            if self.paths
            else np.empty(0, dtype=np.int64)
        )
        pids = np.repeat(
            np.arange(len(self.paths), dtype=np.int64),
            [p.fwd_times.size for p in self.paths],
        )
        # stable sort: simultaneous times (probability zero) fall back to the
        # label order in which paths are stored
        order = np.argsort(times, kind="stable")
        out = (times[order], pids[order], steps[order].astype(np.int64))
        object.__setattr__(self, "_events_cache", out)
        return out


def system_from_configuration(
    config: Configuration,
    rate: float,
    t_back: float,
    t_fwd: float,
    rng: np.random.Generator,
) -> ParticleSystem:
    """Attach an independent two-sided walk to every particle of ``config``.

    Randomness is consumed site-ascending, labels descending within a site,
    so a fixed generator state yields a reproducible system.
    """
    paths = []
    for x, labels in config.items():
        for u in labels:
            paths.append(
                simulate_two_sided_walk(x, rate, t_back, t_fwd, rng, label=u)
            )
    return ParticleSystem(
        paths=tuple(paths), window=config.window, t_back=t_back, t_fwd=t_fwd
    )


@dataclass(frozen=True)
class FrontTrace:
    """Jump times and positions of the front, plus direction and mover."""

    r0: int
    times: np.ndarray  # float64, strictly increasing
    positions: np.ndarray  # int64, post-jump values
    directions: np.ndarray  # int64, +1 up / -1 down
    movers: np.ndarray  # float64 labels
    t_end: float
    censored: bool = False

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=np.int64))
        object.__setattr__(self, "directions", np.asarray(self.directions, dtype=np.int64))
        object.__setattr__(self, "movers", np.asarray(self.movers, dtype=np.float64))
        if self.times.size and not np.all(np.diff(self.times) > 0):
            raise ParameterError("front jump times must be strictly increasing")
        if self.positions.size:
            prev = np.concatenate(([self.r0], self.positions[:-1]))
            if not np.all(np.abs(self.positions - prev) == 1):
                raise ParameterError("front must move by exactly one site per jump")

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    def position_at(self, t: float) -> int:
        if t < 0 or t > self.t_end:
            raise HorizonError(f"t={t} outside [0, {self.t_end}]")
        k = int(np.searchsorted(self.times, t, side="right"))
        return int(self.r0 if k == 0 else self.positions[k - 1])

    def positions_at(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.float64)
        k = np.searchsorted(self.times, ts, side="right")
        ext = np.concatenate(([self.r0], self.positions))
        return ext[k]

    def running_max_at(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right"))
        if k == 0:
            return self.r0
        return int(max(self.r0, self.positions[:k].max()))

    def upward_indices(self) -> np.ndarray:
        return np.flatnonzero(self.directions == 1)


@dataclass(frozen=True)
class RedBlueSnapshot:
    t: float
    red_labels: frozenset
    blue_labels: frozenset


@dataclass(frozen=True)
class CouplingVerdict:
    passed: bool
    n_events: int
    first_violation: Optional[tuple] = None
    warning: Optional[str] = None

    def as_json(self) -> str:
        return json.dumps(
            {
                "pass": self.passed,
                "n_events": self.n_events,
                "first_violation": self.first_violation,
                "warning": self.warning,
            }
        )


def _site_bounds(psi: ParticleSystem, t_end: float, rate: float):
    x0s = psi.x0s()
    lo = int(x0s.min()) if x0s.size else 0
    hi = int(x0s.max()) if x0s.size else 0
    pad = int(8.0 * math.sqrt(max(rate, 1.0) * max(t_end, 1.0))) + 64
    return lo, hi, pad


def _attach(trace: FrontTrace, psi: ParticleSystem, inf_times: np.ndarray, tc=None):
    object.__setattr__(trace, "_psi_token", getattr(psi, "_token"))
    object.__setattr__(trace, "_inf_times", inf_times)
    object.__setattr__(trace, "_time_changes", tc)
    return trace


def _censored(
    window: tuple[int, int],
    rate: float,
    r0: int,
    times: np.ndarray,
    positions: np.ndarray,
) -> bool:
    """Was the front ever within diffusive range of the initial window edge?

    The standoff is four standard deviations of a single walk at the time the
    excursion happens; beyond it, vacuum outside the window cannot plausibly
    have influenced the front yet."""
    lo, hi = window
    if not times.size:
        return r0 <= lo or r0 >= hi
    guard = 4.0 * np.sqrt(np.maximum(rate * times, 1.0))
    near_right = bool((positions > hi - guard).any())
    near_left = bool((positions < lo + guard).any())
    return near_right or near_left


def infection_times(psi: ParticleSystem, front: FrontTrace) -> np.ndarray:
    """First front-contact time per particle (path order), +inf if never."""
    if getattr(front, "_psi_token", None) != getattr(psi, "_token"):
        raise ConsistencyError("front was not built from this particle system")
    return getattr(front, "_inf_times")


def _build_standard(psi: ParticleSystem, modified: bool, t_end: Optional[float]):
    if not psi.paths:
        if not modified:
            raise EmptyLeftError("no particles at all")
    rates = {p.rate for p in psi.paths}
    if len(rates) > 1:
        raise ParameterError(f"paths carry distinct rates {sorted(rates)}")
    rate = rates.pop() if rates else 2.0
    t_end = psi.t_fwd if t_end is None else t_end
    if t_end > psi.t_fwd:
        raise HorizonError("t_end beyond simulated horizon")
    x0s = psi.x0s()
    if modified:
        r0 = 0
    else:
        left = x0s[x0s <= 0]
        if left.size == 0:
            raise EmptyLeftError("no particle at a site <= 0 at time zero")
        r0 = int(left.max())
    times, pids, steps = psi.forward_events()
    keep = times <= t_end
    times, pids, steps = times[keep], pids[keep], steps[keep]
    lo, hi, pad = _site_bounds(psi, t_end, rate)
    for _ in range(4):
        site_lo = min(lo, r0, 0) - pad
        n_sites = (max(hi, r0, 0) + pad) - site_lo + 1
        (err, n_jump, jt, jp, jd, jm, inf_times_arr, post, max_front) = (
            _kernels.sweep_single_rate(
                times, pids, steps, x0s, r0, site_lo, n_sites, modified, t_end
            )
        )
        if err == 0:
            break
        pad *= 2
    else:
        raise FrontsimError("event sweep kept escaping the padded site range")
    movers = np.asarray([psi.paths[i].label for i in jm[:n_jump]], dtype=np.float64)
    censored = _censored(psi.window, rate, r0, jt[:n_jump], jp[:n_jump])
    trace = FrontTrace(
        r0=r0,
        times=jt[:n_jump].copy(),
        positions=jp[:n_jump].copy(),
        directions=jd[:n_jump].copy(),
        movers=movers,
        t_end=t_end,
        censored=censored,
    )
    _attach(trace, psi, inf_times_arr)
    object.__setattr__(trace, "_events", (times, pids, (post[: times.size]).copy(), steps))
    return trace


def build_front_single_rate(psi: ParticleSystem, t_end: Optional[float] = None) -> FrontTrace:
    """Standard dynamics: the front climbs when a particle steps off it and
    drops when its unique occupant steps down."""
    return _build_standard(psi, modified=False, t_end=t_end)


def build_front_modified(psi: ParticleSystem, t_end: Optional[float] = None) -> FrontTrace:
    """Same dynamics started at zero, with downward jumps from zero ignored."""
    return _build_standard(psi, modified=True, t_end=t_end)


def build_front_remanent(
    psi: ParticleSystem,
    d_r: float,
    d_b: float,
    t_end: Optional[float] = None,
) -> tuple[FrontTrace, dict]:
    """Monotone front with remanent infection and per-particle clock changes.

    Base paths must be simulated at rate ``d_b`` (at ``d_r`` for the frog
    degeneracy ``d_b == 0``, where susceptible particles are frozen).  An
    infected particle's residual trajectory runs ``d_r/d_b`` times faster, so
    the safe real-time horizon is ``t_fwd * d_b / d_r``; asking beyond it
    raises.  Returns the trace and a label -> TimeChange map for infected
    particles.
    """
    if d_r < d_b or d_r <= 0 or d_b < 0:
        raise ParameterError(f"need d_r >= d_b >= 0 and d_r > 0, got {d_r}, {d_b}")
    frog = d_b == 0
    base_rate = d_r if frog else d_b
    for p in psi.paths:
        if p.rate != base_rate:
            raise ParameterError(
                f"base paths must be simulated at rate {base_rate}, "
                f"path {p.label} has rate {p.rate}"
            )
    speedup = 1.0 if frog else d_r / d_b
    safe_end = psi.t_fwd if frog else psi.t_fwd * d_b / d_r
    t_end = safe_end if t_end is None else t_end
    if t_end > safe_end:
        raise HorizonError(
            f"t_end={t_end} beyond safe remanent horizon {safe_end} "
            f"(base paths too short for the accelerated clock)"
        )
    x0s = psi.x0s()
    sizes = np.asarray([p.fwd_times.size for p in psi.paths], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    jtimes = (
        np.concatenate([p.fwd_times for p in psi.paths]) if psi.paths else np.empty(0)
    )
    jsteps = (
        np.concatenate([p.fwd_steps for p in psi.paths]).astype(np.int64)
        if psi.paths
        else np.empty(0, dtype=np.int64)
    )
    lo, hi, pad = _site_bounds(psi, psi.t_fwd, d_r)
    blue_rate = 0.0 if frog else 1.0
    red_rate = 1.0 if frog else speedup
    for _ in range(4):
        site_lo = min(lo, 0) - pad
        n_sites = (max(hi, 0) + pad) - site_lo + 1
        (err, n_jump, jt, jp, jm, inf_arr, n_real, ev_t, ev_pid, ev_post, max_front) = (
            _kernels.sweep_remanent(
                jtimes, jsteps, offsets, x0s, blue_rate, red_rate,
                site_lo, n_sites, t_end,
            )
        )
        if err == 0:
            break
        pad *= 2
    else:
        raise FrontsimError("event sweep kept escaping the padded site range")
    movers = np.asarray([psi.paths[i].label for i in jm[:n_jump]], dtype=np.float64)
    censored = _censored(
        psi.window, max(d_r, d_b), 0, jt[:n_jump], jp[:n_jump]
    )
    trace = FrontTrace(
        r0=0,
        times=jt[:n_jump].copy(),
        positions=jp[:n_jump].copy(),
        directions=np.ones(n_jump, dtype=np.int64),
        movers=movers,
        t_end=t_end,
        censored=censored,
    )
    tc = {
        psi.paths[i].label: TimeChange(tau=float(inf_arr[i]), speedup=speedup)
        for i in range(len(psi.paths))
        if inf_arr[i] != np.inf
    }
    _attach(trace, psi, inf_arr, tc)
    steps_real = None  # realized steps derivable from consecutive positions
    object.__setattr__(
        trace,
        "_events",
        (ev_t[:n_real].copy(), ev_pid[:n_real].copy(), ev_post[:n_real].copy(), steps_real),
    )
    return trace, tc


def symmetrize(psi: ParticleSystem) -> ParticleSystem:
    """Reflect every negative-start trajectory until its first nonnegative-
    time hit of zero; trajectories starting at or above zero are unchanged.

    A path that never reaches zero within the simulated window is reflected
    on the whole window and its label recorded in ``tau_unresolved``.
    """
    new_paths = []
    unresolved = set(psi.tau_unresolved)
    for p in psi.paths:
        if p.x0 >= 0:
            new_paths.append(p)
            continue
        cum = p.x0 + np.cumsum(p.fwd_steps)
        hits = np.flatnonzero(cum == 0)
        if hits.size:
            j = int(hits[0])
            flip = np.ones(p.fwd_steps.size, dtype=np.int64)
            flip[: j + 1] = -1
        else:
            j = None
            flip = np.full(p.fwd_steps.size, -1, dtype=np.int64)
            unresolved.add(p.label)
        new_paths.append(
            ParticlePath(
                label=p.label,
                x0=-p.x0,
                fwd_times=p.fwd_times,
                fwd_steps=p.fwd_steps * flip,
                bwd_times=p.bwd_times,
                bwd_steps=-p.bwd_steps,
                t_back=p.t_back,
                t_fwd=p.t_fwd,
                rate=p.rate,
            )
        )
    return ParticleSystem(
        paths=tuple(new_paths),
        window=(min(0, -psi.window[1], psi.window[0]), max(psi.window[1], -psi.window[0])),
        t_back=psi.t_back,
        t_fwd=psi.t_fwd,
        tau_unresolved=frozenset(unresolved),
    )


def red_blue_at(psi: ParticleSystem, front: FrontTrace, t: float) -> RedBlueSnapshot:
    """Exact red/blue split at time t; at t == 0 the sign of the position
    decides (particles at the origin count as susceptible)."""
    if t < 0 or t > front.t_end:
        raise HorizonError(f"t={t} outside [0, {front.t_end}]")
    inf = infection_times(psi, front)
    if t == 0:
        red = frozenset(p.label for p in psi.paths if p.x0 < 0)
    else:
        red = frozenset(
            psi.paths[i].label for i in range(len(psi.paths)) if inf[i] < t
        )
    blue = frozenset(p.label for p in psi.paths) - red
    return RedBlueSnapshot(t=t, red_labels=red, blue_labels=blue)


# ---------------------------------------------------------------------------
# Pathwise domination checks
# ---------------------------------------------------------------------------


def compare_domination(tr1: FrontTrace, tr2: FrontTrace) -> CouplingVerdict:
    """Assert tr1 <= tr2 pointwise at every event time of either trace."""
    t_end = min(tr1.t_end, tr2.t_end)
    grid = np.concatenate(([0.0], tr1.times, tr2.times))
    grid = np.unique(grid[grid <= t_end])
    v1 = tr1.positions_at(grid)
    v2 = tr2.positions_at(grid)
    bad = np.flatnonzero(v1 > v2)
    if bad.size:
        i = int(bad[0])
        return CouplingVerdict(
            passed=False,
            n_events=grid.size,
            first_violation=(float(grid[i]), int(v1[i]), int(v2[i])),
        )
    return CouplingVerdict(passed=True, n_events=grid.size)


def _subset_of(psi1: ParticleSystem, psi2: ParticleSystem) -> bool:
    by_label = {p.label: p for p in psi2.paths}
    for p in psi1.paths:
        q = by_label.get(p.label)
        if q is None:
            return False
        if (
            p.x0 != q.x0
            or not np.array_equal(p.fwd_times, q.fwd_times)
            or not np.array_equal(p.fwd_steps, q.fwd_steps)
            or not np.array_equal(p.bwd_times, q.bwd_times)
            or not np.array_equal(p.bwd_steps, q.bwd_steps)
        ):
            return False
    return True


def check_coupling_addition(
    psi1: ParticleSystem, psi2: ParticleSystem, variant: str = "single_rate"
) -> CouplingVerdict:
    """Adding particles can only push the front up (standard or modified)."""
    if not _subset_of(psi1, psi2):
        raise ParameterError("psi1 must be a sub-system of psi2")
    if variant == "single_rate":
        tr1 = build_front_single_rate(psi1)
        tr2 = build_front_single_rate(psi2)
    elif variant == "modified":
        tr1 = build_front_modified(psi1)
        tr2 = build_front_modified(psi2)
    else:
        raise ParameterError(f"unknown variant {variant!r}")
    return compare_domination(tr1, tr2)


def check_coupling_modified(psi: ParticleSystem) -> CouplingVerdict:
    """The never-below-zero front dominates the standard front."""
    return compare_domination(build_front_single_rate(psi), build_front_modified(psi))


def check_coupling_symmetrize(psi: ParticleSystem) -> CouplingVerdict:
    """Reflecting negative starts can only push the modified front up."""
    reflected = symmetrize(psi)
    verdict = compare_domination(
        build_front_modified(psi), build_front_modified(reflected)
    )
    if reflected.tau_unresolved:
        verdict = CouplingVerdict(
            passed=verdict.passed,
            n_events=verdict.n_events,
            first_violation=verdict.first_violation,
            warning=f"{len(reflected.tau_unresolved)} reflection(s) unresolved "
            "within the simulated window",
        )
    return verdict


def _verify_blue_set_identity(
    psi: ParticleSystem, trace: FrontTrace, inf: np.ndarray
) -> CouplingVerdict:
    n = len(psi.paths)
    for j in range(trace.n_jumps):
        t = float(trace.times[j])
        k = int(trace.positions[j])
        mover_label = float(trace.movers[j])
        blue = {psi.paths[i].label for i in range(n) if inf[i] >= t}
        base_pos = psi.positions_at(t)
        rhs = {psi.paths[i].label for i in range(n) if base_pos[i] >= k}
        rhs.discard(mover_label)
        if blue != rhs:
            return CouplingVerdict(
                passed=False,
                n_events=trace.n_jumps,
                first_violation=(t, sorted(blue ^ rhs)[:4], k),
            )
    return CouplingVerdict(passed=True, n_events=trace.n_jumps)


def check_lemma6(psi: ParticleSystem, d_r: float, d_b: float) -> CouplingVerdict:
    """At every front jump the susceptible set must equal the particles whose
    base position sits at or above the new front, minus the mover."""
    if not (d_r > d_b > 0):
        raise ParameterError("blue-set identity check requires d_r > d_b > 0")
    trace, _ = build_front_remanent(psi, d_r, d_b)
    inf = infection_times(psi, trace)
    return _verify_blue_set_identity(psi, trace, inf)


def check_lemma7(psi: ParticleSystem, d_r: float) -> CouplingVerdict:
    """The remanent front driven by the same rate-2 base paths dominates the
    standard front."""
    if d_r <= 2.0:
        raise ParameterError("requires d_r > 2 with base paths at rate 2")
    tr1 = build_front_single_rate(psi)
    tr2, _ = build_front_remanent(psi, d_r, 2.0)
    return compare_domination(tr1, tr2)


# ---------------------------------------------------------------------------
# CSV serialization: T_k,position,direction,mover_label
# ---------------------------------------------------------------------------


def front_to_csv(trace: FrontTrace) -> str:
    buf = io.StringIO()
    buf.write(f"# r0={trace.r0} t_end={trace.t_end:.17g} censored={int(trace.censored)}\n")
    buf.write("T_k,position,direction,mover_label\n")
    for t, p, d, m in zip(trace.times, trace.positions, trace.directions, trace.movers):
        buf.write(f"{t:.17g},{int(p)},{'up' if d > 0 else 'down'},{m:.17g}\n")
    return buf.getvalue()


def front_from_csv(text: str) -> FrontTrace:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    meta = {}
    if lines and lines[0].startswith("#"):
        for item in lines[0][1:].split():
            k, v = item.split("=")
            meta[k] = v
        lines = lines[1:]
    if lines and lines[0].startswith("T_k"):
        lines = lines[1:]
    times, positions, dirs, movers = [], [], [], []
    for ln in lines:
        t_s, p_s, d_s, m_s = ln.split(",")
        times.append(float(t_s))
        positions.append(int(p_s))
        dirs.append(1 if d_s == "up" else -1)
        movers.append(float(m_s))
    return FrontTrace(
        r0=int(meta.get("r0", 0)),
        times=np.asarray(times),
        positions=np.asarray(positions, dtype=np.int64),
        directions=np.asarray(dirs, dtype=np.int64),
        movers=np.asarray(movers),
        t_end=float(meta.get("t_end", times[-1] if times else 0.0)),
        censored=bool(int(meta.get("censored", 0))),
    )
