"""Renewal-time detection on a finished front build.

All predicates compare piecewise-constant functions against straight lines of
slope ``alpha``, so evaluating them at event times (plus the lines' own
breakpoints) is exact.  The paper-style universal quantifiers over unbounded
time are truncated to policy windows; a verdict whose window was clipped by
the simulated horizon carries a truncation flag, and finite-window verdicts
are optimistic (widening a window can only remove detections).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import AlphaParams
from .errors import ConsistencyError, ParameterError, PolicyError
from .front import FrontTrace, ParticleSystem, infection_times
from .walks import ParticlePath

__all__ = [
    "HorizonPolicy",
    "AttemptRecord",
    "RenewalRecord",
    "RenewalScanner",
    "is_backward_sub_alpha",
    "is_backward_super_alpha",
    "is_forward_sub_alpha",
    "is_forward_super_alpha",
    "crossing_times",
    "exp_norm_below_front",
    "run_attempt_sequence",
    "find_separation_times",
    "shift_blue_subsystem",
    "attempts_to_csv",
    "renewals_to_csv",
    "renewals_from_csv",
]


@dataclass(frozen=True)
class HorizonPolicy:
    """Finite windows substituted for the unbounded time quantifiers."""

    h_back: float
    h_fwd: float
    tail_tol: float = 1e-6

    def __post_init__(self):
        if self.h_back <= 0 or self.h_fwd <= 0 or self.tail_tol <= 0:
            raise ParameterError("h_back, h_fwd and tail_tol must be > 0")


@dataclass(frozen=True)
class AttemptRecord:
    """One renewal attempt: candidate times, failure time and diagnostics."""

    n: int
    s_prime: float
    s: float
    d: float  # +inf when no failure was detected in the window
    failure_condition: Optional[int]  # 1..5, only when the backward check held
    upsilon: Optional[float]  # witness label when the backward check failed
    m_n: float
    crossings: int
    censored: bool = False  # window clipped before the verdict resolved


@dataclass(frozen=True)
class RenewalRecord:
    kappa: float
    r_kappa: int
    approx_flags: frozenset


class RenewalScanner:
    """Event-grid views of one (system, front) pair plus the detectors.

    Positions used here are the realized ones (identical to the base paths in
    the single-rate model, re-timed in the remanent model); susceptible
    particles' pasts coincide with their base paths in both cases.
    """

    def __init__(
        self,
        psi: ParticleSystem,
        front: FrontTrace,
        alpha: float,
        hp: HorizonPolicy,
        cap_c: int = 1,
        cap_l: int = 1,
        theta: float = 0.5,
    ):
        if getattr(front, "_psi_token", None) != getattr(psi, "_token"):
            raise ConsistencyError("front was not built from this particle system")
        if alpha <= 0:
            raise ParameterError("alpha must be > 0")
        if hp.h_fwd < 1.0 / alpha:
            raise PolicyError(
                f"h_fwd={hp.h_fwd} < 1/alpha={1.0 / alpha}: cannot certify the "
                "mover clause"
            )
        self.psi = psi
        self.front = front
        self.alpha = alpha
        self.hp = hp
        self.cap_c = cap_c
        self.cap_l = cap_l
        self.theta = theta
        self.inf = infection_times(psi, front)
        self.n_p = len(psi.paths)
        self.labels = np.asarray([p.label for p in psi.paths])
        self._label_index = {p.label: i for i, p in enumerate(psi.paths)}
        self.x0s = psi.x0s()

        ev_t, ev_pid, ev_post, ev_steps = getattr(front, "_events")
        self.ev_t = ev_t
        self.ev_pid = ev_pid
        self.ev_post = ev_post
        if ev_steps is not None:
            self.ev_pre = ev_post - ev_steps
        else:
            self.ev_pre = self._derive_pre(ev_t, ev_pid, ev_post)
        # per-event line offsets: value -+ alpha * time
        self.gf = self.ev_post - alpha * ev_t  # forward-line comparisons
        self.gb = self.ev_pre - alpha * ev_t  # backward-line comparisons

        # negative-time (base) events: time, pid, value just left of the jump
        bt, bpid, bpre = [], [], []
        for i, p in enumerate(psi.paths):
            m = p.bwd_times.size
            if not m:
                continue
            bt.append(p.bwd_times)  # descending
            bpid.append(np.full(m, i, dtype=np.int64))
            bpre.append(p.x0 + p._bwd_cum[1:])
        if bt:
            bt = np.concatenate(bt)
            bpid = np.concatenate(bpid)
            bpre = np.concatenate(bpre)
            order = np.argsort(bt, kind="stable")
            self.bw_t, self.bw_pid, self.bw_pre = bt[order], bpid[order], bpre[order]
        else:
            self.bw_t = np.empty(0)
            self.bw_pid = np.empty(0, dtype=np.int64)
            self.bw_pre = np.empty(0, dtype=np.int64)
        self.bw_g = self.bw_pre - alpha * self.bw_t

        # per-particle realized forward changepoints, for position queries
        order = np.lexsort((ev_t, ev_pid))
        grouped_pid = ev_pid[order]
        bounds = np.searchsorted(grouped_pid, np.arange(self.n_p + 1))
        self._p_times = []
        self._p_vals = []
        for i in range(self.n_p):
            sl = order[bounds[i] : bounds[i + 1]]
            self._p_times.append(ev_t[sl])
            self._p_vals.append(ev_post[sl])

        self._bsub_mask: Optional[np.ndarray] = None
        self._cand_ready = False

    # -- low-level views ---------------------------------------------------

    def _derive_pre(self, ev_t, ev_pid, ev_post):
        pre = np.empty_like(ev_post)
        order = np.lexsort((ev_t, ev_pid))
        grouped = ev_post[order]
        pids = ev_pid[order]
        shifted = np.empty_like(grouped)
        if grouped.size:
            shifted[1:] = grouped[:-1]
            first = np.ones(order.size, dtype=bool)
            first[1:] = pids[1:] != pids[:-1]
            shifted[first] = self.x0s[pids[first]]
        pre[order] = shifted
        return pre

    def position_of(self, i: int, t: float) -> int:
        """Realized position of particle ``i`` at time ``t >= 0``."""
        times = self._p_times[i]
        k = int(np.searchsorted(times, t, side="right"))
        return int(self.x0s[i] if k == 0 else self._p_vals[i][k - 1])

    def positions_at(self, t: float) -> np.ndarray:
        out = np.empty(self.n_p, dtype=np.int64)
        for i in range(self.n_p):
            out[i] = self.position_of(i, t)
        return out

    def next_event_after(self, i: int, t: float) -> float:
        """Time of particle ``i``'s first realized jump strictly after t."""
        times = self._p_times[i]
        k = int(np.searchsorted(times, t, side="right"))
        return float(times[k]) if k < times.size else math.inf

    def _upward_index(self, t: float) -> int:
        tr = self.front
        j = int(np.searchsorted(tr.times, t))
        if j >= tr.n_jumps or tr.times[j] != t or tr.directions[j] != 1:
            raise ParameterError(f"t={t} is not an upward jump time of the front")
        return j

    def index_of_label(self, label: float) -> int:
        return self._label_index[label]

    # -- backward sub-alpha record structure ----------------------------------

    def backward_sub_mask(self) -> np.ndarray:
        """Boolean per front jump: strict record of ``r - alpha*t`` above all
        earlier event values (including the initial one) and above zero."""
        if self._bsub_mask is None:
            tr = self.front
            h = tr.positions - self.alpha * tr.times
            prefix = np.maximum.accumulate(
                np.concatenate(([float(tr.r0)], h))
            )[:-1]
            self._bsub_mask = (tr.directions == 1) & (h > prefix) & (h > 0)
        return self._bsub_mask

    def is_backward_sub(self, t: float) -> bool:
        return bool(self.backward_sub_mask()[self._upward_index(t)])

    # -- vectorized per-candidate tables ---------------------------------------

    def _ensure_candidates(self):
        """Positions, blue counts and sitter flags at every backward-sub
        record time, computed in one vectorized pass."""
        if self._cand_ready:
            return
        tr = self.front
        idx = np.flatnonzero(self.backward_sub_mask())
        times = tr.times[idx]
        rpos = tr.positions[idx]
        c = times.size
        pos = np.empty((self.n_p, c), dtype=np.int64)
        nxt = np.empty((self.n_p, c), dtype=np.float64)
        for i in range(self.n_p):
            pt = self._p_times[i]
            pv = self._p_vals[i]
            if pt.size == 0:
                pos[i] = self.x0s[i]
                nxt[i] = math.inf
                continue
            k = np.searchsorted(pt, times, side="right")
            pos[i] = np.where(k > 0, pv[np.maximum(k - 1, 0)], self.x0s[i])
            ext = np.concatenate([pt, [math.inf]])
            nxt[i] = ext[k]
        blue = self.inf[:, None] >= times[None, :]
        at_front = pos == rpos[None, :]
        self._c_jump_idx = idx
        self._c_times = times
        self._c_rpos = rpos
        self._c_pos = pos
        self._c_blue = blue
        self._c_blues_at_front = (blue & at_front).sum(axis=0)
        sit = blue & at_front & (nxt > times[None, :] + 1.0 / self.alpha)
        self._c_sitter = sit.any(axis=0)
        self._c_col = {int(j): k for k, j in enumerate(idx)}
        self._cand_ready = True

    def _col_of_jump(self, j: int) -> int:
        self._ensure_candidates()
        return self._c_col[int(j)]

    # -- the four line predicates ------------------------------------------

    def blue_mask(self, t: float) -> np.ndarray:
        return (self.inf >= t) if t > 0 else (self.x0s >= 0)

    def backward_super(self, t: float, r_t: int):
        """(holds, truncated, violating particle indices) for candidate t."""
        lo = t - self.hp.h_back
        truncated = lo < self.psi.t_back
        lo = max(lo, self.psi.t_back)
        blue = self.blue_mask(t)
        eta = r_t - self.alpha * t
        bad: set[int] = set()
        i0 = int(np.searchsorted(self.ev_t, lo, side="left"))
        i1 = int(np.searchsorted(self.ev_t, t, side="left"))
        if i1 > i0:
            sl = slice(i0, i1)
            mask = blue[self.ev_pid[sl]] & (self.gb[sl] < eta)
            if mask.any():
                bad.update(np.unique(self.ev_pid[sl][mask]).tolist())
        if lo < 0 and self.bw_t.size:
            j0 = int(np.searchsorted(self.bw_t, lo, side="left"))
            j1 = int(np.searchsorted(self.bw_t, min(t, 0.0), side="left"))
            if j1 > j0:
                sl = slice(j0, j1)
                mask = blue[self.bw_pid[sl]] & (self.bw_g[sl] < eta)
                if mask.any():
                    bad.update(np.unique(self.bw_pid[sl][mask]).tolist())
        return (not bad, truncated, sorted(bad))

    def forward_window(self, t: float):
        hi = t + self.hp.h_fwd
        truncated = hi > self.front.t_end
        return min(hi, self.front.t_end), truncated

    def forward_sub(self, t: float, r_t: int, mover: int, pos: np.ndarray):
        """(holds, truncated); ``pos`` is every particle's position at t."""
        hi, truncated = self.forward_window(t)
        red = ~self.blue_mask(t)
        constrained = red & (pos <= r_t - 1)
        constrained[mover] = False
        thresh = r_t - 1 - self.alpha * t
        i0 = int(np.searchsorted(self.ev_t, t, side="right"))
        i1 = int(np.searchsorted(self.ev_t, hi, side="right"))
        if i1 > i0:
            sl = slice(i0, i1)
            if (constrained[self.ev_pid[sl]] & (self.gf[sl] > thresh)).any():
                return False, truncated
        inv = 1.0 / self.alpha
        if self.next_event_after(mover, t) <= t + inv:
            return False, truncated
        mt = self._p_times[mover]
        mv = self._p_vals[mover]
        k0 = int(np.searchsorted(mt, t + inv, side="right"))
        k1 = int(np.searchsorted(mt, hi, side="right"))
        if k1 > k0 and (mv[k0:k1] - self.alpha * mt[k0:k1] > thresh).any():
            return False, truncated
        return True, truncated

    def forward_super_front(self, t: float, r_t: int):
        """Floor-line domination of the front on the forward window."""
        hi, truncated = self.forward_window(t)
        tr = self.front
        k_max = int(math.floor(self.alpha * (hi - t)))
        for k in range(1, k_max + 1):
            s = t + k / self.alpha
            if s > hi:
                break
            if tr.position_at(s) < r_t + k:
                return False, truncated
        j0 = int(np.searchsorted(tr.times, t, side="right"))
        j1 = int(np.searchsorted(tr.times, hi, side="right"))
        down = j0 + np.flatnonzero(tr.directions[j0:j1] == -1)
        for j in down:
            s = tr.times[j]
            if tr.positions[j] < r_t + math.floor(self.alpha * (s - t)):
                return False, truncated
        return True, truncated

    def sitter_exists(self, t: float, r_t: int) -> bool:
        blue = self.blue_mask(t)
        pos = self.positions_at(t)
        inv = 1.0 / self.alpha
        for i in np.flatnonzero(blue & (pos == r_t)):
            if self.next_event_after(int(i), t) > t + inv:
                return True
        return False

    # -- crossing times ------------------------------------------------------

    def crossing_times_from(self, s: float, t_hi: Optional[float] = None) -> np.ndarray:
        """All (s, alpha)-crossing times in (s, t_hi], ascending.

        The k-th reported time is the first moment the front reaches the line
        anchored k sites above ``r_s``; only upward jumps can qualify.
        """
        tr = self.front
        t_hi = tr.t_end if t_hi is None else t_hi
        r_s = tr.position_at(s)
        out = []
        k = 1
        j0 = int(np.searchsorted(tr.times, s, side="right"))
        for j in range(j0, tr.n_jumps):
            tj = tr.times[j]
            if tj > t_hi:
                break
            if tr.directions[j] != 1:
                continue
            rj = tr.positions[j]
            while rj >= r_s + k + self.alpha * (tj - s):
                out.append(float(tj))
                k += 1
        return np.asarray(out)

    # -- statistics ----------------------------------------------------------

    def exp_norm(self, t: float, r_t: int, mover: int, theta: float,
                 pos: np.ndarray) -> float:
        red = ~self.blue_mask(t)
        red[mover] = False
        return float(np.exp(-theta * (r_t - pos[red])).sum())

    # -- failure-condition scan ----------------------------------------------

    def detection_time(self, t_s: float, r_s: int, mover: int, pos: np.ndarray):
        """First firing of the five failure conditions after ``t_s``.

        Returns (d, condition, censored); ties resolve to the lowest-numbered
        condition.  ``d = inf`` with ``censored=True`` means the window was
        clipped before anything fired.
        """
        hi, clipped = self.forward_window(t_s)
        inv = 1.0 / self.alpha
        fires: list[tuple[float, int]] = []

        d1 = self._first_floor_failure(t_s, r_s, hi)
        if d1 is not None:
            fires.append((d1, 1))

        blue = self.blue_mask(t_s)
        sitters = np.flatnonzero(blue & (pos == r_s))
        last_leave = t_s
        for i in sitters:
            last_leave = max(last_leave, self.next_event_after(int(i), t_s))
        if last_leave <= t_s + inv and last_leave <= hi:
            fires.append((last_leave, 2))

        red = ~blue
        red[mover] = False
        if (red & (pos >= r_s)).any():
            fires.append((t_s, 3))
        thresh = r_s - 1 - self.alpha * t_s
        i0 = int(np.searchsorted(self.ev_t, t_s, side="right"))
        i1 = int(np.searchsorted(self.ev_t, hi, side="right"))
        sl = slice(i0, i1)
        hit = np.flatnonzero(red[self.ev_pid[sl]] & (self.gf[sl] > thresh))
        if hit.size:
            fires.append((float(self.ev_t[sl][hit[0]]), 3))

        nxt = self.next_event_after(mover, t_s)
        if nxt <= t_s + inv and nxt <= hi:
            fires.append((nxt, 4))

        if t_s + inv <= hi:
            if self.position_of(mover, t_s + inv) > r_s:
                fires.append((t_s + inv, 5))
            mt = self._p_times[mover]
            mv = self._p_vals[mover]
            k0 = int(np.searchsorted(mt, t_s + inv, side="right"))
            k1 = int(np.searchsorted(mt, hi, side="right"))
            bad = np.flatnonzero(mv[k0:k1] - self.alpha * mt[k0:k1] > thresh)
            if bad.size:
                fires.append((float(mt[k0 + bad[0]]), 5))

        if not fires:
            return math.inf, None, clipped
        fires.sort(key=lambda fc: (fc[0], fc[1]))
        return fires[0][0], fires[0][1], False

    def _first_floor_failure(self, t_s: float, r_s: int, hi: float):
        tr = self.front
        k_max = int(math.floor(self.alpha * (hi - t_s)))
        cand = None
        for k in range(1, k_max + 1):
            s = t_s + k / self.alpha
            if s > hi:
                break
            if tr.position_at(s) < r_s + k:
                cand = s
                break
        j0 = int(np.searchsorted(tr.times, t_s, side="right"))
        j1 = int(np.searchsorted(tr.times, hi, side="right"))
        for j in range(j0, j1):
            s = tr.times[j]
            if cand is not None and s >= cand:
                break
            if tr.positions[j] < r_s + math.floor(self.alpha * (s - t_s)):
                cand = float(s)
                break
        return cand

    # -- the inductive attempt sequence ---------------------------------------

    def attempts(self) -> list[AttemptRecord]:
        self._ensure_candidates()
        c_times = self._c_times
        records: list[AttemptRecord] = []
        d_prev = 0.0
        witness: Optional[int] = None
        n = 0
        while True:
            n += 1
            s_prime = None
            for c in range(int(np.searchsorted(c_times, d_prev, side="right")),
                           c_times.size):
                t = float(c_times[c])
                if witness is not None and not (self.inf[witness] < t):
                    continue
                if self._c_blues_at_front[c] < self.cap_c:
                    continue
                s_prime = t
                break
            if s_prime is None:
                return records
            crossings = self.crossing_times_from(s_prime)
            s_n = None
            for c in range(int(np.searchsorted(c_times, s_prime, side="right")),
                           c_times.size):
                t = float(c_times[c])
                n_cross = int(np.searchsorted(crossings, t, side="left"))
                if n_cross < self.cap_l:
                    continue
                if self._c_blues_at_front[c] < self.cap_c:
                    continue
                s_n, col, cross_count = t, c, n_cross
                break
            if s_n is None:
                return records
            r_s = int(self._c_rpos[col])
            pos = self._c_pos[:, col]
            j_s = int(self._c_jump_idx[col])
            mover = self.index_of_label(float(self.front.movers[j_s]))
            m_n = self.exp_norm(s_n, r_s, mover, self.theta, pos)
            ok_bsuper, _trunc, violators = self.backward_super(s_n, r_s)
            if not ok_bsuper:
                witness = min(violators, key=lambda i: (pos[i], self.labels[i]))
                records.append(
                    AttemptRecord(
                        n=n, s_prime=s_prime, s=s_n, d=s_n,
                        failure_condition=None,
                        upsilon=float(self.labels[witness]),
                        m_n=m_n, crossings=cross_count,
                    )
                )
                d_prev = s_n
                continue
            witness = None
            d, cond, censored = self.detection_time(s_n, r_s, mover, pos)
            records.append(
                AttemptRecord(
                    n=n, s_prime=s_prime, s=s_n, d=d,
                    failure_condition=cond, upsilon=None,
                    m_n=m_n, crossings=cross_count, censored=censored,
                )
            )
            if not math.isfinite(d):
                return records
            d_prev = d

    # -- separation times ------------------------------------------------------

    def separation_times(self) -> list[RenewalRecord]:
        self._ensure_candidates()
        tr = self.front
        records: list[RenewalRecord] = []
        for c in range(self._c_times.size):
            t = float(self._c_times[c])
            r_t = int(self._c_rpos[c])
            if not self._c_sitter[c]:
                continue
            ok_fs, trunc_f = self.forward_super_front(t, r_t)
            if not ok_fs:
                continue
            j = int(self._c_jump_idx[c])
            mover = self.index_of_label(float(tr.movers[j]))
            pos = self._c_pos[:, c]
            ok_fsub, trunc_f2 = self.forward_sub(t, r_t, mover, pos)
            if not ok_fsub:
                continue
            ok_bsuper, trunc_b, _ = self.backward_super(t, r_t)
            if not ok_bsuper:
                continue
            if r_t != tr.running_max_at(t):
                raise ConsistencyError(
                    "detected separation time is not at the running maximum"
                )
            flags = set()
            if trunc_b:
                flags.add("backward_truncated")
            if trunc_f or trunc_f2:
                flags.add("forward_truncated")
            records.append(
                RenewalRecord(kappa=t, r_kappa=r_t, approx_flags=frozenset(flags))
            )
        return records


# ---------------------------------------------------------------------------
# Functional wrappers (the documented operation surface)
# ---------------------------------------------------------------------------


def is_backward_sub_alpha(front: FrontTrace, t: float, alpha: float) -> bool:
    """True when the front is above the slope-``alpha`` line through the
    origin at ``t`` and strictly above the line through ``(t, r_t)`` at every
    earlier event time."""
    if alpha <= 0:
        raise ParameterError("alpha must be > 0")
    j = int(np.searchsorted(front.times, t))
    if j >= front.n_jumps or front.times[j] != t or front.directions[j] != 1:
        raise ParameterError(f"t={t} is not an upward jump time of the front")
    r_t = float(front.positions[j])
    if not (r_t > alpha * t):
        return False
    h_t = r_t - alpha * t
    if front.r0 >= h_t:
        return False
    earlier = front.positions[:j] - alpha * front.times[:j]
    return bool((earlier < h_t).all())


def is_backward_super_alpha(
    psi: ParticleSystem, front: FrontTrace, t: float, alpha: float, hp: HorizonPolicy
):
    sc = RenewalScanner(psi, front, alpha, hp)
    if t > 0:
        j = sc._upward_index(t)
        r_t = int(front.positions[j])
    else:
        r_t = front.r0
    ok, truncated, _ = sc.backward_super(t, r_t)
    return ok, truncated


def is_forward_sub_alpha(
    psi: ParticleSystem, front: FrontTrace, t: float, alpha: float, hp: HorizonPolicy
):
    sc = RenewalScanner(psi, front, alpha, hp)
    j = sc._upward_index(t)
    mover = sc.index_of_label(float(front.movers[j]))
    return sc.forward_sub(t, int(front.positions[j]), mover, sc.positions_at(t))


def is_forward_super_alpha(
    psi: ParticleSystem, front: FrontTrace, t: float, alpha: float, hp: HorizonPolicy
):
    sc = RenewalScanner(psi, front, alpha, hp)
    if t > 0:
        j = sc._upward_index(t)
        r_t = int(front.positions[j])
    else:
        r_t = front.r0
    ok, truncated = sc.forward_super_front(t, r_t)
    if ok and not sc.sitter_exists(t, r_t):
        ok = False
    return ok, truncated


def crossing_times(
    front: FrontTrace, s: float, alpha: float, interval: tuple[float, float]
) -> list[float]:
    """Every (s, alpha)-crossing time inside ``interval`` (closed ends)."""
    if alpha <= 0:
        raise ParameterError("alpha must be > 0")
    lo, hi = interval
    if s > lo:
        raise ParameterError("anchor s must not exceed the interval start")
    r_s = front.position_at(s)
    out = []
    k = 1
    j0 = int(np.searchsorted(front.times, s, side="right"))
    for j in range(j0, front.n_jumps):
        tj = float(front.times[j])
        if tj > hi:
            break
        if front.directions[j] != 1:
            continue
        rj = front.positions[j]
        while rj >= r_s + k + alpha * (tj - s):
            if tj >= lo:
                out.append(tj)
            k += 1
    return out


def exp_norm_below_front(
    psi: ParticleSystem, front: FrontTrace, t: float, theta: float
) -> float:
    """Sum of ``exp(-theta * (r_t - W_t))`` over particles already infected
    at ``t``, the front's mover excluded."""
    if theta <= 0:
        raise ParameterError("theta must be > 0")
    inf = infection_times(psi, front)
    j = int(np.searchsorted(front.times, t))
    if j >= front.n_jumps or front.times[j] != t or front.directions[j] != 1:
        raise ParameterError(f"t={t} is not an upward jump time of the front")
    r_t = int(front.positions[j])
    mover_label = float(front.movers[j])
    ev_t, ev_pid, ev_post, _ = getattr(front, "_events")
    pos = np.asarray([p.x0 for p in psi.paths], dtype=np.int64).copy()
    keep = ev_t <= t
    np_pid = ev_pid[keep]
    np_post = ev_post[keep]
    pos[np_pid] = np_post  # later assignments win: last event <= t per pid
    total = 0.0
    for i, p in enumerate(psi.paths):
        if inf[i] < t and p.label != mover_label:
            total += math.exp(-theta * (r_t - pos[i]))
    return total


def run_attempt_sequence(
    psi: ParticleSystem, front: FrontTrace, ap: AlphaParams, hp: HorizonPolicy
) -> list[AttemptRecord]:
    """Reproduce the inductive attempt definition on the finite window.

    The sequence ends at the first attempt whose detection window closed with
    nothing fired (``d = +inf``); an empty list means the horizon was
    exhausted before the first candidate resolved.
    """
    sc = RenewalScanner(
        psi, front, ap.alpha, hp, cap_c=ap.cap_c, cap_l=ap.cap_l, theta=ap.theta
    )
    return sc.attempts()


def find_separation_times(
    psi: ParticleSystem, front: FrontTrace, ap: AlphaParams, hp: HorizonPolicy
) -> list[RenewalRecord]:
    """All upward jump times at which the four line predicates hold in their
    finite-window forms."""
    sc = RenewalScanner(
        psi, front, ap.alpha, hp, cap_c=ap.cap_c, cap_l=ap.cap_l, theta=ap.theta
    )
    return sc.separation_times()


def shift_blue_subsystem(
    psi: ParticleSystem, front: FrontTrace, kappa: float, r_kappa: int
) -> ParticleSystem:
    """The system of particles still susceptible at ``kappa``, translated so
    that ``(r_kappa, kappa)`` becomes the space-time origin."""
    inf = infection_times(psi, front)
    paths = []
    for i, p in enumerate(psi.paths):
        if inf[i] < kappa:
            continue
        split = int(np.searchsorted(p.fwd_times, kappa, side="right"))
        x_at = p.x0 + int(p._fwd_cum[split])
        old_t = p.fwd_times[:split] - kappa
        old_s = p.fwd_steps[:split]
        paths.append(
            ParticlePath(
                label=p.label,
                x0=x_at - r_kappa,
                fwd_times=p.fwd_times[split:] - kappa,
                fwd_steps=p.fwd_steps[split:],
                # earlier forward jumps become backward jumps of the shifted
                # path; crossing them going backward undoes the forward step
                bwd_times=np.concatenate([old_t[::-1], p.bwd_times - kappa]),
                bwd_steps=np.concatenate([-old_s[::-1], p.bwd_steps]),
                t_back=p.t_back - kappa,
                t_fwd=p.t_fwd - kappa,
                rate=p.rate,
            )
        )
    return ParticleSystem(
        paths=tuple(paths),
        window=(psi.window[0] - r_kappa, psi.window[1] - r_kappa),
        t_back=psi.t_back - kappa,
        t_fwd=psi.t_fwd - kappa,
    )


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------


def attempts_to_csv(records: list[AttemptRecord]) -> str:
    buf = io.StringIO()
    buf.write("n,s_prime,s,d,failure_condition,upsilon,m_n,crossings\n")
    for r in records:
        d = "inf" if not math.isfinite(r.d) else f"{r.d:.17g}"
        fc = "" if r.failure_condition is None else str(r.failure_condition)
        up = "" if r.upsilon is None else f"{r.upsilon:.17g}"
        buf.write(
            f"{r.n},{r.s_prime:.17g},{r.s:.17g},{d},{fc},{up},{r.m_n:.17g},{r.crossings}\n"
        )
    return buf.getvalue()


def renewals_to_csv(records: list[RenewalRecord]) -> str:
    buf = io.StringIO()
    buf.write("kappa,r_kappa,flags\n")
    for r in records:
        flags = "|".join(sorted(r.approx_flags))
        buf.write(f"{r.kappa:.17g},{r.r_kappa},{flags}\n")
    return buf.getvalue()


def renewals_from_csv(text: str) -> list[RenewalRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    out = []
    for ln in lines[1:]:
        k_s, r_s, f_s = ln.split(",")
        flags = frozenset(f_s.split("|")) - {""}
        out.append(
            RenewalRecord(kappa=float(k_s), r_kappa=int(r_s), approx_flags=flags)
        )
    return out
