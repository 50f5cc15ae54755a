"""Event-sweep kernels for front construction.

Everything here works on flat arrays so numba can compile it.  Sites are
indexed relative to ``site_lo``; per-site particle lists are doubly linked
(``head``/``nxt``/``prv``) so occupancy walks cost O(size of site).

The single-rate sweep consumes a pre-merged, time-sorted event list.  The
remanent sweep re-times infected particles on the fly (their residual clock
runs ``speedup`` times faster from the infection instant), so it schedules
next-jump times through an indexed binary heap instead.
"""

import numpy as np
from numba import njit

INF = np.inf
_ERR_OK = 0
_ERR_RANGE = 1


@njit(cache=True)
def _bucket_remove(p, x, head, nxt, prv):
    if prv[p] >= 0:
        nxt[prv[p]] = nxt[p]
    else:
        head[x] = nxt[p]
    if nxt[p] >= 0:
        prv[nxt[p]] = prv[p]
    nxt[p] = -1
    prv[p] = -1


@njit(cache=True)
def _bucket_insert(p, x, head, nxt, prv):
    nxt[p] = head[x]
    prv[p] = -1
    if head[x] >= 0:
        prv[head[x]] = p
    head[x] = p


@njit(cache=True)
def sweep_single_rate(
    ev_times,  # float64[N] ascending
    ev_pids,  # int64[N]
    ev_steps,  # int64[N] +-1
    x0s,  # int64[P]
    r0,  # int64 initial front position
    site_lo,  # int64: lowest representable site
    n_sites,  # int64: bucket array length
    suppress_down_at_zero,  # bool: modified dynamics
    t_end,  # float64
):
    """Build the front and infection times in one pass over the events.

    Returns (err, n_front_jumps, jump_times, jump_pos, jump_dirs,
    jump_movers, inf_times, post_pos, max_front).  ``post_pos[k]`` is the
    moving particle's position right after event k (pre = post - step).
    """
    n_ev = ev_times.size
    n_p = x0s.size
    pos = np.empty(n_p, dtype=np.int64)
    head = np.full(n_sites, -1, dtype=np.int64)
    nxt = np.full(n_p, -1, dtype=np.int64)
    prv = np.full(n_p, -1, dtype=np.int64)
    count = np.zeros(n_sites, dtype=np.int64)
    inf_times = np.full(n_p, INF, dtype=np.float64)
    post_pos = np.empty(n_ev, dtype=np.int64)

    jump_times = np.empty(n_ev, dtype=np.float64)
    jump_pos = np.empty(n_ev, dtype=np.int64)
    jump_dirs = np.empty(n_ev, dtype=np.int64)
    jump_movers = np.empty(n_ev, dtype=np.int64)
    n_jump = 0

    for p in range(n_p):
        x = x0s[p] - site_lo
        if x < 0 or x >= n_sites:
            return (_ERR_RANGE, 0, jump_times, jump_pos, jump_dirs, jump_movers,
                    inf_times, post_pos, r0)
        pos[p] = x0s[p]
        count[x] += 1
        _bucket_insert(p, x, head, nxt, prv)
        if x0s[p] <= r0:
            inf_times[p] = 0.0

    front = r0
    max_front = r0
    for k in range(n_ev):
        t = ev_times[k]
        if t > t_end:
            # events beyond the horizon are not part of this build
            post_pos[k] = pos[ev_pids[k]]
            continue
        p = ev_pids[k]
        x = pos[p]
        y = x + ev_steps[k]
        yi = y - site_lo
        if yi < 0 or yi >= n_sites:
            return (_ERR_RANGE, n_jump, jump_times, jump_pos, jump_dirs,
                    jump_movers, inf_times, post_pos, max_front)
        moved_up = False
        moved_down = False
        if x == front:
            if y == front + 1:
                moved_up = True
            elif y == front - 1 and count[x - site_lo] == 1:
                if not (suppress_down_at_zero and front == 0):
                    moved_down = True
        # apply the particle move
        count[x - site_lo] -= 1
        count[yi] += 1
        _bucket_remove(p, x - site_lo, head, nxt, prv)
        _bucket_insert(p, yi, head, nxt, prv)
        pos[p] = y
        post_pos[k] = y
        if moved_up:
            front += 1
            if front > max_front:
                max_front = front
            jump_times[n_jump] = t
            jump_pos[n_jump] = front
            jump_dirs[n_jump] = 1
            jump_movers[n_jump] = p
            n_jump += 1
            # every particle standing at the new front position is in contact
            q = head[front - site_lo]
            while q >= 0:
                if inf_times[q] == INF:
                    inf_times[q] = t
                q = nxt[q]
        elif moved_down:
            front -= 1
            jump_times[n_jump] = t
            jump_pos[n_jump] = front
            jump_dirs[n_jump] = -1
            jump_movers[n_jump] = p
            n_jump += 1
        else:
            if inf_times[p] == INF and y <= front:
                inf_times[p] = t
    return (_ERR_OK, n_jump, jump_times, jump_pos, jump_dirs, jump_movers,
            inf_times, post_pos, max_front)


# ---------------------------------------------------------------------------
# Indexed binary min-heap on (key, pid), pid breaking ties
# ---------------------------------------------------------------------------


@njit(cache=True)
def _heap_less(a, b, key):
    if key[a] != key[b]:
        return key[a] < key[b]
    return a < b


@njit(cache=True)
def _heap_sift_up(i, heap, hpos, key):
    while i > 0:
        parent = (i - 1) >> 1
        if _heap_less(heap[i], heap[parent], key):
            heap[i], heap[parent] = heap[parent], heap[i]
            hpos[heap[i]] = i
            hpos[heap[parent]] = parent
            i = parent
        else:
            break


@njit(cache=True)
def _heap_sift_down(i, n, heap, hpos, key):
    while True:
        left = 2 * i + 1
        if left >= n:
            break
        small = left
        right = left + 1
        if right < n and _heap_less(heap[right], heap[left], key):
            small = right
        if _heap_less(heap[small], heap[i], key):
            heap[i], heap[small] = heap[small], heap[i]
            hpos[heap[i]] = i
            hpos[heap[small]] = small
            i = small
        else:
            break


@njit(cache=True)
def _heap_update(p, heap, hpos, key):
    i = hpos[p]
    _heap_sift_up(i, heap, hpos, key)
    _heap_sift_down(hpos[p], heap.size, heap, hpos, key)


@njit(cache=True)
def _next_real_time(p, ptr, offsets, jtimes, anchor_real, anchor_base, clock_rate):
    """Real time of particle p's next base jump under its current clock."""
    j = ptr[p]
    if j >= offsets[p + 1]:
        return INF
    v = jtimes[j]
    rate = clock_rate[p]
    if rate == 0.0:
        return INF
    if rate == 1.0 and anchor_real[p] == anchor_base[p]:
        return v  # identity clock: keep base times bit-exact
    return anchor_real[p] + (v - anchor_base[p]) / rate


@njit(cache=True)
def sweep_remanent(
    jtimes,  # float64[T] base jump times, per-particle blocks, ascending
    jsteps,  # int64[T]
    offsets,  # int64[P+1] block boundaries
    x0s,  # int64[P]
    blue_rate,  # 1.0 for remanent, 0.0 for frog (frozen until infected)
    red_rate,  # d_r/d_b for remanent, 1.0 for frog
    site_lo,
    n_sites,
    t_end,  # real-time horizon
):
    """Co-evolve the monotone front and the per-particle time changes.

    Returns (err, n_front_jumps, jump_times, jump_pos, jump_movers,
    inf_times, n_real_events, ev_times, ev_pids, ev_post, max_front).
    ``ev_*`` hold the realized (re-timed) jump events in real-time order.
    """
    n_p = x0s.size
    total = jtimes.size
    pos = np.empty(n_p, dtype=np.int64)
    head = np.full(n_sites, -1, dtype=np.int64)
    nxt = np.full(n_p, -1, dtype=np.int64)
    prv = np.full(n_p, -1, dtype=np.int64)
    inf_times = np.full(n_p, INF, dtype=np.float64)
    anchor_real = np.zeros(n_p, dtype=np.float64)
    anchor_base = np.zeros(n_p, dtype=np.float64)
    clock_rate = np.full(n_p, blue_rate, dtype=np.float64)
    ptr = offsets[:-1].copy()

    jump_times = np.empty(total + 1, dtype=np.float64)
    jump_pos = np.empty(total + 1, dtype=np.int64)
    jump_movers = np.empty(total + 1, dtype=np.int64)
    n_jump = 0
    ev_times = np.empty(total, dtype=np.float64)
    ev_pids = np.empty(total, dtype=np.int64)
    ev_post = np.empty(total, dtype=np.int64)
    n_real = 0

    front = 0
    max_front = 0
    for p in range(n_p):
        xi = x0s[p] - site_lo
        if xi < 0 or xi >= n_sites:
            return (_ERR_RANGE, 0, jump_times, jump_pos, jump_movers, inf_times,
                    0, ev_times, ev_pids, ev_post, 0)
        pos[p] = x0s[p]
        _bucket_insert(p, xi, head, nxt, prv)
        if x0s[p] <= 0:
            inf_times[p] = 0.0
            clock_rate[p] = red_rate

    key = np.empty(n_p, dtype=np.float64)
    heap = np.empty(n_p, dtype=np.int64)
    hpos = np.empty(n_p, dtype=np.int64)
    for p in range(n_p):
        key[p] = _next_real_time(p, ptr, offsets, jtimes, anchor_real,
                                 anchor_base, clock_rate)
        heap[p] = p
        hpos[p] = p
    for i in range(n_p // 2 - 1, -1, -1):
        _heap_sift_down(i, n_p, heap, hpos, key)

    while True:
        p = heap[0]
        t = key[p]
        if t > t_end or t == INF:
            break
        x = pos[p]
        y = x + jsteps[ptr[p]]
        yi = y - site_lo
        if yi < 0 or yi >= n_sites:
            return (_ERR_RANGE, n_jump, jump_times, jump_pos, jump_movers,
                    inf_times, n_real, ev_times, ev_pids, ev_post, max_front)
        ptr[p] += 1
        _bucket_remove(p, x - site_lo, head, nxt, prv)
        _bucket_insert(p, yi, head, nxt, prv)
        pos[p] = y
        ev_times[n_real] = t
        ev_pids[n_real] = p
        ev_post[n_real] = y
        n_real += 1
        if x == front and y == front + 1 and inf_times[p] < t:
            # an infected particle steps off the front: the front climbs
            front += 1
            max_front = front
            jump_times[n_jump] = t
            jump_pos[n_jump] = front
            jump_movers[n_jump] = p
            n_jump += 1
            q = head[front - site_lo]
            while q >= 0:
                if inf_times[q] == INF:
                    inf_times[q] = t
                    anchor_base[q] = t * blue_rate
                    anchor_real[q] = t
                    clock_rate[q] = red_rate
                    key[q] = _next_real_time(q, ptr, offsets, jtimes,
                                             anchor_real, anchor_base,
                                             clock_rate)
                    _heap_update(q, heap, hpos, key)
                q = nxt[q]
        elif inf_times[p] == INF and y <= front:
            # a blue particle lands on previously-red territory
            inf_times[p] = t
            anchor_base[p] = t * blue_rate
            anchor_real[p] = t
            clock_rate[p] = red_rate
        key[p] = _next_real_time(p, ptr, offsets, jtimes, anchor_real,
                                 anchor_base, clock_rate)
        _heap_update(p, heap, hpos, key)
    return (_ERR_OK, n_jump, jump_times, jump_pos, jump_movers, inf_times,
            n_real, ev_times, ev_pids, ev_post, max_front)
