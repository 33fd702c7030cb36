"""Numba kernels for the hot paths: travel times, route timing, insertion scans
and the inner loops of both dispatch policies.

Everything here operates on flat numpy arrays packed by the owning modules.
Stop kinds are encoded as ints (see KIND_* below); request attributes live in
per-slot tables (req_ox .. req_l) indexed by the ints stored in stop_req.

Planning semantics implemented by `_leg_step` (shared by every evaluator):
legs are timed at the earliest feasible departure; when the next stop is a
pickup that is not yet ready, the departure is back-solved so the arrival
equals the ready time (mirroring the executed wait-then-drive behaviour), and
the charged leg duration is the actual driving time from that departure.
"""

import math

import numpy as np
from numba import njit

KIND_POINT = 0
KIND_PICKUP = 1
KIND_DELIVERY = 2
KIND_ENDPOINT = 3

INF = np.inf


# ---------------------------------------------------------------------------
# travel time primitives
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cell_index(x, y, nx, ny, cw, ch):
    """Grid cell of a point; row-major from the north-west corner."""
    col = int(x / cw)
    if col < 0:
        col = 0
    elif col >= nx:
        col = nx - 1
    row = int((ny * ch - y) / ch)
    if row < 0:
        row = 0
    elif row >= ny:
        row = ny - 1
    return row * nx + col


@njit(cache=True)
def _od_speeds(x1, y1, x2, y2, speeds, areas, nx, ny, cw, ch, out_v):
    """Fill out_v[w] with the area-weighted speed of the regions crossed by
    the straight segment between the two points."""
    r1 = _cell_index(x1, y1, nx, ny, cw, ch)
    r2 = _cell_index(x2, y2, nx, ny, cw, ch)
    nw = speeds.shape[1]
    if r1 == r2:
        for w in range(nw):
            out_v[w] = speeds[r1, w]
        return
    # crossing parameters along the segment at interior grid lines
    ts = np.empty(nx + ny + 2, dtype=np.float64)
    m = 0
    ts[m] = 0.0
    m += 1
    ts[m] = 1.0
    m += 1
    dx = x2 - x1
    dy = y2 - y1
    if dx != 0.0:
        for k in range(1, nx):
            tt = (k * cw - x1) / dx
            if 0.0 < tt < 1.0:
                ts[m] = tt
                m += 1
    if dy != 0.0:
        for k in range(1, ny):
            tt = (k * ch - y1) / dy
            if 0.0 < tt < 1.0:
                ts[m] = tt
                m += 1
    ts_s = np.sort(ts[:m])
    asum = 0.0
    for w in range(nw):
        out_v[w] = 0.0
    seen = np.zeros(nx * ny, dtype=np.uint8)
    # the endpoints' own regions always count as crossed
    for r in (r1, r2):
        if seen[r] == 0:
            seen[r] = 1
            asum += areas[r]
            for w in range(nw):
                out_v[w] += areas[r] * speeds[r, w]
    for i in range(m - 1):
        tm = 0.5 * (ts_s[i] + ts_s[i + 1])
        if ts_s[i + 1] - ts_s[i] <= 1e-12:
            continue
        r = _cell_index(x1 + tm * dx, y1 + tm * dy, nx, ny, cw, ch)
        if seen[r] == 0:
            seen[r] = 1
            asum += areas[r]
            for w in range(nw):
                out_v[w] += areas[r] * speeds[r, w]
    for w in range(nw):
        out_v[w] /= asum


@njit(cache=True)
def _period_of(t, hi):
    """Index of the period containing t; times beyond the last edge stay in
    the final period."""
    nw = hi.shape[0]
    for w in range(nw - 1):
        if t < hi[w]:
            return w
    return nw - 1


@njit(cache=True)
def _march_forward(d, t, hi, v):
    """Travel time to cover d starting at t with per-period speeds v."""
    if d <= 0.0:
        return 0.0
    w = _period_of(t, hi)
    nw = hi.shape[0]
    total = 0.0
    tcur = t
    remaining = d
    while True:
        vw = v[w]
        if w == nw - 1:
            return total + remaining / vw
        span = hi[w] - tcur
        cover = vw * span
        if cover >= remaining:
            return total + remaining / vw
        total += span
        remaining -= cover
        tcur = hi[w]
        w += 1


@njit(cache=True)
def _march_backward(d, arrive, hi, v):
    """Latest departure that covers d arriving exactly at `arrive`."""
    if d <= 0.0:
        return arrive
    nw = hi.shape[0]
    # period holding the instant just before the arrival
    w = nw - 1
    for k in range(nw - 1):
        if arrive <= hi[k]:
            w = k
            break
    tcur = arrive
    remaining = d
    while True:
        vw = v[w]
        lo = 0.0 if w == 0 else hi[w - 1]
        if w == 0:
            return tcur - remaining / vw
        span = tcur - lo
        cover = vw * span
        if cover >= remaining:
            return tcur - remaining / vw
        remaining -= cover
        tcur = lo
        w -= 1


@njit(cache=True)
def _tau(x1, y1, x2, y2, t, hi, speeds, areas, nx, ny, cw, ch,
         pair_v, use_pairs, avg_mode, avg_speed):
    """Time-dependent (or flat average) travel time between two points."""
    dx = x2 - x1
    dy = y2 - y1
    d = math.sqrt(dx * dx + dy * dy)
    if d <= 0.0:
        return 0.0
    if avg_mode:
        return d / avg_speed
    nw = hi.shape[0]
    v = np.empty(nw, dtype=np.float64)
    if use_pairs:
        r1 = _cell_index(x1, y1, nx, ny, cw, ch)
        r2 = _cell_index(x2, y2, nx, ny, cw, ch)
        for w in range(nw):
            v[w] = pair_v[r1, r2, w]
    else:
        _od_speeds(x1, y1, x2, y2, speeds, areas, nx, ny, cw, ch, v)
    return _march_forward(d, t, hi, v)


@njit(cache=True)
def _latest_departure(x1, y1, x2, y2, arrive, hi, speeds, areas, nx, ny, cw, ch,
                      pair_v, use_pairs, avg_mode, avg_speed):
    """Latest departure from (x1, y1) arriving at (x2, y2) by `arrive`."""
    dx = x2 - x1
    dy = y2 - y1
    d = math.sqrt(dx * dx + dy * dy)
    if d <= 0.0:
        return arrive
    if avg_mode:
        return arrive - d / avg_speed
    nw = hi.shape[0]
    v = np.empty(nw, dtype=np.float64)
    if use_pairs:
        r1 = _cell_index(x1, y1, nx, ny, cw, ch)
        r2 = _cell_index(x2, y2, nx, ny, cw, ch)
        for w in range(nw):
            v[w] = pair_v[r1, r2, w]
    else:
        _od_speeds(x1, y1, x2, y2, speeds, areas, nx, ny, cw, ch, v)
    return _march_backward(d, arrive, hi, v)


# ---------------------------------------------------------------------------
# route timing
# ---------------------------------------------------------------------------

@njit(cache=True)
def _leg_step(px, py, sx, sy, kind, req, t,
              req_e, req_l,
              hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
              avg_mode, avg_speed):
    """Advance from (px, py) at time t to the stop at (sx, sy).

    Returns (arrival, charged leg minutes, lateness minutes added).
    """
    leg = _tau(px, py, sx, sy, t, hi, speeds, areas, nx, ny, cw, ch,
               pair_v, use_pairs, avg_mode, avg_speed)
    arr = t + leg
    late = 0.0
    if kind == KIND_PICKUP:
        e = req_e[req]
        if arr < e:
            dep = _latest_departure(px, py, sx, sy, e, hi, speeds, areas,
                                    nx, ny, cw, ch, pair_v, use_pairs,
                                    avg_mode, avg_speed)
            if dep < t:
                dep = t
            leg = e - dep
            arr = e
    elif kind == KIND_DELIVERY:
        l = req_l[req]
        if arr > l:
            late = arr - l
    return arr, leg, late


@njit(cache=True)
def _route_metrics(kinds, reqs, xs, ys, n, start, endx, endy,
                   req_e, req_l,
                   hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                   avg_mode, avg_speed):
    """Travel / lateness / completion of a stop sequence, endpoint leg included.

    Stop 0 is the anchor (current position or destination); metrics cover the
    legs from stop 0 onwards plus the final leg to (endx, endy).  Travel and
    lateness are measured on the planning clock (flat average speeds when
    avg_mode); the returned completion time always uses the real
    time-dependent speeds, so availability feasibility cannot be fooled by
    the average-speed ablation.
    """
    t = start
    t_td = start
    travel = 0.0
    late = 0.0
    px = xs[0]
    py = ys[0]
    for i in range(1, n):
        arr, leg, lt = _leg_step(px, py, xs[i], ys[i], kinds[i], reqs[i], t,
                                 req_e, req_l, hi, speeds, areas,
                                 nx, ny, cw, ch, pair_v, use_pairs,
                                 avg_mode, avg_speed)
        travel += leg
        late += lt
        t = arr
        if avg_mode:
            arr2, _, _ = _leg_step(px, py, xs[i], ys[i], kinds[i], reqs[i],
                                   t_td, req_e, req_l, hi, speeds, areas,
                                   nx, ny, cw, ch, pair_v, use_pairs,
                                   False, avg_speed)
            t_td = arr2
        else:
            t_td = arr
        px = xs[i]
        py = ys[i]
    leg = _tau(px, py, endx, endy, t, hi, speeds, areas, nx, ny, cw, ch,
               pair_v, use_pairs, avg_mode, avg_speed)
    if avg_mode:
        tf = t_td + _tau(px, py, endx, endy, t_td, hi, speeds, areas,
                         nx, ny, cw, ch, pair_v, use_pairs, False, avg_speed)
    else:
        tf = t + leg
    return travel + leg, late, tf


@njit(cache=True)
def _scan_insertion(kinds, reqs, xs, ys, n, start, endx, endy, bcap,
                    slot, ox, oy, ddx, ddy,
                    req_e, req_l, mu1, mu2,
                    p_limit, q_span,
                    hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                    avg_mode, avg_speed):
    """Best feasible (pickup, delivery) insertion pair for one request.

    Positions: p in [1, min(p_limit, n)] inserts the pickup before original
    stop index p; the delivery goes before original index q in [p, p+q_span-1]
    (q == p puts it right after the pickup).  Full scans use p_limit = n,
    q_span = n + 1; the restricted heuristic uses 3 / 3.

    Minimizes mu1*travel + mu2*late of the whole resulting route on the
    planning clock, ties broken by smaller completion time then scan order.
    Feasibility and the returned completion time use the real time-dependent
    clock (they differ from the planning clock only in avg_mode).  Returns
    (found, p, q, travel, late, completion).
    """
    best_found = False
    best_obj = INF
    best_tf = INF
    best_p = -1
    best_q = -1
    best_travel = INF
    best_late = INF
    # prefix state at original stop p-1 (planning clock + real clock)
    pre_t = start
    pre_td = start
    pre_travel = 0.0
    pre_late = 0.0
    px = xs[0]
    py = ys[0]
    pmax = p_limit if p_limit < n else n
    for p in range(1, pmax + 1):
        # leg to the pickup
        arr_o, leg_o, _ = _leg_step(px, py, ox, oy, KIND_PICKUP, slot, pre_t,
                                    req_e, req_l, hi, speeds, areas,
                                    nx, ny, cw, ch, pair_v, use_pairs,
                                    avg_mode, avg_speed)
        qt = arr_o
        if avg_mode:
            arr2, _, _ = _leg_step(px, py, ox, oy, KIND_PICKUP, slot, pre_td,
                                   req_e, req_l, hi, speeds, areas,
                                   nx, ny, cw, ch, pair_v, use_pairs,
                                   False, avg_speed)
            qtd = arr2
        else:
            qtd = arr_o
        qtravel = pre_travel + leg_o
        qlate = pre_late
        qx = ox
        qy = oy
        qmax = p + q_span - 1
        if qmax > n:
            qmax = n
        for q in range(p, qmax + 1):
            # delivery leg
            arr_d, leg_d, late_d = _leg_step(qx, qy, ddx, ddy, KIND_DELIVERY,
                                             slot, qt, req_e, req_l,
                                             hi, speeds, areas, nx, ny, cw, ch,
                                             pair_v, use_pairs,
                                             avg_mode, avg_speed)
            c_travel = qtravel + leg_d
            c_late = qlate + late_d
            # suffix: original stops q .. n-1 then endpoint
            st = arr_d
            if avg_mode:
                arr2, _, _ = _leg_step(qx, qy, ddx, ddy, KIND_DELIVERY, slot,
                                       qtd, req_e, req_l, hi, speeds, areas,
                                       nx, ny, cw, ch, pair_v, use_pairs,
                                       False, avg_speed)
                std = arr2
            else:
                std = arr_d
            sx = ddx
            sy = ddy
            for i in range(q, n):
                arr, leg, lt = _leg_step(sx, sy, xs[i], ys[i], kinds[i],
                                         reqs[i], st, req_e, req_l,
                                         hi, speeds, areas, nx, ny, cw, ch,
                                         pair_v, use_pairs,
                                         avg_mode, avg_speed)
                c_travel += leg
                c_late += lt
                st = arr
                if avg_mode:
                    arr2, _, _ = _leg_step(sx, sy, xs[i], ys[i], kinds[i],
                                           reqs[i], std, req_e, req_l,
                                           hi, speeds, areas, nx, ny, cw, ch,
                                           pair_v, use_pairs,
                                           False, avg_speed)
                    std = arr2
                else:
                    std = arr
                sx = xs[i]
                sy = ys[i]
            leg = _tau(sx, sy, endx, endy, st, hi, speeds, areas,
                       nx, ny, cw, ch, pair_v, use_pairs, avg_mode, avg_speed)
            c_travel += leg
            if avg_mode:
                tf = std + _tau(sx, sy, endx, endy, std, hi, speeds, areas,
                                nx, ny, cw, ch, pair_v, use_pairs,
                                False, avg_speed)
            else:
                tf = st + leg
            if tf <= bcap:
                obj = mu1 * c_travel + mu2 * c_late
                if (obj < best_obj) or (obj == best_obj and tf < best_tf):
                    best_found = True
                    best_obj = obj
                    best_tf = tf
                    best_p = p
                    best_q = q
                    best_travel = c_travel
                    best_late = c_late
            # advance the o..d span through original stop q
            if q < n:
                arr, leg, lt = _leg_step(qx, qy, xs[q], ys[q], kinds[q],
                                         reqs[q], qt, req_e, req_l,
                                         hi, speeds, areas, nx, ny, cw, ch,
                                         pair_v, use_pairs,
                                         avg_mode, avg_speed)
                qtravel += leg
                qlate += lt
                qt = arr
                if avg_mode:
                    arr2, _, _ = _leg_step(qx, qy, xs[q], ys[q], kinds[q],
                                           reqs[q], qtd, req_e, req_l,
                                           hi, speeds, areas, nx, ny, cw, ch,
                                           pair_v, use_pairs,
                                           False, avg_speed)
                    qtd = arr2
                else:
                    qtd = arr
                qx = xs[q]
                qy = ys[q]
        # advance the prefix through original stop p
        if p < n:
            arr, leg, lt = _leg_step(px, py, xs[p], ys[p], kinds[p], reqs[p],
                                     pre_t, req_e, req_l,
                                     hi, speeds, areas, nx, ny, cw, ch,
                                     pair_v, use_pairs, avg_mode, avg_speed)
            pre_travel += leg
            pre_late += lt
            pre_t = arr
            if avg_mode:
                arr2, _, _ = _leg_step(px, py, xs[p], ys[p], kinds[p],
                                       reqs[p], pre_td, req_e, req_l,
                                       hi, speeds, areas, nx, ny, cw, ch,
                                       pair_v, use_pairs, False, avg_speed)
                pre_td = arr2
            else:
                pre_td = arr
            px = xs[p]
            py = ys[p]
    return best_found, best_p, best_q, best_travel, best_late, best_tf


# ---------------------------------------------------------------------------
# working-route helpers (1-D views into per-vehicle buffers)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _insert_pair_arrays(kinds, reqs, xs, ys, n, p, q, slot, ox, oy, ddx, ddy):
    """Insert pickup before original index p and delivery before original
    index q (q >= p); returns the new length n + 2."""
    i = n - 1
    while i >= q:
        kinds[i + 2] = kinds[i]
        reqs[i + 2] = reqs[i]
        xs[i + 2] = xs[i]
        ys[i + 2] = ys[i]
        i -= 1
    i = q - 1
    while i >= p:
        kinds[i + 1] = kinds[i]
        reqs[i + 1] = reqs[i]
        xs[i + 1] = xs[i]
        ys[i + 1] = ys[i]
        i -= 1
    kinds[p] = KIND_PICKUP
    reqs[p] = slot
    xs[p] = ox
    ys[p] = oy
    kinds[q + 1] = KIND_DELIVERY
    reqs[q + 1] = slot
    xs[q + 1] = ddx
    ys[q + 1] = ddy
    return n + 2


@njit(cache=True)
def _strip_arrays(kinds, reqs, xs, ys, n, strip_mask, stripped_out):
    """Remove every stop (beyond the anchor) whose request is flagged in
    strip_mask; compact in place.  Returns (new length, n stripped requests);
    stripped slots are recorded once (at their pickup stop)."""
    j = 0
    ns = 0
    for i in range(n):
        rq = reqs[i]
        if i > 0 and rq >= 0 and strip_mask[rq] == 1:
            if kinds[i] == KIND_PICKUP:
                stripped_out[ns] = rq
                ns += 1
            continue
        kinds[j] = kinds[i]
        reqs[j] = reqs[i]
        xs[j] = xs[i]
        ys[j] = ys[i]
        j += 1
    return j, ns


@njit(cache=True)
def _sort_by_deadline(slots, ns, req_l):
    """In-place insertion sort of request slots by (deadline, slot)."""
    for i in range(1, ns):
        s = slots[i]
        key = req_l[s]
        j = i - 1
        while j >= 0 and (req_l[slots[j]] > key or
                          (req_l[slots[j]] == key and slots[j] > s)):
            slots[j + 1] = slots[j]
            j -= 1
        slots[j + 1] = s


@njit(cache=True)
def _copy_route(src_k, src_r, src_x, src_y, n, dst_k, dst_r, dst_x, dst_y):
    for i in range(n):
        dst_k[i] = src_k[i]
        dst_r[i] = src_r[i]
        dst_x[i] = src_x[i]
        dst_y[i] = src_y[i]


@njit(cache=True)
def _rebuild_route(kinds, reqs, xs, ys, n, start, endx, endy, bcap,
                   slot, strip_mask,
                   req_ox, req_oy, req_dx, req_dy, req_e, req_l, mu1, mu2,
                   tmp_k, tmp_r, tmp_x, tmp_y, tmp_s,
                   hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                   avg_mode, avg_speed):
    """Reconstruction: strip all removable requests, insert `slot` at its best
    pair, then reinsert the stripped requests in deadline order.

    Leaves the rebuilt route in the tmp buffers; returns
    (ok, new length, travel, late, completion).
    """
    _copy_route(kinds, reqs, xs, ys, n, tmp_k, tmp_r, tmp_x, tmp_y)
    tn, ns = _strip_arrays(tmp_k, tmp_r, tmp_x, tmp_y, n, strip_mask, tmp_s)
    _sort_by_deadline(tmp_s, ns, req_l)
    found, p, q, trav, late, tf = _scan_insertion(
        tmp_k, tmp_r, tmp_x, tmp_y, tn, start, endx, endy, bcap,
        slot, req_ox[slot], req_oy[slot], req_dx[slot], req_dy[slot],
        req_e, req_l, mu1, mu2, tn, tn + 1,
        hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
        avg_mode, avg_speed)
    if not found:
        return False, tn, 0.0, 0.0, INF
    tn = _insert_pair_arrays(tmp_k, tmp_r, tmp_x, tmp_y, tn, p, q, slot,
                             req_ox[slot], req_oy[slot],
                             req_dx[slot], req_dy[slot])
    for si in range(ns):
        s = tmp_s[si]
        found, p, q, trav, late, tf = _scan_insertion(
            tmp_k, tmp_r, tmp_x, tmp_y, tn, start, endx, endy, bcap,
            s, req_ox[s], req_oy[s], req_dx[s], req_dy[s],
            req_e, req_l, mu1, mu2, tn, tn + 1,
            hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
            avg_mode, avg_speed)
        if not found:
            return False, tn, 0.0, 0.0, INF
        tn = _insert_pair_arrays(tmp_k, tmp_r, tmp_x, tmp_y, tn, p, q, s,
                                 req_ox[s], req_oy[s], req_dx[s], req_dy[s])
    trav, late, tf = _route_metrics(
        tmp_k, tmp_r, tmp_x, tmp_y, tn, start, endx, endy,
        req_e, req_l, hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
        avg_mode, avg_speed)
    if tf > bcap:
        return False, tn, trav, late, tf
    return True, tn, trav, late, tf


# ---------------------------------------------------------------------------
# policy cores
# ---------------------------------------------------------------------------

@njit(cache=True)
def _drace_assign(t_k,
                  veh_off, stop_kind, stop_req, stop_x, stop_y,
                  veh_start, veh_bcap, veh_b, veh_crowd,
                  veh_endx, veh_endy,
                  req_ox, req_oy, req_dx, req_dy, req_e, req_l,
                  order_slots, order_mode, outstanding,
                  mu1, mu2, rho, lam,
                  hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                  avg_mode, avg_speed):
    """Destroy-and-repair assignment pass.

    order_slots: request slots to place, already sorted by (deadline, slot);
    order_mode: 0 = new request (cheapest insertion into the current route),
    1 = near-ready outstanding request (destroyed up front, evaluated via
    route reconstruction).  Returns the rebuilt routes and, per ordered
    request, the chosen vehicle (-1 if nothing feasible, which the caller
    treats as a contract violation).
    """
    m = veh_off.shape[0] - 1
    k_total = order_slots.shape[0]
    nreq = req_ox.shape[0]
    maxn = 0
    for v in range(m):
        ln = veh_off[v + 1] - veh_off[v]
        if ln > maxn:
            maxn = ln
    cap = maxn + 2 * k_total + 2
    wk_k = np.empty((m, cap), dtype=np.int8)
    wk_r = np.empty((m, cap), dtype=np.int32)
    wk_x = np.empty((m, cap), dtype=np.float64)
    wk_y = np.empty((m, cap), dtype=np.float64)
    wk_len = np.empty(m, dtype=np.int32)

    destroy = np.zeros(nreq, dtype=np.uint8)
    for k in range(k_total):
        if order_mode[k] == 1:
            destroy[order_slots[k]] = 1
    for v in range(m):
        j = 0
        for i in range(veh_off[v], veh_off[v + 1]):
            rq = stop_req[i]
            if i > veh_off[v] and rq >= 0 and destroy[rq] == 1:
                continue
            wk_k[v, j] = stop_kind[i]
            wk_r[v, j] = rq
            wk_x[v, j] = stop_x[i]
            wk_y[v, j] = stop_y[i]
            j += 1
        wk_len[v] = j

    strip = outstanding.copy()
    base_travel = np.empty(m, dtype=np.float64)
    base_late = np.empty(m, dtype=np.float64)
    base_valid = np.zeros(m, dtype=np.uint8)
    tmp_k = np.empty(cap, dtype=np.int8)
    tmp_r = np.empty(cap, dtype=np.int32)
    tmp_x = np.empty(cap, dtype=np.float64)
    tmp_y = np.empty(cap, dtype=np.float64)
    tmp_s = np.empty(cap, dtype=np.int32)
    assign = np.full(k_total, -1, dtype=np.int32)

    for k in range(k_total):
        slot = order_slots[k]
        mode = order_mode[k]
        ox = req_ox[slot]
        oy = req_oy[slot]
        ddx = req_dx[slot]
        ddy = req_dy[slot]
        best_c = INF
        best_v = -1
        best_p = -1
        best_q = -1
        for v in range(m):
            if base_valid[v] == 0:
                bt, bl, _ = _route_metrics(
                    wk_k[v], wk_r[v], wk_x[v], wk_y[v], wk_len[v],
                    veh_start[v], veh_endx[v], veh_endy[v],
                    req_e, req_l, hi, speeds, areas, nx, ny, cw, ch,
                    pair_v, use_pairs, avg_mode, avg_speed)
                base_travel[v] = bt
                base_late[v] = bl
                base_valid[v] = 1
            if mode == 0:
                found, p, q, trav, late, tf = _scan_insertion(
                    wk_k[v], wk_r[v], wk_x[v], wk_y[v], wk_len[v],
                    veh_start[v], veh_endx[v], veh_endy[v], veh_bcap[v],
                    slot, ox, oy, ddx, ddy, req_e, req_l, mu1, mu2,
                    wk_len[v], wk_len[v] + 1,
                    hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                    avg_mode, avg_speed)
            else:
                found, tn, trav, late, tf = _rebuild_route(
                    wk_k[v], wk_r[v], wk_x[v], wk_y[v], wk_len[v],
                    veh_start[v], veh_endx[v], veh_endy[v], veh_bcap[v],
                    slot, strip,
                    req_ox, req_oy, req_dx, req_dy, req_e, req_l, mu1, mu2,
                    tmp_k, tmp_r, tmp_x, tmp_y, tmp_s,
                    hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                    avg_mode, avg_speed)
                p = -1
                q = -1
            if not found:
                continue
            c = (mu1 * (trav - base_travel[v]) + mu2 * (late - base_late[v])
                 + (rho if veh_crowd[v] == 1 else 0.0)
                 + lam * (veh_b[v] - t_k))
            if c < best_c:
                best_c = c
                best_v = v
                best_p = p
                best_q = q
        assign[k] = best_v
        if best_v < 0:
            continue
        if mode == 0:
            wk_len[best_v] = _insert_pair_arrays(
                wk_k[best_v], wk_r[best_v], wk_x[best_v], wk_y[best_v],
                wk_len[best_v], best_p, best_q, slot, ox, oy, ddx, ddy)
        else:
            ok, tn, trav, late, tf = _rebuild_route(
                wk_k[best_v], wk_r[best_v], wk_x[best_v], wk_y[best_v],
                wk_len[best_v],
                veh_start[best_v], veh_endx[best_v], veh_endy[best_v],
                veh_bcap[best_v], slot, strip,
                req_ox, req_oy, req_dx, req_dy, req_e, req_l, mu1, mu2,
                tmp_k, tmp_r, tmp_x, tmp_y, tmp_s,
                hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                avg_mode, avg_speed)
            _copy_route(tmp_k, tmp_r, tmp_x, tmp_y, tn,
                        wk_k[best_v], wk_r[best_v], wk_x[best_v],
                        wk_y[best_v])
            wk_len[best_v] = tn
        base_valid[best_v] = 0
        strip[slot] = 1
    return wk_k, wk_r, wk_x, wk_y, wk_len, assign


@njit(cache=True)
def _alns_improve(t_k,
                  veh_off, stop_kind, stop_req, stop_x, stop_y,
                  veh_start, veh_bcap, veh_crowd, veh_endx, veh_endy,
                  req_ox, req_oy, req_dx, req_dy, req_e, req_l,
                  window_slots, assigned_veh,
                  iters, n_remove, phi, chi,
                  op_pick, u_rand, seed_pick,
                  mu1, mu2, rho,
                  hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                  avg_mode, avg_speed):
    """Remove-and-reinsert improvement over the incumbent routes.

    Per iteration: random removal of up to n_remove window requests, or Shaw
    removal of one uniform seed plus the ceil(n/2) most related others;
    reinsertion in deadline order via restricted cheapest insertion (first 3
    pickup positions, 3 delivery positions); accept when the evaluated
    solution cost (travel + lateness + crowd fees) does not increase.
    Randomness is pre-drawn by the caller (op_pick, u_rand, seed_pick).
    """
    m = veh_off.shape[0] - 1
    wn = window_slots.shape[0]
    maxn = 0
    total = 0
    for v in range(m):
        ln = veh_off[v + 1] - veh_off[v]
        total += ln
        if ln > maxn:
            maxn = ln
    cap = maxn + 2 * wn + 2
    wk_k = np.empty((m, cap), dtype=np.int8)
    wk_r = np.empty((m, cap), dtype=np.int32)
    wk_x = np.empty((m, cap), dtype=np.float64)
    wk_y = np.empty((m, cap), dtype=np.float64)
    wk_len = np.empty(m, dtype=np.int32)
    for v in range(m):
        j = 0
        for i in range(veh_off[v], veh_off[v + 1]):
            wk_k[v, j] = stop_kind[i]
            wk_r[v, j] = stop_req[i]
            wk_x[v, j] = stop_x[i]
            wk_y[v, j] = stop_y[i]
            j += 1
        wk_len[v] = j
    wk_as = assigned_veh.copy()

    inc_travel = np.empty(m, dtype=np.float64)
    inc_late = np.empty(m, dtype=np.float64)
    for v in range(m):
        bt, bl, _ = _route_metrics(
            wk_k[v], wk_r[v], wk_x[v], wk_y[v], wk_len[v],
            veh_start[v], veh_endx[v], veh_endy[v], req_e, req_l,
            hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
            avg_mode, avg_speed)
        inc_travel[v] = bt
        inc_late[v] = bl
    inc_fees = 0
    for i in range(wn):
        av = wk_as[window_slots[i]]
        if av >= 0 and veh_crowd[av] == 1:
            inc_fees += 1
    inc_cost = rho * inc_fees
    for v in range(m):
        inc_cost += mu1 * inc_travel[v] + mu2 * inc_late[v]

    cd_k = np.empty((m, cap), dtype=np.int8)
    cd_r = np.empty((m, cap), dtype=np.int32)
    cd_x = np.empty((m, cap), dtype=np.float64)
    cd_y = np.empty((m, cap), dtype=np.float64)
    cd_len = np.empty(m, dtype=np.int32)
    cd_travel = np.empty(m, dtype=np.float64)
    cd_late = np.empty(m, dtype=np.float64)
    cd_as = np.empty_like(wk_as)
    removed = np.empty(wn, dtype=np.int32)
    widx = np.empty(wn, dtype=np.int32)
    strip_scratch = np.empty(4, dtype=np.int32)
    one = np.zeros(req_ox.shape[0], dtype=np.uint8)
    scr_k = np.empty(cap, dtype=np.int8)
    scr_r = np.empty(cap, dtype=np.int32)
    scr_x = np.empty(cap, dtype=np.float64)
    scr_y = np.empty(cap, dtype=np.float64)

    if wn == 0:
        iters = 0
    for it in range(iters):
        # --- pick the removal set ---
        nrem = 0
        if op_pick[it] == 0:
            # random removal of up to n_remove distinct requests
            nrem = n_remove if n_remove < wn else wn
            for i in range(wn):
                widx[i] = i
            for i in range(nrem):
                j = i + int(u_rand[it, i] * (wn - i))
                if j >= wn:
                    j = wn - 1
                tmpv = widx[i]
                widx[i] = widx[j]
                widx[j] = tmpv
                removed[i] = window_slots[widx[i]]
        else:
            # Shaw removal: one uniform seed + ceil(n/2) most related
            si = int(seed_pick[it] * wn)
            if si >= wn:
                si = wn - 1
            seed = window_slots[si]
            removed[0] = seed
            nrem = 1
            n_rel = (n_remove + 1) // 2
            if n_rel > wn - 1:
                n_rel = wn - 1
            for i in range(wn):
                widx[i] = 0  # reuse as "taken" marker
            widx[si] = 1
            for _ in range(n_rel):
                best_q = INF
                best_i = -1
                for i in range(wn):
                    if widx[i] == 1:
                        continue
                    s = window_slots[i]
                    dox = req_ox[s] - req_ox[seed]
                    doy = req_oy[s] - req_oy[seed]
                    ddx2 = req_dx[s] - req_dx[seed]
                    ddy2 = req_dy[s] - req_dy[seed]
                    tt = ((dox * dox + doy * doy) ** 0.5
                          + (ddx2 * ddx2 + ddy2 * ddy2) ** 0.5) / avg_speed
                    qv = phi * tt + chi * (abs(req_e[s] - req_e[seed])
                                           + abs(req_l[s] - req_l[seed]))
                    if qv < best_q:
                        best_q = qv
                        best_i = i
                if best_i < 0:
                    break
                widx[best_i] = 1
                removed[nrem] = window_slots[best_i]
                nrem += 1
        if nrem == 0:
            continue
        _sort_by_deadline(removed, nrem, req_l)

        # --- candidate = incumbent minus removed ---
        for v in range(m):
            _copy_route(wk_k[v], wk_r[v], wk_x[v], wk_y[v], wk_len[v],
                        cd_k[v], cd_r[v], cd_x[v], cd_y[v])
            cd_len[v] = wk_len[v]
            cd_travel[v] = inc_travel[v]
            cd_late[v] = inc_late[v]
        for i in range(req_ox.shape[0]):
            cd_as[i] = wk_as[i]
        cd_fees = inc_fees
        feasible = True
        for i in range(nrem):
            s = removed[i]
            one[s] = 1
            av = cd_as[s]
            nlen, _ = _strip_arrays(cd_k[av], cd_r[av], cd_x[av], cd_y[av],
                                    cd_len[av], one, strip_scratch)
            one[s] = 0
            cd_len[av] = nlen
            if veh_crowd[av] == 1:
                cd_fees -= 1
            cd_as[s] = -1
            bt, bl, btf = _route_metrics(
                cd_k[av], cd_r[av], cd_x[av], cd_y[av], cd_len[av],
                veh_start[av], veh_endx[av], veh_endy[av], req_e, req_l,
                hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                avg_mode, avg_speed)
            cd_travel[av] = bt
            cd_late[av] = bl
            if btf > veh_bcap[av]:
                # blended speeds are not metric: dropping a stop can slow
                # the remaining legs; discard such candidates
                feasible = False
                break
        if not feasible:
            continue

        # --- reinsert in deadline order ---
        for i in range(nrem):
            s = removed[i]
            ox = req_ox[s]
            oy = req_oy[s]
            ddx = req_dx[s]
            ddy = req_dy[s]
            best_c = INF
            best_v = -1
            best_p = -1
            best_q = -1
            best_tf = INF
            for v in range(m):
                found, p, q, trav, late, tf = _twostage_insertion(
                    cd_k[v], cd_r[v], cd_x[v], cd_y[v], cd_len[v],
                    veh_start[v], veh_endx[v], veh_endy[v], veh_bcap[v],
                    s, ox, oy, ddx, ddy, req_e, req_l, mu1, mu2,
                    hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                    avg_mode, avg_speed, scr_k, scr_r, scr_x, scr_y)
                if not found:
                    continue
                c = (mu1 * (trav - cd_travel[v])
                     + mu2 * (late - cd_late[v])
                     + (rho if veh_crowd[v] == 1 else 0.0))
                if c < best_c or (c == best_c and tf < best_tf):
                    best_c = c
                    best_v = v
                    best_p = p
                    best_q = q
                    best_tf = tf
            if best_v < 0:
                feasible = False
                break
            cd_len[best_v] = _insert_pair_arrays(
                cd_k[best_v], cd_r[best_v], cd_x[best_v], cd_y[best_v],
                cd_len[best_v], best_p, best_q, s, ox, oy, ddx, ddy)
            bt, bl, _ = _route_metrics(
                cd_k[best_v], cd_r[best_v], cd_x[best_v], cd_y[best_v],
                cd_len[best_v],
                veh_start[best_v], veh_endx[best_v], veh_endy[best_v],
                req_e, req_l, hi, speeds, areas, nx, ny, cw, ch,
                pair_v, use_pairs, avg_mode, avg_speed)
            cd_travel[best_v] = bt
            cd_late[best_v] = bl
            cd_as[s] = best_v
            if veh_crowd[best_v] == 1:
                cd_fees += 1
        if not feasible:
            continue

        cd_cost = rho * cd_fees
        for v in range(m):
            cd_cost += mu1 * cd_travel[v] + mu2 * cd_late[v]
        if cd_cost <= inc_cost:
            for v in range(m):
                _copy_route(cd_k[v], cd_r[v], cd_x[v], cd_y[v], cd_len[v],
                            wk_k[v], wk_r[v], wk_x[v], wk_y[v])
                wk_len[v] = cd_len[v]
                inc_travel[v] = cd_travel[v]
                inc_late[v] = cd_late[v]
            for i in range(req_ox.shape[0]):
                wk_as[i] = cd_as[i]
            inc_fees = cd_fees
            inc_cost = cd_cost
    return wk_k, wk_r, wk_x, wk_y, wk_len, wk_as


@njit(cache=True)
def _twostage_insertion(kinds, reqs, xs, ys, n, start, endx, endy, bcap,
                        slot, ox, oy, ddx, ddy,
                        req_e, req_l, mu1, mu2,
                        hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
                        avg_mode, avg_speed, scr_k, scr_r, scr_x, scr_y):
    """Restricted two-stage insertion: rank the first three pickup positions
    by the cost of inserting the pickup alone, then place the delivery at the
    cheapest feasible of the three positions after it.  Returns the same
    tuple as _scan_insertion."""
    pmax = 3 if n > 3 else n
    # stage 1: cost of the route with only the pickup inserted
    order = np.empty(pmax, dtype=np.int64)
    cost1 = np.empty(pmax, dtype=np.float64)
    for i in range(pmax):
        p = i + 1
        m2 = 0
        for j in range(p):
            scr_k[m2] = kinds[j]
            scr_r[m2] = reqs[j]
            scr_x[m2] = xs[j]
            scr_y[m2] = ys[j]
            m2 += 1
        scr_k[m2] = KIND_PICKUP
        scr_r[m2] = slot
        scr_x[m2] = ox
        scr_y[m2] = oy
        m2 += 1
        for j in range(p, n):
            scr_k[m2] = kinds[j]
            scr_r[m2] = reqs[j]
            scr_x[m2] = xs[j]
            scr_y[m2] = ys[j]
            m2 += 1
        trav, late, _ = _route_metrics(
            scr_k, scr_r, scr_x, scr_y, m2, start, endx, endy, req_e, req_l,
            hi, speeds, areas, nx, ny, cw, ch, pair_v, use_pairs,
            avg_mode, avg_speed)
        order[i] = p
        cost1[i] = mu1 * trav + mu2 * late
    # sort candidate pickup positions by stage-1 cost (stable, tiny n)
    for i in range(1, pmax):
        kp = order[i]
        kc = cost1[i]
        j = i - 1
        while j >= 0 and cost1[j] > kc:
            order[j + 1] = order[j]
            cost1[j + 1] = cost1[j]
            j -= 1
        order[j + 1] = kp
        cost1[j + 1] = kc
    # stage 2: first pickup position that admits a feasible delivery slot
    for i in range(pmax):
        p = order[i]
        best_found = False
        best_obj = INF
        best_q = -1
        best_travel = INF
        best_late = INF
        best_tf = INF
        qmax = p + 2
        if qmax > n:
            qmax = n
        for q2 in range(p, qmax + 1):
            m2 = 0
            for j in range(p):
                scr_k[m2] = kinds[j]
                scr_r[m2] = reqs[j]
                scr_x[m2] = xs[j]
                scr_y[m2] = ys[j]
                m2 += 1
            scr_k[m2] = KIND_PICKUP
            scr_r[m2] = slot
            scr_x[m2] = ox
            scr_y[m2] = oy
            m2 += 1
            for j in range(p, q2):
                scr_k[m2] = kinds[j]
                scr_r[m2] = reqs[j]
                scr_x[m2] = xs[j]
                scr_y[m2] = ys[j]
                m2 += 1
            scr_k[m2] = KIND_DELIVERY
            scr_r[m2] = slot
            scr_x[m2] = ddx
            scr_y[m2] = ddy
            m2 += 1
            for j in range(q2, n):
                scr_k[m2] = kinds[j]
                scr_r[m2] = reqs[j]
                scr_x[m2] = xs[j]
                scr_y[m2] = ys[j]
                m2 += 1
            trav, late, tf = _route_metrics(
                scr_k, scr_r, scr_x, scr_y, m2, start, endx, endy,
                req_e, req_l, hi, speeds, areas, nx, ny, cw, ch,
                pair_v, use_pairs, avg_mode, avg_speed)
            if tf <= bcap:
                obj = mu1 * trav + mu2 * late
                if (obj < best_obj) or (obj == best_obj and tf < best_tf):
                    best_found = True
                    best_obj = obj
                    best_q = q2
                    best_travel = trav
                    best_late = late
                    best_tf = tf
        if best_found:
            return True, p, best_q, best_travel, best_late, best_tf
    return False, -1, -1, INF, INF, INF
