"""Independent reference implementations used as test oracles.

These deliberately avoid the package's kernel code paths: region crossing is
re-derived by fine spatial sampling, travel time by numeric piecewise
integration, and insertion scans by exhaustive enumeration over a plain
recurrence evaluator.
"""

import math

import numpy as np

from crowddrp._kernels import KIND_DELIVERY, KIND_PICKUP


def od_speed_profile(model, a, b, sample_km=0.00025):
    """Per-period speeds for a leg, crossing regions found by sampling the
    segment every 0.25 m."""
    geo = model.geography
    prof = model.profile
    d = math.dist(a, b)
    n = max(1, int(d / sample_km))
    f = np.linspace(0.0, 1.0, n + 1)
    xs = a[0] + f * (b[0] - a[0])
    ys = a[1] + f * (b[1] - a[1])
    cols = np.clip((xs / geo.cell_width).astype(int), 0, geo.nx - 1)
    rows = np.clip(((geo.height_km - ys) / geo.cell_height).astype(int),
                   0, geo.ny - 1)
    labels = {geo.labels[r * geo.nx + c]
              for r, c in zip(rows.tolist(), cols.tolist())}
    if prof.areas is None:
        areas = {l: geo.cell_area(l) for l in labels}
    else:
        areas = {l: prof.areas.get(l, geo.cell_area(l)) for l in labels}
    total = sum(areas.values())
    out = []
    for w in range(prof.n_periods):
        out.append(sum(areas[l] * prof.speeds[l][w] for l in labels) / total)
    return np.asarray(out)


def numeric_travel_time(model, a, b, t, dt=1e-3):
    """March time in dt steps (clipped at period boundaries) until the leg
    distance is covered."""
    d = math.dist(a, b)
    if d <= 0.0:
        return 0.0
    v = od_speed_profile(model, a, b)
    edges = np.asarray(model.profile.period_starts[1:])
    upper = d / v.min() + 2 * dt
    grid = np.arange(t, t + upper, dt)
    cuts = edges[(edges > t) & (edges < t + upper)]
    times = np.union1d(grid, cuts)
    seg = np.diff(times)
    w = np.searchsorted(edges, times[:-1], side="right")
    cover = np.cumsum(v[w] * seg)
    idx = int(np.searchsorted(cover, d))
    if idx >= len(cover):
        raise AssertionError("oracle horizon too short")
    before = cover[idx - 1] if idx > 0 else 0.0
    arrive = times[idx] + (d - before) / v[w[idx]]
    return arrive - t


def numeric_distance_covered(model, a, b, t, duration, dt=1e-3):
    """Integrate the leg's speed path over [t, t + duration]."""
    if duration <= 0.0:
        return 0.0
    v = od_speed_profile(model, a, b)
    edges = np.asarray(model.profile.period_starts[1:])
    grid = np.arange(t, t + duration, dt)
    cuts = edges[(edges > t) & (edges < t + duration)]
    times = np.append(np.union1d(grid, cuts), t + duration)
    seg = np.diff(times)
    w = np.searchsorted(edges, times[:-1], side="right")
    return float(np.sum(v[w] * seg))


def eval_route(model, table, stops, start, end):
    """Plain implementation of the documented planning recurrence."""
    t = start
    travel = 0.0
    late = 0.0
    pos = (stops[0].x, stops[0].y)
    for s in stops[1:]:
        nxt = (s.x, s.y)
        tau = model.travel_time(pos, nxt, t)
        arr = t + tau
        leg = tau
        if s.kind == KIND_PICKUP and arr < table.ready[s.req]:
            dep = max(t, model.latest_departure(pos, nxt,
                                                table.ready[s.req]))
            arr = table.ready[s.req]
            leg = arr - dep
        if s.kind == KIND_DELIVERY:
            late += max(0.0, arr - table.deadline[s.req])
        travel += leg
        t = arr
        pos = nxt
    tau = model.travel_time(pos, end, t)
    return travel + tau, late, t + tau


def enumerate_insertions(model, table, stops, slot, start, end, b_cap,
                         mu1, mu2):
    """Exhaustive scan over all (pickup, delivery) insertion pairs; returns
    (found, p, q, travel, late, completion) under the same objective and tie
    rules as the kernel scan."""
    from crowddrp.routing import insert_pair

    n = len(stops)
    best = None
    for p in range(1, n + 1):
        for q in range(p, n + 1):
            cand = insert_pair(stops, p, q, slot, table)
            travel, late, tf = eval_route(model, table, cand, start, end)
            if tf > b_cap:
                continue
            obj = mu1 * travel + mu2 * late
            key = (obj, tf)
            if best is None or key < best[0]:
                best = (key, p, q, travel, late, tf)
    if best is None:
        return False, -1, -1, math.inf, math.inf, math.inf
    _, p, q, travel, late, tf = best
    return True, p, q, travel, late, tf
