"""Dispatch policies.

DracePolicy: each epoch, outstanding requests whose ready time falls within
the lookahead window are removed from all routes and, together with the newly
arrived requests, reassigned in deadline order; each candidate assignment is
scored by the capacity-expiration cost

    travel_cost * d_travel + late_cost * d_late
    + crowd_fee * [crowdshipper] + capacity_weight * (leave_by - t)

so vehicles whose availability expires sooner are preferred.  New requests
are priced by cheapest insertion into the current route; window requests by a
route reconstruction that strips all reassignable requests and re-places
them.

MyopicAlnsPolicy: new requests are appended to a random feasible crowdshipper
(falling back to a random dedicated vehicle); then an accept-if-not-worse
remove-and-reinsert loop runs over the window requests using random removal
and relatedness-guided (Shaw) removal, with restricted cheapest reinsertion.

Both policies may plan with the flat average travel time (avg_tt=True); the
simulator always executes with time-dependent travel regardless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import (
    KIND_PICKUP,
    _alns_improve,
    _drace_assign,
    _rebuild_route,
)
from .instances import Request
from .mdp import NEW, OUTSTANDING, CostConfig, SimState, VehicleState
from .routing import (
    INFEASIBLE,
    DeltaResult,
    RequestTable,
    Stop,
    delivery_stop,
    insert_pair,
    pack_route,
    pickup_stop,
    route_metrics,
    scan_insertion,
    strip_requests,
)
from .traveltime import AVERAGE_SPEED_KM_MIN, TravelTimeModel, distance

RECONSTRUCTION = "reconstruction"
CHEAPEST = "cheapest"


class PolicyError(RuntimeError):
    """The policy could not produce a feasible action."""


@dataclass(frozen=True)
class AlnsConfig:
    """Weights and budget of the myopic neighborhood search.  window is the
    ready-time lookahead selecting removable requests; None adopts the run
    config's window."""

    phi: float = 9.0              # location-relatedness weight
    chi: float = 3.0              # temporal-relatedness weight
    removal_count: int = 4        # n removed per iteration
    iteration_limit: int = 200
    window: float | None = None

    def __post_init__(self):
        if self.phi < 0 or self.chi < 0:
            raise ValueError("relatedness weights must be >= 0")
        if self.removal_count < 1:
            raise ValueError("removal_count must be >= 1")
        if self.iteration_limit < 0:
            raise ValueError("iteration_limit must be >= 0")
        if self.window is not None and self.window < 0:
            raise ValueError("window must be >= 0")


def relatedness(r_i: Request, r_j: Request, phi: float, chi: float) -> float:
    """Similarity of two requests: weighted average-speed travel times
    between their pickups and between their deliveries, plus their ready-time
    and deadline gaps."""
    tt = (distance(r_i.origin, r_j.origin)
          + distance(r_i.destination, r_j.destination)) / AVERAGE_SPEED_KM_MIN
    gaps = abs(r_i.ready - r_j.ready) + abs(r_i.deadline - r_j.deadline)
    return phi * tt + chi * gaps


def cfa_cost(delta_result: DeltaResult, vehicle: VehicleState, t: float,
             config: CostConfig) -> float:
    """Assignment score: economic deltas plus the remaining-availability
    term; infinite when the plan cannot finish within the availability."""
    if delta_result.completion > vehicle.leave_by:
        return math.inf
    return (config.travel_cost * delta_result.travel_delta
            + config.late_cost * delta_result.late_delta
            + (config.crowd_fee if vehicle.is_crowd else 0.0)
            + config.capacity_weight * (vehicle.leave_by - t))


def _b_cap(vehicle: VehicleState, config: CostConfig) -> float:
    return vehicle.leave_by - (config.feasibility_buffer
                               if vehicle.is_crowd else 0.0)


def plan_start(vehicle: VehicleState, t: float) -> float:
    """Earliest time a vehicle's plan can progress: its arrival or now, and
    no earlier than a committed wait (an idle vehicle departs at its planned
    time unless this epoch's action redirects it).  Evaluating candidates
    from the committed departure is what lets the policies see the lateness
    a strategic wait would cause and move those requests elsewhere."""
    start = max(vehicle.arrive_time, float(t))
    if vehicle.arrived and len(vehicle.stops) > 1 \
            and not math.isnan(vehicle.depart_plan):
        start = max(start, vehicle.depart_plan)
    return start


def delta(slot: int, vehicle: VehicleState, t: float, table: RequestTable,
          model: TravelTimeModel, config: CostConfig, mode: str,
          outstanding: np.ndarray | None = None,
          avg: bool = False) -> DeltaResult:
    """Travel/lateness increase and completion time of adding one request to
    one vehicle, via cheapest insertion or route reconstruction."""
    start = plan_start(vehicle, t)
    bcap = _b_cap(vehicle, config)
    mu1, mu2 = config.travel_cost, config.late_cost
    base_travel, base_late, _ = route_metrics(
        vehicle.stops, start, vehicle.end, table, model, avg)
    if mode == CHEAPEST:
        found, p, q, trav, late, tf = scan_insertion(
            vehicle.stops, slot, start, vehicle.end, bcap, table, model,
            mu1, mu2, avg=avg)
        if not found:
            return INFEASIBLE
        stops = insert_pair(vehicle.stops, p, q, slot, table)
    elif mode == RECONSTRUCTION:
        if outstanding is None:
            raise ValueError("reconstruction mode needs the outstanding mask")
        kinds, reqs, xs, ys = pack_route(vehicle.stops)
        n = len(vehicle.stops)
        cap = n + 2 * (int(outstanding.sum()) + 2)
        tmp_k = np.empty(cap, dtype=np.int8)
        tmp_r = np.empty(cap, dtype=np.int32)
        tmp_x = np.empty(cap, dtype=np.float64)
        tmp_y = np.empty(cap, dtype=np.float64)
        tmp_s = np.empty(cap, dtype=np.int32)
        ok, tn, trav, late, tf = _rebuild_route(
            kinds, reqs, xs, ys, n, start, vehicle.end[0], vehicle.end[1],
            bcap, slot, outstanding.astype(np.uint8),
            table.ox, table.oy, table.dx, table.dy, table.ready,
            table.deadline, mu1, mu2,
            tmp_k, tmp_r, tmp_x, tmp_y, tmp_s,
            *model.kernel_args(avg))
        if not ok:
            return INFEASIBLE
        stops = tuple(
            vehicle.stops[0] if i == 0 else
            Stop(int(tmp_k[i]), int(tmp_r[i]), float(tmp_x[i]),
                 float(tmp_y[i]))
            for i in range(tn))
    else:
        raise ValueError(f"unknown delta mode {mode!r}")
    return DeltaResult(trav - base_travel, late - base_late, tf, stops)


def insert(slot: int, vehicle: VehicleState, t: float, table: RequestTable,
           model: TravelTimeModel, config: CostConfig,
           mode: str = CHEAPEST, outstanding: np.ndarray | None = None,
           avg: bool = False) -> tuple[Stop, ...]:
    """Route with the request placed at the minimum-cost feasible positions
    found by `delta`."""
    res = delta(slot, vehicle, t, table, model, config, mode,
                outstanding=outstanding, avg=avg)
    if not res.feasible:
        raise PolicyError(
            f"request {slot} does not fit vehicle {vehicle.id}")
    return res.stops


class _PolicyBase:
    """Policies adopt the run's CostConfig from the simulator at
    start_run; only policy-structural knobs live on the instance."""

    name = "policy"

    def __init__(self, avg_tt: bool = False):
        self.avg_tt = bool(avg_tt)
        self.config: CostConfig | None = None
        self.model: TravelTimeModel | None = None
        self.table: RequestTable | None = None
        self.rng: np.random.Generator | None = None

    def start_run(self, sim, seed: int) -> None:
        self.model = sim.model
        self.table = sim.table
        self.config = sim.config
        self.rng = np.random.default_rng([int(seed), 0xD15])

    def _pack_fleet(self, state: SimState):
        cfg = self.config
        vehicles = state.active_vehicles()
        ids = [v.id for v in vehicles]
        total = sum(len(v.stops) for v in vehicles)
        off = np.zeros(len(vehicles) + 1, dtype=np.int32)
        kind = np.empty(total, dtype=np.int8)
        req = np.empty(total, dtype=np.int32)
        xs = np.empty(total, dtype=np.float64)
        ys = np.empty(total, dtype=np.float64)
        start = np.empty(len(vehicles))
        bcap = np.empty(len(vehicles))
        b = np.empty(len(vehicles))
        crowd = np.zeros(len(vehicles), dtype=np.uint8)
        endx = np.empty(len(vehicles))
        endy = np.empty(len(vehicles))
        pos = 0
        for i, v in enumerate(vehicles):
            for s in v.stops:
                kind[pos] = s.kind
                req[pos] = s.req
                xs[pos] = s.x
                ys[pos] = s.y
                pos += 1
            off[i + 1] = pos
            start[i] = plan_start(v, state.t)
            b[i] = v.leave_by
            bcap[i] = _b_cap(v, cfg)
            crowd[i] = 1 if v.is_crowd else 0
            endx[i], endy[i] = v.end
        return (ids, vehicles, off, kind, req, xs, ys, start, bcap, b,
                crowd, endx, endy)

    def _unpack_routes(self, ids, vehicles, wk_k, wk_r, wk_x, wk_y, wk_len):
        routes = {}
        for i, vid in enumerate(ids):
            anchor = vehicles[i].stops[0]
            stops = [anchor]
            for j in range(1, int(wk_len[i])):
                stops.append(Stop(int(wk_k[i, j]), int(wk_r[i, j]),
                                  float(wk_x[i, j]), float(wk_y[i, j])))
            routes[vid] = tuple(stops)
        return routes


class DracePolicy(_PolicyBase):
    """Capacity-expiration-aware destroy-and-repair assignment."""

    name = "drace"

    def _destroyable(self, state: SimState, window):
        """Blended speeds are not metric, so removing stops can lengthen the
        remaining legs: a crowdshipper whose residual route would overrun its
        availability keeps its window requests this epoch."""
        if not window:
            return window
        wset = set(window)
        keep: set[int] = set()
        t = float(state.t)
        for veh in state.active_vehicles():
            if not veh.is_crowd:
                continue
            held = {s.req for s in veh.stops[1:]
                    if s.kind == KIND_PICKUP and s.req in wset}
            if not held:
                continue
            residual = strip_requests(veh.stops, held)
            _, _, tf = route_metrics(residual, plan_start(veh, t), veh.end,
                                     self.table, self.model, self.avg_tt)
            if tf > _b_cap(veh, self.config):
                keep |= held
        if keep:
            window = [s for s in window if s not in keep]
        return window

    def decide(self, state: SimState):
        cfg = self.config
        window = state.window_slots(cfg.window)
        new = state.new_slots()
        if not window and not new:
            return {}
        window = self._destroyable(state, window)
        deadline = self.table.deadline
        items = sorted([(deadline[s], s, 1) for s in window]
                       + [(deadline[s], s, 0) for s in new])
        order = np.array([s for _, s, _ in items], dtype=np.int32)
        modes = np.array([m for _, _, m in items], dtype=np.int8)
        (ids, vehicles, off, kind, req, xs, ys, start, bcap, b, crowd,
         endx, endy) = self._pack_fleet(state)
        outstanding = (state.status == OUTSTANDING).astype(np.uint8)
        wk_k, wk_r, wk_x, wk_y, wk_len, assign = _drace_assign(
            float(state.t), off, kind, req, xs, ys,
            start, bcap, b, crowd, endx, endy,
            self.table.ox, self.table.oy, self.table.dx, self.table.dy,
            self.table.ready, self.table.deadline,
            order, modes, outstanding,
            cfg.travel_cost, cfg.late_cost, cfg.crowd_fee,
            cfg.capacity_weight,
            *self.model.kernel_args(self.avg_tt))
        if np.any(assign < 0):
            bad = order[np.asarray(assign) < 0]
            raise PolicyError(f"no feasible vehicle for requests {bad}")
        return self._unpack_routes(ids, vehicles, wk_k, wk_r, wk_x, wk_y,
                                   wk_len)


class MyopicAlnsPolicy(_PolicyBase):
    """Myopic baseline: random crowd-first seeding of new requests plus an
    accept-if-not-worse removal/reinsertion loop."""

    name = "myopic"

    def __init__(self, alns: AlnsConfig | None = None,
                 avg_tt: bool = False):
        super().__init__(avg_tt)
        self.alns = alns or AlnsConfig()

    def _seed_new(self, state: SimState, routes, assigned):
        """Append each new request to a random feasible crowdshipper, else a
        random dedicated vehicle."""
        cfg = self.config
        t = float(state.t)
        vehicles = state.active_vehicles()
        crowd_ids = [v.id for v in vehicles if v.is_crowd]
        ded_ids = [v.id for v in vehicles if not v.is_crowd]
        byid = {v.id: v for v in vehicles}
        for slot in state.new_slots():
            r = state.instance.requests[slot]
            o = pickup_stop(slot, r)
            d = delivery_stop(slot, r)
            placed = False
            for pool in (crowd_ids, ded_ids):
                if placed or not pool:
                    continue
                for idx in self.rng.permutation(len(pool)):
                    vid = pool[int(idx)]
                    veh = byid[vid]
                    cand = routes[vid] + [o, d]
                    _, _, tf = route_metrics(
                        cand, plan_start(veh, t), veh.end, self.table,
                        self.model, self.avg_tt)
                    if tf <= _b_cap(veh, cfg):
                        routes[vid] = cand
                        assigned[slot] = vid
                        placed = True
                        break
            if not placed:
                # end-of-route appends all infeasible: fall back to the best
                # mid-route insertion on a dedicated vehicle
                best = None
                for vid in ded_ids:
                    veh = byid[vid]
                    found, p, q, trav, late, tf = scan_insertion(
                        routes[vid], slot, plan_start(veh, t), veh.end,
                        _b_cap(veh, cfg), self.table, self.model,
                        cfg.travel_cost, cfg.late_cost, avg=self.avg_tt)
                    if found:
                        obj = cfg.travel_cost * trav + cfg.late_cost * late
                        if best is None or obj < best[0]:
                            best = (obj, vid, p, q)
                if best is None:
                    raise PolicyError(f"request {slot} fits no vehicle")
                _, vid, p, q = best
                routes[vid] = list(insert_pair(routes[vid], p, q, slot,
                                               self.table))
                assigned[slot] = vid

    def decide(self, state: SimState):
        cfg = self.config
        alns = self.alns
        routes = {v.id: list(v.stops) for v in state.active_vehicles()}
        assigned = state.assigned.copy()
        self._seed_new(state, routes, assigned)

        ready = self.table.ready
        win = cfg.window if self.alns.window is None else self.alns.window
        cand = [s for s in range(self.table.n)
                if (state.status[s] == OUTSTANDING
                    or state.status[s] == NEW)
                and ready[s] - state.t <= win]
        iters = alns.iteration_limit
        op_pick = self.rng.integers(0, 2, size=iters).astype(np.uint8)
        u_rand = self.rng.random((iters, alns.removal_count))
        seed_pick = self.rng.random(iters)
        if not cand or iters == 0:
            return {vid: tuple(st) for vid, st in routes.items()}

        vehicles = state.active_vehicles()
        ids = [v.id for v in vehicles]
        total = sum(len(routes[v.id]) for v in vehicles)
        off = np.zeros(len(vehicles) + 1, dtype=np.int32)
        kind = np.empty(total, dtype=np.int8)
        req = np.empty(total, dtype=np.int32)
        xs = np.empty(total, dtype=np.float64)
        ys = np.empty(total, dtype=np.float64)
        start = np.empty(len(vehicles))
        bcap = np.empty(len(vehicles))
        crowd = np.zeros(len(vehicles), dtype=np.uint8)
        endx = np.empty(len(vehicles))
        endy = np.empty(len(vehicles))
        pos = 0
        veh_index = {}
        for i, v in enumerate(vehicles):
            veh_index[v.id] = i
            for s in routes[v.id]:
                kind[pos] = s.kind
                req[pos] = s.req
                xs[pos] = s.x
                ys[pos] = s.y
                pos += 1
            off[i + 1] = pos
            start[i] = plan_start(v, state.t)
            bcap[i] = _b_cap(v, cfg)
            crowd[i] = 1 if v.is_crowd else 0
            endx[i], endy[i] = v.end
        # kernel indexes vehicles densely; translate the assignment map
        as_idx = np.full(self.table.n, -1, dtype=np.int32)
        for s in range(self.table.n):
            if assigned[s] >= 0 and int(assigned[s]) in veh_index:
                as_idx[s] = veh_index[int(assigned[s])]

        wk_k, wk_r, wk_x, wk_y, wk_len, _ = _alns_improve(
            float(state.t), off, kind, req, xs, ys,
            start, bcap, crowd, endx, endy,
            self.table.ox, self.table.oy, self.table.dx, self.table.dy,
            self.table.ready, self.table.deadline,
            np.array(cand, dtype=np.int32), as_idx,
            iters, alns.removal_count, alns.phi, alns.chi,
            op_pick, u_rand, seed_pick,
            cfg.travel_cost, cfg.late_cost, cfg.crowd_fee,
            *self.model.kernel_args(self.avg_tt))
        return self._unpack_routes(ids, vehicles, wk_k, wk_r, wk_x, wk_y,
                                   wk_len)


def make_policy(name: str, alns: AlnsConfig | None = None,
                avg_tt: bool = False):
    if name == "drace":
        return DracePolicy(avg_tt=avg_tt)
    if name == "myopic":
        return MyopicAlnsPolicy(alns=alns, avg_tt=avg_tt)
    raise ValueError(f"unknown policy {name!r}")
