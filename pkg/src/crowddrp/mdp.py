"""Per-minute simulation engine: deterministic action effects (departures,
waiting, cost accounting) and the stochastic transition (request arrivals,
crowdshipper appearances, availability expiry).

Epoch handling: travel produces real-valued arrival times, so the engine
gates vehicle decisions at integer minutes -- a vehicle's arrival is
processed at the first epoch >= its arrival time, and a planned departure
fires at the first epoch >= the planned time.  Delivery timestamps and all
costs use the exact fractional times.

Cost accounting follows the action dynamics: travel cost and the crowd fee
are charged when a vehicle departs, and the lateness charge is fixed at the
departure toward a delivery (the arrival time is committed at that moment).
A request counts as delivered when its arrival is processed.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass

import numpy as np

from ._kernels import KIND_DELIVERY, KIND_ENDPOINT, KIND_PICKUP, KIND_POINT
from .instances import Instance, VehicleSpec
from .routing import (
    RequestTable,
    Stop,
    endpoint_stop,
    point_stop,
    route_metrics,
)
from .traveltime import TravelTimeModel, default_model

# request lifecycle
PENDING = 0      # not yet arrived
NEW = 1          # arrived this epoch, not yet routed
OUTSTANDING = 2  # routed, pickup not yet underway; reassignable
IN_PROCESS = 3   # a vehicle is en route to (or past) the pickup; fixed
DELIVERED = 4


class SimulationError(RuntimeError):
    """A policy emitted an infeasible action or an engine invariant broke."""


@dataclass(frozen=True)
class CostConfig:
    """Economic parameters and policy/engine knobs.

    travel_cost and late_cost are $ per minute, crowd_fee is $ per delivery
    performed by a crowdshipper.  capacity_weight prices a vehicle's
    remaining availability when scoring an assignment; wait_fraction sizes
    strategic waits as a share of the remaining availability.  window is the
    ready-time lookahead (minutes) selecting which outstanding requests are
    re-optimized each epoch.  feasibility_buffer keeps crowdshipper plans
    clear of their end-of-availability despite per-minute departure
    rounding.  include_return_legs charges the final leg to a vehicle's
    required end location.
    """

    travel_cost: float = 1.0
    late_cost: float = 5.0
    crowd_fee: float = 2.0
    capacity_weight: float = 0.05
    wait_fraction: float = 0.20
    window: float = 45.0
    feasibility_buffer: float = 3.0
    include_return_legs: bool = True

    def __post_init__(self):
        for name in ("travel_cost", "late_cost", "crowd_fee",
                     "capacity_weight", "window", "feasibility_buffer"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.wait_fraction < 1.0:
            raise ValueError("wait_fraction must be in [0, 1)")


@dataclass(frozen=True)
class Event:
    """One line of the replay/audit log."""

    kind: str          # appear | depart | pickup | deliver | wait | expire
    epoch: int
    time: float        # exact event time (departures: epoch; arrivals: real)
    vehicle: int
    request: int       # -1 when not request-related
    x: float
    y: float
    minutes: float     # leg travel / delay / planned wait, by kind
    cost: float        # cost delta booked with this event

    def to_line(self) -> str:
        return (f"{self.kind}\t{self.epoch}\t{self.time!r}\t{self.vehicle}\t"
                f"{self.request}\t{self.x!r}\t{self.y!r}\t{self.minutes!r}\t"
                f"{self.cost!r}")

    @classmethod
    def from_line(cls, line: str) -> "Event":
        k, ep, tm, v, r, x, y, mn, c = line.rstrip("\n").split("\t")
        return cls(k, int(ep), float(tm), int(v), int(r), float(x), float(y),
                   float(mn), float(c))


@dataclass
class KpiReport:
    """Per-day totals.  max_decide_s is wall-clock diagnostics and is kept
    out of the serialized row so result files stay bit-identical across
    repeated runs."""

    cls: str = ""
    level: str = ""
    policy: str = ""
    seed: int = 0
    n_requests: int = 0
    total_cost: float = 0.0
    routing_cost: float = 0.0
    lateness_charge: float = 0.0
    delayed_requests: int = 0
    total_delay: float = 0.0
    crowd_served: int = 0
    dedicated_served: int = 0
    epochs: int = 0
    max_decide_s: float = 0.0

    COLUMNS = ("cls", "level", "policy", "seed", "n_requests", "total_cost",
               "routing_cost", "lateness_charge", "delayed_requests",
               "total_delay", "crowd_served", "dedicated_served", "epochs")

    def to_row(self) -> str:
        out = []
        for c in self.COLUMNS:
            v = getattr(self, c)
            out.append(repr(v) if isinstance(v, float) else str(v))
        return "\t".join(out)

    @classmethod
    def from_row(cls, row: str) -> "KpiReport":
        parts = row.rstrip("\n").split("\t")
        if len(parts) != len(cls.COLUMNS):
            raise ValueError(
                f"KPI row needs {len(cls.COLUMNS)} fields, got {len(parts)}")
        proto = cls()
        kwargs = {name: type(getattr(proto, name))(p)
                  for name, p in zip(cls.COLUMNS, parts)}
        return cls(**kwargs)


class VehicleState:
    """Dynamic state of one active vehicle.

    stops[0] is the current location (or destination while en route);
    arrive_time is the arrival at stops[0]; depart_plan the planned departure
    from it (nan when no wait is scheduled)."""

    __slots__ = ("spec", "stops", "arrive_time", "depart_plan", "arrived",
                 "just_arrived", "served")

    def __init__(self, spec: VehicleSpec, t: float):
        self.spec = spec
        self.stops: list[Stop] = [point_stop(*spec.start)]
        self.arrive_time = float(t)
        self.depart_plan = math.nan
        self.arrived = True
        self.just_arrived = True
        self.served = 0

    @property
    def id(self) -> int:
        return self.spec.id

    @property
    def is_crowd(self) -> bool:
        return self.spec.is_crowd

    @property
    def leave_by(self) -> float:
        return self.spec.leave_by

    @property
    def end(self) -> tuple[float, float]:
        return self.spec.end

    def second_stop(self) -> Stop | None:
        return self.stops[1] if len(self.stops) > 1 else None

    def position(self) -> tuple[float, float]:
        return self.stops[0].x, self.stops[0].y

    def heading_home(self) -> bool:
        return self.stops[0].kind == KIND_ENDPOINT

    def at_end(self) -> bool:
        return self.arrived and self.position() == self.end


class SimState:
    """Pre-decision state handed to policies (read-only by contract)."""

    def __init__(self, instance: Instance, table: RequestTable):
        self.instance = instance
        self.table = table
        self.t = 0
        n = table.n
        self.status = np.full(n, PENDING, dtype=np.int8)
        self.assigned = np.full(n, -1, dtype=np.int32)
        self.delivered_time = np.full(n, math.nan)
        self.vehicles: dict[int, VehicleState] = {}
        self.delivered_count = 0

    def active_vehicles(self) -> list[VehicleState]:
        return [self.vehicles[i] for i in sorted(self.vehicles)]

    def slots_with_status(self, status: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.status == status)]

    def new_slots(self) -> list[int]:
        return self.slots_with_status(NEW)

    def outstanding_slots(self) -> list[int]:
        return self.slots_with_status(OUTSTANDING)

    def window_slots(self, window: float) -> list[int]:
        """Outstanding requests whose ready time is within the lookahead."""
        ready = self.table.ready
        return [s for s in self.outstanding_slots()
                if ready[s] - self.t <= window]


def wait_time(vehicle: VehicleState, t: float, config: CostConfig,
              model: TravelTimeModel, table: RequestTable) -> float:
    """Planned departure for an idle vehicle whose next stop is a pickup not
    yet reachable at its ready time: the larger of the strategic wait (a
    fraction of the remaining availability) and the operational slack."""
    nxt = vehicle.second_stop()
    tau = model.travel_time(vehicle.position(), (nxt.x, nxt.y), t)
    slack = table.ready[nxt.req] - t - tau
    strategic = config.wait_fraction * (vehicle.leave_by - t)
    return t + max(strategic, slack)


class Simulator:
    """Single-day replay: exogenous streams are materialized from the
    instance up front, so runs are deterministic and policies can be compared
    on identical sample paths."""

    def __init__(self, instance: Instance, config: CostConfig | None = None,
                 model: TravelTimeModel | None = None):
        instance.validate()
        self.instance = instance
        self.config = config or CostConfig()
        self.model = model or default_model()
        self.table = RequestTable(instance.requests)
        self.arrivals_at: dict[int, list[int]] = {}
        for r in instance.requests:
            self.arrivals_at.setdefault(math.ceil(r.arrival), []).append(r.id)
        self.appearances_at: dict[int, list[VehicleSpec]] = {}
        for v in instance.fleet:
            if v.kind == "dedicated":
                continue
            self.appearances_at.setdefault(math.ceil(v.appear), []).append(v)

    # -- public API --------------------------------------------------------

    def run(self, policy, seed: int = 0):
        """Simulate one day under `policy`; returns (KpiReport, events)."""
        cfg = self.config
        state = SimState(self.instance, self.table)
        self.events: list[Event] = []
        self.travel_minutes = 0.0
        self.total_delay = 0.0
        self.delayed = 0
        self.crowd_served = 0
        self.dedicated_served = 0
        self._just_delivered: list[int] = []
        for spec in self.instance.fleet:
            if spec.kind == "dedicated":
                state.vehicles[spec.id] = VehicleState(spec, 0.0)
                self._log("appear", 0, 0.0, spec.id, -1, spec.start, 0.0, 0.0)
        for slot in self.arrivals_at.get(0, []):
            state.status[slot] = NEW

        policy.start_run(self, seed)
        max_decide = 0.0
        t = 0
        guard = int(self.instance.hard_end + 600)
        while True:
            state.t = t
            self._settle_arrivals(state, t)
            t0 = _time.perf_counter()
            action = policy.decide(state)
            max_decide = max(max_decide, _time.perf_counter() - t0)
            self._apply_action(state, t, action)
            if t >= self.instance.horizon and \
                    state.delivered_count == self.table.n:
                self._wrap_up(state, t)
                break
            self._advance(state, t)
            t += 1
            if t > guard:
                raise SimulationError("simulation failed to terminate")

        report = KpiReport(
            cls=self.instance.cls, level=self.instance.level,
            policy=getattr(policy, "name", type(policy).__name__),
            seed=seed, n_requests=self.table.n,
            routing_cost=cfg.travel_cost * self.travel_minutes
            + cfg.crowd_fee * self.crowd_served,
            lateness_charge=cfg.late_cost * self.total_delay,
            delayed_requests=self.delayed, total_delay=self.total_delay,
            crowd_served=self.crowd_served,
            dedicated_served=self.dedicated_served,
            epochs=t + 1, max_decide_s=max_decide)
        report.total_cost = report.routing_cost + report.lateness_charge
        return report, self.events

    # -- internals ---------------------------------------------------------

    def _log(self, kind, epoch, tm, veh, req, xy, minutes, cost):
        self.events.append(Event(kind, epoch, float(tm), veh, req,
                                 float(xy[0]), float(xy[1]), float(minutes),
                                 float(cost)))

    def _settle_arrivals(self, state: SimState, t: int) -> None:
        """Process arrivals due by epoch t: the vehicle is now at stops[0];
        a delivery there completes (timestamped with the exact arrival)."""
        for veh in state.active_vehicles():
            if veh.arrived or veh.arrive_time > t:
                continue
            self._settle_one(state, veh, t)

    def _settle_one(self, state: SimState, veh: VehicleState,
                    epoch: int) -> None:
        veh.arrived = True
        veh.just_arrived = True
        veh.depart_plan = math.nan
        head = veh.stops[0]
        if head.kind == KIND_DELIVERY:
            self._complete_delivery(state, veh, head, epoch)

    def _complete_delivery(self, state, veh, head, epoch):
        slot = head.req
        if state.status[slot] != IN_PROCESS or state.assigned[slot] != veh.id:
            raise SimulationError(
                f"delivery of request {slot} by vehicle {veh.id} in an "
                f"inconsistent state")
        state.status[slot] = DELIVERED
        state.delivered_time[slot] = veh.arrive_time
        state.delivered_count += 1
        delay = max(0.0, veh.arrive_time - self.table.deadline[slot])
        self._log("deliver", epoch, veh.arrive_time, veh.id, slot,
                  (head.x, head.y), delay, 0.0)

    def _apply_action(self, state: SimState, t: int, action) -> None:
        """Validate and install the new route plans, then run the departure
        scheduler over vehicles in id order.

        Within the epoch, continuations of an unchanged plan execute at their
        exact times: a vehicle arriving at f departs its next leg at f, and a
        planned departure w fires at w, so execution follows the planned
        continuous timing.  Only redirections (route changed by this epoch's
        action) take effect at the decision epoch itself."""
        action = action or {}
        prev_plan = {v.id: list(v.stops) for v in state.active_vehicles()}
        self._validate_action(state, t, action)
        for vid, stops in action.items():
            state.vehicles[vid].stops = list(stops)
        # newly routed requests become outstanding; outstanding may move
        for veh in state.active_vehicles():
            for s in veh.stops[1:]:
                if s.kind == KIND_PICKUP:
                    if state.status[s.req] == NEW:
                        state.status[s.req] = OUTSTANDING
                    state.assigned[s.req] = veh.id
        if np.any(state.status == NEW):
            bad = state.slots_with_status(NEW)
            raise SimulationError(f"policy left new requests {bad} unrouted")

        # any plan change re-triggers scheduling (a stale wait, sized for the
        # old plan, must not carry over to a longer one)
        redirected = {v.id: prev_plan.get(v.id) != v.stops
                      for v in state.active_vehicles()}
        rounds = 0
        progress = True
        while progress:
            progress = False
            rounds += 1
            if rounds > 100_000:
                raise SimulationError("departure scheduler failed to settle")
            for veh in state.active_vehicles():
                if not veh.arrived:
                    if veh.arrive_time > t:
                        continue
                    self._settle_one(state, veh, t)
                    progress = True
                nxt = veh.second_stop()
                if nxt is None:
                    veh.just_arrived = False
                    redirected[veh.id] = False
                    continue
                trig_red = redirected.get(veh.id, False)
                trig_arr = veh.just_arrived
                trig_due = (not math.isnan(veh.depart_plan)) \
                    and veh.depart_plan <= t
                if not (trig_red or trig_arr or trig_due):
                    continue
                if trig_red:
                    base = float(t)
                elif trig_arr:
                    base = max(veh.arrive_time, 0.0)
                else:
                    base = max(veh.depart_plan, veh.arrive_time)
                veh.just_arrived = False
                redirected[veh.id] = False
                tau = self.model.travel_time(veh.position(), (nxt.x, nxt.y),
                                             base)
                ready = (self.table.ready[nxt.req]
                         if nxt.kind == KIND_PICKUP else -math.inf)
                if base + tau >= ready - 1e-9:
                    self._depart(state, veh, base, tau)
                else:
                    self._set_wait(state, veh, base, t)
                progress = True
        for veh in state.active_vehicles():
            if veh.arrived and veh.second_stop() is None:
                self._maybe_force_endpoint(state, veh, t)

    def _validate_action(self, state: SimState, t: int, action) -> None:
        seen: dict[int, int] = {}
        for vid, stops in action.items():
            veh = state.vehicles.get(vid)
            if veh is None:
                raise SimulationError(f"action for unknown vehicle {vid}")
            if not stops or stops[0] != veh.stops[0]:
                raise SimulationError(
                    f"vehicle {vid}: the current stop is immutable")
            opens: set[int] = set()
            if stops[0].kind == KIND_PICKUP:
                opens.add(stops[0].req)
            for s in stops[1:]:
                if s.kind == KIND_PICKUP:
                    if s.req in seen or s.req in opens:
                        raise SimulationError(
                            f"request {s.req} picked up twice")
                    opens.add(s.req)
                    seen[s.req] = vid
                elif s.kind == KIND_DELIVERY:
                    st = state.status[s.req]
                    if st == IN_PROCESS:
                        if state.assigned[s.req] != vid:
                            raise SimulationError(
                                f"in-process request {s.req} moved to "
                                f"vehicle {vid}")
                        opens.discard(s.req)
                    elif s.req not in opens:
                        raise SimulationError(
                            f"request {s.req}: delivery precedes pickup")
                    else:
                        opens.discard(s.req)
            if opens:
                raise SimulationError(
                    f"vehicle {vid}: pickups {sorted(opens)} lack a "
                    f"delivery on the same route")
        # crowdshipper feasibility of the changed plans
        for vid, stops in action.items():
            veh = state.vehicles[vid]
            if list(stops) == veh.stops or not veh.is_crowd:
                continue
            start = max(veh.arrive_time, float(t))
            _, _, tf = route_metrics(stops, start, veh.end, self.table,
                                     self.model)
            if tf > veh.leave_by:
                raise SimulationError(
                    f"vehicle {vid}: plan completes at {tf:.2f} after "
                    f"availability end {veh.leave_by}")

    def _depart(self, state: SimState, veh: VehicleState, dep: float,
                tau: float) -> None:
        cfg = self.config
        epoch = state.t
        nxt = veh.stops[1]
        arrival = dep + tau
        charge = cfg.travel_cost * tau
        if nxt.kind == KIND_ENDPOINT and not cfg.include_return_legs:
            charge = 0.0
        else:
            self.travel_minutes += tau
        self._log("depart", epoch, dep, veh.id, nxt.req, (nxt.x, nxt.y),
                  tau, charge)
        if nxt.kind == KIND_PICKUP:
            slot = nxt.req
            if state.status[slot] != OUTSTANDING:
                raise SimulationError(
                    f"vehicle {veh.id} departed toward request {slot} "
                    f"which is not outstanding")
            state.status[slot] = IN_PROCESS
            state.assigned[slot] = veh.id
            veh.served += 1
            fee = cfg.crowd_fee if veh.is_crowd else 0.0
            if veh.is_crowd:
                self.crowd_served += 1
            else:
                self.dedicated_served += 1
            self._log("pickup", epoch, dep, veh.id, slot, (nxt.x, nxt.y),
                      0.0, fee)
        elif nxt.kind == KIND_DELIVERY:
            delay = max(0.0, arrival - self.table.deadline[nxt.req])
            if delay > 1e-9:
                self.delayed += 1
                self.total_delay += delay
                self._log("late", epoch, arrival, veh.id, nxt.req,
                          (nxt.x, nxt.y), delay, cfg.late_cost * delay)
        veh.stops.pop(0)
        veh.arrive_time = arrival
        veh.depart_plan = math.nan
        veh.arrived = False

    def _set_wait(self, state: SimState, veh: VehicleState, base: float,
                  epoch: int) -> None:
        """Plan the departure of an early vehicle: the literal wait rule,
        capped only so the committed plan stays completable within the
        availability window.  A wait that would make deliveries late is left
        to the policies, which evaluate waiting vehicles from their planned
        departure and reassign the affected requests."""
        w_raw = wait_time(veh, base, self.config, self.model, self.table)
        nxt = veh.stops[1]
        # exact minimal wait: depart so the arrival lands on the ready time
        w_ops = max(base, self.model.latest_departure(
            veh.position(), (nxt.x, nxt.y), self.table.ready[nxt.req]))
        w = max(w_raw, w_ops)
        if w_raw > w_ops + 1e-9 and not self._wait_ok(veh, w_raw):
            lo, hi = w_ops, w_raw
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if self._wait_ok(veh, mid):
                    lo = mid
                else:
                    hi = mid
            w = lo
        veh.depart_plan = w
        self._log("wait", epoch, base, veh.id, nxt.req, veh.position(),
                  w - base, 0.0)

    def _wait_ok(self, veh: VehicleState, w: float) -> bool:
        cap = veh.leave_by - (self.config.feasibility_buffer
                              if veh.is_crowd else 0.0)
        _, _, tf = route_metrics(veh.stops, w, veh.end, self.table,
                                 self.model)
        return tf <= cap

    def _maybe_force_endpoint(self, state: SimState, veh: VehicleState,
                              t: int) -> None:
        """An idle crowdshipper that has served must head home at the last
        moment from which its end location is still reachable on time.  The
        departure uses the exact back-solved time (possibly between epochs):
        by the next epoch the vehicle could not accept work anyway."""
        if not veh.is_crowd or veh.served == 0 or veh.at_end() \
                or veh.heading_home():
            return
        pos = veh.position()
        last_safe = self.model.latest_departure(pos, veh.end, veh.leave_by)
        if last_safe >= t + 1.0:
            return
        dep = max(veh.arrive_time, last_safe)
        if dep > last_safe + 1e-9:
            raise SimulationError(
                f"vehicle {veh.id} can no longer reach its end location "
                f"by {veh.leave_by}")
        tau = self.model.travel_time(pos, veh.end, dep)
        veh.stops.append(endpoint_stop(*veh.end))
        self._depart(state, veh, dep, tau)

    def _advance(self, state: SimState, t: int) -> None:
        """Stochastic transition to epoch t+1: new requests, crowdshipper
        appearances, availability expiry."""
        nt = t + 1
        for slot in self.arrivals_at.get(nt, []):
            state.status[slot] = NEW
        for spec in self.appearances_at.get(nt, []):
            state.vehicles[spec.id] = VehicleState(spec, float(nt))
            self._log("appear", nt, float(nt), spec.id, -1, spec.start,
                      0.0, 0.0)
        for veh in state.active_vehicles():
            if veh.leave_by > nt:
                continue
            if not veh.arrived:
                if veh.arrive_time > veh.leave_by + 1e-6:
                    raise SimulationError(
                        f"vehicle {veh.id} still traveling at availability "
                        f"end ({veh.arrive_time:.2f} > {veh.leave_by})")
                veh.arrived = True
                if veh.stops[0].kind == KIND_DELIVERY:
                    self._complete_delivery(state, veh, veh.stops[0], nt)
            if any(s.kind in (KIND_PICKUP, KIND_DELIVERY)
                   for s in veh.stops):
                raise SimulationError(
                    f"vehicle {veh.id} expired with unfinished stops")
            self._log("expire", nt, float(nt), veh.id, -1, veh.position(),
                      0.0, 0.0)
            del state.vehicles[veh.id]

    def _wrap_up(self, state: SimState, t: int) -> None:
        """All requests delivered and no more can arrive: materialize the
        remaining end-location legs (earlier departures can only arrive
        earlier, so availability feasibility is preserved)."""
        for veh in state.active_vehicles():
            if not veh.arrived:
                continue  # already flying home
            if veh.is_crowd:
                if veh.served == 0 or veh.at_end():
                    continue
            elif veh.position() == veh.end:
                continue
            tau = self.model.travel_time(veh.position(), veh.end, float(t))
            if veh.is_crowd and t + tau > veh.leave_by:
                raise SimulationError(
                    f"vehicle {veh.id} cannot reach its end location in "
                    f"time at day end")
            veh.stops.append(endpoint_stop(*veh.end))
            self._depart(state, veh, t, tau)


def run_day(instance: Instance, policy, config: CostConfig | None = None,
            seed: int = 0, model: TravelTimeModel | None = None):
    """Convenience wrapper: simulate one day and return (KpiReport, events)."""
    sim = Simulator(instance, config=config, model=model)
    return sim.run(policy, seed=seed)
