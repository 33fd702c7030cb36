"""Route plans and their evaluation, shared by the simulation engine and the
dispatch policies.

A route is a sequence of stops; stops[0] is the anchor -- the vehicle's
current position, or its destination while a leg is underway -- and is never
moved by a policy.  Planning timing is continuous: each leg is evaluated at
the earliest feasible departure, and when the next stop is a pickup that is
not ready yet the departure is back-solved so the arrival lands exactly on
the ready time.  Completion times always include the final leg to the
vehicle's required end location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._kernels import (
    KIND_DELIVERY,
    KIND_ENDPOINT,
    KIND_PICKUP,
    KIND_POINT,
    _route_metrics,
    _scan_insertion,
)
from .instances import Request
from .traveltime import TravelTimeModel


class Stop(NamedTuple):
    kind: int
    req: int          # request slot, -1 for point/endpoint stops
    x: float
    y: float


def point_stop(x: float, y: float) -> Stop:
    return Stop(KIND_POINT, -1, float(x), float(y))


def endpoint_stop(x: float, y: float) -> Stop:
    return Stop(KIND_ENDPOINT, -1, float(x), float(y))


def pickup_stop(slot: int, request: Request) -> Stop:
    return Stop(KIND_PICKUP, slot, request.origin[0], request.origin[1])


def delivery_stop(slot: int, request: Request) -> Stop:
    return Stop(KIND_DELIVERY, slot, request.destination[0],
                request.destination[1])


class RequestTable:
    """Request attributes packed for the kernels, indexed by slot (= id)."""

    def __init__(self, requests: Sequence[Request]):
        n = len(requests)
        self.ox = np.empty(n)
        self.oy = np.empty(n)
        self.dx = np.empty(n)
        self.dy = np.empty(n)
        self.ready = np.empty(n)
        self.deadline = np.empty(n)
        for i, r in enumerate(requests):
            if r.id != i:
                raise ValueError("request ids must be dense and ordered")
            self.ox[i], self.oy[i] = r.origin
            self.dx[i], self.dy[i] = r.destination
            self.ready[i] = r.ready
            self.deadline[i] = r.deadline
        self.n = n


def pack_route(stops: Sequence[Stop]):
    n = len(stops)
    kinds = np.empty(n, dtype=np.int8)
    reqs = np.empty(n, dtype=np.int32)
    xs = np.empty(n, dtype=np.float64)
    ys = np.empty(n, dtype=np.float64)
    for i, s in enumerate(stops):
        kinds[i] = s.kind
        reqs[i] = s.req
        xs[i] = s.x
        ys[i] = s.y
    return kinds, reqs, xs, ys


def route_metrics(stops: Sequence[Stop], start: float,
                  end: tuple[float, float], table: RequestTable,
                  model: TravelTimeModel,
                  avg: bool = False) -> tuple[float, float, float]:
    """(travel minutes, lateness minutes, completion time) of a stop
    sequence departed at `start`, including the leg to `end`."""
    kinds, reqs, xs, ys = pack_route(stops)
    travel, late, tf = _route_metrics(
        kinds, reqs, xs, ys, len(stops), start, end[0], end[1],
        table.ready, table.deadline, *model.kernel_args(avg))
    return float(travel), float(late), float(tf)


@dataclass(frozen=True)
class DeltaResult:
    """Effect of adding one request to one vehicle's plan."""

    travel_delta: float
    late_delta: float
    completion: float                 # route end incl. the endpoint leg
    stops: tuple[Stop, ...] | None    # resulting stop sequence, None if none

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.completion)


INFEASIBLE = DeltaResult(math.inf, math.inf, math.inf, None)


def insert_pair(stops: Sequence[Stop], p: int, q: int, slot: int,
                table: RequestTable) -> tuple[Stop, ...]:
    """Insert the pickup before original index p and the delivery before
    original index q (q >= p puts the delivery right after the pickup)."""
    o = Stop(KIND_PICKUP, slot, table.ox[slot], table.oy[slot])
    d = Stop(KIND_DELIVERY, slot, table.dx[slot], table.dy[slot])
    out = list(stops)
    out.insert(p, o)
    out.insert(q + 1, d)
    return tuple(out)


def scan_insertion(stops: Sequence[Stop], slot: int, start: float,
                   end: tuple[float, float], b_cap: float,
                   table: RequestTable, model: TravelTimeModel,
                   mu1: float, mu2: float,
                   p_limit: int | None = None, q_span: int | None = None,
                   avg: bool = False):
    """Best feasible insertion pair; returns (found, p, q, travel, late, tf)
    for the whole resulting route."""
    kinds, reqs, xs, ys = pack_route(stops)
    n = len(stops)
    if p_limit is None:
        p_limit = n
    if q_span is None:
        q_span = n + 1
    out = _scan_insertion(
        kinds, reqs, xs, ys, n, start, end[0], end[1], b_cap,
        slot, table.ox[slot], table.oy[slot], table.dx[slot], table.dy[slot],
        table.ready, table.deadline, mu1, mu2, p_limit, q_span,
        *model.kernel_args(avg))
    return out


def request_stops(stops: Sequence[Stop], slot: int) -> list[int]:
    """Positions of a request's stops within a route."""
    return [i for i, s in enumerate(stops) if s.req == slot]


def strip_requests(stops: Sequence[Stop],
                   slots: set[int]) -> tuple[Stop, ...]:
    """Route without the stops of the given requests (anchor always kept)."""
    return tuple(s for i, s in enumerate(stops)
                 if i == 0 or s.req < 0 or s.req not in slots)
