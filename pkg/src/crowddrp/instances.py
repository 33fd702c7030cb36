"""Daily problem instances: request streams and the delivery fleet.

Four request patterns at three demand levels:

* uo  -- homogeneous Poisson arrivals over a 7-hour day, one request class
         (ready +10 min, soft deadline +40 min), 110 pickup points.
* nm  -- nonhomogeneous arrivals over a 10-hour day, 50% short-deadline
         (+20/+60) and 50% long-deadline (+40/+120) requests, 248 pickups.
* mto -- nm with long-deadline customers placing 1/2/3 simultaneous requests
         (p = 0.90/0.075/0.025) that share the delivery point; customer
         events are thinned by the mean bundle size so daily totals match nm.
* otm -- nm with long-deadline requests grouped around a shared pickup:
         bundle sizes follow the per-request distribution in OTM_BUNDLE_P,
         followers arrive within 30 minutes of the trigger and deliver within
         2.414 km of each other.

Pickup/delivery pools are fixed per family (uo vs nm/mto/otm) so every daily
replication shares the same candidate locations.  All generation is pure
given (class, level, seed).  The fleet is fixed per class: dedicated vehicles
plus the crowdshipper schedule in CROWDSHIPPER_TABLE (lat/long converted to
planar km about the data centroid at load).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .traveltime import DEFAULT_BOX_KM, Geography

CLASSES = ("uo", "nm", "mto", "otm")
LEVELS = ("low", "medium", "high")

DAY_MINUTES = {"uo": 420.0, "nm": 600.0, "mto": 600.0, "otm": 600.0}
HARD_END_EXTRA = 600.0

# hourly arrival rates
UO_RATES = {"low": 25.71, "medium": 34.29, "high": 42.86}
NM_SHORT_RATES = {
    "low": (3.75, 11.25, 18.75, 15.00, 11.25, 3.75, 3.75, 11.25, 18.75, 15.00),
    "medium": (5.0, 15.0, 25.0, 20.0, 15.0, 5.0, 5.0, 15.0, 25.0, 20.0),
    "high": (6.25, 18.75, 31.25, 25.00, 18.75, 6.25, 6.25, 18.75, 31.25, 25.00),
}
NM_LONG_RATE = {"low": 11.25, "medium": 15.0, "high": 18.75}

# ready / deadline offsets in minutes from request arrival
UO_OFFSETS = (10.0, 40.0)
NM_SHORT_OFFSETS = (20.0, 60.0)
NM_LONG_OFFSETS = (40.0, 120.0)

# many-to-one bundles: size 1..3 per long-deadline customer event
MTO_BUNDLE_P = (0.90, 0.075, 0.025)
MTO_MEAN_SIZE = sum((i + 1) * p for i, p in enumerate(MTO_BUNDLE_P))  # 1.125

# one-to-many bundles: probability that a long-deadline request belongs to a
# bundle of size n (n = 1..6)
OTM_BUNDLE_P = (0.782368, 0.192354, 0.023308, 0.001856, 0.000109, 0.000005)
OTM_WINDOW_MIN = 30.0
OTM_MAX_SPREAD_KM = 2.414  # max pairwise delivery distance inside a bundle

PICKUP_POOL_SIZE = {"uo": 110, "nm": 248}
DELIVERY_POOL_SIZE = 32_000

UO_DEDICATED = 3
UO_CROWDSHIPPERS = 22
NM_DEDICATED = 5
NM_CROWDSHIPPERS = 28

_POOL_SEED = 971_203
_STREAM_SEED = 402_717

DEDICATED = "dedicated"
CROWDSHIPPER = "crowdshipper"

# crowdshipper availability schedule: (appear, leave-by, origin lat/long,
# destination lat/long); shared by every daily replication
CROWDSHIPPER_TABLE = (
    (1, 120, 41.63562541, -91.51196350, 41.65909800, -91.55525400),
    (60, 180, 41.63562541, -91.51196354, 41.69834515, -91.58892941),
    (70, 310, 41.64128623, -91.56508335, 41.65806850, -91.53102480),
    (90, 270, 41.64885944, -91.55320966, 41.64506561, -91.52355511),
    (115, 295, 41.71443676, -91.58289955, 41.66152363, -91.47081150),
    (115, 355, 41.67312935, -91.57551051, 41.72164463, -91.59286545),
    (130, 250, 41.65001141, -91.46857959, 41.72164463, -91.59286545),
    (135, 315, 41.63917026, -91.51290389, 41.76164463, -91.69286545),
    (140, 320, 41.66699952, -91.48110701, 41.63562541, -91.51196354),
    (145, 385, 41.68153099, -91.57331503, 41.64128623, -91.56508335),
    (160, 340, 41.67950253, -91.57390402, 41.71443676, -91.58289955),
    (170, 350, 41.63511630, -91.51468220, 41.67312935, -91.57551051),
    (190, 430, 41.65263384, -91.58594751, 41.65001141, -91.46857959),
    (220, 400, 41.65345535, -91.52692116, 41.66699952, -91.48110701),
    (250, 370, 41.64186230, -91.56777907, 41.63917026, -91.51290389),
    (255, 495, 41.65787087, -91.46407211, 41.64885944, -91.55320966),
    (300, 420, 41.70314675, -91.60940027, 41.63583000, -91.51710000),
    (310, 390, 41.69834515, -91.58892941, 41.66309000, -91.57927000),
    (330, 450, 41.69986134, -91.56992240, 41.65371000, -91.49574000),
    (360, 580, 41.65778645, -91.56992240, 41.65529000, -91.53254000),
    (375, 535, 41.69835544, -91.58876611, 41.65430000, -91.54275000),
    (390, 540, 41.70713817, -91.58440115, 41.66103000, -91.54609000),
    (420, 620, 41.61927800, -91.53541100, 41.65157319, -91.48818436),
    (480, 630, 41.64975200, -91.51395990, 41.66605613, -91.51510378),
    (525, 660, 41.66704200, -91.53342870, 41.68642773, -91.51032070),
    (555, 705, 41.64885944, -91.55320966, 41.63202532, -91.50501068),
    (570, 720, 41.64199910, -91.52728740, 41.69894765, -91.50420625),
    (590, 750, 41.65911430, -91.54442830, 41.64894115, -91.58800303),
)

KM_PER_DEG = 6371.0088 * math.pi / 180.0


class InstanceError(ValueError):
    """Invalid instance data or file."""


@dataclass(frozen=True)
class Request:
    """One pickup-and-delivery job with a ready time and a soft deadline."""

    id: int
    origin: tuple[float, float]
    destination: tuple[float, float]
    arrival: float
    ready: float
    deadline: float
    bundle: int | None = None

    def validate(self) -> None:
        if not self.arrival <= self.ready < self.deadline:
            raise InstanceError(
                f"request {self.id}: need arrival <= ready < deadline, got "
                f"{self.arrival}, {self.ready}, {self.deadline}")


@dataclass(frozen=True)
class VehicleSpec:
    """Availability window and endpoints of one vehicle."""

    id: int
    kind: str
    appear: float
    leave_by: float
    start: tuple[float, float]
    end: tuple[float, float]

    @property
    def is_crowd(self) -> bool:
        return self.kind == CROWDSHIPPER

    def validate(self) -> None:
        if self.kind not in (DEDICATED, CROWDSHIPPER):
            raise InstanceError(f"vehicle {self.id}: unknown kind {self.kind!r}")
        if not self.appear < self.leave_by:
            raise InstanceError(f"vehicle {self.id}: empty availability window")
        if self.is_crowd and not 60.0 <= self.leave_by - self.appear <= 240.0:
            raise InstanceError(
                f"vehicle {self.id}: crowdshipper window must span 1-4 hours")


@dataclass
class Instance:
    """One operating day: request stream, fleet and horizon."""

    cls: str
    level: str
    seed: int
    horizon: float          # last request arrival time T
    hard_end: float         # dedicated-shift end, > T
    depot: tuple[float, float]
    requests: list[Request] = field(default_factory=list)
    fleet: list[VehicleSpec] = field(default_factory=list)

    def validate(self) -> None:
        if not any(v.kind == DEDICATED for v in self.fleet):
            raise InstanceError("fleet needs at least one dedicated vehicle")
        if self.hard_end <= self.horizon:
            raise InstanceError("hard_end must exceed the horizon")
        last = -math.inf
        for r in self.requests:
            r.validate()
            if r.arrival > self.horizon:
                raise InstanceError(
                    f"request {r.id}: arrival {r.arrival} past horizon")
            if r.arrival < last:
                raise InstanceError("requests must be sorted by arrival")
            last = r.arrival
        for v in self.fleet:
            v.validate()

    @property
    def n_requests(self) -> int:
        return len(self.requests)


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

def latlon_to_plane(points: np.ndarray, geography: Geography) -> np.ndarray:
    """Equirectangular projection about the data centroid, translated to the
    box center and clamped to the box."""
    lat0 = points[:, 0].mean()
    lon0 = points[:, 1].mean()
    x = (points[:, 1] - lon0) * math.cos(math.radians(lat0)) * KM_PER_DEG
    y = (points[:, 0] - lat0) * KM_PER_DEG
    cx, cy = geography.center
    out = np.column_stack([x + cx, y + cy])
    out[:, 0] = np.clip(out[:, 0], 0.0, geography.width_km)
    out[:, 1] = np.clip(out[:, 1], 0.0, geography.height_km)
    return out


def _family(cls: str) -> str:
    return "uo" if cls == "uo" else "nm"


@lru_cache(maxsize=None)
def location_pools(family: str) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (pickups, deliveries) pools for an instance family."""
    w, h = DEFAULT_BOX_KM
    rng = np.random.default_rng([_POOL_SEED, 0 if family == "uo" else 1])
    pickups = rng.uniform([0.0, 0.0], [w, h],
                          size=(PICKUP_POOL_SIZE[family], 2))
    deliveries = rng.uniform([0.0, 0.0], [w, h], size=(DELIVERY_POOL_SIZE, 2))
    return pickups, deliveries


# ---------------------------------------------------------------------------
# fleet
# ---------------------------------------------------------------------------

def build_fleet(instance_class: str) -> list[VehicleSpec]:
    """Dedicated vehicles plus the fixed crowdshipper schedule."""
    if instance_class not in CLASSES:
        raise InstanceError(f"unknown instance class {instance_class!r}")
    geography = Geography()
    depot = geography.center
    t_hat = DAY_MINUTES[instance_class] + HARD_END_EXTRA
    if instance_class == "uo":
        n_ded, n_crowd = UO_DEDICATED, UO_CROWDSHIPPERS
    else:
        n_ded, n_crowd = NM_DEDICATED, NM_CROWDSHIPPERS
    rows = CROWDSHIPPER_TABLE[:n_crowd]
    pts = np.array([[r[2], r[3]] for r in CROWDSHIPPER_TABLE]
                   + [[r[4], r[5]] for r in CROWDSHIPPER_TABLE])
    plane = latlon_to_plane(pts, geography)
    n_all = len(CROWDSHIPPER_TABLE)
    fleet = [VehicleSpec(i, DEDICATED, 0.0, t_hat, depot, depot)
             for i in range(n_ded)]
    for g, row in enumerate(rows):
        fleet.append(VehicleSpec(
            n_ded + g, CROWDSHIPPER, float(row[0]), float(row[1]),
            (float(plane[g, 0]), float(plane[g, 1])),
            (float(plane[n_all + g, 0]), float(plane[n_all + g, 1]))))
    return fleet


# ---------------------------------------------------------------------------
# request stream generation
# ---------------------------------------------------------------------------

def _stream_rng(level: str, seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(
        [_STREAM_SEED, LEVELS.index(level), int(seed), tag])


def _poisson_times(rng, rate_per_hour: float, hour: int) -> np.ndarray:
    n = rng.poisson(rate_per_hour)
    return np.sort(rng.uniform(hour * 60.0, (hour + 1) * 60.0, size=n))


def _short_stream(level: str, seed: int, n_pickups: int, n_deliveries: int):
    """Short-deadline requests (arrival, pickup index, delivery index),
    shared by nm/mto/otm for a given seed."""
    rng = _stream_rng(level, seed, 1)
    rows = []
    for h, rate in enumerate(NM_SHORT_RATES[level]):
        for t in _poisson_times(rng, rate, h):
            rows.append((float(t), int(rng.integers(n_pickups)),
                         int(rng.integers(n_deliveries))))
    return rows


def _finish(cls, level, seed, rows) -> Instance:
    """Sort raw request rows by arrival and assemble the instance."""
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    requests = [
        Request(i, origin=(ox, oy), destination=(dx, dy), arrival=t,
                ready=e, deadline=l, bundle=b)
        for i, (t, e, l, ox, oy, dx, dy, b) in enumerate(rows)]
    inst = Instance(cls=cls, level=level, seed=int(seed),
                    horizon=DAY_MINUTES[cls],
                    hard_end=DAY_MINUTES[cls] + HARD_END_EXTRA,
                    depot=Geography().center,
                    requests=requests, fleet=build_fleet(cls))
    inst.validate()
    return inst


def generate_uo(level: str, seed: int) -> Instance:
    """Homogeneous-arrival day with a single request class."""
    pickups, deliveries = location_pools("uo")
    rng = _stream_rng(level, seed, 0)
    rows = []
    for h in range(int(DAY_MINUTES["uo"] // 60)):
        for t in _poisson_times(rng, UO_RATES[level], h):
            o = pickups[rng.integers(len(pickups))]
            d = deliveries[rng.integers(len(deliveries))]
            rows.append((float(t), float(t) + UO_OFFSETS[0],
                         float(t) + UO_OFFSETS[1],
                         float(o[0]), float(o[1]), float(d[0]), float(d[1]),
                         None))
    return _finish("uo", level, seed, rows)


def _nm_short_rows(level, seed, pickups, deliveries):
    rows = []
    for t, oi, di in _short_stream(level, seed, len(pickups),
                                   len(deliveries)):
        o = pickups[oi]
        d = deliveries[di]
        rows.append((t, t + NM_SHORT_OFFSETS[0], t + NM_SHORT_OFFSETS[1],
                     float(o[0]), float(o[1]), float(d[0]), float(d[1]),
                     None))
    return rows


def _long_row(t, o, d, bundle):
    return (float(t), float(t) + NM_LONG_OFFSETS[0],
            float(t) + NM_LONG_OFFSETS[1],
            float(o[0]), float(o[1]), float(d[0]), float(d[1]), bundle)


def generate_nm(level: str, seed: int) -> Instance:
    """Nonstationary mixed day: 50% short- / 50% long-deadline requests."""
    pickups, deliveries = location_pools("nm")
    rng = _stream_rng(level, seed, 2)
    rows = _nm_short_rows(level, seed, pickups, deliveries)
    for h in range(10):
        for t in _poisson_times(rng, NM_LONG_RATE[level], h):
            o = pickups[rng.integers(len(pickups))]
            d = deliveries[rng.integers(len(deliveries))]
            rows.append(_long_row(t, o, d, None))
    return _finish("nm", level, seed, rows)


def generate_mto(level: str, seed: int) -> Instance:
    """Many-to-one day: long-deadline customers place 1-3 requests at once,
    sharing the delivery point, with distinct pickups."""
    pickups, deliveries = location_pools("nm")
    rng = _stream_rng(level, seed, 3)
    rows = _nm_short_rows(level, seed, pickups, deliveries)
    event_rate = NM_LONG_RATE[level] / MTO_MEAN_SIZE
    bundle = 0
    sizes = np.arange(1, len(MTO_BUNDLE_P) + 1)
    for h in range(10):
        for t in _poisson_times(rng, event_rate, h):
            n = int(rng.choice(sizes, p=MTO_BUNDLE_P))
            d = deliveries[rng.integers(len(deliveries))]
            picks = rng.choice(len(pickups), size=n, replace=False)
            for k in range(n):
                rows.append(_long_row(t, pickups[picks[k]], d, bundle))
            bundle += 1
    return _finish("mto", level, seed, rows)


def generate_otm(level: str, seed: int) -> Instance:
    """One-to-many day: long-deadline requests bundled around a shared
    pickup, arriving within 30 minutes, delivering within 2.414 km."""
    geography = Geography()
    pickups, deliveries = location_pools("nm")
    rng = _stream_rng(level, seed, 4)
    rows = _nm_short_rows(level, seed, pickups, deliveries)
    # bundle triggers are thinned so the per-request size distribution
    # matches OTM_BUNDLE_P and the expected daily totals match nm
    probs = np.array(OTM_BUNDLE_P)
    sizes = np.arange(1, len(probs) + 1)
    size_p = (probs / sizes)
    z = size_p.sum()
    size_p /= z
    trigger_rate = NM_LONG_RATE[level] * z
    radius = OTM_MAX_SPREAD_KM / 2.0
    horizon = DAY_MINUTES["otm"]
    bundle = 0
    for h in range(10):
        for t in _poisson_times(rng, trigger_rate, h):
            n = int(rng.choice(sizes, p=size_p))
            o = pickups[rng.integers(len(pickups))]
            d = deliveries[rng.integers(len(deliveries))]
            rows.append(_long_row(t, o, d, bundle))
            for _ in range(n - 1):
                ft = t + OTM_WINDOW_MIN * (1.0 - rng.random())
                ang = 2.0 * math.pi * rng.random()
                rad = radius * math.sqrt(rng.random())
                fx, fy = geography.clamp(d[0] + rad * math.cos(ang),
                                         d[1] + rad * math.sin(ang))
                if ft > horizon:
                    continue
                rows.append(_long_row(ft, o, (fx, fy), bundle))
            bundle += 1
    return _finish("otm", level, seed, rows)


_GENERATORS = {"uo": generate_uo, "nm": generate_nm,
               "mto": generate_mto, "otm": generate_otm}


def generate_instance(cls: str, level: str, seed: int) -> Instance:
    if cls not in CLASSES:
        raise InstanceError(f"unknown instance class {cls!r}")
    if level not in LEVELS:
        raise InstanceError(f"unknown demand level {level!r}")
    return _GENERATORS[cls](level, seed)


# ---------------------------------------------------------------------------
# file round-trip
# ---------------------------------------------------------------------------

FILE_VERSION = 1


def save_instance(instance: Instance, path) -> None:
    """Write the documented line-oriented instance format."""
    lines = [
        "# crowddrp instance",
        f"version\t{FILE_VERSION}",
        f"class\t{instance.cls}",
        f"level\t{instance.level}",
        f"seed\t{instance.seed}",
        f"T\t{instance.horizon!r}",
        f"T_hat\t{instance.hard_end!r}",
        f"depot\t{instance.depot[0]!r}\t{instance.depot[1]!r}",
        f"requests\t{len(instance.requests)}",
    ]
    for r in instance.requests:
        b = "-" if r.bundle is None else str(r.bundle)
        lines.append(
            f"{r.id}\t{b}\t{r.arrival!r}\t{r.ready!r}\t{r.deadline!r}\t"
            f"{r.origin[0]!r}\t{r.origin[1]!r}\t"
            f"{r.destination[0]!r}\t{r.destination[1]!r}")
    lines.append(f"vehicles\t{len(instance.fleet)}")
    for v in instance.fleet:
        lines.append(
            f"{v.id}\t{v.kind}\t{v.appear!r}\t{v.leave_by!r}\t"
            f"{v.start[0]!r}\t{v.start[1]!r}\t{v.end[0]!r}\t{v.end[1]!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class _Parser:
    def __init__(self, path):
        self.path = path
        with open(path) as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0

    def error(self, msg) -> InstanceError:
        return InstanceError(f"{self.path}:{self.pos}: {msg}")

    def next_line(self) -> list[str]:
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            self.pos += 1
            if line and not line.startswith("#"):
                return line.split("\t")
        raise self.error("unexpected end of file")

    def field(self, name: str) -> list[str]:
        parts = self.next_line()
        if parts[0] != name:
            raise self.error(f"expected {name!r}, found {parts[0]!r}")
        return parts[1:]

    def floats(self, parts, n, what) -> list[float]:
        if len(parts) != n:
            raise self.error(f"{what}: expected {n} fields, got {len(parts)}")
        try:
            return [float(p) for p in parts]
        except ValueError as exc:
            raise self.error(f"{what}: {exc}") from exc


def load_instance(path) -> Instance:
    """Parse an instance file; malformed input raises InstanceError with the
    offending line number."""
    p = _Parser(path)
    version = int(p.field("version")[0])
    if version != FILE_VERSION:
        raise p.error(f"unsupported file version {version}")
    cls = p.field("class")[0]
    level = p.field("level")[0]
    seed = int(p.field("seed")[0])
    horizon = float(p.field("T")[0])
    hard_end = float(p.field("T_hat")[0])
    depot = tuple(p.floats(p.field("depot"), 2, "depot"))
    n_req = int(p.field("requests")[0])
    requests = []
    for _ in range(n_req):
        parts = p.next_line()
        if len(parts) != 9:
            raise p.error(f"request row: expected 9 fields, got {len(parts)}")
        rid = int(parts[0])
        bundle = None if parts[1] == "-" else int(parts[1])
        vals = p.floats(parts[2:], 7, "request row")
        requests.append(Request(
            rid, origin=(vals[3], vals[4]), destination=(vals[5], vals[6]),
            arrival=vals[0], ready=vals[1], deadline=vals[2], bundle=bundle))
    n_veh = int(p.field("vehicles")[0])
    fleet = []
    for _ in range(n_veh):
        parts = p.next_line()
        if len(parts) != 8:
            raise p.error(f"vehicle row: expected 8 fields, got {len(parts)}")
        vid = int(parts[0])
        kind = parts[1]
        vals = p.floats(parts[2:], 6, "vehicle row")
        fleet.append(VehicleSpec(vid, kind, vals[0], vals[1],
                                 (vals[2], vals[3]), (vals[4], vals[5])))
    inst = Instance(cls=cls, level=level, seed=seed, horizon=horizon,
                    hard_end=hard_end, depot=depot,
                    requests=requests, fleet=fleet)
    try:
        inst.validate()
    except InstanceError as exc:
        raise InstanceError(f"{path}: {exc}") from exc
    return inst
