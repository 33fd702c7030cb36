"""Time- and region-dependent travel times from piecewise-constant speed
profiles on a rectangular region grid.

The operating area is a box tiled by an nx * ny grid of rectangular regions,
labelled row-major from the north-west corner.  Each region has one speed per
time period; travel that crosses regions uses the area-weighted average speed
of the regions intersected by the straight segment, and travel that crosses
period boundaries consumes each period at its own speed.  Travel past the
last period continues at the final period's speeds, so the evaluator is
defined for any horizon.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ._kernels import (
    _cell_index,
    _latest_departure,
    _od_speeds,
    _tau,
)

# flat planning speed used by the average-travel-time policy variant and the
# relatedness measure (km/min)
AVERAGE_SPEED_KM_MIN = 13.0 / 30.0

# default profile: 4 periods x 8 regions, minutes from an 08:00 day start
DEFAULT_PERIOD_STARTS = (0.0, 120.0, 600.0, 720.0)
DEFAULT_SPEEDS = {
    "A": (0.25, 0.40, 0.25, 0.40),
    "B": (0.50, 0.67, 0.50, 0.67),
    "C": (0.25, 0.40, 0.25, 0.40),
    "D": (0.50, 0.67, 0.50, 0.67),
    "E": (0.33, 0.53, 0.33, 0.53),
    "F": (0.16, 0.26, 0.16, 0.26),
    "G": (0.33, 0.53, 0.33, 0.53),
    "H": (0.50, 0.67, 0.50, 0.67),
}
DEFAULT_BOX_KM = (20.0, 10.0)
DEFAULT_GRID = (4, 2)

CONFIG_VERSION = 1


class Location(NamedTuple):
    """A point in the planar operating area (km east / km north)."""

    x: float
    y: float
    region_id: str | None = None


class ConfigError(ValueError):
    """Bad geography / speed-profile configuration."""


def distance(i, j) -> float:
    """Euclidean distance in km between two points (Location or (x, y)).

    Uses the same float expression as the jit kernels so planning and
    reporting agree bit-for-bit."""
    dx = i[0] - j[0]
    dy = i[1] - j[1]
    return math.sqrt(dx * dx + dy * dy)


@dataclass(frozen=True)
class Geography:
    """Axis-aligned rectangular regions tiling a bounding box."""

    width_km: float = DEFAULT_BOX_KM[0]
    height_km: float = DEFAULT_BOX_KM[1]
    nx: int = DEFAULT_GRID[0]
    ny: int = DEFAULT_GRID[1]
    labels: tuple[str, ...] = tuple(sorted(DEFAULT_SPEEDS))

    def __post_init__(self):
        if self.width_km <= 0 or self.height_km <= 0:
            raise ConfigError("box dimensions must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("grid must have at least one cell")
        if len(self.labels) != self.nx * self.ny:
            raise ConfigError(
                f"{self.nx}x{self.ny} grid needs {self.nx * self.ny} region "
                f"labels, got {len(self.labels)}")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("region labels must be unique")

    @property
    def cell_width(self) -> float:
        return self.width_km / self.nx

    @property
    def cell_height(self) -> float:
        return self.height_km / self.ny

    @property
    def n_regions(self) -> int:
        return self.nx * self.ny

    def region_index(self, x: float, y: float) -> int:
        """Grid cell index of a point; row-major from the north-west corner."""
        return int(_cell_index(x, y, self.nx, self.ny,
                               self.cell_width, self.cell_height))

    def region_of(self, x: float, y: float) -> str:
        return self.labels[self.region_index(x, y)]

    def locate(self, x: float, y: float) -> Location:
        """Location with its containing region resolved."""
        return Location(x, y, self.region_of(x, y))

    def cell_bounds(self, label: str) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of a region's rectangle."""
        idx = self.labels.index(label)
        row, col = divmod(idx, self.nx)
        x0 = col * self.cell_width
        y1 = self.height_km - row * self.cell_height
        return x0, y1 - self.cell_height, x0 + self.cell_width, y1

    def centroid(self, label: str) -> tuple[float, float]:
        x0, y0, x1, y1 = self.cell_bounds(label)
        return 0.5 * (x0 + x1), 0.5 * (y0 + y1)

    def cell_area(self, label: str) -> float:
        return self.cell_width * self.cell_height

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * self.width_km, 0.5 * self.height_km

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width_km and 0.0 <= y <= self.height_km

    def clamp(self, x: float, y: float) -> tuple[float, float]:
        return (min(max(x, 0.0), self.width_km),
                min(max(y, 0.0), self.height_km))


@dataclass(frozen=True)
class SpeedProfile:
    """Per-region speeds over contiguous time periods.

    period_starts are minutes from day start; the first must be 0 and the
    last period is open-ended.  Areas act as blend weights; they default to
    the geometric cell areas but may be overridden to model unequal tilings.
    """

    period_starts: tuple[float, ...] = DEFAULT_PERIOD_STARTS
    speeds: dict[str, tuple[float, ...]] = field(
        default_factory=lambda: dict(DEFAULT_SPEEDS))
    areas: dict[str, float] | None = None

    def __post_init__(self):
        starts = self.period_starts
        if not starts or starts[0] != 0.0:
            raise ConfigError("periods must start at minute 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError("period starts must be strictly increasing")
        for label, row in self.speeds.items():
            if len(row) != len(starts):
                raise ConfigError(
                    f"region {label}: {len(row)} speeds for "
                    f"{len(starts)} periods")
            if any(v <= 0 for v in row):
                raise ConfigError(f"region {label}: speeds must be positive")
        if self.areas is not None:
            for label, a in self.areas.items():
                if a <= 0:
                    raise ConfigError(f"region {label}: area must be positive")

    @property
    def n_periods(self) -> int:
        return len(self.period_starts)

    def period_index(self, t: float) -> int:
        """Period containing minute t (times past the last edge stay in the
        final period)."""
        w = 0
        for i, s in enumerate(self.period_starts):
            if t >= s:
                w = i
        return w


class TravelTimeModel:
    """Evaluator for time-dependent travel between planar locations.

    Immutable after construction; safe for unsynchronized concurrent reads.
    blend selects how cross-region speeds are formed: "segment" (default)
    weights the regions intersected by the actual origin-destination segment,
    "centroid" uses a table precomputed from region-centroid segments.
    """

    def __init__(self, geography: Geography | None = None,
                 profile: SpeedProfile | None = None,
                 blend: str = "segment"):
        if blend not in ("segment", "centroid"):
            raise ConfigError(f"unknown blend mode {blend!r}")
        self.geography = geography or Geography()
        self.profile = profile or SpeedProfile()
        self.blend = blend
        geo = self.geography
        prof = self.profile
        missing = [l for l in geo.labels if l not in prof.speeds]
        if missing:
            raise ConfigError(f"profile lacks speeds for regions {missing}")

        n_w = prof.n_periods
        n_r = geo.n_regions
        hi = list(prof.period_starts[1:]) + [math.inf]
        self._hi = np.asarray(hi, dtype=np.float64)
        self._speeds = np.asarray(
            [prof.speeds[l] for l in geo.labels], dtype=np.float64)
        if prof.areas is None:
            areas = [geo.cell_area(l) for l in geo.labels]
        else:
            areas = [prof.areas.get(l, geo.cell_area(l)) for l in geo.labels]
        self._areas = np.asarray(areas, dtype=np.float64)
        self._nx = geo.nx
        self._ny = geo.ny
        self._cw = geo.cell_width
        self._ch = geo.cell_height

        # region-pair speeds from centroid segments (the precomputable form)
        pair = np.empty((n_r, n_r, n_w), dtype=np.float64)
        buf = np.empty(n_w, dtype=np.float64)
        for a in range(n_r):
            ax, ay = geo.centroid(geo.labels[a])
            for b in range(n_r):
                bx, by = geo.centroid(geo.labels[b])
                if a == b:
                    pair[a, b] = self._speeds[a]
                    continue
                _od_speeds(ax, ay, bx, by, self._speeds, self._areas,
                           self._nx, self._ny, self._cw, self._ch, buf)
                pair[a, b] = buf
        self._pair_v = pair
        self._use_pairs = blend == "centroid"

    # -- packed view consumed by the kernels ------------------------------
    def kernel_args(self, avg_mode: bool = False) -> tuple:
        return (self._hi, self._speeds, self._areas,
                self._nx, self._ny, self._cw, self._ch,
                self._pair_v, self._use_pairs,
                avg_mode, AVERAGE_SPEED_KM_MIN)

    # -- spec operations ---------------------------------------------------
    def blended_speed(self, region_i: str, region_j: str, period: int) -> float:
        """Area-weighted speed between two regions in a period, from the
        regions crossed by the centroid segment."""
        labels = self.geography.labels
        try:
            a = labels.index(region_i)
            b = labels.index(region_j)
        except ValueError as exc:
            raise ConfigError(f"unknown region: {exc}") from exc
        if not 0 <= period < self.profile.n_periods:
            raise ConfigError(f"period {period} out of range")
        return float(self._pair_v[a, b, period])

    def travel_time(self, i, j, t: float) -> float:
        """Minutes to travel from i to j departing at minute t."""
        return float(_tau(i[0], i[1], j[0], j[1], t, *self.kernel_args()))

    def average_travel_time(self, i, j) -> float:
        """Distance over the flat average speed (policy-ablation baseline)."""
        return distance(i, j) / AVERAGE_SPEED_KM_MIN

    def latest_departure(self, i, j, arrive_by: float) -> float:
        """Latest departure from i that reaches j by arrive_by."""
        return float(_latest_departure(i[0], i[1], j[0], j[1], arrive_by,
                                       *self.kernel_args()))

    def region_of(self, x: float, y: float) -> str:
        return self.geography.region_of(x, y)

    def locate(self, x: float, y: float) -> Location:
        return self.geography.locate(x, y)

    # -- configuration round-trip -----------------------------------------
    def to_config(self) -> dict:
        geo = self.geography
        prof = self.profile
        cfg = {
            "version": CONFIG_VERSION,
            "box_km": [geo.width_km, geo.height_km],
            "grid": [geo.nx, geo.ny],
            "region_labels": list(geo.labels),
            "period_starts_min": list(prof.period_starts),
            "speeds_km_min": {l: list(prof.speeds[l]) for l in geo.labels},
            "blend": self.blend,
        }
        if prof.areas is not None:
            cfg["areas_km2"] = dict(prof.areas)
        return cfg

    def save_config(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_config(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_config(cls, cfg: dict) -> "TravelTimeModel":
        try:
            version = cfg["version"]
            if version != CONFIG_VERSION:
                raise ConfigError(f"unsupported config version {version}")
            geo = Geography(width_km=float(cfg["box_km"][0]),
                            height_km=float(cfg["box_km"][1]),
                            nx=int(cfg["grid"][0]), ny=int(cfg["grid"][1]),
                            labels=tuple(cfg["region_labels"]))
            prof = SpeedProfile(
                period_starts=tuple(float(s)
                                    for s in cfg["period_starts_min"]),
                speeds={l: tuple(float(v) for v in row)
                        for l, row in cfg["speeds_km_min"].items()},
                areas=({l: float(a) for l, a in cfg["areas_km2"].items()}
                       if "areas_km2" in cfg else None))
        except KeyError as exc:
            raise ConfigError(f"missing config field {exc}") from exc
        return cls(geo, prof, blend=cfg.get("blend", "segment"))

    @classmethod
    def load_config(cls, path) -> "TravelTimeModel":
        with open(path) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_config(cfg)


def default_model(blend: str = "segment") -> TravelTimeModel:
    """Model with the default 8-region geography and speed table."""
    return TravelTimeModel(Geography(), SpeedProfile(), blend=blend)
