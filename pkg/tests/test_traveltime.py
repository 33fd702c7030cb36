import json
import math

import numpy as np
import pytest

from crowddrp.traveltime import (
    AVERAGE_SPEED_KM_MIN,
    ConfigError,
    Geography,
    Location,
    SpeedProfile,
    TravelTimeModel,
    default_model,
    distance,
)

from oracles import numeric_distance_covered, numeric_travel_time


def two_region_model(speeds_a, speeds_b, areas=None):
    geo = Geography(width_km=10.0, height_km=5.0, nx=2, ny=1,
                    labels=("A", "B"))
    prof = SpeedProfile(period_starts=(0.0,),
                        speeds={"A": speeds_a, "B": speeds_b}, areas=areas)
    return TravelTimeModel(geo, prof)


class TestBlendedSpeed:
    def test_single_region_collapses_to_region_speed(self, model):
        for w, expect in enumerate((0.25, 0.40, 0.25, 0.40)):
            assert model.blended_speed("A", "A", w) == expect

    def test_two_equal_regions(self):
        m = two_region_model((0.25,), (0.40,))
        assert m.blended_speed("A", "B", 0) == pytest.approx(0.325, abs=0)

    def test_unequal_areas(self):
        m = two_region_model((0.40,), (0.16,), areas={"A": 3.0, "B": 1.0})
        assert m.blended_speed("A", "B", 0) == pytest.approx(0.34, abs=1e-15)

    def test_unknown_region_rejected(self, model):
        with pytest.raises(ConfigError):
            model.blended_speed("A", "Z", 0)
        with pytest.raises(ConfigError):
            model.blended_speed("A", "B", 99)


class TestTravelTime:
    def test_zero_distance(self, model):
        assert model.travel_time((3.0, 8.0), (3.0, 8.0), 100.0) == 0.0

    def test_single_period_single_region(self, model):
        # region A (north-west cell), 10:00-18:00 speed 0.40, 4 km
        assert model.travel_time((0.5, 9.5), (4.5, 9.5), 300.0) == 10.0

    def test_period_boundary_split(self, model):
        # depart 5 min before the slowdown from 0.40 to 0.25: 2 km fast,
        # remaining 2 km slow -> 13 minutes
        assert model.travel_time((0.5, 9.5), (4.5, 9.5), 595.0) == \
            pytest.approx(13.0, abs=1e-12)

    def test_past_last_period_uses_final_speeds(self, model):
        tau = model.travel_time((0.5, 9.5), (4.5, 9.5), 5000.0)
        assert tau == pytest.approx(10.0, abs=1e-12)

    def test_latest_departure_inverts(self, model):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = tuple(rng.uniform((0, 0), (20, 10)))
            b = tuple(rng.uniform((0, 0), (20, 10)))
            arrive = rng.uniform(10.0, 800.0)
            dep = model.latest_departure(a, b, arrive)
            assert dep + model.travel_time(a, b, dep) == \
                pytest.approx(arrive, abs=1e-9)


class TestAverageTravelTime:
    def test_zero(self, model):
        assert model.average_travel_time((1, 1), (1, 1)) == 0.0

    def test_constant_speed(self, model):
        d = 13.0 / 3.0
        assert model.average_travel_time((0.0, 0.0), (d, 0.0)) == \
            pytest.approx(10.0, abs=1e-12)

    def test_symmetry(self, model):
        a, b = (1.0, 2.0), (15.0, 9.0)
        assert model.average_travel_time(a, b) == \
            model.average_travel_time(b, a)


class TestProperties:
    def test_oracle_equivalence_sample(self, model):
        rng = np.random.default_rng(11)
        for _ in range(300):
            a = tuple(rng.uniform((0, 0), (20, 10)))
            b = tuple(rng.uniform((0, 0), (20, 10)))
            t = rng.uniform(0.0, 800.0)
            got = model.travel_time(a, b, t)
            want = numeric_travel_time(model, a, b, t)
            assert got == pytest.approx(want, abs=1e-6)

    def test_fifo_sample(self, model):
        rng = np.random.default_rng(12)
        for _ in range(500):
            a = tuple(rng.uniform((0, 0), (20, 10)))
            b = tuple(rng.uniform((0, 0), (20, 10)))
            t = rng.uniform(0.0, 780.0)
            t2 = t + rng.uniform(0.0, 60.0)
            arr1 = t + model.travel_time(a, b, t)
            arr2 = t2 + model.travel_time(a, b, t2)
            assert arr2 >= arr1 - 1e-9

    def test_distance_conservation_sample(self, model):
        rng = np.random.default_rng(13)
        for _ in range(50):
            a = tuple(rng.uniform((0, 0), (20, 10)))
            b = tuple(rng.uniform((0, 0), (20, 10)))
            t = rng.uniform(0.0, 750.0)
            tau = model.travel_time(a, b, t)
            covered = numeric_distance_covered(model, a, b, t, tau)
            assert covered == pytest.approx(distance(a, b), abs=1e-6)

    def test_single_period_consistency(self, model):
        # one region, depart and arrive inside one period: exactly d / v
        rng = np.random.default_rng(14)
        geo = model.geography
        count = 0
        while count < 100:
            x0 = rng.uniform(0, 20)
            y0 = rng.uniform(0, 10)
            label = geo.region_of(x0, y0)
            bx0, by0, bx1, by1 = geo.cell_bounds(label)
            a = (rng.uniform(bx0, bx1), rng.uniform(by0, by1))
            b = (rng.uniform(bx0, bx1), rng.uniform(by0, by1))
            if geo.region_of(*a) != label or geo.region_of(*b) != label:
                continue
            t = rng.uniform(130.0, 500.0)
            v = model.profile.speeds[label][1]
            if t + distance(a, b) / v >= 600.0:
                continue
            assert model.travel_time(a, b, t) == distance(a, b) / v
            count += 1


class TestGeography:
    def test_row_major_labels(self, model):
        geo = model.geography
        assert geo.region_of(2.0, 9.0) == "A"
        assert geo.region_of(19.0, 9.0) == "D"
        assert geo.region_of(2.0, 1.0) == "E"
        assert geo.region_of(19.0, 1.0) == "H"

    def test_cells_tile_box(self, model):
        geo = model.geography
        total = sum(geo.cell_area(l) for l in geo.labels)
        assert total == pytest.approx(geo.width_km * geo.height_km)
        for l in geo.labels:
            x0, y0, x1, y1 = geo.cell_bounds(l)
            cx, cy = geo.centroid(l)
            assert x0 <= cx <= x1 and y0 <= cy <= y1
            assert geo.region_of(cx, cy) == l

    def test_locate(self, model):
        loc = model.locate(2.0, 9.0)
        assert loc == Location(2.0, 9.0, "A")

    def test_bad_geography(self):
        with pytest.raises(ConfigError):
            Geography(nx=2, ny=2, labels=("A", "B"))
        with pytest.raises(ConfigError):
            Geography(width_km=-1)


class TestProfileValidation:
    def test_bad_periods(self):
        with pytest.raises(ConfigError):
            SpeedProfile(period_starts=(10.0, 20.0))
        with pytest.raises(ConfigError):
            SpeedProfile(period_starts=(0.0, 50.0, 50.0))

    def test_bad_speeds(self):
        with pytest.raises(ConfigError):
            SpeedProfile(period_starts=(0.0,), speeds={"A": (0.0,)})

    def test_bad_area(self):
        with pytest.raises(ConfigError):
            SpeedProfile(period_starts=(0.0,), speeds={"A": (0.5,)},
                         areas={"A": -2.0})

    def test_profile_missing_region(self):
        geo = Geography(width_km=10, height_km=5, nx=2, ny=1,
                        labels=("A", "B"))
        with pytest.raises(ConfigError):
            TravelTimeModel(geo, SpeedProfile(period_starts=(0.0,),
                                              speeds={"A": (0.5,)}))


class TestConfigRoundTrip:
    def test_round_trip(self, model, tmp_path):
        path = tmp_path / "profile.json"
        model.save_config(path)
        again = TravelTimeModel.load_config(path)
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = tuple(rng.uniform((0, 0), (20, 10)))
            b = tuple(rng.uniform((0, 0), (20, 10)))
            t = rng.uniform(0.0, 700.0)
            assert again.travel_time(a, b, t) == model.travel_time(a, b, t)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            TravelTimeModel.load_config(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "short.json"
        path.write_text(json.dumps({"version": 1}))
        with pytest.raises(ConfigError):
            TravelTimeModel.load_config(path)

    def test_version_check(self, model, tmp_path):
        cfg = model.to_config()
        cfg["version"] = 99
        with pytest.raises(ConfigError):
            TravelTimeModel.from_config(cfg)


class TestBlendModes:
    def test_centroid_mode_matches_pair_table(self, ):
        m = default_model(blend="centroid")
        # travel between region centroids agrees with the blended table
        geo = m.geography
        a = geo.centroid("A")
        h = geo.centroid("H")
        tau = m.travel_time(a, h, 200.0)
        v = m.blended_speed("A", "H", 1)
        assert tau == pytest.approx(distance(a, h) / v, abs=1e-9)

    def test_modes_agree_within_one_region(self, model):
        m2 = default_model(blend="centroid")
        a, b = (1.0, 9.0), (4.0, 8.0)
        assert m2.travel_time(a, b, 300.0) == \
            pytest.approx(model.travel_time(a, b, 300.0), abs=1e-12)
