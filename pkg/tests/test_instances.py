import math
from collections import defaultdict

import numpy as np
import pytest

from crowddrp.instances import (
    CROWDSHIPPER_TABLE,
    InstanceError,
    MTO_BUNDLE_P,
    OTM_BUNDLE_P,
    NM_LONG_RATE,
    NM_SHORT_RATES,
    Request,
    VehicleSpec,
    build_fleet,
    generate_instance,
    load_instance,
    location_pools,
    save_instance,
)


def span(r):
    return round(r.deadline - r.ready, 6)


def offset(a, b):
    return round(a - b, 6)


def bundles_of(instance):
    groups = defaultdict(list)
    for r in instance.requests:
        if r.bundle is not None:
            groups[r.bundle].append(r)
    return groups


class TestRates:
    def test_table_values(self):
        assert NM_SHORT_RATES["low"][0] == 3.75
        assert NM_LONG_RATE["low"] == 11.25
        assert NM_SHORT_RATES["medium"][2] == 25.0
        assert NM_SHORT_RATES["high"][8] == 31.25

    def test_nm_low_daily_mean(self):
        counts = [generate_instance("nm", "low", s).n_requests
                  for s in range(400)]
        mean = np.mean(counts)
        # expected 225/day; keep a generous Monte-Carlo band here, the
        # acceptance suite checks the per-hour rates tightly
        assert abs(mean - 225.0) / 225.0 < 0.03

    def test_uo_expected_total(self):
        counts = [generate_instance("uo", "low", s).n_requests
                  for s in range(300)]
        assert abs(np.mean(counts) - 25.71 * 7) / (25.71 * 7) < 0.03

    def test_uo_deadline_offsets(self):
        inst = generate_instance("uo", "medium", 3)
        for r in inst.requests:
            assert offset(r.ready, r.arrival) == 10.0
            assert offset(r.deadline, r.arrival) == 40.0
            assert span(r) == 30.0

    def test_nm_offsets(self):
        inst = generate_instance("nm", "high", 4)
        assert {span(r) for r in inst.requests} <= {40.0, 80.0}
        for r in inst.requests:
            if span(r) == 40.0:
                assert offset(r.ready, r.arrival) == 20.0
            else:
                assert offset(r.ready, r.arrival) == 40.0

    def test_nm_mix_roughly_even(self):
        short = long_ = 0
        for s in range(60):
            for r in generate_instance("nm", "medium", s).requests:
                if span(r) == 40.0:
                    short += 1
                else:
                    long_ += 1
        assert abs(short - long_) / (short + long_) < 0.05


class TestDeterminism:
    @pytest.mark.parametrize("cls", ["uo", "nm", "mto", "otm"])
    def test_same_seed_same_instance(self, cls):
        a = generate_instance(cls, "low", 42)
        b = generate_instance(cls, "low", 42)
        assert a == b

    def test_different_seed_differs(self):
        assert generate_instance("nm", "low", 1) != \
            generate_instance("nm", "low", 2)

    def test_invariants_hold(self):
        for cls in ("uo", "nm", "mto", "otm"):
            inst = generate_instance(cls, "high", 9)
            inst.validate()
            for r in inst.requests:
                assert r.arrival <= r.ready < r.deadline
                assert r.arrival <= inst.horizon


class TestMto:
    def test_bundle_structure(self):
        inst = generate_instance("mto", "medium", 5)
        for members in bundles_of(inst).values():
            assert len({m.arrival for m in members}) == 1
            assert len({m.destination for m in members}) == 1
            assert len({m.origin for m in members}) == len(members)
            for m in members:
                assert span(m) == 80.0  # long-deadline only

    def test_bundle_size_distribution(self):
        sizes = []
        for s in range(120):
            for members in bundles_of(generate_instance(
                    "mto", "low", s)).values():
                sizes.append(len(members))
        sizes = np.asarray(sizes)
        assert len(sizes) > 10_000
        for n, p in enumerate(MTO_BUNDLE_P, start=1):
            assert abs(np.mean(sizes == n) - p) < 0.01

    def test_short_stream_shared_with_nm(self):
        nm = generate_instance("nm", "low", 17)
        mto = generate_instance("mto", "low", 17)
        key = lambda inst: sorted(
            (r.arrival, r.origin, r.destination) for r in inst.requests
            if span(r) == 40.0)
        assert key(nm) == key(mto)


class TestOtm:
    def test_probabilities_normalized(self):
        assert sum(OTM_BUNDLE_P) == pytest.approx(1.0, abs=1e-5)

    def test_bundle_geometry(self):
        worst = 0.0
        for s in range(40):
            inst = generate_instance("otm", "medium", s)
            for members in bundles_of(inst).values():
                assert len({m.origin for m in members}) == 1
                times = [m.arrival for m in members]
                assert max(times) - min(times) <= 30.0
                for i in range(len(members)):
                    for j in range(i + 1, len(members)):
                        worst = max(worst, math.dist(
                            members[i].destination,
                            members[j].destination))
        assert worst <= 2.414 + 1e-9

    def test_request_level_size_distribution(self):
        # fraction of long-deadline requests in bundles of size n
        counts = np.zeros(len(OTM_BUNDLE_P))
        for s in range(150):
            for members in bundles_of(generate_instance(
                    "otm", "low", s)).values():
                n = len(members)
                if n <= len(counts):
                    counts[n - 1] += n
        frac = counts / counts.sum()
        assert counts.sum() > 10_000
        for n, p in enumerate(OTM_BUNDLE_P, start=1):
            assert abs(frac[n - 1] - p) < 0.01


class TestFleet:
    def test_sizes(self):
        nm = build_fleet("nm")
        uo = build_fleet("uo")
        assert sum(1 for v in nm if v.kind == "dedicated") == 5
        assert sum(1 for v in nm if v.is_crowd) == 28
        assert sum(1 for v in uo if v.kind == "dedicated") == 3
        assert sum(1 for v in uo if v.is_crowd) == 22

    def test_crowd_schedule_endpoints(self):
        nm = build_fleet("nm")
        crowd = [v for v in nm if v.is_crowd]
        assert (crowd[0].appear, crowd[0].leave_by) == (1.0, 120.0)
        assert (crowd[-1].appear, crowd[-1].leave_by) == (590.0, 750.0)
        assert len(CROWDSHIPPER_TABLE) == 28
        for v in crowd:
            assert 60.0 <= v.leave_by - v.appear <= 240.0

    def test_dedicated_at_depot(self):
        for v in build_fleet("nm"):
            if v.kind == "dedicated":
                assert v.appear == 0.0
                assert v.start == v.end == (10.0, 5.0)
                assert v.leave_by == 1200.0

    def test_uo_prefix_of_nm_schedule(self):
        nm = [v for v in build_fleet("nm") if v.is_crowd]
        uo = [v for v in build_fleet("uo") if v.is_crowd]
        for a, b in zip(uo, nm[:22]):
            assert (a.appear, a.leave_by, a.start, a.end) == \
                (b.appear, b.leave_by, b.start, b.end)

    def test_coordinates_inside_box(self):
        for v in build_fleet("nm"):
            for (x, y) in (v.start, v.end):
                assert 0.0 <= x <= 20.0 and 0.0 <= y <= 10.0


class TestPools:
    def test_sizes_and_sharing(self):
        up, ud = location_pools("uo")
        np_, nd = location_pools("nm")
        assert up.shape == (110, 2) and np_.shape == (248, 2)
        assert ud.shape == (32_000, 2) and nd.shape == (32_000, 2)

    def test_requests_drawn_from_pools(self):
        pickups, deliveries = location_pools("nm")
        pick = {(round(x, 9), round(y, 9)) for x, y in pickups}
        inst = generate_instance("nm", "low", 2)
        for r in inst.requests:
            assert (round(r.origin[0], 9), round(r.origin[1], 9)) in pick


class TestFiles:
    def test_round_trip_identity(self, tmp_path):
        for cls in ("nm", "otm"):
            inst = generate_instance(cls, "low", 3)
            path = tmp_path / f"{cls}.inst"
            save_instance(inst, path)
            assert load_instance(path) == inst

    def test_empty_day_valid(self, tmp_path):
        inst = generate_instance("nm", "low", 3)
        inst.requests = []
        inst.validate()
        path = tmp_path / "empty.inst"
        save_instance(inst, path)
        assert load_instance(path).n_requests == 0

    def test_bad_deadline_rejected(self, tmp_path):
        inst = generate_instance("nm", "low", 3)
        path = tmp_path / "bad.inst"
        save_instance(inst, path)
        lines = path.read_text().splitlines()
        for i, line in enumerate(lines):
            parts = line.split("\t")
            if len(parts) == 9 and parts[0] == "0":
                parts[3] = parts[4]  # ready == deadline
                lines[i] = "\t".join(parts)
                break
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(InstanceError):
            load_instance(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "trunc.inst"
        path.write_text("version\t1\nclass\tnm\n")
        with pytest.raises(InstanceError) as err:
            load_instance(path)
        assert "trunc.inst" in str(err.value)

    def test_malformed_row(self, tmp_path):
        inst = generate_instance("nm", "low", 3)
        path = tmp_path / "mangle.inst"
        save_instance(inst, path)
        txt = path.read_text().replace("requests\t", "requezts\t", 1)
        path.write_text(txt)
        with pytest.raises(InstanceError):
            load_instance(path)


class TestValidation:
    def test_needs_dedicated_vehicle(self):
        inst = generate_instance("nm", "low", 1)
        inst.fleet = [v for v in inst.fleet if v.is_crowd]
        with pytest.raises(InstanceError):
            inst.validate()

    def test_vehiclespec_window(self):
        with pytest.raises(InstanceError):
            VehicleSpec(0, "crowdshipper", 10.0, 20.0, (0, 0),
                        (1, 1)).validate()
        with pytest.raises(InstanceError):
            VehicleSpec(0, "scooter", 0.0, 100.0, (0, 0), (1, 1)).validate()

    def test_request_ordering_enforced(self):
        inst = generate_instance("nm", "low", 1)
        inst.requests = list(reversed(inst.requests))
        with pytest.raises(InstanceError):
            inst.validate()
