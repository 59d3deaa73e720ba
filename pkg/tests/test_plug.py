import numpy as np
import pytest

from hamplug.integrate import TRAPPED, TRAVERSED, integrate_until_exit
from hamplug.plug import (EntryRegion, PlugField, PlugGeometry, aperiodicity_certificate,
                          entry_points, parallel_map, plug_field, trap_scan, traverse_scan,
                          verify_matching)
from hamplug.report import export_records, import_records
from hamplug.trap import TrapProfile

EZ = np.eye(5)[-1]


def _in_B(rng, count, delta=1.0, eps=1.0):
    v = rng.normal(size=(count, 4))
    v *= delta * rng.uniform(size=(count, 1)) ** 0.25 / np.linalg.norm(v, axis=1, keepdims=True)
    return np.hstack([v, rng.uniform(-eps, eps, size=(count, 1))])


def test_geometry_margins(geom):
    mr, mz = geom.support_margins
    assert mr > 0 and mz > 0
    with pytest.raises(ValueError):
        PlugGeometry(TrapProfile(), lam=1.0)
    with pytest.raises(ValueError):
        PlugGeometry(TrapProfile(), delta=-1)


def test_boundary_collar_exact(geom, rng):
    f = PlugField(geom)
    pts = _in_B(rng, 5000)
    near = [p for p in pts if geom.box("B").face_distance(p) >= -geom.eps / 8]
    assert len(near) > 100
    for p in near:
        assert np.array_equal(f(p), EZ)


def test_flat_profile_is_vertical(flat_profile, rng):
    f = PlugField(PlugGeometry(flat_profile))
    for p in _in_B(rng, 2000):
        assert np.array_equal(f(p), EZ)


def test_mirror_relation(geom, rng):
    f = PlugField(geom)
    D = np.diag([1, 1, 1, 1, -1.0])
    pts = _in_B(rng, 20000)
    inside = [q for q in pts if geom.box("B-").contains(q)]
    assert len(inside) > 100
    for q in inside:
        vm, vp = f(q), f(D @ q)
        np.testing.assert_array_equal(vm[:-1], -vp[:-1])
        assert vm[-1] == vp[-1]


def test_field_outside_B(geom):
    with pytest.raises(ValueError):
        plug_field(geom, [0.9, 0.9, 0, 0, 0])
    with pytest.raises(ValueError):
        plug_field(geom, [0, 0, 0, 0, 1.5])


def test_entry_points(geom):
    e = entry_points(geom, [[0.1, 0, 0, 0]])
    np.testing.assert_array_equal(e, [[0.1, 0, 0, 0, -1.0]])
    with pytest.raises(ValueError):
        entry_points(geom, [[1.0, 0, 0, 0]])
    with pytest.raises(ValueError):
        entry_points(geom, [[0.1, 0, 0]])


def test_outer_column(geom, rng):
    xs = []
    while len(xs) < 10:
        x = rng.uniform(-0.7, 0.7, 4)
        if 0.5 < np.linalg.norm(x) < 0.99:
            xs.append(x)
    recs = traverse_scan(geom, np.array(xs))
    for r in recs:
        assert r.status == TRAVERSED
        assert np.max(np.abs(r.exit - r.entry - [0, 0, 0, 0, 2])) <= 1e-10
    assert verify_matching(recs, 1e-10).passed


def _support_entries(geom, rng, count):
    R = geom.placed_extent[0]
    v = rng.normal(size=(count, 4))
    return v * R * rng.uniform(0.2, 1, size=(count, 1)) / np.linalg.norm(v, axis=1, keepdims=True)


def test_matching_through_support(geom, rng):
    xs = _support_entries(geom, rng, 10)
    recs = traverse_scan(geom, xs, tol=1e-10)
    rep = verify_matching(recs, 1e-6)
    assert rep.passed and rep.residuals["traversed"] == 10


def test_matching_improves_with_tol(geom, rng):
    xs = _support_entries(geom, rng, 10)
    loose = verify_matching(traverse_scan(geom, xs, tol=1e-8)).residuals["max_mismatch"]
    tight = verify_matching(traverse_scan(geom, xs, tol=1e-10)).residuals["max_mismatch"]
    assert tight < loose


def test_records_jsonl_in_order(geom, rng, tmp_path):
    xs = _support_entries(geom, rng, 4)
    recs = traverse_scan(geom, xs)
    path = export_records(recs, tmp_path / "t.jsonl")
    back = import_records(path)
    assert len(path.read_text().splitlines()) == 4
    for a, b in zip(recs, back):
        np.testing.assert_array_equal(a.entry, b.entry)
        np.testing.assert_array_equal(a.exit, b.exit)
        assert a.status == b.status and a.transit_time == b.transit_time


def test_parallel_map_matches_serial(geom, rng):
    xs = _support_entries(geom, rng, 4)
    a = traverse_scan(geom, xs, workers=1)
    b = traverse_scan(geom, xs, workers=2)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.exit, rb.exit)
    assert parallel_map(abs, [-1, 2, -3], 2) == [1, 2, 3]


def test_trapped_entry_stays(geom):
    # the design entry over the invariant cylinder, followed for 2000 time units
    r = geom.trapped_radius()
    p0 = np.array([r, 0, r, 0, -geom.eps])
    rec = integrate_until_exit(PlugField(geom), geom.box("B"), p0, 2000.0, 1e-12,
                               max_step=geom.eps / 20, nrec=200)
    assert rec.status == TRAPPED
    tp = geom.torus("+")
    z = rec.samples.y[:, -1]
    assert z.max() <= -0.5 * geom.eps + 1e-9
    assert tp.distance(rec.samples.y[-1]) < 0.05


def test_trap_scan_flat_profile_empty(flat_profile):
    g = PlugGeometry(flat_profile)
    r = g.trapped_radius()
    res = trap_scan(g, EntryRegion((r, r), 0.1 * r, points=2), t_max=100.0, refine=0, probe_time=50)
    assert res.trapped == []
    assert all(d["status"] == TRAVERSED for d in res.diagnostics)


def test_aperiodicity(geom):
    rep = aperiodicity_certificate(geom, 20_000)
    assert rep.passed
    r = rep.residuals
    assert r["min_vz_outside_0.1"] >= r["min_vz_outside_0.03"] >= r["min_vz_outside_0.01"] >= r["min_vz_all"]
    assert rep.details["witness"]["distinct_primes"]


def test_aperiodicity_flat(flat_profile):
    rep = aperiodicity_certificate(PlugGeometry(flat_profile), 5000)
    assert rep.residuals["min_vz_all"] == 1.0


def test_vz_vanishes_toward_torus(geom, rng):
    # vertical component along rays approaching the placed torus
    f = PlugField(geom)
    tp = geom.torus("+")
    vals = []
    for d in (1e-2, 1e-3, 1e-4):
        p = tp.point(rng.uniform(0, 2 * np.pi, 2))
        p[-1] += d
        vals.append(f(p)[-1])
    assert vals[0] > vals[1] > vals[2] >= 0 and vals[2] < 1e-6
