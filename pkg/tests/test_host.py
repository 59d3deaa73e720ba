import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hamplug.host import (EllipsoidHost, EmbeddingFailure, InversionFailure, _until_phase,
                          build_flow_box, demo_open_orbit, host_field, host_field_generic,
                          insert_plug, periodic_orbit)
from hamplug.integrate import integrate
from hamplug.plug import PlugGeometry
from hamplug.trap import TrapProfile

HOST = EllipsoidHost()
CHART = build_flow_box(HOST, 1, 0.45, 0.55)
pts6 = arrays(np.float64, 6, elements=st.floats(-1, 1))


def test_coefficients():
    np.testing.assert_array_equal(HOST.A, np.sqrt([2.0, 3.0, 5.0]))


@given(pts6)
def test_closed_form_vs_generic(p):
    X = host_field(HOST, p)
    np.testing.assert_allclose(X, host_field_generic(HOST, p), atol=1e-12)
    assert abs(HOST.dK(p) @ X) <= 1e-12


def test_orbit_returns():
    a = HOST.A[0]
    p0 = np.zeros(6)
    p0[0] = 1 / math.sqrt(a)
    tr = integrate(HOST.field(), p0, math.pi / a, 1e-12)
    assert np.max(np.abs(tr.final - p0)) <= 1e-8


def test_periodic_orbit_descriptor():
    for j in (1, 2, 3):
        orb = periodic_orbit(HOST, j)
        for t in np.linspace(0, orb.period, 7):
            assert abs(HOST.K(orb.point(t, 3)) - 1.0) <= 1e-15
        assert abs(orb.period - math.pi / HOST.A[j - 1]) <= 1e-15
    with pytest.raises(IndexError):
        periodic_orbit(HOST, 4)
    g1, g2 = periodic_orbit(HOST, 1), periodic_orbit(HOST, 2)
    d = min(g2.distance(g1.point(t, 3), 3) for t in np.linspace(0, g1.period, 50))
    assert d > 0.5


def test_return_time_by_phase_events():
    for j in (1, 2):
        orb = periodic_orbit(HOST, j)
        a = HOST.A[j - 1]
        p0 = orb.point(-orb.period / 4, 3)  # angle -pi/2
        y, t = _until_phase(HOST.field(), p0, a, j - 1, math.pi / (4 * a), 10.0, 1e-12, None)
        assert abs(2 * t - orb.period) <= 1e-8


def test_chart_centre_and_normal_form(rng):
    np.testing.assert_allclose(CHART.base_point, periodic_orbit(HOST, 1).point(0, 3), atol=1e-15)
    std = np.zeros((5, 5))
    std[0, 1] = std[2, 3] = 1
    std[1, 0] = std[3, 2] = -1
    for _ in range(30):
        q = rng.uniform(-0.3, 0.3, 4)
        W0 = CHART.pulled_back_omega(q, 0.0)
        np.testing.assert_allclose(W0, std, atol=1e-8)
        for z in (-0.275, 0.275):
            np.testing.assert_allclose(CHART.pulled_back_omega(q, z), W0, atol=1e-6)
        np.testing.assert_allclose(CHART.pushforward_host(q, rng.uniform(-0.5, 0.5)), [0, 0, 0, 0, 1],
                                   atol=1e-10)


@given(arrays(np.float64, 4, elements=st.floats(-0.3, 0.3)), st.floats(-0.5, 0.5))
def test_chart_inverse_roundtrip(q, z):
    q2, z2, k = CHART.inverse(CHART.point(q, z))
    np.testing.assert_allclose(np.append(q2, z2), np.append(q, z), atol=1e-10)
    assert abs(k - 1) <= 1e-12


def test_chart_errors():
    with pytest.raises(EmbeddingFailure):
        build_flow_box(HOST, 1, 0.9, 0.5)
    with pytest.raises(EmbeddingFailure):
        build_flow_box(HOST, 1, 0.3, 2.0)
    with pytest.raises(InversionFailure):
        CHART.inverse(periodic_orbit(HOST, 1).point(periodic_orbit(HOST, 1).period / 2, 3))
    with pytest.raises(EmbeddingFailure):
        insert_plug(HOST, CHART, PlugGeometry(), mu=0.9)


def test_trivial_plug_matches_host(rng):
    ins = insert_plug(HOST, CHART, PlugGeometry(TrapProfile(a=0.0)))
    fld, hf = ins.field(), HOST.field()
    orb = periodic_orbit(HOST, 1)
    for _ in range(3):
        q = 0.1 * rng.normal(size=4)
        p0 = CHART.point(q, -0.5)
        a = integrate(fld, p0, orb.period, 1e-12, max_step=0.025).final
        b = integrate(hf, p0, orb.period, 1e-12).final
        assert np.max(np.abs(a - b)) <= 1e-8


def test_field_continuous_at_image_boundary(rng):
    ins = insert_plug(HOST, CHART, PlugGeometry())
    fld, hf = ins.field(), HOST.field()
    worst = 0.0
    for _ in range(200):
        x = rng.normal(size=4)
        x *= rng.uniform(0, 0.999) / np.linalg.norm(x)
        xp = np.append(x, rng.choice([-1, 1]) * rng.uniform(0.99, 1.0))
        p = ins.from_plug(xp)
        v, w = fld(p), hf(p)
        worst = max(worst, np.max(np.abs(v / np.linalg.norm(v) - w / np.linalg.norm(w))))
    assert worst <= 1e-8


def test_plug_roundtrip():
    ins = insert_plug(HOST, CHART, PlugGeometry())
    xp = np.array([0.3, -0.1, 0.2, 0.05, -0.4])
    np.testing.assert_allclose(ins.to_plug(ins.from_plug(xp)), xp, atol=1e-10)
    assert ins.in_image(ins.from_plug(xp))


def test_demo_real_plug():
    ins = insert_plug(HOST, CHART, PlugGeometry())
    rep = demo_open_orbit(ins, nearby=3, samples=5000)
    assert rep.passed, rep.line()


def test_demo_trivial_plug():
    ins = insert_plug(HOST, CHART, PlugGeometry(TrapProfile(a=0.0)))
    rep = demo_open_orbit(ins, t_max=50.0, nearby=2, samples=2000)
    checks = rep.details["checks"]
    assert checks["a"] and not checks["b"] and not rep.passed


def test_energy_drift_at_demo_tolerance(rng):
    worst = 0.0
    for _ in range(3):
        p0 = rng.normal(size=6)
        p0 /= math.sqrt(HOST.K(p0))
        tr = integrate(HOST.field(), p0, 1e3, 1e-12, t_eval=np.linspace(0, 1e3, 1001))
        worst = max(worst, max(abs(HOST.K(y) - 1.0) for y in tr.y))
    assert worst <= 1e-8
