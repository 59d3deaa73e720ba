import math

import numba as nb
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hamplug.host import EllipsoidHost
from hamplug.integrate import (TRAPPED, TRAVERSED, BoxRegion, Field, StepFailure, eval_batch,
                               flow_jacobian, flow_map, integrate, integrate_until_exit)

A = 1.3


@nb.njit(cache=True)
def rotation(y, P):
    return np.array([-2 * P[0] * y[1], 2 * P[0] * y[0]])


@nb.njit(cache=True)
def vertical(y, P):
    out = np.zeros(y.shape[0])
    out[-1] = 1.0
    return out


@nb.njit(cache=True)
def toward_torus(y, P):
    # zero transverse motion, dz/dt = min(1, dist^2) to {r_j = P[0], z = 0}
    d2 = y[-1] ** 2
    for j in range(0, y.shape[0] - 1, 2):
        d2 += (math.hypot(y[j], y[j + 1]) - P[0]) ** 2
    out = np.zeros(y.shape[0])
    out[-1] = min(1.0, d2)
    return out


ROT = Field(rotation, [A], 2, "rotation")
VERT = Field(vertical, [0.0], 5, "vertical")
BOX = BoxRegion(1.0, -1.0, 1.0, 4, 5)


def test_constant_field_endpoint():
    p0 = np.array([0.1, 0.2, -0.3, 0.05, -1.0])
    tr = integrate(VERT, p0, 2.0, 1e-10)
    np.testing.assert_allclose(tr.final, p0 + [0, 0, 0, 0, 2], atol=1e-10)


def test_rotation_returns():
    tr = integrate(ROT, [1.0, 0.0], math.pi / A, 1e-12)
    assert np.max(np.abs(tr.final - [1.0, 0.0])) <= 1e-8


def test_halving_tol_does_not_hurt():
    errs = [np.max(np.abs(integrate(ROT, [1.0, 0.0], math.pi / A, tol).final - [1, 0]))
            for tol in (1e-8, 5e-9)]
    assert errs[1] <= errs[0]


def test_python_callable_matches_kernel():
    f = lambda y: np.array([-2 * A * y[1], 2 * A * y[0]])  # noqa: E731
    a = integrate(f, [0.3, 0.4], 1.0, 1e-10).final
    b = integrate(ROT, [0.3, 0.4], 1.0, 1e-10).final
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_t_eval_samples():
    ts = np.linspace(0, 1, 11)
    tr = integrate(ROT, [1.0, 0.0], 1.0, 1e-11, t_eval=ts)
    np.testing.assert_array_equal(tr.t, ts)
    expect = np.column_stack([np.cos(2 * A * ts), np.sin(2 * A * ts)])
    np.testing.assert_allclose(tr.y, expect, atol=1e-9)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 5))
def test_rotation_preserves_radius(x, y, T):
    tr = integrate(ROT, [x, y], T, 1e-11)
    assert abs(np.hypot(*tr.final) - math.hypot(x, y)) <= 1e-8 * (1 + T)


def test_step_failure_on_blowup():
    with pytest.raises(StepFailure):
        integrate(lambda y: y * y, [1.0], 2.0, 1e-10)


def test_exit_vertical():
    rec = integrate_until_exit(VERT, BOX, [0.2, 0, 0, 0.1, -1.0], 10.0, 1e-10)
    assert rec.status == TRAVERSED
    assert abs(rec.transit_time - 2.0) <= 1e-10
    assert abs(rec.exit[-1] - 1.0) <= 1e-12


def test_exit_outside_box():
    with pytest.raises(ValueError):
        integrate_until_exit(VERT, BOX, [2.0, 0, 0, 0, 0], 10.0)


def test_toy_trap():
    fld = Field(toward_torus, [0.5], 5, "toy")
    rec = integrate_until_exit(fld, BOX, [0.5, 0, 0.5, 0, -1.0], 1e3, 1e-10, nrec=50)
    assert rec.status == TRAPPED
    z = rec.samples.y[:, -1]
    assert np.all(np.diff(z) >= 0) and z[-1] < 0
    # dz/dt = z^2 from -1 gives z = -1/(1+t)
    assert abs(z[-1] + 1 / 1001) <= 1e-8


def test_jacobian_vertical():
    np.testing.assert_allclose(flow_jacobian(VERT, np.zeros(5), 0.7), np.eye(5), atol=1e-12)


def test_jacobian_rotation_quarter():
    J = flow_jacobian(ROT, [0.3, -0.2], math.pi / (4 * A), 1e-12)
    np.testing.assert_allclose(J, [[0, -1], [1, 0]], atol=1e-6)


def test_jacobian_vs_finite_differences():
    fld = Field(toward_torus, [0.5], 5, "toy")
    p0 = np.array([0.3, 0.1, 0.4, -0.2, -0.5])
    J = flow_jacobian(fld, p0, 1.0, 1e-12)
    h = 1e-5
    fd = np.column_stack([(flow_map(fld, p0 + h * e, 1.0, 1e-12) - flow_map(fld, p0 - h * e, 1.0, 1e-12)) / (2 * h)
                          for e in np.eye(5)])
    np.testing.assert_allclose(J, fd, atol=1e-5)


def test_eval_batch_rows():
    pts = np.random.default_rng(0).normal(size=(7, 2))
    np.testing.assert_array_equal(eval_batch(ROT, pts), np.array([ROT(p) for p in pts]))


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        integrate(ROT, [1.0, 0.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        integrate(ROT, [np.nan, 0.0], 1.0)


ELL = EllipsoidHost()


def _on_level(v):
    v = np.asarray(v, dtype=np.float64)
    return v / math.sqrt(ELL.K(v))


vec6 = st.lists(st.floats(-1, 1), min_size=6, max_size=6).filter(lambda v: np.linalg.norm(v) > 0.1)


def test_energy_conservation_ellipsoid():
    # |K drift| <= 1e-8 over t <= 1e3 at tol 1e-10
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(4):
        p0 = _on_level(rng.normal(size=6))
        tr = integrate(ELL.field(), p0, 1e3, 1e-10, t_eval=np.linspace(0, 1e3, 2001))
        worst = max(worst, max(abs(ELL.K(y) - 1.0) for y in tr.y))
    assert worst <= 1e-8, worst


@given(vec6)
def test_liouville_determinant(v):
    J = flow_jacobian(ELL.field(), _on_level(v), 1.0, 1e-10)
    assert abs(np.linalg.det(J) - 1.0) <= 1e-6


@given(vec6, st.floats(0.1, 2.0))
def test_reversibility(v, T):
    p0 = _on_level(v)
    tol = 1e-10
    a = integrate(ELL.field(), p0, T, tol).final
    b = integrate(ELL.field(), a, 0.0, tol, t0=T).final
    assert np.max(np.abs(b - p0)) <= 10 * tol


@given(st.floats(-1.0, 0.99))
def test_event_time_constant_field(z0):
    rec = integrate_until_exit(VERT, BOX, [0.1, 0.0, -0.2, 0.0, z0], 10.0, 1e-10)
    assert rec.status == TRAVERSED
    assert abs(rec.transit_time - (1.0 - z0)) <= 1e-12


@given(vec6)
def test_trajectory_samples_well_formed(v):
    tr = integrate(ELL.field(), _on_level(v), 5.0, 1e-10)
    assert np.all(np.diff(tr.t) > 0)
    speed = max(np.linalg.norm(ELL.field()(y)) for y in tr.y)
    jumps = np.linalg.norm(np.diff(tr.y, axis=0), axis=1)
    assert np.all(jumps <= np.diff(tr.t) * speed * 2)
