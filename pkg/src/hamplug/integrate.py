"""Adaptive Dormand-Prince 5(4) integration with dense output and face events.

All fields are evaluated through ``rhs(y, P)`` where ``P`` is a flat float64
parameter array.  Fields built by this package are numba kernels and run
through the compiled core; arbitrary Python callables run through the same
core uncompiled (slow, meant for small checks).
"""

from __future__ import annotations

import math
import types
from dataclasses import dataclass, field as dc_field
import numba as nb
import numpy as np
from scipy.integrate import RK45

# Dormand-Prince tableau and its quartic continuous extension.
_C = np.ascontiguousarray(np.append(RK45.C, 1.0), dtype=np.float64)
_A = np.zeros((7, 6))
_A[:6, :5] = RK45.A
_A[6, :] = RK45.B
_B = np.ascontiguousarray(RK45.B, dtype=np.float64)
_E = np.ascontiguousarray(RK45.E, dtype=np.float64)
_P = np.ascontiguousarray(RK45.P, dtype=np.float64)

DONE, EVENT, STEP_FAILURE, GRAZING, MAX_STEPS = 0, 1, 2, 3, 4

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


class StepFailure(RuntimeError):
    """Step size underflow: the field is singular or stiff along the path."""


# --------------------------------------------------------------------------
# compiled core


@nb.njit(cache=True)
def _no_event(y, E):
    return -1.0


@nb.njit(cache=True)
def box_face_distance(y, E):
    """max(|transverse| - R, z0 - z, z - z1); E = [R, z0, z1, z_index, n_block]."""
    zi = int(E[3])
    nb_ = int(E[4])
    r2 = 0.0
    for i in range(nb_):
        if i != zi:
            r2 += y[i] * y[i]
    z = y[zi]
    d = math.sqrt(r2) - E[0]
    if E[1] - z > d:
        d = E[1] - z
    if z - E[2] > d:
        d = z - E[2]
    return d


@nb.njit(cache=True)
def _augmented(rhs, y, P, d, var, fd):
    if var == 0:
        return rhs(y, P)
    out = np.empty(d + d * d)
    x = y[:d].copy()
    f0 = rhs(x, P)
    for i in range(d):
        out[i] = f0[i]
    J = np.empty((d, d))
    for k in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[k] += fd
        xm[k] -= fd
        fp = rhs(xp, P)
        fm = rhs(xm, P)
        for i in range(d):
            J[i, k] = (fp[i] - fm[i]) / (2.0 * fd)
    for i in range(d):
        for j in range(d):
            s = 0.0
            for k in range(d):
                s += J[i, k] * y[d + k * d + j]
            out[d + i * d + j] = s
    return out


@nb.njit(cache=True)
def _dense(y0, K, h, theta):
    N = y0.shape[0]
    out = y0.copy()
    t2 = theta * theta
    t3 = t2 * theta
    t4 = t3 * theta
    for s in range(7):
        w = _P[s, 0] * theta + _P[s, 1] * t2 + _P[s, 2] * t3 + _P[s, 3] * t4
        if w != 0.0:
            for i in range(N):
                out[i] += h * w * K[s, i]
    return out


@nb.njit(cache=True)
def _locate(ev, E, y0, K, h, d, ta, tb, ga, gb):
    # bracketed Illinois iteration with bisection safeguard; ga < 0 <= gb
    side = 0
    tm = tb
    for it in range(200):
        if it % 4 == 3:
            tm = 0.5 * (ta + tb)
        else:
            tm = ta - ga * (tb - ta) / (gb - ga)
            if not (ta < tm < tb):
                tm = 0.5 * (ta + tb)
        gm = ev(_dense(y0, K, h, tm)[:d], E)
        if gm >= 0.0:
            tb = tm
            gb = gm
            if side == 1:
                ga *= 0.5
            side = 1
        else:
            ta = tm
            ga = gm
            if side == -1:
                gb *= 0.5
            side = -1
        if gb - ga == 0.0 or (tb - ta) < 1e-16 or abs(gm) < 1e-15:
            break
    # the endpoint with the smaller residual is reported
    ya = _dense(y0, K, h, ta)
    yb = _dense(y0, K, h, tb)
    ra = ev(ya[:d], E)
    rb = ev(yb[:d], E)
    if abs(ra) < abs(rb):
        return ta, ya, ra
    return tb, yb, rb


@nb.njit(cache=True)
def _compact(ts, ys, k):
    j = 0
    for i in range(0, k, 2):
        ts[j] = ts[i]
        ys[j, :] = ys[i, :]
        j += 1
    return j


@nb.njit(cache=True)
def dp5_core(rhs, P, ev, E, has_ev, y0, t0, t_end, tol, h0, hmax, d, var, fd,
             nrec, t_eval, max_steps):
    """Integrate from t0 to t_end (either direction).

    Returns (status, t, y, nsteps, nrejected, ts, ys, t_event, y_event, residual).
    Without ``t_eval`` the accepted steps are recorded into a buffer of ``nrec``
    rows, thinned by factors of two when it fills.
    """
    N = y0.shape[0]
    direction = 1.0 if t_end >= t0 else -1.0
    span = abs(t_end - t0)
    use_eval = t_eval.shape[0] > 0
    cap = t_eval.shape[0] if use_eval else max(nrec, 2)
    ts = np.empty(cap)
    ys = np.empty((cap, N))
    k = 0
    stride = 1
    ie = 0
    if use_eval:
        while ie < t_eval.shape[0] and (t_eval[ie] - t0) * direction <= 0.0:
            ts[k] = t_eval[ie]
            ys[k, :] = y0
            k += 1
            ie += 1
    else:
        ts[0] = t0
        ys[0, :] = y0
        k = 1

    y = y0.copy()
    t = t0
    Kst = np.empty((7, N))
    Kst[0, :] = _augmented(rhs, y, P, d, var, fd)
    h = min(h0, hmax, span) if span > 0 else 0.0
    errold = 1e-4
    nsteps = 0
    nrej = 0
    g_old = ev(y[:d], E)
    status = DONE
    t_ev = np.nan
    y_ev = np.full(N, np.nan)
    resid = np.nan
    hmin_floor = 1e-14 * max(1.0, span)
    while abs(t - t0) < span:
        if nsteps >= max_steps:
            status = MAX_STEPS
            break
        remaining = span - abs(t - t0)
        if h > remaining:
            h = remaining
        if h < hmin_floor and h < remaining:
            status = STEP_FAILURE
            break
        hs = direction * h
        for s in range(1, 7):
            yi = y.copy()
            for j in range(s):
                a = _A[s, j]
                if a != 0.0:
                    for i in range(N):
                        yi[i] += hs * a * Kst[j, i]
            Kst[s, :] = _augmented(rhs, yi, P, d, var, fd)
        ynew = y.copy()
        for j in range(6):
            for i in range(N):
                ynew[i] += hs * _B[j] * Kst[j, i]
        errsum = 0.0
        finite = True
        for i in range(N):
            e = 0.0
            for s in range(7):
                e += _E[s] * Kst[s, i]
            e *= hs
            sc = tol * (1.0 + max(abs(y[i]), abs(ynew[i])))
            errsum += (e / sc) ** 2
            if not np.isfinite(ynew[i]):
                finite = False
        err = math.sqrt(errsum / N)
        if not finite or not np.isfinite(err):
            h *= _MIN_FACTOR
            nrej += 1
            continue
        if err > 1.0:
            h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
            nrej += 1
            continue

        # event screening on the accepted step, including interior samples
        if has_ev:
            g_new = ev(ynew[:d], E)
            crossed = -1
            ta = 0.0
            ga = g_old
            if g_old < 0.0:
                for q in range(1, 5):
                    th = q * 0.25
                    gq = g_new if q == 4 else ev(_dense(y, Kst, hs, th)[:d], E)
                    if gq >= 0.0:
                        crossed = q
                        break
                    ta = th
                    ga = gq
            if crossed > 0:
                tb = crossed * 0.25
                gb = g_new if crossed == 4 else ev(_dense(y, Kst, hs, tb)[:d], E)
                if crossed < 4 and g_new < 0.0:
                    # in-and-out within one step: retry finer before trusting it
                    if h > 1e-9 * max(1.0, span):
                        h *= 0.1
                        nrej += 1
                        continue
                    th_, yv, r = _locate(ev, E, y, Kst, hs, d, ta, tb, ga, gb)
                    t_ev = t + th_ * hs
                    y_ev = yv
                    resid = r
                    y = yv
                    t = t_ev
                    nsteps += 1
                    status = GRAZING
                    break
                th_, yv, r = _locate(ev, E, y, Kst, hs, d, ta, tb, ga, gb)
                t_ev = t + th_ * hs
                y_ev = yv
                resid = r
                if use_eval:
                    while ie < t_eval.shape[0] and (t_eval[ie] - t_ev) * direction <= 0.0:
                        ts[k] = t_eval[ie]
                        ys[k, :] = _dense(y, Kst, hs, (t_eval[ie] - t) / hs)
                        k += 1
                        ie += 1
                y = yv
                t = t_ev
                nsteps += 1
                status = EVENT
                break
            g_old = g_new

        if use_eval:
            while ie < t_eval.shape[0] and (t_eval[ie] - (t + hs)) * direction <= 0.0:
                ts[k] = t_eval[ie]
                ys[k, :] = _dense(y, Kst, hs, (t_eval[ie] - t) / hs)
                k += 1
                ie += 1

        t = t + hs
        if abs(t - t0) >= span * (1.0 - 1e-15):
            t = t_end
        y = ynew
        Kst[0, :] = Kst[6, :]
        nsteps += 1
        if not use_eval and nrec > 0 and nsteps % stride == 0:
            if k == cap:
                k = _compact(ts, ys, k)
                stride *= 2
            if nsteps % stride == 0:
                ts[k] = t
                ys[k, :] = y
                k += 1

        if err == 0.0:
            fac = _MAX_FACTOR
        else:
            fac = _SAFETY * err ** (-0.7 / 5.0) * errold ** (0.4 / 5.0)
            fac = min(_MAX_FACTOR, max(_MIN_FACTOR, fac))
        errold = max(err, 1e-4)
        h = min(h * fac, hmax)

    if not use_eval:
        if k == 0 or ts[k - 1] != t:
            if k == cap:
                k = _compact(ts, ys, k)
            ts[k] = t
            ys[k, :] = y
            k += 1
    return status, t, y, nsteps, nrej, ts[:k].copy(), ys[:k].copy(), t_ev, y_ev, resid


# --------------------------------------------------------------------------
# Python surface


class Field:
    """A vector field ``kernel(y, params)`` with frozen parameters.

    ``kernel`` is a numba function; ``Field`` objects are immutable and safe to
    share between workers.
    """

    def __init__(self, kernel, params, dim: int, name: str = ""):
        self.kernel = kernel
        self.params = np.ascontiguousarray(params, dtype=np.float64)
        self.params.setflags(write=False)
        self.dim = int(dim)
        self.name = name or getattr(kernel, "__name__", "field")

    def __call__(self, p) -> np.ndarray:
        return self.kernel(np.ascontiguousarray(p, dtype=np.float64), self.params)

    def __repr__(self):
        return f"Field({self.name}, dim={self.dim})"


def _python_namespace():
    # Same core, uncompiled: rebuild the pure functions against a namespace
    # in which every helper is the pure version too.
    names = ("_no_event", "box_face_distance", "_augmented", "_dense", "_locate",
             "_compact", "dp5_core")
    ns = dict(globals())
    for name in names:
        f = globals()[name].py_func
        ns[name] = types.FunctionType(f.__code__, ns, name, f.__defaults__, f.__closure__)
    return ns


_PY = _python_namespace()


def _resolve(field):
    if isinstance(field, Field):
        return dp5_core, field.kernel, field.params
    fn = field

    def rhs(y, P):
        return np.asarray(fn(y), dtype=np.float64)

    return _PY["dp5_core"], rhs, np.zeros(1)


def _run(field, p0, t0, t_end, tol, max_step, ev=None, E=None, var=False,
         fd=1e-6, nrec=100_000, t_eval=None, h0=None, max_steps=10**10):
    if tol <= 0:
        raise ValueError("tol must be positive")
    p0 = np.ascontiguousarray(p0, dtype=np.float64)
    if not np.all(np.isfinite(p0)):
        raise ValueError("initial state must be finite")
    core, rhs, P = _resolve(field)
    d = p0.size
    y0 = p0
    if var:
        y0 = np.concatenate([p0, np.eye(d).ravel()])
    has_ev = ev is not None
    if ev is None:
        ev = _no_event
        E = np.zeros(1)
    if core is not dp5_core:
        ev = _PY.get(getattr(ev, "__name__", ""), getattr(ev, "py_func", ev))
    hmax = float(max_step) if max_step is not None else math.inf
    if h0 is None:
        h0 = min(1e-3, hmax)
    te = np.empty(0) if t_eval is None else np.ascontiguousarray(t_eval, dtype=np.float64)
    return core(rhs, P, ev, np.ascontiguousarray(E, dtype=np.float64), has_ev, y0,
                float(t0), float(t_end), float(tol), float(h0), hmax, d,
                1 if var else 0, float(fd), int(nrec), te, int(max_steps))


@dataclass
class Trajectory:
    """Time-stamped samples of one integration."""

    t: np.ndarray
    y: np.ndarray
    status: str = "done"
    nsteps: int = 0
    nrejected: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]

    def __len__(self):
        return self.t.size


def integrate(field, p0, t_end, tol=1e-10, *, t0=0.0, max_step=None,
              t_eval=None, nrec=100_000, max_steps=10**10) -> Trajectory:
    """Adaptive DP5(4) trajectory from ``p0``; raises StepFailure on underflow."""
    status, t, y, ns, nr, ts, ys, *_ = _run(field, p0, t0, t_end, tol, max_step,
                                            nrec=nrec, t_eval=t_eval, max_steps=max_steps)
    if status == STEP_FAILURE:
        raise StepFailure(f"step size underflow at t={t:.17g}")
    return Trajectory(ts, ys, "done" if status == DONE else "max_steps", ns, nr)


@dataclass(frozen=True)
class BoxRegion:
    """D x I: a transverse disc of ``radius`` (all coordinates of the block but z)
    times the interval [z0, z1].  ``z_index`` locates z; coordinates at or past
    ``block`` (e.g. the product parameter u) are ignored."""

    radius: float
    z0: float
    z1: float
    z_index: int
    block: int

    def face_distance(self, p) -> float:
        return float(box_face_distance(np.asarray(p, dtype=np.float64), self.event_params))

    def contains(self, p, closed=True) -> bool:
        d = self.face_distance(p)
        return d <= 0.0 if closed else d < 0.0

    @property
    def event_params(self) -> np.ndarray:
        return np.array([self.radius, self.z0, self.z1, self.z_index, self.block], dtype=np.float64)


TRAVERSED, TRAPPED, SIDE_EXIT, GRAZE, FAILED = "Traversed", "Trapped", "SideExit", "Grazing", "Failed"


@dataclass
class TraverseRecord:
    entry: np.ndarray
    status: str
    exit: np.ndarray | None
    transit_time: float
    face_residual: float
    nsteps: int = 0
    extra: dict = dc_field(default_factory=dict)
    samples: "Trajectory | None" = dc_field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "entry": [float(v) for v in self.entry],
            "status": self.status,
            "exit": None if self.exit is None else [float(v) for v in self.exit],
            "transit_time": float(self.transit_time),
            "face_residual": float(self.face_residual),
            "nsteps": int(self.nsteps),
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TraverseRecord":
        return cls(np.array(obj["entry"]), obj["status"],
                   None if obj["exit"] is None else np.array(obj["exit"]),
                   obj["transit_time"], obj["face_residual"], obj.get("nsteps", 0),
                   obj.get("extra", {}))


def integrate_until_exit(field, box: BoxRegion, p0, t_max=1e4, tol=1e-10, *,
                         max_step=None, t0=0.0, nrec=0) -> TraverseRecord:
    """Follow ``p0`` until it leaves ``box`` through a face or ``t_max`` elapses.

    With ``nrec > 0`` a thinned trajectory of at most ``nrec`` samples is
    attached as ``record.samples``.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    if box.face_distance(p0) > 1e-12:
        raise ValueError("initial point lies outside the closed box")
    try:
        status, t, y, ns, nr, ts, ys, t_ev, y_ev, resid = _run(
            field, p0, t0, t0 + t_max, tol, max_step, ev=box_face_distance,
            E=box.event_params, nrec=nrec)
    except Exception as exc:  # field errors are recorded, not fatal to a scan
        return TraverseRecord(p0, FAILED, None, math.nan, math.nan, 0, {"error": repr(exc)})
    rec = _classify(box, p0, status, t - t0, y, ns, t_ev - t0, y_ev, resid)
    if nrec > 0:
        rec.samples = Trajectory(ts, ys, rec.status, ns, nr)
    return rec


def _classify(box, p0, status, dt, y, ns, dt_ev, y_ev, resid):
    if status == STEP_FAILURE:
        return TraverseRecord(p0, FAILED, None, dt, math.nan, ns, {"error": "step underflow"})
    if status == GRAZING:
        return TraverseRecord(p0, GRAZE, y_ev, dt_ev, resid, ns)
    if status == EVENT:
        top = abs(y_ev[box.z_index] - box.z1) <= 1e-9
        return TraverseRecord(p0, TRAVERSED if top else SIDE_EXIT, y_ev, dt_ev, resid, ns)
    if box.face_distance(y) >= 0.0:
        return TraverseRecord(p0, GRAZE, y, dt, box.face_distance(y), ns)
    return TraverseRecord(p0, TRAPPED, None, dt, box.face_distance(y), ns,
                          {"final": [float(v) for v in y]})


def flow_jacobian(field, p0, T, tol=1e-10, *, fd_step=1e-6, max_step=None) -> np.ndarray:
    """Derivative of the time-T flow map at ``p0`` from the variational equations."""
    p0 = np.asarray(p0, dtype=np.float64)
    status, t, y, *_ = _run(field, p0, 0.0, T, tol, max_step, var=True, fd=fd_step, nrec=0)
    if status == STEP_FAILURE:
        raise StepFailure(f"step size underflow at t={t:.17g}")
    d = p0.size
    return y[d:].reshape(d, d).copy()


def flow_map(field, p0, T, tol=1e-10, *, max_step=None) -> np.ndarray:
    status, t, y, *_ = _run(field, p0, 0.0, T, tol, max_step, nrec=0)
    if status == STEP_FAILURE:
        raise StepFailure(f"step size underflow at t={t:.17g}")
    return y



@nb.njit(cache=True)
def _batch(rhs, P, pts):
    out = np.empty_like(pts)
    for i in range(pts.shape[0]):
        out[i, :] = rhs(pts[i].copy(), P)
    return out


def eval_batch(field, pts) -> np.ndarray:
    """Field values at the rows of ``pts``."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if isinstance(field, Field):
        return _batch(field.kernel, field.params, pts)
    return np.array([field(p) for p in pts])
