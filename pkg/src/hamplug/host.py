"""Ellipsoid host flow, a flow-box chart around one of its periodic orbits, and
plug insertion.

Host: C^n with coordinates (x1, y1, ..., xn, yn), omega = sum dx_j ^ dy_j and
K = sum a_j (x_j^2 + y_j^2).  X_K rotates plane j with angular speed 2 a_j.

Chart around Gamma_j: the transverse slice is {y_j = 0, x_j > 0} inside the
level K = k, parameterized by the other coordinates q (x_j solved from K = k);
Psi(q, z) is the host flow for time z of that lift.  On the slice omega
restricts to sum_{i != j} dx_i ^ dy_i exactly, and the flow preserves omega.

Insertion: plug coordinates (x_p, z_p) sit in the chart as
q = mu (x_p - offset), z = nu z_p.  In chart coordinates the inserted field is
(mu/nu v_x, v_z) for the plug field v, i.e. the plug field conjugated by the
linear map and slowed by nu; where v = d/dz it is d/dz, so the ambient field
is X_K there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .geometry import ScalarField, hamiltonian_field
from .integrate import Field, integrate, _run, EVENT
from .linalg import solve_small
from .plug import PlugGeometry, parallel_map, plug_kernel
from .report import VerificationReport
from .trap import primes

__all__ = [
    "EllipsoidHost", "PeriodicOrbit", "FlowBoxChart", "EmbeddingFailure", "InversionFailure",
    "host_field", "host_field_generic", "periodic_orbit", "build_flow_box", "insert_plug",
    "InsertedPlug", "demo_open_orbit",
]


class EmbeddingFailure(RuntimeError):
    pass


class InversionFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def host_kernel(p, A):
    out = np.empty(p.shape[0])
    for j in range(A.shape[0]):
        out[2 * j] = -2.0 * A[j] * p[2 * j + 1]
        out[2 * j + 1] = 2.0 * A[j] * p[2 * j]
    return out


@nb.njit(cache=True)
def _K(p, A):
    s = 0.0
    for j in range(A.shape[0]):
        s += A[j] * (p[2 * j] ** 2 + p[2 * j + 1] ** 2)
    return s


@nb.njit(cache=True)
def chart_point(q, z, k, A, j):
    """Psi_k(q, z): host flow for time z of the slice point over q."""
    n = A.shape[0]
    p = np.zeros(2 * n)
    rest = k
    i_q = 0
    for i in range(n):
        if i == j:
            continue
        rest -= A[i] * (q[i_q] ** 2 + q[i_q + 1] ** 2)
        c = math.cos(2.0 * A[i] * z)
        s = math.sin(2.0 * A[i] * z)
        p[2 * i] = c * q[i_q] - s * q[i_q + 1]
        p[2 * i + 1] = s * q[i_q] + c * q[i_q + 1]
        i_q += 2
    if rest <= 0.0:
        return p, False
    xj = math.sqrt(rest / A[j])
    p[2 * j] = math.cos(2.0 * A[j] * z) * xj
    p[2 * j + 1] = math.sin(2.0 * A[j] * z) * xj
    return p, True


@nb.njit(cache=True)
def chart_jacobian(q, z, k, A, j):
    """d Psi_k / d(q, z), shape (2n, 2n-1); last column is X_K."""
    n = A.shape[0]
    J = np.zeros((2 * n, 2 * n - 1))
    p, ok = chart_point(q, z, k, A, j)
    rest = k
    i_q = 0
    for i in range(n):
        if i == j:
            continue
        rest -= A[i] * (q[i_q] ** 2 + q[i_q + 1] ** 2)
        i_q += 2
    xj = math.sqrt(max(rest, 1e-300) / A[j])
    cj = math.cos(2.0 * A[j] * z)
    sj = math.sin(2.0 * A[j] * z)
    i_q = 0
    for i in range(n):
        if i == j:
            continue
        c = math.cos(2.0 * A[i] * z)
        s = math.sin(2.0 * A[i] * z)
        J[2 * i, i_q] = c
        J[2 * i + 1, i_q] = s
        J[2 * i, i_q + 1] = -s
        J[2 * i + 1, i_q + 1] = c
        for t in range(2):
            dx = -A[i] * q[i_q + t] / (A[j] * xj)
            J[2 * j, i_q + t] = cj * dx
            J[2 * j + 1, i_q + t] = sj * dx
        i_q += 2
    X = host_kernel(p, A)
    for r in range(2 * n):
        J[r, 2 * n - 2] = X[r]
    return J


@nb.njit(cache=True)
def chart_inverse(p, A, j, zmax, newton_tol):
    """(q, z, k, ok): level-adapted inverse with phase predictor and damped Newton."""
    n = A.shape[0]
    q = np.zeros(2 * n - 2)
    rj2 = p[2 * j] ** 2 + p[2 * j + 1] ** 2
    if rj2 <= 0.0:
        return q, 0.0, 0.0, False
    z = math.atan2(p[2 * j + 1], p[2 * j]) / (2.0 * A[j])
    if abs(z) > zmax:
        return q, z, 0.0, False
    k = _K(p, A)
    i_q = 0
    for i in range(n):
        if i == j:
            continue
        c = math.cos(2.0 * A[i] * z)
        s = math.sin(2.0 * A[i] * z)
        q[i_q] = c * p[2 * i] + s * p[2 * i + 1]
        q[i_q + 1] = -s * p[2 * i] + c * p[2 * i + 1]
        i_q += 2
    # Newton on the (consistent) overdetermined system Psi_k(q, z) = p
    x = np.empty(2 * n - 1)
    x[:2 * n - 2] = q
    x[2 * n - 2] = z
    P, ok = chart_point(x[:2 * n - 2], x[2 * n - 2], k, A, j)
    res = 0.0
    for r in range(2 * n):
        res = max(res, abs(P[r] - p[r]))
    it = 0
    while res > newton_tol and it < 20:
        J = chart_jacobian(x[:2 * n - 2], x[2 * n - 2], k, A, j)
        JtJ = J.T @ J
        rhs = J.T @ (p - P)
        dx = solve_small(JtJ, rhs)
        step = 1.0
        improved = False
        for _ in range(30):
            xt = x + step * dx
            Pt, okt = chart_point(xt[:2 * n - 2], xt[2 * n - 2], k, A, j)
            rt = 0.0
            for r in range(2 * n):
                rt = max(rt, abs(Pt[r] - p[r]))
            if okt and rt < res:
                x, P, res, improved = xt, Pt, rt, True
                break
            step *= 0.5
        if not improved:
            break
        it += 1
    if res > 1e3 * newton_tol:
        return x[:2 * n - 2].copy(), x[2 * n - 2], k, False
    return x[:2 * n - 2].copy(), x[2 * n - 2], k, True


@nb.njit(cache=True)
def inserted_kernel(p, CP):
    """CP = [n, j, a_1..a_n, chart_delta, chart_eps, mu, nu, offset(2n-2), plug P...]."""
    n = int(CP[0])
    j = int(CP[1])
    A = CP[2:2 + n]
    base = 2 + n
    ceps, mu, nu = CP[base + 1], CP[base + 2], CP[base + 3]
    off = CP[base + 4:base + 4 + 2 * n - 2]
    P = CP[base + 4 + 2 * n - 2:]
    delta, eps = P[0], P[1]
    X = host_kernel(p, A)
    q, z, k, ok = chart_inverse(p, A, j, ceps, 1e-14)
    if not ok:
        return X
    zp = z / nu
    if abs(zp) > eps:
        return X
    d = 2 * n - 1
    xp = np.empty(d)
    r2 = 0.0
    for i in range(2 * n - 2):
        xp[i] = q[i] / mu + off[i]
        r2 += xp[i] * xp[i]
    if r2 > delta * delta:
        return X
    xp[d - 1] = zp
    v = plug_kernel(xp, P)
    trivial = v[d - 1] == 1.0
    for i in range(d - 1):
        if v[i] != 0.0:
            trivial = False
    if trivial:
        return X
    J = chart_jacobian(q, z, k, A, j)
    w = np.empty(d)
    for i in range(d - 1):
        w[i] = mu / nu * v[i]
    w[d - 1] = v[d - 1]
    return J @ w


@nb.njit(cache=True)
def phase_event(y, E):
    """Chart time along Gamma_j's phase minus a target: E = [a_j, j, target]."""
    j = int(E[1])
    return math.atan2(y[2 * j + 1], y[2 * j]) / (2.0 * E[0]) - E[2]


# --------------------------------------------------------------------------
# Python surface


@dataclass(frozen=True)
class EllipsoidHost:
    n: int = 3
    coeffs: tuple = field(default=None)

    def __post_init__(self):
        if self.coeffs is None:
            object.__setattr__(self, "coeffs", tuple(math.sqrt(p) for p in primes(self.n)))
        if len(self.coeffs) != self.n or min(self.coeffs) <= 0:
            raise ValueError("need n positive coefficients")

    @property
    def A(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=np.float64)

    def K(self, p) -> float:
        return float(_K(np.asarray(p, dtype=np.float64), self.A))

    def dK(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return 2.0 * np.repeat(self.A, 2) * p

    def scalar_field(self) -> ScalarField:
        return ScalarField(self.K, self.dK)

    def omega(self) -> np.ndarray:
        W = np.zeros((2 * self.n, 2 * self.n))
        for i in range(0, 2 * self.n, 2):
            W[i, i + 1] = 1.0
            W[i + 1, i] = -1.0
        return W

    def field(self) -> Field:
        return Field(host_kernel, self.A, 2 * self.n, "ellipsoid")


def host_field(host: EllipsoidHost, p=None):
    fld = host.field()
    return fld if p is None else fld(p)


def host_field_generic(host: EllipsoidHost, p) -> np.ndarray:
    return hamiltonian_field(host.omega(), host.scalar_field(), p)


@dataclass(frozen=True)
class PeriodicOrbit:
    j: int
    radius: float
    period: float
    speed: float

    def point(self, t: float, n: int) -> np.ndarray:
        p = np.zeros(2 * n)
        p[2 * self.j] = self.radius * math.cos(self.speed * t)
        p[2 * self.j + 1] = self.radius * math.sin(self.speed * t)
        return p

    def distance(self, p, n: int) -> float:
        """Distance from p to the circle (closed form)."""
        p = np.asarray(p, dtype=np.float64)
        r = math.hypot(p[2 * self.j], p[2 * self.j + 1])
        other = float(np.sum(p ** 2)) - r * r
        return math.sqrt(max(other, 0.0) + (r - self.radius) ** 2)


def periodic_orbit(host: EllipsoidHost, j: int) -> PeriodicOrbit:
    """Gamma_j (1-based): circle of radius 1/sqrt(a_j) in plane j, period pi/a_j."""
    if not 1 <= j <= host.n:
        raise IndexError(f"orbit index {j} outside 1..{host.n}")
    a = host.coeffs[j - 1]
    return PeriodicOrbit(j - 1, 1.0 / math.sqrt(a), math.pi / a, 2.0 * a)


@dataclass(frozen=True)
class FlowBoxChart:
    host: EllipsoidHost
    j: int               # 0-based plane index of the orbit
    delta: float
    eps: float

    @property
    def base_point(self) -> np.ndarray:
        return self.point(np.zeros(2 * self.host.n - 2), 0.0)

    def point(self, q, z, k: float = 1.0) -> np.ndarray:
        p, ok = chart_point(np.asarray(q, dtype=np.float64), float(z), float(k), self.host.A, self.j)
        if not ok:
            raise EmbeddingFailure("transverse point leaves the level set")
        return p

    def jacobian(self, q, z, k: float = 1.0) -> np.ndarray:
        return chart_jacobian(np.asarray(q, dtype=np.float64), float(z), float(k), self.host.A, self.j)

    def inverse(self, p, tol: float = 1e-14):
        q, z, k, ok = chart_inverse(np.asarray(p, dtype=np.float64), self.host.A, self.j,
                                    self.eps, tol)
        if not ok:
            raise InversionFailure("chart inversion did not converge or point is outside the chart")
        return q, z, k

    def contains(self, p) -> bool:
        q, z, k, ok = chart_inverse(np.asarray(p, dtype=np.float64), self.host.A, self.j,
                                    self.eps, 1e-14)
        return bool(ok and abs(z) <= self.eps and np.linalg.norm(q) <= self.delta)

    def pulled_back_omega(self, q, z) -> np.ndarray:
        J = self.jacobian(q, z)
        return J.T @ self.host.omega() @ J

    def pushforward_host(self, q, z) -> np.ndarray:
        """Chart components of X_K (least squares on the tangent image)."""
        J = self.jacobian(q, z)
        X = host_kernel(self.point(q, z), self.host.A)
        return np.linalg.lstsq(J, X, rcond=None)[0]


def build_flow_box(host: EllipsoidHost, j: int, delta: float, eps: float, *,
                   samples: int = 400, seed: int = 0) -> FlowBoxChart:
    """Flow-box chart around Gamma_j (1-based) with transverse radius delta and
    half-length eps; raises EmbeddingFailure if the sampled chart is not embedded."""
    if not 1 <= j <= host.n:
        raise IndexError(f"orbit index {j} outside 1..{host.n}")
    a = host.A
    jj = j - 1
    others = np.delete(a, jj)
    if np.max(others) * delta ** 2 >= 1.0:
        raise EmbeddingFailure("chart disc leaves the level set; shrink delta")
    if eps >= math.pi / (2 * a[jj]):
        raise EmbeddingFailure("chart half-length reaches half the orbit period; shrink eps")
    chart = FlowBoxChart(host, jj, float(delta), float(eps))
    rng = np.random.default_rng(seed)
    dom = []
    while len(dom) < samples:
        q = rng.uniform(-delta, delta, 2 * host.n - 2)
        if np.linalg.norm(q) <= delta:
            dom.append(np.append(q, rng.uniform(-eps, eps)))
    dom = np.array(dom)
    img = np.array([chart.point(d[:-1], d[-1]) for d in dom])
    dd = np.linalg.norm(dom[:, None, :] - dom[None, :, :], axis=2)
    di = np.linalg.norm(img[:, None, :] - img[None, :, :], axis=2)
    iu = np.triu_indices(samples, 1)
    ratio = di[iu] / dd[iu]
    if ratio.min() < 1e-3:
        raise EmbeddingFailure(f"chart samples nearly collide (ratio {ratio.min():.3g})")
    for d in dom[:50]:
        q, z, _ = chart.inverse(chart.point(d[:-1], d[-1]))
        if np.max(np.abs(np.append(q, z) - d)) > 1e-10:
            raise EmbeddingFailure("chart inverse does not reproduce the sample")
    return chart


@dataclass(frozen=True)
class InsertedPlug:
    host: EllipsoidHost
    chart: FlowBoxChart
    geom: PlugGeometry
    mu: float
    nu: float
    offset: tuple

    @property
    def params(self) -> np.ndarray:
        h = self.host
        return np.concatenate([[h.n, self.chart.j], h.A,
                               [self.chart.delta, self.chart.eps, self.mu, self.nu],
                               np.asarray(self.offset, dtype=np.float64), self.geom.params])

    def field(self) -> Field:
        return Field(inserted_kernel, self.params, 2 * self.host.n, "host+plug")

    def to_plug(self, p) -> np.ndarray:
        q, z, _ = self.chart.inverse(p)
        return np.append(q / self.mu + np.asarray(self.offset), z / self.nu)

    def from_plug(self, xp, k: float = 1.0) -> np.ndarray:
        xp = np.asarray(xp, dtype=np.float64)
        q = self.mu * (xp[:-1] - np.asarray(self.offset))
        return self.chart.point(q, self.nu * xp[-1], k)

    def in_image(self, p) -> bool:
        """p lies in the image of the plug box B."""
        q, z, k, ok = chart_inverse(np.asarray(p, dtype=np.float64), self.host.A, self.chart.j,
                                    self.chart.eps, 1e-14)
        if not ok:
            return False
        xp = q / self.mu + np.asarray(self.offset)
        return bool(abs(z / self.nu) <= self.geom.eps and np.linalg.norm(xp) <= self.geom.delta)


def insert_plug(host: EllipsoidHost, chart: FlowBoxChart, geom: PlugGeometry, *, mu: float = 0.3,
                nu: float = 0.5, offset=None) -> InsertedPlug:
    """Composite field: X_K off the chart image, the conjugated plug field inside.

    ``offset`` is the plug entry point that Gamma_j passes through (defaults
    to the trapped entry over the torus at zero angles).
    """
    if offset is None:
        offset = np.zeros(geom.dim - 1)
        offset[0::2] = geom.trapped_radius()
    offset = np.asarray(offset, dtype=np.float64)
    reach = mu * (geom.delta + np.linalg.norm(offset))
    if reach > chart.delta or nu * geom.eps > chart.eps:
        raise EmbeddingFailure("plug box does not fit inside the chart; reduce mu or nu")
    return InsertedPlug(host, chart, geom, float(mu), float(nu), tuple(offset.tolist()))


# --------------------------------------------------------------------------
# demonstration


def _until_phase(fld, p0, aj, j, target, t_max, tol, max_step):
    E = np.array([aj, j, target], dtype=np.float64)
    status, t, y, ns, nr, ts, ys, t_ev, y_ev, resid = _run(
        fld, p0, 0.0, t_max, tol, max_step, ev=phase_event, E=E, nrec=0)
    if status != EVENT:
        return None, t
    return y_ev, t_ev


def _nearby_one(args):
    ins, fld, q, z0, tol, max_step = args
    aj = ins.host.A[ins.chart.j]
    p0 = ins.chart.point(q, -z0)
    y, t = _until_phase(fld, p0, aj, ins.chart.j, z0, 1e3, tol, max_step)
    if y is None:
        return {"q": q.tolist(), "status": "no-exit", "time": t, "error": math.inf}
    target = ins.chart.point(q, z0)
    return {"q": q.tolist(), "status": "exit", "time": t,
            "error": float(np.max(np.abs(y - target)))}


def demo_open_orbit(ins: InsertedPlug, *, t_max: float = 1e3, tol: float = 1e-12,
                    tol_nearby: float = 1e-10, nearby: int = 50, seed: int = 0,
                    nearby_radius=(0.05, 0.2), workers: int = 1, samples: int = 20_000) -> VerificationReport:
    """Before/after report for the orbit through the plug's aligned entry."""
    host, chart = ins.host, ins.chart
    orb = periodic_orbit(host, chart.j + 1)
    other = periodic_orbit(host, (chart.j + 1) % host.n + 1)
    hfld, cfld = host.field(), ins.field()
    z0 = chart.eps + 0.1
    p0 = chart.point(np.zeros(2 * host.n - 2), -z0)
    max_step = ins.nu * ins.geom.eps / 20

    # (a) before insertion
    pre = integrate(hfld, p0, orb.period, 1e-12, nrec=0).final
    a_dist = float(np.linalg.norm(pre - p0))

    # (b) after insertion
    ts = np.linspace(0.0, t_max, samples + 1)
    tr = integrate(cfld, p0, t_max, tol, t_eval=ts, max_step=max_step)
    d0 = np.linalg.norm(tr.y - p0, axis=1)
    left = np.argmax(d0 > 1e-3)
    ret = float(d0[left:].min()) if left > 0 else math.inf
    inside = np.array([ins.in_image(y) for y in tr.y])
    first = int(np.argmax(inside)) if inside.any() else len(inside)
    confined = bool(inside.any() and inside[first:].all())
    Kdrift = float(max(abs(host.K(y) - 1.0) for y in tr.y))
    xp_final = ins.to_plug(tr.y[-1]) if inside[-1] else None
    b_ok = ret > 1e-3 and confined

    # (c) nearby entries
    rng = np.random.default_rng(seed)
    qs = []
    while len(qs) < nearby:
        d = rng.normal(size=2 * host.n - 2)
        d *= rng.uniform(*nearby_radius) / np.linalg.norm(d)
        qs.append(ins.mu * d)
    res = parallel_map(_nearby_one, [(ins, cfld, q, z0, tol_nearby, max_step) for q in qs], workers)
    c_err = float(max(r["error"] for r in res))

    # Gamma_2 (next orbit) unaffected
    p2 = other.point(0.0, host.n)
    post2 = integrate(cfld, p2, other.period, 1e-12, nrec=0, max_step=max_step).final
    g2 = float(np.linalg.norm(post2 - p2))

    checks = {"a": a_dist <= 1e-8, "b": b_ok, "c": c_err <= 1e-5, "other_orbit": g2 <= 1e-8}
    return VerificationReport(
        "host.open_orbit", all(checks.values()),
        {"pre_return_distance": a_dist, "post_min_return_distance": ret,
         "confined_after_entry": confined, "nearby_max_exit_error": c_err,
         "other_orbit_return_distance": g2, "energy_drift": Kdrift},
        {"t_max": t_max, "tol": tol, "tol_nearby": tol_nearby, "mu": ins.mu, "nu": ins.nu,
         "chart_delta": chart.delta, "chart_eps": chart.eps, "offset": list(ins.offset),
         "orbit": chart.j + 1, "trap_amplitude": ins.geom.profile.a},
        {"checks": checks, "entry_time": float(tr.t[first]) if first < len(tr.t) else None,
         "final_plug_point": None if xp_final is None else xp_final.tolist(),
         "nearby": res})
