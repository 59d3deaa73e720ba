"""Trap profile H, its Clifford torus and the Reeb field of alpha_st/H.

The profile is rotationally symmetric, H = h(u_1, ..., u_m, z) with
u_j = x_j^2 + y_j^2 and m = n - 1.  Writing

    L = sum beta_j u_j,   ell = log(L / L0),   L0 = c^2 sum beta_j,
    S = sum u_j,          Q = sum (u_j/S - 1/m)^2,

it is

    H = 1 + a rho(z) (k chi(ell) Q - M(ell)),   M = -(ell + ell^2/2) C(ell),

with compactly supported bumps rho, C, chi.  Since sum u_j d/du_j acts on
functions of ell as d/dell and kills Q (degree 0), the vertical Reeb
component is

    G = H - sum u_j h_{u_j} = 1 - a rho phi(ell) + a k rho Q (chi - chi'),
    phi = (1 - ell^2/2) C + (ell + ell^2/2) C' <= 1,

with equality in phi only at ell = 0.  So G vanishes only where rho = 1,
ell = 0 and Q = 0: on the torus u_j = c^2, z = 0.  There the flow is
linear with angular speeds 2 a beta_j / L0, and the cylinder over the torus
{u_j = c^2, z < 0} is invariant (M(0) = 0 and Q = 0 make h_z vanish on it),
which gives the trapped orbits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .geometry import Dimension, scaled_reeb_kernel
from .integrate import Field, integrate

__all__ = [
    "TrapProfile", "Placement", "CliffordTorus", "MeasurementMismatch", "primes",
    "eval_H", "eval_G", "torus_distance", "torus_frequencies", "trap_field",
    "unplaced_reeb", "G_rotational", "eval_HG_batch",
]


class MeasurementMismatch(RuntimeError):
    pass


def primes(count: int) -> list[int]:
    out, k = [], 2
    while len(out) < count:
        if all(k % p for p in out if p * p <= k):
            out.append(k)
        k += 1
    return out


# --------------------------------------------------------------------------
# kernels.  TP = [m, c, Z, sigma, plateau, ell_b, ell_c, k, a, r0, beta_1..beta_m]


@nb.njit(cache=True)
def bump(t, s):
    """exp(s (1 - 1/(1 - t^2))) on |t| < 1, else 0; value and d/dt."""
    if abs(t) >= 1.0:
        return 0.0, 0.0
    q = 1.0 - t * t
    v = math.exp(s * (1.0 - 1.0 / q))
    return v, v * s * (-2.0 * t / (q * q))


@nb.njit(cache=True)
def plateau_step(t, t0):
    """Smooth even step: 1 on |t| <= t0, 0 on |t| >= 1; value and d/dt."""
    at = abs(t)
    if at <= t0:
        return 1.0, 0.0
    if at >= 1.0:
        return 0.0, 0.0
    w = 1.0 / (1.0 - t0)
    v = (at - t0) * w
    fa = math.exp(-1.0 / (1.0 - v))
    fb = math.exp(-1.0 / v)
    den = fa + fb
    dfa = fa / (1.0 - v) ** 2
    dfb = fb / (v * v)
    dv = -(dfa * fb + fa * dfb) / (den * den) * w
    return fa / den, dv if t > 0 else -dv


@nb.njit(cache=True)
def rho_kernel(z, Zw, sigma, t0):
    S, dS = plateau_step(z / Zw, t0)
    if S == 0.0:
        return 0.0, 0.0
    g = math.exp(-sigma * z * z)
    return g * S, g * (dS / Zw - 2.0 * sigma * z * S)


@nb.njit(cache=True)
def h_kernel(p, TP):
    """H and its gradient (state ordering) of the unplaced profile."""
    d = p.shape[0]
    m = (d - 1) // 2
    dH = np.zeros(d)
    r2 = 0.0
    for i in range(d):
        r2 += p[i] * p[i]
    a = TP[8]
    if a == 0.0 or r2 >= TP[9] * TP[9]:
        return 1.0, dH
    c, lb, lc, k = TP[1], TP[5], TP[6], TP[7]
    rho, drho = rho_kernel(p[d - 1], TP[2], TP[3], TP[4])
    if rho == 0.0:
        return 1.0, dH
    L = 0.0
    L0 = 0.0
    S = 0.0
    for j in range(m):
        u = p[2 * j] ** 2 + p[2 * j + 1] ** 2
        L += TP[10 + j] * u
        L0 += TP[10 + j]
        S += u
    L0 *= c * c
    if L <= 0.0:
        return 1.0, dH
    ell = math.log(L / L0)
    C, dC = plateau_step(ell / lb, 0.0)
    chi, dchi = plateau_step(ell / lc, 0.0)
    if chi == 0.0 and C == 0.0:
        return 1.0, dH
    dC /= lb
    dchi /= lc
    M = -(ell + 0.5 * ell * ell) * C
    Ml = -(1.0 + ell) * C - (ell + 0.5 * ell * ell) * dC
    inv_m = 1.0 / m
    Q = 0.0
    mean = 0.0
    for j in range(m):
        u = p[2 * j] ** 2 + p[2 * j + 1] ** 2
        e = u / S - inv_m
        Q += e * e
        mean += (u / S) * e
    core = k * chi * Q - M
    H = 1.0 + a * rho * core
    for j in range(m):
        u = p[2 * j] ** 2 + p[2 * j + 1] ** 2
        Qu = 2.0 / S * ((u / S - inv_m) - mean)
        bl = TP[10 + j] / L
        hu = a * rho * (k * dchi * bl * Q + k * chi * Qu - Ml * bl)
        dH[2 * j] = 2.0 * p[2 * j] * hu
        dH[2 * j + 1] = 2.0 * p[2 * j + 1] * hu
    dH[d - 1] = a * drho * core
    return H, dH


@nb.njit(cache=True)
def placed_h_kernel(q, PP):
    """H o f^{-1} for f(p) = (lam x, lam^2 z + zc); PP = [lam, zc, TP...]."""
    lam = PP[0]
    d = q.shape[0]
    p = q / lam
    p[d - 1] = (q[d - 1] - PP[1]) / (lam * lam)
    H, dH = h_kernel(p, PP[2:])
    for i in range(d - 1):
        dH[i] /= lam
    dH[d - 1] /= lam * lam
    return H, dH


@nb.njit(cache=True)
def g_kernel(p, H, dH):
    d = p.shape[0]
    G = H
    for i in range(d - 1):
        G -= 0.5 * p[i] * dH[i]
    return G


@nb.njit(cache=True)
def trap_reeb_kernel(q, PP):
    """Reeb field of alpha_st / (H o f^{-1}); exactly d/dz where H short-circuits."""
    H, dH = placed_h_kernel(q, PP)
    if H == 1.0:
        flat = True
        for i in range(dH.shape[0]):
            if dH[i] != 0.0:
                flat = False
                break
        if flat:
            out = np.zeros(q.shape[0])
            out[-1] = 1.0
            return out
    return scaled_reeb_kernel(q, H, dH)


# --------------------------------------------------------------------------
# Python surface


@dataclass(frozen=True)
class TrapProfile:
    """Shape parameters of H.

    ``c`` torus radius; the z-profile is exp(-sigma z^2) times a smooth
    step equal to 1 on |z| <= plateau*Z and 0 on |z| >= Z; ``ell_b`` / ``ell_c`` half-widths (in ell) of the
    deformation and of the penalty cutoff, ``k`` penalty weight, ``a``
    amplitude (a = 0 gives H = 1).
    """

    n: int = 3
    c: float = 0.5
    Z: float = 0.76
    sigma: float = 0.1
    plateau: float = 0.5
    ell_b: float = 0.25
    ell_c: float = 0.35
    k: float = 0.05
    a: float = 1.0
    betas: tuple = field(default=None)

    def __post_init__(self):
        Dimension(self.n)
        if self.betas is None:
            object.__setattr__(self, "betas", tuple(math.sqrt(p) for p in primes(self.n - 1)))
        if len(self.betas) != self.n - 1 or min(self.betas) <= 0:
            raise ValueError("betas must be n-1 positive numbers")
        for name in ("c", "Z", "sigma", "ell_b", "ell_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.plateau < 1:
            raise ValueError("plateau must lie in [0, 1)")
        if not self.ell_c > self.ell_b:
            raise ValueError("ell_c must exceed ell_b")
        if not (0 <= self.a <= 1 and 0 <= self.k <= 0.1):
            raise ValueError("need 0 <= a <= 1 and 0 <= k <= 0.1")

    @property
    def m(self) -> int:
        return self.n - 1

    @property
    def L0(self) -> float:
        return self.c ** 2 * sum(self.betas)

    @property
    def support_radius(self) -> float:
        """H = 1 outside this ball (H - 1 needs |z| < Z and ell < ell_c)."""
        umax = self.L0 * math.exp(self.ell_c) / min(self.betas)
        return math.sqrt(umax + self.Z ** 2)

    @property
    def torus_value(self) -> float:
        """H on the torus: ell = 0, Q = 0 and M(0) = 0 leave H = 1."""
        return 1.0

    @property
    def params(self) -> np.ndarray:
        head = [self.m, self.c, self.Z, self.sigma, self.plateau, self.ell_b, self.ell_c, self.k, self.a,
                self.support_radius]
        return np.array(head + list(self.betas), dtype=np.float64)

    def design_frequencies(self) -> np.ndarray:
        return 2.0 * self.a * np.array(self.betas) / self.L0

    @property
    def torus(self) -> "CliffordTorus":
        return CliffordTorus(self.c, self.m)

    def with_(self, **kw) -> "TrapProfile":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        if "n" in kw and "betas" not in kw:
            d["betas"] = None
        return TrapProfile(**d)


@dataclass(frozen=True)
class Placement:
    """f(p) = (lam x, lam^2 z + z_center); f pulls alpha_st back to lam^2 alpha_st."""

    lam: float = 1.0
    z_center: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    def forward(self, p) -> np.ndarray:
        q = np.array(p, dtype=np.float64) * self.lam
        q[-1] = self.lam * q[-1] + self.z_center
        return q

    def inverse(self, q) -> np.ndarray:
        p = np.array(q, dtype=np.float64) / self.lam
        p[-1] = (q[-1] - self.z_center) / self.lam ** 2
        return p


IDENTITY = Placement()


def _pp(profile: TrapProfile, placement: Placement) -> np.ndarray:
    return np.concatenate([[placement.lam, placement.z_center], profile.params])


@dataclass(frozen=True)
class CliffordTorus:
    """{x_j^2 + y_j^2 = radius^2 for all j, z = z0}."""

    radius: float
    m: int
    z0: float = 0.0

    def distance(self, p) -> float:
        p = np.asarray(p, dtype=np.float64)
        r = np.hypot(p[0:2 * self.m:2], p[1:2 * self.m:2])
        return float(math.sqrt(np.sum((r - self.radius) ** 2) + (p[-1] - self.z0) ** 2))

    def point(self, angles) -> np.ndarray:
        angles = np.asarray(angles, dtype=np.float64)
        p = np.empty(2 * self.m + 1)
        p[0:-1:2] = self.radius * np.cos(angles)
        p[1:-1:2] = self.radius * np.sin(angles)
        p[-1] = self.z0
        return p


def eval_H(profile: TrapProfile, p) -> tuple[float, np.ndarray]:
    p = Dimension(profile.n).check_state(p)
    H, dH = h_kernel(p, profile.params)
    return float(H), dH


def eval_G(profile: TrapProfile, p) -> float:
    p = Dimension(profile.n).check_state(p)
    H, dH = h_kernel(p, profile.params)
    return float(g_kernel(p, H, dH))


def G_rotational(profile: TrapProfile, p, h: float = 1e-6) -> float:
    """h - sum u_j h_{u_j}, differentiating h in the radial variables numerically."""
    p = np.asarray(p, dtype=np.float64)
    m = profile.m
    u = p[0:2 * m:2] ** 2 + p[1:2 * m:2] ** 2

    def hu(uu):
        q = np.zeros_like(p)
        q[0:2 * m:2] = np.sqrt(uu)
        q[-1] = p[-1]
        return h_kernel(q, profile.params)[0]

    g = hu(u)
    for j in range(m):
        if u[j] == 0.0:
            continue  # the term carries a factor u_j
        e = np.zeros(m)
        e[j] = min(h, 0.5 * u[j])
        g -= u[j] * (hu(u + e) - hu(u - e)) / (2 * e[j])
    return float(g)


def torus_distance(profile: TrapProfile, p) -> float:
    return profile.torus.distance(p)


def trap_field(profile: TrapProfile, placement: Placement = IDENTITY) -> Field:
    """Reeb field of alpha_st / (H o f^{-1}) as a compiled Field."""
    return Field(trap_reeb_kernel, _pp(profile, placement), 2 * profile.n - 1,
                 f"trap(lam={placement.lam})")


def unplaced_reeb(profile: TrapProfile) -> Field:
    return trap_field(profile, IDENTITY)


def torus_frequencies(profile: TrapProfile, angles=None, T: float = 10.0, tol: float = 1e-12,
                      rtol: float = 1e-4, check: bool = True) -> dict:
    """Measured angular speeds on the torus against the design values.

    Integrates the unplaced Reeb field from a torus point, unwraps the
    angles and fits a line.  Raises MeasurementMismatch beyond ``rtol``.
    """
    m = profile.m
    angles = np.zeros(m) if angles is None else np.asarray(angles, dtype=np.float64)
    p0 = profile.torus.point(angles)
    ts = np.linspace(0.0, T, 201)
    tr = integrate(unplaced_reeb(profile), p0, T, tol, t_eval=ts, max_step=0.05)
    th = np.unwrap(np.arctan2(tr.y[:, 1:2 * m:2], tr.y[:, 0:2 * m:2]), axis=0)
    measured = np.array([np.polyfit(tr.t, th[:, j], 1)[0] for j in range(m)])
    design = profile.design_frequencies()
    scale = np.where(design != 0, np.abs(design), 1.0)
    rel = np.abs(measured - design) / scale
    drift = max(profile.torus.distance(y) for y in tr.y)
    out = {"measured": measured, "design": design, "relative_error": rel,
           "max_torus_distance": float(drift)}
    if check and np.max(rel) > rtol:
        raise MeasurementMismatch(f"frequencies {measured} vs design {design}")
    return out


@nb.njit(cache=True)
def _hg_batch(pts, TP):
    out = np.empty((pts.shape[0], 2))
    for i in range(pts.shape[0]):
        p = pts[i].copy()
        H, dH = h_kernel(p, TP)
        out[i, 0] = H
        out[i, 1] = g_kernel(p, H, dH)
    return out


def eval_HG_batch(profile: TrapProfile, pts) -> tuple[np.ndarray, np.ndarray]:
    """H and G at the rows of ``pts``."""
    out = _hg_batch(np.ascontiguousarray(pts, dtype=np.float64), profile.params)
    return out[:, 0], out[:, 1]
