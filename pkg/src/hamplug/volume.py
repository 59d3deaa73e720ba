"""The even-dimensional plug: slices of alpha_u = alpha_st / (psi(u) H + 1 - psi(u)).

States are (x1, y1, ..., x_{n-1}, y_{n-1}, z, u); the flow is the Reeb flow
of alpha_u on each slice u = const, so u never moves.  The volume form
Omega = alpha_u ^ (d alpha_u)^{n-1} ^ du is evaluated on the standard basis in
this ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .geometry import scaled_form_kernel, scaled_reeb_kernel
from .integrate import Field, flow_jacobian, flow_map
from .plug import PlugGeometry, parallel_map
from .report import VerificationReport
from .trap import IDENTITY, Placement, placed_h_kernel, plateau_step

__all__ = [
    "PsiProfile", "NonPositiveDensity", "VolumeModel", "pfaffian", "top_coefficient",
    "reeb_Ru", "Hiv_closed_form", "even_plug_field", "omega_density",
    "verify_volume_preservation",
]


class NonPositiveDensity(ValueError):
    pass


@dataclass(frozen=True)
class PsiProfile:
    """psi = 1 on |u| <= plateau, 0 on |u| >= support, smooth monotone between."""

    eps: float = 1.0
    plateau: float | None = None
    support: float | None = None

    def __post_init__(self):
        if self.plateau is None:
            object.__setattr__(self, "plateau", self.eps / 8)
        if self.support is None:
            object.__setattr__(self, "support", self.eps / 2)
        if not 0 < self.plateau < self.support <= self.eps:
            raise ValueError("need 0 < plateau < support <= eps")

    def __call__(self, u: float) -> float:
        return plateau_step(u / self.support, self.plateau / self.support)[0]

    def derivative(self, u: float) -> float:
        return plateau_step(u / self.support, self.plateau / self.support)[1] / self.support

    def inverse(self, value: float) -> float:
        """The u >= 0 with psi(u) = value (bisection)."""
        if value >= 1:
            return 0.0
        lo, hi = self.plateau, self.support
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self(mid) > value:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.support, self.plateau / self.support])


# --------------------------------------------------------------------------
# kernels.  PU = [psi_support, psi_t0, lam, zc, TP...]


@nb.njit(cache=True)
def blended_h(q, u, PU):
    psi = plateau_step(u / PU[0], PU[1])[0]
    H, dH = placed_h_kernel(q, PU[2:])
    return psi * H + 1.0 - psi, psi * dH, psi


@nb.njit(cache=True)
def ru_kernel(q, u, PU):
    Ht, dHt, psi = blended_h(q, u, PU)
    flat = Ht == 1.0
    if flat:
        for i in range(dHt.shape[0]):
            if dHt[i] != 0.0:
                flat = False
                break
    if psi == 0.0 or flat:
        out = np.zeros(q.shape[0])
        out[-1] = 1.0
        return out
    return scaled_reeb_kernel(q, Ht, dHt)


@nb.njit(cache=True)
def even_kernel(y, P):
    """P = [delta, eps, PU...]; y = (x, y, ..., z, u)."""
    d = y.shape[0] - 1
    delta, eps = P[0], P[1]
    u = y[d]
    out = np.zeros(d + 1)
    r2 = 0.0
    for i in range(d - 1):
        r2 += y[i] * y[i]
    z = y[d - 1]
    if r2 <= 0.25 * delta * delta:
        if -0.75 * eps <= z <= -0.25 * eps:
            v = ru_kernel(y[:d].copy(), u, P[2:])
            out[:d] = v
            return out
        if 0.25 * eps <= z <= 0.75 * eps:
            qm = y[:d].copy()
            qm[d - 1] = -z
            v = ru_kernel(qm, u, P[2:])
            for i in range(d - 1):
                out[i] = -v[i]
            out[d - 1] = v[d - 1]
            return out
    out[d - 1] = 1.0
    return out


# --------------------------------------------------------------------------
# Python surface


@dataclass(frozen=True)
class VolumeModel:
    geom: PlugGeometry
    psi: PsiProfile

    @classmethod
    def default(cls, geom: PlugGeometry | None = None) -> "VolumeModel":
        geom = PlugGeometry() if geom is None else geom
        return cls(geom, PsiProfile(geom.eps))

    def pu(self, placement: Placement | None) -> np.ndarray:
        pl = self.geom.placement if placement is None else placement
        return np.concatenate([self.psi.params, [pl.lam, pl.z_center], self.geom.profile.params])

    def field(self) -> Field:
        P = np.concatenate([[self.geom.delta, self.geom.eps], self.pu(None)])
        return Field(even_kernel, P, self.geom.dim + 1, "even-plug")

    def _side(self, p):
        """Placed point on the B+ side and the transport sign for B-."""
        p = np.asarray(p, dtype=np.float64)
        e, r = self.geom.eps, np.linalg.norm(p[:-1])
        if r <= self.geom.delta / 2 and 0.25 * e <= p[-1] <= 0.75 * e:
            q = p.copy()
            q[-1] = -q[-1]
            return q, -1
        return p, 1

    def form(self, p, u, placement: Placement | None = None):
        """alpha_u and its slice derivative at (p, u)."""
        Ht, dHt, _ = blended_h(np.asarray(p, dtype=np.float64), float(u), self.pu(placement))
        return scaled_form_kernel(np.asarray(p, dtype=np.float64), Ht, dHt)


def reeb_Ru(model: VolumeModel, p, u, placement: Placement = IDENTITY) -> np.ndarray:
    """Reeb field of alpha_u on the slice, as a 2n-vector with zero u-component."""
    p = np.asarray(p, dtype=np.float64)
    v = ru_kernel(p, float(u), model.pu(placement))
    return np.append(v, 0.0)


def Hiv_closed_form(model: VolumeModel, p, u, placement: Placement = IDENTITY) -> float:
    """psi H - (psi/2) sum (x H_x + y H_y) + 1 - psi."""
    p = np.asarray(p, dtype=np.float64)
    PU = model.pu(placement)
    psi = model.psi(u)
    H, dH = placed_h_kernel(p, PU[2:])
    return psi * H - 0.5 * psi * float(p[:-1] @ dH[:-1]) + 1.0 - psi


def even_plug_field(model: VolumeModel, y=None):
    fld = model.field()
    if y is None:
        return fld
    y = np.asarray(y, dtype=np.float64)
    g = model.geom
    if g.box("B").face_distance(y[:-1]) > 1e-12 or abs(y[-1]) > g.eps:
        raise ValueError("point outside B x [-eps, eps]")
    return fld(y)


def pfaffian(A) -> float:
    """Pfaffian by expansion along the first row (tiny matrices only)."""
    A = np.asarray(A, dtype=np.float64)
    k = A.shape[0]
    if k == 0:
        return 1.0
    if k % 2:
        return 0.0
    total = 0.0
    for j in range(1, k):
        if A[0, j] != 0.0:
            keep = [i for i in range(1, k) if i != j]
            total += (-1) ** (j - 1) * A[0, j] * pfaffian(A[np.ix_(keep, keep)])
    return total


def top_coefficient(a, W) -> float:
    """Coefficient of a ^ w^m on e_1 ^ ... ^ e_{2m+1} (m = (len(a)-1)/2).

    a ^ w^m = sum_k a_k e_k ^ (m! Pf(W without k) e_1..^e_k..e_{2m+1}) and moving
    e_k to its slot costs (-1)^k (0-based k).
    """
    a = np.asarray(a, dtype=np.float64)
    d = a.size
    m = (d - 1) // 2
    total = 0.0
    for k in range(d):
        if a[k] != 0.0:
            keep = [i for i in range(d) if i != k]
            total += (-1) ** k * a[k] * pfaffian(W[np.ix_(keep, keep)])
    return math.factorial(m) * total


def omega_density(model: VolumeModel, y, check: bool = True) -> float:
    """Omega on the standard basis at a state (x, y, ..., z, u) of the even plug.

    On the B- side Omega is carried over by the mirror, so the density there
    is the B+ density at the mirrored point.
    """
    y = np.asarray(y, dtype=np.float64)
    p, _ = model._side(y[:-1])
    a, W = model.form(p, y[-1], None)
    dens = top_coefficient(a, W)
    if check and not dens > 0:
        raise NonPositiveDensity(f"density {dens!r} at {y.tolist()}")
    return dens


def _volume_one(args):
    model, fld, y0, T, tol, max_step = args
    J = flow_jacobian(fld, y0, T, tol, max_step=max_step)
    y1 = flow_map(fld, y0, T, tol, max_step=max_step)
    ratio = omega_density(model, y1) * np.linalg.det(J) / omega_density(model, y0)
    return float(ratio - 1.0)


def verify_volume_preservation(model: VolumeModel, samples, T: float = 1.0, tol: float = 1e-10,
                               *, threshold: float = 1e-6, max_step: float | None = None,
                               workers: int = 1) -> VerificationReport:
    """|Omega(phi_T p) det(D phi_T(p)) / Omega(p) - 1| over the samples."""
    if not T > 0:
        raise ValueError("T must be positive")
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    fld = model.field()
    ms = model.geom.eps / 20 if max_step is None else max_step
    errs = parallel_map(_volume_one, [(model, fld, y, T, tol, ms) for y in samples], workers)
    worst = float(np.max(np.abs(errs)))
    return VerificationReport("volume.preservation", worst <= threshold,
                              {"max_ratio_error": worst, "samples": len(errs)},
                              {"T": T, "tol": tol, "threshold": threshold},
                              {"ratio_errors": errs})
