"""The plug: a trap in B+, its reversed mirror image in B-, and d/dz elsewhere.

B  = D_delta x [-eps, eps]
B+ = D_{delta/2} x [-3eps/4, -eps/4]   (trap placed around z = -eps/2)
B- = D_{delta/2} x [eps/4, 3eps/4]     (mirror image, z -> -z)

On B- the field is v-(q) = -dPhi'(v+(Phi' q)) with Phi'(x, z) = (x, -z): the
transverse components flip sign, the vertical one is kept.  A B- passage is
then the mirrored time reversal of a B+ passage, so anything that traverses
exits directly above its entry point.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .integrate import (TRAPPED, TRAVERSED, BoxRegion, Field, TraverseRecord,
                        eval_batch, integrate_until_exit)
from .report import VerificationReport
from .trap import CliffordTorus, Placement, TrapProfile, trap_reeb_kernel

__all__ = [
    "PlugGeometry", "PlugField", "plug_field", "entry_points", "traverse_scan",
    "verify_matching", "EntryRegion", "trap_scan", "aperiodicity_certificate",
    "parallel_map",
]


def parallel_map(fn, items, workers: int = 1):
    """Ordered map, optionally over a process pool."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# --------------------------------------------------------------------------
# kernel.  P = [delta, eps, lam, zc, TP...]


@nb.njit(cache=True)
def plug_kernel(q, P):
    d = q.shape[0]
    delta, eps = P[0], P[1]
    r2 = 0.0
    for i in range(d - 1):
        r2 += q[i] * q[i]
    z = q[d - 1]
    if r2 <= 0.25 * delta * delta:
        if -0.75 * eps <= z <= -0.25 * eps:
            return trap_reeb_kernel(q, P[2:])
        if 0.25 * eps <= z <= 0.75 * eps:
            qm = q.copy()
            qm[d - 1] = -z
            v = trap_reeb_kernel(qm, P[2:])
            for i in range(d - 1):
                v[i] = -v[i]
            return v
    out = np.zeros(d)
    out[d - 1] = 1.0
    return out


@dataclass(frozen=True)
class PlugGeometry:
    """Plug boxes and the placement of the trap in B+ (scale ``lam``)."""

    profile: TrapProfile = field(default_factory=TrapProfile)
    delta: float = 1.0
    eps: float = 1.0
    lam: float = 0.5

    def __post_init__(self):
        if not (self.delta > 0 and self.eps > 0 and self.lam > 0):
            raise ValueError("delta, eps and lam must be positive")
        mr, mz = self.support_margins
        if mr <= 0 or mz <= 0:
            raise ValueError(
                f"placed trap support does not fit inside B+ (radial margin {mr:.4g}, "
                f"vertical margin {mz:.4g}); reduce lam")

    @property
    def n(self) -> int:
        return self.profile.n

    @property
    def dim(self) -> int:
        return 2 * self.n - 1

    @property
    def placement(self) -> Placement:
        return Placement(self.lam, -0.5 * self.eps)

    @property
    def placed_extent(self) -> tuple[float, float]:
        """Transverse radius and vertical half-height of the placed support of H - 1."""
        pr = self.profile
        umax = pr.L0 * math.exp(pr.ell_c) / min(pr.betas)
        return self.lam * math.sqrt(umax), self.lam ** 2 * pr.Z

    @property
    def support_margins(self) -> tuple[float, float]:
        r, h = self.placed_extent
        return 0.5 * self.delta - r, 0.25 * self.eps - h

    def box(self, which: str = "B") -> BoxRegion:
        d, e, zi = self.delta, self.eps, self.dim - 1
        if which == "B":
            return BoxRegion(d, -e, e, zi, self.dim)
        if which == "B+":
            return BoxRegion(d / 2, -0.75 * e, -0.25 * e, zi, self.dim)
        if which == "B-":
            return BoxRegion(d / 2, 0.25 * e, 0.75 * e, zi, self.dim)
        raise ValueError(which)

    def torus(self, side: str = "+") -> CliffordTorus:
        z0 = -0.5 * self.eps if side == "+" else 0.5 * self.eps
        return CliffordTorus(self.lam * self.profile.c, self.profile.m, z0)

    def trapped_radius(self) -> float:
        """Transverse radius of the placed torus; the cylinder over it is invariant."""
        return self.lam * self.profile.c

    @property
    def params(self) -> np.ndarray:
        pl = self.placement
        return np.concatenate([[self.delta, self.eps, pl.lam, pl.z_center], self.profile.params])

    def with_profile(self, profile: TrapProfile) -> "PlugGeometry":
        return PlugGeometry(profile, self.delta, self.eps, self.lam)


class PlugField(Field):
    """Composite plug field over B; immutable."""

    def __init__(self, geom: PlugGeometry):
        super().__init__(plug_kernel, geom.params, geom.dim, "plug")
        self.geom = geom

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (self.dim,):
            raise ValueError(f"expected a point of length {self.dim}")
        if self.geom.box("B").face_distance(p) > 1e-12:
            raise ValueError("point lies outside the plug box B")
        return super().__call__(p)

    def __reduce__(self):
        return (PlugField, (self.geom,))


def plug_field(geom: PlugGeometry, p=None):
    f = PlugField(geom)
    return f if p is None else f(p)


# --------------------------------------------------------------------------
# traversal


def entry_points(geom: PlugGeometry, xs) -> np.ndarray:
    """Lift transverse points to the entry face z = -eps."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != geom.dim - 1:
        raise ValueError("transverse points have the wrong dimension")
    if np.any(np.linalg.norm(xs, axis=1) >= geom.delta):
        raise ValueError("entries must lie in the open disc")
    return np.hstack([xs, np.full((xs.shape[0], 1), -geom.eps)])


def _traverse_one(args):
    fld, box, p0, t_max, tol, max_step, nrec = args
    return integrate_until_exit(fld, box, p0, t_max, tol, max_step=max_step, nrec=nrec)


def traverse_scan(geom: PlugGeometry, xs, t_max: float = 1e4, tol: float = 1e-10, *,
                  max_step: float | None = None, workers: int = 1, nrec: int = 0,
                  field: Field | None = None) -> list[TraverseRecord]:
    """One record per transverse entry, in input order."""
    pts = entry_points(geom, xs)
    fld = PlugField(geom) if field is None else field
    box = geom.box("B")
    ms = geom.eps / 20 if max_step is None else max_step
    return parallel_map(_traverse_one, [(fld, box, p, t_max, tol, ms, nrec) for p in pts], workers)


def verify_matching(records, tol: float = 1e-6) -> VerificationReport:
    """Worst transverse exit-entry mismatch over Traversed records."""
    mism = [float(np.max(np.abs(r.exit[:-1] - r.entry[:-1]))) for r in records if r.status == TRAVERSED]
    faces = [abs(r.face_residual) for r in records if r.status == TRAVERSED]
    worst = max(mism) if mism else math.nan
    counts = {}
    for r in records:
        counts[r.status] = counts.get(r.status, 0) + 1
    return VerificationReport(
        "plug.matching", bool(mism) and worst <= tol,
        {"max_mismatch": worst, "max_face_residual": max(faces) if faces else math.nan,
         "traversed": len(mism)},
        {"tolerance": tol}, {"status_counts": counts, "mismatch": mism})


# --------------------------------------------------------------------------
# trap scan


@dataclass(frozen=True)
class EntryRegion:
    """Polar entry grid: radius ``radii[j] + s`` for s in a symmetric grid of
    half-width ``half_width`` with ``points`` values per plane, fixed angles."""

    radii: tuple
    half_width: float
    angles: tuple = None
    points: int = 3

    def grid(self, centre=None, half_width=None) -> np.ndarray:
        centre = np.asarray(self.radii if centre is None else centre, dtype=np.float64)
        w = self.half_width if half_width is None else half_width
        m = centre.size
        ang = np.zeros(m) if self.angles is None else np.asarray(self.angles, dtype=np.float64)
        offs = np.linspace(-w, w, self.points) if self.points > 1 else np.zeros(1)
        rows = []
        for combo in itertools.product(offs, repeat=m):
            r = centre + np.asarray(combo)
            if np.all(r >= 0):
                x = np.empty(2 * m)
                x[0::2] = r * np.cos(ang)
                x[1::2] = r * np.sin(ang)
                rows.append(x)
        return np.array(rows)


@dataclass
class TrapScanResult:
    trapped: list
    probes: list
    diagnostics: list
    levels: list

    def to_json(self) -> dict:
        return {"trapped": [r.to_json() for r in self.trapped],
                "diagnostics": self.diagnostics, "levels": self.levels,
                "probes": [r.to_json() for r in self.probes]}


def _radii(x) -> np.ndarray:
    return np.hypot(x[0::2], x[1::2])


def trap_scan(geom: PlugGeometry, region: EntryRegion | None = None, t_max: float = 1e4,
              tol: float = 1e-12, *, refine: int = 2, probe_time: float = 200.0,
              max_candidates: int = 1, max_step: float | None = None, workers: int = 1,
              history: int = 2000) -> TrapScanResult:
    """Search the entry face for trapped orbits.

    Each refinement level probes a polar grid for ``probe_time`` and recentres
    a finer grid on the longest-lived entry.  Entries still inside the plug
    after the probe are candidates; they are rerun up to ``t_max`` with a
    sampled history.  Distances are measured to the placed torus in B+.
    """
    if region is None:
        r = geom.trapped_radius()
        region = EntryRegion(tuple([r] * geom.profile.m), 0.1 * r)
    torus = geom.torus("+")
    probes, levels = [], []
    centre, w = np.asarray(region.radii, dtype=np.float64), region.half_width
    seen = set()
    for level in range(refine + 1):
        xs = region.grid(centre, w)
        keep = [x for x in xs if tuple(np.round(x, 15)) not in seen and np.linalg.norm(x) < geom.delta]
        seen.update(tuple(np.round(x, 15)) for x in keep)
        if keep:
            recs = traverse_scan(geom, np.array(keep), probe_time, tol, max_step=max_step,
                                 workers=workers)
            probes.extend(recs)
        best = max(probes, key=lambda r: (r.status == TRAPPED, r.transit_time))
        levels.append({"level": level, "centre": centre.tolist(), "half_width": w,
                       "probed": len(keep), "best_entry": best.entry.tolist(),
                       "best_time": best.transit_time, "best_status": best.status})
        centre = _radii(best.entry[:-1])
        w = w * 2.0 / max(region.points - 1, 1)
    cands = sorted([r for r in probes if r.status == TRAPPED],
                   key=lambda r: torus.distance(np.append(r.entry[:-1], -0.75 * geom.eps)))
    cands = cands[:max_candidates]
    full = traverse_scan(geom, np.array([r.entry[:-1] for r in cands]).reshape(-1, geom.dim - 1),
                         t_max, tol, max_step=max_step, workers=workers, nrec=history) if cands else []
    trapped, diags = [], []
    for r in full:
        first = np.append(r.entry[:-1], -0.75 * geom.eps)
        d_first = torus.distance(first)
        diag = {"entry": r.entry.tolist(), "status": r.status, "time": r.transit_time,
                "distance_at_B+_entry": d_first}
        if r.status == TRAPPED:
            trapped.append(r)
            ys = r.samples.y
            inside = ys[:, -1] >= -0.75 * geom.eps
            dist = np.array([torus.distance(y) for y in ys])
            diag.update({
                "final_distance": float(dist[-1]),
                "min_distance": float(dist[inside].min()),
                "z_max": float(ys[:, -1].max()),
                "z_final": float(ys[-1, -1]),
                "z_history": [[float(t), float(z)] for t, z in zip(r.samples.t[::20], ys[::20, -1])],
            })
        diags.append(diag)
    return TrapScanResult(trapped, probes, diags, levels)


# --------------------------------------------------------------------------
# aperiodicity


def _support_grid(geom: PlugGeometry, count: int, side: str) -> np.ndarray:
    """Lattice over the bounding box of the placed support in B+ or B-."""
    R, h = geom.placed_extent
    dim = geom.dim
    k = max(2, int(round(count ** (1.0 / dim))))
    tr = np.linspace(-R, R, k)
    zc = -0.5 * geom.eps if side == "+" else 0.5 * geom.eps
    zs = np.linspace(zc - h, zc + h, k)
    mesh = np.meshgrid(*([tr] * (dim - 1) + [zs]), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def aperiodicity_certificate(geom: PlugGeometry, count: int = 100_000,
                             tube_radius: float = 0.1, tubes=(0.1, 0.03, 0.01)) -> VerificationReport:
    """Grid certificate: dz-component of the plug field off the torus tubes.

    A closed orbit has zero net z-gain, so where the vertical component is
    positive no closed orbit can pass; what is left is the two tori, where
    the flow is linear with rationally independent frequencies.  This is a
    sampled statement about the shipped numbers, not a proof.
    """
    fld = PlugField(geom)
    pts = np.vstack([_support_grid(geom, count // 2, "+"), _support_grid(geom, count // 2, "-")])
    vz = eval_batch(fld, pts)[:, -1]
    tp, tm = geom.torus("+"), geom.torus("-")
    dist = np.array([min(tp.distance(p), tm.distance(p)) for p in pts])
    off = dist > tube_radius
    gmin = float(vz[off].min()) if off.any() else math.nan
    by_tube = {f"min_vz_outside_{t:g}": float(vz[dist > t].min()) for t in tubes}
    freqs = geom.profile.design_frequencies() / geom.lam ** 2
    squares = [round(b * b) for b in geom.profile.betas]
    ratios = [float(freqs[j] / freqs[0]) if freqs[0] else math.nan for j in range(1, len(freqs))]
    witness = {
        "frequencies_B+": freqs.tolist(),
        "frequencies_B-": (-freqs).tolist(),
        "ratios": ratios,
        "beta_squared": squares,
        # beta_j^2 distinct primes => every ratio beta_i/beta_j is irrational
        "distinct_primes": len(set(squares)) == len(squares)
        and all(abs(b * b - s) < 1e-9 for b, s in zip(geom.profile.betas, squares))
        and all(s > 1 and all(s % d for d in range(2, int(s ** 0.5) + 1)) for s in squares),
    }
    passed = bool(off.any() and gmin > 0 and vz.min() >= -1e-10 and witness["distinct_primes"])
    return VerificationReport(
        "plug.aperiodicity", passed,
        {"min_vz_off_tubes": gmin, "min_vz_all": float(vz.min()), **by_tube,
         "grid_points": int(pts.shape[0])},
        {"tube_radius": tube_radius}, {"witness": witness,
                                       "note": "grid certificate, not a proof"})
