"""Verification suites; each returns a VerificationReport and depends only on the config."""

from __future__ import annotations

import math
import time

import numpy as np

from . import geometry as geo
from .config import Config
from .host import build_flow_box, demo_open_orbit, host_field, host_field_generic, periodic_orbit
from .integrate import eval_batch, integrate
from .plug import (EntryRegion, PlugField, aperiodicity_certificate, trap_scan, traverse_scan,
                   verify_matching)
from .report import VerificationReport
from .trap import eval_H, eval_HG_batch, h_kernel, torus_frequencies
from .volume import (Hiv_closed_form, omega_density, reeb_Ru, verify_volume_preservation)

SUITES = [
    "geometry.residuals", "geometry.mirror", "geometry.identities", "trap.profile",
    "trap.frequencies", "volume.hiv", "plug.boundary", "plug.matching", "plug.trap",
    "plug.aperiodicity", "volume.preservation", "volume.positivity", "host.chart",
    "host.open_orbit",
]


def _rng(cfg: Config, name: str) -> np.random.Generator:
    # one independent, replayable stream per suite
    return np.random.default_rng([cfg["run.seed"], SUITES.index(name)])


def _ball(rng, count, dim, radius):
    v = rng.normal(size=(count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(size=(count, 1)) ** (1.0 / dim)


def _support_points(cfg: Config, rng, count):
    """Unplaced points spread over the region where H - 1 lives."""
    pr = cfg.profile()
    R = math.sqrt(pr.L0 * math.exp(pr.ell_c) / min(pr.betas))
    d = 2 * pr.n - 1
    x = _ball(rng, count, d - 1, R)
    z = rng.uniform(-pr.Z, pr.Z, size=(count, 1))
    return np.hstack([x, z])


def _placed_points(cfg: Config, rng, count, side="+"):
    g = cfg.geometry()
    R, h = g.placed_extent
    zc = -0.5 * g.eps if side == "+" else 0.5 * g.eps
    x = _ball(rng, count, g.dim - 1, R * 1.05)
    z = rng.uniform(zc - 1.05 * h, zc + 1.05 * h, size=(count, 1))
    return np.hstack([x, z])


# --------------------------------------------------------------------------


def geometry_residuals(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "geometry.residuals")
    N, tol = cfg["run.residual_points"], cfg["tolerances.residual"]
    pr = cfg.profile()
    n = pr.n
    res = {}

    pts = rng.uniform(-2, 2, size=(N, 2 * n - 1))
    st = geo.StandardForm()
    worst = [0.0, 0.0]
    for p in pts:
        r = geo.reeb_residuals(st, p, geo.reeb_field(st, p))
        worst = [max(worst[0], r[0]), max(worst[1], r[1])]
    res["alpha_st"] = max(worst)

    form = geo.ScaledForm(lambda p: eval_H(pr, p))
    worst = 0.0
    for p in _support_points(cfg, rng, N):
        worst = max(worst, *geo.reeb_residuals(form, p, geo.reeb_field(form, p)))
    res["alpha_st_over_H"] = worst

    model = cfg.volume_model()
    worst = 0.0
    for p in _placed_points(cfg, rng, N):
        u = rng.uniform(-cfg["plug.eps"], cfg["plug.eps"])
        a, W = model.form(p, u)
        R = reeb_Ru(model, p, u, model.geom.placement)[:-1]
        worst = max(worst, abs(a @ R - 1.0), float(np.max(np.abs(R @ W))))
    res["alpha_u"] = worst

    W = geo.omega_st(n)
    coef = rng.uniform(0.5, 2.0, size=n)
    worst = 0.0
    for p in rng.uniform(-2, 2, size=(N, 2 * n)):
        # K = w + sum coef_i (p_{2i}^2 + p_{2i+1}^2) in ambient ordering
        dK = 2.0 * np.repeat(coef, 2) * p
        dK[0] += 1.0
        X = geo.hamiltonian_field(W, dK, p)
        worst = max(worst, float(np.max(np.abs(X @ W + dK))))
    res["omega_st"] = worst

    host = cfg.host()
    Wh = host.omega()
    worst = 0.0
    for p in rng.uniform(-1, 1, size=(N, 2 * n)):
        X = host_field_generic(host, p)
        worst = max(worst, float(np.max(np.abs(X @ Wh + host.dK(p)))),
                    float(np.max(np.abs(X - host_field(host, p)))))
    res["ellipsoid"] = worst
    return VerificationReport("geometry.residuals", max(res.values()) <= tol,
                              {"max_residual": max(res.values()), **res},
                              {"points": N, "tolerance": tol})


def geometry_mirror(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "geometry.mirror")
    n = cfg["geometry.n"]
    d = 2 * n - 1
    ez = np.zeros(d)
    ez[-1] = 1.0
    pts = rng.uniform(-2, 2, size=(cfg["run.residual_points"], d))
    reeb_exact = all(np.array_equal(geo.reeb_field(geo.StandardForm(), p), ez) for p in pts)

    # Phi^* alpha_st = -dz + 1/2 sum(x dy - y dx); its negative Reeb field is d/dz
    class Mirrored(geo.ContactForm):
        def alpha(self, p):
            a = geo.eval_alpha_st(p)
            a[-1] = -1.0
            return a

        def dalpha(self, p):
            return geo.eval_dalpha_st(n)

    neg_exact = all(np.array_equal(-geo.reeb_field(Mirrored(), p), ez) for p in pts[:100])
    D = np.diag(np.append(np.ones(d - 1), -1.0))
    W = geo.eval_dalpha_st(n)
    pullback_exact = bool(np.array_equal(D.T @ W @ D, W))

    # structural: the plug's B- transport of the H = 1 trap is exactly d/dz
    g0 = cfg.geometry().with_profile(cfg.profile().with_(a=0.0))
    f0 = PlugField(g0)
    qs = _placed_points(cfg, rng, 1000, "-")
    transport_exact = bool(np.all(eval_batch(f0, qs) == ez))

    # v-(q) = -dPhi'(v+(Phi' q)) for the shipped profile
    g = cfg.geometry()
    f = PlugField(g)
    inside = [q for q in qs if g.box("B-").contains(q)]
    qs_m = np.array(inside)
    mir = qs_m.copy()
    mir[:, -1] *= -1
    vm = eval_batch(f, qs_m)
    vp = eval_batch(f, mir)
    rel = float(np.max(np.abs(vm - (vp @ -D))))
    ok = reeb_exact and neg_exact and pullback_exact and transport_exact and rel <= 1e-12
    return VerificationReport("geometry.mirror", ok,
                              {"mirror_relation": rel, "reeb_alpha_st_exact": reeb_exact,
                               "negative_reeb_mirrored_exact": neg_exact,
                               "pullback_exact": pullback_exact,
                               "B-_transport_exact": transport_exact},
                              {"points": len(inside)})


def geometry_identities(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "geometry.identities")
    n = cfg["geometry.n"]
    d = 2 * n
    W = geo.omega_st(n)
    # L_Y omega = d(i_Y omega); coefficientwise (L_Y W)_ij = Y.grad W_ij + W_kj dY_k/dx_i + W_ik dY_k/dx_j
    h = 1e-6
    lie = 0.0
    for p in rng.uniform(-2, 2, size=(100, d)):
        DY = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            DY[:, k] = (geo.liouville_field(p + e) - geo.liouville_field(p - e)) / (2 * h)
        L = DY.T @ W + W @ DY
        lie = max(lie, float(np.max(np.abs(L - W))))
    restr = 0.0
    for p in rng.uniform(-2, 2, size=(1000, d)):
        p[0] = 2.0
        st = np.append(p[2:], p[1])
        restr = max(restr, float(np.max(np.abs(geo.contact_type_restriction(p) - geo.eval_alpha_st(st)))))
    factor = 0.0
    for lam in (0.5, 1.0, 2.0, 5.0):
        for p in rng.uniform(-1, 1, size=(20, d - 1)):
            J = geo.rescale_jacobian(lam, d - 1)
            pulled = geo.eval_alpha_st(geo.rescale_map(lam, p)) @ J
            factor = max(factor, float(np.max(np.abs(pulled - lam ** 2 * geo.eval_alpha_st(p)))))
    # graph of -log H in the symplectization: pushforward Reeb = X_{e^{t-f}} at level 1
    pr = cfg.profile()
    form = geo.ScaledForm(lambda p: eval_H(pr, p))

    def f_val(p):
        return -math.log(eval_H(pr, p)[0])

    def f_grad(p):
        H, dH = eval_H(pr, p)
        return -dH / H

    f = geo.ScalarField(f_val, f_grad)
    graph = 0.0
    level = 0.0
    for p in _support_points(cfg, rng, 100):
        R = geo.reeb_field(form, p)
        t, _ = geo.graph_embed(f, p)
        v = geo.graph_pushforward(f, R, p)
        Ws = geo.symplectization_form(t, geo.eval_alpha_st(p), geo.eval_dalpha_st(n))
        F = math.exp(t - f(p))
        dF = F * np.concatenate([[1.0], -f.gradient(p)])
        X = geo.hamiltonian_field(Ws, dF, np.append(t, p))
        graph = max(graph, float(np.max(np.abs(X - v))))
        level = max(level, abs(F - 1.0))
    tol = cfg["tolerances.graph"]
    ok = lie <= 1e-6 and restr <= 1e-12 and factor <= 1e-12 and graph <= tol
    return VerificationReport("geometry.identities", ok,
                              {"graph_correspondence": graph, "liouville_lie": lie,
                               "contact_restriction": restr, "rescale_factor": factor,
                               "graph_level_offset": level},
                              {"graph_tolerance": tol})


def trap_profile(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "trap.profile")
    pr = cfg.profile()
    d = 2 * pr.n - 1
    R = math.sqrt(pr.L0 * math.exp(pr.ell_c) / min(pr.betas))
    k = max(2, int(round(cfg["run.grid"] ** (1.0 / d))))
    axes = [np.linspace(-R, R, k)] * (d - 1) + [np.linspace(-pr.Z, pr.Z, k)]
    grid = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
    # plus a cloud around the torus so the zero-set test is not vacuous
    m = pr.m
    cloud = np.empty((10_000, d))
    ang = rng.uniform(0, 2 * np.pi, size=(10_000, m))
    dist = 10 ** rng.uniform(-4, -1, size=10_000)
    dirs = rng.normal(size=(10_000, m + 1))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs *= dist[:, None]
    r = pr.c + dirs[:, :m]
    cloud[:, 0:d - 1:2] = r * np.cos(ang)
    cloud[:, 1:d - 1:2] = r * np.sin(ang)
    cloud[:, -1] = dirs[:, m]
    pts = np.vstack([grid, cloud])
    H, G = eval_HG_batch(pr, pts)
    tdist = np.array([pr.torus.distance(p) for p in pts])
    sub = G <= 1e-6
    loc = float(tdist[sub].max()) if sub.any() else 0.0
    gmin = float(G[tdist > cfg["run.tube_radius"]].min())
    torus_pts = np.array([pr.torus.point(a) for a in rng.uniform(0, 2 * np.pi, size=(100, m))])
    Ht, Gt = eval_HG_batch(pr, torus_pts)
    # gradient against central differences
    fd = 0.0
    sf = geo.ScalarField(lambda p: eval_H(pr, p)[0], h=1e-5)
    for p in _support_points(cfg, rng, 300):
        fd = max(fd, float(np.max(np.abs(sf.fd_gradient(p) - eval_H(pr, p)[1]))))
    far = rng.normal(size=(1000, d))
    far *= 2 * pr.support_radius / np.linalg.norm(far, axis=1, keepdims=True)
    far_ok = all(h_kernel(p, pr.params)[0] == 1.0 and not h_kernel(p, pr.params)[1].any() for p in far)
    checks = {
        "G_nonnegative": float(G.min()) >= -1e-10,
        "zero_set_localized": loc <= 1e-2,
        "g_min_positive": gmin > 0 or pr.a == 0,
        "torus_G_zero": float(np.max(np.abs(Gt))) <= 1e-8 or pr.a == 0,
        "torus_H_design": float(np.max(np.abs(Ht - pr.torus_value))) <= 1e-12,
        "H_positive": float(H.min()) > 0,
        "H_C0_close": float(np.max(np.abs(H - 1))) <= 0.5,
        "gradient_fd": fd <= cfg["tolerances.fd_gradient"],
        "short_circuit": far_ok,
    }
    return VerificationReport("trap.profile", all(checks.values()),
                              {"G_min": float(G.min()), "sublevel_max_torus_distance": loc,
                               "sublevel_points": int(sub.sum()), "g_min_outside_tube": gmin,
                               "torus_max_abs_G": float(np.max(np.abs(Gt))),
                               "H_min": float(H.min()), "max_abs_H_minus_1": float(np.max(np.abs(H - 1))),
                               "gradient_fd_error": fd, "grid_points": int(pts.shape[0])},
                              {"tube_radius": cfg["run.tube_radius"]}, {"checks": checks})


def trap_frequencies(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "trap.frequencies")
    pr = cfg.profile()
    if pr.a == 0:
        return VerificationReport("trap.frequencies", False, {"note": "H = 1 has no torus"},
                                  expected_fail=True)
    runs = [torus_frequencies(pr, check=False)]
    for ang in rng.uniform(0, 2 * np.pi, size=(7, pr.m)):
        runs.append(torus_frequencies(pr, ang, check=False))
    meas = np.array([r["measured"] for r in runs])
    design = runs[0]["design"]
    rel = float(np.max(np.abs(meas - design) / np.abs(design)))
    spread = float(np.max((meas.max(axis=0) - meas.min(axis=0)) / np.abs(design)))
    inv = torus_frequencies(pr, T=100.0, check=False)["max_torus_distance"]
    ratio = float(meas[0, 1] / meas[0, 0])
    design_ratio = float(design[1] / design[0])
    ok = rel <= 1e-4 and spread <= 1e-4 and inv <= 1e-8 and abs(ratio / design_ratio - 1) <= 1e-4
    return VerificationReport("trap.frequencies", ok,
                              {"max_relative_error": rel, "spread": spread,
                               "torus_invariance_t100": inv, "ratio": ratio,
                               "design_ratio": design_ratio},
                              {}, {"measured": meas, "design": design,
                                   "ratio_squared": design_ratio ** 2})


def volume_hiv(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "volume.hiv")
    model = cfg.volume_model()
    psi = model.psi
    us = [0.0, psi.inverse(0.5), psi.support * 1.2]  # psi = 1, 0.5, 0
    worst = 0.0
    N = cfg["run.residual_points"]
    pts = _support_points(cfg, rng, N)
    for i, p in enumerate(pts):
        u = us[i % 3] if i % 4 else rng.uniform(-psi.eps, psi.eps)
        R = reeb_Ru(model, p, u)
        worst = max(worst, abs(R[-2] - Hiv_closed_form(model, p, u)))
    tol = cfg["tolerances.identity"]
    return VerificationReport("volume.hiv", worst <= tol, {"max_error": worst},
                              {"points": N, "tolerance": tol,
                               "psi_values": [psi(u) for u in us]})


def plug_boundary(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "plug.boundary")
    g = cfg.geometry()
    f = PlugField(g)
    N = cfg["run.shell_points"]
    w = g.eps / 8
    pts = []
    while len(pts) < N:
        p = np.append(_ball(rng, 1, g.dim - 1, g.delta)[0], rng.uniform(-g.eps, g.eps))
        if g.box("B").face_distance(p) >= -w:
            pts.append(p)
    vals = eval_batch(f, np.array(pts))
    ez = np.zeros(g.dim)
    ez[-1] = 1.0
    exact = bool(np.all(vals == ez))
    return VerificationReport("plug.boundary", exact,
                              {"exact_dz": exact, "max_deviation": float(np.max(np.abs(vals - ez)))},
                              {"points": N, "collar": w})


def matching_entries(cfg: Config, rng) -> np.ndarray:
    """Entries over the placed trap support (seeded, uniform in the disc)."""
    g = cfg.geometry()
    R = g.placed_extent[0]
    return _ball(rng, cfg["run.matching_entries"], g.dim - 1, R)


def plug_matching(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "plug.matching")
    g = cfg.geometry()
    xs = matching_entries(cfg, rng)
    recs = traverse_scan(g, xs, cfg["run.t_max"], cfg["tolerances.integrator"],
                         workers=cfg["run.workers"])
    rep = verify_matching(recs, cfg["tolerances.matching"])
    rep.residuals["all_traversed"] = rep.residuals["traversed"] == len(recs)
    rep.passed = rep.passed and len(recs) >= 100 and rep.residuals["all_traversed"]
    return rep


def plug_trap(cfg: Config, region=None) -> VerificationReport:
    """``region`` = (radius, half_width) replaces the default entry grid."""
    g = cfg.geometry()
    if region is None:
        entry = cfg.entry_region()
    else:
        entry = EntryRegion(tuple([float(region[0])] * g.profile.m), float(region[1]),
                            points=cfg["run.trap_points"])
    res = trap_scan(g, entry, cfg["run.t_max"], cfg["tolerances.trap"],
                    refine=cfg["run.trap_refine"], probe_time=cfg["run.trap_probe"],
                    workers=cfg["run.workers"])
    diag = [d for d in res.diagnostics if d["status"] == "Trapped"]
    closer = all(d["final_distance"] <= d["distance_at_B+_entry"] for d in diag)
    zmargin = 0.25 * g.eps
    bounded = all(d["z_max"] <= -0.5 * g.eps + zmargin for d in diag)
    ok = bool(diag) and closer and bounded
    out = {"trapped": len(diag), "final_closer_than_entry": closer, "z_bounded": bounded}
    if diag:
        out["final_distance"] = diag[0]["final_distance"]
        out["distance_at_B+_entry"] = diag[0]["distance_at_B+_entry"]
        out["trapped_entry"] = diag[0]["entry"]
    return VerificationReport("plug.trap", ok, out,
                              {"t_max": cfg["run.t_max"], "tol": cfg["tolerances.trap"],
                               "refine": cfg["run.trap_refine"], "probe_time": cfg["run.trap_probe"]},
                              {"levels": res.levels, "diagnostics": res.diagnostics,
                               "probes": len(res.probes)},
                              expected_fail=g.profile.a == 0)


def plug_aperiodicity(cfg: Config) -> VerificationReport:
    return aperiodicity_certificate(cfg.geometry(), cfg["run.grid"], cfg["run.tube_radius"])


def volume_preservation(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "volume.preservation")
    model = cfg.volume_model()
    N = cfg["run.volume_samples"]
    S = []
    for i in range(N):
        p = _placed_points(cfg, rng, 1, "+" if i % 2 == 0 else "-")[0]
        S.append(np.append(p, rng.uniform(-model.psi.support, model.psi.support)))
    return verify_volume_preservation(model, S, cfg["run.volume_T"], cfg["tolerances.integrator"],
                                      threshold=cfg["tolerances.volume"], workers=cfg["run.workers"])


def volume_positivity(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "volume.positivity")
    model = cfg.volume_model()
    psi = model.psi
    N = cfg["run.positivity_samples"]
    fld = model.field()
    ys = []
    for i in range(N):
        p = _placed_points(cfg, rng, 1, "+" if i % 2 == 0 else "-")[0]
        ys.append(np.append(p, rng.uniform(psi.plateau, psi.eps) * rng.choice([-1, 1])))
    ys = np.array(ys)
    ps = np.array([psi(y[-1]) for y in ys])
    keep = ps < 1
    vz = eval_batch(fld, ys[keep])[:, -2]
    uz = eval_batch(fld, ys)[:, -1]
    dens = np.array([omega_density(model, y, check=False) for y in ys])
    ok = bool(vz.min() > 0 and dens.min() > 0 and np.all(uz == 0))
    return VerificationReport("volume.positivity", ok,
                              {"min_dz_psi_below_1": float(vz.min()), "min_density": float(dens.min()),
                               "u_component_zero": bool(np.all(uz == 0)), "samples": int(keep.sum())},
                              {"samples": N})


def host_chart(cfg: Config) -> VerificationReport:
    rng = _rng(cfg, "host.chart")
    host = cfg.host()
    chart = build_flow_box(host, cfg["host.orbit"], cfg["host.chart_delta"], cfg["host.chart_eps"])
    n = host.n
    std = np.zeros((2 * n - 1, 2 * n - 1))
    for i in range(0, 2 * n - 2, 2):
        std[i, i + 1], std[i + 1, i] = 1.0, -1.0
    w0 = w1 = push = 0.0
    for _ in range(200):
        q = _ball(rng, 1, 2 * n - 2, chart.delta)[0]
        W0 = chart.pulled_back_omega(q, 0.0)
        w0 = max(w0, float(np.max(np.abs(W0 - std))))
        for z in (-chart.eps / 2, chart.eps / 2):
            w1 = max(w1, float(np.max(np.abs(chart.pulled_back_omega(q, z) - W0))))
        v = chart.pushforward_host(q, rng.uniform(-chart.eps, chart.eps))
        push = max(push, float(np.max(np.abs(v[:-1]))), abs(v[-1] - 1.0))
    centre = float(np.max(np.abs(chart.base_point - periodic_orbit(host, cfg["host.orbit"]).point(0.0, n))))
    # energy and Liouville volume of the host flow
    orb = periodic_orbit(host, cfg["host.orbit"])
    p0 = rng.uniform(-0.5, 0.5, size=2 * n)
    tr = integrate(host.field(), p0, 1e3, cfg["tolerances.trap"], t_eval=np.linspace(0, 1e3, 2001))
    drift = float(max(abs(host.K(y) / host.K(p0) - 1.0) for y in tr.y))
    ok = w0 <= 1e-8 and w1 <= 1e-6 and push <= 1e-8 and centre <= 1e-15 and drift <= 1e-8
    return VerificationReport("host.chart", ok,
                              {"omega_z0": w0, "omega_z_shift": w1, "pushforward_transverse": push,
                               "centre_offset": centre, "energy_drift_t1000": drift},
                              {"chart_delta": chart.delta, "chart_eps": chart.eps,
                               "orbit_period": orb.period})


def host_open_orbit(cfg: Config) -> VerificationReport:
    ins = cfg.inserted()
    rep = demo_open_orbit(ins, t_max=cfg["host.t_max"], tol=cfg["tolerances.trap"],
                          tol_nearby=cfg["tolerances.integrator"], nearby=cfg["host.nearby"],
                          seed=cfg["run.seed"], workers=cfg["run.workers"])
    rep.expected_fail = cfg["trap.a"] == 0
    return rep


RUNNERS = {
    "geometry.residuals": geometry_residuals, "geometry.mirror": geometry_mirror,
    "geometry.identities": geometry_identities, "trap.profile": trap_profile,
    "trap.frequencies": trap_frequencies, "volume.hiv": volume_hiv,
    "plug.boundary": plug_boundary, "plug.matching": plug_matching, "plug.trap": plug_trap,
    "plug.aperiodicity": plug_aperiodicity, "volume.preservation": volume_preservation,
    "volume.positivity": volume_positivity, "host.chart": host_chart,
    "host.open_orbit": host_open_orbit,
}


def run_verify(cfg: Config, suites=None, progress=None) -> list[VerificationReport]:
    """Run the selected suites in a fixed order; a crashing suite becomes a failed report."""
    names = SUITES if not suites else [s for s in SUITES if s in set(suites)]
    unknown = set(suites or ()) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites: {sorted(unknown)}")
    out = []
    for name in names:
        t0 = time.perf_counter()
        try:
            rep = RUNNERS[name](cfg)
        except Exception as exc:  # recorded, not fatal to the run
            rep = VerificationReport(name, False, {}, {}, {"error": repr(exc)})
        rep.suite = name
        rep.wall_clock = time.perf_counter() - t0
        rep.params = {"seed": cfg["run.seed"], **rep.params}
        out.append(rep)
        if progress:
            progress(rep)
    return out
