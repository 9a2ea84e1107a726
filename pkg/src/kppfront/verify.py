"""Aggregated verification suite behind ``kppfront verify-all``.

Every check returns a plain dict {name, passed, metrics, tolerance}; the
values depend only on the validated config (and its seed), so reruns are
reproducible bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

from . import cell, frontsim, halfspace, speeds
from .config import CHECK_NAMES, medium_spec
from .torus import MuSpec, TorusGrid, build_field, integrate

ALL_CHECKS = CHECK_NAMES


def _result(name, passed, metrics, tolerance):
    return {"name": name, "passed": bool(passed), "metrics": metrics, "tolerance": tolerance}


def _skip(name, reason):
    return {"name": name, "passed": True, "skipped": reason, "metrics": {}, "tolerance": None}


def status(result) -> str:
    if result.get("skipped"):
        return "SKIP"
    return "PASS" if result["passed"] else "FAIL"


class Context:
    """Lazily computed shared quantities (medium, direction record)."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.spec = medium_spec(cfg)
        self.n = cfg["grid"]["n"]
        self.N = cfg["grid"]["N"]
        self.mu = build_field(self.spec, TorusGrid(self.n, self.N))
        self.v = cfg.get("verify") or {}
        self._record = None

    @property
    def constant(self) -> bool:
        return self.spec.variant == "constant"

    @property
    def e(self) -> np.ndarray:
        c = self.cfg.get("cell") or {}
        if c.get("e") is not None:
            v = np.asarray(c["e"], dtype=float)
            return v / np.linalg.norm(v)
        return np.eye(self.n)[0]

    def record(self):
        if self._record is None:
            dirs = (self.cfg.get("cell") or {}).get("directions", 256)
            self._record = speeds.direction_record(self.mu, self.e, directions=dirs)
        return self._record

    def opt(self, key, default):
        val = self.v.get(key)
        return default if val is None else val


def check_dispersion(ctx: Context):
    lams = (ctx.cfg.get("eigen") or {}).get("lambdas") or [0.25, 0.5, 1.0, 2.0, 4.0]
    e = ctx.e
    gammas = [cell.principal_eigenpair(ctx.mu, e, lam).gamma for lam in lams]
    if ctx.constant:
        err = max(abs(g - (lam**2 + ctx.spec.c)) for g, lam in zip(gammas, lams))
        return _result("dispersion", err <= 1e-8, {"max_error": err, "lambdas": lams}, 1e-8)
    lo, hi = ctx.mu.min(), ctx.mu.max()
    slack = max(max(lam**2 + lo - g, g - lam**2 - hi) for g, lam in zip(gammas, lams))
    return _result("dispersion", slack <= 1e-8, {"potential_bound_violation": slack, "lambdas": lams}, 1e-8)


def check_minimal_speed(ctx: Context):
    r = speeds.minimal_speed_details(ctx.mu, ctx.e)
    m = {"c_star": r.c_star, "lambda_star": r.lambda_star, "stationarity": r.stationarity}
    if ctx.constant:
        c = ctx.spec.c
        err = max(abs(r.c_star - 2 * math.sqrt(c)), abs(r.lambda_star - math.sqrt(c)))
        m["max_error"] = err
        return _result("minimal_speed", err <= 1e-6, m, 1e-6)
    return _result("minimal_speed", abs(r.stationarity) <= 1e-6, m, 1e-6)


def random_trig_media(seed: int, count: int, dims) -> list:
    """Seeded positive trig media with |k_i| <= 2, alternating dimensions."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = dims[i % len(dims)]
        modes = []
        for _ in range(int(rng.integers(1, 4))):
            k = rng.integers(-2, 3, size=n)
            if not k.any():
                k[0] = 1
            modes.append((k.tolist(), float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1))))
        amp = sum(math.hypot(a, b) for _, a, b in modes)
        out.append(MuSpec.trig_series(modes, round(amp + float(rng.uniform(0.5, 1.5)), 12)))
    return out


def check_dense_oracle(ctx: Context):
    seed = ctx.cfg["seed"]
    N = ctx.opt("oracle_N", 32)
    media = random_trig_media(seed, ctx.opt("oracle_media", 5), ctx.opt("oracle_dims", [1, 2]))
    rng = np.random.default_rng(seed + 1)
    rows = []
    for spec in media:
        n = spec.dimension
        mu = build_field(spec, TorusGrid(n, N))
        e = rng.normal(size=n)
        e /= np.linalg.norm(e)
        lam = float(rng.uniform(0.5, 2.0))
        it = cell.principal_eigenpair(mu, e, lam)
        de = cell.dense_principal_eigenpair(mu, e, lam)
        rows.append({"n": n, "lambda": lam, "gamma_error": abs(it.gamma - de.gamma),
                     "psi_error": float(np.max(np.abs(it.psi.values - de.psi.values)))})
    g = max(r["gamma_error"] for r in rows)
    p = max(r["psi_error"] for r in rows)
    return _result("dense_oracle", g <= 1e-6 and p <= 1e-5,
                   {"max_gamma_error": g, "max_psi_error": p, "media": rows},
                   {"gamma": 1e-6, "psi": 1e-5})


def _cell_solution(ctx: Context):
    rec = ctx.record()
    return rec, cell.solve_cell(ctx.mu, rec.e_prime, rec.lambda_star_prime, rec.w_star, rec.e)


def check_cell_identities(ctx: Context):
    rec, sol = _cell_solution(ctx)
    d = sol.diagnostics
    ok = abs(integrate(sol.nu) - 1.0) <= 1e-12 and d["divF_inf"] <= 1e-7 and d["F_mean_error"] <= 1e-4
    return _result("cell_identities", ok,
                   {"nu_mass": d["nu_mass"], "divF_inf": d["divF_inf"], "F_mean_error": d["F_mean_error"],
                    "theta_prime": rec.theta_prime if ctx.n == 2 else None},
                   {"nu_mass": 1e-12, "divF_inf": 1e-7, "F_mean_error": 1e-4})


def check_effective_diffusion(ctx: Context):
    _, sol = _cell_solution(ctx)
    S = sol.S
    eig = np.linalg.eigvalsh(0.5 * (S + S.T))
    m = {"S": S.ravel().tolist(), "asymmetry": float(np.max(np.abs(S - S.T))), "min_eigenvalue": float(eig.min())}
    if ctx.constant:
        err = float(np.max(np.abs(S - np.eye(ctx.n))))
        m["identity_error"] = err
        return _result("effective_diffusion", err <= 1e-8, m, 1e-8)
    return _result("effective_diffusion", m["asymmetry"] <= 1e-12 and eig.min() > 0, m, 1e-12)


def check_minimizer_theory(ctx: Context):
    if ctx.n == 1:
        rec = ctx.record()
        ok = rec.e_prime == rec.e and rec.w_star == rec.c_star
        return _result("minimizer_theory", ok, {"note": "n = 1: e' = e and w* = c*"}, None)
    mc = ctx.cfg.get("minimizer_check") or {}
    atlas = speeds.build_atlas(ctx.spec, 2, ctx.N, directions=ctx.opt("atlas_directions", 360),
                               threads=ctx.cfg.get("_threads", 1))
    kw = {k: mc[k] for k in ("uniqueness_margin", "cluster_tol_deg", "coverage_factor", "grad_tol") if k in mc}
    report = speeds.verify_minimizer_theory(atlas, **kw)
    return _result("minimizer_theory", report["all_pass"], report, kw or None)


def _sim_config(ctx: Context, t_final: float) -> frontsim.SimConfig:
    s = ctx.cfg.get("simulate") or {}
    init = frontsim.InitSpec(s.get("init_radius", 1.0), s.get("init_amplitude", 1.0),
                             s.get("init_profile", "indicator"))
    return frontsim.SimConfig(
        n=ctx.n, mu_spec=ctx.spec, t_final=t_final, points_per_cell=s.get("points_per_cell", 8),
        dt=s.get("dt", 0.05), init=init, level=s.get("level", 0.5), directions=(tuple(ctx.e),),
        sample_interval=s.get("sample_interval", 1.0), margin=s.get("margin", 30.0),
    )


def check_front_speed(ctx: Context):
    tf = ctx.opt("sim_t_final", 100.0)
    res = frontsim.run_simulation(_sim_config(ctx, tf))
    fit = frontsim.fit_bramson(res.traces[0], ctx.opt("sim_fit_t_min", tf / 10))
    w = ctx.record().w_star
    rel = abs(fit.v - w) / w
    tol = ctx.opt("speed_tol", 0.01)
    return _result("front_speed", rel <= tol, {"v": fit.v, "w_star": w, "relative_error": rel,
                                               "edge_max": res.edge_max}, tol)


def check_bramson_fit(ctx: Context):
    if ctx.n != 1 or not ctx.constant:
        return _skip("bramson_fit", "needs a 1D homogeneous medium")
    tf = ctx.opt("bramson_t_final", 2000.0)
    lo, hi = ctx.opt("bramson_window", [tf / 10, tf])
    res = frontsim.run_simulation(_sim_config(ctx, tf))
    fit = frontsim.fit_bramson(res.traces[0], lo, hi)
    target = speeds.bramson_coefficient(1, math.sqrt(ctx.spec.c), 1.0)
    ok = target - 0.5 <= fit.alpha <= target + 0.5
    return _result("bramson_fit", ok, {"alpha_fit": fit.alpha, "target": target, **fit.to_dict()},
                   [target - 0.5, target + 0.5])


def halfspace_config(ctx: Context, frame: str, t_final: float, alpha: float = 0.0, **kw):
    rec = ctx.record()
    h = dict(ctx.cfg.get("halfspace") or {})
    cs = rec.c_star if ctx.n == 1 else float(rec.diagnostics["c_star_prime"])
    v0 = halfspace.InitialBump(h.get("v0_center", 2.0), 0.0, h.get("v0_radius", 1.0))
    base = dict(
        n=ctx.n, mu_spec=ctx.spec, e=rec.e, e_prime=rec.e_prime, c_star=cs,
        lambda_star=rec.lambda_star_prime, w_star=rec.w_star, t_final=t_final, frame=frame, alpha=alpha,
        T=h.get("T"), h=h.get("h", 0.125), dt=h.get("dt", 0.05), xi_max=h.get("xi_max"), width=h.get("width"),
        grid_N=ctx.N, v0=v0, sigma=h.get("sigma", 1.0), rho=h.get("rho", 0.5), L=h.get("L", 5.0),
        ball=h.get("ball", 0.5), sample_interval=h.get("sample_interval", 1.0),
    )
    base.update(kw)
    return halfspace.HalfspaceConfig(**base)


def check_halfspace_exponents(ctx: Context):
    tf = ctx.opt("halfspace_t_final", 1000.0)
    lo, hi = ctx.opt("halfspace_window", [tf / 10, tf])
    res = halfspace.run_linear_frame(halfspace_config(ctx, "linear", tf))
    a = halfspace.fit_power_law(res.probes["sqrt_t"], lo, hi)
    b = halfspace.fit_power_law(res.probes["fixed"], lo, hi)
    ta, tb = -(ctx.n + 1) / 2, -(ctx.n / 2 + 1)
    ok = abs(a.exponent - ta) <= 0.1 and abs(b.exponent - tb) <= 0.1
    return _result("halfspace_exponents", ok,
                   {"sqrt_t": a.to_dict(), "fixed": b.to_dict(), "targets": [ta, tb],
                    "first_moment_range": res.diagnostics["first_moment_range"]}, 0.1)


def _log_runs(ctx: Context):
    if getattr(ctx, "_log", None) is None:
        tf = ctx.opt("log_t_final", 1000.0)
        lo, hi = ctx.opt("log_window", [tf / 10, tf])
        rec = ctx.record()
        alpha = (ctx.n / 2 + 1) / rec.lambda_star_prime
        out = {}
        for delta in (0.0, -0.5, 0.5):
            res = halfspace.run_log_frame(halfspace_config(ctx, "log", tf, alpha + delta, record_times=(tf,)))
            out[delta] = res
        ctx._log = (out, lo, hi, alpha)
    return ctx._log


def check_log_frame(ctx: Context):
    runs, lo, hi, alpha = _log_runs(ctx)
    lam = ctx.record().lambda_star_prime
    sr = runs[0.0].probes["front"]
    sel = (sr.t >= lo) & (sr.t <= hi)
    ratio = float(sr.values[sel].max() / sr.values[sel].min())
    slopes = {}
    ok = ratio <= 4
    for delta in (-0.5, 0.5):
        fit = halfspace.fit_power_law(runs[delta].probes["front"], lo, hi)
        slopes[str(delta)] = {"slope": fit.exponent, "target": lam * delta}
        ok &= abs(fit.exponent - lam * delta) <= 0.2
    return _result("log_frame", ok, {"alpha": alpha, "ratio": ratio, "window": [lo, hi], "drift": slopes},
                   {"ratio": 4.0, "slope": 0.2})


def check_exponential_tail(ctx: Context):
    runs, *_ = _log_runs(ctx)
    st = runs[0.0].final
    r = halfspace.check_exponential_tail(st)
    ok = r["relative_error"] <= 0.05 and r["boundary_r2"] >= 0.99
    return _result("exponential_tail", ok, r, {"relative_error": 0.05, "boundary_r2": 0.99})


def check_covariance(ctx: Context):
    if ctx.n != 2:
        return _skip("covariance", "two-dimensional check")
    tf = ctx.opt("halfspace_t_final", 200.0)
    res = halfspace.run_linear_frame(halfspace_config(ctx, "linear", tf, record_times=(tf,), sample_interval=10.0))
    _, sol = _cell_solution(ctx)
    cov = halfspace.profile_covariance(res.states[-1])
    rel = float(np.max(np.abs(cov["S_fit"] - sol.S)) / np.max(np.abs(sol.S)))
    return _result("covariance", rel <= 0.1, {"S": sol.S.ravel().tolist(), "S_fit": cov["S_fit"].ravel().tolist(),
                                              "relative_error": rel}, 0.1)


CHECKS = {name: globals()[f"check_{name}"] for name in ALL_CHECKS}


def run_suite(cfg: dict, checks=None, threads: int = 1) -> list:
    names = checks or (cfg.get("verify") or {}).get("checks") or ALL_CHECKS
    unknown = [c for c in names if c not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check {unknown[0]!r}")
    cfg = dict(cfg, _threads=threads)
    ctx = Context(cfg)
    return [CHECKS[name](ctx) for name in names]
