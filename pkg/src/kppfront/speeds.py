"""Minimal speeds, Freidlin-Gartner spreading speeds and direction atlases.

c*(e) = min_lam gamma(e, lam) / lam is found by bracketing plus a
derivative-free search on log(lam).  The spreading speed
w*(e) = min_{e.f > 0} c*(f) / (e.f) is located on a coarse direction grid and
then refined in angle with fresh eigenvalue solves.
"""

from __future__ import annotations

import json
import math
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .cell import cell_operator, unit_vector
from .errors import BracketFailure, DomainError, EmptyHalfSphere, ZeroVector
from .torus import MuSpec, PeriodicScalarField, TorusGrid, build_field

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
LAM_MIN, LAM_MAX = 1e-3, 1e3
SEARCH_EIG_TOL = 1e-12


def golden_section(f, a: float, b: float, xtol: float, max_iter: int = 500):
    """Golden-section search for a minimum of a unimodal f on [a, b].

    Returns (x, f(x), evaluations).  Stops once the bracket is shorter than
    ``xtol``.
    """
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    nev = 2
    while abs(b - a) > xtol and nev < max_iter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        nev += 1
    return (c, fc, nev) if fc <= fd else (d, fd, nev)


def _minimize(f, a, b, xtol, method):
    if method == "golden":
        return golden_section(f, a, b, xtol)
    if method == "brent":
        res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": xtol, "maxiter": 500})
        return float(res.x), float(res.fun), int(res.nfev)
    raise ValueError(f"unknown search method {method!r}")


class _SpeedFunction:
    """lam -> gamma(e, lam) / lam with eigenvector warm starts."""

    def __init__(self, mu, e, eig_tol):
        self.op = cell_operator(mu)
        self.e = e
        self.eig_tol = eig_tol
        self.x0 = None
        self.evaluations = 0

    def __call__(self, lam):
        gamma, x, _, _ = self.op.principal(self.e, lam, tol=self.eig_tol, x0=self.x0)
        self.x0 = x
        self.evaluations += 1
        return gamma / lam


def _bracket(f, lam0, factor):
    """Walk downhill in log(lam) until the minimum is enclosed."""
    lo, mid, hi = lam0 / factor, lam0, lam0 * factor
    f_lo, f_mid, f_hi = f(lo), f(mid), f(hi)
    while not (f_mid <= f_lo and f_mid <= f_hi):
        if f_lo < f_hi:
            hi, f_hi, mid, f_mid = mid, f_mid, lo, f_lo
            lo = lo / factor
            if lo < LAM_MIN:
                raise BracketFailure(f"no minimum of gamma/lambda above lambda={LAM_MIN}")
            f_lo = f(lo)
        else:
            lo, f_lo, mid, f_mid = mid, f_mid, hi, f_hi
            hi = hi * factor
            if hi > LAM_MAX:
                raise BracketFailure(f"no minimum of gamma/lambda below lambda={LAM_MAX}")
            f_hi = f(hi)
        factor *= 2.0
    return lo, hi


@dataclass(frozen=True)
class SpeedResult:
    c_star: float
    lambda_star: float
    bracket: tuple
    evaluations: int
    stationarity: float


def minimal_speed_details(
    mu: PeriodicScalarField,
    e,
    tol: float = 1e-6,
    xtol: float = 1e-8,
    lam_guess: float = 1.0,
    factor: float = 2.0,
    method: str = "golden",
    eig_tol: float = SEARCH_EIG_TOL,
) -> SpeedResult:
    """Bracket, search on log(lam), then verify stationarity.

    The eigenvalue tolerance is tighter than the default because the search
    resolves a flat minimum: an error d in gamma moves the located lam by
    about sqrt(d).
    """
    e = unit_vector(e, mu.grid.n)
    f = _SpeedFunction(mu, e, eig_tol)
    lo, hi = _bracket(f, lam_guess, factor)
    s, _, _ = _minimize(lambda s: f(math.exp(s)), math.log(lo), math.log(hi), xtol, method)
    lam = math.exp(s)
    # final value and stationarity check with a tighter eigen-solve
    c = f(lam)
    h = 1e-4 * lam
    slope = (f(lam + h) - f(lam - h)) / (2 * h)
    if abs(slope) > tol:
        raise BracketFailure(f"d(gamma/lambda)/dlambda = {slope:.3e} at the located minimum")
    return SpeedResult(float(c), float(lam), (lo, hi), f.evaluations, float(slope))


def minimal_speed(mu: PeriodicScalarField, e, tol: float = 1e-6, **kw) -> tuple[float, float]:
    """(c*, lambda*) for direction e."""
    r = minimal_speed_details(mu, e, tol=tol, **kw)
    return r.c_star, r.lambda_star


def extended_speed(mu: PeriodicScalarField, v, **kw) -> float:
    """Degree-one homogeneous extension c*(v) = |v| c*(v/|v|)."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    norm = float(np.linalg.norm(v))
    if norm == 0:
        raise ZeroVector("c* is not defined at the origin")
    return norm * minimal_speed(mu, v / norm, **kw)[0]


def extended_lambda(mu: PeriodicScalarField, v, **kw) -> float:
    """lambda*(v) = lambda*(v/|v|) / |v|."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    norm = float(np.linalg.norm(v))
    if norm == 0:
        raise ZeroVector("lambda* is not defined at the origin")
    return minimal_speed(mu, v / norm, **kw)[1] / norm


def bramson_coefficient(n: int, lambda_star_at_eprime: float, cos_angle: float) -> float:
    """alpha = (n/2 + 1) / (lambda*(e') e.e')."""
    if n < 1:
        raise DomainError("dimension must be positive")
    if not lambda_star_at_eprime > 0:
        raise DomainError("lambda*(e') must be positive")
    if not cos_angle > 0:
        raise DomainError("e.e' must be positive")
    return (n / 2 + 1) / (lambda_star_at_eprime * cos_angle)


def angle_vector(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def wrap_angle(theta):
    """Map to [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2 * np.pi) - np.pi


def spreading_speed(
    thetas: np.ndarray,
    c_grid: np.ndarray,
    e,
    refine=None,
    xtol: float = 1e-7,
    method: str = "golden",
):
    """(w*, e', evaluations) from c* sampled on a uniform angle grid.

    ``refine`` maps an angle to a freshly computed c*; when given, the grid
    minimiser of c*(f)/(e.f) is refined inside its two neighbouring cells.
    For n = 1 pass a single direction: w* = c*(e), e' = e.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if e.size == 1:
        return float(np.ravel(c_grid)[0]), e / abs(e[0]), 0
    th = math.atan2(e[1], e[0])
    cosines = np.cos(np.asarray(thetas) - th)
    admissible = cosines > 0
    if not admissible.any():
        raise EmptyHalfSphere("no grid direction has positive projection on e")
    ratio = np.where(admissible, np.asarray(c_grid) / np.where(admissible, cosines, 1.0), np.inf)
    j = int(np.argmin(ratio))
    w, tp = float(ratio[j]), float(thetas[j])
    nev = 0
    if refine is not None:
        step = 2 * np.pi / len(thetas)
        g = lambda t: refine(t) / math.cos(t - th)
        t, val, nev = _minimize(g, tp - step, tp + step, xtol, method)
        if val < w:
            w, tp = float(val), float(t)
    return w, angle_vector(tp), nev


@dataclass(frozen=True)
class DirectionRecord:
    e: tuple
    lambda_star: float
    c_star: float
    e_prime: tuple
    w_star: float
    alpha: float
    lambda_star_prime: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self) -> float:
        return math.atan2(self.e[1], self.e[0]) if len(self.e) == 2 else (0.0 if self.e[0] > 0 else math.pi)

    @property
    def theta_prime(self) -> float:
        ep = self.e_prime
        return math.atan2(ep[1], ep[0]) if len(ep) == 2 else (0.0 if ep[0] > 0 else math.pi)

    def to_record(self) -> dict:
        return {
            "theta": self.theta,
            "e": list(self.e),
            "lambda_star": self.lambda_star,
            "c_star": self.c_star,
            "theta_prime": self.theta_prime,
            "w_star": self.w_star,
            "alpha": self.alpha,
        }


ATLAS_CSV_COLUMNS = ("theta", "c_star", "lambda_star", "theta_prime", "w_star", "alpha")


@dataclass
class Atlas:
    mu_spec: MuSpec
    n: int
    grid_N: int
    records: list
    resolution: dict = field(default_factory=dict)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    def to_dict(self) -> dict:
        return {
            "mu_spec": self.mu_spec.to_dict(),
            "n": self.n,
            "grid_N": self.grid_N,
            "records": [r.to_record() for r in self.records],
        }

    def write_json(self, path, extra: dict | None = None) -> None:
        d = dict(extra or {})
        d.update(self.to_dict())
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(ATLAS_CSV_COLUMNS)
            for r in self.records:
                rec = r.to_record()
                w.writerow([repr(float(rec[k])) for k in ATLAS_CSV_COLUMNS])


# -- atlas construction -------------------------------------------------------
#
# Worker functions take plain data so they can run in a process pool.  Each
# task depends only on its inputs, never on completion order.


def _coarse_task(args):
    spec_d, n, N, theta, lam_guess, kw = args
    mu = build_field(MuSpec.from_dict(spec_d), TorusGrid(n, N))
    e = angle_vector(theta) if n == 2 else np.array([math.cos(theta)])
    r = minimal_speed_details(mu, e, lam_guess=lam_guess, **kw)
    return r.c_star, r.lambda_star, r.evaluations


def _local_speed(mu, thetas, lam_grid, kw):
    step = thetas[1] - thetas[0]

    def c_at(t):
        # lambda* guess from linear interpolation of the coarse grid
        u = ((t - thetas[0]) / step) % len(thetas)
        i = int(math.floor(u))
        frac = u - i
        guess = (1 - frac) * lam_grid[i % len(thetas)] + frac * lam_grid[(i + 1) % len(thetas)]
        return minimal_speed_details(mu, angle_vector(t), lam_guess=guess, factor=1.02, **kw)

    return c_at


def _refine_task(args):
    spec_d, N, thetas, c_grid, lam_grid, i, kw, angle_tol, gradient_step, method = args
    mu = build_field(MuSpec.from_dict(spec_d), TorusGrid(2, N))
    c_at = _local_speed(mu, thetas, lam_grid, kw)
    e = angle_vector(thetas[i])
    w, ep, nev = spreading_speed(thetas, c_grid, e, refine=lambda t: c_at(t).c_star, xtol=angle_tol, method=method)
    tp = math.atan2(ep[1], ep[0])
    at_prime = c_at(tp)
    out = {"w_star": w, "theta_prime": tp, "lambda_prime": at_prime.lambda_star, "angle_evals": nev}
    if gradient_step:
        grad = np.zeros(2)
        for a in range(2):
            dv = np.zeros(2)
            dv[a] = gradient_step
            vals = []
            for sgn in (1.0, -1.0):
                v = ep + sgn * dv
                nv = float(np.linalg.norm(v))
                vals.append(nv * c_at(math.atan2(v[1], v[0])).c_star)
            grad[a] = (vals[0] - vals[1]) / (2 * gradient_step)
        out["grad_c_star"] = grad.tolist()
    return out


def _map(fn, tasks, threads):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return [fn(t) for t in tasks]


def build_atlas(
    spec: MuSpec,
    n: int,
    N: int,
    directions: int = 720,
    threads: int = 1,
    angle_tol: float = 1e-7,
    gradient_step: float = 1e-4,
    lam_guess: float | None = None,
    method: str = "brent",
    angle_method: str = "brent",
    speed_kw: dict | None = None,
) -> Atlas:
    """Per-direction (lambda*, c*, e', w*, alpha) over a uniform direction grid.

    In 2D the grid has ``directions`` angles starting at 0; in 1D it is
    {+1, -1}.  ``gradient_step`` > 0 also stores the central-difference
    gradient of the extended c* at each e' (used by the minimiser check).
    """
    kw = dict(speed_kw or {})
    kw["method"] = method
    spec_d = spec.to_dict()
    mu = build_field(spec, TorusGrid(n, N))
    if lam_guess is None:
        lam_guess = math.sqrt(float(np.mean(mu.values)))
    if n == 1:
        thetas = np.array([0.0, math.pi])
    else:
        if directions < 8:
            raise ValueError("need at least 8 directions")
        thetas = 2 * np.pi * np.arange(directions) / directions
        thetas = np.asarray(wrap_angle(thetas))
        thetas = np.sort(thetas)
    coarse = _map(_coarse_task, [(spec_d, n, N, float(t), lam_guess, kw) for t in thetas], threads)
    c_grid = np.array([c[0] for c in coarse])
    lam_grid = np.array([c[1] for c in coarse])
    records = []
    if n == 1:
        for i, t in enumerate(thetas):
            e = (1.0,) if i == 0 else (-1.0,)
            alpha = bramson_coefficient(1, lam_grid[i], 1.0)
            records.append(DirectionRecord(e, lam_grid[i], c_grid[i], e, c_grid[i], alpha, lam_grid[i],
                                           {"evaluations": coarse[i][2]}))
    else:
        tasks = [
            (spec_d, N, thetas, c_grid, lam_grid, i, kw, angle_tol, gradient_step, angle_method)
            for i in range(len(thetas))
        ]
        refined = _map(_refine_task, tasks, threads)
        for i, t in enumerate(thetas):
            r = refined[i]
            e = angle_vector(t)
            ep = angle_vector(r["theta_prime"])
            cos = float(e @ ep)
            alpha = bramson_coefficient(2, r["lambda_prime"], cos)
            diag = {"evaluations": coarse[i][2], "angle_evals": r["angle_evals"]}
            if "grad_c_star" in r:
                diag["grad_c_star"] = r["grad_c_star"]
            records.append(DirectionRecord(
                tuple(e), float(lam_grid[i]), float(c_grid[i]), tuple(ep), float(r["w_star"]), alpha,
                float(r["lambda_prime"]), diag,
            ))
    res = {"directions": len(thetas), "angle_step": float(2 * np.pi / len(thetas)) if n == 2 else None,
           "angle_tol": angle_tol, "method": method, "angle_method": angle_method}
    return Atlas(spec, n, N, records, res)


# -- sampled check of the minimiser theory ------------------------------------


def _grid_local_minima(values: np.ndarray) -> np.ndarray:
    """Indices of (periodic) local minima of finite entries."""
    left = np.roll(values, 1)
    right = np.roll(values, -1)
    return np.flatnonzero(np.isfinite(values) & (values <= left) & (values <= right))


def verify_minimizer_theory(
    atlas: Atlas,
    uniqueness_margin: float = 1e-3,
    cluster_tol_deg: float = 1.0,
    coverage_factor: float = 3.0,
    grad_tol: float = 1e-2,
) -> dict:
    """Sampled uniqueness, injectivity, coverage and gradient checks.

    ``uniqueness_margin`` is relative to w*.  Each check reports pass/fail
    together with the grid resolution it was made at.
    """
    if atlas.n == 1:
        ok = all(r.e == r.e_prime and r.w_star == r.c_star for r in atlas.records)
        return {"n": 1, "directions": len(atlas.records), "all_pass": ok,
                "checks": {name: {"pass": ok} for name in ("uniqueness", "injectivity", "coverage", "gradient")}}
    thetas = atlas.thetas
    M = len(thetas)
    step = 2 * np.pi / M
    cluster = math.radians(cluster_tol_deg)
    c_grid = np.array([r.c_star for r in atlas.records])
    tprime = np.array([r.theta_prime for r in atlas.records])

    worst_spread, multi = 0.0, []
    for i, r in enumerate(atlas.records):
        cos = np.cos(thetas - thetas[i])
        vals = np.where(cos > 0, c_grid / np.where(cos > 0, cos, 1.0), np.inf)
        mins = _grid_local_minima(vals)
        near = mins[vals[mins] <= r.w_star * (1 + uniqueness_margin)]
        if near.size:
            # grid minima sit up to half a step from the refined minimiser
            spread = max(0.0, float(np.max(np.abs(wrap_angle(thetas[near] - tprime[i])))) - step / 2)
            worst_spread = max(worst_spread, spread)
            if spread > cluster:
                multi.append(i)
    uniqueness = {"pass": not multi, "violations": len(multi), "max_spread_deg": math.degrees(worst_spread)}

    diff_e = np.abs(wrap_angle(thetas[:, None] - thetas[None, :]))
    diff_p = np.abs(wrap_angle(tprime[:, None] - tprime[None, :]))
    clash = (diff_e > 2 * step + 1e-12) & (diff_p <= cluster)
    n_clash = int(np.count_nonzero(np.triu(clash)))
    far = diff_e > 2 * step + 1e-12
    min_sep = float(np.min(diff_p[far])) if far.any() else float("nan")
    injectivity = {"pass": n_clash == 0, "violations": n_clash, "min_separation_deg": math.degrees(min_sep)}

    srt = np.sort(tprime)
    gaps = np.diff(np.concatenate([srt, [srt[0] + 2 * np.pi]]))
    max_gap = float(gaps.max())
    coverage = {"pass": max_gap <= coverage_factor * step + 1e-12, "max_gap_deg": math.degrees(max_gap),
                "limit_deg": math.degrees(coverage_factor * step)}

    errs = []
    for r in atlas.records:
        g = r.diagnostics.get("grad_c_star")
        if g is None:
            continue
        errs.append(float(np.linalg.norm(np.asarray(g) - r.w_star * np.asarray(r.e)) / r.w_star))
    gradient = {"pass": bool(errs) and max(errs) <= grad_tol, "max_rel_error": max(errs) if errs else None,
                "checked": len(errs), "tol": grad_tol}
    checks = {"uniqueness": uniqueness, "injectivity": injectivity, "coverage": coverage, "gradient": gradient}
    return {
        "n": 2,
        "directions": M,
        "angle_step_deg": math.degrees(step),
        "uniqueness_margin": uniqueness_margin,
        "cluster_tol_deg": cluster_tol_deg,
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks.values()),
    }


def direction_record(
    mu: PeriodicScalarField,
    e,
    directions: int = 256,
    angle_tol: float = 1e-7,
    method: str = "brent",
) -> DirectionRecord:
    """Full (lambda*, c*, e', w*, alpha) record for one direction e.

    In 2D c* is first sampled on ``directions`` angles, then the minimiser
    of the Freidlin-Gartner ratio is refined with fresh solves.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    e = e / np.linalg.norm(e)
    n = mu.grid.n
    kw = {"method": method}
    if n == 1:
        r = minimal_speed_details(mu, e, **kw)
        alpha = bramson_coefficient(1, r.lambda_star, 1.0)
        return DirectionRecord(tuple(e), r.lambda_star, r.c_star, tuple(e), r.c_star, alpha, r.lambda_star,
                               {"evaluations": r.evaluations})
    lam0 = math.sqrt(float(np.mean(mu.values)))
    thetas = np.sort(np.asarray(wrap_angle(2 * np.pi * np.arange(directions) / directions)))
    coarse = [minimal_speed_details(mu, angle_vector(t), lam_guess=lam0, **kw) for t in thetas]
    c_grid = np.array([c.c_star for c in coarse])
    lam_grid = np.array([c.lambda_star for c in coarse])
    c_at = _local_speed(mu, thetas, lam_grid, kw)
    w, ep, nev = spreading_speed(thetas, c_grid, e, refine=lambda t: c_at(t).c_star, xtol=angle_tol, method=method)
    at_e = c_at(math.atan2(e[1], e[0]))
    at_p = c_at(math.atan2(ep[1], ep[0]))
    cos = float(e @ ep)
    return DirectionRecord(tuple(e), at_e.lambda_star, at_e.c_star, tuple(ep), float(w),
                           bramson_coefficient(2, at_p.lambda_star, cos), at_p.lambda_star,
                           {"angle_evals": nev, "directions": directions, "c_star_prime": at_p.c_star})
