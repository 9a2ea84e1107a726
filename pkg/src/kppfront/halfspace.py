"""Linearised Dirichlet problems in moving half-spaces.

Both frames solve w_t = Lap w + mu(x) w on {x.e' > c* t - alpha l(t)},
l(t) = log((t+T)/T), with w = 0 on the boundary (alpha = 0 is the linearly
moving half-space).  We work in z = x - s(t) e with

    s(t) = w* t - alpha l(t) / (e.e'),

so the boundary is the fixed plane xi = z.e' = 0 (because w* e.e' = c*), and
evolve P = w exp(lam* xi), which equals psi p for the perturbation p of the
exponential solution.  Writing b(t) = c* - alpha/(t+T) and eta for the
coordinate along the unit normal e'_perp, P solves

    P_t = Lap P + (b - 2 lam*) P_xi + s'(t) (e.e'_perp) P_eta
          + (lam*^2 - lam* b + mu(z + s(t) e)) P.

Time stepping is Strang splitting: exact potential factor, Crank-Nicolson in
xi (Dirichlet at 0 and xi_max, a few backward Euler half steps first to damp
rough data), exact Fourier exponential in eta (periodic strip, 2D only).  The potential
factor integrates mu along the frame path exactly over each half step; the
splitting error then scales like dt^2 times the size of mu's oscillation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .cell import principal_eigenpair
from .errors import (
    BoundaryContamination,
    DomainExceeded,
    NonPositiveSample,
    StabilityViolation,
    WindowTooNarrow,
)
from .torus import MuSpec, TorusGrid, build_field

TAIL_TOL = 1e-10


@dataclass(frozen=True)
class InitialBump:
    """Smooth bump w0 centred at (xi, eta) = (center_xi, center_eta)."""

    center_xi: float = 2.0
    center_eta: float = 0.0
    radius: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.radius <= 0 or self.amplitude <= 0:
            raise ValueError("bump radius and amplitude must be positive")
        if self.center_xi - self.radius < 0:
            raise ValueError("initial data must be supported in the open half-space")

    def evaluate(self, xi, eta=0.0):
        r2 = ((xi - self.center_xi) ** 2 + (eta - self.center_eta) ** 2) / self.radius**2
        out = np.zeros(np.broadcast(xi, eta).shape)
        inside = r2 < 1
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out


@dataclass(frozen=True)
class HalfspaceConfig:
    n: int
    mu_spec: MuSpec
    e: tuple
    e_prime: tuple
    c_star: float
    lambda_star: float
    w_star: float
    t_final: float
    frame: str = "linear"  # or "log"
    alpha: float = 0.0
    T: float | None = None
    h: float = 0.125
    dt: float = 0.05
    xi_max: float | None = None
    width: float | None = None
    grid_N: int = 64
    v0: InitialBump = field(default_factory=InitialBump)
    sigma: float = 1.0
    rho: float = 0.5
    L: float = 5.0
    ball: float = 0.5
    sample_interval: float = 1.0
    record_times: tuple = ()
    startup_steps: int = 4
    eta_symbol: str = "spectral"  # or "fd": second-order symbols matching the xi stencil

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.frame not in ("linear", "log"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.eta_symbol not in ("spectral", "fd"):
            raise ValueError(f"unknown eta symbol {self.eta_symbol!r}")
        if self.frame == "linear" and self.alpha != 0:
            raise ValueError("the linear frame has alpha = 0")
        if self.dt <= 0 or self.t_final <= 0 or self.h <= 0:
            raise ValueError("dt, h and t_final must be positive")
        if min(self.c_star, self.lambda_star, self.w_star) <= 0:
            raise ValueError("c*, lambda* and w* must be positive")
        for name in ("e", "e_prime"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (self.n,) or not math.isclose(np.linalg.norm(v), 1.0, rel_tol=1e-9):
                raise ValueError(f"{name} must be a unit vector of dimension {self.n}")
            object.__setattr__(self, name, tuple(float(c) for c in v))
        if self.cos_angle <= 0:
            raise ValueError("need e.e' > 0")
        if self.n == 2 and self.width is None:
            raise ValueError("2D runs need a transverse strip width")
        object.__setattr__(self, "record_times", tuple(float(t) for t in self.record_times))

    @property
    def cos_angle(self) -> float:
        return float(np.dot(self.e, self.e_prime))

    @property
    def e_perp(self) -> np.ndarray:
        ep = np.asarray(self.e_prime)
        return np.array([-ep[1], ep[0]]) if self.n == 2 else np.zeros(1)

    @property
    def T_value(self) -> float:
        """Time offset of the log frame; default mirrors T >= 2 alpha / c*."""
        if self.T is not None:
            return float(self.T)
        return max(1.0, 2 * self.alpha / self.c_star)

    def xi_extent(self) -> float:
        if self.xi_max is not None:
            return float(self.xi_max)
        support = self.v0.center_xi + self.v0.radius
        return float(math.ceil(6.0 * math.sqrt(4 * self.t_final) + 2 * support + self.L))

    def shift(self, t):
        """s(t): distance travelled by the frame along e."""
        lg = math.log((t + self.T_value) / self.T_value) if self.alpha else 0.0
        return self.w_star * t - self.alpha * lg / self.cos_angle

    def shift_rate(self, t):
        return self.w_star - (self.alpha / (t + self.T_value) if self.alpha else 0.0) / self.cos_angle

    def boundary_speed(self, t):
        """b(t) = c* - alpha/(t+T)."""
        return self.c_star - (self.alpha / (t + self.T_value) if self.alpha else 0.0)


@dataclass(frozen=True)
class ProbeSeries:
    description: str
    t: np.ndarray
    values: np.ndarray

    def to_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["t", "value"])
            for t, v in zip(self.t, self.values):
                w.writerow([repr(float(t)), repr(float(v))])


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    prefactor: float
    residual: float
    window: tuple

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "prefactor": self.prefactor, "residual": self.residual,
                "window": list(self.window)}


@dataclass
class HalfspaceState:
    """P = w exp(lam* xi) on interior nodes at time t."""

    t: float
    xi: np.ndarray
    eta: np.ndarray | None
    P: np.ndarray
    config: HalfspaceConfig

    def points(self) -> np.ndarray:
        """Physical positions of the nodes, shape (..., n)."""
        cfg = self.config
        ep = np.asarray(cfg.e_prime)
        off = cfg.shift(self.t) * np.asarray(cfg.e)
        if cfg.n == 1:
            return (self.xi[:, None] * ep + off)
        X = self.xi[:, None, None] * ep + self.eta[None, :, None] * cfg.e_perp + off
        return X


@dataclass
class HalfspaceResult:
    states: list
    probes: dict
    final: HalfspaceState
    diagnostics: dict


class _Psi:
    """psi(x; e', lam*) evaluated at arbitrary points (identically one for constant media)."""

    def __init__(self, cfg: HalfspaceConfig):
        if cfg.mu_spec.variant == "constant" or not cfg.mu_spec.modes:
            self.field = None
        else:
            mu = build_field(cfg.mu_spec, TorusGrid(cfg.n, cfg.grid_N))
            self.field = principal_eigenpair(mu, cfg.e_prime, cfg.lambda_star).psi

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.field is None:
            return np.ones(pts.shape[:-1])
        return self.field.evaluate(pts % 1.0)


class _Medium:
    """mu(z + s e) on the fixed node set, via precomputed trig factors."""

    def __init__(self, cfg: HalfspaceConfig, base_pts: np.ndarray):
        self.spec = cfg.mu_spec
        self.e = np.asarray(cfg.e)
        self.terms = []
        if self.spec.variant == "trig_series":
            for k, a, b in self.spec.modes:
                kv = np.array(k, dtype=float)
                ph = 2 * np.pi * (base_pts @ kv)
                self.terms.append((kv, a, b, np.cos(ph), np.sin(ph)))
        self.shape = base_pts.shape[:-1]

    def __call__(self, s: float):
        if self.spec.variant == "constant":
            return np.full(self.shape, self.spec.c)
        out = np.full(self.shape, self.spec.offset)
        for kv, a, b, c0, s0 in self.terms:
            ph = 2 * np.pi * s * float(kv @ self.e)
            cs, sn = math.cos(ph), math.sin(ph)
            # cos(p + q), sin(p + q) from the stored factors
            if a:
                out += a * (c0 * cs - s0 * sn)
            if b:
                out += b * (s0 * cs + c0 * sn)
        return out

    def integral(self, s0: float, s1: float, dt: float):
        """Time integral of mu(z + s e) over a step of length dt on which s
        moves linearly from s0 to s1 (exact for trig media)."""
        if self.spec.variant == "constant":
            return np.full(self.shape, self.spec.c * dt)
        out = np.full(self.shape, self.spec.offset * dt)
        for kv, a, b, c0, sn0 in self.terms:
            w = 2 * np.pi * float(kv @ self.e)
            q0, q1 = w * s0, w * s1
            if abs(q1 - q0) < 1e-8:
                qm = 0.5 * (q0 + q1)
                cm, sm = math.cos(qm) * dt, math.sin(qm) * dt
            else:
                # mean of cos(q), sin(q) over the step, times dt
                f = dt / (q1 - q0)
                cm = f * (math.sin(q1) - math.sin(q0))
                sm = -f * (math.cos(q1) - math.cos(q0))
            if a:
                out += a * (c0 * cm - sn0 * sm)
            if b:
                out += b * (sn0 * cm + c0 * sm)
        return out


def _cn_bands(m: int, h: float, a: float, tau: float):
    """Banded (I - tau D) with D = D2 + a D1 (central), Dirichlet ends."""
    lo = 1.0 / h**2 - a / (2 * h)
    up = 1.0 / h**2 + a / (2 * h)
    ab = np.empty((3, m))
    ab[0, 1:] = -tau * up
    ab[0, 0] = 0.0
    ab[1, :] = 1.0 + 2 * tau / h**2
    ab[2, :-1] = -tau * lo
    ab[2, -1] = 0.0
    return ab, lo, up


def _apply_d(P, h, a, lo, up):
    """D P with zero Dirichlet data, along axis 0."""
    out = -2.0 / h**2 * P
    out[1:] += lo * P[:-1]
    out[:-1] += up * P[1:]
    return out


class _Solver:
    def __init__(self, cfg: HalfspaceConfig):
        self.cfg = cfg
        h = cfg.h
        xi_max = cfg.xi_extent()
        m = int(round(xi_max / h)) - 1
        self.xi = h * np.arange(1, m + 1)
        self.m = m
        if cfg.n == 2:
            W = cfg.width
            k = int(round(W / h))
            self.eta = -W / 2 + h * np.arange(k)
            self.k_eta = np.fft.rfftfreq(k, d=1.0 / k)
            self.n_eta = k
        else:
            self.eta = None
        base = HalfspaceState(0.0, self.xi, self.eta, None, cfg).points()
        # points() includes the frame shift s(0) = 0
        self.medium = _Medium(cfg, base)

    def potential(self, t):
        cfg = self.cfg
        lam = cfg.lambda_star
        return lam**2 - lam * cfg.boundary_speed(t) + self.medium(cfg.shift(t))

    def potential_integral(self, t0, t1):
        """Exact integral of the potential over [t0, t1] (the frame shift is
        taken linear in between; it is exactly linear in the linear frame)."""
        cfg = self.cfg
        lam = cfg.lambda_star
        dt = t1 - t0
        drift = cfg.c_star * dt
        if cfg.alpha:
            T = cfg.T_value
            drift -= cfg.alpha * math.log((t1 + T) / (t0 + T))
        return (lam**2 * dt - lam * drift) + self.medium.integral(cfg.shift(t0), cfg.shift(t1), dt)

    def xi_step(self, P, t_mid, dt, implicit_only=False):
        cfg = self.cfg
        a = cfg.boundary_speed(t_mid) - 2 * cfg.lambda_star
        if implicit_only:
            ab, _, _ = _cn_bands(self.m, cfg.h, a, dt / 2)
            P = solve_banded((1, 1), ab, P)
            return solve_banded((1, 1), ab, P)
        ab, lo, up = _cn_bands(self.m, cfg.h, a, dt / 2)
        rhs = P + dt / 2 * _apply_d(P, cfg.h, a, lo, up)
        return solve_banded((1, 1), ab, rhs)

    def eta_step(self, P, t_mid, dt):
        cfg = self.cfg
        a = cfg.shift_rate(t_mid) * float(np.dot(cfg.e, cfg.e_perp))
        h, k = cfg.h, self.n_eta
        theta = 2 * np.pi * self.k_eta / k
        if cfg.eta_symbol == "spectral":
            kk = theta / h
            symbol = -kk**2 + 1j * a * kk
        else:
            symbol = -(4 / h**2) * np.sin(theta / 2) ** 2 + 1j * a * np.sin(theta) / h
        Ph = np.fft.rfft(P, axis=1) * np.exp(dt * symbol)[None, :]
        return np.fft.irfft(Ph, n=k, axis=1)

    def step(self, P, t, dt, startup):
        half = 0.5 * dt
        P = P * np.exp(self.potential_integral(t, t + half))
        P = self.xi_step(P, t + half, dt, implicit_only=startup)
        if self.cfg.n == 2:
            P = self.eta_step(P, t + half, dt)
        return P * np.exp(self.potential_integral(t + half, t + dt))


def initial_state(cfg: HalfspaceConfig, solver: _Solver | None = None) -> HalfspaceState:
    s = solver or _Solver(cfg)
    if cfg.n == 1:
        XI = s.xi
        w0 = cfg.v0.evaluate(XI)
    else:
        XI, ETA = np.meshgrid(s.xi, s.eta, indexing="ij")
        w0 = cfg.v0.evaluate(XI, ETA)
    P = np.zeros_like(w0)
    on = w0 > 0
    P[on] = w0[on] * np.exp(cfg.lambda_star * XI[on])
    return HalfspaceState(0.0, s.xi, s.eta, P, cfg)


def perturbation(state: HalfspaceState, psi=None) -> np.ndarray:
    """p = P / psi at the nodes."""
    psi = psi or _Psi(state.config)
    return state.P / psi(state.points())


def solution_value(state: HalfspaceState, psi=None) -> np.ndarray:
    """w (or v) = P exp(-lam* xi)."""
    cfg = state.config
    xi = state.xi if cfg.n == 1 else state.xi[:, None]
    return state.P * np.exp(-cfg.lambda_star * xi)


def _probe_nodes_1d(xi, lo, hi):
    sel = np.flatnonzero((xi >= lo) & (xi <= hi))
    if sel.size == 0 or hi > xi[-1]:
        raise DomainExceeded(f"probe window [{lo:.2f}, {hi:.2f}] leaves the grid (xi_max {xi[-1]:.1f})")
    return sel


class _Probes:
    """Probe geometry in the frame centred at s(t) e."""

    def __init__(self, cfg: HalfspaceConfig, solver: _Solver, psi: _Psi):
        self.cfg, self.s, self.psi = cfg, solver, psi
        self.names = ["sqrt_t", "fixed", "front"] if cfg.frame == "linear" else ["front"]

    def _ball(self, zc, radius):
        """Node selector for the ball of ``radius`` about the frame point zc."""
        cfg, s = self.cfg, self.s
        zc = np.asarray(zc, dtype=float)
        xc = float(zc @ np.asarray(cfg.e_prime))
        ix = _probe_nodes_1d(s.xi, xc - radius, xc + radius)
        if cfg.n == 1:
            return (ix,)
        yc = float(zc @ cfg.e_perp)
        if abs(yc) + radius > cfg.width / 2:
            raise DomainExceeded("probe ball leaves the transverse strip")
        iy = np.flatnonzero(np.abs(s.eta - yc) <= radius)
        XI, ETA = np.meshgrid(s.xi[ix], s.eta[iy], indexing="ij")
        mask = (XI - xc) ** 2 + (ETA - yc) ** 2 <= radius**2
        return ix, iy, mask

    def _values(self, state, sel, kind):
        cfg = self.cfg
        if cfg.n == 1:
            (ix,) = sel
            P = state.P[ix]
            pts = state.points()[ix]
            xi = state.xi[ix]
        else:
            ix, iy, mask = sel
            P = state.P[np.ix_(ix, iy)][mask]
            pts = state.points()[np.ix_(ix, iy)][mask]
            xi = np.broadcast_to(state.xi[ix][:, None], mask.shape)[mask]
        if kind == "p":
            return P / self.psi(pts)
        return P * np.exp(-cfg.lambda_star * xi)

    def measure(self, state):
        cfg, t = self.cfg, state.t
        ep, e = np.asarray(cfg.e_prime), np.asarray(cfg.e)
        out = {}
        if cfg.frame == "linear":
            rt = math.sqrt(t)
            sel = self._ball(cfg.sigma * rt * ep, cfg.rho * rt)
            out["sqrt_t"] = float(np.max(self._values(state, sel, "p")))
            sel = self._ball(cfg.L * ep, cfg.ball)
            out["fixed"] = float(np.mean(self._values(state, sel, "p")))
        sel = self._ball(cfg.L * e, cfg.ball)
        out["front"] = float(np.mean(self._values(state, sel, "w")))
        return out


PROBE_DESCRIPTIONS = {
    "sqrt_t": "max of p over the ball of radius rho*sqrt(t) centred sigma*sqrt(t) from the boundary along e'",
    "fixed": "mean of p over a small ball at distance L from the boundary along e'",
    "front": "mean of w over a small ball at offset L*e from the frame centre",
}


def _run(cfg: HalfspaceConfig, probes_on: bool = True) -> HalfspaceResult:
    solver = _Solver(cfg)
    psi = _Psi(cfg)
    state = initial_state(cfg, solver)
    P = state.P
    if P.max() <= 0:
        raise ValueError("initial data vanish on the grid")
    probes = _Probes(cfg, solver, psi)
    steps = int(round(cfg.t_final / cfg.dt))
    every = max(1, int(round(cfg.sample_interval / cfg.dt)))
    rec = {int(round(t / cfg.dt)) for t in cfg.record_times}
    series = {name: ([], []) for name in probes.names}
    states = []
    moment0 = _first_moment(state)
    moments = [moment0]
    if 0 in rec:
        states.append(state)
    for k in range(steps):
        t = k * cfg.dt
        P = solver.step(P, t, cfg.dt, startup=k < cfg.startup_steps)
        kk = k + 1
        if kk % every == 0 or kk in rec or kk == steps:
            if not np.all(np.isfinite(P)):
                raise StabilityViolation(f"non-finite values at t={kk * cfg.dt:.3f}")
            state = HalfspaceState(kk * cfg.dt, solver.xi, solver.eta, P, cfg)
            if kk % every == 0 and probes_on:
                vals = probes.measure(state)
                for name, v in vals.items():
                    series[name][0].append(state.t)
                    series[name][1].append(v)
                moments.append(_first_moment(state))
            if kk in rec:
                states.append(HalfspaceState(state.t, solver.xi, solver.eta, P.copy(), cfg))
    final = HalfspaceState(steps * cfg.dt, solver.xi, solver.eta, P, cfg)
    tail = _tail_ratio(final)
    if tail > TAIL_TOL:
        raise BoundaryContamination(f"solution at xi_max is {tail:.2e} of its maximum")
    out = {
        name: ProbeSeries(PROBE_DESCRIPTIONS[name], np.array(series[name][0]), np.array(series[name][1]))
        for name in probes.names
    }
    m = np.array(moments)
    strip = _strip_ratio(final)
    diag = {
        "min_P": float(P.min()),
        "tail_ratio": tail,
        "first_moment_range": [float(m.min() / m[0]), float(m.max() / m[0])],
        "strip_edge_ratio": strip,
        "strip_binding": strip is not None and strip > TAIL_TOL,
        "grid": {"xi_nodes": solver.m, "eta_nodes": getattr(solver, "n_eta", None)},
    }
    return HalfspaceResult(states, out, final, diag)


def _first_moment(state: HalfspaceState) -> float:
    """Integral of xi * P over the grid (an h-weighted sum)."""
    cfg = state.config
    xi = state.xi if cfg.n == 1 else state.xi[:, None]
    return float(np.sum(xi * state.P)) * cfg.h**cfg.n


def _tail_ratio(state: HalfspaceState) -> float:
    P = np.abs(state.P)
    edge = P[-1].max() if P.ndim == 2 else P[-1]
    return float(edge / P.max())


def _strip_ratio(state: HalfspaceState):
    """Largest value on the periodic seam of the transverse strip, relative to the max."""
    if state.P.ndim == 1:
        return None
    P = np.abs(state.P)
    return float(max(P[:, 0].max(), P[:, -1].max()) / P.max())


def run_linear_frame(cfg: HalfspaceConfig) -> HalfspaceResult:
    if cfg.frame != "linear":
        raise ValueError("config is not a linear-frame run")
    return _run(cfg)


def run_log_frame(cfg: HalfspaceConfig) -> HalfspaceResult:
    if cfg.frame != "log":
        raise ValueError("config is not a log-frame run")
    return _run(cfg)


def fit_power_law(series: ProbeSeries, t_min: float, t_max: float | None = None) -> PowerFit:
    """Least-squares slope of log(value) against log(t)."""
    t = np.asarray(series.t, dtype=float)
    v = np.asarray(series.values, dtype=float)
    sel = t >= t_min
    if t_max is not None:
        sel &= t <= t_max
    t, v = t[sel], v[sel]
    if t.size < 3:
        raise WindowTooNarrow("fewer than three samples in the window")
    if np.any(v <= 0):
        raise NonPositiveSample("power-law fit needs positive samples")
    if t.max() / t.min() < 10 * (1 - 1e-9):
        raise WindowTooNarrow(f"window spans {t.max() / t.min():.2f}x, need a decade")
    A = np.column_stack([np.log(t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, np.log(v), rcond=None)
    resid = np.log(v) - A @ coef
    return PowerFit(float(coef[0]), float(math.exp(coef[1])), float(np.sqrt(np.mean(resid**2))),
                    (float(t.min()), float(t.max())))


def check_exponential_tail(state: HalfspaceState, window: tuple = (2.0, 12.0), boundary_cells: int = 8) -> dict:
    """Exponential rate of w along e' near the boundary.

    Fits log(w / xi) = a - rate * xi on ``window`` (on the ray through the
    frame centre in 2D) and a straight line through P on the first
    ``boundary_cells`` nodes; reports the rate and the R^2 of the line.
    """
    cfg = state.config
    xi = state.xi
    if cfg.n == 1:
        P = state.P
    else:
        j = int(np.argmin(np.abs(state.eta)))
        P = state.P[:, j]
    w = P * np.exp(-cfg.lambda_star * xi)
    sel = (xi >= window[0]) & (xi <= window[1]) & (w > 0)
    A = np.column_stack([np.ones(sel.sum()), -xi[sel]])
    coef, *_ = np.linalg.lstsq(A, np.log(w[sel] / xi[sel]), rcond=None)
    nb = slice(0, boundary_cells)
    X = np.column_stack([np.ones(boundary_cells), xi[nb]])
    lc, *_ = np.linalg.lstsq(X, P[nb], rcond=None)
    ss_res = float(np.sum((P[nb] - X @ lc) ** 2))
    ss_tot = float(np.sum((P[nb] - P[nb].mean()) ** 2))
    return {
        "t": state.t,
        "rate": float(coef[1]),
        "lambda_star": cfg.lambda_star,
        "relative_error": abs(coef[1] - cfg.lambda_star) / cfg.lambda_star,
        "window": list(window),
        "boundary_r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0,
        "boundary_intercept": float(lc[0]),
    }


def profile_covariance(state: HalfspaceState, psi=None) -> dict:
    """Covariance 2tS recovered from the raw second moments of p.

    For the profile (z.e') exp(-z.Sigma^{-1} z / 2) on {z.e' > 0} the raw
    second moment is M2 = Sigma + Sigma e' e'^T Sigma / (e'.Sigma e'), which
    inverts to Sigma = M2 - (M2 e')(M2 e')^T / (2 e'.M2 e').  Moments are taken
    about the frame centre w* t e.
    """
    cfg = state.config
    if cfg.n != 2:
        raise ValueError("covariance fit is two-dimensional")
    p = perturbation(state, psi)
    XI, ETA = np.meshgrid(state.xi, state.eta, indexing="ij")
    mass = p.sum()
    loc = np.array([[np.sum(p * XI * XI), np.sum(p * XI * ETA)],
                    [np.sum(p * XI * ETA), np.sum(p * ETA * ETA)]]) / mass
    R = np.column_stack([cfg.e_prime, cfg.e_perp])
    M2 = R @ loc @ R.T
    ep = np.asarray(cfg.e_prime)
    m = M2 @ ep
    Sigma = M2 - np.outer(m, m) / (2 * float(ep @ m))
    return {"t": state.t, "M2": M2, "Sigma": Sigma, "S_fit": Sigma / (2 * state.t),
            "mean": R @ np.array([np.sum(p * XI), np.sum(p * ETA)]) / mass}
