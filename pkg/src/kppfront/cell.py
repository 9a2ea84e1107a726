"""Periodic cell problems: principal eigenpairs, invariant density, correctors.

The operator A(e, lam) psi = Lap psi - 2 lam e.grad psi + (lam^2 + mu) psi is
discretised by Fourier collocation.  In coefficient space the derivative part
is diagonal and multiplication by mu is a circular convolution, which is sparse
whenever mu has few Fourier modes (every trig-series medium).  The principal
eigenpair is found by inverse iteration on (s I - A) with the shift
s = lam^2 + max(mu) + 1, which sits strictly to the right of the spectrum, so
the eigenvalue closest to s is the one with the largest real part.

Since A(e, lam)^T = A(-e, lam), the adjoint eigenfunction is psi(-e), and the
null function of L* (L = Lap + kappa.grad, kappa = 2(grad psi/psi - lam e)) is
proportional to psi(e) psi(-e).  Singular systems with L or L* are solved
through the same ground-state transform, then polished against the
collocation operator by iterative refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    ComplexLeakage,
    NoConvergence,
    NotPositiveDefinite,
    SignError,
    SolvabilityViolation,
)
from .torus import (
    PeriodicScalarField,
    PeriodicVectorField,
    divergence,
    gradient,
    integrate,
    laplacian,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 500
PSI_FLOOR = 1e-12


def unit_vector(e, n: int) -> np.ndarray:
    v = np.atleast_1d(np.asarray(e, dtype=float))
    if v.shape != (n,):
        raise ValueError(f"direction must have {n} components, got {v.shape}")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    return v / norm


class CellOperator:
    """Coefficient-space form of A(e, lam) for one medium."""

    def __init__(self, mu: PeriodicScalarField, drop_tol: float = 1e-15):
        grid = mu.grid
        self.mu = mu
        self.grid = grid
        K = grid.size
        self._ksq = 4 * np.pi**2 * sum(k.ravel() ** 2 for k in grid.wavenumbers())
        self._kder = np.stack([k.ravel() for k in grid.derivative_wavenumbers()], axis=1)
        coeffs = mu.fourier()
        mag = np.abs(coeffs)
        keep = np.argwhere(mag > drop_tol * mag.max())
        idx = np.indices(grid.shape).reshape(grid.n, -1)
        rows, cols, data = [], [], []
        for q in keep:
            shifted = (idx - q[:, None]) % grid.N
            rows.append(np.arange(K))
            cols.append(np.ravel_multi_index(tuple(shifted), grid.shape))
            data.append(np.full(K, coeffs[tuple(q)]))
        # convolution pattern with explicit diagonal slots so that the shifted
        # system for any (e, lam) only needs its diagonal data rewritten
        rows.append(np.arange(K))
        cols.append(np.arange(K))
        data.append(np.zeros(K, dtype=complex))
        conv = sp.csc_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(K, K)
        )
        conv.sum_duplicates()
        conv.sort_indices()
        self._conv = conv
        col_of = np.repeat(np.arange(K), np.diff(conv.indptr))
        self._diag_pos = np.flatnonzero(conv.indices == col_of)
        self.n_modes = len(keep)

    def diagonal(self, e: np.ndarray, lam: float) -> np.ndarray:
        return -self._ksq - 4j * np.pi * lam * (self._kder @ e) + lam**2

    def matrix(self, e: np.ndarray, lam: float, shift: float = 0.0) -> sp.csc_matrix:
        """shift * I - A(e, lam) when ``shift`` is given, else A(e, lam)."""
        data = self._conv.data.copy()
        data[self._diag_pos] += self.diagonal(e, lam)
        if shift:
            data = -data
            data[self._diag_pos] += shift
        return sp.csc_matrix((data, self._conv.indices, self._conv.indptr), shape=self._conv.shape)

    def shift(self, lam: float) -> float:
        return lam**2 + self.mu.max() + 1.0

    def principal(self, e, lam: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, x0=None):
        """Inverse iteration; returns (gamma, coefficients, iterations, residual bound).

        Coefficients are normalised so the mean mode equals one.  The residual
        bound is sum_k |r_k| >= sup-norm of the residual.
        """
        e = unit_vector(e, self.grid.n)
        s = self.shift(lam)
        M = self.matrix(e, lam, shift=s)
        lu = splu(M, permc_spec="MMD_AT_PLUS_A")
        if x0 is None:
            x = np.zeros(self.grid.size, dtype=complex)
            x[0] = 1.0
        else:
            x = np.asarray(x0, dtype=complex).copy()
        gamma = np.nan
        bound = np.inf
        for it in range(1, max_iter + 1):
            y = lu.solve(x)
            if abs(y[0]) < 1e-300:
                raise SignError("principal eigenvector has zero mean")
            x = y / y[0]
            Ax = s * x - M @ x
            gamma = np.vdot(x, Ax) / np.vdot(x, x)
            bound = float(np.sum(np.abs(Ax - gamma * x)))
            if bound <= tol * (1.0 + abs(gamma)):
                break
        else:
            raise NoConvergence(
                f"inverse iteration stalled at residual {bound:.3e} (e={e}, lambda={lam})",
                iterations=max_iter,
            )
        if abs(gamma.imag) > max(tol, 1e-8) * (1.0 + abs(gamma)):
            raise ComplexLeakage(f"principal eigenvalue has imaginary part {gamma.imag:.3e}")
        return float(gamma.real), x, it, bound

    def gamma(self, e, lam: float, tol: float = DEFAULT_TOL) -> float:
        return self.principal(e, lam, tol=tol)[0]

    def coefficients_to_field(self, x: np.ndarray) -> PeriodicScalarField:
        vals = np.fft.ifftn(x.reshape(self.grid.shape)) * self.grid.size
        if np.max(np.abs(vals.imag)) > 1e-10 * (1.0 + np.max(np.abs(vals.real))):
            raise ComplexLeakage("eigenfunction is not real within tolerance")
        return PeriodicScalarField(self.grid, vals.real)

    def solve_singular(self, e, lam: float, gamma: float, right, left, rhs):
        """Solve (A(e, lam) - gamma) y = rhs - c left, <right, y> = 0.

        ``right`` and ``left`` are the real null functions of the operator and
        of its transpose.  Returns (y, c); c measures how far ``rhs`` is from
        the range.
        """
        e = unit_vector(e, self.grid.n)
        K = self.grid.size
        A = self.matrix(e, lam) - gamma * sp.identity(K, format="csc")
        r = right.fourier().ravel()
        l = left.fourier().ravel()
        border = sp.bmat([[A, sp.csc_matrix(l[:, None])], [sp.csc_matrix(r.conj()[None, :]), None]]).tocsc()
        b = np.concatenate([rhs.fourier().ravel(), [0.0]])
        sol = splu(border).solve(b)
        return self.coefficients_to_field(sol[:-1]), complex(sol[-1])


@lru_cache(maxsize=16)
def cell_operator(mu: PeriodicScalarField) -> CellOperator:
    return CellOperator(mu)


def apply_operator(mu: PeriodicScalarField, e, lam: float, psi: PeriodicScalarField) -> PeriodicScalarField:
    """Collocation A(e, lam) psi computed with the spectral field operators."""
    e = unit_vector(e, mu.grid.n)
    drift = gradient(psi).dot(e)
    return laplacian(psi) - 2.0 * lam * drift + (lam**2 + mu.values) * psi.values


@dataclass(frozen=True, eq=False)
class EigenPair:
    e: tuple
    lam: float
    gamma: float
    psi: PeriodicScalarField
    residual: float
    iterations: int = 0

    def to_record(self) -> dict:
        return {
            "e": list(self.e),
            "lambda": self.lam,
            "gamma": self.gamma,
            "residual": self.residual,
            "psi_stats": {"min": self.psi.min(), "max": self.psi.max()},
        }


def principal_eigenpair(
    mu: PeriodicScalarField, e, lam: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> EigenPair:
    """Principal eigenpair of A(e, lam) with psi > 0 and integral one."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if mu.min() <= 0:
        raise ValueError("medium must be uniformly positive")
    e = unit_vector(e, mu.grid.n)
    op = cell_operator(mu)
    gamma, x, its, _ = op.principal(e, lam, tol=tol, max_iter=max_iter)
    psi = op.coefficients_to_field(x)
    if psi.min() <= 0:
        raise SignError(f"principal eigenfunction is not positive (min {psi.min():.3e})")
    res = apply_operator(mu, e, lam, psi) - gamma * psi
    residual = float(np.max(np.abs(res.values)))
    # the coefficient bound already enforces tol; this recheck goes through
    # FFTs, whose round-off is amplified by the largest operator symbol
    k_max = math.pi * mu.grid.N
    norm_a = mu.grid.n * k_max**2 + 2 * lam * k_max + lam**2 + mu.max()
    floor = 4 * np.finfo(float).eps * norm_a * psi.max()
    if residual > tol * (1.0 + abs(gamma)) + floor:
        raise NoConvergence(f"eigenpair residual {residual:.3e} above target", iterations=its)
    return EigenPair(tuple(e), float(lam), gamma, psi, residual, its)


# -- dense oracle -----------------------------------------------------------


def spectral_matrices(N: int):
    """Dense first/second derivative matrices on the unit period (even N)."""
    h = 2 * np.pi / N
    j = np.arange(N)
    diff = j[:, None] - j[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = 0.5 * (-1.0) ** diff / np.tan(diff * h / 2)
        d2 = -0.5 * (-1.0) ** diff / np.sin(diff * h / 2) ** 2
    np.fill_diagonal(d1, 0.0)
    np.fill_diagonal(d2, -np.pi**2 / (3 * h**2) - 1.0 / 6.0)
    return 2 * np.pi * d1, 4 * np.pi**2 * d2


def dense_operator(mu: PeriodicScalarField, e, lam: float) -> np.ndarray:
    """Real-space collocation matrix of A(e, lam), row-major node ordering."""
    grid = mu.grid
    e = unit_vector(e, grid.n)
    d1, d2 = spectral_matrices(grid.N)
    eye = np.eye(grid.N)
    if grid.n == 1:
        lap, grads = d2, [d1]
    else:
        lap = np.kron(d2, eye) + np.kron(eye, d2)
        grads = [np.kron(d1, eye), np.kron(eye, d1)]
    A = lap - 2 * lam * sum(ei * g for ei, g in zip(e, grads))
    A += np.diag(lam**2 + mu.values.ravel())
    return A


def dense_principal_eigenpair(mu: PeriodicScalarField, e, lam: float) -> EigenPair:
    """Full dense eigendecomposition; intended as an independent check (N <= 32)."""
    A = dense_operator(mu, e, lam)
    w, v = scipy.linalg.eig(A)
    k = int(np.argmax(w.real))
    vec = v[:, k] / np.mean(v[:, k])
    psi = PeriodicScalarField(mu.grid, vec.real)
    res = A @ psi.values.ravel() - w[k].real * psi.values.ravel()
    return EigenPair(tuple(unit_vector(e, mu.grid.n)), float(lam), float(w[k].real), psi, float(np.max(np.abs(res))))


def dense_adjoint_null_vector(kappa: PeriodicVectorField) -> PeriodicScalarField:
    """Null vector of the dense collocation matrix of L* nu = Lap nu - div(nu kappa)."""
    grid = kappa.grid
    d1, d2 = spectral_matrices(grid.N)
    eye = np.eye(grid.N)
    if grid.n == 1:
        lap, grads = d2, [d1]
    else:
        lap = np.kron(d2, eye) + np.kron(eye, d2)
        grads = [np.kron(d1, eye), np.kron(eye, d1)]
    Lstar = lap - sum(g * comp.values.ravel()[None, :] for g, comp in zip(grads, kappa.components))
    w, v = scipy.linalg.eig(Lstar)
    k = int(np.argmin(np.abs(w)))
    vec = v[:, k] / np.mean(v[:, k])
    return PeriodicScalarField(grid, vec.real)


# -- invariant density, drift, correctors, effective diffusion ----------------


def drift_coefficient(eig: EigenPair) -> PeriodicVectorField:
    """kappa = 2 (grad psi / psi - lam e)."""
    psi = eig.psi
    if psi.min() < PSI_FLOOR:
        raise SignError(f"eigenfunction minimum {psi.min():.3e} below floor")
    grad = gradient(psi)
    comps = tuple(
        PeriodicScalarField(psi.grid, 2.0 * (g.values / psi.values - eig.lam * ei))
        for g, ei in zip(grad.components, eig.e)
    )
    return PeriodicVectorField(psi.grid, comps)


def apply_generator(kappa: PeriodicVectorField, f: PeriodicScalarField) -> PeriodicScalarField:
    """L f = Lap f + kappa.grad f."""
    grad = gradient(f)
    adv = sum(k.values * g.values for k, g in zip(kappa.components, grad.components))
    return laplacian(f) + adv


def apply_adjoint_generator(kappa: PeriodicVectorField, nu: PeriodicScalarField) -> PeriodicScalarField:
    """L* nu = Lap nu - div(nu kappa)."""
    flux = PeriodicVectorField(nu.grid, tuple(nu * k for k in kappa.components))
    return laplacian(nu) - divergence(flux)


def _sup(f: PeriodicScalarField) -> float:
    return float(np.max(np.abs(f.values)))


@dataclass(frozen=True, eq=False)
class _GroundState:
    """Eigenpair at (e, lam) together with the adjoint eigenfunction psi(-e)."""

    eig: EigenPair
    adj: EigenPair
    kappa: PeriodicVectorField

    @classmethod
    def build(cls, mu, e, lam, tol=DEFAULT_TOL):
        eig = principal_eigenpair(mu, e, lam, tol=tol)
        adj = principal_eigenpair(mu, -np.asarray(eig.e), lam, tol=tol)
        return cls(eig, adj, drift_coefficient(eig))


def invariant_density(
    eigen_at_min: EigenPair,
    tol: float = 1e-8,
    max_refine: int = 8,
    adjoint: EigenPair | None = None,
    mu: PeriodicScalarField | None = None,
) -> PeriodicScalarField:
    """Positive periodic nu with L* nu = 0 and integral one.

    ``mu`` is needed to compute the adjoint eigenfunction unless ``adjoint``
    (the eigenpair at -e and the same lambda) is supplied.
    """
    eig = eigen_at_min
    if adjoint is None:
        if mu is None:
            raise ValueError("need the medium or the adjoint eigenpair")
        adjoint = principal_eigenpair(mu, -np.asarray(eig.e), eig.lam)
    kappa = drift_coefficient(eig)
    nu = eig.psi * adjoint.psi
    nu = nu * (1.0 / integrate(nu))
    op = cell_operator(mu) if mu is not None else None
    for it in range(max_refine + 1):
        res = apply_adjoint_generator(kappa, nu)
        if _sup(res) <= tol:
            break
        if it == max_refine or op is None:
            raise NoConvergence(f"invariant density residual {_sup(res):.3e} above {tol}", iterations=it)
        # L*_h d = psi (A* - gamma)(d / psi); solve L*_h d = -res
        y, _ = op.solve_singular(
            -np.asarray(eig.e), eig.lam, eig.gamma, adjoint.psi, eig.psi,
            PeriodicScalarField(nu.grid, -res.values / eig.psi.values),
        )
        nu = nu + eig.psi * y
        nu = nu * (1.0 / integrate(nu))
    if nu.min() <= 0 and nu.max() > 0:
        raise SignError("invariant density changes sign")
    return nu


def effective_drift(nu: PeriodicScalarField, kappa: PeriodicVectorField):
    """F = grad nu - nu kappa and its cell average."""
    grad = gradient(nu)
    comps = tuple(g - nu * k for g, k in zip(grad.components, kappa.components))
    F = PeriodicVectorField(nu.grid, comps)
    mean = np.array([integrate(c) for c in comps])
    return F, mean


def corrector_rhs(kappa: PeriodicVectorField, lambda_star: float, w_star: float, e) -> list[PeriodicScalarField]:
    e = unit_vector(e, kappa.grid.n)
    return [lambda_star * k + lambda_star * w_star * ej for k, ej in zip(kappa.components, e)]


def correctors(
    ground: _GroundState,
    nu: PeriodicScalarField,
    w_star: float,
    e,
    mu: PeriodicScalarField,
    tol: float = 1e-8,
    solvability_tol: float = 1e-5,
    max_refine: int = 8,
) -> tuple:
    """Solve L chi_j = lam* kappa_j + lam* w* e_j with gauge int nu chi_j = 0."""
    eig, adj, kappa = ground.eig, ground.adj, ground.kappa
    op = cell_operator(mu)
    out = []
    for j, g in enumerate(corrector_rhs(kappa, eig.lam, w_star, e)):
        solv = integrate(nu * g)
        if abs(solv) > solvability_tol:
            raise SolvabilityViolation(j, abs(solv))
        # the range of L is {f : int nu f = 0}; drop the admissible residue
        g = g - solv
        chi = PeriodicScalarField(g.grid, np.zeros(g.grid.shape))
        res = g
        for it in range(max_refine + 1):
            # L_h c = psi^{-1} (A - gamma)(psi c); solve L_h c = res
            y, _ = op.solve_singular(eig.e, eig.lam, eig.gamma, eig.psi, adj.psi, eig.psi * res)
            chi = chi + PeriodicScalarField(g.grid, y.values / eig.psi.values)
            res = g - apply_generator(kappa, chi)
            if _sup(res) <= tol:
                break
        else:
            raise NoConvergence(f"corrector {j} residual {_sup(res):.3e} above {tol}", iterations=max_refine)
        chi = chi - integrate(nu * chi)
        out.append(chi)
    return tuple(out)


def effective_diffusion(nu: PeriodicScalarField, chi, lambda_star: float) -> np.ndarray:
    """S_ij = int nu (e_i - grad chi_i / lam*) . (e_j - grad chi_j / lam*)."""
    n = nu.grid.n
    vecs = []
    for i in range(n):
        g = gradient(chi[i])
        vecs.append([(1.0 if a == i else 0.0) - g[a].values / lambda_star for a in range(n)])
    S = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            S[i, j] = S[j, i] = float(np.mean(nu.values * sum(vecs[i][a] * vecs[j][a] for a in range(n))))
    eigs = np.linalg.eigvalsh(S)
    if eigs.min() <= 0:
        raise NotPositiveDefinite(f"effective diffusion has eigenvalue {eigs.min():.3e}")
    return S


@dataclass(frozen=True, eq=False)
class CellSolution:
    e: tuple
    e_prime: tuple
    lambda_star: float
    w_star: float
    gamma: float
    psi: PeriodicScalarField
    kappa: PeriodicVectorField
    nu: PeriodicScalarField
    F: PeriodicVectorField
    F_mean: np.ndarray
    chi: tuple
    S: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "e": list(self.e),
            "e_prime": list(self.e_prime),
            "lambda_star": self.lambda_star,
            "w_star": self.w_star,
            "S": [float(v) for v in self.S.ravel()],
            "identities": {
                "nu_mass": self.diagnostics["nu_mass"],
                "F_mean": [float(v) for v in self.F_mean],
                "divF_inf": self.diagnostics["divF_inf"],
                "F_mean_error": self.diagnostics["F_mean_error"],
            },
        }


def solve_cell(
    mu: PeriodicScalarField, e_prime, lambda_star: float, w_star: float, e, tol: float = 1e-8,
    solvability_tol: float = 1e-5,
) -> CellSolution:
    """All cell-problem outputs for the pair (e, e') with e' the minimiser of e."""
    n = mu.grid.n
    e = unit_vector(e, n)
    ground = _GroundState.build(mu, e_prime, lambda_star)
    nu = invariant_density(ground.eig, tol=tol, adjoint=ground.adj, mu=mu)
    F, mean = effective_drift(nu, ground.kappa)
    chi = correctors(ground, nu, w_star, e, mu, tol=tol, solvability_tol=solvability_tol)
    S = effective_diffusion(nu, chi, lambda_star)
    diag = {
        "nu_mass": integrate(nu),
        "nu_residual": _sup(apply_adjoint_generator(ground.kappa, nu)),
        "divF_inf": _sup(divergence(F)),
        "F_mean_error": float(np.linalg.norm(mean - w_star * e)),
        "eigen_residual": ground.eig.residual,
    }
    return CellSolution(
        tuple(e), ground.eig.e, float(lambda_star), float(w_star), ground.eig.gamma, ground.eig.psi,
        ground.kappa, nu, F, mean, chi, S, diag,
    )
