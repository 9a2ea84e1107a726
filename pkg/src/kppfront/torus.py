"""Periodic fields on the unit torus and spectral differential operators.

Fields live on a uniform grid with N points per axis (x_i = i/N) in dimension
one or two.  Derivatives are computed with the discrete Fourier transform;
first derivatives drop the Nyquist mode so that they stay real, while the
Laplacian keeps it with multiplier -(2 pi N/2)^2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ComplexLeakage, NonPositiveMedium

IMAG_TOL = 1e-10


@dataclass(frozen=True)
class TorusGrid:
    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.n}")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N**self.n

    def axis(self) -> np.ndarray:
        return np.arange(self.N) / self.N

    def mesh(self) -> list[np.ndarray]:
        """Node coordinates, one array of shape ``self.shape`` per axis."""
        return np.meshgrid(*([self.axis()] * self.n), indexing="ij")

    def wavenumbers(self) -> list[np.ndarray]:
        """Integer wavenumbers per axis, broadcast to ``self.shape``."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N)
        return np.meshgrid(*([k] * self.n), indexing="ij")

    def derivative_wavenumbers(self) -> list[np.ndarray]:
        """Wavenumbers for first derivatives, Nyquist mode zeroed."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N)
        k[self.N // 2] = 0.0
        return np.meshgrid(*([k] * self.n), indexing="ij")


def _real_ifft(coeffs: np.ndarray) -> np.ndarray:
    out = np.fft.ifftn(coeffs)
    scale = 1.0 + np.max(np.abs(out.real))
    leak = np.max(np.abs(out.imag))
    if leak > IMAG_TOL * scale:
        raise ComplexLeakage(f"imaginary residue {leak:.3e} after inverse transform")
    return out.real


@dataclass(frozen=True, eq=False)
class PeriodicScalarField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {vals.size}")
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def __add__(self, other):
        return PeriodicScalarField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return PeriodicScalarField(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return PeriodicScalarField(self.grid, self.values * _vals(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return PeriodicScalarField(self.grid, -self.values)

    def fourier(self) -> np.ndarray:
        """Fourier coefficients c_k with f(x) = sum_k c_k exp(2 pi i k.x)."""
        return np.fft.fftn(self.values) / self.grid.size

    def evaluate(self, points: np.ndarray, rtol: float = 1e-15) -> np.ndarray:
        """Trigonometric interpolant evaluated at arbitrary points.

        ``points`` has shape (..., n).  Coefficients smaller than ``rtol``
        times the largest one are skipped.  The Nyquist mode is evaluated as a
        cosine so the interpolant stays real.
        """
        pts = np.asarray(points, dtype=float)
        c = self.fourier()
        ks = [k.ravel() for k in self.grid.wavenumbers()]
        flat = c.ravel()
        keep = np.abs(flat) > rtol * np.abs(flat).max()
        out = np.zeros(pts.shape[:-1])
        nyq = self.grid.N // 2
        for idx in np.flatnonzero(keep):
            kvec = np.array([k[idx] for k in ks])
            phase = 2 * np.pi * (pts @ kvec)
            if np.any(np.abs(kvec) == nyq):
                out += flat[idx].real * np.cos(phase)
            else:
                out += flat[idx].real * np.cos(phase) - flat[idx].imag * np.sin(phase)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{a + 1}" for a in range(self.grid.n)] + ["value"])
            coords = [m.ravel() for m in self.grid.mesh()]
            for row in zip(*coords, self.values.ravel()):
                writer.writerow([repr(float(v)) for v in row])


def _vals(other):
    return other.values if isinstance(other, PeriodicScalarField) else other


@dataclass(frozen=True, eq=False)
class PeriodicVectorField:
    grid: TorusGrid
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.grid.n:
            raise ValueError("need one component per dimension")
        for comp in comps:
            if comp.grid != self.grid:
                raise ValueError("all components must share one grid")
        object.__setattr__(self, "components", comps)

    def __getitem__(self, i) -> PeriodicScalarField:
        return self.components[i]

    def dot(self, vec: Sequence[float]) -> PeriodicScalarField:
        vals = sum(c.values * float(v) for c, v in zip(self.components, vec))
        return PeriodicScalarField(self.grid, vals)

    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(c.values))) for c in self.components)


@dataclass(frozen=True)
class MuSpec:
    """Analytic description of a periodic medium.

    ``variant`` is ``"constant"`` (value ``c``) or ``"trig_series"``:
    offset + sum_k [a_k cos(2 pi k.x) + b_k sin(2 pi k.x)] with integer
    wavevectors ``k``.
    """

    variant: str
    c: float = 1.0
    modes: tuple = field(default_factory=tuple)
    offset: float = 0.0

    def __post_init__(self):
        if self.variant not in ("constant", "trig_series"):
            raise ValueError(f"unknown medium variant {self.variant!r}")
        modes = tuple(
            (tuple(int(k) for k in np.atleast_1d(kv)), float(a), float(b))
            for kv, a, b in self.modes
        )
        object.__setattr__(self, "modes", modes)

    @classmethod
    def constant(cls, c: float) -> "MuSpec":
        return cls("constant", c=float(c))

    @classmethod
    def trig_series(cls, modes, offset: float) -> "MuSpec":
        return cls("trig_series", modes=tuple(modes), offset=float(offset))

    @property
    def dimension(self):
        """Dimension implied by the wavevectors (None for constant media)."""
        if self.variant == "constant" or not self.modes:
            return None
        return len(self.modes[0][0])

    def evaluate(self, points) -> np.ndarray:
        """Exact value at points of shape (..., n)."""
        pts = np.asarray(points, dtype=float)
        if self.variant == "constant":
            return np.full(pts.shape[:-1], self.c)
        if not self.modes:
            return np.full(pts.shape[:-1], self.offset)
        if pts.shape[-1] != self.dimension:
            raise ValueError(f"points must have trailing dimension {self.dimension}")
        out = np.full(pts.shape[:-1], self.offset)
        for kvec, a, b in self.modes:
            phase = 2 * np.pi * (pts @ np.array(kvec, dtype=float))
            if a:
                out = out + a * np.cos(phase)
            if b:
                out = out + b * np.sin(phase)
        return out

    def to_dict(self) -> dict:
        if self.variant == "constant":
            return {"variant": "constant", "c": self.c}
        return {
            "variant": "trig_series",
            "offset": self.offset,
            "modes": [{"k": list(k), "cos": a, "sin": b} for k, a, b in self.modes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MuSpec":
        variant = d.get("variant")
        if variant == "constant":
            return cls.constant(d["c"])
        if variant == "trig_series":
            modes = [(m["k"], m.get("cos", 0.0), m.get("sin", 0.0)) for m in d.get("modes", [])]
            return cls.trig_series(modes, d["offset"])
        raise ValueError(f"unknown medium variant {variant!r}")


def build_field(spec: MuSpec, grid: TorusGrid, floor: float = 0.0) -> PeriodicScalarField:
    """Sample a medium on the grid; raise if its minimum is not above ``floor``."""
    if spec.dimension is not None and spec.dimension != grid.n:
        raise ValueError(f"medium is {spec.dimension}-dimensional, grid is {grid.n}-dimensional")
    if spec.variant == "constant":
        values = np.full(grid.shape, spec.c)
    else:
        pts = np.stack(grid.mesh(), axis=-1)
        values = spec.evaluate(pts)
    if values.min() <= floor:
        raise NonPositiveMedium(f"medium minimum {values.min():.4g} is not above {floor}")
    return PeriodicScalarField(grid, values)


def gradient(f: PeriodicScalarField) -> PeriodicVectorField:
    grid = f.grid
    coeffs = np.fft.fftn(f.values)
    comps = tuple(
        PeriodicScalarField(grid, _real_ifft(2j * np.pi * k * coeffs))
        for k in grid.derivative_wavenumbers()
    )
    return PeriodicVectorField(grid, comps)


def divergence(v: PeriodicVectorField) -> PeriodicScalarField:
    grid = v.grid
    total = np.zeros(grid.shape, dtype=complex)
    for comp, k in zip(v.components, grid.derivative_wavenumbers()):
        total += 2j * np.pi * k * np.fft.fftn(comp.values)
    return PeriodicScalarField(grid, _real_ifft(total))


def laplacian(f: PeriodicScalarField) -> PeriodicScalarField:
    grid = f.grid
    ksq = sum(k**2 for k in grid.wavenumbers())
    return PeriodicScalarField(grid, _real_ifft(-4 * np.pi**2 * ksq * np.fft.fftn(f.values)))


def integrate(f: PeriodicScalarField) -> float:
    """Integral over the unit cell (equal to the grid mean)."""
    return float(np.mean(f.values))
