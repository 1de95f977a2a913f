"""Limiting spectral measures: moments, expectations, Stieltjes transforms, grids.

Supported families:
  * semicircle(variance)
  * marchenko_pastur(aspect ratio alpha in (0,1))
  * discrete grid (equal-weight atoms)
  * external tabulated density (piecewise linear, renormalized on load)

All laws are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericalError, ValidationError

QUAD_TOL = 1e-12


@dataclass(frozen=True)
class SpectralLaw:
    """Base class for probability measures on the real line."""

    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def support_bound(self) -> float:
        lo, hi = self.support()
        return max(abs(lo), abs(hi))

    def expect(self, f) -> float:
        """E[f(Lambda)], absolute quadrature error <= 1e-9."""
        raise NotImplementedError

    def moment(self, n: int) -> float:
        if n < 0:
            raise ValidationError("moment order must be >= 0")
        if n == 0:
            return 1.0
        return self.expect(lambda lam: lam**n)

    def moments(self, order: int) -> list[float]:
        return [self.moment(n) for n in range(1, order + 1)]

    def variance(self) -> float:
        m1 = self.moment(1)
        return self.moment(2) - m1 * m1

    def stieltjes(self, z: complex) -> complex:
        """m(z) = E[1/(z - Lambda)] for Im z != 0 or real z off the support."""
        z = complex(z)
        lo, hi = self.support()
        if z.imag == 0.0 and lo <= z.real <= hi:
            raise DomainError(f"z={z} lies on the support [{lo}, {hi}]")
        re = self.expect(lambda lam: ((z - lam).conjugate() / abs(z - lam) ** 2).real)
        im = self.expect(lambda lam: ((z - lam).conjugate() / abs(z - lam) ** 2).imag)
        return complex(re, im)

    def cdf_grid(self, resolution: int = 60_000) -> tuple[np.ndarray, np.ndarray]:
        """(lambda values, CDF values) on an edge-clustered grid."""
        lo, hi = self.support()
        s = np.linspace(0.0, 1.0, resolution)
        lam = lo + (hi - lo) * 0.5 * (1.0 - np.cos(np.pi * s))
        dens = self._density_vector(lam)
        cdf = integrate.cumulative_trapezoid(dens, lam, initial=0.0)
        if cdf[-1] <= 0:
            raise NumericalError("degenerate CDF (zero total mass)")
        cdf /= cdf[-1]
        return lam, cdf

    def _density_vector(self, lam: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def quantile_grid(self, N: int) -> "DiscreteGrid":
        """Midpoint-quantile discretization: atoms F^{-1}((i - 1/2)/N), sorted."""
        if N < 1:
            raise ValidationError("grid size must be >= 1")
        lam, cdf = self.cdf_grid()
        p = (np.arange(N) + 0.5) / N
        # make cdf strictly increasing for interpolation
        cdf_u, idx = np.unique(cdf, return_index=True)
        if len(cdf_u) < 2:
            raise NumericalError("inverse-CDF bracketing failed: flat CDF")
        atoms = np.interp(p, cdf_u, lam[idx])
        return DiscreteGrid(atoms=np.sort(atoms))

    def total_mass(self) -> float:
        return self.expect(lambda lam: np.ones_like(np.asarray(lam, dtype=float)))

    def quad_nodes(self, n: int = 400) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights with sum(w * f(x)) ~ E[f(Lambda)] for smooth f."""
        raise NotImplementedError

    def stieltjes_derivative(self, z: complex, h: float = 1e-6) -> complex:
        """m'(z) by central differencing of the Stieltjes transform."""
        z = complex(z)
        return (self.stieltjes(z + h) - self.stieltjes(z - h)) / (2.0 * h)


@dataclass(frozen=True)
class Semicircle(SpectralLaw):
    variance: float = 1.0

    def __post_init__(self):
        if self.variance <= 0:
            raise ValidationError("semicircle variance must be positive")

    def support(self):
        r = 2.0 * math.sqrt(self.variance)
        return (-r, r)

    def _density_vector(self, lam):
        r2 = 4.0 * self.variance
        return np.sqrt(np.clip(r2 - lam**2, 0.0, None)) / (2.0 * np.pi * self.variance)

    def expect(self, f):
        # substitution lam = 2 sigma sin(theta) removes the sqrt edges
        sig = math.sqrt(self.variance)

        def integrand(theta):
            lam = 2.0 * sig * np.sin(theta)
            return f(lam) * (2.0 / np.pi) * np.cos(theta) ** 2

        val, err = integrate.quad(
            integrand, -np.pi / 2, np.pi / 2, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200
        )
        if err > 1e-9 * max(1.0, abs(val)):
            raise NumericalError(f"quadrature error estimate {err:.2e} exceeds tolerance")
        return val

    def moment(self, n: int) -> float:
        if n < 0:
            raise ValidationError("moment order must be >= 0")
        if n % 2 == 1:
            return 0.0
        k = n // 2
        return float(_catalan(k)) * self.variance**k

    def stieltjes(self, z: complex) -> complex:
        z = complex(z)
        lo, hi = self.support()
        if z.imag == 0.0 and lo <= z.real <= hi:
            raise DomainError(f"z={z} lies on the support [{lo}, {hi}]")
        v = self.variance
        root = cmath.sqrt(z * z - 4.0 * v)
        # branch with sqrt(z^2 - 4v) ~ z at large |z|, so m ~ 1/z
        if (z.conjugate() * root).real < 0:
            root = -root
        return (z - root) / (2.0 * v)

    def quad_nodes(self, n: int = 400):
        theta, w = np.polynomial.legendre.leggauss(n)
        theta = theta * (np.pi / 2.0)
        w = w * (np.pi / 2.0)
        sig = math.sqrt(self.variance)
        lam = 2.0 * sig * np.sin(theta)
        return lam, w * (2.0 / np.pi) * np.cos(theta) ** 2


@dataclass(frozen=True)
class MarchenkoPastur(SpectralLaw):
    """Marchenko-Pastur law with aspect ratio alpha in (0, 1).

    Density sqrt((a+ - x)(x - a-)) / (2 pi alpha x) on [a-, a+],
    a± = (1 ± sqrt(alpha))^2.  First moment 1, free cumulants alpha^(n-1).
    """

    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("MP aspect ratio must lie in (0, 1)")

    @property
    def edges(self) -> tuple[float, float]:
        s = math.sqrt(self.alpha)
        return ((1.0 - s) ** 2, (1.0 + s) ** 2)

    def support(self):
        return self.edges

    def _density_vector(self, lam):
        a_minus, a_plus = self.edges
        num = np.sqrt(np.clip((a_plus - lam) * (lam - a_minus), 0.0, None))
        return num / (2.0 * np.pi * self.alpha * np.clip(lam, 1e-300, None))

    def expect(self, f):
        a_minus, a_plus = self.edges
        mid = 0.5 * (a_plus + a_minus)
        half = 0.5 * (a_plus - a_minus)

        def integrand(theta):
            lam = mid + half * np.sin(theta)
            w = half**2 * np.cos(theta) ** 2 / (2.0 * np.pi * self.alpha * lam)
            return f(lam) * w

        val, err = integrate.quad(
            integrand, -np.pi / 2, np.pi / 2, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200
        )
        if err > 1e-9 * max(1.0, abs(val)):
            raise NumericalError(f"quadrature error estimate {err:.2e} exceeds tolerance")
        return val

    def stieltjes(self, z: complex) -> complex:
        z = complex(z)
        lo, hi = self.support()
        if z.imag == 0.0 and lo <= z.real <= hi:
            raise DomainError(f"z={z} lies on the support [{lo}, {hi}]")
        a = self.alpha
        # a z m^2 - (z - 1 + a) m + 1 = 0, branch with m ~ 1/z at infinity
        b = z - 1.0 + a
        disc = cmath.sqrt(b * b - 4.0 * a * z)
        m1 = (b + disc) / (2.0 * a * z)
        m2 = (b - disc) / (2.0 * a * z)
        if z.imag != 0.0:
            # Stieltjes transforms satisfy Im(m) Im(z) < 0
            return m1 if m1.imag * z.imag < 0 else m2
        # real z off the support: both roots are real, m(z) is the one near 1/z
        return m1 if abs(m1 - 1.0 / z) < abs(m2 - 1.0 / z) else m2

    def quad_nodes(self, n: int = 400):
        theta, w = np.polynomial.legendre.leggauss(n)
        theta = theta * (np.pi / 2.0)
        w = w * (np.pi / 2.0)
        a_minus, a_plus = self.edges
        mid = 0.5 * (a_plus + a_minus)
        half = 0.5 * (a_plus - a_minus)
        lam = mid + half * np.sin(theta)
        return lam, w * half**2 * np.cos(theta) ** 2 / (2.0 * np.pi * self.alpha * lam)


@dataclass(frozen=True)
class DiscreteGrid(SpectralLaw):
    """Equal-weight atom list (e.g. a realized eigenvalue grid)."""

    atoms: np.ndarray = field(default_factory=lambda: np.array([0.0]))

    def __post_init__(self):
        object.__setattr__(self, "atoms", np.asarray(self.atoms, dtype=float))
        if self.atoms.ndim != 1 or self.atoms.size == 0:
            raise ValidationError("atom list must be a nonempty 1-d array")

    def support(self):
        return (float(self.atoms.min()), float(self.atoms.max()))

    def expect(self, f):
        return float(np.mean(np.broadcast_to(f(self.atoms), self.atoms.shape)))

    def moment(self, n: int) -> float:
        if n < 0:
            raise ValidationError("moment order must be >= 0")
        return float(np.mean(self.atoms**n))

    def stieltjes(self, z: complex) -> complex:
        z = complex(z)
        if z.imag == 0.0 and np.any(np.abs(self.atoms - z.real) == 0.0):
            raise DomainError(f"z={z} coincides with an atom")
        return complex(np.mean(1.0 / (z - self.atoms)))

    def quad_nodes(self, n: int = 400):
        return self.atoms, np.full(self.atoms.size, 1.0 / self.atoms.size)

    def quantile_grid(self, N: int) -> "DiscreteGrid":
        if N < 1:
            raise ValidationError("grid size must be >= 1")
        if N == self.atoms.size:
            return DiscreteGrid(atoms=np.sort(self.atoms))
        srt = np.sort(self.atoms)
        p = (np.arange(N) + 0.5) / N
        idx = np.minimum((p * srt.size).astype(int), srt.size - 1)
        return DiscreteGrid(atoms=srt[idx])


@dataclass(frozen=True)
class ExternalDensity(SpectralLaw):
    """Tabulated density, piecewise-linear interpolated, renormalized to mass 1."""

    grid: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    density: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if g.ndim != 1 or g.size < 2 or d.shape != g.shape:
            raise ValidationError("density table needs matching 1-d grid/density columns")
        if np.any(np.diff(g) <= 0):
            raise ValidationError("density grid must be strictly increasing")
        if np.any(d < 0):
            raise ValidationError("density values must be nonnegative")
        mass = np.trapezoid(d, g)
        if mass <= 0:
            raise ValidationError("density has zero total mass")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "density", d / mass)

    def support(self):
        return (float(self.grid[0]), float(self.grid[-1]))

    def _density_vector(self, lam):
        return np.interp(lam, self.grid, self.density, left=0.0, right=0.0)

    def expect(self, f):
        # per-segment Gauss-Legendre on f * (linear density)
        nodes, weights = np.polynomial.legendre.leggauss(16)
        a = self.grid[:-1]
        b = self.grid[1:]
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        lam = mid[:, None] + half[:, None] * nodes[None, :]
        w = half[:, None] * weights[None, :] * self._density_vector(lam)
        return float(np.sum(np.asarray(f(lam)) * w))

    def quad_nodes(self, n: int = 400):
        per_seg = max(4, int(np.ceil(n / (self.grid.size - 1))))
        nodes, weights = np.polynomial.legendre.leggauss(min(per_seg, 64))
        a = self.grid[:-1]
        b = self.grid[1:]
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        lam = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        w = (half[:, None] * weights[None, :] * self._density_vector(
            mid[:, None] + half[:, None] * nodes[None, :]
        )).ravel()
        return lam, w


def point_mass(c: float) -> DiscreteGrid:
    return DiscreteGrid(atoms=np.array([float(c)]))


def load_law_file(path: str) -> SpectralLaw:
    """Load atoms (one value per line) or a density table ("lambda density").

    Comment lines start with '#'.  One column -> DiscreteGrid, two columns ->
    ExternalDensity.
    """
    rows = []
    ncols = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if ncols is None:
                ncols = len(parts)
            if len(parts) != ncols or ncols not in (1, 2):
                raise ValidationError(f"{path}:{lineno}: expected {ncols or '1 or 2'} columns")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    data = np.asarray(rows)
    if ncols == 1:
        return DiscreteGrid(atoms=data[:, 0])
    return ExternalDensity(grid=data[:, 0], density=data[:, 1])


def parse_law_spec(spec: str) -> SpectralLaw:
    """Parse CLI specs like "semicircle", "semicircle:var=2", "mp:alpha=0.2",
    "point:c=1.5", "file:path"."""
    head, _, rest = spec.partition(":")
    head = head.strip().lower()
    kv = {}
    if head != "file" and rest:
        for item in rest.split(","):
            k, _, v = item.partition("=")
            kv[k.strip()] = float(v)
    if head in ("semicircle", "sc", "goe"):
        return Semicircle(variance=kv.get("var", kv.get("variance", 1.0)))
    if head in ("mp", "marchenko-pastur", "marchenkopastur"):
        return MarchenkoPastur(alpha=kv.get("alpha", 0.5))
    if head in ("point", "point-mass"):
        return point_mass(kv.get("c", 0.0))
    if head == "file":
        return load_law_file(rest)
    raise ValidationError(f"unknown law spec {spec!r}")


def _catalan(k: int) -> int:
    return math.comb(2 * k, k) // (k + 1)
