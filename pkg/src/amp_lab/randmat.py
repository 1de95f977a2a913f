"""Rotationally-invariant ensembles, spiked instances, and signal priors.

Matrices with prescribed spectra are kept in factored form (eigenvalues,
Haar eigenvectors) so that applying a scalar function to the matrix costs
two dense products after the initial sampling; the dense symmetric matrix
is materialized lazily.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, NumericalError, ValidationError

DENSE_N_CAP = 8000


def sample_haar_orthogonal(N: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of an iid Gaussian matrix with
    the R-diagonal sign correction (plain QR is not Haar)."""
    if N < 1:
        raise ValidationError("N must be >= 1")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((N, N))
    Q, R = np.linalg.qr(G)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d[None, :]


@dataclass
class RotInvEnsemble:
    """W = O diag(eigenvalues) O^T with O Haar; dense W built on demand."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    _W: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def W(self) -> np.ndarray:
        if self._W is None:
            O = self.eigenvectors
            self._W = (O * self.eigenvalues[None, :]) @ O.T
            self._W = 0.5 * (self._W + self._W.T)
        return self._W

    def apply(self, v: np.ndarray) -> np.ndarray:
        """W @ v without materializing W."""
        O = self.eigenvectors
        return O @ (self.eigenvalues * (O.T @ v))

    def matrix_function_apply(self, f: Callable, v: np.ndarray) -> np.ndarray:
        """f(W) @ v via the stored factorization."""
        fv = _map_eigenvalues(f, self.eigenvalues)
        O = self.eigenvectors
        return O @ (fv[:, None] * (O.T @ v) if v.ndim == 2 else fv * (O.T @ v))


def build_rot_invariant(grid: np.ndarray, seed: int) -> RotInvEnsemble:
    """Ensemble with the given eigenvalues and a fresh Haar eigenbasis."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValidationError("grid must be a nonempty 1-d array")
    if not np.all(np.isfinite(grid)):
        raise ValidationError("grid contains non-finite entries")
    O = sample_haar_orthogonal(grid.size, seed)
    return RotInvEnsemble(eigenvalues=grid.copy(), eigenvectors=O)


def sample_goe(N: int, seed: int) -> np.ndarray:
    """W = (G + G^T)/sqrt(2N) with G iid standard normal."""
    if N < 1:
        raise ValidationError("N must be >= 1")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((N, N))
    return (G + G.T) / np.sqrt(2 * N)


def goe_ensemble(N: int, seed: int) -> RotInvEnsemble:
    """GOE sample stored in factored form (eigendecomposed once)."""
    W = sample_goe(N, seed)
    lam, O = _eigh(W)
    return RotInvEnsemble(eigenvalues=lam, eigenvectors=O, _W=W)


def _eigh(W: np.ndarray):
    try:
        lam, O = np.linalg.eigh(W)
    except np.linalg.LinAlgError as e:  # pragma: no cover
        raise NumericalError(f"eigendecomposition failed: {e}") from e
    return lam, O


def _map_eigenvalues(f: Callable, lam: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        fv = np.asarray(f(lam), dtype=float)
    fv = np.broadcast_to(fv, lam.shape)
    bad = ~np.isfinite(fv)
    if np.any(bad):
        offenders = lam[bad][:10]
        raise DomainError(f"f undefined at eigenvalue(s) {offenders.tolist()}")
    return fv


def matrix_function(W, f: Callable) -> np.ndarray:
    """f(W) for symmetric W: eigendecompose once, map, reassemble."""
    if isinstance(W, RotInvEnsemble):
        lam, O = W.eigenvalues, W.eigenvectors
    else:
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValidationError("W must be square")
        lam, O = _eigh(W)
    fv = _map_eigenvalues(f, lam)
    out = (O * fv[None, :]) @ O.T
    return 0.5 * (out + out.T)


def trace_free_center(A: np.ndarray) -> np.ndarray:
    """A minus (tr A / N) times the identity."""
    A = np.asarray(A, dtype=float)
    N = A.shape[0]
    out = A.copy()
    out[np.diag_indices(N)] -= np.trace(A) / N
    return out


# ---------------------------------------------------------------------------
# signal priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prior:
    """Scalar signal prior with unit second moment (validated)."""

    name: str
    sampler: Callable  # (rng, size) -> array
    second_moment: float
    params: tuple = ()

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        return self.sampler(rng, N)


def make_prior(name: str, **params) -> Prior:
    """Priors: 'rademacher' (default choice), 'sparse' (three-point, param
    rho = nonzero fraction), 'gaussian'."""
    if name == "rademacher":
        return Prior("rademacher", lambda rng, n: rng.choice([-1.0, 1.0], size=n), 1.0)
    if name == "gaussian":
        return Prior("gaussian", lambda rng, n: rng.standard_normal(n), 1.0)
    if name == "sparse":
        rho = float(params.get("rho", 0.1))
        if not 0 < rho <= 1:
            raise ValidationError("sparse prior needs 0 < rho <= 1")
        a = 1.0 / np.sqrt(rho)

        def sampler(rng, n, rho=rho, a=a):
            u = rng.random(n)
            x = np.zeros(n)
            x[u < rho / 2] = a
            x[(u >= rho / 2) & (u < rho)] = -a
            return x

        return Prior("sparse", sampler, 1.0, params=(("rho", rho),))
    raise ValidationError(f"unknown prior {name!r}")


# ---------------------------------------------------------------------------
# spiked instances and the overlap measure
# ---------------------------------------------------------------------------

@dataclass
class SpikedInstance:
    theta: float
    x_star: np.ndarray
    ensemble: RotInvEnsemble
    _Y: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.x_star.shape[0]

    @property
    def Y(self) -> np.ndarray:
        if self._Y is None:
            x = self.x_star
            self._Y = (self.theta / self.N) * np.outer(x, x) + self.ensemble.W
        return self._Y

    def apply_Y(self, v: np.ndarray) -> np.ndarray:
        x = self.x_star
        return (self.theta / self.N) * x * (x @ v) + self.ensemble.apply(v)


def build_spiked(theta: float, prior: Prior, ensemble: RotInvEnsemble, seed: int) -> SpikedInstance:
    """Y = (theta/N) x* x*^T + W with x* iid from a unit-second-moment prior."""
    if theta <= 0:
        raise ValidationError("theta must be > 0")
    if abs(prior.second_moment - 1.0) > 1e-12:
        raise ValidationError(
            f"prior {prior.name!r} has second moment {prior.second_moment}, expected 1"
        )
    rng = np.random.default_rng(seed)
    x = prior.sample(ensemble.N, rng)
    return SpikedInstance(theta=float(theta), x_star=x, ensemble=ensemble)


@dataclass(frozen=True)
class OverlapMeasure:
    """Atoms (lambda_i(Y), (x*^T u_i)^2 / N) over all eigenpairs of Y."""

    eigenvalues: np.ndarray
    weights: np.ndarray

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def mean(self) -> float:
        return float(self.weights @ self.eigenvalues / self.weights.sum())

    def expect(self, f: Callable) -> float:
        return float(self.weights @ np.asarray(f(self.eigenvalues)) / self.weights.sum())


def overlap_measure(inst: SpikedInstance, n_cap: int = DENSE_N_CAP) -> OverlapMeasure:
    """Empirical eigen-overlap measure of the spiked matrix."""
    if inst.N > n_cap:
        raise ValidationError(f"N={inst.N} exceeds the dense decomposition cap {n_cap}")
    lam, U = _eigh(inst.Y)
    w = (inst.x_star @ U) ** 2 / inst.N
    return OverlapMeasure(eigenvalues=lam, weights=w)


# ---------------------------------------------------------------------------
# binary matrix container
# ---------------------------------------------------------------------------

_MAGIC = b"AMPM"
_DTYPES = {"float64": 1}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def save_matrix(path: str, A: np.ndarray) -> None:
    """Row-major binary dump with a {magic, N, dtype} header."""
    A = np.ascontiguousarray(np.asarray(A, dtype=np.float64))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("only square matrices are persisted")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qB", A.shape[0], _DTYPES["float64"]))
        fh.write(A.tobytes(order="C"))


def load_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}")
        N, code = struct.unpack("<qB", fh.read(9))
        if code not in _DTYPE_CODES:
            raise ValidationError(f"{path}: unknown dtype code {code}")
        data = np.frombuffer(fh.read(), dtype=np.float64)
    if data.size != N * N:
        raise ValidationError(f"{path}: payload size {data.size} != N^2 = {N * N}")
    return data.reshape(N, N).copy()
