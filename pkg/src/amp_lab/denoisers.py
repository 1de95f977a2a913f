"""Rowwise-separable iterate denoisers with analytic or finite-difference partials.

A denoiser at step t maps the history rows (r_1[n], ..., r_t[n]) (plus optional
side information a[n]) to a scalar.  `depends` declares which history indices
the map actually reads; state-evolution expectations exploit this to pick
low-dimensional quadrature when possible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError

FD_STEP = 1e-5


@dataclass(frozen=True)
class Denoiser:
    """eta: (t, N) history array [+ side info] -> (N,) output.

    `fn(R, a)` and optional `partial_fn(R, a) -> (t, N)` operate on the full
    history; partials w.r.t. unused inputs must be zero.  `depends` is the
    1-based set of history indices read (None = all).
    """

    name: str
    arity: int
    fn: Callable
    partial_fn: Callable | None = None
    depends: frozenset | None = None
    lipschitz_bound: float = float("inf")
    uses_side_info: bool = False

    def depends_on(self) -> frozenset:
        if self.depends is None:
            return frozenset(range(1, self.arity + 1))
        return self.depends

    def evaluate(self, R: np.ndarray, a: np.ndarray | None = None) -> np.ndarray:
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if R.shape[0] != self.arity:
            raise ValidationError(
                f"denoiser {self.name!r} expects {self.arity} history rows, got {R.shape[0]}"
            )
        out = self.fn(R, a) if self.uses_side_info else self.fn(R)
        return np.asarray(out, dtype=float)

    def partials(self, R: np.ndarray, a: np.ndarray | None = None) -> np.ndarray:
        """(t, N) array of partial derivatives; finite differences as fallback."""
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if self.partial_fn is not None:
            out = self.partial_fn(R, a) if self.uses_side_info else self.partial_fn(R)
            return np.asarray(out, dtype=float)
        return self._fd_partials(R, a)

    def _fd_partials(self, R: np.ndarray, a) -> np.ndarray:
        out = np.zeros_like(R)
        deps = self.depends_on()
        for i in range(R.shape[0]):
            if (i + 1) not in deps:
                continue
            h = FD_STEP * (1.0 + np.abs(R[i]))
            Rp = R.copy()
            Rp[i] = R[i] + h
            Rm = R.copy()
            Rm[i] = R[i] - h
            fp = self.fn(Rp, a) if self.uses_side_info else self.fn(Rp)
            fm = self.fn(Rm, a) if self.uses_side_info else self.fn(Rm)
            out[i] = (np.asarray(fp) - np.asarray(fm)) / (2.0 * h)
        return out

    def divergences(self, R: np.ndarray, a: np.ndarray | None = None) -> np.ndarray:
        """Empirical divergence row <d_i eta> (length t)."""
        return self.partials(R, a).mean(axis=1)


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------

def identity_denoiser(t: int) -> Denoiser:
    """eta = r_t (last history row)."""

    def partial(R):
        out = np.zeros_like(R)
        out[-1] = 1.0
        return out

    return Denoiser("identity", t, lambda R: R[-1], partial,
                    depends=frozenset({t}), lipschitz_bound=1.0)


def constant_denoiser(t: int, c: float) -> Denoiser:
    return Denoiser(
        f"constant({c})", t,
        lambda R: np.full(R.shape[1], float(c)),
        lambda R: np.zeros_like(R),
        depends=frozenset(), lipschitz_bound=0.0,
    )


def linear_denoiser(weights) -> Denoiser:
    """eta = sum_i w_i r_i."""
    w = np.asarray(weights, dtype=float)
    t = w.size
    deps = frozenset(i + 1 for i in range(t) if w[i] != 0.0)
    return Denoiser(
        "linear", t,
        lambda R: w @ R,
        lambda R: np.broadcast_to(w[:, None], R.shape).copy(),
        depends=deps, lipschitz_bound=float(np.abs(w).sum()),
    )


def tanh_denoiser(t: int, scale: float = 1.0) -> Denoiser:
    """eta = tanh(scale * r_t), single memory."""
    s = float(scale)

    def fn(R):
        return np.tanh(s * R[-1])

    def partial(R):
        out = np.zeros_like(R)
        out[-1] = s * (1.0 - np.tanh(s * R[-1]) ** 2)
        return out

    return Denoiser(f"tanh(scale={s})", t, fn, partial,
                    depends=frozenset({t}), lipschitz_bound=abs(s))


def random_lipschitz_denoiser(t: int, seed: int) -> Denoiser:
    """eta = sum_i w_i tanh(s_i r_i + b_i): Lipschitz, analytic partials, and
    generically nonzero divergence w.r.t. every history index (exercises the
    full lower-triangular de-biasing path)."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.3, 1.0, size=t) * rng.choice([-1.0, 1.0], size=t)
    s = rng.uniform(0.5, 1.5, size=t)
    b = rng.uniform(-0.5, 0.5, size=t)

    def fn(R):
        return np.sum(w[:, None] * np.tanh(s[:, None] * R + b[:, None]), axis=0)

    def partial(R):
        return (w * s)[:, None] * (1.0 - np.tanh(s[:, None] * R + b[:, None]) ** 2)

    return Denoiser(f"random-lipschitz(seed={seed})", t, fn, partial,
                    lipschitz_bound=float(np.abs(w * s).sum()))


def mmse_rademacher_denoiser(t: int, beta: float, sigma2: float) -> Denoiser:
    """Posterior mean of a Rademacher signal from r_t = beta x + N(0, sigma2):
    eta = tanh(beta r / sigma2)."""
    if sigma2 <= 0:
        raise ValidationError("sigma2 must be positive")
    c = float(beta) / float(sigma2)

    def fn(R):
        return np.tanh(c * R[-1])

    def partial(R):
        out = np.zeros_like(R)
        out[-1] = c * (1.0 - np.tanh(c * R[-1]) ** 2)
        return out

    return Denoiser(f"mmse-rademacher(beta={beta},sigma2={sigma2})", t, fn, partial,
                    depends=frozenset({t}), lipschitz_bound=abs(c))


def linear_mmse_combining_denoiser(beta, Sigma) -> Denoiser:
    """Precision-weighted combination of the history followed by the scalar
    Rademacher posterior mean.

    With R = beta x + Z, Z ~ N(0, Sigma), the statistic s = beta^T Sigma^-1 R
    satisfies s | x ~ N(gamma x, gamma) with gamma = beta^T Sigma^-1 beta, so
    the posterior mean is tanh(s).
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    t = beta.size
    if Sigma.shape != (t, t):
        raise ValidationError("Sigma shape must match beta length")
    # least-squares solve tolerates the near-singular Sigma of late iterations
    c, *_ = np.linalg.lstsq(Sigma, beta, rcond=1e-12)

    def fn(R):
        return np.tanh(c @ R)

    def partial(R):
        return c[:, None] * (1.0 - np.tanh(c @ R) ** 2)[None, :]

    den = Denoiser("linear-mmse-combining", t, fn, partial,
                   lipschitz_bound=float(np.abs(c).sum()))
    object.__setattr__(den, "combining_weights", c)
    return den
