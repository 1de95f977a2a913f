"""Moments, free cumulants, and the polynomial families behind the AMP variants.

Two independent routes between moments and free cumulants are kept:

  * an exact interleaved coefficient recursion (`moments_to_cumulants`), and
  * brute-force enumeration of non-crossing partitions
    (`cumulants_to_moments_nc`), which serves as the combinatorial oracle.

Arithmetic is generic: feeding `fractions.Fraction` values keeps every
intermediate exact, so round trips are not tolerance-limited.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import SizeLimitError, ValidationError
from .laws import SpectralLaw

NC_ORDER_CAP = 12
RECURSION_ORDER_CAP = 20


def catalan(k: int) -> int:
    return math.comb(2 * k, k) // (k + 1)


# ---------------------------------------------------------------------------
# non-crossing partitions
# ---------------------------------------------------------------------------

def enumerate_nc_partitions(k: int, order_cap: int = NC_ORDER_CAP):
    """All non-crossing partitions of {1, ..., k}, each a tuple of blocks."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > order_cap:
        raise SizeLimitError(f"k={k} exceeds the combinatorial cap {order_cap}")
    return list(_nc_gen(tuple(range(1, k + 1))))


def _nc_gen(labels: tuple):
    if not labels:
        yield ()
        return
    n = len(labels)
    # block of labels[0]: index 0 plus any increasing subset of the rest;
    # the gaps between chosen indices (and the tail) partition independently
    for size in range(n):
        for members in itertools.combinations(range(1, n), size):
            members = (0,) + members
            block = tuple(labels[i] for i in members)
            gaps = []
            for lo, hi in zip(members, members[1:]):
                gaps.append(labels[lo + 1 : hi])
            gaps.append(labels[members[-1] + 1 :])
            for combo in itertools.product(*[tuple(_nc_gen(g)) for g in gaps]):
                part = (block,)
                for sub in combo:
                    part += sub
                yield part


def is_noncrossing(partition) -> bool:
    """Direct four-element crossing test (independent of the generator)."""
    blocks = [set(b) for b in partition]
    elems = sorted(e for b in blocks for e in b)
    idx = {}
    for i, b in enumerate(blocks):
        for e in b:
            idx[e] = i
    for a, b, c, d in itertools.combinations(elems, 4):
        if idx[a] == idx[c] and idx[b] == idx[d] and idx[a] != idx[b]:
            return False
    return True


def partition_to_tuple(partition, k: int) -> tuple:
    """Bijection onto step sequences: entry i is the block size if i is the
    largest element of its block, else 0."""
    s = [0] * k
    for block in partition:
        s[max(block) - 1] = len(block)
    return tuple(s)


def enumerate_step_tuples(k: int, order_cap: int = NC_ORDER_CAP):
    """Tuples (s_1..s_k) with s_i >= 0, partial sums <= position, total = k."""
    if k > order_cap:
        raise SizeLimitError(f"k={k} exceeds the combinatorial cap {order_cap}")

    out = []

    def rec(prefix, total):
        m = len(prefix)
        if m == k:
            if total == k:
                out.append(tuple(prefix))
            return
        for s in range(0, m + 1 - total + 1):
            if total + s <= m + 1:
                rec(prefix + [s], total + s)

    rec([], 0)
    return out


@lru_cache(maxsize=None)
def _nc_block_profiles(k: int) -> dict:
    """Map sorted block-size tuples -> multiplicity over NC(k)."""
    profiles: dict = {}
    for part in _nc_gen(tuple(range(1, k + 1))):
        key = tuple(sorted(len(b) for b in part))
        profiles[key] = profiles.get(key, 0) + 1
    return profiles


def cumulants_to_moments_nc(cumulants: Sequence, order_cap: int = NC_ORDER_CAP) -> list:
    """Moment-cumulant formula by summation over non-crossing partitions."""
    k = len(cumulants)
    if k > order_cap:
        raise SizeLimitError(f"order {k} exceeds the combinatorial cap {order_cap}")
    moments = []
    for n in range(1, k + 1):
        total = 0
        for sizes, count in _nc_block_profiles(n).items():
            term = count
            for s in sizes:
                term = term * cumulants[s - 1]
            total = total + term
        moments.append(total)
    return moments


# ---------------------------------------------------------------------------
# exact recursion (interleaved alpha / kappa updates)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CumulantTable:
    """Moments m_1..m_n, free cumulants k_1..k_n, and the triangular
    coefficient table of the centered polynomial sequence Q_n."""

    order: int
    moments: tuple
    cumulants: tuple
    alpha: tuple  # alpha[n] = coefficients of Q_n in powers 0..n

    def kappa(self, n: int):
        return self.cumulants[n - 1]

    def moment(self, n: int):
        return self.moments[n - 1]


def moments_to_cumulants(moments: Sequence, order_cap: int = RECURSION_ORDER_CAP) -> CumulantTable:
    """Free cumulants from moments by the interleaved coefficient recursion.

    alpha_{n,i} = alpha_{n-1,i-1} - sum_{j=1}^{n-i} kappa_j alpha_{n-j,i},
    kappa_{n+1} = sum_j alpha_{n,j} m_{j+1},   kappa_1 = m_1.
    """
    n_ord = len(moments)
    if n_ord < 1:
        raise ValidationError("need at least one moment")
    if n_ord > order_cap:
        raise SizeLimitError(f"order {n_ord} exceeds the recursion cap {order_cap}")
    one = moments[0] * 0 + 1  # unit in the input arithmetic
    alpha = [[one]]  # row 0: Q_0 = 1
    kappas = [moments[0]]
    for n in range(1, n_ord):
        row = []
        for i in range(0, n):
            prev = alpha[n - 1][i - 1] if i >= 1 else moments[0] * 0
            acc = prev
            for j in range(1, n - i + 1):
                acc = acc - kappas[j - 1] * alpha[n - j][i]
            row.append(acc)
        row.append(one)
        alpha.append(row)
        kappa_next = sum(alpha[n][j] * moments[j] for j in range(0, n + 1))
        kappas.append(kappa_next)
    return CumulantTable(
        order=n_ord,
        moments=tuple(moments),
        cumulants=tuple(kappas),
        alpha=tuple(tuple(r) for r in alpha),
    )


def cumulants_from_law(law: SpectralLaw, order: int) -> CumulantTable:
    return moments_to_cumulants(law.moments(order))


def _next_alpha_row(alpha, kappas):
    """Row n = len(alpha) of the coefficient recursion, given kappa_1..kappa_n."""
    n = len(alpha)
    zero = kappas[0] * 0
    row = []
    for i in range(0, n):
        acc = alpha[n - 1][i - 1] if i >= 1 else zero
        for j in range(1, n - i + 1):
            acc = acc - kappas[j - 1] * alpha[n - j][i]
        row.append(acc)
    row.append(zero + 1)
    return row


# ---------------------------------------------------------------------------
# polynomial families (Q, H, K)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolyFamily:
    """Zero-mean polynomial sequence with its centering constants.

    `coeffs[n]` are the coefficients of member n in powers of the base
    variable (the eigenvalue for kinds Q and H, the processed eigenvalue
    f(lambda) for kind K).  `centering[n-1]` is E[base * member_{n-1}]:
    the free cumulants for Q, the one-step centering constants for H,
    and the free cumulants of f(Lambda) for K.
    """

    kind: str
    order: int
    coeffs: tuple
    centering: tuple
    base_fn: Callable | None = None

    def member(self, n: int) -> np.ndarray:
        return np.asarray(self.coeffs[n], dtype=float)

    def evaluate(self, n: int, lam):
        x = np.asarray(lam, dtype=float)
        if self.base_fn is not None:
            x = np.asarray(self.base_fn(x), dtype=float)
        return np.polynomial.polynomial.polyval(x, self.member(n))


def build_poly_family(
    law: SpectralLaw,
    kind: str,
    order: int,
    f: Callable | None = None,
    order_cap: int = RECURSION_ORDER_CAP,
) -> PolyFamily:
    """Build the centered polynomial family of the requested kind.

    Q: member recursion with all past members subtracted (its centering
       constants are the free cumulants of the law).
    H: one-step centering only.
    K: same recursion as Q but applied to the pushforward variable f(Lambda);
       requires `f`.
    """
    if order < 0:
        raise ValidationError("order must be >= 0")
    if order > order_cap:
        raise SizeLimitError(f"order {order} exceeds the recursion cap {order_cap}")
    if kind == "K":
        if f is None:
            raise ValidationError("kind K requires a processing function")
        mom = [law.expect(lambda lam, _n=n: np.asarray(f(lam)) ** _n) for n in range(1, order + 1)]
    elif kind in ("Q", "H"):
        mom = law.moments(order)
    else:
        raise ValidationError(f"unknown family kind {kind!r}")

    if kind in ("Q", "K"):
        if order == 0:
            table = None
            coeffs: list = [[1.0]]
            centering: list = []
        else:
            table = moments_to_cumulants(mom, order_cap=order_cap)
            coeffs = [list(r) for r in table.alpha]
            centering = list(table.cumulants)
            # the cumulant recursion stops at row order-1; one more row is
            # needed so the family itself reaches the requested order
            coeffs.append(_next_alpha_row(coeffs, centering))
        return PolyFamily(
            kind=kind,
            order=order,
            coeffs=tuple(tuple(float(c) for c in r) for r in coeffs),
            centering=tuple(float(c) for c in centering),
            base_fn=f if kind == "K" else None,
        )

    # kind H: H_n = lam H_{n-1} - E[Lam H_{n-1}]
    coeffs = [[1.0]]
    centering = []
    for n in range(1, order + 1):
        prev = coeffs[n - 1]
        gamma = sum(prev[i] * mom[i] for i in range(len(prev)))  # E[Lam H_{n-1}]
        row = [0.0] + list(prev)
        row[0] -= gamma
        coeffs.append(row)
        centering.append(gamma)
    return PolyFamily(
        kind="H",
        order=order,
        coeffs=tuple(tuple(float(c) for c in r) for r in coeffs),
        centering=tuple(float(c) for c in centering),
    )


# ---------------------------------------------------------------------------
# partial moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartialMomentTable:
    """Doubly-indexed interpolation between moments and free cumulants."""

    order: int
    c: np.ndarray  # shape (order+1, order+1); c[k, j]

    def __getitem__(self, kj):
        k, j = kj
        return float(self.c[k, j])


def partial_moments(law: SpectralLaw, order: int, order_cap: int = RECURSION_ORDER_CAP) -> PartialMomentTable:
    """Table c_{k,j} = sum_m c_{k-1,m} kappa_{j+1-m}, c_{0,0}=1, c_{0,j>=1}=0.

    Satisfies c_{k,j} = E[Lambda^k Q_j]."""
    if order < 0:
        raise ValidationError("order must be >= 0")
    width = max(2 * order, 1)  # column need shrinks by one per row step
    kap = moments_to_cumulants(law.moments(width + 1), order_cap=order_cap).cumulants
    kappa = [1.0] + [float(k) for k in kap]  # kappa[0] = 1 convention
    c = np.zeros((order + 1, width + 1))
    c[0, 0] = 1.0
    for k in range(1, order + 1):
        for j in range(0, width - k + 1):
            acc = 0.0
            for m in range(0, j + 2):
                acc += c[k - 1, m] * kappa[j + 1 - m]
            c[k, j] = acc
    return PartialMomentTable(order=order, c=c[: order + 1, : order + 1].copy())


# ---------------------------------------------------------------------------
# Monte-Carlo estimators (no eigendecomposition)
# ---------------------------------------------------------------------------

def mc_moments(W, order: int, seed: int) -> np.ndarray:
    """Estimates g^T W^n g / N via repeated matrix-vector products.

    W may be a dense symmetric array or any object with an `apply(v)` method
    (matrices kept in factored form)."""
    apply, N = _as_matvec(W)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(N)
    v = g.copy()
    out = np.empty(order)
    for n in range(order):
        v = apply(v)
        out[n] = g @ v / N
    return out


def mc_cumulants(W, order: int, seed: int) -> np.ndarray:
    """Free-cumulant estimator from a single probe vector.

    Runs the centered vector recursion z_n = W z_{n-1} - sum_i k_i z_{n-i}
    with k_n = h^T z_{n-1} / N and h = W g; the estimated cumulants feed the
    subsequent updates on the fly.  Never materializes polynomial matrices.
    W may be dense or expose `apply(v)`.
    """
    apply, N = _as_matvec(W)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(N)
    h = apply(g)
    zs = [g]
    kap = np.empty(order)
    for n in range(1, order + 1):
        kap[n - 1] = h @ zs[n - 1] / N
        z = apply(zs[n - 1])
        for i in range(1, n + 1):
            z = z - kap[i - 1] * zs[n - i]
        zs.append(z)
    return kap


def _as_matvec(W):
    if hasattr(W, "apply") and hasattr(W, "N"):
        return W.apply, int(W.N)
    W = np.asarray(W)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValidationError("W must be square")
    return (lambda v: W @ v), W.shape[0]
