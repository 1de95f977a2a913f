"""Deterministic state-evolution recursions for every algorithm variant.

The multivariate expectations over the Gaussian iterate limits are computed
either by seeded Monte Carlo (default 2e6 samples) or, when every denoiser is
single-memory, by tensorized Gauss-Hermite quadrature (near machine accuracy,
needed for the exact reduction checks).  Each emitted state carries the
covariance of (R_1..R_t), the population divergence matrix, and the residual
covariances; spiked states add the overlap vector beta and alpha = E[X* Ubar].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .denoisers import Denoiser
from .errors import NumericalError, ValidationError
from .freeprob import build_poly_family
from .laws import MarchenkoPastur, Semicircle, SpectralLaw
from .randmat import Prior, build_rot_invariant, build_spiked, overlap_measure

PSD_TOL = 1e-9
DEFAULT_MC_SAMPLES = 2_000_000
DEFAULT_GH_POINTS = 96


@dataclass
class McConfig:
    """Expectation-engine configuration."""

    samples: int = DEFAULT_MC_SAMPLES
    seed: int = 20240
    method: str = "auto"  # auto | mc | gh
    gh_points: int = DEFAULT_GH_POINTS


@dataclass
class SeInit:
    """Initialization of the SE recursion.

    Non-spiked: U_1 ~ prior (independent of the Gaussian iterates).
    Spiked (omega set): U_1 = sqrt(omega) X* + sqrt(1-omega) G,
    X* ~ prior, G standard normal.
    """

    prior: Prior
    omega: float | None = None

    def __post_init__(self):
        if abs(self.prior.second_moment - 1.0) > 1e-12:
            raise ValidationError("SE initialization requires a unit-second-moment prior")
        if self.omega is not None and not 0.0 <= self.omega <= 1.0:
            raise ValidationError("omega must lie in [0, 1]")

    @property
    def spiked(self) -> bool:
        return self.omega is not None


@dataclass
class SeState:
    t: int
    Sigma: np.ndarray
    Phi: np.ndarray
    DeltaBar: np.ndarray
    Delta: np.ndarray
    beta: np.ndarray | None = None
    alpha: np.ndarray | None = None
    mse_pred: float | None = None
    mse_stderr: float | None = None
    denoiser: Denoiser | None = None


def _psd_check(S: np.ndarray, name: str, tol: float = PSD_TOL) -> None:
    if S.size == 0:
        return
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    if w.min() < -tol:
        raise ValidationError(f"{name} is not PSD (min eigenvalue {w.min():.3e})")


def _gauss_factor(S: np.ndarray) -> np.ndarray:
    """L with L L^T = S (eigen square root; tolerates semidefiniteness)."""
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)[None, :]


# ---------------------------------------------------------------------------
# population moments of (X*, U_1..U_{t+1}) given Sigma_t, beta_t
# ---------------------------------------------------------------------------

@dataclass
class PopMoments:
    Phi: np.ndarray  # (t+1, t+1), strictly lower; row j-1 = divergences of U_j
    DeltaBar: np.ndarray  # (t+1, t+1)
    alpha: np.ndarray | None  # (t+1,)
    resid: np.ndarray | None = None  # DeltaBar - alpha alpha^T, computed stably
    mse: float | None = None
    mse_stderr: float | None = None


def _is_single_memory(denoisers: Sequence[Denoiser]) -> bool:
    return all(d.depends_on() <= {d.arity} for d in denoisers)


def population_moments(denoisers: Sequence[Denoiser], Sigma: np.ndarray,
                       beta: np.ndarray | None, init: SeInit,
                       cfg: McConfig, step_seed: int) -> PopMoments:
    """Moments of U_1..U_{t+1} (t = Sigma size) in the population limit:
    R = beta X* + Z, Z ~ N(0, Sigma), U_{j+1} = eta_{j+1}(R_1..R_j)."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    t = Sigma.shape[0]
    if len(denoisers) < t:
        raise ValidationError("denoiser schedule shorter than the horizon")
    _psd_check(Sigma, "Sigma")
    method = cfg.method
    if method == "auto":
        method = "gh" if (_is_single_memory(denoisers[:t])
                          and init.prior.name in ("rademacher", "gaussian")) else "mc"
    if method == "gh":
        return _population_moments_gh(denoisers, Sigma, beta, init, cfg)
    if method == "mc":
        return _population_moments_mc(denoisers, Sigma, beta, init, cfg, step_seed)
    raise ValidationError(f"unknown expectation method {cfg.method!r}")


def _population_moments_mc(denoisers, Sigma, beta, init, cfg, step_seed):
    t = Sigma.shape[0]
    M = int(cfg.samples)
    rng = np.random.default_rng(cfg.seed + 7919 * step_seed)
    L = _gauss_factor(Sigma)
    Z = L @ rng.standard_normal((t, M))
    spiked = init.spiked
    if spiked:
        X = init.prior.sample(M, rng)
        b = np.zeros(t) if beta is None else np.asarray(beta, dtype=float)
        R = b[:, None] * X[None, :] + Z
        G0 = rng.standard_normal(M)
        U1 = math.sqrt(init.omega) * X + math.sqrt(1.0 - init.omega) * G0
    else:
        X = None
        R = Z
        U1 = init.prior.sample(M, rng)
    U = [U1]
    Phi = np.zeros((t + 1, t + 1))
    for j in range(1, t + 1):
        den = denoisers[j - 1]
        U.append(den.evaluate(R[:j]))
        Phi[j, :j] = den.partials(R[:j]).mean(axis=1)
    Ubar = [U[0]]
    for j in range(1, t + 1):
        Ubar.append(U[j] - Phi[j, :j] @ R[:j])
    Ub = np.vstack(Ubar)
    mse = mse_err = None
    if spiked:
        # estimate DeltaBar - alpha alpha^T from signal-centered samples so its
        # Monte Carlo error stays relative even when the residual is tiny
        alpha = Ub @ X / M
        V = Ub - alpha[:, None] * X[None, :]
        resid = V @ V.T / M
        DeltaBar = resid + np.outer(alpha, alpha)
        sq = (U[t] - X) ** 2
        mse = float(sq.mean())
        mse_err = float(sq.std(ddof=1) / math.sqrt(M))
    else:
        alpha = resid = None
        DeltaBar = Ub @ Ub.T / M
    return PopMoments(Phi=Phi, DeltaBar=DeltaBar, alpha=alpha, resid=resid,
                      mse=mse, mse_stderr=mse_err)


def _population_moments_gh(denoisers, Sigma, beta, init, cfg):
    """Gauss-Hermite path for single-memory schedules: every pairwise moment
    involves at most two Gaussian coordinates (plus the signal)."""
    t = Sigma.shape[0]
    z, wz = np.polynomial.hermite_e.hermegauss(cfg.gh_points)
    wz = wz / wz.sum()
    spiked = init.spiked
    b = (np.zeros(t) if beta is None else np.asarray(beta, dtype=float)) if spiked else np.zeros(t)
    # signal representation: values xv with probabilities xw
    if spiked or init.prior.name == "rademacher":
        if init.prior.name == "rademacher":
            xv, xw = np.array([-1.0, 1.0]), np.array([0.5, 0.5])
        elif init.prior.name == "gaussian":
            xv, xw = z.copy(), wz.copy()
        else:
            raise ValidationError("GH path supports rademacher/gaussian priors only")
    else:
        xv, xw = np.array([0.0]), np.array([1.0])

    def e1(j, g):
        """E[g(R_j, X)] with R_j = b_j X + sigma_j Z (1-based j)."""
        s = math.sqrt(max(Sigma[j - 1, j - 1], 0.0))
        xfac = b[j - 1] if spiked else 0.0
        r = xfac * xv[:, None] + s * z[None, :]
        return float(np.einsum("x,k,xk->", xw, wz, g(r, xv[:, None])))

    def e2(i, j, g):
        """E[g(R_i, R_j, X)] over the bivariate marginal (1-based i < j)."""
        C = Sigma[np.ix_([i - 1, j - 1], [i - 1, j - 1])]
        L = _gauss_factor(C)
        za = L[0, 0] * z[:, None] + L[0, 1] * z[None, :]
        zb = L[1, 0] * z[:, None] + L[1, 1] * z[None, :]
        acc = 0.0
        for xx, pw in zip(xv, xw):
            off_i = b[i - 1] * xx if spiked else 0.0
            off_j = b[j - 1] * xx if spiked else 0.0
            vals = g(off_i + za, off_j + zb, xx)
            acc += pw * float(np.einsum("k,l,kl->", wz, wz, vals))
        return acc

    def eta(j):
        den = denoisers[j - 1]

        def f(r):
            shape = r.shape
            R = np.zeros((j, r.size))
            R[j - 1] = r.ravel()
            return den.evaluate(R).reshape(shape)

        def fprime(r):
            shape = r.shape
            R = np.zeros((j, r.size))
            R[j - 1] = r.ravel()
            return den.partials(R)[j - 1].reshape(shape)

        return f, fprime

    # first moments, divergences, signal cross moments
    Phi = np.zeros((t + 1, t + 1))
    EU = np.zeros(t + 1)  # E[U_j]
    EXU = np.zeros(t + 1)  # E[X U_j]
    EUR = np.zeros((t + 1, t))  # E[U_j R_l]
    EUU = np.zeros((t + 1, t + 1))
    omega = init.omega if spiked else None
    EU[0] = 0.0 if (spiked or init.prior.name in ("rademacher", "gaussian")) else 0.0
    EXU[0] = math.sqrt(omega) if spiked else 0.0
    EUU[0, 0] = 1.0
    ERR = Sigma + (np.outer(b, b) if spiked else 0.0)
    EXR = b if spiked else np.zeros(t)
    for j in range(1, t + 1):
        f, fp = eta(j)
        Phi[j, j - 1] = e1(j, lambda r, x: fp(r) * np.ones_like(x))
        EU[j] = e1(j, lambda r, x: f(r) * np.ones_like(x))
        if spiked:
            EXU[j] = e1(j, lambda r, x: f(r) * x)
        # E[U_{j+...}] cross moments with R_l
        for l in range(1, t + 1):
            if l == j:
                EUR[j, l - 1] = e1(j, lambda r, x: f(r) * r * np.ones_like(x))
            else:
                a, c = (j, l) if j < l else (l, j)
                if j < l:
                    EUR[j, l - 1] = e2(a, c, lambda ra, rc, x: f(ra) * rc)
                else:
                    EUR[j, l - 1] = e2(a, c, lambda ra, rc, x: f(rc) * ra)
        EUU[j, j] = e1(j, lambda r, x: f(r) ** 2 * np.ones_like(x))
        for i in range(1, j):
            fi, _ = eta(i)
            EUU[i, j] = EUU[j, i] = e2(i, j, lambda ra, rc, x: fi(ra) * f(rc))
    # U_1 cross terms
    for j in range(1, t + 1):
        if spiked:
            EUU[0, j] = EUU[j, 0] = math.sqrt(omega) * EXU[j]
        else:
            EUU[0, j] = EUU[j, 0] = EU[0] * EU[j]
    EU1R = math.sqrt(omega) * EXR if spiked else np.zeros(t)
    # assemble Ubar moments: Ubar_j = U_j - sum_l Phi[j,l] R_l
    DeltaBar = np.zeros((t + 1, t + 1))
    alpha = np.zeros(t + 1) if spiked else None
    EURfull = np.vstack([EU1R, EUR[1:]])  # (t+1, t)
    for m in range(t + 1):
        if spiked:
            alpha[m] = EXU[m] - Phi[m, :t] @ EXR
        for n in range(m, t + 1):
            val = (EUU[m, n]
                   - Phi[n, :t] @ EURfull[m]
                   - Phi[m, :t] @ EURfull[n]
                   + Phi[m, :t] @ ERR @ Phi[n, :t])
            DeltaBar[m, n] = DeltaBar[n, m] = val
    mse = mse_err = None
    if spiked:
        mse = EUU[t, t] - 2.0 * EXU[t] + 1.0
        mse_err = 0.0
    resid = DeltaBar - np.outer(alpha, alpha) if spiked else None
    return PopMoments(Phi=Phi, DeltaBar=DeltaBar, alpha=alpha, resid=resid,
                      mse=mse, mse_stderr=mse_err)


def gaussian_expectations(denoiser: Denoiser, Sigma: np.ndarray,
                          init: SeInit | None = None,
                          beta: np.ndarray | None = None,
                          cfg: McConfig | None = None,
                          step_seed: int = 0) -> dict:
    """One-denoiser expectation helper: divergence row E[d_i eta], the
    divergence-free residual second moment E[Ubar^2], and (spiked) E[X* Ubar]."""
    cfg = cfg or McConfig()
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    t = Sigma.shape[0]
    if init is None:
        init = SeInit(prior=Prior("rademacher",
                                  lambda rng, n: rng.choice([-1.0, 1.0], size=n), 1.0))
    if denoiser.arity != t:
        raise ValidationError("denoiser arity must equal the Sigma dimension")
    schedule = [denoiser if j == t else _zero_denoiser(j) for j in range(1, t + 1)]
    pm = population_moments(schedule, Sigma, beta, init, cfg, step_seed)
    out = {
        "divergences": pm.Phi[t, :t].copy(),
        "ubar_second_moment": float(pm.DeltaBar[t, t]),
        "ubar_cross": pm.DeltaBar[t, : t + 1].copy(),
    }
    if pm.alpha is not None:
        out["alpha"] = float(pm.alpha[t])
    return out


def _zero_denoiser(j: int) -> Denoiser:
    return Denoiser("zero", j, lambda R: np.zeros(R.shape[1]),
                    lambda R: np.zeros_like(R), depends=frozenset(), lipschitz_bound=0.0)


# ---------------------------------------------------------------------------
# covariance forms
# ---------------------------------------------------------------------------

def _family_gram(law: SpectralLaw, kind: str, t: int, f: Callable | None = None,
                 nu: "NuMeasure | None" = None):
    """First and second moments of the polynomial family members 1..t under
    the law (and optionally under nu)."""
    fam = build_poly_family(law, kind, t, f=f)
    nodes, w = law.quad_nodes()
    vals = np.vstack([fam.evaluate(i, nodes) for i in range(1, t + 1)])
    gram_mu = np.einsum("a,ia,ja->ij", w, vals, vals)
    if nu is None:
        return fam, gram_mu, None, None
    nu_nodes, nu_w = nu.nodes_weights()
    nvals = np.vstack([fam.evaluate(i, nu_nodes) for i in range(1, t + 1)])
    mean_nu = nvals @ nu_w
    gram_nu = np.einsum("a,ia,ja->ij", nu_w, nvals, nvals)
    return fam, gram_mu, mean_nu, gram_nu


def _phi_powers(Phi: np.ndarray, t: int) -> np.ndarray:
    pows = np.empty((t, t, t))
    P = np.eye(t)
    for i in range(t):
        pows[i] = P
        P = P @ Phi
    return pows


def theorem_sigma(gram: np.ndarray, Phi: np.ndarray, Delta: np.ndarray) -> np.ndarray:
    """Sigma = sum_{ij} gram_{ij} Phi^{i-1} Delta (Phi^{j-1})^T."""
    t = Phi.shape[0]
    pows = _phi_powers(Phi, t)
    left = np.einsum("iab,bc->iac", pows, Delta)  # Phi^{i-1} Delta
    return np.einsum("ij,iac,jdc->ad", gram, left, pows)


def fan_se_form(kappa: Sequence[float], Phi: np.ndarray, Delta: np.ndarray) -> np.ndarray:
    """Sigma = sum_{j>=0} sum_{i=0}^{j} kappa_{j+2} Phi^i Delta (Phi^{j-i})^T,
    truncated exactly at j = 2t-2 by nilpotency of the strictly-lower Phi."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    Delta = np.atleast_2d(np.asarray(Delta, dtype=float))
    t = Phi.shape[0]
    jmax = 2 * t - 2
    if len(kappa) < jmax + 2:
        raise ValidationError(f"need kappa up to order {jmax + 2}")
    pows = [np.eye(t)]
    for _ in range(jmax):
        pows.append(pows[-1] @ Phi)
    Sigma = np.zeros((t, t))
    for j in range(jmax + 1):
        k = float(kappa[j + 1])
        if k == 0.0:
            continue
        for i in range(j + 1):
            Sigma += k * pows[i] @ Delta @ pows[j - i].T
    return Sigma


# ---------------------------------------------------------------------------
# SE recursions
# ---------------------------------------------------------------------------

def _init_state(init: SeInit):
    Phi1 = np.zeros((1, 1))
    DeltaBar1 = np.array([[1.0]])
    alpha1 = np.array([math.sqrt(init.omega)]) if init.spiked else None
    return Phi1, DeltaBar1, alpha1


def _resolve_denoiser(denoisers, t, beta, Sigma):
    item = denoisers[t - 1] if isinstance(denoisers, (list, tuple)) else denoisers
    if isinstance(item, Denoiser):
        return item
    return item(t, beta, Sigma)  # factory(t, beta_t, Sigma_t) -> Denoiser


def ri_amp_se(law: SpectralLaw, denoisers, init: SeInit, T: int,
              cfg: McConfig | None = None, kind: str = "Q") -> list[SeState]:
    """State evolution of RI-AMP (kind='Q') or RI-AMP-DF (kind='H'):
    Sigma_t = E_mu[P_t(Lambda) DeltaBar_t P_t(Lambda)^T]."""
    cfg = cfg or McConfig()
    if init.spiked:
        raise ValidationError("use spiked_se for spiked initializations")
    _, gram, _, _ = _family_gram(law, kind, T)
    Phi, DeltaBar, _ = _init_state(init)
    states = []
    built = []
    for t in range(1, T + 1):
        Sigma = theorem_sigma(gram[:t, :t], Phi, DeltaBar)
        _psd_check(Sigma, f"Sigma_{t}")
        den = _resolve_denoiser(denoisers, t, None, Sigma)
        built.append(den)
        pm = population_moments(built, Sigma, None, init, cfg, step_seed=t)
        Delta = DeltaBar + Phi @ Sigma @ Phi.T
        states.append(SeState(t=t, Sigma=Sigma, Phi=Phi.copy(), DeltaBar=DeltaBar.copy(),
                              Delta=Delta, denoiser=den))
        Phi, DeltaBar = pm.Phi, pm.DeltaBar
        _psd_check(DeltaBar, f"DeltaBar_{t + 1}")
    return states


def ri_amp_df_se(law: SpectralLaw, denoisers, init: SeInit, T: int,
                 cfg: McConfig | None = None) -> list[SeState]:
    return ri_amp_se(law, denoisers, init, T, cfg=cfg, kind="H")


def gaussian_amp_se(denoisers: Sequence[Denoiser], T: int,
                    u1_second_moment: float = 1.0,
                    gh_points: int = DEFAULT_GH_POINTS) -> np.ndarray:
    """Scalar recursion sigma_t^2 = Var(R_t) of single-memory Gaussian AMP:
    sigma_1^2 = E[U_1^2]; sigma_{t+1}^2 = E[eta_{t+1}(sigma_t Z)^2].

    `denoisers[t-1]` is eta_{t+1} (the map from r_t to u_{t+1}); only the
    last history row is read."""
    z, wz = np.polynomial.hermite_e.hermegauss(gh_points)
    wz = wz / wz.sum()
    out = np.empty(T)
    out[0] = float(u1_second_moment)
    for t in range(1, T):
        den = denoisers[t - 1]
        R = np.zeros((den.arity, z.size))
        R[-1] = math.sqrt(max(out[t - 1], 0.0)) * z
        vals = den.evaluate(R)
        out[t] = float(wz @ vals**2)
    return out


def oamp_se(law: SpectralLaw, f_schedule: Sequence[Callable], g_schedule,
            init: SeInit, T: int, cfg: McConfig | None = None) -> list[np.ndarray]:
    """Omega_t = [Cov_mu(f_i, f_j)] o [E[Xbar_i Xbar_j]] (Hadamard product)."""
    cfg = cfg or McConfig()
    nodes, w = law.quad_nodes()
    fv = np.vstack([np.asarray(f(nodes), dtype=float) * np.ones_like(nodes)
                    for f in f_schedule[:T]])
    means = fv @ w
    covf = np.einsum("a,ia,ja->ij", w, fv, fv) - np.outer(means, means)
    Phi, Xbar2, _ = _init_state(init)
    omegas = []
    built = []
    for t in range(1, T + 1):
        Omega = covf[:t, :t] * Xbar2[:t, :t]
        _psd_check(Omega, f"Omega_{t}")
        omegas.append(Omega)
        den = _resolve_denoiser(g_schedule, t, None, Omega)
        built.append(den)
        pm = population_moments(built, Omega, None, init, cfg, step_seed=t)
        Phi, Xbar2 = pm.Phi, pm.DeltaBar
    return omegas


# ---------------------------------------------------------------------------
# the nu measure and the spiked recursion
# ---------------------------------------------------------------------------

@dataclass
class NuMeasure:
    """Eigen-overlap limit measure: continuous part (nodes/weights) plus an
    optional outlier atom."""

    nodes: np.ndarray
    weights: np.ndarray
    atom: tuple | None = None  # (z_star, weight)
    mode: str = "analytic"

    def nodes_weights(self):
        if self.atom is None:
            return self.nodes, self.weights
        return (np.append(self.nodes, self.atom[0]),
                np.append(self.weights, self.atom[1]))

    def total_mass(self) -> float:
        _, w = self.nodes_weights()
        return float(w.sum())

    def expect(self, g: Callable) -> float:
        x, w = self.nodes_weights()
        return float(w @ (np.asarray(g(x), dtype=float) * np.ones_like(x)))

    def mean(self) -> float:
        return self.expect(lambda x: x)


def _boundary_stieltjes(law: SpectralLaw, lam: np.ndarray) -> np.ndarray:
    """m_mu(lambda - i0) on the support."""
    if isinstance(law, (Semicircle, MarchenkoPastur)):
        return np.array([law.stieltjes(complex(x, -1e-10)) for x in lam])
    # generic: Richardson extrapolation over a fixed epsilon ladder
    eps = (1e-2, 5e-3, 2.5e-3)
    m = [np.array([law.stieltjes(complex(x, -e)) for x in lam]) for e in eps]
    m12 = 2.0 * m[1] - m[0]
    m23 = 2.0 * m[2] - m[1]
    return 2.0 * m23 - m12


def find_outlier(law: SpectralLaw, theta: float) -> tuple | None:
    """Root z* > support of 1 = theta m_mu(z) plus the atom weight
    -1 / (theta^2 m_mu'(z*)); None when theta is sub-critical."""
    if theta <= 0:
        raise ValidationError("theta must be > 0")
    lo, hi = law.support()
    a = hi + 1e-9
    b = hi + 10.0 * theta + 10.0
    g = lambda zz: theta * law.stieltjes(zz).real - 1.0
    ga = g(a)
    if ga < 0:  # m(edge+) < 1/theta: no outlier separates
        return None
    gb = g(b)
    if gb > 0:
        raise NumericalError("outlier bracketing failed")
    for _ in range(200):
        mid = 0.5 * (a + b)
        if g(mid) > 0:
            a = mid
        else:
            b = mid
    z_star = 0.5 * (a + b)
    mprime = law.stieltjes_derivative(z_star).real
    weight = -1.0 / (theta**2 * mprime)
    return (float(z_star), float(weight))


def nu_measure(law: SpectralLaw, theta: float, mode: str = "analytic",
               N: int = 2000, seeds: int = 20, seed_base: int = 0,
               prior: Prior | None = None, n_nodes: int = 400) -> NuMeasure:
    """Limit of the signal-overlap eigenvalue measure of Y:
    m_nu(z) = m_mu(z) / (1 - theta m_mu(z))."""
    if theta <= 0:
        raise ValidationError("theta must be > 0")
    if mode == "analytic":
        nodes, w = law.quad_nodes(n_nodes)
        mb = _boundary_stieltjes(law, nodes)
        ratio = 1.0 / np.abs(1.0 - theta * mb) ** 2
        return NuMeasure(nodes=nodes, weights=w * ratio,
                         atom=find_outlier(law, theta), mode="analytic")
    if mode == "empirical":
        if prior is None:
            prior = Prior("rademacher", lambda rng, n: rng.choice([-1.0, 1.0], size=n), 1.0)
        all_nodes = []
        all_w = []
        for s in range(seeds):
            grid = law.quantile_grid(N)
            ens = build_rot_invariant(grid.atoms, seed=seed_base + 17 * s + 1)
            inst = build_spiked(theta, prior, ens, seed=seed_base + 17 * s + 2)
            om = overlap_measure(inst)
            all_nodes.append(om.eigenvalues)
            all_w.append(om.weights / seeds)
        return NuMeasure(nodes=np.concatenate(all_nodes),
                         weights=np.concatenate(all_w), atom=None, mode="empirical")
    raise ValidationError(f"unknown nu mode {mode!r}")


def default_nu_mode(law: SpectralLaw) -> str:
    """Analytic inversion for closed-form laws; empirical elsewhere (the
    inversion near the spectral edge is delicate for tabulated densities)."""
    return "analytic" if isinstance(law, (Semicircle, MarchenkoPastur)) else "empirical"


def mp_denoise_fn(theta: float, alpha: float) -> Callable:
    """The matrix-denoising map f(x) = (theta/alpha)(1 + (alpha-1)/x)
    - theta^2/(alpha x), which has a pole at x = 0."""

    def f(x):
        return (theta / alpha) * (1.0 + (alpha - 1.0) / x) - theta**2 / (alpha * x)

    return f


def check_pole_free(law: SpectralLaw, delta: float = 1e-6) -> None:
    """Reject laws whose support meets (-delta, delta) when a 1/x matrix
    denoiser is selected."""
    lo, hi = law.support()
    if lo < delta and hi > -delta:
        raise ValidationError(
            f"law support [{lo}, {hi}] intersects (-{delta}, {delta}): "
            "matrix denoiser has a pole at 0"
        )


def spiked_se(law: SpectralLaw, theta: float, f: Callable, denoisers,
              init: SeInit, T: int, cfg: McConfig | None = None,
              nu: NuMeasure | None = None) -> list[SeState]:
    """Spiked-model state evolution for constant-f matrix processing:
    beta_t = E_nu[J_t] alpha_t;
    Sigma_t = (E_nu[J aa^T J^T] - bb^T) + E_mu[J (DeltaBar - aa^T) J^T]."""
    cfg = cfg or McConfig()
    if not init.spiked:
        raise ValidationError("spiked_se requires a spiked initialization (omega set)")
    if nu is None:
        nu = nu_measure(law, theta, mode=default_nu_mode(law))
    _, gram_mu, mean_nu, gram_nu = _family_gram(law, "K", T, f=f, nu=nu)
    Phi, DeltaBar, alpha = _init_state(init)
    resid = DeltaBar - np.outer(alpha, alpha)
    states = []
    built = []
    for t in range(1, T + 1):
        pows = _phi_powers(Phi, t)
        # beta = sum_i E_nu[K_i] Phi^{i-1} alpha
        Enu_J = np.einsum("i,iab->ab", mean_nu[:t], pows)
        beta = Enu_J @ alpha
        Sigma1 = theorem_sigma(gram_nu[:t, :t], Phi, np.outer(alpha, alpha)) - np.outer(beta, beta)
        _psd_check(resid, f"DeltaBar_{t} - alpha alpha^T")
        Sigma2 = theorem_sigma(gram_mu[:t, :t], Phi, resid)
        Sigma = Sigma1 + Sigma2
        _psd_check(Sigma, f"Sigma_{t}", tol=1e-7)
        den = _resolve_denoiser(denoisers, t, beta, Sigma)
        built.append(den)
        pm = population_moments(built, Sigma, beta, init, cfg, step_seed=t)
        Delta = DeltaBar + Phi @ Sigma @ Phi.T
        states.append(SeState(t=t, Sigma=Sigma, Phi=Phi.copy(), DeltaBar=DeltaBar.copy(),
                              Delta=Delta, beta=beta, alpha=alpha.copy(),
                              mse_pred=float(pm.mse), mse_stderr=float(pm.mse_stderr),
                              denoiser=den))
        Phi, DeltaBar, alpha, resid = pm.Phi, pm.DeltaBar, pm.alpha, pm.resid
    return states
