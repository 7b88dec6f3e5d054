"""Multivariate t kernels.

Log-density, CDF and positive-orthant truncated moments of the centered
multivariate t distribution, plus the digamma function used by the dof
update.

The CDF is evaluated in batches: many upper limits sharing one scale matrix
and one dof, which is exactly the access pattern of the E-step (one scale
matrix per component, one limit vector per observation).  Dimension one is
exact (regularized incomplete beta via ``scipy.special.stdtr``), dimension two
is a one-dimensional Gauss-Legendre quadrature of the conditional t CDF, and
higher dimensions use a randomized Richtmyer lattice rule on the
separation-of-variables transform of the integrand.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import BudgetExceededWarning, DofTooSmall, DomainError, NotPositiveDefinite
from .params import cholesky_lower

REALMIN = 1e-300

_GL_NODES = 64
_N_SHIFTS = 10
_QMC_START = 512
_CHUNK_ELEMS = 2_000_000


@dataclass(frozen=True)
class CdfSettings:
    """Accuracy controls for the lattice rule used when q >= 3.

    ``adaptive=False`` evaluates a fixed rule of ``max_points`` points.  The
    estimate is then a smooth function of the limits, which keeps EM
    iterations free of jumps caused by changing rule sizes.
    """

    abs_tol: float = 1e-6
    max_points: int = 200_000
    seed: int = 0
    adaptive: bool = True

    def __post_init__(self):
        if not (0.0 < self.abs_tol <= 1e-2):
            raise ValueError(f"abs_tol must lie in (0, 1e-2], got {self.abs_tol}")
        if self.max_points < _N_SHIFTS * 16:
            raise ValueError(f"max_points must be at least {_N_SHIFTS * 16}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


DEFAULT_SETTINGS = CdfSettings()


class CdfResult(NamedTuple):
    values: np.ndarray
    errors: np.ndarray
    converged: np.ndarray


class TruncMoments(NamedTuple):
    prob: np.ndarray
    m1: np.ndarray
    m2: np.ndarray


# --------------------------------------------------------------------------
# special functions

_DIGAMMA_COEFS = (
    1.0 / 12,
    -1.0 / 120,
    1.0 / 252,
    -1.0 / 240,
    1.0 / 132,
    -691.0 / 32760,
    1.0 / 12,
)


def digamma(x):
    """Digamma function for positive arguments.

    Upward recurrence to x >= 10, then the asymptotic Bernoulli series.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("digamma is only defined here for x > 0")
    z = arr.copy()
    acc = np.zeros_like(z)
    small = z < 10.0
    while np.any(small):
        acc[small] -= 1.0 / z[small]
        z[small] += 1.0
        small = z < 10.0
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_COEFS):
        series = (series + c) * inv2
    out = acc + np.log(z) - 0.5 / z - series
    return float(out) if out.ndim == 0 else out


def _t1_logpdf(z, r):
    """Standard univariate t log-density."""
    return (
        special.gammaln((r + 1) / 2)
        - special.gammaln(r / 2)
        - 0.5 * math.log(r * math.pi)
        - (r + 1) / 2 * np.log1p(z * z / r)
    )


# --------------------------------------------------------------------------
# density


def mvt_logpdf_chol(y, mu, chol, dof):
    """Batch t log-density given the lower Cholesky factor of the scale."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    p = chol.shape[0]
    diff = y - mu
    sol = np.linalg.solve(chol, diff.T) if p > 1 else diff.T / chol[0, 0]
    with np.errstate(over="ignore"):
        maha = np.sum(sol * sol, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    nu = float(dof)
    return (
        special.gammaln((nu + p) / 2)
        - special.gammaln(nu / 2)
        - 0.5 * p * math.log(nu * math.pi)
        - 0.5 * log_det
        - 0.5 * (nu + p) * np.log1p(maha / nu)
    )


def mvt_logpdf(y, mu, scale, dof) -> float:
    """log t_p(y; mu, scale, dof) for a single point."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    chol = cholesky_lower(0.5 * (scale + scale.T))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    return float(mvt_logpdf_chol(y[None, :], mu, chol, dof)[0])


# --------------------------------------------------------------------------
# CDF


def _cdf_1d(b, r):
    return special.stdtr(r, b[:, 0])


_gl_x, _gl_w = np.polynomial.legendre.leggauss(_GL_NODES)
_gl_v = 0.5 * (_gl_x + 1.0)
_gl_wv = 0.5 * _gl_w


def _cdf_2d(b, rho, r):
    """P(X1 <= b1, X2 <= b2) for a standard bivariate t with correlation rho.

    Substituting x1 = sqrt(r) tan(theta) turns the t_r density into
    c_r cos(theta)^(r-1) and the conditional CDF of X2 into a smooth function
    of theta.  The theta range is clipped where cos^(r-1) is negligible
    relative to the integrand peak (large r) and split where the conditional
    argument crosses zero (large |rho|).
    """
    n = b.shape[0]
    b1, b2 = b[:, 0], b[:, 1]
    sr = math.sqrt(r)
    one_m = max(1.0 - rho * rho, 1e-15)
    kappa = math.sqrt(r + 1) / math.sqrt(one_m)
    log_cr = special.gammaln((r + 1) / 2) - special.gammaln(r / 2) - 0.5 * math.log(math.pi)

    hi = np.arctan(b1 / sr)
    lo = np.full(n, -0.5 * math.pi)
    if r > 1.0:
        # ratio cos^(r-1)(theta)/cos^(r-1)(theta_ref) < e^-42 beyond the window
        ref = np.minimum(hi, 0.0)
        cos_lo = np.cos(ref) * math.exp(-42.0 / (r - 1.0))
        lo = -np.arccos(np.clip(cos_lo, 0.0, 1.0))
        hi = np.minimum(hi, math.acos(math.exp(-42.0 / (r - 1.0))))
    full_left = lo <= -0.5 * math.pi + 1e-12

    if rho != 0.0:
        split = np.arctan(b2 / (rho * sr))
    else:
        split = np.full(n, 0.0)
    inside = (split > lo) & (split < hi)
    split = np.where(inside, split, 0.5 * (lo + hi))

    width1 = (split - lo)[:, None]
    # power stretch v^m at the -pi/2 end turns (theta + pi/2)^(r-1) into the
    # polynomial v^(ceil(r) - 1)
    m = math.ceil(r) / r
    th1 = np.where(full_left[:, None], lo[:, None] + width1 * _gl_v**m, lo[:, None] + width1 * _gl_v)
    jac1 = np.where(full_left[:, None], width1 * m * _gl_v ** (m - 1.0), width1)
    th2 = split[:, None] + (hi - split)[:, None] * _gl_v
    jac2 = np.broadcast_to((hi - split)[:, None], th2.shape)
    theta = np.concatenate([th1, th2], axis=1)
    w = np.concatenate([jac1 * _gl_wv, jac2 * _gl_wv], axis=1)

    cos_t = np.cos(theta)
    with np.errstate(divide="ignore"):
        log_dens = log_cr + (r - 1) * np.log(np.maximum(cos_t, 1e-300))
    arg = kappa * (b2[:, None] * cos_t / sr - rho * np.sin(theta))
    vals = np.exp(log_dens) * special.stdtr(r + 1, arg)
    out = np.sum(w * vals, axis=1)
    out[hi <= lo] = 0.0
    return np.clip(out, 0.0, 1.0)


_PRIMES = np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71])


def _qmc_sizes(settings):
    per_shift_max = settings.max_points // _N_SHIFTS
    if not settings.adaptive:
        return [per_shift_max]
    sizes = []
    m = min(_QMC_START, per_shift_max)
    while m < per_shift_max:
        sizes.append(m)
        m *= 2
    sizes.append(per_shift_max)
    return sizes


def _cdf_qmc(b, R, r, settings):
    """Randomized lattice estimate for k >= 3 (standardized limits, correlation R).

    Each row's variables are integrated in increasing order of their limits,
    which keeps the relative error small for tiny probabilities.  Rows that
    share an ordering share a Cholesky factor; every row sees the same point
    set, so a row's value does not depend on the rest of the batch.
    """
    n, k = b.shape
    if k > len(_PRIMES):
        raise ValueError(f"CDF dimension {k} exceeds the supported maximum {len(_PRIMES)}")
    gen = np.sqrt(_PRIMES[:k].astype(float))
    rng = np.random.default_rng(settings.seed)
    levels = []
    for size in _qmc_sizes(settings):
        shifts = rng.random((_N_SHIFTS, k))
        idx = np.arange(1, size + 1, dtype=float)[:, None]
        pts = []
        for s in range(_N_SHIFTS):
            z = np.abs(2.0 * np.mod(idx * gen + shifts[s], 1.0) - 1.0)
            chi = np.sqrt(2.0 * special.gammaincinv(r / 2.0, np.clip(z[:, 0], 1e-300, 1.0)) / r)
            pts.append((chi, z))
        levels.append(pts)

    values = np.zeros(n)
    errors = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    orders = np.argsort(b, axis=1, kind="stable")
    groups = {}
    for j in range(n):
        groups.setdefault(orders[j].tobytes(), []).append(j)
    for rows in groups.values():
        rows = np.asarray(rows)
        perm = orders[rows[0]]
        L = cholesky_lower(R[np.ix_(perm, perm)])
        diag = np.diag(L)
        bp = b[np.ix_(rows, perm)]
        for pts in levels:
            active = np.flatnonzero(~done[rows])
            if active.size == 0:
                break
            ests = np.stack([_sov_mean(bp[active], L, diag, chi, z) for chi, z in pts])
            tgt = rows[active]
            values[tgt] = ests.mean(axis=0)
            errors[tgt] = 3.0 * ests.std(axis=0, ddof=1) / math.sqrt(_N_SHIFTS)
            done[tgt] = errors[tgt] <= settings.abs_tol
    return values, errors, done


def _sov_mean(b, L, diag, chi, z):
    """Mean of the Genz separation-of-variables integrand over the point set."""
    n, k = b.shape
    npts = chi.shape[0]
    step = max(1, _CHUNK_ELEMS // max(npts, 1))
    out = np.empty(n)
    for start in range(0, n, step):
        bb = b[start:start + step]
        scaled = bb[:, :, None] * chi[None, None, :]
        e = special.ndtr(scaled[:, 0] / diag[0])
        prod = e.copy()
        ys = []
        for i in range(1, k):
            u = np.clip(z[None, :, i] * e, 1e-300, 1.0 - 1e-16)
            ys.append(special.ndtri(u))
            shift = sum(L[i, m] * ys[m] for m in range(i))
            e = special.ndtr((scaled[:, i] - shift) / diag[i])
            prod *= e
        out[start:start + step] = prod.mean(axis=1)
    return out


def _std_cdf(b, R, r, settings):
    """CDF for finite standardized limits b (n, k) and correlation matrix R."""
    n, k = b.shape
    if n == 0:
        return np.zeros(0), np.zeros(0), np.ones(0, dtype=bool)
    if k == 1:
        return _cdf_1d(b, r), np.zeros(n), np.ones(n, dtype=bool)
    if k == 2:
        return _cdf_2d(b, float(R[0, 1]), r), np.zeros(n), np.ones(n, dtype=bool)
    return _cdf_qmc(b, R, r, settings)


def mvt_cdf_batch(upper, scale, dof, settings: CdfSettings | None = None) -> CdfResult:
    """P(T <= upper_j) for every row of ``upper`` with T ~ t_q(0, scale, dof).

    Rows are evaluated independently: a row's value does not depend on the
    other rows in the batch.  Entries may be +/-inf; integrated-out
    coordinates are dropped before quadrature.
    """
    settings = settings or DEFAULT_SETTINGS
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    upper = np.asarray(upper, dtype=float)
    if upper.ndim == 1:
        upper = upper[None, :]
    n, q = upper.shape
    if scale.shape != (q, q):
        raise ValueError(f"scale shape {scale.shape} does not match limits of width {q}")
    if not dof > 0:
        raise DomainError(f"dof must be positive, got {dof}")
    scale = 0.5 * (scale + scale.T)
    sd = np.sqrt(np.diag(scale))
    if np.any(~(sd > 0)):
        raise NotPositiveDefinite("scale matrix has a nonpositive diagonal")
    R = scale / np.outer(sd, sd)
    cholesky_lower(R)
    b = upper / sd

    values = np.zeros(n)
    errors = np.zeros(n)
    converged = np.ones(n, dtype=bool)
    if np.any(np.isnan(b)):
        raise DomainError("NaN in CDF limits")
    zero = np.any(b == -np.inf, axis=1)
    finite = np.isfinite(b)
    patterns = {}
    for j in np.flatnonzero(~zero):
        patterns.setdefault(finite[j].tobytes(), []).append(j)
    for key, rows in patterns.items():
        rows = np.asarray(rows)
        mask = finite[rows[0]]
        if not mask.any():
            values[rows] = 1.0
            continue
        sub = R[np.ix_(mask, mask)]
        v, e, c = _std_cdf(b[np.ix_(rows, mask)], sub, float(dof), settings)
        values[rows] = v
        errors[rows] = e
        converged[rows] = c
    return CdfResult(np.clip(values, 0.0, 1.0), errors, converged)


def mvt_cdf(upper, scale, dof, settings: CdfSettings | None = None) -> float:
    """P(T <= upper) for T ~ t_q(0, scale, dof).

    Emits :class:`BudgetExceededWarning` and returns the best estimate when
    the lattice rule runs out of points before reaching ``abs_tol``.
    """
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    res = mvt_cdf_batch(upper[None, :], scale, dof, settings)
    if not res.converged[0]:
        warnings.warn(
            f"t CDF error estimate {res.errors[0]:.2e} above tolerance",
            BudgetExceededWarning,
            stacklevel=2,
        )
    return float(res.values[0])


def _cdf_scaled(b, alpha, S, r, settings):
    """Rows of T_k(b_j; 0, alpha_j * S, r)."""
    return mvt_cdf_batch(b / np.sqrt(alpha)[:, None], S, r, settings).values


# --------------------------------------------------------------------------
# truncated moments


class _Conditional(NamedTuple):
    others: np.ndarray
    coef: np.ndarray  # S[others, j] / S[j, j]
    scale: np.ndarray  # S[others, others] - S[others, j] S[j, others] / S[j, j]


def _conditionals(S):
    k = S.shape[0]
    out = []
    for j in range(k):
        others = np.array([i for i in range(k) if i != j], dtype=int)
        col = S[others, j]
        coef = col / S[j, j]
        cs = S[np.ix_(others, others)] - np.outer(col, col) / S[j, j]
        out.append(_Conditional(others, coef, 0.5 * (cs + cs.T)))
    return out


def _first_moment_terms(b, alpha, S, r, settings, conds=None):
    """Boundary terms for X ~ t_k(0, alpha*S, r), r > 1.

    Returns (g, gamma, f) with E[X 1{X <= b}] = -alpha * S g, where
    g_j = gamma_j f_j T_{k-1}(b_-j - coef_j b_j; 0, gamma_j alpha S_{-j|j}, r - 1),
    f_j the marginal t_r density of X_j at b_j and
    gamma_j = (r + b_j^2 / (alpha S_jj)) / (r - 1).
    """
    n, k = b.shape
    beta = alpha[:, None] * np.diag(S)[None, :]
    z = b / np.sqrt(beta)
    f = np.exp(_t1_logpdf(z, r)) / np.sqrt(beta)
    gamma = (r + z * z) / (r - 1.0)
    tc = np.ones((n, k))
    if k > 1:
        conds = conds or _conditionals(S)
        for j, c in enumerate(conds):
            lim = b[:, c.others] - b[:, j:j + 1] * c.coef[None, :]
            tc[:, j] = _cdf_scaled(lim, gamma[:, j] * alpha, c.scale, r - 1.0, settings)
    g = gamma * f * tc
    return g, gamma, f


def _lower_first_moment(b, alpha, S, r, settings, conds=None):
    """E[X 1{X <= b}] for X ~ t_k(0, alpha*S, r)."""
    g, gamma, f = _first_moment_terms(b, alpha, S, r, settings, conds)
    return -alpha[:, None] * (g @ S.T), (g, gamma, f)


def _lower_second_moment(b, alpha, S, r, settings, terms, cdf_rm2, conds=None):
    """E[X X^T 1{X <= b}] for X ~ t_k(0, alpha*S, r), r > 2.

    Integration by parts against the gradient identity
    x t_r(x; S) = -(r / (r - 2)) S grad t_{r-2}(x; r S / (r - 2)).
    ``cdf_rm2`` is T_k(b; 0, r alpha S / (r - 2), r - 2).
    """
    g, gamma, f = terms
    n, k = b.shape
    dt = np.zeros((n, k, k))
    idx = np.arange(k)
    dt[:, idx, idx] = b * g
    if k > 1:
        conds = conds or _conditionals(S)
        for j, c in enumerate(conds):
            m = b[:, j:j + 1] * c.coef[None, :]
            lim = b[:, c.others] - m
            alpha_c = gamma[:, j] * alpha
            e_cond, _ = _lower_first_moment(lim, alpha_c, c.scale, r - 1.0, settings)
            dt[:, c.others, j] = g[:, j:j + 1] * m + (gamma[:, j] * f[:, j])[:, None] * e_cond
    aS = alpha[:, None, None] * S[None, :, :]
    out = (r / (r - 2.0)) * cdf_rm2[:, None, None] * aS - dt @ aS
    return 0.5 * (out + np.transpose(out, (0, 2, 1)))


def trunc_mvt_moments_batch(
    xi,
    scale,
    dof,
    settings: CdfSettings | None = None,
    alpha=None,
    prob=None,
    cdf_rm2=None,
) -> TruncMoments:
    """Moments of a ~ t_q(xi_j, alpha_j * scale, dof) truncated to a > 0.

    Returns per-row P(a > 0), E[a | a > 0] and E[a a^T | a > 0].  ``prob``
    and ``cdf_rm2`` may be supplied when the caller already holds
    T_q(xi / sqrt(alpha); scale, dof) and
    T_q(xi / sqrt(alpha dof / (dof - 2)); scale, dof - 2).
    """
    settings = settings or DEFAULT_SETTINGS
    r = float(dof)
    if r <= 2.0:
        raise DofTooSmall(f"second truncated moment needs dof > 2, got {r}")
    S = np.atleast_2d(np.asarray(scale, dtype=float))
    S = 0.5 * (S + S.T)
    cholesky_lower(S)
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        xi = xi[None, :]
    n, q = xi.shape
    alpha = np.ones(n) if alpha is None else np.broadcast_to(np.asarray(alpha, dtype=float), (n,)).copy()
    if prob is None:
        prob = _cdf_scaled(xi, alpha, S, r, settings)
    if cdf_rm2 is None:
        cdf_rm2 = _cdf_scaled(xi, alpha * r / (r - 2.0), S, r - 2.0, settings)
    conds = _conditionals(S) if q > 1 else None
    e1, terms = _lower_first_moment(xi, alpha, S, r, settings, conds)
    e2 = _lower_second_moment(xi, alpha, S, r, settings, terms, cdf_rm2, conds)

    p_safe = np.maximum(prob, REALMIN)[:, None]
    m1 = xi - e1 / p_safe
    cross = xi[:, :, None] * e1[:, None, :]
    m2 = (
        xi[:, :, None] * xi[:, None, :]
        - (cross + np.transpose(cross, (0, 2, 1))) / p_safe[:, :, None]
        + e2 / p_safe[:, :, None]
    )
    m2 = 0.5 * (m2 + np.transpose(m2, (0, 2, 1)))
    return TruncMoments(np.asarray(prob), m1, m2)


def trunc_mvt_moments(xi, scale, dof, settings: CdfSettings | None = None) -> TruncMoments:
    """Single-point version of :func:`trunc_mvt_moments_batch`."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    res = trunc_mvt_moments_batch(xi[None, :], scale, dof, settings)
    return TruncMoments(float(res.prob[0]), res.m1[0], res.m2[0])
