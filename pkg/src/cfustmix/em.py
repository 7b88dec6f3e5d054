"""EM fitting of finite mixtures of CFUST distributions.

One iteration is an E-step (posterior probabilities z and the conditional
expectations w, e1, e2, e3 of the latent gamma and half-normal variables)
followed by a conditional M-step updating pro, mu, Delta, Sigma and dof in
that order.  e1 = E[log W | y] uses the one-step-late approximation
log(w) + psi((nu+p)/2) - log((nu+p)/2), which reduces to
psi((nu+p)/2) - log((nu+d)/2) when Delta = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from .density import LOG_DENSITY_FLOOR, component_eval, loglik as model_loglik
from .errors import (
    ComponentStarvation,
    DimensionMismatch,
    InputError,
    NotPositiveDefinite,
    SingularMoment,
)
from .mvt import REALMIN, CdfSettings, _cdf_scaled, digamma, trunc_mvt_moments_batch
from .params import (
    NU_MAX,
    NU_MIN,
    CfustParams,
    DataMatrix,
    MixtureModel,
    as_data,
    count_free_params,
    validate_mixture,
)

CONVERGENCE_RULES = ("aitken", "likelihood", "parameters")
CONSTRAINTS = ("full", "diagonal", "zero", "normal")
PARAM_NAMES = ("pro", "mu", "sigma", "delta", "dof")

# rows with posterior weight below this skip the truncated-moment evaluation
Z_SKIP = 1e-12
# Mahalanobis cap keeping w and log w finite for far outliers
D_MAX = 1e280

ESTEP_SETTINGS = CdfSettings(abs_tol=1e-5, max_points=5_000, seed=0, adaptive=False)


@dataclass
class EStepCache:
    z: np.ndarray  # (n, g)
    w: np.ndarray  # (n, g)
    e1: np.ndarray  # (n, g)
    e2: np.ndarray  # (n, g, q)
    e3: np.ndarray  # (n, g, q, q)
    log_comp: np.ndarray  # (n, g) unweighted component log-densities
    loglik: float


@dataclass
class FitOptions:
    itmax: int = 100
    eps: float = 1e-6
    convergence: str = "aitken"
    cdf: CdfSettings = ESTEP_SETTINGS
    seed: int = 0
    init: str = "moments"
    a: float = 0.9
    nkmeans: int = 20
    verbose: bool = False

    def __post_init__(self):
        if self.convergence not in CONVERGENCE_RULES:
            raise InputError(f"unknown convergence rule {self.convergence!r}")
        if self.itmax < 0 or not self.eps > 0:
            raise InputError("itmax must be >= 0 and eps > 0")


@dataclass
class FitResult:
    model: MixtureModel
    loglik_trace: np.ndarray
    loglik: float
    aic: float
    bic: float
    tau: np.ndarray
    clusters: np.ndarray  # 1-based
    iterations: int
    converged: bool
    criterion: str
    constraint: str = "full"
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return count_free_params(self.model.g, self.model.p, self.model.q)


# --------------------------------------------------------------------------
# E-step


def e_step(data, model: MixtureModel, settings: CdfSettings | None = None) -> EStepCache:
    data = as_data(data)
    if data.p != model.p:
        raise DimensionMismatch(f"data has p={data.p}, model has p={model.p}")
    settings = settings or ESTEP_SETTINGS
    Y = data.values
    n, g, p, q = data.n, model.g, model.p, model.q
    log_comp = np.empty((n, g))
    w = np.empty((n, g))
    e1 = np.empty((n, g))
    e2 = np.empty((n, g, q))
    e3 = np.empty((n, g, q, q))
    evals = [component_eval(Y, comp, settings) for comp in model.components]
    for h, ev in enumerate(evals):
        log_comp[:, h] = ev.logpdf

    with np.errstate(divide="ignore"):
        log_pro = np.log(model.pro)
    weighted = log_comp + log_pro[None, :]
    lse = logsumexp(weighted, axis=1)
    z = np.exp(weighted - lse[:, None])
    z /= z.sum(axis=1, keepdims=True)
    # every component at the floor: the observation carries no information
    underflow = np.all(log_comp <= LOG_DENSITY_FLOOR, axis=1)
    if np.any(underflow):
        z[underflow] = model.pro[None, :]

    for h, (comp, ev) in enumerate(zip(model.components, evals)):
        nu = comp.dof
        c, d = ev.geometry
        d = np.minimum(d, D_MAX)
        # symmetric-case values for rows the component does not own
        w[:, h] = (nu + p) / (nu + d)
        e2[:, h] = 0.0
        e3[:, h] = 0.0
        owned = (z[:, h] >= Z_SKIP) if g > 1 else np.ones(n, dtype=bool)
        rows = np.flatnonzero(owned & ~underflow)
        if rows.size:
            c, d, den = c[rows], d[rows], np.maximum(ev.cdf[rows], REALMIN)
            r = nu + p + 2.0
            alpha = (nu + d) / r
            lam = comp.derived.lam
            prob = _cdf_scaled(c, alpha, lam, r, settings)
            wh = (nu + p) / (nu + d) * np.maximum(prob, REALMIN) / den
            tm = trunc_mvt_moments_batch(c, lam, r, settings, alpha=alpha, prob=prob, cdf_rm2=ev.cdf[rows])
            w[rows, h] = wh
            e2[rows, h] = wh[:, None] * tm.m1
            e3[rows, h] = wh[:, None, None] * tm.m2
        e1[:, h] = np.log(w[:, h]) + digamma((nu + p) / 2.0) - math.log((nu + p) / 2.0)
    return EStepCache(z, w, e1, e2, e3, log_comp, float(np.sum(lse)))


# --------------------------------------------------------------------------
# M-step


def _dof_equation(nu):
    return math.log(nu / 2.0) - digamma(nu / 2.0) + 1.0


def solve_dof(n_eff: float, s: float, lo: float = NU_MIN, hi: float = NU_MAX) -> float:
    """Root of n_eff * [log(nu/2) - psi(nu/2) + 1] = s on [lo, hi].

    The bracket function is strictly decreasing in nu, so the bisection is
    done on log(nu).  Without a sign change the endpoint with the smaller
    residual is returned.
    """
    if not n_eff > 0:
        raise ValueError("n_eff must be positive")
    target = s / n_eff

    def resid(nu):
        return _dof_equation(nu) - target

    r_lo, r_hi = resid(lo), resid(hi)
    if r_lo == 0.0:
        return lo
    if r_hi == 0.0:
        return hi
    if (r_lo > 0) == (r_hi > 0):
        return lo if abs(r_lo) < abs(r_hi) else hi
    a, b = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (a + b)
        rm = resid(math.exp(mid))
        if rm == 0.0:
            return math.exp(mid)
        if rm > 0:
            a = mid
        else:
            b = mid
        if b - a < 1e-14:
            break
    return math.exp(0.5 * (a + b))


def _spd_or_ridge(mat, h):
    mat = 0.5 * (mat + mat.T)
    try:
        np.linalg.cholesky(mat)
        return mat
    except np.linalg.LinAlgError:
        pass
    p = mat.shape[0]
    ridged = mat + (1e-10 * np.trace(mat) / p) * np.eye(p)
    try:
        np.linalg.cholesky(ridged)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"Sigma update for component {h + 1} is not positive definite") from None
    return ridged


def m_step(
    data,
    cache: EStepCache,
    model: MixtureModel,
    constraint: str = "full",
    known: Iterable[str] | None = None,
) -> MixtureModel:
    """Conditional maximization of the Q-function.

    mu uses the previous Delta, Delta the new mu, Sigma the new mu and Delta.
    ``constraint`` restricts Delta: "diagonal" (q == p), "zero" (symmetric t)
    or "normal" (zero Delta and dof held at its current value).  Names in
    ``known`` are held fixed.
    """
    if constraint not in CONSTRAINTS:
        raise InputError(f"unknown constraint {constraint!r}")
    known = frozenset(known or ())
    bad = known - set(PARAM_NAMES)
    if bad:
        raise InputError(f"unknown parameter names in known: {sorted(bad)}")
    data = as_data(data)
    Y = data.values
    n, p = data.n, data.p
    comps = []
    n_eff_all = cache.z.sum(axis=0)
    for h, comp in enumerate(model.components):
        z = cache.z[:, h]
        n_eff = float(n_eff_all[h])
        if n_eff < p + 1:
            raise ComponentStarvation(h, n_eff, p + 1)
        w, e1, e2, e3 = cache.w[:, h], cache.e1[:, h], cache.e2[:, h], cache.e3[:, h]
        delta = comp.delta
        zw = z * w
        ze2 = z[:, None] * e2
        sum_ze2 = ze2.sum(axis=0)

        if "mu" in known:
            mu = comp.mu
        else:
            mu = (zw @ Y - delta @ sum_ze2) / zw.sum()
        resid = Y - mu

        if "delta" in known:
            pass
        elif constraint in ("zero", "normal"):
            delta = np.zeros_like(delta)
        else:
            A = resid.T @ ze2
            E3 = np.tensordot(z, e3, axes=(0, 0))
            E3 = 0.5 * (E3 + E3.T)
            try:
                if constraint == "diagonal":
                    sig_inv = np.linalg.inv(comp.sigma)
                    M = sig_inv * E3
                    rhs = np.diag(sig_inv @ A)
                    delta = np.diag(np.linalg.solve(M, rhs))
                else:
                    delta = np.linalg.solve(E3, A.T).T
            except np.linalg.LinAlgError:
                raise SingularMoment(h) from None
            if not np.all(np.isfinite(delta)):
                raise SingularMoment(h)

        if "sigma" in known:
            sigma = comp.sigma
        else:
            cross = resid.T @ ze2 @ delta.T
            E3 = np.tensordot(z, e3, axes=(0, 0))
            sigma = ((resid * zw[:, None]).T @ resid - cross - cross.T + delta @ E3 @ delta.T) / n_eff
            sigma = _spd_or_ridge(sigma, h)

        if "dof" in known or constraint == "normal":
            dof = comp.dof
        else:
            dof = solve_dof(n_eff, float(np.sum(z * (w - e1))))
        comps.append(CfustParams(mu, sigma, delta, dof))

    pro = model.pro if "pro" in known else n_eff_all / n
    return MixtureModel(tuple(comps), pro / pro.sum())


# --------------------------------------------------------------------------
# convergence


def flatten_params(model: MixtureModel) -> np.ndarray:
    parts = [model.pro]
    for c in model.components:
        parts += [c.mu, c.sigma[np.triu_indices(c.p)], c.delta.ravel(), [c.dof]]
    return np.concatenate([np.ravel(a) for a in parts])


def check_convergence(loglik_history, param_history=None, options: FitOptions | None = None) -> bool:
    """Stop decision after the latest iteration."""
    options = options or FitOptions()
    eps = options.eps
    ll = list(loglik_history)
    rule = options.convergence
    if rule == "aitken":
        if len(ll) < 3:
            return False
        l0, l1, l2 = ll[-3], ll[-2], ll[-1]
        denom = l1 - l0
        if not denom > 0:
            return False
        a = (l2 - l1) / denom
        if a >= 1.0 or abs(1.0 - a) < 1e-12:
            return False
        l_inf = l1 + (l2 - l1) / (1.0 - a)
        return abs(l_inf - l2) < eps
    if rule == "likelihood":
        if len(ll) < 2 or ll[-1] == 0:
            return False
        return abs(ll[-1] - ll[-2]) / abs(ll[-1]) < eps
    params = list(param_history or [])
    if len(params) < 2:
        return False
    new, old = params[-1], params[-2]
    if isinstance(new, MixtureModel):
        new, old = flatten_params(new), flatten_params(old)
    new, old = np.asarray(new, dtype=float), np.asarray(old, dtype=float)
    if new.shape != old.shape:
        return False
    change = np.abs(new - old)
    mag = np.abs(new)
    rel = np.where(mag < eps, change, change / np.where(mag < eps, 1.0, mag))
    return bool(np.max(rel) < eps)


# --------------------------------------------------------------------------
# driver


def _embed_q(model: MixtureModel, q: int) -> MixtureModel:
    """Pad (or truncate) Delta columns to width q."""
    comps = []
    for c in model.components:
        if c.q == q:
            comps.append(c)
            continue
        delta = np.zeros((c.p, q))
        k = min(q, c.q)
        delta[:, :k] = c.delta[:, :k]
        comps.append(c.replace(delta=delta))
    return MixtureModel(tuple(comps), model.pro)


def _result(data, model, cache, trace, iterations, converged, options, constraint, final_settings):
    if final_settings is None:
        final_ll = cache.loglik
    else:
        final_ll = model_loglik(data, model, final_settings)
    m = count_free_params(model.g, model.p, model.q)
    n = data.n
    tau = cache.z
    return FitResult(
        model=model,
        loglik_trace=np.asarray(trace, dtype=float),
        loglik=final_ll,
        aic=2.0 * m - 2.0 * final_ll,
        bic=m * math.log(n) - 2.0 * final_ll,
        tau=tau,
        clusters=np.argmax(tau, axis=1) + 1,
        iterations=iterations,
        converged=converged,
        criterion=options.convergence,
        constraint=constraint,
        seed=options.seed,
    )


def final_settings_for(model: MixtureModel, options: FitOptions) -> CdfSettings | None:
    """Settings for the reported log-likelihood; None reuses the E-step value.

    For q <= 2 the CDF is deterministic quadrature, so the E-step value is
    already exact.  Otherwise the reported value uses the adaptive default
    rule, which is what ``density`` evaluates.
    """
    if model.q <= 2:
        return None
    return CdfSettings(seed=options.seed)


def run_em(
    data,
    model: MixtureModel,
    options: FitOptions | None = None,
    constraint: str = "full",
    known: Iterable[str] | None = None,
    log=print,
    final_loglik: bool = True,
) -> FitResult:
    """Iterate E and M steps from ``model`` until the stop rule or itmax."""
    options = options or FitOptions()
    data = as_data(data)
    known = frozenset(known or ())
    model = validate_mixture(model)
    if data.p != model.p:
        raise DimensionMismatch(f"data has p={data.p}, model has p={model.p}")
    settings = options.cdf
    cache = e_step(data, model, settings)
    trace = [cache.loglik]
    history = [flatten_params(model)]
    if options.verbose:
        log(f"  Iteration 0 : loglik = {cache.loglik:.7g}")
    converged = False
    it = 0
    all_known = known >= set(PARAM_NAMES) or (constraint == "normal" and known >= {"pro", "mu", "sigma"})
    while it < options.itmax and not all_known:
        try:
            new_model = m_step(data, cache, model, constraint, known)
            new_cache = e_step(data, new_model, settings)
        except (ComponentStarvation, SingularMoment) as exc:
            exc.partial = _result(data, model, cache, trace, it, False, options, constraint, None)
            raise
        it += 1
        model, cache = new_model, new_cache
        trace.append(cache.loglik)
        history.append(flatten_params(model))
        if options.verbose:
            log(f"  Iteration {it} : loglik = {cache.loglik:.7g}")
        if check_convergence(trace, history, options):
            converged = True
            break
    final = final_settings_for(model, options) if final_loglik else None
    return _result(data, model, cache, trace, it, converged, options, constraint, final)


def fit(
    data,
    g: int,
    q: int | None = None,
    initial: MixtureModel | None = None,
    known: Iterable[str] | None = None,
    options: FitOptions | None = None,
    constraint: str = "full",
    clust=None,
    log=print,
) -> FitResult:
    """Fit a g-component FM-CFUST model.

    Without ``initial`` the starting value comes from ``options.init``:
    "moments" (default), "transformation", or "nested:<variant>" with
    variant one of normal, t, rmst, umst.
    """
    from .initialization import initial_model

    options = options or FitOptions()
    data = as_data(data)
    q = data.p if q is None else int(q)
    if g < 1 or q < 1:
        raise InputError("g and q must be positive")
    if constraint == "diagonal" and q != data.p:
        raise InputError("a diagonal skewness matrix needs q == p")
    if initial is None:
        initial = initial_model(data, g, q, options, clust=clust)
    initial = validate_mixture(initial)
    if initial.g != g or initial.p != data.p:
        raise DimensionMismatch(
            f"initial model has (g, p) = ({initial.g}, {initial.p}), expected ({g}, {data.p})"
        )
    if initial.q != q:
        initial = _embed_q(initial, q)
    if constraint in ("zero", "normal"):
        initial = MixtureModel(
            tuple(c.replace(delta=np.zeros_like(c.delta)) for c in initial.components), initial.pro
        )
    elif constraint == "diagonal":
        initial = MixtureModel(
            tuple(c.replace(delta=np.diag(np.diag(c.delta))) for c in initial.components), initial.pro
        )
    if options.verbose:
        log("Finite Mixture of Multivariate CFUST Distributions")
        log(f"with {g} component{'s' if g > 1 else ''}")
    return run_em(data, initial, options, constraint, known, log=log)
