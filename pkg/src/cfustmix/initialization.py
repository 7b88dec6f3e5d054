"""Starting values for EM and information-criterion model selection.

Three ways to build a start from a partition of the data:

* moments: per-cluster method-of-moments under a skew-normal with diagonal
  skewness, shrinking the sample variances by a proportion (1 - a);
* transformation: rotate each cluster to its principal axes, fit a
  diagonal-skewness CFUST there and rotate back;
* nested: fit a constrained mixture (normal, t, q = 1 or diagonal skewness)
  and embed it as a full CFUST start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .density import loglik as model_loglik
from .em import FitOptions, FitResult, _embed_q, fit
from .errors import (
    AllFitsFailed,
    CfustError,
    ClusterTooSmall,
    InputError,
    NotPositiveDefinite,
    TooFewPoints,
)
from .mvt import CdfSettings
from .params import NU_INIT, NU_MAX, CfustParams, DataMatrix, MixtureModel, as_data, count_free_params, validate_mixture
from .sampling import RngHandle

METHOD_ORDER = ("moments", "transformation", "nested")
# iteration caps for nested pre-fits: q = 1 fits are cheap and slow to converge
NESTED_ITMAX = {"normal": 1000, "t": 1000, "rmst": 1000, "umst": 100}
NESTED_VARIANTS = ("normal", "t", "rmst", "umst")


@dataclass(frozen=True)
class InitSpec:
    method: str = "moments"
    a: float = 0.9
    variant: str = "rmst"
    nkmeans: int = 20
    clust: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHOD_ORDER:
            raise InputError(f"unknown init method {self.method!r}")
        if self.variant not in NESTED_VARIANTS:
            raise InputError(f"unknown nested variant {self.variant!r}")
        if not 0.0 <= self.a <= 1.0:
            raise InputError("a must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str, **kw) -> "InitSpec":
        """Parse "moments", "transformation" or "nested:<variant>"."""
        if text.startswith("nested"):
            _, _, variant = text.partition(":")
            return cls(method="nested", variant=variant or "rmst", **kw)
        return cls(method=text, **kw)


class InitCandidate(NamedTuple):
    model: MixtureModel
    loglik: float
    method: str


# --------------------------------------------------------------------------
# k-means


def _lloyd(X, centers, max_iter=100):
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        g = centers.shape[0]
        for h in range(g):
            if not np.any(new == h):
                # reseed the empty cluster at the point farthest from its center
                far = np.argmax(d2[np.arange(X.shape[0]), new])
                new[far] = h
                d2[far] = 0.0
        centers = np.vstack([X[new == h].mean(axis=0) for h in range(g)])
        history.append(float(((X - centers[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    return labels, centers, history


def kmeans_partition(data, g: int, ntrials: int = 20, rng=None, return_history=False):
    """Best of ``ntrials`` Lloyd runs from random data-point seedings.

    Returns 0-based labels of length n.
    """
    data = as_data(data)
    X = data.values
    if data.n < g:
        raise TooFewPoints(f"need at least g={g} points, got {data.n}")
    if g == 1:
        labels = np.zeros(data.n, dtype=int)
        return (labels, [float(((X - X.mean(0)) ** 2).sum())]) if return_history else labels
    rng = rng if isinstance(rng, RngHandle) else RngHandle(int(rng or 0))
    gen = rng.generator()
    best, best_obj, best_hist = None, np.inf, None
    for _ in range(max(1, ntrials)):
        start = gen.choice(data.n, size=g, replace=False)
        labels, _, hist = _lloyd(X, X[start].copy())
        if hist[-1] < best_obj - 1e-12 * abs(best_obj if np.isfinite(best_obj) else 1.0):
            best, best_obj, best_hist = labels, hist[-1], hist
    return (best, best_hist) if return_history else best


def _labels_or_kmeans(data, g, spec: InitSpec):
    if spec.clust is not None:
        labels = np.asarray(spec.clust, dtype=int)
        if labels.shape != (data.n,):
            raise InputError("clust must have one label per observation")
        uniq = np.unique(labels)
        if uniq.size != g:
            raise InputError(f"clust has {uniq.size} distinct labels, expected {g}")
        return np.searchsorted(uniq, labels)
    return kmeans_partition(data, g, spec.nkmeans, RngHandle(spec.seed))


# --------------------------------------------------------------------------
# moments


def _pad_delta(delta_sq, q):
    p = delta_sq.shape[0]
    out = np.zeros((p, q))
    k = min(p, q)
    out[:, :k] = delta_sq[:, :k]
    return out


def _moments_component(Y, q, a, nu_init):
    n, p = Y.shape
    if n < p + 1:
        raise ClusterTooSmall(f"cluster of size {n} is too small for p={p}")
    ybar = Y.mean(axis=0)
    S = np.atleast_2d(np.cov(Y, rowvar=False))
    s_star = np.diag(S).copy()
    third = ((Y - ybar) ** 3).sum(axis=0)
    sign = np.where(third < 0, -1.0, 1.0)
    delta = sign * np.sqrt(math.pi * (1.0 - a) * s_star / (math.pi - 2.0))
    sigma = S + (a - 1.0) * np.diag(s_star)
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        delta = np.zeros(p)
        sigma = S
    try:
        return CfustParams(ybar - math.sqrt(2.0 / math.pi) * delta, sigma, _pad_delta(np.diag(delta), q), nu_init)
    except NotPositiveDefinite:
        raise ClusterTooSmall("cluster sample covariance is singular") from None


def init_moments(data, labels, a: float = 0.9, q: int | None = None, nu_init: float = NU_INIT) -> MixtureModel:
    data = as_data(data)
    q = data.p if q is None else q
    labels = np.asarray(labels)
    groups = np.unique(labels)
    comps = [_moments_component(data.values[labels == h], q, a, nu_init) for h in groups]
    pro = np.array([np.mean(labels == h) for h in groups])
    return validate_mixture(MixtureModel(tuple(comps), pro))


# --------------------------------------------------------------------------
# transformation


def principal_rotation(Y):
    """Orthogonal C with cov(C y) diagonal (rows of C are eigenvectors of cov(Y))."""
    S = np.atleast_2d(np.cov(Y, rowvar=False))
    _, vecs = np.linalg.eigh(S)
    return vecs.T


def init_transformation(data, labels, q: int | None = None, options: FitOptions | None = None, a: float = 0.9):
    data = as_data(data)
    q = data.p if q is None else q
    options = options or FitOptions()
    inner = replace(options, itmax=20, verbose=False, init="moments")
    labels = np.asarray(labels)
    comps = []
    groups = np.unique(labels)
    for h in groups:
        Y = data.values[labels == h]
        try:
            C = principal_rotation(Y)
            X = Y @ C.T
            start = init_moments(X, np.zeros(len(X), dtype=int), a)
            res = fit(X, 1, q=data.p, initial=start, options=inner, constraint="diagonal")
            c = res.model.components[0]
            comps.append(
                CfustParams(C.T @ c.mu, C.T @ c.sigma @ C, _pad_delta(C.T @ c.delta, q), c.dof)
            )
        except CfustError:
            comps.append(_moments_component(Y, q, a, NU_INIT))
    pro = np.array([np.mean(labels == h) for h in groups])
    return validate_mixture(MixtureModel(tuple(comps), pro))


# --------------------------------------------------------------------------
# nested


def nested_fit(data, g, variant: str, options: FitOptions | None = None, labels=None, a: float = 0.9) -> FitResult:
    """Fit the constrained mixture named by ``variant`` from a moments start."""
    data = as_data(data)
    options = options or FitOptions()
    if variant not in NESTED_VARIANTS:
        raise InputError(f"unknown nested variant {variant!r}")
    if labels is None:
        labels = kmeans_partition(data, g, options.nkmeans, RngHandle(options.seed))
    inner = replace(options, itmax=NESTED_ITMAX[variant], verbose=False)
    if variant == "umst":
        start = init_moments(data, labels, a, q=data.p)
        return fit(data, g, q=data.p, initial=start, options=inner, constraint="diagonal")
    start = init_moments(data, labels, a, q=1)
    if variant == "rmst":
        start = MixtureModel(
            tuple(c.replace(delta=_rmst_delta(data.values[labels == h], a)) for h, c in enumerate(start.components)),
            start.pro,
        )
        return fit(data, g, q=1, initial=start, options=inner, constraint="full")
    if variant == "t":
        return fit(data, g, q=1, initial=start, options=inner, constraint="zero")
    start = MixtureModel(tuple(c.replace(dof=NU_MAX) for c in start.components), start.pro)
    return fit(data, g, q=1, initial=start, options=inner, constraint="normal")


def _rmst_delta(Y, a):
    """Single skewness column for a q = 1 start: the diagonal moments skewness as a vector."""
    ybar = Y.mean(axis=0)
    s_star = np.var(Y, axis=0, ddof=1)
    third = ((Y - ybar) ** 3).sum(axis=0)
    sign = np.where(third < 0, -1.0, 1.0)
    return (sign * np.sqrt(math.pi * (1.0 - a) * s_star / (math.pi - 2.0)))[:, None]


def init_nested(data, g, variant: str = "rmst", q: int | None = None, options: FitOptions | None = None, labels=None, a: float = 0.9) -> MixtureModel:
    data = as_data(data)
    q = data.p if q is None else q
    res = nested_fit(data, g, variant, options, labels, a)
    return _embed_q(res.model, q)


# --------------------------------------------------------------------------
# selection of a start


def initial_model(data, g, q, options: FitOptions, clust=None, method: str | None = None) -> MixtureModel:
    data = as_data(data)
    spec = InitSpec.parse(
        method or options.init,
        a=options.a,
        nkmeans=options.nkmeans,
        clust=None if clust is None else tuple(np.asarray(clust).tolist()),
        seed=options.seed,
    )
    labels = _labels_or_kmeans(data, g, spec)
    if spec.method == "moments":
        return init_moments(data, labels, spec.a, q)
    if spec.method == "transformation":
        return init_transformation(data, labels, q, options, spec.a)
    return init_nested(data, g, spec.variant, q, options, labels, spec.a)


def make_candidates(
    data,
    g: int,
    q: int | None = None,
    methods: Sequence[str] = ("moments", "transformation", "nested:rmst"),
    options: FitOptions | None = None,
    clust=None,
    settings: CdfSettings | None = None,
) -> list:
    """One InitCandidate per method, each scored by its log-likelihood."""
    data = as_data(data)
    q = data.p if q is None else q
    options = options or FitOptions()
    settings = settings or CdfSettings(seed=options.seed)
    out = []
    for method in methods:
        model = initial_model(data, g, q, options, clust=clust, method=method)
        out.append(InitCandidate(model, model_loglik(data, model, settings), method))
    return out


def score_initials(candidates: Sequence[InitCandidate]) -> InitCandidate:
    """Candidate with the largest initial log-likelihood; ties go to the earlier method."""
    if not candidates:
        raise InputError("no initial candidates to score")

    def order(c):
        base = c.method.split(":")[0]
        return METHOD_ORDER.index(base) if base in METHOD_ORDER else len(METHOD_ORDER)

    return min(candidates, key=lambda c: (-c.loglik, order(c)))


# --------------------------------------------------------------------------
# model selection


class SelectionRow(NamedTuple):
    g: int
    q: int
    loglik: float
    n_params: int
    aic: float
    bic: float
    score: float
    status: str


def model_select(
    data,
    g_range: Sequence[int],
    q_range: Sequence[int] | None = None,
    criterion: str = "bic",
    options: FitOptions | None = None,
):
    """Fit every (g, q) pair and return (best FitResult, table of SelectionRow)."""
    data = as_data(data)
    if criterion not in ("aic", "bic"):
        raise InputError(f"criterion must be aic or bic, got {criterion!r}")
    g_range = list(g_range)
    q_range = list(q_range) if q_range is not None else [data.p]
    if not g_range or not q_range:
        raise InputError("g_range and q_range must be nonempty")
    options = options or FitOptions()
    table, best, best_score = [], None, np.inf
    for g in g_range:
        for q in q_range:
            try:
                res = fit(data, g, q=q, options=options)
            except CfustError as exc:
                table.append(SelectionRow(g, q, -np.inf, count_free_params(g, data.p, q), np.inf, np.inf, np.inf, f"failed: {exc}"))
                continue
            score = res.aic if criterion == "aic" else res.bic
            table.append(SelectionRow(g, q, res.loglik, res.n_params, res.aic, res.bic, score, "ok"))
            if score < best_score:
                best, best_score = res, score
    if best is None:
        raise AllFitsFailed("every (g, q) fit failed")
    return best, table
