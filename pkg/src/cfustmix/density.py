"""CFUST and FM-CFUST densities, evaluated in log space."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import DimensionMismatch
from .mvt import REALMIN, CdfSettings, mvt_cdf_batch, mvt_logpdf_chol
from .params import CfustParams, DataMatrix, MixtureModel, as_data

LOG_DENSITY_FLOOR = -745.0


class ObsGeometry(NamedTuple):
    """Per-observation c(y) = Delta^T Omega^-1 (y - mu) and d(y) = Mahalanobis^2 under Omega."""

    c: np.ndarray
    d: np.ndarray


class ComponentEval(NamedTuple):
    logpdf: np.ndarray
    geometry: ObsGeometry
    cdf: np.ndarray  # T_q(c sqrt((nu+p)/(nu+d)); 0, Lambda, nu+p), unfloored


def obs_geometry(Y, params: CfustParams) -> ObsGeometry:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    L = params.derived.omega_chol
    diff = Y - params.mu
    half = solve_triangular(L, diff.T, lower=True)
    with np.errstate(over="ignore"):
        d = np.sum(half * half, axis=0)
    omega_inv_diff = solve_triangular(L.T, half, lower=False)
    c = (params.delta.T @ omega_inv_diff).T
    return ObsGeometry(c, d)


def component_eval(Y, params: CfustParams, settings: CdfSettings | None = None) -> ComponentEval:
    """Log-density of one CFUST component at every row of Y, with the pieces the E-step reuses."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[1] != params.p:
        raise DimensionMismatch(f"data has {Y.shape[1]} columns, component has p={params.p}")
    der = params.derived
    nu, p, q = params.dof, params.p, params.q
    geo = obs_geometry(Y, params)
    log_t = mvt_logpdf_chol(Y, params.mu, der.omega_chol, nu)
    upper = geo.c * np.sqrt((nu + p) / (nu + geo.d))[:, None]
    cdf = mvt_cdf_batch(upper, der.lam, nu + p, settings).values
    logpdf = q * math.log(2.0) + log_t + np.log(np.maximum(cdf, REALMIN))
    return ComponentEval(np.maximum(logpdf, LOG_DENSITY_FLOOR), geo, cdf)


def cfust_logpdf(y, params: CfustParams, settings: CdfSettings | None = None) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(component_eval(y[None, :], params, settings).logpdf[0])


def cfust_logpdf_batch(Y, params: CfustParams, settings: CdfSettings | None = None) -> np.ndarray:
    return component_eval(Y, params, settings).logpdf


def component_logpdfs(data, model: MixtureModel, settings: CdfSettings | None = None) -> np.ndarray:
    """n x g matrix of unweighted component log-densities."""
    data = as_data(data)
    if data.p != model.p:
        raise DimensionMismatch(f"data has p={data.p}, model has p={model.p}")
    return np.column_stack([cfust_logpdf_batch(data.values, c, settings) for c in model.components])


def mixture_logpdf(y, model: MixtureModel, settings: CdfSettings | None = None) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(mixture_logpdf_batch(y[None, :], model, settings)[0])


def mixture_logpdf_batch(Y, model: MixtureModel, settings: CdfSettings | None = None) -> np.ndarray:
    comp = component_logpdfs(DataMatrix(Y), model, settings)
    return _weighted_lse(comp, model.pro)


def _weighted_lse(comp_logpdf, pro):
    with np.errstate(divide="ignore"):
        log_pro = np.log(np.asarray(pro, dtype=float))
    return logsumexp(comp_logpdf + log_pro[None, :], axis=1)


def density_batch(data, model: MixtureModel, settings: CdfSettings | None = None, return_components=False):
    """Mixture density at each row of ``data``.

    With ``return_components=True`` also returns the n x g matrix of
    component log-densities.
    """
    comp = component_logpdfs(data, model, settings)
    dens = np.exp(_weighted_lse(comp, model.pro))
    if return_components:
        return dens, comp
    return dens


def loglik(data, model: MixtureModel, settings: CdfSettings | None = None) -> float:
    """Sum of mixture log-densities over the observations."""
    comp = component_logpdfs(data, model, settings)
    return float(np.sum(_weighted_lse(comp, model.pro)))
