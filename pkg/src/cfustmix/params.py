"""Parameter containers for CFUST components and their finite mixtures.

A component is the tuple ``(mu, sigma, delta, dof)`` with ``mu`` of length p,
``sigma`` p x p SPD, ``delta`` p x q and ``dof`` > 0.  Arrays are copied and
frozen on construction so instances can be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    DimensionMismatch,
    InvalidDof,
    InvalidProportions,
    NotPositiveDefinite,
)

NU_MAX = 400.0
NU_MIN = 0.5
NU_INIT = 40.0

_PRO_TOL = 1e-12
_PRO_RENORM_TOL = 1e-8


def _frozen(a, ndim):
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def cholesky_lower(mat):
    """Lower Cholesky factor; raises NotPositiveDefinite instead of LinAlgError."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


@dataclass(frozen=True, eq=False)
class CfustParams:
    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray
    dof: float

    def __post_init__(self):
        mu = _frozen(self.mu, 1)
        sigma = np.array(self.sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1)
        delta = np.array(self.delta, dtype=float)
        if delta.ndim == 1:
            delta = delta.reshape(-1, 1)
        p = mu.shape[0]
        if p < 1:
            raise DimensionMismatch("mu must have at least one entry")
        if sigma.shape != (p, p):
            raise DimensionMismatch(f"sigma has shape {sigma.shape}, expected {(p, p)}")
        if delta.ndim != 2 or delta.shape[0] != p or delta.shape[1] < 1:
            raise DimensionMismatch(f"delta has shape {delta.shape}, expected ({p}, q>=1)")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma)) and np.all(np.isfinite(delta))):
            raise DimensionMismatch("parameters must be finite")
        sigma = 0.5 * (sigma + sigma.T)
        cholesky_lower(sigma)
        dof = float(self.dof)
        if not np.isfinite(dof) or dof <= 0:
            raise InvalidDof(f"dof must be positive and finite, got {self.dof}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", _frozen(sigma, 2))
        object.__setattr__(self, "delta", _frozen(delta, 2))
        object.__setattr__(self, "dof", dof)

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @property
    def q(self) -> int:
        return self.delta.shape[1]

    @cached_property
    def derived(self) -> "DerivedComponentQuantities":
        return DerivedComponentQuantities.from_params(self)

    def replace(self, **changes) -> "CfustParams":
        fields = dict(mu=self.mu, sigma=self.sigma, delta=self.delta, dof=self.dof)
        fields.update(changes)
        return CfustParams(**fields)

    def allclose(self, other: "CfustParams", rtol=0.0, atol=0.0) -> bool:
        return (
            self.delta.shape == other.delta.shape
            and np.allclose(self.mu, other.mu, rtol=rtol, atol=atol)
            and np.allclose(self.sigma, other.sigma, rtol=rtol, atol=atol)
            and np.allclose(self.delta, other.delta, rtol=rtol, atol=atol)
            and np.isclose(self.dof, other.dof, rtol=rtol, atol=atol)
        )


@dataclass(frozen=True, eq=False)
class DerivedComponentQuantities:
    """Omega = Sigma + Delta Delta^T, its Cholesky factor, and Lambda.

    Lambda is formed as (I + Delta^T Sigma^-1 Delta)^-1, which equals
    I - Delta^T Omega^-1 Delta but stays SPD under rounding.
    """

    omega: np.ndarray
    omega_chol: np.ndarray
    lam: np.ndarray
    log_det_omega: float

    @classmethod
    def from_params(cls, params: CfustParams) -> "DerivedComponentQuantities":
        sigma, delta = params.sigma, params.delta
        omega = sigma + delta @ delta.T
        omega = 0.5 * (omega + omega.T)
        L = cholesky_lower(omega)
        sig_cf = cho_factor(sigma, lower=True)
        inner = np.eye(params.q) + delta.T @ cho_solve(sig_cf, delta)
        lam = np.linalg.inv(0.5 * (inner + inner.T))
        lam = 0.5 * (lam + lam.T)
        log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
        for a in (omega, L, lam):
            a.setflags(write=False)
        return cls(omega=omega, omega_chol=L, lam=lam, log_det_omega=log_det)

    @property
    def omega_inv(self) -> np.ndarray:
        return cho_solve((self.omega_chol, True), np.eye(self.omega.shape[0]))


@dataclass(frozen=True, eq=False)
class MixtureModel:
    components: tuple
    pro: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise DimensionMismatch("a mixture needs at least one component")
        pro = _frozen(np.atleast_1d(self.pro), 1)
        if pro.shape[0] != len(comps):
            raise DimensionMismatch(f"{len(comps)} components but {pro.shape[0]} proportions")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "pro", pro)

    @property
    def g(self) -> int:
        return len(self.components)

    @property
    def p(self) -> int:
        return self.components[0].p

    @property
    def q(self) -> int:
        return self.components[0].q

    @classmethod
    def single(cls, params: CfustParams) -> "MixtureModel":
        return cls((params,), np.ones(1))

    def allclose(self, other: "MixtureModel", rtol=0.0, atol=0.0) -> bool:
        return (
            self.g == other.g
            and np.allclose(self.pro, other.pro, rtol=rtol, atol=atol)
            and all(a.allclose(b, rtol=rtol, atol=atol) for a, b in zip(self.components, other.components))
        )


@dataclass(frozen=True, eq=False)
class DataMatrix:
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise DimensionMismatch(f"data must be a non-empty n x p matrix, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DimensionMismatch("data contains non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def as_data(data) -> DataMatrix:
    return data if isinstance(data, DataMatrix) else DataMatrix(data)


def validate_mixture(model: MixtureModel) -> MixtureModel:
    """Check the mixture invariants and return a normalized copy.

    Sigma is symmetrized before the SPD test, proportions within 1e-8 of the
    simplex are renormalized, and dof above NU_MAX is clamped.
    """
    comps = []
    p, q = model.components[0].p, model.components[0].q
    for h, c in enumerate(model.components):
        if not isinstance(c, CfustParams):
            c = CfustParams(**c) if isinstance(c, dict) else CfustParams(*c)
        if c.p != p or c.q != q:
            raise DimensionMismatch(
                f"component {h + 1} has (p, q) = ({c.p}, {c.q}), expected ({p}, {q})"
            )
        if c.dof > NU_MAX:
            c = c.replace(dof=NU_MAX)
        comps.append(c)

    pro = np.asarray(model.pro, dtype=float)
    if np.any(~np.isfinite(pro)) or np.any(pro < 0):
        raise InvalidProportions(f"mixing proportions must be nonnegative, got {pro}")
    total = pro.sum()
    if abs(total - 1.0) > _PRO_RENORM_TOL:
        raise InvalidProportions(f"mixing proportions sum to {total}, not 1")
    if abs(total - 1.0) > _PRO_TOL:
        pro = pro / total
    return MixtureModel(tuple(comps), pro)


def count_free_params(g: int, p: int, q: int) -> int:
    """Free parameters of a g-component FM-CFUST model: proportions, mu, delta, sigma, dof."""
    if min(g, p, q) < 1:
        raise ValueError("g, p and q must all be >= 1")
    return (g - 1) + g * (p + p * q + p * (p + 1) // 2 + 1)
