import math

import numpy as np
import pytest
from scipy import special

from cfustmix import CfustParams, MixtureModel
from cfustmix.density import loglik
from cfustmix.em import e_step
from cfustmix.errors import DimensionMismatch
from cfustmix.sampling import RngHandle, sample_cfust, sample_mixture

from conftest import random_params, three_component_model
from oracles import hierarchy_estep


def _single(c, y):
    return e_step(np.atleast_2d(y), MixtureModel.single(c))


def test_symmetric_closed_forms():
    rng = np.random.default_rng(0)
    for p in (1, 2, 3):
        c = random_params(rng, p, p, delta_scale=0.0)
        Y = sample_cfust(10, c, RngHandle(p))
        cache = _single(c, Y)
        nu = c.dof
        diff = Y - c.mu
        d = np.einsum("ni,ij,nj->n", diff, np.linalg.inv(c.sigma), diff)
        np.testing.assert_allclose(cache.w[:, 0], (nu + p) / (nu + d), rtol=1e-10)
        e1 = special.digamma((nu + p) / 2) - np.log((nu + d) / 2)
        np.testing.assert_allclose(cache.e1[:, 0], e1, rtol=1e-10, atol=1e-10)


def test_single_component_posteriors_are_one():
    rng = np.random.default_rng(1)
    c = random_params(rng, 2, 2)
    cache = _single(c, sample_cfust(20, c, RngHandle(0)))
    assert np.all(cache.z == 1.0)


def test_cache_invariants():
    model = three_component_model()
    Y = sample_mixture(200, model, RngHandle(3)).values
    cache = e_step(Y, model)
    np.testing.assert_allclose(cache.z.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(cache.w > 0)
    assert all(np.all(np.isfinite(a)) for a in (cache.z, cache.w, cache.e1, cache.e2, cache.e3))
    np.testing.assert_allclose(cache.e3, np.swapaxes(cache.e3, -1, -2), atol=1e-12)
    # e3/w - (e2/w)(e2/w)^T is a conditional covariance
    owned = cache.z > 1e-6
    for j, h in zip(*np.nonzero(owned)):
        w, e2, e3 = cache.w[j, h], cache.e2[j, h], cache.e3[j, h]
        cov = e3 / w - np.outer(e2, e2) / w**2
        assert np.linalg.eigvalsh(cov).min() > -1e-6
    assert cache.loglik == pytest.approx(loglik(Y, model), abs=1e-6)


def test_far_outlier_keeps_estep_finite():
    model = three_component_model()
    Y = np.array([[17.0, 19.0], [1e200, -1e200]])
    cache = e_step(Y, model)
    np.testing.assert_allclose(cache.z[1], model.pro)
    assert np.all(np.isfinite(cache.w)) and np.all(np.isfinite(cache.e3))


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        e_step(np.ones((4, 3)), three_component_model())


@pytest.mark.parametrize("case", range(8))
def test_matches_hierarchy_oracle(case):
    rng = np.random.default_rng(100 + case)
    k = 1 + case % 2
    c = random_params(rng, k, k)
    y = sample_cfust(1, c, RngHandle(case))[0]
    cache = _single(c, y)
    ref = hierarchy_estep(y, c, seed=case)
    assert cache.w[0, 0] == pytest.approx(ref["w"], abs=1e-3)
    np.testing.assert_allclose(cache.e2[0, 0], ref["e2"], atol=1e-3)
    np.testing.assert_allclose(cache.e3[0, 0], ref["e3"], atol=1e-3)


def test_oracle_log_w_agrees_in_symmetric_case():
    c = CfustParams(np.zeros(2), np.eye(2), np.zeros((2, 2)), 5.0)
    y = np.array([0.7, -1.2])
    ref = hierarchy_estep(y, c, seed=1)
    assert _single(c, y).e1[0, 0] == pytest.approx(ref["e1"], abs=1e-3)


def test_bivariate_matches_hierarchy_quadrature():
    from scipy import integrate, stats

    c = CfustParams(np.array([0.5, -0.3]), np.array([[1.2, 0.3], [0.3, 0.8]]), np.array([[1.0, -0.4], [0.6, 1.5]]), 7.0)
    y = np.array([1.4, 0.9])
    p = q = 2
    sig_inv = np.linalg.inv(c.sigma)
    joint = stats.multivariate_t(np.zeros(4), np.block([[c.sigma, np.zeros((2, 2))], [np.zeros((2, 2)), np.eye(2)]]), df=c.dof)

    def integral(fn):
        def f(u2, u1):
            u = np.array([u1, u2])
            r = y - c.mu - c.delta @ u
            wbar = (c.dof + p + q) / (c.dof + r @ sig_inv @ r + u @ u)
            return joint.pdf(np.concatenate([r, u])) * fn(wbar, u)

        return integrate.dblquad(f, 0, np.inf, 0, np.inf, epsabs=1e-14, epsrel=1e-11)[0]

    norm = integral(lambda wb, u: 1.0)
    cache = _single(c, y)
    assert cache.w[0, 0] == pytest.approx(integral(lambda wb, u: wb) / norm, abs=1e-8)
    for i in range(2):
        assert cache.e2[0, 0, i] == pytest.approx(integral(lambda wb, u: wb * u[i]) / norm, abs=1e-8)
        for j in range(2):
            assert cache.e3[0, 0, i, j] == pytest.approx(integral(lambda wb, u: wb * u[i] * u[j]) / norm, abs=1e-8)
