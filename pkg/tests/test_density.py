import math

import numpy as np
import pytest
from scipy import integrate, stats

from cfustmix import CfustParams, MixtureModel
from cfustmix.density import (
    LOG_DENSITY_FLOOR,
    cfust_logpdf,
    cfust_logpdf_batch,
    density_batch,
    loglik,
    mixture_logpdf,
    mixture_logpdf_batch,
)
from cfustmix.errors import DimensionMismatch
from cfustmix.mvt import mvt_logpdf

from conftest import VERSICOLOR_PUBLISHED, random_params, three_component_model


def _hierarchy_density(y, c):
    """2^q times the integral over u >= 0 of the joint (y, u) t density."""
    p, q = c.p, c.q
    joint = stats.multivariate_t(
        np.zeros(p + q), np.block([[c.sigma, np.zeros((p, q))], [np.zeros((q, p)), np.eye(q)]]), df=c.dof
    )
    f = lambda *u: joint.pdf(np.concatenate([y - c.mu - c.delta @ np.array(u[::-1]), u[::-1]]))
    if q == 1:
        val = integrate.quad(f, 0, np.inf, epsabs=1e-13, epsrel=1e-11)[0]
    else:
        val = integrate.dblquad(f, 0, np.inf, 0, np.inf, epsabs=1e-13, epsrel=1e-10)[0]
    return 2.0**q * val


def test_cauchy_special_case():
    c = CfustParams(np.zeros(1), [[1.0]], [[0.0]], 1.0)
    assert cfust_logpdf([0.0], c) == pytest.approx(math.log(1 / math.pi), abs=1e-14)


def test_symmetric_case_is_t():
    rng = np.random.default_rng(0)
    for p in (1, 2, 3):
        c = random_params(rng, p, p, delta_scale=0.0)
        x = rng.normal(size=p)
        a, b = cfust_logpdf(c.mu + x, c), cfust_logpdf(c.mu - x, c)
        assert a == pytest.approx(b, abs=1e-12)
        assert a == pytest.approx(mvt_logpdf(c.mu + x, c.mu, c.sigma, c.dof), abs=1e-12)


def test_gaussian_limit():
    rng = np.random.default_rng(1)
    c = random_params(rng, 2, 2, delta_scale=0.0).replace(dof=1e6)
    y = rng.normal(size=2)
    ref = stats.multivariate_normal(c.mu, c.sigma).logpdf(y)
    assert cfust_logpdf(y, c) == pytest.approx(ref, abs=1e-4)


def test_bivariate_skew_matches_hierarchy_integral():
    c = CfustParams(np.array([1.0, 2.0]), np.eye(2), np.array([[2.0, 1.0], [1.0, 2.0]]), 4.0)
    for y in (np.array([1.0, 2.0]), np.array([3.0, 4.5]), np.array([0.0, 3.0])):
        assert math.exp(cfust_logpdf(y, c)) == pytest.approx(_hierarchy_density(y, c), abs=1e-6)


def test_random_univariate_matches_hierarchy_integral():
    rng = np.random.default_rng(2)
    for _ in range(10):
        c = random_params(rng, 1, 1)
        y = c.mu + rng.normal(size=1) * 2
        assert math.exp(cfust_logpdf(y, c)) == pytest.approx(_hierarchy_density(y, c), rel=1e-7)


def test_mixture_single_component():
    rng = np.random.default_rng(3)
    c = random_params(rng, 2, 2)
    y = rng.normal(size=2)
    assert mixture_logpdf(y, MixtureModel.single(c)) == cfust_logpdf(y, c)


def test_mixture_identical_components():
    rng = np.random.default_rng(4)
    c = random_params(rng, 2, 1)
    y = rng.normal(size=2)
    m = MixtureModel((c, c), np.array([0.3, 0.7]))
    assert mixture_logpdf(y, m) == pytest.approx(cfust_logpdf(y, c), abs=1e-13)


def test_three_component_recomputation():
    model = three_component_model()
    y = np.array([17.0, 19.0])
    parts = sum(pi * math.exp(cfust_logpdf(y, c)) for pi, c in zip(model.pro, model.components))
    assert math.exp(mixture_logpdf(y, model)) == pytest.approx(parts, rel=1e-12)


def test_density_batch_consistency_and_row_permutation():
    model = three_component_model()
    rng = np.random.default_rng(5)
    Y = rng.normal(size=(15, 2)) * 5 + np.array([10.0, 15.0])
    dens = density_batch(Y, model)
    assert dens[0] == pytest.approx(math.exp(mixture_logpdf(Y[0], model)), rel=1e-12)
    perm = rng.permutation(15)
    np.testing.assert_allclose(density_batch(Y[perm], model), dens[perm], rtol=1e-13)
    with pytest.raises(DimensionMismatch):
        density_batch(np.ones((3, 3)), model)


def test_published_versicolor_loglik(versicolor):
    assert loglik(versicolor, MixtureModel.single(VERSICOLOR_PUBLISHED)) == pytest.approx(-32.309, abs=1e-3)


def _integrate_2d(c, box=40.0, n=301):
    # y = mu + s tan(theta) over the +-40-scale box, Gauss-Legendre in theta
    s = np.sqrt(np.diag(c.derived.omega))
    x, w = np.polynomial.legendre.leggauss(n)
    th = math.atan(box) * x
    wt = math.atan(box) * w / np.cos(th) ** 2
    T1, T2 = np.meshgrid(th, th, indexing="ij")
    Y = c.mu + np.column_stack([s[0] * np.tan(T1.ravel()), s[1] * np.tan(T2.ravel())])
    vals = np.exp(cfust_logpdf_batch(Y, c)).reshape(n, n)
    return s[0] * s[1] * wt @ vals @ wt


def test_normalization():
    rng = np.random.default_rng(6)
    for _ in range(5):
        c = random_params(rng, 1, 1)
        s = math.sqrt(c.derived.omega[0, 0])
        f = lambda t: math.exp(cfust_logpdf([t], c))
        pts = [c.mu[0]]
        total = integrate.quad(f, c.mu[0] - 40 * s, c.mu[0] + 40 * s, points=pts, limit=400)[0]
        assert total == pytest.approx(1.0, abs=1e-3)
    for _ in range(3):
        assert _integrate_2d(random_params(rng, 2, 2)) == pytest.approx(1.0, abs=1e-3)


def test_delta_column_permutation_invariance():
    rng = np.random.default_rng(7)
    for q in (2, 3):
        c = random_params(rng, 3, q)
        Y = c.mu + rng.normal(size=(5, 3))
        perm = rng.permutation(q)
        if np.array_equal(perm, np.arange(q)):
            perm = perm[::-1]
        a = cfust_logpdf_batch(Y, c)
        b = cfust_logpdf_batch(Y, c.replace(delta=c.delta[:, perm]))
        tol = 1e-12 if q <= 2 else 1e-4
        np.testing.assert_allclose(a, b, atol=tol)


def test_tail_decay_and_floor():
    rng = np.random.default_rng(8)
    c = random_params(rng, 2, 2)
    for _ in range(5):
        ray = rng.normal(size=2)
        vals = [cfust_logpdf(c.mu + r * ray, c) for r in (10.0, 100.0, 1e4, 1e8)]
        assert all(np.diff(vals) <= 0)
    far = cfust_logpdf(c.mu + 1e200, c)
    assert np.isfinite(far) and far >= LOG_DENSITY_FLOOR


def test_batch_matches_pointwise():
    model = three_component_model()
    Y = np.array([[17.0, 19.0], [5.0, 22.0], [6.0, 10.0]])
    batch = mixture_logpdf_batch(Y, model)
    for j in range(3):
        assert batch[j] == pytest.approx(mixture_logpdf(Y[j], model), abs=1e-13)
