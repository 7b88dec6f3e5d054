import numpy as np
import pytest

from cfustmix import CfustParams, MixtureModel
from cfustmix.errors import DimensionMismatch, InvalidDof, InvalidProportions, NotPositiveDefinite
from cfustmix.params import NU_MAX, count_free_params, validate_mixture

from conftest import random_params


def _model(pro, sigma=np.eye(2), dof=4.0):
    c = CfustParams(np.zeros(2), sigma, np.eye(2), dof)
    return MixtureModel(tuple(c for _ in pro), np.array(pro))


def test_identity_scale_accepted():
    m = validate_mixture(_model([1.0]))
    assert m.g == 1 and m.p == 2 and m.q == 2


def test_proportions_off_simplex_rejected():
    with pytest.raises(InvalidProportions):
        validate_mixture(_model([0.5, 0.6]))
    with pytest.raises(InvalidProportions):
        validate_mixture(_model([1.5, -0.5]))


def test_near_simplex_proportions_renormalized():
    m = validate_mixture(_model([0.5, 0.5 + 5e-9]))
    assert abs(m.pro.sum() - 1.0) < 1e-15


def test_indefinite_sigma_rejected():
    with pytest.raises(NotPositiveDefinite):
        CfustParams(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]], np.eye(2), 4.0)


def test_sigma_symmetrized():
    c = CfustParams(np.zeros(2), [[2.0, 0.4], [0.2, 1.0]], np.eye(2), 4.0)
    np.testing.assert_array_equal(c.sigma, c.sigma.T)
    assert c.sigma[0, 1] == pytest.approx(0.3)


@pytest.mark.parametrize("dof", [0.0, -1.0, np.inf, np.nan])
def test_invalid_dof(dof):
    with pytest.raises(InvalidDof):
        CfustParams(np.zeros(1), [[1.0]], [[1.0]], dof)


def test_shape_checks():
    with pytest.raises(DimensionMismatch):
        CfustParams(np.zeros(2), np.eye(3), np.eye(2), 4.0)
    with pytest.raises(DimensionMismatch):
        CfustParams(np.zeros(2), np.eye(2), np.eye(3), 4.0)
    a = CfustParams(np.zeros(2), np.eye(2), np.eye(2), 4.0)
    b = CfustParams(np.zeros(2), np.eye(2), np.ones((2, 1)), 4.0)
    with pytest.raises(DimensionMismatch):
        validate_mixture(MixtureModel((a, b), np.array([0.5, 0.5])))


def test_dof_clamped_to_max():
    m = validate_mixture(_model([1.0], dof=1e6))
    assert m.components[0].dof == NU_MAX


def test_validate_idempotent():
    m = validate_mixture(_model([0.3, 0.7 + 1e-9]))
    assert validate_mixture(m).allclose(m)


def test_params_are_immutable():
    c = CfustParams(np.zeros(2), np.eye(2), np.eye(2), 4.0)
    with pytest.raises(ValueError):
        c.mu[0] = 1.0


def test_lambda_woodbury_identity():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p, q = rng.integers(1, 5, size=2)
        c = random_params(rng, p, q)
        der = c.derived
        direct = np.eye(q) - c.delta.T @ np.linalg.solve(der.omega, c.delta)
        np.testing.assert_allclose(der.lam, direct, rtol=1e-10, atol=1e-10 * np.abs(direct).max())
        np.testing.assert_allclose(der.omega, c.sigma + c.delta @ c.delta.T, rtol=1e-14)
        assert np.all(np.linalg.eigvalsh(der.lam) > 0)


@pytest.mark.parametrize("gpq, m", [((1, 2, 2), 10), ((1, 1, 1), 4), ((3, 4, 4), 95)])
def test_count_free_params(gpq, m):
    assert count_free_params(*gpq) == m


def test_count_free_params_brute_force():
    for g in range(1, 4):
        for p in range(1, 5):
            for q in range(1, 5):
                per = p + p * q + len([(i, j) for i in range(p) for j in range(i, p)]) + 1
                assert count_free_params(g, p, q) == g * per + g - 1


def test_count_free_params_monotone():
    for g, p, q in [(1, 1, 1), (2, 3, 1), (3, 2, 4)]:
        base = count_free_params(g, p, q)
        assert count_free_params(g + 1, p, q) > base
        assert count_free_params(g, p + 1, q) > base
        assert count_free_params(g, p, q + 1) > base
    with pytest.raises(ValueError):
        count_free_params(0, 1, 1)
