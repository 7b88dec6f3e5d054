import math

import numpy as np
import pytest

from cfustmix import CfustParams, MixtureModel
from cfustmix.density import loglik
from cfustmix.em import FitOptions, check_convergence, e_step, fit
from cfustmix.errors import ComponentStarvation, DimensionMismatch, InputError
from cfustmix.params import NU_MAX, NU_MIN, count_free_params
from cfustmix.sampling import RngHandle, sample_mixture

from conftest import VERSICOLOR_PUBLISHED, three_component_model


def test_aitken_continue_example():
    assert not check_convergence([-100.0, -90.0, -85.0], options=FitOptions(eps=1e-6))


def test_aitken_stops_on_geometric_tail():
    ll = [-10.0 - 0.5**k for k in range(40)]
    assert check_convergence(ll, options=FitOptions(eps=1e-6))


def test_aitken_skips_degenerate_steps():
    opts = FitOptions(eps=1.0)
    assert not check_convergence([-10.0, -10.0, -10.0], options=opts)
    assert not check_convergence([-10.0, -11.0, -12.0], options=opts)
    assert not check_convergence([-10.0, -9.0, -7.0], options=opts)


def test_likelihood_rule():
    opts = FitOptions(convergence="likelihood", eps=1e-6)
    assert check_convergence([-1000.0, -999.9999999], options=opts)
    assert not check_convergence([-1000.0, -999.0], options=opts)


def test_parameter_rule():
    opts = FitOptions(convergence="parameters", eps=1e-6)
    m = three_component_model()
    assert check_convergence([0, 0], [m, m], options=opts)
    assert not check_convergence([0, 0], [np.array([1.0, 0.0]), np.array([1.1, 0.0])], options=opts)
    # near-zero coordinates use absolute change
    assert check_convergence([0, 0], [np.array([1.0, 0.0]), np.array([1.0, 5e-7])], options=opts)


def test_options_validation():
    with pytest.raises(InputError):
        FitOptions(convergence="bogus")
    with pytest.raises(InputError):
        FitOptions(eps=0.0)


def test_all_known_is_noop(versicolor):
    model = MixtureModel.single(VERSICOLOR_PUBLISHED)
    res = fit(versicolor, 1, q=2, initial=model, known=["pro", "mu", "sigma", "delta", "dof"])
    assert res.model.allclose(model)
    assert res.iterations == 0
    assert res.loglik == pytest.approx(loglik(versicolor, model), abs=1e-12)


@pytest.fixture(scope="module")
def versicolor_fit(versicolor):
    return fit(versicolor, 1, q=2)


def test_fit_is_monotone(versicolor_fit):
    trace = versicolor_fit.loglik_trace
    assert trace[-1] >= trace[0]
    assert np.all(np.diff(trace) >= -1e-6 * np.abs(trace[1:]))


def test_fit_result_consistency(versicolor, versicolor_fit):
    res = versicolor_fit
    m = count_free_params(1, 2, 2)
    assert res.n_params == m == 10
    assert res.aic - res.bic == pytest.approx(2 * m - m * math.log(50), abs=1e-9)
    assert res.loglik == pytest.approx(loglik(versicolor, res.model), abs=1e-9)
    assert np.all(res.clusters == 1)
    c = res.model.components[0]
    assert NU_MIN <= c.dof <= NU_MAX
    assert np.all(np.linalg.eigvalsh(c.sigma) > 0)


def test_fixed_point(versicolor, versicolor_fit):
    res = fit(versicolor, 1, q=2, initial=versicolor_fit.model, options=FitOptions(itmax=1))
    assert abs(res.loglik_trace[-1] - res.loglik_trace[0]) < 1e-2
    # the converged fit moves slowly, so one more step changes little relative to the run
    assert abs(res.loglik_trace[-1] - res.loglik_trace[0]) < abs(versicolor_fit.loglik_trace[-1] - versicolor_fit.loglik_trace[0])


def test_deterministic(versicolor):
    a = fit(versicolor, 1, q=2, options=FitOptions(itmax=5))
    b = fit(versicolor, 1, q=2, options=FitOptions(itmax=5))
    np.testing.assert_array_equal(a.loglik_trace, b.loglik_trace)


def test_mixture_fit_from_truth_stays_near_truth():
    model = three_component_model()
    Y = sample_mixture([150, 150, 300], model, RngHandle(11))
    bayes = np.mean(e_step(Y.values, model).z.argmax(axis=1) + 1 == Y.labels)
    res = fit(Y.values, 3, initial=model, options=FitOptions(itmax=30))
    trace = res.loglik_trace
    assert np.all(np.diff(trace) >= -1e-6 * np.abs(trace[1:]))
    np.testing.assert_allclose(res.tau.sum(axis=1), 1.0, atol=1e-10)
    assert np.mean(res.clusters == Y.labels) >= bayes - 0.02
    for new, old in zip(res.model.components, model.components):
        np.testing.assert_allclose(new.mu, old.mu, atol=1.0)


def test_verbose_trace_format(versicolor):
    lines = []
    fit(versicolor, 1, q=2, options=FitOptions(itmax=2, verbose=True), log=lines.append)
    assert any(l.strip().startswith("Iteration 1 : loglik =") for l in lines)


def test_initial_dimension_checks(versicolor):
    with pytest.raises(DimensionMismatch):
        fit(versicolor, 2, initial=MixtureModel.single(VERSICOLOR_PUBLISHED))
    with pytest.raises(InputError):
        fit(versicolor, 1, q=1, constraint="diagonal")


def test_starvation_reports_partial_trace():
    rng = np.random.default_rng(0)
    Y = np.vstack([rng.normal(size=(40, 2)), [[50.0, 50.0], [51.0, 50.5]]])
    far = CfustParams(np.array([50.5, 50.25]), 0.1 * np.eye(2), np.zeros((2, 2)), 10.0)
    near = CfustParams(np.zeros(2), np.eye(2), np.zeros((2, 2)), 10.0)
    initial = MixtureModel((near, far), np.array([0.95, 0.05]))
    with pytest.raises(ComponentStarvation) as info:
        fit(Y, 2, initial=initial)
    assert info.value.partial.loglik_trace.size >= 1
