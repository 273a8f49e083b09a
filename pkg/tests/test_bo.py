import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import derivgp.bo as bo
from derivgp.bo import (AcquisitionSpec, BoConfig, InnerConfig, Surrogate, expected_improvement,
                        maximize_acquisition, run_bo, ucb)
from derivgp.dual import FactorizationFailed, ObservationSet
from derivgp.hyper import HyperSample, McmcConfig
from derivgp.kernels import DerivOrder
from derivgp.objectives import forrester_branin_1d, get_objective

FAST_MCMC = McmcConfig(n_samples=5, burn_in=60, thinning=2, step=(0.5, 0.5))
FAST_INNER = InnerConfig(n_candidates=256)


def test_ei_examples():
    assert expected_improvement(1.0, 0.0, 1.0, 0.01) == 0.0
    assert expected_improvement(1.0, 1.0, 1.0, 0.0) == pytest.approx(0.3989422804014327)
    assert expected_improvement(2.0, 0.0, 1.0, 0.5) == pytest.approx(0.5)
    # minimization mirrors maximization
    assert expected_improvement(-1.0, 0.7, -2.0, 0.1, "min") == pytest.approx(
        expected_improvement(1.0, 0.7, 2.0, 0.1, "max"))


@given(st.floats(-3, 0), st.floats(0, 3), st.floats(0, 3), st.floats(0, 0.5))
def test_ei_monotone_in_sd_below_incumbent(mean, sd1, sd2, xi):
    lo, hi = sorted((sd1, sd2))
    assert expected_improvement(mean, lo, 0.0, xi) <= expected_improvement(mean, hi, 0.0, xi) + 1e-15
    assert expected_improvement(mean, lo, 0.0, xi) >= 0


def test_ucb_examples():
    assert ucb(1.0, 2.0, 2.0) == 5.0
    assert ucb(1.3, 0.0, 2.0) == 1.3
    assert ucb(1.0, 2.0, 2.0, "min") == 3.0
    rng = np.random.default_rng(0)
    mean, sd = rng.standard_normal(50), rng.uniform(0, 1, 50)
    assert np.argmax(ucb(mean, sd, 1e-12)) == np.argmax(mean)


def test_acquisition_spec_validation():
    with pytest.raises(ValueError):
        AcquisitionSpec(ucb_kappa=0.0)
    with pytest.raises(ValueError):
        AcquisitionSpec(ei_xi=-1.0)
    assert AcquisitionSpec("ei").kind is bo.AcqKind.EI


def test_maximize_planted_point():
    target = np.array([0.31, -1.27])
    x = maximize_acquisition(lambda X: -np.linalg.norm(X - target, axis=1),
                             [[-2, 2], [-2, 2]], rng=0)
    assert np.linalg.norm(x - target) <= 1e-3


def test_maximize_quadratic_bowl():
    A = np.array([[2.0, 0.6], [0.6, 1.0]])
    c = np.array([0.4, 0.9])
    x = maximize_acquisition(lambda X: -np.einsum("ni,ij,nj->n", X - c, A, X - c),
                             [[-1, 3], [-2, 2]], rng=1)
    assert np.linalg.norm(x - c) <= 1e-3


def test_maximize_constant_stays_inside():
    bounds = np.array([[0.0, 1.0], [5.0, 6.0]])
    x = maximize_acquisition(lambda X: np.zeros(len(X)), bounds, rng=2)
    assert np.all(x > bounds[:, 0]) and np.all(x < bounds[:, 1])


def test_maximize_boundary_optimum_strictly_inside():
    bounds = np.array([[0.0, 1.0]])
    x = maximize_acquisition(lambda X: X[:, 0], bounds, rng=3)
    assert 0.999 < x[0] < 1.0


def test_maximize_deterministic_and_scale_invariant():
    def acq(X):
        return np.sin(3 * X[:, 0]) * np.cos(2 * X[:, 1])
    b = [[-2, 2], [-2, 2]]
    x1 = maximize_acquisition(acq, b, rng=5)
    x2 = maximize_acquisition(acq, b, rng=5)
    x3 = maximize_acquisition(lambda X: 7.5 * acq(X), b, rng=5)
    np.testing.assert_array_equal(x1, x2)
    np.testing.assert_array_equal(x1, x3)


def test_config_validation():
    with pytest.raises(ValueError):
        BoConfig(n_init=0)
    with pytest.raises(ValueError):
        BoConfig(budget=2, n_init=3)
    with pytest.raises(ValueError):
        BoConfig(bounds=[[1.0, 0.0]])


def test_budget_equal_to_init():
    obj = get_objective("branin")
    trace = run_bo(obj, BoConfig(budget=3, n_init=3, seed=4))
    assert len(trace.records) == 3
    assert all(r.phase == "init" for r in trace.records)


def _cfg(**kw):
    base = dict(budget=10, mcmc=FAST_MCMC, warm_burn_in=10, inner=FAST_INNER, seed=0)
    base.update(kw)
    return BoConfig(**base)


def test_forrester_hessian_finds_global_basin():
    obj = get_objective("forrester1d")
    cfg = _cfg(budget=8, level=DerivOrder.HESSIAN, acquisition=AcquisitionSpec("ei"),
               backend="dual", seed=2)
    trace = run_bo(obj, cfg)
    # global basin: left of the local maximum separating the two minima
    u = np.linspace(-0.015, 0.886, 2001)
    ridge = u[np.argmax([forrester_branin_1d(v)[0] for v in u])]
    assert trace.records[-1].best_x[0] < ridge
    assert trace.best_values[-1] - obj.optimum_value < 1.0


def test_trace_invariants():
    obj = get_objective("branin")
    trace = run_bo(obj, _cfg(level=DerivOrder.GRADIENT, seed=1))
    best = trace.best_values
    assert np.all(np.diff(best) <= 0)  # minimization: incumbent never worsens
    dist = trace.distances
    assert np.all(np.diff(np.minimum.accumulate(dist)) <= 0)
    bo_recs = [r for r in trace.records if r.phase == "bo"]
    assert all(r.backend in ("dual", "spectral", "dual+spectral") for r in bo_recs)
    assert all(r.grad is not None and r.hess is None for r in trace.records)


def test_plain_level_has_no_derivatives():
    obj = get_objective("branin")
    trace = run_bo(obj, _cfg(budget=5, level=DerivOrder.VALUE))
    assert all(r.grad is None and r.hess is None for r in trace.records)


def test_reproducible():
    obj = get_objective("rosenbrock")
    a = run_bo(obj, _cfg(budget=6, seed=9))
    b = run_bo(obj, _cfg(budget=6, seed=9))
    np.testing.assert_array_equal([r.x for r in a.records], [r.x for r in b.records])
    np.testing.assert_array_equal(a.best_values, b.best_values)


def test_stop_within_tolerance():
    obj = get_objective("branin")
    trace = run_bo(obj, _cfg(budget=40, level=DerivOrder.HESSIAN, stop_within=5.0))
    assert len(trace.records) < 40
    assert abs(trace.best_values[-1] - obj.optimum_value) <= 5.0


def test_maximization_objective_keeps_sign():
    from derivgp.objectives import Objective
    obj = Objective("bump", 1, [[-2, 2]], lambda x: (-(x[0] - 0.5) ** 2, np.array([-2 * (x[0] - 0.5)]),
                                                     np.array([[-2.0]])),
                    np.array([[0.5]]), 0.0, direction="max")
    trace = run_bo(obj, _cfg(budget=8, level=DerivOrder.HESSIAN))
    assert np.all(np.diff(trace.best_values) >= 0)
    assert trace.best_values[-1] > -1e-2


def test_factorization_failure_aborts_with_diagnostic(monkeypatch):
    def boom(*a, **k):
        raise FactorizationFailed("forced")
    monkeypatch.setattr(bo, "fit_rescaled", boom)
    obj = get_objective("branin")
    trace = run_bo(obj, _cfg(budget=6, backend="dual"))
    assert trace.failed and "forced" in trace.message
    assert len(trace.records) == 3


def test_dual_and_spectral_select_same_point():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (4, 1))
    # values only: the rescaled dual fit scales derivative noise by powers of delta
    obs = ObservationSet(X, np.sin(3 * X[:, 0]), None, None, 1e-4)
    samples = [HyperSample(1.0, 0.6, 1e-4, 0.0), HyperSample(1.3, 0.8, 1e-4, 0.0)]
    cand = np.linspace(-1, 1, 401)[:, None]
    acq = {}
    for backend in ("dual", "spectral"):
        cfg = BoConfig(bounds=[[-1, 1]], backend=backend, noise_var=1e-4, spectral_t=8.0)
        sur = Surrogate(obs, samples, cfg, span=2.0)
        assert set(sur.backends) == {backend}
        acq[backend] = sur.acquisition(float(obs.f.max()))(cand)
    assert np.max(np.abs(acq["dual"] - acq["spectral"])) <= 1e-6
    assert np.argmax(acq["dual"]) == np.argmax(acq["spectral"])


def test_auto_backend_threshold():
    obs = ObservationSet([[0.0], [0.5]], [0.1, 0.2], noise_var=1e-6)
    cfg = BoConfig(bounds=[[-1, 1]], backend="auto", spectral_threshold=0.25)
    sur = Surrogate(obs, [HyperSample(1.0, 0.2, 1e-6, 0.0), HyperSample(1.0, 0.9, 1e-6, 0.0)],
                    cfg, span=2.0)
    assert sur.backends == ["dual", "spectral"]
