import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spmedoe.config import EstimationConfig, ParameterVector
from spmedoe.errors import ConfigError
from spmedoe.estimation import ExperimentRecord, ScaledParams, estimate, scale, unscale
from spmedoe.sensitivity import (PerturbedSpme, SpmeOutputModel, covariance_approx,
                                 fisher_matrix)


def square_wave(cfg, seconds, half_period=50.0, amplitude=1.0):
    t = 5.0 * np.arange(int(seconds / 5))
    return amplitude * cfg.cell.one_c_current * np.where((t // half_period) % 2 == 0, 1.0, -1.0)


@pytest.fixture(scope="module")
def model(paper):
    return SpmeOutputModel(paper.cell, paper.phi_true, 5.0)


@pytest.fixture(scope="module")
def records(paper, model):
    ones = np.ones(7)
    out = []
    for k, (secs, hp) in enumerate([(1000, 50.0), (1000, 200.0)]):
        u = square_wave(paper, secs, hp)
        out.append(ExperimentRecord(u, model.outputs(paper.x0, u, ones), paper.x0.as_array(), 5.0,
                                    label=f"sq{k}"))
    return out


def test_scale_identity(paper):
    assert scale(paper.phi_true, paper.phi_true).values == (1.0,) * 7


def test_scaled_initial_guess(paper):
    s = scale(paper.phi_init, paper.phi_true)
    assert s.values[0] == pytest.approx(1.1075, abs=5e-5)


@given(st.lists(st.floats(1e-15, 1e3), min_size=7, max_size=7),
       st.lists(st.floats(1e-15, 1e3), min_size=7, max_size=7))
def test_round_trip(raw, ref):
    r, q = ParameterVector.from_array(raw), ParameterVector.from_array(ref)
    np.testing.assert_allclose(unscale(scale(r, q)).as_array(), raw, rtol=4e-16, atol=0)


def test_nonpositive_reference_is_config_error(paper):
    bad = ParameterVector.from_array(np.r_[0.0, paper.phi_true.as_array()[1:]])
    with pytest.raises(ConfigError):
        scale(paper.phi_true, bad)
    with pytest.raises(ConfigError):
        unscale(ScaledParams((1.0,) * 7, bad))


def test_record_validation():
    with pytest.raises(ValueError):
        ExperimentRecord(np.zeros(3), np.zeros(4), np.zeros(2), 5.0)
    with pytest.raises(ValueError):
        ExperimentRecord(np.zeros(3), np.zeros(3), np.zeros(2), 0.0)


def test_noiseless_recovery(paper, model, records):
    phi0 = scale(paper.phi_init, paper.phi_true)
    res = estimate(records, model, phi0)
    assert res.converged
    np.testing.assert_allclose(res.values, 1.0, atol=1e-3)
    assert res.cost <= res.initial_cost
    assert max(res.record_rms) < 1e-6


def test_permutation_invariance(paper, model, records):
    phi0 = scale(paper.phi_init, paper.phi_true)
    a = estimate(records, model, phi0).values
    b = estimate(records[::-1], model, phi0).values
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_active_bound(paper, model, records):
    # truth at 1.0; an upper bound of 0.95 on Dsn must be active at the solution
    lo = np.full(7, 0.1)
    hi = np.full(7, 10.0)
    hi[4] = 0.95
    res = estimate(records, model, np.full(7, 0.9), bounds=(lo, hi))
    assert res.values[4] == pytest.approx(0.95, abs=1e-9)


def test_cost_never_increases(paper, model, records):
    res = estimate(records[:1], model, np.ones(7), options=EstimationConfig(max_iter=2))
    assert res.cost <= res.initial_cost


def test_inverted_bounds_rejected(model, records):
    with pytest.raises(ConfigError):
        estimate(records, model, np.ones(7), bounds=(np.ones(7), np.ones(7)))


def test_no_records_rejected(model):
    with pytest.raises(ValueError):
        estimate([], model, np.ones(7))


@pytest.mark.slow
def test_noise_consistency_against_cramer_rao(paper, model, records):
    """Empirical variance over 50 noise draws is at least half the CRB."""
    sigma2 = 1e-6
    rec = records[0]
    S, y = PerturbedSpme(model, np.ones(7), 1e-3).sensitivity(rec.x0, rec.inputs)
    crb = covariance_approx(fisher_matrix(S, sigma2)).variances
    rng = np.random.default_rng(11)
    est = []
    for _ in range(50):
        noisy = ExperimentRecord(rec.inputs, y + rng.normal(0, np.sqrt(sigma2), y.size), rec.x0, 5.0)
        est.append(estimate([noisy], model, np.ones(7)).values)
    var = np.var(np.array(est), axis=0, ddof=1)
    assert np.all(var >= 0.5 * crb), var / crb
