import numpy as np
import pytest

from spmedoe.config import DesignConfig
from spmedoe.design import (CONTINUE, STOP_MAX, STOP_PLATEAU, STOP_THRESHOLD, DesignConstraints,
                            StaticLinearDesignModel, campaign_stopping, design_full,
                            design_suboptimal)
from spmedoe.errors import ConfigError, InfeasibleError
from spmedoe.sensitivity import (PerturbedSpme, SpmeOutputModel, covariance_approx,
                                 fisher_matrix)

SIGMA2 = 0.09e-6


def static_constraints(n=20, M=1):
    return DesignConstraints(i_max=2.0, v_min=-1e3, v_max=1e3, horizon=5.0 * n, t_s=5.0, M=M)


@pytest.mark.parametrize("start_amplitude", [0.5, 0.0])
def test_static_model_saturates_input(start_amplitude):
    """y = phi u: trace = sigma^2 / (c^2 sum u^2), minimised at |u| = I_max everywhere."""
    c, n = 0.7, 20
    cons = static_constraints(n)
    dm = StaticLinearDesignModel([c], [1.0], 1e-3)
    opts = DesignConfig(start_amplitude=start_amplitude, seed=3, multistart=1 if start_amplitude else 2)
    res = design_full(dm, [1.0], None, cons, SIGMA2, options=opts)
    np.testing.assert_allclose(np.abs(res.inputs), cons.i_max, rtol=1e-9)
    optimum = SIGMA2 / (c ** 2 * n * cons.i_max ** 2)
    assert res.predicted_trace == pytest.approx(optimum, rel=1e-2)


@pytest.mark.parametrize("kwargs", [dict(horizon=0.0), dict(horizon=-5.0), dict(horizon=12.0),
                                    dict(M=3), dict(i_max=0.0), dict(v_min=4.4)])
def test_invalid_constraints(kwargs):
    base = dict(i_max=1.0, v_min=2.5, v_max=4.35, horizon=200.0, t_s=5.0, M=4)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        DesignConstraints(**base)


@pytest.fixture(scope="module")
def spme(paper):
    model = SpmeOutputModel(paper.cell, paper.phi_true, 5.0)
    phi0 = paper.phi_init.as_array() / paper.phi_true.as_array()
    d = paper.design
    i_max = d.i_max_c * paper.cell.one_c_current

    def cons(horizon, M):
        return DesignConstraints(i_max, d.v_min, d.v_max, horizon, 5.0, M)
    return model, phi0, cons


@pytest.fixture(scope="module")
def sub200(paper, spme):
    model, phi0, cons = spme
    return design_suboptimal(model, phi0, paper.x0.as_array(), cons(200.0, 4), SIGMA2,
                             options=paper.design)


def test_single_block_equals_full(paper, spme):
    model, phi0, cons = spme
    c = cons(100.0, 1)
    a = design_full(model, phi0, paper.x0.as_array(), c, SIGMA2, options=paper.design)
    b = design_suboptimal(model, phi0, paper.x0.as_array(), c, SIGMA2, options=paper.design)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert a.predicted_trace == b.predicted_trace


def test_block_traces_non_increasing(sub200):
    traces = [b["trace"] for b in sub200.blocks]
    assert len(traces) == 4
    assert all(t2 <= t1 for t1, t2 in zip(traces, traces[1:]))


def test_inputs_within_bounds(sub200, spme):
    _, _, cons = spme
    assert np.all(np.abs(sub200.inputs) <= cons(200.0, 4).i_max)
    assert sub200.inputs.size == 40


def test_voltage_within_window(paper, spme, sub200):
    model, phi0, _ = spme
    y = model.outputs(paper.x0, sub200.inputs, phi0)
    assert sub200.feasible
    assert y.min() >= paper.design.v_min - 1e-6 and y.max() <= paper.design.v_max + 1e-6


def test_predicted_trace_recomputed_from_scratch(paper, spme, sub200):
    model, phi0, _ = spme
    S, _ = PerturbedSpme(model, phi0, paper.design.h).sensitivity(paper.x0.as_array(), sub200.inputs)
    np.testing.assert_allclose(S, sub200.sensitivity, rtol=1e-9, atol=1e-9 * np.abs(S).max())
    F = sum(fisher_matrix(S[k:k + 10], SIGMA2) for k in range(0, 40, 10))
    assert covariance_approx(F).trace == pytest.approx(sub200.predicted_trace, rel=1e-8)
    assert sub200.predicted_trace > 0


def test_prior_information_lowers_trace(paper, spme, sub200):
    model, phi0, cons = spme
    res = design_suboptimal(model, phi0, paper.x0.as_array(),
                            cons(50.0, 1), SIGMA2, prior_blocks=[sub200.sensitivity],
                            options=paper.design)
    assert res.predicted_trace <= sub200.predicted_trace


def test_infeasible_start(paper, spme):
    model, phi0, _ = spme
    cons = DesignConstraints(paper.cell.one_c_current, 2.5, 3.5, 50.0, 5.0, 1)
    with pytest.raises(InfeasibleError):
        design_full(model, phi0, paper.x0.as_array(), cons, SIGMA2, options=paper.design)


def hist(*traces, variances=(1.0,)):
    return [{"trace": t, "variances": list(variances)} for t in traces]


def test_stopping_rules():
    assert campaign_stopping(hist(*range(10, 0, -1)), n_max=10) == STOP_MAX
    assert campaign_stopping(hist(5.0, 4.0), n_max=10) == CONTINUE
    assert campaign_stopping(hist(5.0, variances=(1e-4, 2e-4)), variance_threshold=1e-3) == STOP_THRESHOLD
    assert campaign_stopping(hist(1.0, 0.999), plateau_eps=0.01) == STOP_PLATEAU
    assert campaign_stopping(hist(1.0, 0.5), plateau_eps=0.01) == CONTINUE
    with pytest.raises(ValueError):
        campaign_stopping([])
