import math

import numpy as np
import pytest

from spmedoe.config import load_preset
from spmedoe.model import kappa_electrolyte, ocp_negative, ocp_positive
from spmedoe.p2d import (CATHODE, SEPARATOR, P2dPlant, P2dState, electrolyte_lithium,
                         p2d_consistent, p2d_equilibrium, p2d_mesh, p2d_residual, p2d_step,
                         p2d_voltage, solid_lithium)
from spmedoe.simulate import simulate


@pytest.fixture(scope="module")
def run():
    return load_preset("p2d_example")


@pytest.fixture(scope="module")
def cfg(run):
    return run.p2d


@pytest.fixture(scope="module")
def eq(run, cfg):
    x0 = run.x0
    return p2d_equilibrium(cfg, x0.cavg_p, x0.cavg_n, float(np.mean(x0.ce)))


def residual(state, cfg, current=None, rate=None):
    I = state.current if current is None else current
    return p2d_residual(state.differential(), state.algebraic(), I, cfg, rate)


def test_equilibrium_residual_is_exactly_zero(eq, cfg):
    assert np.all(residual(eq, cfg) == 0.0)


def test_separator_flux_is_flagged(eq, cfg):
    mesh = p2d_mesh(cfg)
    st = eq.copy()
    sep = np.flatnonzero(mesh.layer == SEPARATOR)
    st.j[sep[2]] = 1e-6
    r = residual(st, cfg).reshape(mesh.size, mesh.block)
    assert r[sep[2], mesh.n_r + 3] == 1e-6
    others = np.delete(r[:, mesh.n_r + 3], sep[2])
    assert np.all(others == 0.0)


def reassemble_algebraic(st: P2dState, cfg):
    """Loop-by-loop assembly of the potential and kinetics equations."""
    c, prm = cfg.cell, cfg.params
    nx = (cfg.n_x[0], cfg.n_x[1], cfg.n_x[2])
    L = (c.L_p, c.L_s, c.L_n)
    eps = (c.eps_p, c.eps_s, c.eps_n)
    layer, dx, porosity = [], [], []
    for k in range(3):
        for _ in range(nx[k]):
            layer.append(k)
            dx.append(L[k] / nx[k])
            porosity.append(eps[k])
    N, nr = len(layer), cfg.n_r
    F, R, T, A, I = c.faraday_constant, c.gas_constant, c.temperature, c.electrode_area, st.current
    beta = 2 * R * T / F
    a = {0: 3 * (1 - c.epsf_p - c.eps_p) / c.Rp_p, 2: 3 * (1 - c.epsf_n - c.eps_n) / c.Rp_n}
    rad = {0: c.Rp_p, 2: c.Rp_n}
    Ds = {0: prm.Dsp, 2: prm.Dsn}
    sigma = {0: cfg.sigma_p * c.eps_p ** prm.p, 2: cfg.sigma_n * c.eps_n ** prm.p}

    def cond(i, value):
        return 1.0 / (dx[i] / (2 * value(i)) + dx[i + 1] / (2 * value(i + 1)))

    rs, re, rj = np.zeros(N), np.zeros(N), np.zeros(N)
    for i in range(N):
        lay = layer[i]
        if lay == SEPARATOR:
            rs[i] = st.phis[i]
        else:
            def current_through(face_left):
                # solid current at the left (True) or right face of volume i
                nb = i - 1 if face_left else i + 1
                if nb < 0 or nb >= N:
                    return -I / A
                if layer[nb] != lay:
                    return 0.0
                lo, hi = min(i, nb), max(i, nb)
                return -cond(lo, lambda q: sigma[lay]) * (st.phis[hi] - st.phis[lo])
            rs[i] = (current_through(False) - current_through(True)) / dx[i] - a[lay] * F * st.j[i]

        def kap(q):
            return porosity[q] ** prm.p * kappa_electrolyte(st.ce[q], c.kappa_coeffs)

        def ie(lo):
            return -cond(lo, kap) * (st.phie[lo + 1] - st.phie[lo]
                                     - beta * (1 - prm.t_plus) * (math.log(st.ce[lo + 1]) - math.log(st.ce[lo])))
        right = ie(i) if i < N - 1 else 0.0
        left = ie(i - 1) if i > 0 else 0.0
        re[i] = (right - left) / dx[i] + (a[lay] * F * st.j[i] if lay != SEPARATOR else 0.0)
        if i == N - 1:
            re[i] = st.phie[i]

        if lay == SEPARATOR:
            rj[i] = st.j[i]
        else:
            cmax = c.cmax_p if lay == CATHODE else c.cmax_n
            css = st.cs[i, -1] + 0.5 * (1.0 / nr) * rad[lay] * st.j[i] / Ds[lay]
            U = (ocp_positive(css / cmax, c.ocp_positive) if lay == CATHODE
                 else ocp_negative(css / cmax, c.ocp_negative))
            k = prm.kp if lay == CATHODE else prm.kn
            i0 = k * math.sqrt(st.ce[i] * css * (cmax - css))
            rj[i] = st.j[i] + 2 * i0 * math.sinh((st.phis[i] - st.phie[i] - U) / beta)
    return rs, re, rj


def random_state(eq, cfg, seed):
    rng = np.random.default_rng(seed)
    mesh = p2d_mesh(cfg)
    st = eq.copy()
    elec = mesh.layer != SEPARATOR
    st.cs[elec] *= 1 + 0.02 * rng.standard_normal(st.cs[elec].shape)
    st.ce = st.ce * (1 + 0.1 * rng.standard_normal(st.ce.size))
    st.phis[elec] += 0.01 * rng.standard_normal(elec.sum())
    st.phie += 0.01 * rng.standard_normal(st.phie.size)
    st.j[elec] = 1e-6 * rng.standard_normal(elec.sum())
    st.current = float(rng.uniform(-30, 30))
    return st


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_algebraic_residual_matches_reassembly(eq, cfg, seed):
    st = random_state(eq, cfg, seed)
    mesh = p2d_mesh(cfg)
    r = residual(st, cfg).reshape(mesh.size, mesh.block)
    rs, re, rj = reassemble_algebraic(st, cfg)
    n = mesh.n_r
    for got, want in ((r[:, n + 1], rs), (r[:, n + 2], re), (r[:, n + 3], rj)):
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10 * np.abs(want).max())


def test_zero_current_step_keeps_equilibrium(eq, cfg):
    st = p2d_step(eq, 0.0, 5.0, cfg)
    np.testing.assert_allclose(st.cs, eq.cs, rtol=1e-12)
    np.testing.assert_allclose(st.ce, eq.ce, rtol=1e-12)
    np.testing.assert_allclose(st.phis, eq.phis, atol=1e-10)
    np.testing.assert_allclose(st.phie, eq.phie, atol=1e-10)


@pytest.fixture(scope="module")
def discharge(eq, cfg, run):
    st = p2d_consistent(eq, run.cell.one_c_current, cfg)
    states = [st]
    for _ in range(10):
        states.append(p2d_step(states[-1], run.cell.one_c_current, 5.0, cfg))
    return states


def test_electrolyte_lithium_conserved(discharge, cfg):
    total = np.array([electrolyte_lithium(s, cfg) for s in discharge])
    assert np.max(np.abs(np.diff(total))) <= 1e-8 * total[0]


def test_solid_lithium_changes_only_through_flux(discharge, cfg):
    mesh = p2d_mesh(cfg)
    elec = mesh.layer != SEPARATOR
    for a, b in zip(discharge, discharge[1:]):
        # backward Euler: d/dt (R^3 sum c rho_vol) = R^2 j (flux into the particle), new state
        change = solid_lithium(b, cfg) - solid_lithium(a, cfg)
        expect = 5.0 * mesh.R ** 2 * b.j
        np.testing.assert_allclose(change[elec], expect[elec], rtol=1e-6,
                                   atol=1e-9 * np.abs(expect[elec]).max())


def test_discharge_lowers_voltage(discharge, cfg):
    v = [p2d_voltage(s, cfg) for s in discharge]
    assert all(b < a for a, b in zip(v[1:], v[2:]))


def test_voltage_gauge_invariance(discharge, cfg):
    st = discharge[-1].copy()
    v = p2d_voltage(st, cfg)
    st.phis = st.phis + 0.37
    st.phie = st.phie + 0.37
    assert p2d_voltage(st, cfg) == pytest.approx(v, abs=1e-12)


def test_equilibrium_voltage_is_ocv(eq, cfg, run):
    c = run.cell
    x0 = run.x0
    ocv = ocp_positive(x0.cavg_p / c.cmax_p, c.ocp_positive) - ocp_negative(x0.cavg_n / c.cmax_n, c.ocp_negative)
    assert p2d_voltage(eq, cfg) == pytest.approx(ocv, abs=1e-12)


def test_c10_discharge_close_to_spme(run):
    """1000 s at C/10: plant and SPMe with shared parameters within 10 mV RMS."""
    u = np.full(200, 0.1 * run.cell.one_c_current)
    y = P2dPlant(run, 5.0).run_from_initial(u)
    ys = simulate(run.x0, u, run.phi_true, run.cell, 5.0).outputs
    assert np.sqrt(np.mean((y - ys) ** 2)) <= 10e-3
