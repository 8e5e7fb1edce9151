"""SPMe cell model: open-circuit potentials, electrolyte conductivity,
state derivative, surface concentrations and terminal voltage.

State layout (length ``4 + 3*n_el``)::

    [cavg_p, cavg_n, qavg_p, qavg_n, ce_1 ... ce_{3 n_el}]

with the electrolyte volumes ordered cathode -> separator -> anode.
A positive applied current discharges the cell.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import CellConfig, OcpSet, ParameterVector
from .errors import (DomainError, ModelValidityError, SaturationError,
                     SingularityError)

POLE_TOL = 1e-9
POSITIVE, NEGATIVE = "positive", "negative"


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def _check_stoichiometry(theta, name):
    if np.any(~np.isfinite(theta)) or np.any(theta <= 0.0) or np.any(theta > 1.0):
        bad = np.asarray(theta).ravel()
        bad = bad[~((bad > 0.0) & (bad <= 1.0))]
        raise DomainError(f"{name} outside (0, 1]: {bad[0]!r}")


# --------------------------------------------------------------------------
# open-circuit potentials

def ocp_positive(theta, ocp: OcpSet):
    """Cathode open-circuit potential [V].

    ``rational``: ratio of two even polynomials in theta (12 coefficients).
    ``tanh``: f1 + f2 tanh(f3 th + f4) + f5/(f6 - th)^f7 + f5 f8
    + f9 exp(f10 th^f11) + f12 exp(f13 (th + f14)).
    """
    th = np.asarray(theta, dtype=float)
    _check_stoichiometry(th, "theta_p")
    f = ocp.coeffs
    if ocp.kind == "rational":
        t2 = th * th
        num = f[0] + t2 * (f[1] + t2 * (f[2] + t2 * (f[3] + t2 * (f[4] + t2 * f[5]))))
        den = f[6] + t2 * (f[7] + t2 * (f[8] + t2 * (f[9] + t2 * (f[10] + t2 * f[11]))))
        if np.any(np.abs(den) < POLE_TOL):
            raise SingularityError("rational OCP denominator vanishes")
        u = num / den
    elif ocp.kind == "tanh":
        gap = _pole_gap(th, f)
        u = (f[0] + f[1] * np.tanh(f[2] * th + f[3]) + f[4] / gap ** f[6] + f[4] * f[7]
             + f[8] * np.exp(f[9] * th ** f[10]) + f[11] * np.exp(f[12] * (th + f[13])))
    else:
        raise DomainError(f"unknown positive OCP form {ocp.kind!r}")
    return _scalar_or_array(u, theta)


def _pole_gap(th, f):
    gap = f[5] - th
    if np.any(np.abs(gap) < POLE_TOL):
        raise SingularityError(f"theta_p within {POLE_TOL:g} of the OCP pole f6 = {f[5]!r}")
    if np.any(gap < 0) and float(f[6]) != int(f[6]):
        raise DomainError("theta_p beyond the OCP pole with a non-integer exponent")
    return gap


def ocp_positive_slope(theta, ocp: OcpSet):
    """d U_p / d theta."""
    th = np.asarray(theta, dtype=float)
    _check_stoichiometry(th, "theta_p")
    f = ocp.coeffs
    if ocp.kind == "rational":
        t2 = th * th
        num = f[0] + t2 * (f[1] + t2 * (f[2] + t2 * (f[3] + t2 * (f[4] + t2 * f[5]))))
        den = f[6] + t2 * (f[7] + t2 * (f[8] + t2 * (f[9] + t2 * (f[10] + t2 * f[11]))))
        dnum = 2 * th * (f[1] + t2 * (2 * f[2] + t2 * (3 * f[3] + t2 * (4 * f[4] + t2 * 5 * f[5]))))
        dden = 2 * th * (f[7] + t2 * (2 * f[8] + t2 * (3 * f[9] + t2 * (4 * f[10] + t2 * 5 * f[11]))))
        s = (dnum * den - num * dden) / (den * den)
    else:
        gap = _pole_gap(th, f)
        s = (f[1] * f[2] / np.cosh(f[2] * th + f[3]) ** 2
             + f[4] * f[6] * gap ** (-f[6] - 1.0)
             + f[8] * f[9] * f[10] * th ** (f[10] - 1.0) * np.exp(f[9] * th ** f[10])
             + f[11] * f[12] * np.exp(f[12] * (th + f[13])))
    return _scalar_or_array(s, theta)


def ocp_negative(theta, ocp: OcpSet):
    """Anode open-circuit potential [V].

    ``composite``: g1 + g2 th + g3 th^0.5 + g4/th + g5/th^1.5
    + g6 exp(g7 + g8 th) + g9 exp(g10 th + g11).
    ``exponential``: g1 + g2 exp(g3 th) + g4 exp(g5 th).
    """
    th = np.asarray(theta, dtype=float)
    _check_stoichiometry(th, "theta_n")
    g = ocp.coeffs
    if ocp.kind == "composite":
        u = (g[0] + g[1] * th + g[2] * np.sqrt(th) + g[3] / th + g[4] / th ** 1.5
             + g[5] * np.exp(g[6] + g[7] * th) + g[8] * np.exp(g[9] * th + g[10]))
    elif ocp.kind == "exponential":
        u = g[0] + g[1] * np.exp(g[2] * th) + g[3] * np.exp(g[4] * th)
    else:
        raise DomainError(f"unknown negative OCP form {ocp.kind!r}")
    return _scalar_or_array(u, theta)


def ocp_negative_slope(theta, ocp: OcpSet):
    th = np.asarray(theta, dtype=float)
    _check_stoichiometry(th, "theta_n")
    g = ocp.coeffs
    if ocp.kind == "composite":
        s = (g[1] + 0.5 * g[2] / np.sqrt(th) - g[3] / th ** 2 - 1.5 * g[4] / th ** 2.5
             + g[5] * g[7] * np.exp(g[6] + g[7] * th) + g[8] * g[9] * np.exp(g[9] * th + g[10]))
    else:
        s = g[1] * g[2] * np.exp(g[2] * th) + g[3] * g[4] * np.exp(g[4] * th)
    return _scalar_or_array(s, theta)


# --------------------------------------------------------------------------
# electrolyte conductivity

def kappa_electrolyte(ce, h_coeffs):
    """Electrolyte conductivity [S/m], quartic in s = 1e-3 * ce."""
    c = np.asarray(ce, dtype=float)
    if np.any(c <= 0):
        raise DomainError("electrolyte concentration must be positive")
    h1, h2, h3, h4, h5 = h_coeffs
    s = 1e-3 * c
    k = h1 + s * (h2 + s * (h3 + s * (h4 + s * h5)))
    if np.any(k <= 0):
        raise ModelValidityError(f"non-positive electrolyte conductivity {np.min(k)!r}")
    return _scalar_or_array(k, ce)


def kappa_slope(ce, h_coeffs):
    h1, h2, h3, h4, h5 = h_coeffs
    s = 1e-3 * np.asarray(ce, dtype=float)
    return 1e-3 * (h2 + s * (2 * h3 + s * (3 * h4 + s * 4 * h5)))


# --------------------------------------------------------------------------
# finite-volume electrolyte mesh

@dataclass(frozen=True)
class Mesh:
    dx: np.ndarray        # volume widths [m]
    eps: np.ndarray       # porosity per volume
    layer: np.ndarray     # 0 cathode, 1 separator, 2 anode

    @property
    def size(self):
        return self.dx.size


@lru_cache(maxsize=64)
def electrolyte_mesh(cell: CellConfig) -> Mesh:
    n = cell.n_el
    dx = np.concatenate([np.full(n, cell.L_p / n), np.full(n, cell.L_s / n), np.full(n, cell.L_n / n)])
    eps = np.concatenate([np.full(n, cell.eps_p), np.full(n, cell.eps_s), np.full(n, cell.eps_n)])
    layer = np.repeat([0, 1, 2], n)
    for a in (dx, eps, layer):
        a.flags.writeable = False
    return Mesh(dx, eps, layer)


def face_transmissibility(dx, diff):
    """Conductance between neighbouring volume centres: harmonic mean of the
    two half-cell resistances, so flux is continuous across layer interfaces."""
    return 1.0 / (0.5 * dx[:-1] / diff[:-1] + 0.5 * dx[1:] / diff[1:])


def _electrolyte_source(I, params: ParameterVector, cell: CellConfig, mesh: Mesh):
    F, A = cell.faraday_constant, cell.electrode_area
    coef = (1.0 - params.t_plus) * I / (F * A)
    src = np.zeros(mesh.size)
    src[mesh.layer == 0] = -coef / cell.L_p
    src[mesh.layer == 2] = coef / cell.L_n
    return src


# --------------------------------------------------------------------------
# dynamics

def spme_rhs(state, current, params: ParameterVector, cell: CellConfig):
    """Time derivative of the SPMe state under applied current ``current`` [A]."""
    x = np.asarray(state, dtype=float)
    I = float(current)
    F, A = cell.faraday_constant, cell.electrode_area
    Rp, Rn = cell.Rp_p, cell.Rp_n
    jp = I / (F * A * cell.L_p * cell.a_p)
    jn = I / (F * A * cell.L_n * cell.a_n)
    dx = np.empty_like(x)
    dx[0] = 3.0 / Rp * jp
    dx[1] = -3.0 / Rn * jn
    dx[2] = -30.0 * params.Dsp / Rp ** 2 * x[2] + 45.0 / (2.0 * Rp ** 2) * jp
    dx[3] = -30.0 * params.Dsn / Rn ** 2 * x[3] - 45.0 / (2.0 * Rn ** 2) * jn

    mesh = electrolyte_mesh(cell)
    ce = x[4:]
    deff = mesh.eps ** params.p * params.De
    flux = face_transmissibility(mesh.dx, deff) * np.diff(ce)   # from k to k+1
    div = np.zeros_like(ce)
    div[:-1] += flux
    div[1:] -= flux
    src = _electrolyte_source(I, params, cell, mesh)
    dx[4:] = (div / mesh.dx + src) / mesh.eps
    return dx


@lru_cache(maxsize=256)
def system_matrices(params: ParameterVector, cell: CellConfig):
    """(A, B) with ``spme_rhs(x, I) == A @ x + B * I`` (the dynamics are affine)."""
    n = cell.n_state
    F, A_ = cell.faraday_constant, cell.electrode_area
    Rp, Rn = cell.Rp_p, cell.Rp_n
    A = np.zeros((n, n))
    B = np.zeros(n)
    kp = 1.0 / (F * A_ * cell.L_p * cell.a_p)
    kn = 1.0 / (F * A_ * cell.L_n * cell.a_n)
    B[0] = 3.0 / Rp * kp
    B[1] = -3.0 / Rn * kn
    A[2, 2] = -30.0 * params.Dsp / Rp ** 2
    A[3, 3] = -30.0 * params.Dsn / Rn ** 2
    B[2] = 45.0 / (2.0 * Rp ** 2) * kp
    B[3] = -45.0 / (2.0 * Rn ** 2) * kn

    mesh = electrolyte_mesh(cell)
    T = face_transmissibility(mesh.dx, mesh.eps ** params.p * params.De)
    scale = 1.0 / (mesh.eps * mesh.dx)
    m = mesh.size
    L = np.zeros((m, m))
    idx = np.arange(m - 1)
    L[idx, idx] -= T
    L[idx, idx + 1] += T
    L[idx + 1, idx + 1] -= T
    L[idx + 1, idx] += T
    A[4:, 4:] = scale[:, None] * L
    B[4:] = _electrolyte_source(1.0, params, cell, mesh) / mesh.eps
    A.flags.writeable = False
    B.flags.writeable = False
    return A, B


def electrolyte_lithium(state, cell: CellConfig) -> float:
    """Electrolyte lithium per unit electrode area, sum of eps * ce * dx [mol/m^2]."""
    mesh = electrolyte_mesh(cell)
    return float(np.sum(mesh.eps * np.asarray(state, dtype=float)[4:] * mesh.dx))


# --------------------------------------------------------------------------
# algebraic outputs (vectorised over samples)

def _surface(X, u, params, cell):
    F, A = cell.faraday_constant, cell.electrode_area
    kp = cell.Rp_p / (35.0 * params.Dsp) / (F * A * cell.L_p * cell.a_p)
    kn = cell.Rp_n / (35.0 * params.Dsn) / (F * A * cell.L_n * cell.a_n)
    csp = X[..., 0] + 8.0 * cell.Rp_p / 35.0 * X[..., 2] + kp * u
    csn = X[..., 1] + 8.0 * cell.Rp_n / 35.0 * X[..., 3] - kn * u
    return csp, csn, kp, kn


def _check_surface(cs, cmax, label, times):
    bad = np.flatnonzero(~((cs > 0.0) & (cs < cmax)))
    if bad.size:
        k = bad[0]
        t = None if times is None else float(times[k])
        raise SaturationError(f"{label} surface concentration {cs[k]:.6g} outside (0, {cmax:g})",
                              value=float(cs[k]), time=t)


def _layer_means(ce, n_el):
    return ce[..., :n_el].mean(axis=-1), ce[..., n_el:2 * n_el].mean(axis=-1), ce[..., 2 * n_el:].mean(axis=-1)


def voltage_batch(X, u, params: ParameterVector, cell: CellConfig, times=None, jacobian=False):
    """Terminal voltage for each row of ``X`` with input ``u``.

    ``X`` may carry leading batch axes; parameter fields may then be arrays
    broadcasting against them (e.g. shape ``(P, 1)`` for ``X`` of shape
    ``(P, N, n)``). Returns ``y`` or, with ``jacobian=True``, ``(y, dy/dx, dy/du)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    u = np.broadcast_to(np.asarray(u, dtype=float), X.shape[:-1])
    F, A, R, T = cell.faraday_constant, cell.electrode_area, cell.gas_constant, cell.temperature
    n = cell.n_el
    beta = 2.0 * R * T / F

    csp, csn, ksp, ksn = _surface(X, u, params, cell)
    _check_surface(csp, cell.cmax_p, "positive", times)
    _check_surface(csn, cell.cmax_n, "negative", times)
    thp, thn = csp / cell.cmax_p, csn / cell.cmax_n
    Up = ocp_positive(thp, cell.ocp_positive)
    Un = ocp_negative(thn, cell.ocp_negative)

    ce = X[..., 4:]
    cbar_p, cbar_s, cbar_n = _layer_means(ce, n)
    h = cell.kappa_coeffs
    ep, es, en = cell.eps_p ** params.p, cell.eps_s ** params.p, cell.eps_n ** params.p
    kap_p = ep * kappa_electrolyte(cbar_p, h)
    kap_s = es * kappa_electrolyte(cbar_s, h)
    kap_n = en * kappa_electrolyte(cbar_n, h)
    resist = cell.L_p / kap_p + 2.0 * cell.L_s / kap_s + cell.L_n / kap_n
    c0 = 1.5 * ce[..., 0] - 0.5 * ce[..., 1]
    cL = 1.5 * ce[..., -1] - 0.5 * ce[..., -2]
    if np.any(c0 <= 0) or np.any(cL <= 0):
        raise SingularityError("non-positive electrolyte concentration at a current collector")
    diff_term = beta * (1.0 - params.t_plus)       # 2RT/F (1 - t+)
    dphi = -u / (2.0 * A) * resist + diff_term * np.log(c0 / cL)

    sp = cell.L_p * cell.a_p
    sn = cell.L_n * cell.a_n
    gp = cbar_p * csp * (cell.cmax_p - csp)
    gn = cbar_n * csn * (cell.cmax_n - csn)
    if np.any(gp <= 0) or np.any(gn <= 0):
        raise SingularityError("non-positive argument in exchange-current square root")
    i0p = params.kp * np.sqrt(gp)
    i0n = params.kn * np.sqrt(gn)
    zp = -u / (2.0 * A * F * sp * i0p)
    zn = u / (2.0 * A * F * sn * i0n)
    eta_p = beta * np.arcsinh(zp)
    eta_n = beta * np.arcsinh(zn)
    y = Up - Un + dphi + eta_p - eta_n
    if not jacobian:
        return y

    gx = np.zeros(X.shape)
    dUp = ocp_positive_slope(thp, cell.ocp_positive) / cell.cmax_p
    dUn = ocp_negative_slope(thn, cell.ocp_negative) / cell.cmax_n
    deta_p = beta / np.sqrt(1.0 + zp * zp)          # d eta / d z
    deta_n = beta / np.sqrt(1.0 + zn * zn)
    # d eta_p / d csp through i0p, and d / d cbar_p
    dzp_dcs = -zp * 0.5 * (cell.cmax_p - 2.0 * csp) / (csp * (cell.cmax_p - csp))
    dzn_dcs = -zn * 0.5 * (cell.cmax_n - 2.0 * csn) / (csn * (cell.cmax_n - csn))
    dy_dcsp = dUp + deta_p * dzp_dcs
    dy_dcsn = -dUn - deta_n * dzn_dcs
    gx[..., 0] = dy_dcsp
    gx[..., 1] = dy_dcsn
    gx[..., 2] = dy_dcsp * 8.0 * cell.Rp_p / 35.0
    gx[..., 3] = dy_dcsn * 8.0 * cell.Rp_n / 35.0

    ohm = u / (2.0 * A)
    dres_p = -cell.L_p / kap_p ** 2 * ep * kappa_slope(cbar_p, h)
    dres_s = -2.0 * cell.L_s / kap_s ** 2 * es * kappa_slope(cbar_s, h)
    dres_n = -cell.L_n / kap_n ** 2 * en * kappa_slope(cbar_n, h)
    # layer-mean derivatives, including i0 dependence on the layer mean
    gx[..., 4:4 + n] += ((-ohm * dres_p) + deta_p * (-zp * 0.5 / cbar_p))[..., None] / n
    gx[..., 4 + n:4 + 2 * n] += (-ohm * dres_s)[..., None] / n
    gx[..., 4 + 2 * n:] += ((-ohm * dres_n) - deta_n * (-zn * 0.5 / cbar_n))[..., None] / n
    gx[..., 4] += diff_term * 1.5 / c0
    gx[..., 5] -= diff_term * 0.5 / c0
    gx[..., -1] -= diff_term * 1.5 / cL
    gx[..., -2] += diff_term * 0.5 / cL

    gu = (dy_dcsp * ksp - dy_dcsn * ksn - resist / (2.0 * A)
          + deta_p * (-1.0 / (2.0 * A * F * sp * i0p))
          - deta_n * (1.0 / (2.0 * A * F * sn * i0n)))
    return y, gx, gu


# --------------------------------------------------------------------------
# single-state convenience wrappers

def surface_concentration(state, current, params: ParameterVector, cell: CellConfig, electrode: str):
    """Particle surface concentration [mol/m^3] from the polynomial profile."""
    X = np.asarray(state, dtype=float)[None, :]
    csp, csn, _, _ = _surface(X, np.array([float(current)]), params, cell)
    if electrode == POSITIVE:
        _check_surface(csp, cell.cmax_p, POSITIVE, None)
        return float(csp[0])
    if electrode == NEGATIVE:
        _check_surface(csn, cell.cmax_n, NEGATIVE, None)
        return float(csn[0])
    raise ValueError(f"electrode must be {POSITIVE!r} or {NEGATIVE!r}, got {electrode!r}")


def electrolyte_potential_drop(state, current, params: ParameterVector, cell: CellConfig) -> float:
    """Average electrolyte potential drop [V]: ohmic term from layer-averaged
    conductivities plus the concentration term between the collector faces."""
    ce = np.asarray(state, dtype=float)[4:]
    n = cell.n_el
    h = cell.kappa_coeffs
    kap = [cell.eps_p ** params.p * kappa_electrolyte(ce[:n].mean(), h),
           cell.eps_s ** params.p * kappa_electrolyte(ce[n:2 * n].mean(), h),
           cell.eps_n ** params.p * kappa_electrolyte(ce[2 * n:].mean(), h)]
    c0 = 1.5 * ce[0] - 0.5 * ce[1]
    cL = 1.5 * ce[-1] - 0.5 * ce[-2]
    if c0 <= 0 or cL <= 0:
        raise SingularityError("non-positive electrolyte concentration at a current collector")
    I = float(current)
    F, R, T = cell.faraday_constant, cell.gas_constant, cell.temperature
    ohmic = -I / (2.0 * cell.electrode_area) * (cell.L_p / kap[0] + 2.0 * cell.L_s / kap[1] + cell.L_n / kap[2])
    return float(ohmic + 2.0 * R * T / F * (1.0 - params.t_plus) * np.log(c0 / cL))


def overpotentials(state, current, params: ParameterVector, cell: CellConfig):
    """(eta_p, eta_n) [V] from inverted Butler-Volmer kinetics."""
    x = np.asarray(state, dtype=float)
    I = float(current)
    F, A = cell.faraday_constant, cell.electrode_area
    beta = 2.0 * cell.gas_constant * cell.temperature / F
    n = cell.n_el
    csp = surface_concentration(x, I, params, cell, POSITIVE)
    csn = surface_concentration(x, I, params, cell, NEGATIVE)
    gp = x[4:4 + n].mean() * csp * (cell.cmax_p - csp)
    gn = x[4 + 2 * n:].mean() * csn * (cell.cmax_n - csn)
    if gp <= 0 or gn <= 0:
        raise SingularityError("non-positive argument in exchange-current square root")
    i0p = params.kp * np.sqrt(gp)
    i0n = params.kn * np.sqrt(gn)
    eta_p = beta * np.arcsinh(-I / (2.0 * A * F * cell.L_p * cell.a_p * i0p))
    eta_n = beta * np.arcsinh(I / (2.0 * A * F * cell.L_n * cell.a_n * i0n))
    return float(eta_p), float(eta_n)


def output_voltage(state, current, params: ParameterVector, cell: CellConfig) -> float:
    """Terminal voltage [V] of a single state."""
    return float(voltage_batch(np.asarray(state, dtype=float)[None, :], float(current), params, cell)[0])


def soc(state, cell: CellConfig) -> float:
    """State of charge [%] from the cathode average concentration (unclamped)."""
    if cell.theta_p_max == cell.theta_p_min:
        from .errors import ConfigError
        raise ConfigError("theta_p_max equals theta_p_min: state of charge undefined")
    c = np.asarray(state, dtype=float)
    cavg = c[..., 0] if c.ndim else c
    val = 100.0 / cell.cmax_p * (cavg - cell.theta_p_min * cell.cmax_p) / (cell.theta_p_max - cell.theta_p_min)
    return float(val) if np.ndim(val) == 0 else val


def equilibrium_state(cell: CellConfig, cavg_p, cavg_n, ce) -> np.ndarray:
    return np.concatenate(([cavg_p, cavg_n, 0.0, 0.0], np.full(3 * cell.n_el, float(ce))))
