"""Isothermal pseudo-two-dimensional (Doyle-Fuller-Newman) cell used as a
measured plant.

Finite volumes along x (cathode, separator, anode) and spherical shells along
r in every electrode volume. Per x-volume the unknowns are interleaved as::

    [c_s shell 1 .. n_r, c_e, phi_s, phi_e, j]

so the Jacobian is banded. Separator volumes carry the same slots; there
c_s, phi_s and j are pinned to zero by their residuals.

Sign conventions match the SPMe: x runs from the cathode collector to the
anode collector, a positive current discharges, ``j`` is the molar flux into
the particle [mol m^-2 s^-1] and the kinetics read
``j = -2 i0 sinh(eta / beta)`` with ``beta = 2RT/F``.

Time stepping is backward Euler on the full residual (damped Newton with a
banded finite-difference Jacobian). The potential gauge is fixed by
``phi_e = 0`` in the last anode volume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from .config import P2dConfig, RunConfig
from .errors import DomainError, ModelError, NumericalError, SafetyViolation
from .model import face_transmissibility, kappa_electrolyte, ocp_negative, ocp_positive

CATHODE, SEPARATOR, ANODE = 0, 1, 2


@dataclass(frozen=True)
class P2dMesh:
    n_r: int
    layer: np.ndarray
    dx: np.ndarray
    eps: np.ndarray
    a: np.ndarray         # specific interfacial area, 0 in the separator
    R: np.ndarray         # particle radius, 1 in the separator (unused)
    rho_vol: np.ndarray   # shell volumes / R^3 (without 4 pi)
    rho_area: np.ndarray  # interior shell face areas / R^2
    d_rho: float

    @property
    def size(self):
        return self.dx.size

    @property
    def block(self):
        return self.n_r + 4


@lru_cache(maxsize=16)
def p2d_mesh(cfg: P2dConfig) -> P2dMesh:
    c = cfg.cell
    n_p, n_s, n_n = cfg.n_x
    layer = np.repeat([CATHODE, SEPARATOR, ANODE], [n_p, n_s, n_n])
    dx = np.concatenate([np.full(n_p, c.L_p / n_p), np.full(n_s, c.L_s / n_s), np.full(n_n, c.L_n / n_n)])
    eps = np.choose(layer, [c.eps_p, c.eps_s, c.eps_n]).astype(float)
    a = np.choose(layer, [c.a_p, 0.0, c.a_n]).astype(float)
    R = np.choose(layer, [c.Rp_p, 1.0, c.Rp_n]).astype(float)
    faces = np.linspace(0.0, 1.0, cfg.n_r + 1)
    rho_vol = (faces[1:] ** 3 - faces[:-1] ** 3) / 3.0
    return P2dMesh(cfg.n_r, layer, dx, eps, a, R, rho_vol, faces[1:-1] ** 2, 1.0 / cfg.n_r)


@dataclass
class P2dState:
    """Consistent P2D state at applied current ``current``.

    ``cs`` has shape ``(n_x, n_r)`` (zero rows in the separator); ``ce``,
    ``phis``, ``phie`` and ``j`` have length ``n_x``.
    """

    cs: np.ndarray
    ce: np.ndarray
    phis: np.ndarray
    phie: np.ndarray
    j: np.ndarray
    current: float = 0.0

    def differential(self):
        return np.concatenate([self.cs.ravel(), self.ce])

    def algebraic(self):
        return np.concatenate([self.phis, self.phie, self.j])

    def copy(self):
        return P2dState(self.cs.copy(), self.ce.copy(), self.phis.copy(), self.phie.copy(),
                        self.j.copy(), self.current)


def _pack(state: P2dState, mesh: P2dMesh):
    Z = np.empty((mesh.size, mesh.block))
    Z[:, :mesh.n_r] = state.cs
    Z[:, mesh.n_r] = state.ce
    Z[:, mesh.n_r + 1] = state.phis
    Z[:, mesh.n_r + 2] = state.phie
    Z[:, mesh.n_r + 3] = state.j
    return Z.ravel()


def _unpack(z, mesh: P2dMesh, current):
    Z = z.reshape(mesh.size, mesh.block)
    n = mesh.n_r
    return P2dState(Z[:, :n].copy(), Z[:, n].copy(), Z[:, n + 1].copy(), Z[:, n + 2].copy(),
                    Z[:, n + 3].copy(), float(current))


def _split(differential, algebraic, mesh: P2dMesh, current):
    d = np.asarray(differential, dtype=float)
    g = np.asarray(algebraic, dtype=float)
    m, n = mesh.size, mesh.n_r
    if d.size != m * (n + 1) or g.size != 3 * m:
        raise ValueError(f"state sizes {d.size}, {g.size} do not match the mesh "
                         f"({m * (n + 1)}, {3 * m})")
    return P2dState(d[:m * n].reshape(m, n), d[m * n:], g[:m], g[m:2 * m], g[2 * m:], float(current))


# --------------------------------------------------------------------------
# residual

def _surface(cs_last, j, Ds, R, d_rho):
    # half-shell extrapolation with the surface flux boundary condition
    return cs_last + 0.5 * d_rho * R * j / Ds


def _harmonic(dx, diff):
    # face_transmissibility along the last axis, batch-safe
    return 1.0 / (0.5 * dx[:-1] / diff[..., :-1] + 0.5 * dx[1:] / diff[..., 1:])


def _blocks(Z, Zdot, I, cfg: P2dConfig, mesh: P2dMesh):
    """Residual blocks ``(..., n_x, n_r + 4)``. ``Zdot`` holds time derivatives
    of the differential slots (ignored elsewhere). Leading axes are batches."""
    c = cfg.cell
    prm = cfg.params
    n = mesh.n_r
    cs, ce, phis, phie, j = Z[..., :n], Z[..., n], Z[..., n + 1], Z[..., n + 2], Z[..., n + 3]
    if np.any(~(ce > 0)):
        raise DomainError("non-positive electrolyte concentration in the P2D plant")
    F, R, T, A = c.faraday_constant, c.gas_constant, c.temperature, c.electrode_area
    beta = 2.0 * R * T / F
    layer = mesh.layer
    elec = layer != SEPARATOR
    out = np.empty_like(Z)

    # solid diffusion in spherical shells
    Ds = np.where(layer == CATHODE, prm.Dsp, prm.Dsn)
    coef = Ds / (mesh.R ** 2 * mesh.d_rho)
    flux = coef[:, None] * mesh.rho_area * np.diff(cs, axis=-1)
    div = np.zeros_like(cs)
    div[..., :-1] += flux
    div[..., 1:] -= flux
    div[..., -1] += j / mesh.R
    out[..., :n] = np.where(elec[:, None], Zdot[..., :n] - div / mesh.rho_vol, cs)

    # electrolyte diffusion
    eps_p = mesh.eps ** prm.p
    Tce = face_transmissibility(mesh.dx, eps_p * prm.De)
    fce = Tce * np.diff(ce, axis=-1)
    dce = np.zeros_like(ce)
    dce[..., :-1] += fce
    dce[..., 1:] -= fce
    src = -(1.0 - prm.t_plus) * mesh.a * j
    out[..., n] = Zdot[..., n] - (dce / mesh.dx + src) / mesh.eps

    # solid charge: d(i_s)/dx = a F j, collector faces carry -I/A
    sig = np.where(layer == CATHODE, cfg.sigma_p * c.eps_p ** prm.p, cfg.sigma_n * c.eps_n ** prm.p)
    same = (layer[:-1] == layer[1:]) & elec[:-1]
    Ts = np.where(same, face_transmissibility(mesh.dx, sig), 0.0)
    i_face = -Ts * np.diff(phis, axis=-1)
    i_right = np.zeros_like(phis)
    i_left = np.zeros_like(phis)
    i_right[..., :-1] = i_face
    i_left[..., 1:] = i_face
    i_left[..., 0] = -I / A
    i_right[..., -1] = -I / A
    res_s = (i_right - i_left) / mesh.dx - mesh.a * F * j
    out[..., n + 1] = np.where(elec, res_s, phis)

    # electrolyte charge: d(i_e)/dx = -a F j
    kap = eps_p * kappa_electrolyte(ce, c.kappa_coeffs)
    Tk = _harmonic(mesh.dx, kap)
    ie = -Tk * (np.diff(phie, axis=-1) - beta * (1.0 - prm.t_plus) * np.diff(np.log(ce), axis=-1))
    e_right = np.zeros_like(phie)
    e_left = np.zeros_like(phie)
    e_right[..., :-1] = ie
    e_left[..., 1:] = ie
    res_e = (e_right - e_left) / mesh.dx + mesh.a * F * j
    res_e[..., -1] = phie[..., -1]          # gauge
    out[..., n + 2] = res_e

    # Butler-Volmer
    res_j = j.copy()
    for lay, cmax, k, ocp, U in ((CATHODE, c.cmax_p, prm.kp, c.ocp_positive, ocp_positive),
                                 (ANODE, c.cmax_n, prm.kn, c.ocp_negative, ocp_negative)):
        m = layer == lay
        jm = j[..., m]
        css = _surface(cs[..., m, -1], jm, Ds[m], mesh.R[m], mesh.d_rho)
        if np.any(~((css > 0) & (css < cmax))):
            raise DomainError(f"P2D surface concentration outside (0, {cmax:g})")
        i0 = k * np.sqrt(ce[..., m] * css * (cmax - css))
        eta = phis[..., m] - phie[..., m] - U(css / cmax, ocp)
        res_j[..., m] = jm + 2.0 * i0 * np.sinh(eta / beta)
    out[..., n + 3] = res_j
    return out


def p2d_residual(differential_state, algebraic_state, current, cfg: P2dConfig,
                 differential_rate=None) -> np.ndarray:
    """Stacked residual of every discretised equation.

    ``differential_state = [c_s (n_x * n_r, row-major), c_e (n_x)]``,
    ``algebraic_state = [phi_s, phi_e, j]``; ``differential_rate`` is the time
    derivative of the differential state (zero by default, i.e. the steady
    residual). Returned in the interleaved per-volume order.
    """
    mesh = p2d_mesh(cfg)
    st = _split(differential_state, algebraic_state, mesh, current)
    Z = _pack(st, mesh).reshape(mesh.size, mesh.block)
    Zdot = np.zeros_like(Z)
    if differential_rate is not None:
        rate = _split(differential_rate, np.zeros(3 * mesh.size), mesh, current)
        Zdot[:, :mesh.n_r] = rate.cs
        Zdot[:, mesh.n_r] = rate.ce
    return _blocks(Z, Zdot, float(current), cfg, mesh).ravel()


# --------------------------------------------------------------------------
# Newton machinery

def _scales(cfg: P2dConfig, mesh: P2dMesh, ce_ref):
    c = cfg.cell
    S = np.empty((mesh.size, mesh.block))
    S[:, :mesh.n_r] = np.where(mesh.layer == CATHODE, c.cmax_p, c.cmax_n)[:, None]
    S[:, mesh.n_r] = ce_ref
    S[:, mesh.n_r + 1] = 1.0
    S[:, mesh.n_r + 2] = 1.0
    j_ref = c.one_c_current / (c.faraday_constant * c.electrode_area * min(c.L_p * c.a_p, c.L_n * c.a_n))
    S[:, mesh.n_r + 3] = j_ref
    return S.ravel()


@lru_cache(maxsize=8)
def _band_pattern(N, bw):
    """Index arrays for scattering grouped differences into banded storage."""
    groups = min(2 * bw + 1, N)
    cols = np.repeat(np.arange(N), 2 * bw + 1)
    rows = cols + np.tile(np.arange(-bw, bw + 1), N)
    ok = (rows >= 0) & (rows < N)
    cols, rows = cols[ok], rows[ok]
    return groups, cols, rows, cols % groups


def _banded_jacobian(fun, z, r0, scale, bw):
    """Forward-difference Jacobian in ``solve_banded`` layout; columns more
    than ``2 bw`` apart are perturbed together, all groups in one batch."""
    N = z.size
    groups, cols, rows, grp = _band_pattern(N, bw)
    h = 1e-7 * np.maximum(np.abs(z), scale)
    Zp = np.tile(z, (groups, 1))
    Zp[np.arange(N) % groups, np.arange(N)] += h
    try:
        dR = fun(Zp) - r0
    except ModelError:
        # a perturbation left the domain: fall back to backward steps there
        dR = np.empty((groups, N))
        for g in range(groups):
            try:
                dR[g] = fun(Zp[g]) - r0
            except ModelError:
                Zp[g, np.arange(g, N, groups)] -= 2 * h[g::groups]
                h[g::groups] *= -1
                dR[g] = fun(Zp[g]) - r0
    ab = np.zeros((2 * bw + 1, N))
    ab[bw + rows - cols, cols] = dR[grp, rows] / h[cols]
    return ab


def _newton(fun, z0, scale, bw, tol, max_iter, what):
    z = z0.copy()
    trace = []
    r = fun(z)
    for it in range(max_iter):
        ab = _banded_jacobian(fun, z, r, scale, bw)
        try:
            dz = solve_banded((bw, bw), ab, -r)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"{what}: singular Newton matrix ({exc})", step=it, trace=trace) from None
        if not np.all(np.isfinite(dz)):
            raise NumericalError(f"{what}: non-finite Newton step", step=it, trace=trace)
        full = float(np.max(np.abs(dz) / scale))
        trace.append(full)
        if full < tol:
            return z + dz
        # natural monotonicity test: the simplified Newton correction at the
        # trial point must shrink, measured in the variable scales
        alpha = 1.0
        for _ in range(12):
            try:
                r_new = fun(z + alpha * dz)
                bar = solve_banded((bw, bw), ab, -r_new)
                if float(np.max(np.abs(bar) / scale)) <= (1.0 - 0.25 * alpha) * full:
                    break
            except ModelError:
                pass
            alpha *= 0.5
        else:
            raise NumericalError(f"{what}: damping failed", step=it, trace=trace)
        z = z + alpha * dz
        r = r_new
    raise NumericalError(f"{what}: Newton did not converge in {max_iter} iterations "
                         f"(last scaled steps {trace[-3:]})", step=max_iter, trace=trace)


def _bandwidth(mesh):
    return 2 * mesh.block - 1


def _solve(state: P2dState, current, cfg: P2dConfig, dt=None):
    """Backward-Euler step of length ``dt``; with ``dt=None`` the algebraic
    unknowns are re-solved with the differential unknowns frozen."""
    mesh = p2d_mesh(cfg)
    z_old = _pack(state, mesh)
    Z_old = z_old.reshape(mesh.size, mesh.block)
    nd = mesh.n_r + 1
    I = float(current)
    ce_ref = float(np.mean(state.ce))
    scale = _scales(cfg, mesh, ce_ref)

    if dt is None:
        def fun(z):
            Z = z.reshape(z.shape[:-1] + (mesh.size, mesh.block))
            out = _blocks(Z, np.zeros_like(Z), I, cfg, mesh)
            out[..., :nd] = Z[..., :nd] - Z_old[:, :nd]
            return out.reshape(z.shape)
        what = "P2D consistent initialisation"
    else:
        def fun(z):
            Z = z.reshape(z.shape[:-1] + (mesh.size, mesh.block))
            return _blocks(Z, (Z - Z_old) / dt, I, cfg, mesh).reshape(z.shape)
        what = "P2D step"
    z = _newton(fun, z_old, scale, _bandwidth(mesh), cfg.newton_tol, cfg.max_newton, what)
    return _unpack(z, mesh, I)


def p2d_consistent(state: P2dState, current, cfg: P2dConfig) -> P2dState:
    """Algebraic unknowns for ``current`` with the concentrations held fixed."""
    return _solve(state, current, cfg, None)


def p2d_step(state: P2dState, current, dt, cfg: P2dConfig) -> P2dState:
    """One implicit step of length ``dt`` [s] at constant ``current`` [A]."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if state.current != float(current):
        state = p2d_consistent(state, current, cfg)
    return _solve(state, current, cfg, float(dt))


def p2d_advance(state: P2dState, current, duration, cfg: P2dConfig) -> P2dState:
    """Hold ``current`` for ``duration`` seconds in steps of at most ``cfg.dt``."""
    if duration <= 0:
        return state
    steps = max(1, math.ceil(duration / cfg.dt - 1e-9))
    for _ in range(steps):
        state = p2d_step(state, current, duration / steps, cfg)
    return state


def p2d_voltage(state: P2dState, cfg: P2dConfig) -> float:
    """Terminal voltage: solid potentials extrapolated to the collector faces."""
    c = cfg.cell
    mesh = p2d_mesh(cfg)
    I, A = state.current, c.electrode_area
    sig_p = cfg.sigma_p * c.eps_p ** cfg.params.p
    sig_n = cfg.sigma_n * c.eps_n ** cfg.params.p
    left = state.phis[0] - 0.5 * mesh.dx[0] * I / (A * sig_p)
    right = state.phis[-1] + 0.5 * mesh.dx[-1] * I / (A * sig_n)
    return float(left - right)


def p2d_equilibrium(cfg: P2dConfig, cavg_p, cavg_n, ce) -> P2dState:
    """Rested state with uniform concentrations; exact zero of the residual."""
    c = cfg.cell
    mesh = p2d_mesh(cfg)
    lay = mesh.layer
    cs = np.zeros((mesh.size, mesh.n_r))
    cs[lay == CATHODE] = cavg_p
    cs[lay == ANODE] = cavg_n
    phis = np.zeros(mesh.size)
    phis[lay == CATHODE] = ocp_positive(cavg_p / c.cmax_p, c.ocp_positive)
    phis[lay == ANODE] = ocp_negative(cavg_n / c.cmax_n, c.ocp_negative)
    return P2dState(cs, np.full(mesh.size, float(ce)), phis, np.zeros(mesh.size), np.zeros(mesh.size), 0.0)


def electrolyte_lithium(state: P2dState, cfg: P2dConfig) -> float:
    mesh = p2d_mesh(cfg)
    return float(np.sum(mesh.eps * state.ce * mesh.dx))


def solid_lithium(state: P2dState, cfg: P2dConfig) -> np.ndarray:
    """Lithium per particle (without the 4 pi factor) for every x-volume."""
    mesh = p2d_mesh(cfg)
    return (state.cs @ mesh.rho_vol) * mesh.R ** 3


def p2d_soc(state: P2dState, cfg: P2dConfig) -> float:
    c = cfg.cell
    mesh = p2d_mesh(cfg)
    m = mesh.layer == CATHODE
    cavg = float(np.sum((state.cs[m] @ mesh.rho_vol) * 3.0 * mesh.dx[m]) / c.L_p)
    return 100.0 / c.cmax_p * (cavg - c.theta_p_min * c.cmax_p) / (c.theta_p_max - c.theta_p_min)


# --------------------------------------------------------------------------
# plant

class P2dPlant:
    """P2D cell as the measured system, same interface as ``SpmePlant``."""

    name = "p2d"

    def __init__(self, cfg: RunConfig, t_s: float, check_window=True):
        if cfg.p2d is None:
            from .errors import ConfigError
            raise ConfigError("plant 'p2d': P2D cell parameters required")
        self.cfg = cfg.p2d
        self.cell = cfg.p2d.cell
        self.t_s = float(t_s)
        self.v_min, self.v_max = cfg.design.v_min, cfg.design.v_max
        self.check_window = check_window
        x0 = cfg.x0
        self.initial = p2d_consistent(
            p2d_equilibrium(self.cfg, x0.cavg_p, x0.cavg_n, float(np.mean(x0.ce))), 0.0, self.cfg)
        self._cache = {}
        self.reset_initial()

    def reset_initial(self):
        self.state = self.initial.copy()
        self.charge = 0.0
        self.time = 0.0

    def _run(self, state, u, t0):
        y = np.empty(len(u))
        for k, uk in enumerate(np.asarray(u, dtype=float)):
            t = t0 + k * self.t_s
            try:
                state = p2d_consistent(state, uk, self.cfg)
                y[k] = p2d_voltage(state, self.cfg)
                if self.check_window and not (self.v_min - 1e-6 <= y[k] <= self.v_max + 1e-6):
                    raise SafetyViolation(f"voltage {y[k]:.4f} V outside [{self.v_min}, {self.v_max}]",
                                          time=t)
                state = p2d_advance(state, uk, self.t_s, self.cfg)
            except SafetyViolation:
                raise
            except (ModelError, NumericalError) as exc:
                raise SafetyViolation(f"P2D plant failure: {exc}", time=t) from None
        return y, state

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        y, self.state = self._run_partial(u)
        return y

    def _run_partial(self, u):
        # advance sample by sample so an abort leaves the state where it failed
        y = np.empty(u.size)
        for k, uk in enumerate(u):
            yk, st = self._run(self.state, [uk], self.time)
            y[k] = yk[0]
            self.state = st
            self.charge += uk * self.t_s
            self.time += self.t_s
        return y, self.state

    def abort(self, u, fail_time):
        pass   # apply() already stopped at the failing sample

    def restore(self, rate, rest):
        I = rate * self.cell.one_c_current
        duration = abs(self.charge) / I
        if duration > 0:
            current = -math.copysign(I, self.charge)
            self.state = p2d_advance(p2d_consistent(self.state, current, self.cfg), current,
                                     duration, self.cfg)
        if rest > 0:
            self.state = p2d_advance(p2d_consistent(self.state, 0.0, self.cfg), 0.0, rest, self.cfg)
        self.charge = 0.0
        self.time = 0.0

    def run_from_initial(self, u):
        key = np.asarray(u, dtype=float).tobytes()
        if key not in self._cache:
            self._cache[key] = self._run(self.initial.copy(), u, 0.0)[0]
        return self._cache[key].copy()

    def soc(self):
        return p2d_soc(self.state, self.cfg)


def shared_p2d_config(cfg: RunConfig, sigma_p, sigma_n, **kw) -> P2dConfig:
    """P2D configuration sharing the SPMe cell and true parameters."""
    return P2dConfig(cell=cfg.cell, params=cfg.phi_true, sigma_p=sigma_p, sigma_n=sigma_n, **kw)


__all__ = ["P2dMesh", "P2dState", "P2dPlant", "p2d_mesh", "p2d_residual", "p2d_step",
           "p2d_advance", "p2d_consistent", "p2d_voltage", "p2d_equilibrium",
           "electrolyte_lithium", "solid_lithium", "p2d_soc", "shared_p2d_config"]
