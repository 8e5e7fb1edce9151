"""Sampled-data simulation of the SPMe under piecewise-constant current.

For fixed parameters the SPMe state equation is affine, ``dx/dt = A x + B I``,
so every scheme reduces to a per-interval map ``x[k+1] = Phi x[k] + Gamma u[k]``:

* ``exact``: zero-order-hold discretisation through the matrix exponential.
* ``bdf1`` / ``bdf2``: fixed internal step ``dt`` (backward Euler, or BDF2
  started with one backward-Euler step inside each sample interval). The
  implicit stage is a Newton solve whose Jacobian ``I - c h A`` is exact, so a
  single LU-backed iteration converges; the residual is checked anyway.

The maps are cached per (parameters, cell, interval, integrator).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from . import kernels
from .config import CellConfig, IntegratorConfig, ParameterVector, StateVector
from .errors import ModelError, NumericalError
from .model import soc, system_matrices, voltage_batch


@dataclass
class Trajectory:
    """Samples at ``times``; ``states[k]`` is the state at the start of interval
    k and ``outputs[k]`` the voltage with ``inputs[k]`` applied there."""

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    final_state: np.ndarray

    def __len__(self):
        return self.times.size


def _as_state(x0) -> np.ndarray:
    if isinstance(x0, StateVector):
        return x0.as_array()
    return np.asarray(x0, dtype=float).copy()


def _bdf_map(A, B, duration, method, dt, tol):
    n = A.shape[0]
    steps = max(1, math.ceil(duration / dt - 1e-9))
    h = duration / steps
    eye = np.eye(n)
    # propagate the basis [x0 | u] so the map comes out directly
    Z_prev = None
    Z = np.hstack([eye, np.zeros((n, 1))])
    src = np.zeros((n, n + 1))
    src[:, n] = B
    lu1 = sla.lu_factor(eye - h * A)
    lu2 = sla.lu_factor(eye - (2.0 / 3.0) * h * A) if method == "bdf2" and steps > 1 else None
    for i in range(steps):
        if method == "bdf1" or i == 0:
            rhs = Z + h * src
            J, coef = lu1, h
        else:
            rhs = (4.0 * Z - Z_prev) / 3.0 + (2.0 / 3.0) * h * src
            J, coef = lu2, (2.0 / 3.0) * h
        Znew = sla.lu_solve(J, rhs)
        resid = Znew - coef * (A @ Znew) - rhs
        scale = max(1.0, np.max(np.abs(rhs)))
        if np.max(np.abs(resid)) > tol * scale:
            Znew = Znew + sla.lu_solve(J, -resid)
        Z_prev, Z = Z, Znew
    return Z[:, :n], Z[:, n]


@lru_cache(maxsize=1024)
def transition(params: ParameterVector, cell: CellConfig, duration: float,
               integrator: IntegratorConfig = IntegratorConfig()):
    """``(Phi, Gamma)`` advancing the state over ``duration`` seconds at constant current."""
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    A, B = system_matrices(params, cell)
    if integrator.method == "exact":
        n = A.shape[0]
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = A * duration
        M[:n, n] = B * duration
        E = sla.expm(M)
        phi, gamma = E[:n, :n].copy(), E[:n, n].copy()
    elif integrator.method in ("bdf1", "bdf2"):
        phi, gamma = _bdf_map(A, B, duration, integrator.method, integrator.dt,
                              integrator.newton_tol)
    else:
        raise ValueError(f"unknown integrator {integrator.method!r}")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(gamma))):
        raise NumericalError("non-finite transition map")
    # uniform electrolyte concentration is a fixed point; remove the roundoff
    # defect in the row sums so rest trajectories do not drift
    ce = slice(4, None)
    phi[ce, ce] += np.diag(1.0 - phi[ce, ce].sum(axis=1))
    phi.flags.writeable = False
    gamma.flags.writeable = False
    return phi, gamma


def advance(x, current, duration, params, cell, integrator=IntegratorConfig()):
    """State after holding ``current`` for ``duration`` seconds."""
    x = _as_state(x)
    if duration <= 0:
        return x
    phi, gamma = transition(params, cell, float(duration), integrator)
    return phi @ x + gamma * float(current)


def propagate_states(x0, inputs, params, cell, t_s, integrator=IntegratorConfig()):
    """States at every sample boundary, shape ``(N + 1, n)``."""
    phi, gamma = transition(params, cell, float(t_s), integrator)
    return kernels.propagate(phi, gamma, _as_state(x0), np.asarray(inputs, dtype=float))


def simulate(x0, inputs, params: ParameterVector, cell: CellConfig, t_s: float,
             integrator: IntegratorConfig = IntegratorConfig(), t0: float = 0.0) -> Trajectory:
    """Simulate under inputs held constant over each ``t_s`` interval.

    Model errors raised while evaluating the output carry the sample time.
    """
    u = np.asarray(inputs, dtype=float).ravel()
    X = propagate_states(x0, u, params, cell, t_s, integrator)
    if not np.all(np.isfinite(X)):
        bad = int(np.argmax(~np.all(np.isfinite(X), axis=1)))
        raise NumericalError("state became non-finite", step=bad - 1)
    times = t0 + t_s * np.arange(u.size)
    y = voltage_batch(X[:-1], u, params, cell, times=times) if u.size else np.empty(0)
    return Trajectory(times, X[:-1], y, u, X[-1])


def outputs_only(x0, inputs, params, cell, t_s, integrator=IntegratorConfig()) -> np.ndarray:
    return simulate(x0, inputs, params, cell, t_s, integrator).outputs


def write_trajectory(path, traj: Trajectory, cell: CellConfig, include_states=False):
    """Delimited export: ``time_s,current_A,voltage_V,soc_pct[,x0..]``."""
    header = ["time_s", "current_A", "voltage_V", "soc_pct"]
    if include_states:
        header += [f"x{i}" for i in range(traj.states.shape[1])]
    socs = soc(traj.states, cell) if len(traj) else np.empty(0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj)):
            row = [repr(float(traj.times[k])), repr(float(traj.inputs[k])),
                   repr(float(traj.outputs[k])), repr(float(socs[k]))]
            if include_states:
                row += [repr(float(v)) for v in traj.states[k]]
            w.writerow(row)


def read_series(path):
    """Read a delimited time series written by this package into a dict of arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    head, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.empty((0, len(head)))
    return {name: data[:, i] for i, name in enumerate(head)}


__all__ = ["Trajectory", "transition", "advance", "propagate_states", "simulate",
           "outputs_only", "write_trajectory", "read_series", "ModelError"]
