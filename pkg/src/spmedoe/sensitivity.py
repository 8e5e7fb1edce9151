"""Output sensitivities, Fisher information and identifiability indices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import CellConfig, IntegratorConfig, ParameterVector
from .errors import NoninformativeError, SpmeDoeError
from .model import voltage_batch
from .simulate import simulate, transition

EIG_FLOOR = 1e-12


class SpmeOutputModel:
    """Maps scaled parameters to the sampled SPMe voltage of one experiment.

    ``reference`` is the scaling vector: raw = scaled * reference.
    """

    def __init__(self, cell: CellConfig, reference: ParameterVector, t_s: float,
                 integrator: IntegratorConfig = IntegratorConfig()):
        self.cell = cell
        self.reference = reference
        self.ref = reference.as_array()
        self.t_s = float(t_s)
        self.integrator = integrator

    def params(self, scaled) -> ParameterVector:
        return ParameterVector.from_array(np.asarray(scaled, dtype=float) * self.ref)

    def simulate(self, x0, inputs, scaled):
        return simulate(x0, inputs, self.params(scaled), self.cell, self.t_s, self.integrator)

    def outputs(self, x0, inputs, scaled) -> np.ndarray:
        return self.simulate(x0, inputs, scaled).outputs

    def bind(self, x0, inputs):
        """Return ``f(scaled) -> y`` for a fixed experiment."""
        return lambda scaled: self.outputs(x0, inputs, scaled)


class BlockOutcome:
    __slots__ = ("Y", "end_states", "vjp")

    def __init__(self, Y, end_states, vjp):
        self.Y = Y                    # (P, N) outputs, row 0 nominal
        self.end_states = end_states  # (P, n)
        self.vjp = vjp                # (P, N) weights -> (N,) d/du of sum(w * Y)


class PerturbedSpme:
    """The nominal model and its N_phi ``h``-perturbed copies, simulated
    together. Row 0 of every output array is the nominal model."""

    def __init__(self, out_model: SpmeOutputModel, phi_scaled, h: float):
        phi = np.asarray(phi_scaled, dtype=float)
        self.h = float(h)
        self.n_params = phi.size
        sets = [phi] + [phi + self.h * e for e in np.eye(phi.size)]
        self.cell = out_model.cell
        self.params = [out_model.params(s) for s in sets]
        maps = [transition(p, out_model.cell, out_model.t_s, out_model.integrator) for p in self.params]
        self.phis = np.ascontiguousarray([m[0] for m in maps])
        self.gammas = np.ascontiguousarray([m[1] for m in maps])
        arr = np.array([q.as_array() for q in self.params])
        self.stacked = ParameterVector(*(arr[:, i:i + 1] for i in range(arr.shape[1])))

    def initial_states(self, x0):
        x0 = np.asarray(x0, dtype=float)
        return np.tile(x0, (len(self.params), 1))

    def evaluate(self, u, states, gradient=True) -> BlockOutcome:
        u = np.ascontiguousarray(u, dtype=float)
        X = kernels.propagate_batch(self.phis, self.gammas, states, u)
        if gradient:
            Y, GX, GU = voltage_batch(X[:, :-1], u[None, :], self.stacked, self.cell, jacobian=True)
        else:
            Y = voltage_batch(X[:, :-1], u[None, :], self.stacked, self.cell)
        gammas, phis = self.gammas, self.phis

        def vjp(W):
            lam = kernels.adjoint_batch(phis, W[:, :, None] * GX)
            return np.sum(W * GU, axis=0) + np.einsum("pmi,pi->m", lam, gammas)

        return BlockOutcome(Y, X[:, -1].copy(), vjp)

    def evaluate_many(self, U, states):
        """Outputs ``(B, P, N)`` of every model for each input row of ``U (B, N)``."""
        U = np.ascontiguousarray(np.atleast_2d(U), dtype=float)
        X = kernels.propagate_grid(self.phis, self.gammas, states, U)
        return voltage_batch(X[:, :, :-1], U[:, None, :], self.stacked, self.cell)

    def sensitivity(self, x0, inputs):
        """Forward-difference sensitivity of one experiment started at ``x0``."""
        Y = self.evaluate(inputs, self.initial_states(x0), gradient=False).Y
        return (Y[1:] - Y[0]).T / self.h, Y[0]


def sensitivity_matrix(output_fn, phi_scaled, h: float = 1e-3, scheme: str = "forward",
                       y_nominal=None) -> np.ndarray:
    """Finite-difference Jacobian ``dy/dphi`` of a sampled output sequence.

    ``h`` is an absolute step on the scaled parameters. ``forward`` uses
    N_phi + 1 evaluations (``y_nominal`` may be passed to save one);
    ``central`` uses 2 N_phi. Columns follow the order of ``phi_scaled``.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    phi = np.asarray(phi_scaled, dtype=float)
    cols = []
    if scheme == "forward":
        y0 = np.asarray(output_fn(phi) if y_nominal is None else y_nominal, dtype=float)
    for j in range(phi.size):
        e = np.zeros_like(phi)
        e[j] = h
        try:
            if scheme == "forward":
                cols.append((np.asarray(output_fn(phi + e)) - y0) / h)
            elif scheme == "central":
                cols.append((np.asarray(output_fn(phi + e)) - np.asarray(output_fn(phi - e))) / (2 * h))
            else:
                raise ValueError(f"unknown difference scheme {scheme!r}")
        except SpmeDoeError as exc:
            exc.parameter_index = j
            raise
    return np.column_stack(cols)


def fisher_matrix(S, sigma_y2: float) -> np.ndarray:
    """``S^T S / sigma_y2`` for i.i.d. output noise of variance ``sigma_y2``."""
    if not sigma_y2 > 0:
        raise ValueError(f"sigma_y2 must be positive, got {sigma_y2}")
    S = np.atleast_2d(np.asarray(S, dtype=float))
    F = S.T @ S / sigma_y2
    return 0.5 * (F + F.T)


@dataclass
class CovarianceApprox:
    matrix: np.ndarray
    regularized: bool
    floor: float

    @property
    def variances(self):
        return np.diag(self.matrix).copy()

    @property
    def trace(self):
        return float(np.trace(self.matrix))


def covariance_approx(F) -> CovarianceApprox:
    """Inverse Fisher matrix (Cramer-Rao bound).

    Eigenvalues below ``1e-12 * lambda_max`` are raised to that floor before
    inversion and ``regularized`` is set.
    """
    F = np.asarray(F, dtype=float)
    F = 0.5 * (F + F.T)
    w, V = np.linalg.eigh(F)
    lam_max = w[-1] if w.size else 0.0
    if not lam_max > 0:
        raise NoninformativeError("Fisher matrix is zero: the experiment carries no information")
    floor = EIG_FLOOR * lam_max
    regularized = bool(np.any(w < floor))
    w_f = np.maximum(w, floor)
    C = (V / w_f) @ V.T
    return CovarianceApprox(0.5 * (C + C.T), regularized, floor if regularized else 0.0)


def condition_number(S) -> float:
    """Ratio of extreme singular values; ``inf`` if S is rank deficient."""
    z = np.linalg.svd(np.atleast_2d(S), compute_uv=False)
    if z[0] == 0:
        raise ValueError("sensitivity matrix is zero")
    zmin = z[-1] if z.size >= np.atleast_2d(S).shape[1] else 0.0
    return float(z[0] / zmin) if zmin > z[0] * np.finfo(float).eps else float("inf")


def collinearity_index(S) -> float:
    """Reciprocal of the smallest singular value; ``inf`` if it vanishes."""
    S = np.atleast_2d(S)
    z = np.linalg.svd(S, compute_uv=False)
    if z[0] == 0:
        raise ValueError("sensitivity matrix is zero")
    zmin = z[-1] if z.size >= S.shape[1] else 0.0
    return float(1.0 / zmin) if zmin > z[0] * np.finfo(float).eps else float("inf")
