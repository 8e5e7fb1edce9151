"""Bounded least-squares (Gaussian maximum-likelihood) parameter estimation
over every experiment recorded so far."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .config import PARAMETER_NAMES, EstimationConfig, ParameterVector
from .errors import ConfigError
from .sensitivity import PerturbedSpme, SpmeOutputModel


@dataclass
class ExperimentRecord:
    inputs: np.ndarray
    outputs: np.ndarray
    x0: np.ndarray
    t_s: float
    noise_seed: int | None = None
    label: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).ravel()
        self.outputs = np.asarray(self.outputs, dtype=float).ravel()
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if self.inputs.size != self.outputs.size:
            raise ValueError(f"record has {self.inputs.size} inputs but {self.outputs.size} outputs")
        if not self.t_s > 0:
            raise ValueError(f"t_s must be positive, got {self.t_s}")


@dataclass(frozen=True)
class ScaledParams:
    values: tuple
    reference: ParameterVector

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def unscale(self) -> ParameterVector:
        return unscale(self)


def _check_reference(reference: ParameterVector):
    bad = [n for n, v in zip(PARAMETER_NAMES, reference.as_array()) if not v > 0]
    if bad:
        raise ConfigError([f"scaling reference {n} must be positive" for n in bad])


def scale(raw: ParameterVector, reference: ParameterVector) -> ScaledParams:
    _check_reference(reference)
    return ScaledParams(tuple(raw.as_array() / reference.as_array()), reference)


def unscale(scaled: ScaledParams) -> ParameterVector:
    _check_reference(scaled.reference)
    return ParameterVector.from_array(scaled.array * scaled.reference.as_array())


@dataclass
class EstimationResult:
    estimate: ScaledParams
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    message: str
    record_rms: list = field(default_factory=list)

    @property
    def values(self):
        return self.estimate.array


def _residual_fn(model: SpmeOutputModel, records):
    def residual(phi):
        return np.concatenate([r.outputs - model.outputs(r.x0, r.inputs, phi) for r in records])
    return residual


def _jacobian_fn(model: SpmeOutputModel, records, h):
    # forward differences, all perturbed models of a record propagated together
    def jac(phi):
        blocks = []
        for r in records:
            S, _ = PerturbedSpme(model, phi, h).sensitivity(r.x0, r.inputs)
            blocks.append(-S)
        return np.vstack(blocks)
    return jac


def estimate(records, model: SpmeOutputModel, phi_init, bounds=None,
             options: EstimationConfig = EstimationConfig()) -> EstimationResult:
    """Minimise the stacked squared output error of all ``records``.

    ``phi_init`` and the returned estimate are scaled by ``model.reference``.
    ``bounds`` defaults to ``(options.lower, options.upper)`` on every entry.
    ``cost`` is the plain sum of squared residuals [V^2].
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one experiment record")
    for r in records:
        if abs(r.t_s - model.t_s) > 1e-12:
            raise ValueError(f"record sampled at {r.t_s} s, model at {model.t_s} s")
    x0 = np.asarray(phi_init.array if isinstance(phi_init, ScaledParams) else phi_init, dtype=float)
    lo, hi = bounds if bounds is not None else (options.lower, options.upper)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), x0.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), x0.shape)
    if np.any(lo >= hi):
        raise ConfigError("estimation bounds need lower < upper elementwise")
    start = np.clip(x0, lo, hi)
    residual = _residual_fn(model, records)
    r0 = residual(start)
    c0 = float(r0 @ r0)
    sol = least_squares(residual, start, jac=_jacobian_fn(model, records, options.h),
                        bounds=(lo, hi), method="trf", ftol=options.ftol, xtol=1e-12,
                        gtol=options.gtol, max_nfev=options.max_iter, x_scale=1.0)
    phi, cost = sol.x, float(sol.fun @ sol.fun)
    if cost > c0:   # never report a worse point than the start
        phi, cost = start, c0
    rms, k = [], 0
    for r in records:
        seg = sol.fun[k:k + r.outputs.size] if phi is sol.x else r0[k:k + r.outputs.size]
        rms.append(float(np.sqrt(np.mean(seg ** 2))) if seg.size else 0.0)
        k += r.outputs.size
    return EstimationResult(ScaledParams(tuple(float(v) for v in phi), model.reference),
                            cost, c0, int(sol.nfev), bool(sol.status > 0), sol.message, rms)
