"""A-optimal input design: minimise the trace of the inverse Fisher matrix
over piecewise-constant currents, subject to |u| <= i_max and a voltage window.

The horizon can be split into M blocks solved in sequence; each block extends
the Fisher information of the blocks before it (and of any earlier
experiments), and the state of every perturbed-parameter model is carried
across blocks so the block sensitivities stack into the full-horizon matrix.

The objective gradient is either a one-sided difference in every input
sample (``gradient="fd"``, all perturbed inputs simulated in one batch) or
the exact derivative of the difference-based objective (``"adjoint"``):
every output is an affine-state model evaluated through ``voltage_batch``
with its Jacobian, and the input derivative is accumulated backwards.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .config import DesignConfig
from .errors import ConfigError, InfeasibleError, ModelError, NoninformativeError
from .sensitivity import (EIG_FLOOR, BlockOutcome, PerturbedSpme, SpmeOutputModel,
                          covariance_approx)

log = logging.getLogger(__name__)

BIG = 1e6
PENALTY_WEIGHTS = (1e2, 1e4, 1e6, 1e8)

CONTINUE = "continue"
STOP_THRESHOLD = "stop-threshold"
STOP_MAX = "stop-max-experiments"
STOP_PLATEAU = "stop-plateau"


@dataclass(frozen=True)
class DesignConstraints:
    i_max: float
    v_min: float
    v_max: float
    horizon: float
    t_s: float
    M: int = 1

    def __post_init__(self):
        issues = []
        if not self.i_max > 0:
            issues.append(f"i_max must be positive, got {self.i_max}")
        if not self.v_min < self.v_max:
            issues.append(f"need v_min < v_max, got {self.v_min}, {self.v_max}")
        if not self.t_s > 0:
            issues.append(f"t_s must be positive, got {self.t_s}")
        if not self.horizon > 0:
            issues.append(f"horizon must be positive, got {self.horizon}")
        else:
            n = self.horizon / self.t_s if self.t_s > 0 else math.nan
            if not abs(n - round(n)) < 1e-9:
                issues.append(f"horizon {self.horizon} is not a multiple of t_s {self.t_s}")
            elif self.M < 1 or round(n) % self.M:
                issues.append(f"{round(n)} samples cannot be split into {self.M} equal blocks")
        if issues:
            raise ConfigError(issues)

    @property
    def n_samples(self) -> int:
        return int(round(self.horizon / self.t_s))


@dataclass
class DesignResult:
    inputs: np.ndarray
    predicted_trace: float
    solve_time: float
    sensitivity: np.ndarray
    covariance: np.ndarray
    outputs: np.ndarray
    blocks: list = field(default_factory=list)
    converged: bool = True
    feasible: bool = True
    regularized: bool = False


# --------------------------------------------------------------------------
# design models: evaluate outputs of nominal + perturbed parameter sets

class StaticLinearDesignModel:
    """``y_k = sum_j c_j phi_j u_k``: a memoryless test model with a closed-form design."""

    def __init__(self, coeffs, phi_scaled, h: float):
        phi = np.asarray(phi_scaled, dtype=float)
        self.c = np.asarray(coeffs, dtype=float)
        self.h = float(h)
        self.n_params = phi.size
        self.sets = np.array([phi] + [phi + self.h * e for e in np.eye(phi.size)])

    def initial_states(self, x0):
        return np.zeros((len(self.sets), 0))

    def evaluate(self, u, states, gradient=True):
        gain = self.sets @ self.c
        Y = gain[:, None] * np.asarray(u, dtype=float)[None, :]
        return BlockOutcome(Y, states, lambda W: W.T @ gain)

    def evaluate_many(self, U, states):
        gain = self.sets @ self.c
        return gain[None, :, None] * np.atleast_2d(U)[:, None, :]


# --------------------------------------------------------------------------
# objective

def _fisher_of(S, sigma2):
    return S.T @ S / sigma2


class _BlockObjective:
    def __init__(self, dm, states, F_prior, sigma2, cons: DesignConstraints, margin,
                 gradient="fd", fd_step=1e-6):
        self.dm, self.states, self.F_prior = dm, states, F_prior
        self.gradient, self.fd_step = gradient, fd_step
        self.sigma2, self.cons = sigma2, cons
        self.lo = cons.v_min + margin
        self.hi = cons.v_max - margin
        self.rho = PENALTY_WEIGHTS[0]
        self.evals = 0
        self.regularized = False

    def info(self, u):
        out = self.dm.evaluate(u, self.states, gradient=False)
        S = (out.Y[1:] - out.Y[0]).T / self.dm.h
        F = self.F_prior + _fisher_of(S, self.sigma2)
        return out, S, F

    def _values(self, Y):
        """Objective for each row of outputs ``Y (B, P, N)``; ``inf`` where
        the Fisher matrix is zero. Same eigenvalue floor as ``covariance_approx``."""
        S = np.swapaxes(Y[:, 1:] - Y[:, :1], 1, 2) / self.dm.h
        F = self.F_prior + np.einsum("bki,bkj->bij", S, S) / self.sigma2
        w = np.linalg.eigvalsh(F)
        lam_max = w[:, -1]
        floor = EIG_FLOOR * lam_max
        self.regularized = self.regularized or bool(np.any(w < floor[:, None]))
        with np.errstate(divide="ignore"):
            tr = np.sum(1.0 / np.maximum(w, floor[:, None]), axis=1)
        hi = np.maximum(0.0, Y[:, 0] - self.hi)
        lo = np.maximum(0.0, self.lo - Y[:, 0])
        pen = self.rho * np.sum(hi * hi + lo * lo, axis=1)
        out = np.full(len(Y), math.inf)
        ok = lam_max > 0
        out[ok] = np.log(tr[ok]) + pen[ok]
        return out

    def _fd(self, v):
        # forward step per sample, backward where the forward step leaves the box
        d = np.where(v + self.fd_step > 1.0, -self.fd_step, self.fd_step)
        V = np.vstack([v, v + np.diag(d)])
        try:
            Y = self.dm.evaluate_many(self.cons.i_max * V, self.states)
        except ModelError:
            return BIG, np.zeros_like(v)
        f = self._values(Y)
        if not np.all(np.isfinite(f)):
            return BIG, np.zeros_like(v)
        return f[0], (f[1:] - f[0]) / d

    def __call__(self, v):
        self.evals += 1
        if self.gradient == "fd":
            return self._fd(v)
        u = self.cons.i_max * v
        try:
            out = self.dm.evaluate(u, self.states)
        except ModelError:
            return BIG, np.zeros_like(v)
        Y = out.Y
        S = (Y[1:] - Y[0]).T / self.dm.h
        F = self.F_prior + _fisher_of(S, self.sigma2)
        try:
            cov = covariance_approx(F)
        except NoninformativeError:
            return BIG, np.zeros_like(v)
        self.regularized = self.regularized or cov.regularized
        C = cov.matrix
        tr = cov.trace
        W = S @ (C @ C)
        coef = -2.0 / (self.sigma2 * self.dm.h * tr)
        weights = np.empty_like(Y)
        weights[1:] = coef * W.T
        weights[0] = -coef * W.sum(axis=1)
        hi = np.maximum(0.0, Y[0] - self.hi)
        lo = np.maximum(0.0, self.lo - Y[0])
        pen = self.rho * float(np.sum(hi * hi + lo * lo))
        weights[0] += 2.0 * self.rho * (hi - lo)
        grad = out.vjp(weights) * self.cons.i_max
        return math.log(tr) + pen, grad


def start_sequence(n, offset, amplitude, t_s, half_period=50.0):
    """Deterministic square wave beginning with discharge (zero current when
    ``amplitude`` is 0). Zero current from a rested state gives an identically
    zero Fisher matrix, so a nonzero start keeps the first iterate informative."""
    k = offset + np.arange(n)
    per = max(1, int(round(half_period / t_s)))
    return amplitude * np.where((k // per) % 2 == 0, 1.0, -1.0)


def _feasible(y, cons, tol=1e-6):
    return bool(np.all(y >= cons.v_min - tol) and np.all(y <= cons.v_max + tol))


def _restore(dm, states, u, cons):
    """Largest alpha in [0, 1] (bisection) with alpha*u inside the voltage window."""
    def ok(a):
        try:
            return _feasible(dm.evaluate(a * u, states, gradient=False).Y[0], cons)
        except ModelError:
            return False
    if ok(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    if not ok(0.0):
        return None
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def _solve_block(dm, states, F_prior, sigma2, cons, opts: DesignConfig, starts):
    obj = _BlockObjective(dm, states, F_prior, sigma2, cons, opts.margin,
                          opts.gradient, opts.fd_step)
    bounds = [(-1.0, 1.0)] * len(starts[0])
    best = None
    for v0 in starts:
        v = np.clip(v0, -1.0, 1.0)
        iters, converged = 0, True
        for rho in PENALTY_WEIGHTS:
            obj.rho = rho
            res = minimize(obj, v, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": opts.max_iter, "ftol": 1e-12, "gtol": 1e-9})
            v = np.clip(res.x, -1.0, 1.0)
            iters += int(res.nit)
            converged = converged and (res.success or res.nit >= opts.max_iter)
            try:
                y = dm.evaluate(cons.i_max * v, states, gradient=False).Y[0]
            except ModelError:
                continue
            if _feasible(y, cons):
                break
        u = cons.i_max * v
        alpha = _restore(dm, states, u, cons)
        if alpha is None:
            raise InfeasibleError("no feasible input: rest voltage already outside the window")
        u = alpha * u
        _, S, F = obj.info(u)
        tr = covariance_approx(F).trace if np.any(F) else math.inf
        cand = dict(u=u, S=S, tr=tr, iters=iters, alpha=alpha, converged=bool(res.success))
        if best is None or cand["tr"] < best["tr"]:
            best = cand
    best["evals"] = obj.evals
    best["regularized"] = obj.regularized
    return best


def _check_start(dm, x0, cons):
    states = dm.initial_states(x0)
    try:
        y0 = dm.evaluate(np.zeros(1), states, gradient=False).Y[0]
    except ModelError as exc:
        raise InfeasibleError(f"initial state cannot be evaluated: {exc}") from None
    if not _feasible(y0, cons, tol=0.0):
        raise InfeasibleError(f"initial rest voltage {y0[0]:.4f} V outside [{cons.v_min}, {cons.v_max}]")
    return states


def _design(dm, x0, cons: DesignConstraints, sigma_y2, prior_blocks, opts: DesignConfig, M):
    t_start = time.perf_counter()
    sigma2 = sigma_y2 if sigma_y2 > 0 else 1.0
    n_par = dm.n_params
    F = np.zeros((n_par, n_par))
    for S_prev in prior_blocks:
        F = F + _fisher_of(np.asarray(S_prev, dtype=float), sigma2)
    states = _check_start(dm, x0, cons)
    nb = cons.n_samples // M
    rng = np.random.default_rng(opts.seed)
    inputs, sens, blocks = [], [], []
    regularized = False
    converged = True
    for j in range(M):
        t_blk = time.perf_counter()
        starts = [start_sequence(nb, j * nb, opts.start_amplitude, cons.t_s)]
        for _ in range(opts.multistart - 1):
            starts.append(rng.uniform(-1.0, 1.0, nb))
        try:
            best = _solve_block(dm, states, F, sigma2, cons, opts, starts)
        except InfeasibleError as exc:
            raise InfeasibleError(f"block {j}: {exc}") from None
        F = F + _fisher_of(best["S"], sigma2)
        states = dm.evaluate(best["u"], states, gradient=False).end_states
        inputs.append(best["u"])
        sens.append(best["S"])
        regularized = regularized or best["regularized"]
        converged = converged and best["converged"]
        blocks.append({"block": j, "trace": float(covariance_approx(F).trace * sigma_y2 / sigma2)
                       if sigma_y2 > 0 else float(covariance_approx(F).trace),
                       "iterations": best["iters"], "evaluations": best["evals"],
                       "restoration_alpha": best["alpha"], "converged": best["converged"],
                       "regularized": best["regularized"],
                       "time": time.perf_counter() - t_blk})
        log.info("design block %d/%d: trace %.4g (%d iterations)", j + 1, M, blocks[-1]["trace"], best["iters"])
    u = np.concatenate(inputs)
    S = np.vstack(sens)
    cov = covariance_approx(F)
    y = dm.evaluate(u, dm.initial_states(x0), gradient=False).Y[0]
    return DesignResult(
        inputs=u, predicted_trace=cov.trace, solve_time=time.perf_counter() - t_start,
        sensitivity=S, covariance=cov.matrix, outputs=y, blocks=blocks,
        converged=converged, feasible=_feasible(y, cons), regularized=regularized or cov.regularized)


def _design_model(model, phi_est, h):
    if isinstance(model, SpmeOutputModel):
        return PerturbedSpme(model, phi_est, h)
    return model


def design_full(model, phi_est, x0, constraints: DesignConstraints, sigma_y2: float,
                options: DesignConfig = DesignConfig(), prior_blocks=()) -> DesignResult:
    """Optimise every sample of the horizon at once.

    ``model`` is an :class:`SpmeOutputModel` (or a ready design model such as
    :class:`StaticLinearDesignModel`); ``phi_est`` is the scaled estimate the
    design is built around. With ``sigma_y2 == 0`` the (scale-invariant)
    design uses unit variance and the reported trace is for unit variance.
    """
    return _design(_design_model(model, phi_est, options.h), x0, constraints, sigma_y2,
                   prior_blocks, options, 1)


def design_suboptimal(model, phi_est, x0, constraints: DesignConstraints, sigma_y2: float,
                      prior_blocks=(), options: DesignConfig = DesignConfig()) -> DesignResult:
    """Sequential M-block design; block j sees the Fisher information of
    ``prior_blocks`` and of blocks 1..j-1."""
    return _design(_design_model(model, phi_est, options.h), x0, constraints, sigma_y2,
                   prior_blocks, options, constraints.M)


def campaign_stopping(history, n_max: int = 10, variance_threshold: float = 0.0,
                      plateau_eps: float = 0.0) -> str:
    """Decide whether another experiment is needed.

    ``history`` is a sequence of per-experiment dicts with ``variances`` and
    ``trace``. Threshold and plateau tests are disabled when their setting is 0.
    """
    if not history:
        raise ValueError("need at least one completed experiment")
    last = history[-1]
    if variance_threshold > 0 and np.all(np.asarray(last["variances"]) < variance_threshold):
        return STOP_THRESHOLD
    if len(history) >= n_max:
        return STOP_MAX
    if plateau_eps > 0 and len(history) >= 2:
        prev, cur = history[-2]["trace"], last["trace"]
        if prev > 0 and (prev - cur) / prev < plateau_eps:
            return STOP_PLATEAU
    return CONTINUE
