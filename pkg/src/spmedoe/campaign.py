"""Identification campaigns: design or generate an input, apply it to a plant,
add measurement noise, re-estimate on all data so far, reset the plant.

Plants expose ``reset_initial()``, ``apply(u)`` (noiseless sampled voltage,
advancing the plant), ``restore(rate, rest)`` (charge/discharge back to the
initial state of charge, then rest) and ``run_from_initial(u)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import RunConfig, config_digest
from .design import DesignConstraints, campaign_stopping, design_suboptimal, CONTINUE
from .errors import ConfigError, ModelError, SafetyViolation, SpmeDoeError
from .estimation import ExperimentRecord, ScaledParams, estimate
from .model import soc
from .sensitivity import (PerturbedSpme, SpmeOutputModel, collinearity_index,
                          condition_number, covariance_approx, fisher_matrix)
from .simulate import advance, simulate

log = logging.getLogger(__name__)

VOLTAGE_TOL = 1e-6


# --------------------------------------------------------------------------
# input profiles

def _n_samples(duration, t_s):
    if not duration > 0:
        raise ConfigError(f"profile duration must be positive, got {duration}")
    n = duration / t_s
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(f"duration {duration} s is not a multiple of t_s {t_s} s")
    return int(round(n))


def cc_profile(duration, rate, one_c_current, t_s):
    """Constant discharge at ``rate`` C."""
    if not rate > 0:
        raise ConfigError(f"rate must be positive, got {rate}")
    return np.full(_n_samples(duration, t_s), rate * one_c_current)


def multistep_profile(one_c_current, t_s, steps=5, on=600.0, off=1400.0, rate=1.0):
    """``steps`` repetitions of [rate C for ``on`` s, rest for ``off`` s]."""
    for d in (on, off):
        if abs(d / t_s - round(d / t_s)) > 1e-9:
            raise ConfigError(f"t_s = {t_s} s does not divide the {d} s step")
    n_on, n_off = int(round(on / t_s)), int(round(off / t_s))
    one = np.concatenate([np.full(n_on, rate * one_c_current), np.zeros(n_off)])
    return np.tile(one, steps)


def multisine_current(t, one_c_current, f1=20e-3, f2=5e-3, bias=0.5, amp=0.25):
    """Biased two-tone current [A] at time(s) ``t``."""
    t = np.asarray(t, dtype=float)
    return one_c_current * (amp * (np.sin(2 * np.pi * f1 * t) + np.sin(2 * np.pi * f2 * t)) + bias)


def multisine_profile(duration, one_c_current, t_s, **kw):
    """Multisine sampled at the start of every interval and held."""
    n = _n_samples(duration, t_s)
    return multisine_current(np.arange(n) * t_s, one_c_current, **kw)


def add_noise(outputs, sigma_y2, seed):
    """i.i.d. Gaussian measurement noise; ``seed`` is anything ``default_rng`` takes."""
    y = np.asarray(outputs, dtype=float)
    if sigma_y2 < 0:
        raise ValueError("sigma_y2 must be >= 0")
    if sigma_y2 == 0:
        return y.copy()
    rng = np.random.default_rng(seed)
    return y + rng.normal(0.0, math.sqrt(sigma_y2), size=y.shape)


def experiment_seed(master: int, index: int):
    """Independent noise stream per experiment, derived from the master seed."""
    return np.random.SeedSequence([int(master), int(index)])


# --------------------------------------------------------------------------
# plants

class SpmePlant:
    """The SPMe itself, at the true parameters, used as the measured system."""

    name = "spme"

    def __init__(self, cfg: RunConfig, t_s: float, check_window=True):
        self.cell = cfg.cell
        self.params = cfg.phi_true
        self.x0 = cfg.x0.as_array()
        self.t_s = float(t_s)
        self.integrator = cfg.integrator
        self.v_min, self.v_max = cfg.design.v_min, cfg.design.v_max
        self.check_window = check_window
        self.reset_initial()

    def reset_initial(self):
        self.x = self.x0.copy()
        self.charge = 0.0   # net charge removed since the last reset [C]
        self.time = 0.0

    def _run(self, x, u, t0=0.0):
        try:
            tr = simulate(x, u, self.params, self.cell, self.t_s, self.integrator, t0=t0)
        except ModelError as exc:
            raise SafetyViolation(f"plant model failure: {exc}", time=exc.time) from None
        if self.check_window:
            bad = np.flatnonzero((tr.outputs < self.v_min - VOLTAGE_TOL) | (tr.outputs > self.v_max + VOLTAGE_TOL))
            if bad.size:
                k = int(bad[0])
                raise SafetyViolation(f"voltage {tr.outputs[k]:.4f} V outside "
                                      f"[{self.v_min}, {self.v_max}]", time=float(tr.times[k]))
        return tr

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        tr = self._run(self.x, u, self.time)
        self.x = tr.final_state
        self.charge += float(np.sum(u)) * self.t_s
        self.time += u.size * self.t_s
        return tr.outputs

    def abort(self, u, fail_time):
        """Advance the plant through the samples applied before a violation."""
        k = max(0, int(round((fail_time - self.time) / self.t_s)))
        u = np.asarray(u, dtype=float)[:k]
        if u.size:
            self.x = simulate(self.x, u, self.params, self.cell, self.t_s, self.integrator).final_state
            self.charge += float(np.sum(u)) * self.t_s
        self.time += k * self.t_s

    def restore(self, rate, rest):
        """Constant current back to the initial charge, then rest."""
        I = rate * self.cell.one_c_current
        duration = abs(self.charge) / I
        if duration > 0:
            current = -math.copysign(I, self.charge)
            self.x = advance(self.x, current, duration, self.params, self.cell, self.integrator)
        if rest > 0:
            self.x = advance(self.x, 0.0, rest, self.params, self.cell, self.integrator)
        self.charge = 0.0
        self.time = 0.0

    def run_from_initial(self, u):
        return self._run(self.x0, u).outputs

    def soc(self):
        return soc(self.x, self.cell)


def make_plant(cfg: RunConfig, t_s=None):
    t_s = cfg.campaign.t_s if t_s is None else t_s
    if cfg.campaign.plant == "spme":
        return SpmePlant(cfg, t_s)
    if cfg.p2d is None:
        raise ConfigError("plant 'p2d': P2D cell parameters required "
                          "(add a [p2d] section with the P2D cell data)")
    from .p2d import P2dPlant
    return P2dPlant(cfg, t_s)


# --------------------------------------------------------------------------
# campaign

@dataclass
class ExperimentSummary:
    index: int
    estimate: list
    variances: list
    trace: float
    kappa: float
    gamma: float
    distance: float
    cost: float
    converged: bool
    failed: bool = False
    error: str = ""
    design_trace: float | None = None
    design_time: float | None = None
    validation_rms: float | None = None
    n_samples: int = 0


@dataclass
class CampaignResult:
    method: str
    plant: str
    seed: int
    config_digest: str
    experiments: list = field(default_factory=list)
    applied_inputs: list = field(default_factory=list)
    measured_outputs: list = field(default_factory=list)
    stop_reason: str = ""
    validation_reference_rms: float | None = None

    @property
    def estimates(self):
        return np.array([e.estimate for e in self.experiments])

    @property
    def distances(self):
        return np.array([e.distance for e in self.experiments])

    def summary(self) -> dict:
        """Reproducible outcome of the campaign; wall-clock times are kept
        out so equal seeds give identical summaries (see :meth:`timings`)."""
        exps = []
        for e in self.experiments:
            d = asdict(e)
            d.pop("design_time")
            exps.append(d)
        return {"method": self.method, "plant": self.plant, "seed": self.seed,
                "config_digest": self.config_digest, "stop_reason": self.stop_reason,
                "validation_reference_rms": self.validation_reference_rms,
                "experiments": exps}

    def timings(self) -> dict:
        return {"design_time_s": [e.design_time for e in self.experiments]}


def accumulated_sensitivity(model: SpmeOutputModel, records, phi, h):
    return np.vstack([PerturbedSpme(model, phi, h).sensitivity(r.x0, r.inputs)[0] for r in records])


def validate(phi_scaled, plant, profile, cfg: RunConfig, plant_outputs=None) -> float:
    """RMS difference between the noiseless plant and the SPMe at ``phi_scaled``
    on ``profile``, both started from the initial state."""
    y_plant = plant.run_from_initial(profile) if plant_outputs is None else plant_outputs
    model = SpmeOutputModel(cfg.cell, cfg.phi_true, plant.t_s, cfg.integrator)
    phi = phi_scaled.array if isinstance(phi_scaled, ScaledParams) else phi_scaled
    try:
        y_model = model.outputs(cfg.x0.as_array(), profile, phi)
    except ModelError as exc:
        raise SafetyViolation(f"model failure on the validation profile: {exc}", time=exc.time) from None
    return float(np.sqrt(np.mean((np.asarray(y_plant) - y_model) ** 2)))


def _inputs_for(i, cfg, model, phi, records, plant, multistep_u):
    c = cfg.campaign
    I1c = cfg.cell.one_c_current
    if c.method == "cc-discharge":
        return cc_profile(c.experiment_duration, 1.0, I1c, c.t_s), None
    if c.method == "multistep":
        n = _n_samples(c.experiment_duration, c.t_s)
        seg = multistep_u[i * n:(i + 1) * n]
        if seg.size == 0:
            raise ConfigError("multistep profile exhausted: too many experiments for 10000 s")
        return seg, None
    cons = DesignConstraints(cfg.design.i_max_c * I1c, cfg.design.v_min, cfg.design.v_max,
                             c.experiment_duration, c.t_s, c.M)
    prior = []
    if cfg.design.use_history and records:
        prior = [accumulated_sensitivity(model, records, phi, cfg.design.h)]
    res = design_suboptimal(model, phi, cfg.x0.as_array(), cons, c.sigma_y2,
                            prior_blocks=prior, options=cfg.design)
    return res.inputs, res


def run_campaign(cfg: RunConfig, plant=None, progress=None) -> CampaignResult:
    """Run the configured campaign; deterministic for a fixed configuration."""
    c = cfg.campaign
    plant = plant if plant is not None else make_plant(cfg)
    model = SpmeOutputModel(cfg.cell, cfg.phi_true, c.t_s, cfg.integrator)
    x0 = cfg.x0.as_array()
    phi = cfg.phi_init.as_array() / cfg.phi_true.as_array()
    result = CampaignResult(c.method, c.plant, c.rng_seed, config_digest(cfg))
    multistep_u = multistep_profile(cfg.cell.one_c_current, c.t_s) if c.method == "multistep" else None
    records: list[ExperimentRecord] = []
    sigma2 = c.sigma_y2

    val_u = multisine_profile(c.validation_duration, cfg.cell.one_c_current, c.t_s)
    try:
        val_plant = plant.run_from_initial(val_u)
        result.validation_reference_rms = validate(np.ones(phi.size), plant, val_u, cfg, val_plant)
    except SpmeDoeError as exc:
        log.warning("validation profile unusable: %s", exc)
        val_plant = None

    history = []
    plant.reset_initial()
    for i in range(c.n_experiments):
        summary_extra = {}
        try:
            u, dres = _inputs_for(i, cfg, model, phi, records, plant, multistep_u)
        except SpmeDoeError as exc:
            log.error("experiment %d: input generation failed: %s", i + 1, exc)
            result.experiments.append(_failed(i, phi, str(exc)))
            result.applied_inputs.append(np.empty(0))
            result.measured_outputs.append(np.empty(0))
            continue
        if dres is not None:
            summary_extra = {"design_trace": dres.predicted_trace, "design_time": dres.solve_time}
        try:
            y_clean = plant.apply(u)
        except SafetyViolation as exc:
            log.error("experiment %d aborted: %s", i + 1, exc)
            if hasattr(plant, "abort") and exc.time is not None:
                plant.abort(u, exc.time)
            result.experiments.append(_failed(i, phi, str(exc)))
            result.applied_inputs.append(np.asarray(u))
            result.measured_outputs.append(np.empty(0))
            plant.restore(c.reset_charge_rate, c.reset_rest)
            continue
        seed = experiment_seed(c.rng_seed, i)
        y = add_noise(y_clean, sigma2, seed)
        result.applied_inputs.append(np.asarray(u))
        result.measured_outputs.append(y)
        if c.method == "multistep" and records:
            prev = records[0]
            records = [ExperimentRecord(np.concatenate([prev.inputs, u]),
                                        np.concatenate([prev.outputs, y]), x0, c.t_s, None, "multistep")]
        else:
            records.append(ExperimentRecord(u, y, x0, c.t_s, i, f"experiment-{i + 1}"))

        est = estimate(records, model, phi, options=cfg.estimation)
        phi = est.values
        S = accumulated_sensitivity(model, records, phi, c.h_sensitivity)
        if sigma2 > 0:
            cov = covariance_approx(fisher_matrix(S, sigma2))
            variances, trace = cov.variances.tolist(), cov.trace
        else:
            variances, trace = [0.0] * phi.size, 0.0
        rms = validate(phi, plant, val_u, cfg, val_plant) if val_plant is not None else None
        summ = ExperimentSummary(
            index=i + 1, estimate=phi.tolist(), variances=variances, trace=trace,
            kappa=condition_number(S), gamma=collinearity_index(S),
            distance=float(np.linalg.norm(phi - 1.0)), cost=est.cost, converged=est.converged,
            validation_rms=rms, n_samples=int(u.size), **summary_extra)
        result.experiments.append(summ)
        history.append({"variances": variances, "trace": trace})
        log.info("experiment %d: |phi - phi*| = %.3g, trace = %.3g", i + 1, summ.distance, trace)
        if progress is not None:
            progress(summ)

        if c.method != "multistep":
            plant.restore(c.reset_charge_rate, c.reset_rest)
        decision = campaign_stopping(history, c.n_experiments, c.variance_threshold, c.plateau_eps)
        if decision != CONTINUE:
            result.stop_reason = decision
            break
    if not result.stop_reason:
        result.stop_reason = "stop-max-experiments"
    return result


def _failed(i, phi, message):
    nan = float("nan")
    return ExperimentSummary(index=i + 1, estimate=list(map(float, phi)), variances=[nan] * len(phi),
                             trace=nan, kappa=nan, gamma=nan, distance=float(np.linalg.norm(phi - 1.0)),
                             cost=nan, converged=False, failed=True, error=message)
