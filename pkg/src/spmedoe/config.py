"""Configuration types, TOML ingestion with unit conversion, and validation.

Everything is stored in SI units (m, s, mol, A, V). A file may declare
``unit_system = "companion"`` to give lengths in um, amounts in pmol and
concentrations in pmol/um^3; any single field can also carry an explicit
unit as ``{ value = 2.05e12, unit = "um^2" }``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import os
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

CONFIG_ENV = "SPMEDOE_CONFIG"
P2D_CONFIG_ENV = "SPMEDOE_P2D_CONFIG"

PARAMETER_NAMES = ("p", "t_plus", "De", "Dsp", "Dsn", "kp", "kn")

# field -> (SI unit, companion unit, {unit: factor to SI})
_LEN = {"m": 1.0, "um": 1e-6, "mm": 1e-3}
_CONC = {"mol/m^3": 1.0, "pmol/um^3": 1e6, "mol/L": 1e3}
_DIFF = {"m^2/s": 1.0, "um^2/s": 1e-12, "cm^2/s": 1e-4}
_RATE = {"m^2.5/(mol^0.5*s)": 1.0, "um^2.5/(pmol^0.5*s)": 1e-9}
_NONE = {"-": 1.0}
UNITS: dict[str, tuple[str, str, dict[str, float]]] = {
    "faraday_constant": ("C/mol", "C/pmol", {"C/mol": 1.0, "C/pmol": 1e12}),
    "gas_constant": ("J/(mol*K)", "J/(pmol*K)", {"J/(mol*K)": 1.0, "J/(pmol*K)": 1e12}),
    "temperature": ("K", "K", {"K": 1.0}),
    "electrode_area": ("m^2", "um^2", {"m^2": 1.0, "um^2": 1e-12, "cm^2": 1e-4}),
    "L_p": ("m", "um", _LEN), "L_s": ("m", "um", _LEN), "L_n": ("m", "um", _LEN),
    "Rp_p": ("m", "um", _LEN), "Rp_n": ("m", "um", _LEN),
    "eps_p": ("-", "-", _NONE), "eps_s": ("-", "-", _NONE), "eps_n": ("-", "-", _NONE),
    "epsf_p": ("-", "-", _NONE), "epsf_n": ("-", "-", _NONE),
    "cmax_p": ("mol/m^3", "pmol/um^3", _CONC), "cmax_n": ("mol/m^3", "pmol/um^3", _CONC),
    "theta_p_min": ("-", "-", _NONE), "theta_p_max": ("-", "-", _NONE),
    "one_c_current": ("A", "A", {"A": 1.0, "mA": 1e-3}),
    "p": ("-", "-", _NONE), "t_plus": ("-", "-", _NONE),
    "De": ("m^2/s", "um^2/s", _DIFF), "Dsp": ("m^2/s", "um^2/s", _DIFF),
    "Dsn": ("m^2/s", "um^2/s", _DIFF),
    "kp": ("m^2.5/(mol^0.5*s)", "um^2.5/(pmol^0.5*s)", _RATE),
    "kn": ("m^2.5/(mol^0.5*s)", "um^2.5/(pmol^0.5*s)", _RATE),
    "cavg_p": ("mol/m^3", "pmol/um^3", _CONC), "cavg_n": ("mol/m^3", "pmol/um^3", _CONC),
    "qavg_p": ("mol/m^4", "pmol/um^4", {"mol/m^4": 1.0, "pmol/um^4": 1e12}),
    "qavg_n": ("mol/m^4", "pmol/um^4", {"mol/m^4": 1.0, "pmol/um^4": 1e12}),
    "ce": ("mol/m^3", "pmol/um^3", _CONC),
    "sigma_p": ("S/m", "S/m", {"S/m": 1.0}), "sigma_n": ("S/m", "S/m", {"S/m": 1.0}),
}

OCP_KINDS = {"positive": {"rational": 12, "tanh": 14},
             "negative": {"composite": 11, "exponential": 5}}


@dataclass(frozen=True)
class OcpSet:
    """Open-circuit potential law: ``kind`` selects the functional form."""

    kind: str
    coeffs: tuple[float, ...]


@dataclass(frozen=True)
class CellConfig:
    faraday_constant: float
    gas_constant: float
    temperature: float
    electrode_area: float
    L_p: float
    L_s: float
    L_n: float
    Rp_p: float
    Rp_n: float
    eps_p: float
    eps_s: float
    eps_n: float
    epsf_p: float
    epsf_n: float
    cmax_p: float
    cmax_n: float
    theta_p_min: float
    theta_p_max: float
    ocp_positive: OcpSet
    ocp_negative: OcpSet
    kappa_coeffs: tuple[float, float, float, float, float]
    one_c_current: float
    n_el: int = 10

    @property
    def n_state(self) -> int:
        return 4 + 3 * self.n_el

    @property
    def a_p(self) -> float:
        return 3.0 * (1.0 - self.epsf_p - self.eps_p) / self.Rp_p

    @property
    def a_n(self) -> float:
        return 3.0 * (1.0 - self.epsf_n - self.eps_n) / self.Rp_n


@dataclass(frozen=True)
class ParameterVector:
    """Identifiable parameters, SI units, ordered as ``PARAMETER_NAMES``."""

    p: float
    t_plus: float
    De: float
    Dsp: float
    Dsn: float
    kp: float
    kn: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAMETER_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ParameterVector":
        values = np.asarray(values, dtype=float).ravel()
        if values.size != len(PARAMETER_NAMES):
            raise ValueError(f"expected {len(PARAMETER_NAMES)} parameters, got {values.size}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class StateVector:
    """SPMe differential state; ``ce`` ordered cathode -> separator -> anode."""

    cavg_p: float
    cavg_n: float
    qavg_p: float
    qavg_n: float
    ce: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.concatenate(([self.cavg_p, self.cavg_n, self.qavg_p, self.qavg_n],
                               np.asarray(self.ce, dtype=float)))

    @classmethod
    def from_array(cls, x) -> "StateVector":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]),
                   tuple(float(v) for v in x[4:]))

    @classmethod
    def uniform(cls, cavg_p, cavg_n, ce, n_el, qavg_p=0.0, qavg_n=0.0) -> "StateVector":
        return cls(float(cavg_p), float(cavg_n), float(qavg_p), float(qavg_n),
                   (float(ce),) * (3 * n_el))


@dataclass(frozen=True)
class IntegratorConfig:
    """``exact``: zero-order-hold matrix exponential; ``bdf1``/``bdf2``:
    fixed-step backward differentiation with internal step ``dt``."""

    method: str = "exact"
    dt: float = 0.25
    newton_tol: float = 1e-10
    max_newton: int = 8


@dataclass(frozen=True)
class DesignConfig:
    i_max_c: float = 1.0
    v_min: float = 2.5
    v_max: float = 4.35
    horizon: float = 1000.0
    t_s: float = 5.0
    M: int = 4
    h: float = 1e-3
    max_iter: int = 200
    multistart: int = 1
    seed: int = 0
    margin: float = 5e-3
    start_amplitude: float = 0.5
    use_history: bool = True
    gradient: str = "fd"
    fd_step: float = 1e-6


@dataclass(frozen=True)
class EstimationConfig:
    lower: float = 0.1
    upper: float = 10.0
    h: float = 1e-6
    ftol: float = 1e-10
    gtol: float = 1e-8
    max_iter: int = 500


@dataclass(frozen=True)
class CampaignConfig:
    plant: str = "spme"
    method: str = "optimal-doe"
    n_experiments: int = 10
    experiment_duration: float = 1000.0
    t_s: float = 5.0
    M: int = 4
    sigma_y2: float = 0.09e-6
    reset_charge_rate: float = 1.0
    reset_rest: float = 400.0
    rng_seed: int = 0
    variance_threshold: float = 0.0
    plateau_eps: float = 0.0
    validation_duration: float = 1000.0
    h_sensitivity: float = 1e-3


@dataclass(frozen=True)
class P2dConfig:
    cell: CellConfig
    params: ParameterVector
    sigma_p: float
    sigma_n: float
    n_x: tuple[int, int, int] = (10, 10, 10)
    n_r: int = 10
    dt: float = 5.0
    newton_tol: float = 1e-9
    max_newton: int = 20


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; ``source`` is the file it came from."""

    cell: CellConfig
    phi_true: ParameterVector
    phi_init: ParameterVector
    x0: StateVector
    integrator: IntegratorConfig = IntegratorConfig()
    design: DesignConfig = DesignConfig()
    estimation: EstimationConfig = EstimationConfig()
    campaign: CampaignConfig = CampaignConfig()
    p2d: P2dConfig | None = None
    source: str | None = field(default=None, compare=False)
    extras: dict = field(default_factory=dict, compare=False, hash=False)


# --------------------------------------------------------------------------
# loading

_LINE_RE = re.compile(r"line (\d+)")


def _field_line(text: str, section: str, key: str) -> int | None:
    current = ""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line.startswith("["):
            current = line.strip("[] ")
        elif current == section and re.match(rf"{re.escape(key)}\s*=", line):
            return i
    return None


class _Reader:
    """Collects every problem instead of stopping at the first."""

    def __init__(self, data, text, unit_system):
        self.data = data
        self.text = text
        self.unit_system = unit_system
        self.issues: list[str] = []

    def where(self, section, key):
        line = _field_line(self.text, section, key) if self.text else None
        return f"{section}.{key}" + (f" (line {line})" if line else "")

    def issue(self, section, key, msg):
        self.issues.append(f"{self.where(section, key)}: {msg}")

    def section(self, name, required=True):
        node = self.data
        for part in name.split("."):
            if not isinstance(node, dict) or part not in node:
                if required:
                    self.issues.append(f"missing required section [{name}]")
                return None
            node = node[part]
        return node

    def number(self, sec, key, default=None, unit_key=None):
        table = self.section(sec, required=False) or {}
        if key not in table:
            if default is None:
                self.issues.append(f"missing required field {sec}.{key}")
                return math.nan
            return default
        raw = table[key]
        unit = None
        if isinstance(raw, dict):
            unit = raw.get("unit")
            raw = raw.get("value")
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            self.issue(sec, key, f"expected a number, got {raw!r}")
            return math.nan
        spec = UNITS.get(unit_key or key)
        if spec is None:
            if unit not in (None, "-"):
                self.issue(sec, key, f"field takes no unit, got {unit!r}")
            return float(raw)
        si_unit, comp_unit, factors = spec
        if unit is None:
            unit = comp_unit if self.unit_system == "companion" else si_unit
        if unit not in factors:
            self.issue(sec, key, f"unit {unit!r} not valid here (allowed: {', '.join(factors)})")
            return math.nan
        return float(raw) * factors[unit]

    def integer(self, sec, key, default=None):
        table = self.section(sec, required=False) or {}
        if key not in table:
            if default is None:
                self.issues.append(f"missing required field {sec}.{key}")
                return 0
            return default
        v = table[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.issue(sec, key, f"expected an integer, got {v!r}")
            return 0
        return v

    def string(self, sec, key, default, choices):
        table = self.section(sec, required=False) or {}
        v = table.get(key, default)
        if v not in choices:
            self.issue(sec, key, f"expected one of {sorted(choices)}, got {v!r}")
        return v

    def boolean(self, sec, key, default):
        table = self.section(sec, required=False) or {}
        v = table.get(key, default)
        if not isinstance(v, bool):
            self.issue(sec, key, f"expected true/false, got {v!r}")
            return default
        return v

    def floats(self, sec, key, length=None, unit_key=None):
        table = self.section(sec, required=False) or {}
        if key not in table:
            self.issues.append(f"missing required field {sec}.{key}")
            return ()
        raw = table[key]
        unit = None
        if isinstance(raw, dict):
            unit = raw.get("unit")
            raw = raw.get("value")
        if not isinstance(raw, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
            self.issue(sec, key, "expected a list of numbers")
            return ()
        if length is not None and len(raw) != length:
            self.issue(sec, key, f"expected {length} values, got {len(raw)}")
        factor = 1.0
        if unit_key is not None:
            si_unit, comp_unit, factors = UNITS[unit_key]
            unit = unit or (comp_unit if self.unit_system == "companion" else si_unit)
            if unit not in factors:
                self.issue(sec, key, f"unit {unit!r} not valid here (allowed: {', '.join(factors)})")
            factor = factors.get(unit, math.nan)
        return tuple(float(v) * factor for v in raw)


_CELL_FLOATS = ("faraday_constant", "gas_constant", "temperature", "electrode_area",
                "L_p", "L_s", "L_n", "Rp_p", "Rp_n", "eps_p", "eps_s", "eps_n",
                "epsf_p", "epsf_n", "cmax_p", "cmax_n", "theta_p_min", "theta_p_max",
                "one_c_current")


def _read_ocp(r: _Reader, sec: str, side: str) -> OcpSet:
    kind = r.string(sec, "kind", None, set(OCP_KINDS[side]))
    coeffs = r.floats(sec, "coeffs", OCP_KINDS[side].get(kind))
    return OcpSet(kind, coeffs)


def _read_cell(r: _Reader, sec: str) -> CellConfig:
    vals = {k: r.number(sec, k) for k in _CELL_FLOATS}
    return CellConfig(
        **vals,
        ocp_positive=_read_ocp(r, f"{sec}.ocp_positive", "positive"),
        ocp_negative=_read_ocp(r, f"{sec}.ocp_negative", "negative"),
        kappa_coeffs=r.floats(sec, "kappa_coeffs", 5),
        n_el=r.integer(sec, "n_el", 10),
    )


def _read_params(r: _Reader, sec: str) -> ParameterVector:
    return ParameterVector(*(r.number(sec, k) for k in PARAMETER_NAMES))


def _read_state(r: _Reader, sec: str, n_el: int) -> StateVector:
    table = r.section(sec, required=False) or {}
    ce_raw = table.get("ce")
    if isinstance(ce_raw, dict):
        ce_val = ce_raw.get("value")
    else:
        ce_val = ce_raw
    if isinstance(ce_val, list):
        ce = r.floats(sec, "ce", 3 * n_el, unit_key="ce")
    else:
        ce = (r.number(sec, "ce"),) * (3 * n_el)
    return StateVector(r.number(sec, "cavg_p"), r.number(sec, "cavg_n"),
                       r.number(sec, "qavg_p", 0.0), r.number(sec, "qavg_n", 0.0), ce)


def _read_simple(r: _Reader, sec: str, cls, choices=None):
    """Read a flat dataclass section, falling back to defaults."""
    choices = choices or {}
    defaults = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        d = getattr(defaults, f.name)
        if f.name in choices:
            kwargs[f.name] = r.string(sec, f.name, d, choices[f.name])
        elif isinstance(d, bool):
            kwargs[f.name] = r.boolean(sec, f.name, d)
        elif isinstance(d, int):
            kwargs[f.name] = r.integer(sec, f.name, d)
        else:
            kwargs[f.name] = r.number(sec, f.name, d)
    return cls(**kwargs)


def _read_p2d(r: _Reader, cell: CellConfig, phi_true: ParameterVector) -> P2dConfig | None:
    table = r.section("p2d", required=False)
    if table is None:
        return None
    p2d_cell = cell
    if "cell" in table:
        p2d_cell = _read_cell(r, "p2d.cell")
    params = _read_params(r, "p2d.parameters") if "parameters" in table else phi_true
    n_x = table.get("n_x", [10, 10, 10])
    if not (isinstance(n_x, list) and len(n_x) == 3 and all(isinstance(v, int) for v in n_x)):
        r.issue("p2d", "n_x", "expected three integers")
        n_x = [10, 10, 10]
    return P2dConfig(
        cell=p2d_cell, params=params,
        sigma_p=r.number("p2d", "sigma_p"), sigma_n=r.number("p2d", "sigma_n"),
        n_x=tuple(n_x), n_r=r.integer("p2d", "n_r", 10),
        dt=r.number("p2d", "dt", 5.0),
        newton_tol=r.number("p2d", "newton_tol", 1e-9),
        max_newton=r.integer("p2d", "max_newton", 20),
    )


def config_from_dict(data: dict, text: str = "", source: str | None = None) -> RunConfig:
    """Build and validate a :class:`RunConfig` from a parsed TOML mapping."""
    unit_system = data.get("unit_system", "SI")
    r = _Reader(data, text, unit_system)
    if unit_system not in ("SI", "companion"):
        r.issues.append(f"unit_system must be 'SI' or 'companion', got {unit_system!r}")
    cell = _read_cell(r, "cell")
    phi_true = _read_params(r, "parameters.true")
    phi_init = _read_params(r, "parameters.initial")
    x0 = _read_state(r, "initial_state", cell.n_el if isinstance(cell.n_el, int) else 10)
    integrator = _read_simple(r, "integrator", IntegratorConfig,
                              {"method": {"exact", "bdf1", "bdf2"}})
    design = _read_simple(r, "design", DesignConfig, {"gradient": {"fd", "adjoint"}})
    estimation = _read_simple(r, "estimation", EstimationConfig)
    campaign = _read_simple(r, "campaign", CampaignConfig,
                            {"plant": {"spme", "p2d"},
                             "method": {"optimal-doe", "cc-discharge", "multistep"}})
    p2d = _read_p2d(r, cell, phi_true)
    extras = {k: v for k, v in data.items() if k.startswith("reference")}
    cfg = RunConfig(cell, phi_true, phi_init, x0, integrator, design, estimation,
                    campaign, p2d, source=source, extras=extras)
    # a field the reader already rejected is not reported again by the checks
    flagged = {_issue_field(m) for m in r.issues}
    issues = r.issues + [m for m in validate(cfg, text) if _issue_field(m) not in flagged]
    if issues:
        raise ConfigError(issues, path=source)
    return cfg


def _issue_field(msg: str) -> str:
    if msg.startswith("missing required field "):
        return msg.split()[3]
    return re.split(r"[\s:(]", msg, maxsplit=1)[0]


def load_config(path=None) -> RunConfig:
    """Load and fully validate a TOML configuration file.

    ``path`` defaults to ``$SPMEDOE_CONFIG``. Names without a directory that
    match a bundled preset (``paper``, ``companion``, ``p2d_example``) load
    the preset.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV)
        if not path:
            raise ConfigError(f"no config given and ${CONFIG_ENV} is unset")
    path = str(path)
    if not os.path.exists(path) and path in preset_names():
        text = resources.files("spmedoe.presets").joinpath(f"{path}.toml").read_text()
        source = f"preset:{path}"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", path=path) from None
        source = path
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}", path=source) from None
    return config_from_dict(data, text, source)


def preset_names() -> list[str]:
    files = resources.files("spmedoe.presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".toml"))


def load_preset(name: str) -> RunConfig:
    return load_config(name)


# --------------------------------------------------------------------------
# validation

def _positive(issues, label, value):
    if not (value > 0 and math.isfinite(value)):
        issues.append(f"{label}: must be strictly positive, got {value!r}")


def validate_cell(cell: CellConfig, prefix: str = "cell") -> list[str]:
    issues: list[str] = []
    for name in ("faraday_constant", "gas_constant", "temperature", "electrode_area",
                 "L_p", "L_s", "L_n", "Rp_p", "Rp_n", "cmax_p", "cmax_n", "one_c_current"):
        _positive(issues, f"{prefix}.{name}", getattr(cell, name))
    for name in ("eps_p", "eps_s", "eps_n"):
        v = getattr(cell, name)
        if not 0.0 < v < 1.0:
            issues.append(f"{prefix}.{name}: porosity must lie in (0, 1), got {v!r}")
    for name, eps in (("epsf_p", cell.eps_p), ("epsf_n", cell.eps_n)):
        v = getattr(cell, name)
        if not 0.0 <= v < 1.0:
            issues.append(f"{prefix}.{name}: filler fraction must lie in [0, 1), got {v!r}")
        elif 0.0 < eps < 1.0 and v + eps >= 1.0:
            issues.append(f"{prefix}.{name}: no active material left (eps + eps_f >= 1)")
    for name in ("theta_p_min", "theta_p_max"):
        v = getattr(cell, name)
        if not 0.0 < v < 1.0:
            issues.append(f"{prefix}.{name}: stoichiometry must lie in (0, 1), got {v!r}")
    if cell.theta_p_min == cell.theta_p_max:
        issues.append(f"{prefix}.theta_p_min/theta_p_max: must differ")
    if not isinstance(cell.n_el, int) or cell.n_el < 2:
        issues.append(f"{prefix}.n_el: need at least 2 volumes per layer, got {cell.n_el!r}")
    for side, ocp in (("positive", cell.ocp_positive), ("negative", cell.ocp_negative)):
        expected = OCP_KINDS[side].get(ocp.kind)
        if expected is not None and len(ocp.coeffs) != expected:
            issues.append(f"{prefix}.ocp_{side}.coeffs: {ocp.kind} form needs {expected} coefficients")
        if not all(math.isfinite(c) for c in ocp.coeffs):
            issues.append(f"{prefix}.ocp_{side}.coeffs: non-finite coefficient")
    if len(cell.kappa_coeffs) != 5:
        issues.append(f"{prefix}.kappa_coeffs: need 5 coefficients h1..h5")
    return issues


def validate_params(phi: ParameterVector, prefix: str) -> list[str]:
    issues: list[str] = []
    for name in PARAMETER_NAMES:
        _positive(issues, f"{prefix}.{name}", getattr(phi, name))
    if not 0.0 < phi.t_plus < 1.0:
        issues.append(f"{prefix}.t_plus: transference number must lie in (0, 1), got {phi.t_plus!r}")
    return issues


def validate(cfg: RunConfig, text: str = "") -> list[str]:
    """Check every invariant of every section; returns all failures."""
    issues = validate_cell(cfg.cell)
    issues += validate_params(cfg.phi_true, "parameters.true")
    issues += validate_params(cfg.phi_init, "parameters.initial")
    x0 = cfg.x0
    if not 0.0 < x0.cavg_p < cfg.cell.cmax_p:
        issues.append(f"initial_state.cavg_p: must lie in (0, cmax_p), got {x0.cavg_p!r}")
    if not 0.0 < x0.cavg_n < cfg.cell.cmax_n:
        issues.append(f"initial_state.cavg_n: must lie in (0, cmax_n), got {x0.cavg_n!r}")
    if isinstance(cfg.cell.n_el, int) and len(x0.ce) != 3 * cfg.cell.n_el:
        issues.append(f"initial_state.ce: expected {3 * cfg.cell.n_el} volumes, got {len(x0.ce)}")
    if not all(c > 0 for c in x0.ce):
        issues.append("initial_state.ce: electrolyte concentrations must be positive")

    it = cfg.integrator
    _positive(issues, "integrator.dt", it.dt)

    d = cfg.design
    _positive(issues, "design.i_max_c", d.i_max_c)
    _positive(issues, "design.t_s", d.t_s)
    _positive(issues, "design.h", d.h)
    _positive(issues, "design.fd_step", d.fd_step)
    if not d.v_min < d.v_max:
        issues.append(f"design.v_min/v_max: need v_min < v_max, got {d.v_min} >= {d.v_max}")
    issues += _horizon_issues("design", d.horizon, d.t_s, d.M)
    if d.multistart < 1:
        issues.append("design.multistart: must be >= 1")

    e = cfg.estimation
    if not 0.0 < e.lower < 1.0 < e.upper:
        issues.append(f"estimation.lower/upper: need 0 < lower < 1 < upper, got {e.lower}, {e.upper}")
    _positive(issues, "estimation.h", e.h)

    c = cfg.campaign
    if c.n_experiments < 1:
        issues.append(f"campaign.n_experiments: must be >= 1, got {c.n_experiments}")
    if not c.sigma_y2 >= 0:
        issues.append(f"campaign.sigma_y2: must be >= 0, got {c.sigma_y2}")
    _positive(issues, "campaign.reset_charge_rate", c.reset_charge_rate)
    if c.reset_rest < 0:
        issues.append("campaign.reset_rest: must be >= 0")
    if c.method == "optimal-doe":
        issues += _horizon_issues("campaign", c.experiment_duration, c.t_s, c.M)
    elif not _divides(c.t_s, c.experiment_duration):
        issues.append("campaign.experiment_duration: must be a multiple of t_s")
    if c.plant == "p2d" and cfg.p2d is None:
        issues.append("campaign.plant = 'p2d': P2D cell parameters required "
                      "(add a [p2d] section with the P2D cell data)")
    if cfg.p2d is not None:
        p = cfg.p2d
        issues += validate_cell(p.cell, "p2d.cell")
        issues += validate_params(p.params, "p2d.parameters")
        _positive(issues, "p2d.sigma_p", p.sigma_p)
        _positive(issues, "p2d.sigma_n", p.sigma_n)
        _positive(issues, "p2d.dt", p.dt)
        if min(p.n_x) < 3 or p.n_r < 3:
            issues.append("p2d.n_x/n_r: mesh counts must be >= 3")

    if text:
        issues = [_annotate(text, msg) for msg in issues]
    return issues


def _divides(step, total) -> bool:
    if step <= 0:
        return False
    n = total / step
    return abs(n - round(n)) < 1e-9 and round(n) >= 1


def _horizon_issues(sec, horizon, t_s, M) -> list[str]:
    issues = []
    if not horizon > 0:
        issues.append(f"{sec}.horizon: must be positive, got {horizon}")
        return issues
    if not _divides(t_s, horizon):
        issues.append(f"{sec}: horizon {horizon} is not a multiple of t_s {t_s}")
        return issues
    n = round(horizon / t_s)
    if M < 1 or n % M:
        issues.append(f"{sec}.M: {n} samples not divisible into {M} blocks")
    return issues


def _annotate(text: str, msg: str) -> str:
    m = re.match(r"([\w.]+?)\.(\w+)(?:/\w+)?:", msg)
    if not m or "(line" in msg:
        return msg
    line = _field_line(text, m.group(1), m.group(2))
    return msg if line is None else f"{msg} [line {line}]"


# --------------------------------------------------------------------------
# serialization

def _cell_dict(cell: CellConfig) -> dict:
    d = {k: getattr(cell, k) for k in _CELL_FLOATS}
    d["n_el"] = cell.n_el
    d["kappa_coeffs"] = list(cell.kappa_coeffs)
    d["ocp_positive"] = {"kind": cell.ocp_positive.kind, "coeffs": list(cell.ocp_positive.coeffs)}
    d["ocp_negative"] = {"kind": cell.ocp_negative.kind, "coeffs": list(cell.ocp_negative.coeffs)}
    return d


def config_to_dict(cfg: RunConfig) -> dict:
    """SI-unit mapping that :func:`config_from_dict` reads back identically."""
    out: dict[str, Any] = {"unit_system": "SI", "cell": _cell_dict(cfg.cell)}
    out["parameters"] = {
        "true": {n: getattr(cfg.phi_true, n) for n in PARAMETER_NAMES},
        "initial": {n: getattr(cfg.phi_init, n) for n in PARAMETER_NAMES},
    }
    x0 = cfg.x0
    out["initial_state"] = {"cavg_p": x0.cavg_p, "cavg_n": x0.cavg_n,
                            "qavg_p": x0.qavg_p, "qavg_n": x0.qavg_n, "ce": list(x0.ce)}
    for name in ("integrator", "design", "estimation", "campaign"):
        out[name] = dataclasses.asdict(getattr(cfg, name))
    if cfg.p2d is not None:
        p = cfg.p2d
        out["p2d"] = {"sigma_p": p.sigma_p, "sigma_n": p.sigma_n, "n_x": list(p.n_x),
                      "n_r": p.n_r, "dt": p.dt, "newton_tol": p.newton_tol,
                      "max_newton": p.max_newton, "cell": _cell_dict(p.cell),
                      "parameters": {n: getattr(p.params, n) for n in PARAMETER_NAMES}}
    out.update(cfg.extras)
    return out


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(dumps_config(cfg).encode()).hexdigest()


def replace(cfg, **changes):
    """``dataclasses.replace`` that also accepts ``section__field`` keys."""
    nested: dict[str, dict] = {}
    flat = {}
    for key, value in changes.items():
        if "__" in key:
            sec, name = key.split("__", 1)
            nested.setdefault(sec, {})[name] = value
        else:
            flat[key] = value
    for sec, vals in nested.items():
        flat[sec] = dataclasses.replace(getattr(cfg, sec), **vals)
    return dataclasses.replace(cfg, **flat)
