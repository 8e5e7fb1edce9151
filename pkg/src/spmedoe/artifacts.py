"""Run directories, delimited time series, summaries and manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import PARAMETER_NAMES, RunConfig, config_digest, dumps_config
from .model import soc


def run_dir(base, cfg: RunConfig, seed: int) -> Path:
    """``<base>/<config hash>-seed<seed>``, created if needed."""
    path = Path(base) / f"{config_digest(cfg)[:12]}-seed{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, cfg: RunConfig, command: str, seed: int, started: float, argv=None):
    """Write ``manifest.json``: config snapshot, version, seed, the command
    history of this directory and a sha256 digest of every other file."""
    directory = Path(directory)
    (directory / "config.toml").write_text(dumps_config(cfg))
    path = directory / "manifest.json"
    history = []
    if path.is_file():
        try:
            history = json.loads(path.read_text()).get("commands", [])
        except (ValueError, AttributeError):
            history = []
    history.append({
        "command": command,
        "argv": list(argv) if argv is not None else None,
        "started": _stamp(started),
        "finished": _stamp(time.time()),
    })
    files = {}
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p != path:
            files[p.relative_to(directory).as_posix()] = sha256_file(p)
    manifest = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": seed,
        "config_digest": config_digest(cfg),
        "config_file": "config.toml",
        "commands": history,
        "files": files,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _stamp(t):
    return time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t))


def verify_manifest(directory) -> list[str]:
    """Files whose digest no longer matches the manifest."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    return [name for name, digest in manifest["files"].items()
            if not (directory / name).is_file() or sha256_file(directory / name) != digest]


# --------------------------------------------------------------------------
# time series

def write_input_sequence(path, inputs, t_s):
    """Input sequence file: ``time_s,current_A``; sample k holds from k*t_s."""
    u = np.asarray(inputs, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "current_A"])
        for k, v in enumerate(u):
            w.writerow([repr(k * float(t_s)), repr(float(v))])


def read_columns(path):
    """Delimited file with a header row -> dict of float arrays."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    head, body = [h.strip() for h in rows[0]], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body]) if body else np.empty((0, len(head)))
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(head):
        raise ValueError(f"{path}: rows do not match the {len(head)}-column header")
    return {name: data[:, i] for i, name in enumerate(head)}


def sample_time(times, default=None) -> float:
    """Uniform spacing of ``times``; ``default`` for fewer than two samples."""
    t = np.asarray(times, dtype=float)
    if t.size < 2:
        if default is None:
            raise ValueError("cannot infer the sampling time from fewer than two samples")
        return float(default)
    d = np.diff(t)
    if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])) or d[0] <= 0:
        raise ValueError("time column is not uniformly increasing")
    return float(d[0])


def coulomb_soc(inputs, t_s, soc0, one_c_current):
    """State of charge [%] at the start of every sample by charge counting."""
    u = np.asarray(inputs, dtype=float)
    removed = np.concatenate([[0.0], np.cumsum(u)[:-1]]) * t_s if u.size else u
    return soc0 - 100.0 * removed / (3600.0 * one_c_current)


def write_record(path, inputs, outputs, t_s, cfg: RunConfig):
    """Measured record in the trajectory layout ``time_s,current_A,voltage_V,soc_pct``."""
    u = np.asarray(inputs, dtype=float)
    y = np.asarray(outputs, dtype=float)
    s = coulomb_soc(u, t_s, soc(cfg.x0.as_array(), cfg.cell), cfg.cell.one_c_current)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "current_A", "voltage_V", "soc_pct"])
        for k in range(y.size):
            w.writerow([repr(k * float(t_s)), repr(float(u[k])), repr(float(y[k])), repr(float(s[k]))])


# --------------------------------------------------------------------------
# campaign summaries

def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return f"{v:.4g}"


def summary_table(summary: dict) -> str:
    """Plain-text per-experiment tables of a campaign summary."""
    ex = summary["experiments"]
    lines = [f"method: {summary['method']}   plant: {summary['plant']}   seed: {summary['seed']}",
             f"config: {summary['config_digest'][:12]}   stop: {summary['stop_reason']}", ""]
    head = ["exp"] + list(PARAMETER_NAMES) + ["distance", "cost"]
    rows = [[str(e["index"])] + [_fmt(v) for v in e["estimate"]] + [_fmt(e["distance"]), _fmt(e["cost"])]
            for e in ex]
    lines += ["scaled estimates", _grid(head, rows), ""]
    head = ["exp"] + list(PARAMETER_NAMES) + ["trace", "kappa", "gamma", "val_rms_V"]
    rows = [[str(e["index"])] + [_fmt(v) for v in e["variances"]]
            + [_fmt(e["trace"]), _fmt(e["kappa"]), _fmt(e["gamma"]), _fmt(e["validation_rms"])] for e in ex]
    lines += ["scaled variances and conditioning", _grid(head, rows)]
    failed = [e for e in ex if e["failed"]]
    if failed:
        lines += ["", "failed experiments"] + [f"  {e['index']}: {e['error']}" for e in failed]
    return "\n".join(lines) + "\n"


def _grid(head, rows):
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(head)]
    out = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    out += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(out)


def write_summary(directory, summary: dict):
    directory = Path(directory)
    (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=True))
    (directory / "summary.txt").write_text(summary_table(summary))


def load_summary(directory) -> dict:
    return json.loads((Path(directory) / "summary.json").read_text())
