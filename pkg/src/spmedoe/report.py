"""Static SVG line charts and text tables from campaign run directories."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .artifacts import load_summary, read_columns, summary_table  # noqa: E402
from .config import PARAMETER_NAMES  # noqa: E402

plt.rcParams["svg.hashsalt"] = "spmedoe"   # stable element ids between runs
_META = {"Date": None, "Creator": None}


def _label(summary, directory):
    return f"{summary['method']} ({Path(directory).name})"


def _records(directory):
    files = sorted((Path(directory) / "records").glob("experiment_*.csv"))
    t, u, y, offset = [], [], [], 0.0
    for f in files:
        cols = read_columns(f)
        if cols["time_s"].size == 0:
            continue
        dt = cols["time_s"][1] - cols["time_s"][0] if cols["time_s"].size > 1 else 0.0
        t.append(cols["time_s"] + offset)
        u.append(cols["current_A"])
        y.append(cols["voltage_V"])
        offset = t[-1][-1] + dt
    if not t:
        return np.empty(0), np.empty(0), np.empty(0)
    return np.concatenate(t), np.concatenate(u), np.concatenate(y)


def plot_voltage(runs, path):
    """Measured voltage (top) and applied current (bottom) against cumulative
    experiment time, one line per run."""
    fig, (ax_v, ax_i) = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
    for directory, summary in runs:
        t, u, y = _records(directory)
        ax_v.plot(t, y, lw=0.8, label=_label(summary, directory))
        ax_i.plot(t, u, lw=0.8)
    ax_v.set_ylabel("voltage [V]")
    ax_i.set_ylabel("current [A]")
    ax_i.set_xlabel("cumulative experiment time [s]")
    ax_v.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_variances(runs, path):
    """Scaled parameter variance against experiment number, one panel per parameter."""
    fig, axes = plt.subplots(2, 4, figsize=(11, 5), sharex=True)
    axes = axes.ravel()
    for directory, summary in runs:
        ex = [e for e in summary["experiments"] if not e["failed"]]
        idx = [e["index"] for e in ex]
        var = np.array([e["variances"] for e in ex]) if ex else np.empty((0, len(PARAMETER_NAMES)))
        for j, name in enumerate(PARAMETER_NAMES):
            if var.size and np.any(var[:, j] > 0):
                axes[j].semilogy(idx, var[:, j], marker="o", ms=3, label=_label(summary, directory))
            axes[j].set_title(name, fontsize=9)
    for ax in axes[4:]:
        ax.set_xlabel("experiment")
    for ax in axes[::4]:
        ax.set_ylabel("variance (scaled)")
    axes[-1].axis("off")
    handles, labels = axes[0].get_legend_handles_labels()
    if handles:
        axes[-1].legend(handles, labels, fontsize=8, loc="center")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_distance(runs, path):
    """Euclidean distance of the scaled estimate from the true value."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for directory, summary in runs:
        idx = [e["index"] for e in summary["experiments"]]
        d = [e["distance"] for e in summary["experiments"]]
        ax.semilogy(idx, d, marker="o", ms=3, label=_label(summary, directory))
    ax.set_xlabel("experiment")
    ax.set_ylabel("|phi_hat - phi_true| (scaled)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def render(run_dirs, out_dir) -> list[Path]:
    """Write ``voltage.svg``, ``variances.svg``, ``distance.svg`` and
    ``tables.txt`` for the given campaign run directories into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = [(Path(d), load_summary(d)) for d in run_dirs]
    files = [out / "voltage.svg", out / "variances.svg", out / "distance.svg", out / "tables.txt"]
    plot_voltage(runs, files[0])
    plot_variances(runs, files[1])
    plot_distance(runs, files[2])
    files[3].write_text("\n".join(f"== {d}\n{summary_table(s)}" for d, s in runs))
    return files
