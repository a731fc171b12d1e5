"""Optional figures; matplotlib is imported only when a plot is requested."""
from __future__ import annotations

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise ImportError("plotting needs matplotlib (pip install 'csstrack[plot]')") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_piezo(results, path) -> None:
    """Band of ``omega / omega_true`` per combination, nominal-free summary view."""
    plt = _pyplot()
    groups: dict = {}
    for r in results:
        key = "/".join(r.meta[k] for k in ("envelope_source", "estimator", "update_law"))
        groups.setdefault(key, []).append(r.column("omega") / r.column("omega_true"))
    fig, axes = plt.subplots(len(groups), 1, figsize=(7, 2.2 * len(groups)), sharex=True, squeeze=False)
    for ax, (key, traj) in zip(axes[:, 0], sorted(groups.items())):
        T = np.vstack(traj)
        k = np.arange(T.shape[1])
        ax.fill_between(k, np.nanmin(T, 0), np.nanmax(T, 0), alpha=0.4)
        ax.plot(k, np.nanmedian(T, 0), lw=0.8)
        ax.axhline(1.0, color="k", lw=0.5)
        ax.set_ylabel("omega / true")
        ax.set_title(key, fontsize=9)
    axes[-1, 0].set_xlabel("sample")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_gyro(result, Ts: float, path) -> None:
    """Tracked and theoretical resonance in rad/time."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(result.column("omega") / Ts, lw=0.6, label="tracked")
    ax.plot(result.column("omega_true") / Ts, "k", lw=1.0, label="theoretical")
    ax.set_xlabel("sample")
    ax.set_ylabel("resonance, rad/time")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
