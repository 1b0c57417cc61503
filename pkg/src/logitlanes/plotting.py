"""Snapshot figures: densities and speeds per class and per lane along the ring."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .equilibrium import BatchSplit  # noqa: E402
from .model import GridState, NetworkSpec  # noqa: E402

# fixed salt and no date so repeated runs write byte-identical SVG
matplotlib.rcParams["svg.hashsalt"] = "logitlanes"
STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
}
CLASS_COLORS = ("tab:blue", "tab:green", "tab:orange", "tab:purple")
CLASS_WIDTHS = (2.4, 1.6, 1.2, 1.0)


def plot_snapshot(path: str | Path, spec: NetworkSpec, t: float, state: GridState, split: BatchSplit, title: str = ""):
    x = state.centers
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
        (ax_rc, ax_vc), (ax_rl, ax_vl) = axes
        for k, d in enumerate(spec.classes):
            style = dict(color=CLASS_COLORS[k % 4], lw=CLASS_WIDTHS[k % 4])
            ax_rc.plot(x, state.rho[:, k], label=f"class {d}", **style)
            ax_vc.plot(x, split.class_speed[:, k], label=f"class {d}", **style)
        ax_rc.plot(x, state.rho.sum(axis=1), color="tab:red", lw=0.8, label="total")
        for a, i in enumerate(spec.lanes):
            ax_rl.plot(x, split.lane_density[:, a], label=f"lane {i}")
            ax_vl.plot(x, split.lane_speed[:, a], label=f"lane {i}")
        ax_rc.set_ylabel("density (veh/km)")
        ax_vc.set_ylabel("speed (km/h)")
        ax_rl.set_ylabel("lane density (veh/km)")
        ax_vl.set_ylabel("lane speed (km/h)")
        ax_rc.set_title("densities per class")
        ax_vc.set_title("speeds per class")
        ax_rl.set_title("densities per lane")
        ax_vl.set_title("speeds per lane")
        for ax in axes.flat:
            ax.legend(loc="best")
        for ax in axes[1]:
            ax.set_xlabel("x (km)")
        fig.suptitle(f"{title} t = {t * 60:.2f} min".strip())
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
