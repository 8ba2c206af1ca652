"""PNG figures of the CSV/PGM outputs (Agg canvas, no pyplot state)."""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .scene import ReflectivityGrid

# fixed metadata keeps repeated runs byte-identical
_META = {"Software": None}


def _figure(w=6.0, h=4.0):
    fig = Figure(figsize=(w, h), dpi=100)
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_META)


def plot_magnitude(grid: ReflectivityGrid, path, scale: str = "db", floor_db: float = 40.0, title: str = ""):
    """Magnitude image; ``scale="db"`` is relative to the peak with a floor."""
    mag = np.abs(grid.values)
    if scale == "db":
        peak = mag.max() or 1.0
        with np.errstate(divide="ignore"):
            data = np.maximum(20 * np.log10(mag / peak), -floor_db)
        label = "dB"
    else:
        data, label = mag, "|rho|"
    x0, y0 = grid.origin[0] - grid.dx / 2, grid.origin[1] - grid.dy / 2
    extent = (x0, x0 + grid.nx * grid.dx, y0, y0 + grid.ny * grid.dy)
    w = 7.0
    fig = _figure(w, max(2.5, w * grid.ny / grid.nx + 1.0))
    ax = fig.add_subplot()
    im = ax.imshow(data, origin="lower", extent=extent, cmap="gray", aspect="equal")
    fig.colorbar(im, ax=ax, label=label, shrink=0.8)
    ax.set_xlabel("along-track x [m]")
    ax.set_ylabel("range y [m]")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_trajectory(path, estimated=None, truth=None, nominal=None):
    """Sway of each trajectory against along-track position, in mm."""
    fig = _figure(6, 4)
    ax = fig.add_subplot()
    for poses, style, label in ((nominal, ":", "nominal"), (truth, "-o", "true"), (estimated, "--x", "estimated")):
        if poses:
            ax.plot([p.x for p in poses], [1e3 * p.y for p in poses], style, label=label, ms=4)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [mm]")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_trace(path, trace, truth=None):
    """Surge, sway and yaw of the accepted iterates of both stages."""
    names = ("surge [cm]", "sway [cm]", "yaw [mrad]")
    scale = np.array([100.0, 100.0, 1000.0])
    rows = [(k, stage, s.as_array() * scale, v) for k, (stage, s, v) in enumerate(trace) if stage in ("zeta", "eta")]
    fig = _figure(6, 7)
    axes = fig.subplots(4, 1, sharex=True)
    for stage, color in (("zeta", "C0"), ("eta", "C1")):
        pts = [r for r in rows if r[1] == stage]
        if not pts:
            continue
        k = [r[0] for r in pts]
        vals = np.array([r[2] for r in pts])
        for i in range(3):
            axes[i].plot(k, vals[:, i], ".-", color=color, label=stage)
        axes[3].semilogy(k, [r[3] for r in pts], ".-", color=color, label=stage)
    for i in range(3):
        if truth is not None:
            axes[i].axhline(truth.as_array()[i] * scale[i], color="k", lw=0.8, ls="--")
        axes[i].set_ylabel(names[i])
    axes[3].set_ylabel("error")
    axes[3].set_xlabel("evaluation")
    axes[0].legend(frameon=False)
    _save(fig, path)


def plot_scan(path, values, zetas, etas, axis: str, truth: float | None = None):
    fig = _figure(6, 3.5)
    ax = fig.add_subplot()
    unit = "rad" if axis == "yaw" else "m"
    ax.plot(values, zetas, label="zeta")
    ax.plot(values, etas, label="eta")
    if truth is not None:
        ax.axvline(truth, color="k", lw=0.8, ls="--")
    ax.set_xlabel(f"{axis} [{unit}]")
    ax.set_ylabel("normalized error")
    ax.legend(frameon=False)
    _save(fig, path)
