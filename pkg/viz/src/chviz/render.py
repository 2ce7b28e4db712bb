"""Matplotlib rendering of snapshots and run summaries.

All output is deterministic for a fixed style: the Agg backend, pinned dpi,
and no timestamps in the image metadata.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PolyCollection
from matplotlib.tri import Triangulation

from . import io as vio


@dataclass
class Style:
    dpi: int = 110
    cmap: str = "RdBu_r"
    vmin: float = -1.0
    vmax: float = 1.0
    levelset_color: str = "black"
    mesh_color: str = "0.4"
    mesh_linewidth: float = 0.15
    figsize: tuple = (5.0, 4.2)


def _new_axes(style):
    fig, ax = plt.subplots(figsize=style.figsize, dpi=style.dpi)
    ax.set_aspect("equal")
    ax.set_xlim(-1, 1)
    ax.set_ylim(-1, 1)
    return fig, ax


def _save(fig, out_path, style):
    fig.savefig(out_path, dpi=style.dpi, metadata={"Software": "chviz"})
    plt.close(fig)


def render_snapshot(snapshot, out_path, levelset=None, estimates=None,
                    wireframe=False, style=None, title=None):
    """Filled field of u with optional wireframe, level set and estimator map.

    With ``estimates`` (rows of an estimator CSV restricted to one time),
    elements are flat-colored by eta_tilde instead of the solution field.
    """
    style = style or Style()
    fig, ax = _new_axes(style)
    if estimates is not None:
        order = np.argsort(estimates["element_id"])
        vals = estimates["eta_tilde"][order]
        verts = snapshot.coords[snapshot.triangles]
        pc = PolyCollection(verts, array=vals, cmap="viridis", edgecolors="none")
        ax.add_collection(pc)
        fig.colorbar(pc, ax=ax, label="eta_tilde")
    else:
        tri = Triangulation(snapshot.node_coords[:, 0], snapshot.node_coords[:, 1],
                            snapshot.plot_triangles)
        pc = ax.tripcolor(tri, snapshot.u, shading="gouraud", cmap=style.cmap,
                          vmin=style.vmin, vmax=style.vmax)
        fig.colorbar(pc, ax=ax, label="u")
    if wireframe:
        ax.triplot(snapshot.coords[:, 0], snapshot.coords[:, 1],
                   snapshot.triangles, color=style.mesh_color,
                   linewidth=style.mesh_linewidth)
    if levelset is not None:
        for p in levelset.polylines:
            pts = p.points
            if p.closed and len(pts):
                pts = np.vstack([pts, pts[:1]])
            ax.plot(pts[:, 0], pts[:, 1], color=style.levelset_color, linewidth=1.0)
    if title:
        ax.set_title(title)
    _save(fig, out_path, style)
    return out_path


@dataclass
class SeriesReport:
    images: list = field(default_factory=list)
    plots: list = field(default_factory=list)
    missing: list = field(default_factory=list)


def _line_plot(x, y, xlabel, ylabel, out_path, style, hline=None):
    fig, ax = plt.subplots(figsize=(5.0, 3.4), dpi=style.dpi)
    ax.plot(x, y, marker="o", markersize=3)
    if hline is not None:
        ax.axhline(hline, color="red", linestyle="--", linewidth=1.0,
                   label="TOL")
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _save(fig, out_path, style)
    return out_path


def render_series(run_dir, out_dir, style=None):
    """One image per snapshot plus E(t), DOFs(t), energy(t) and xi_hat(t)."""
    style = style or Style()
    os.makedirs(out_dir, exist_ok=True)
    report = SeriesReport()
    names = sorted(os.listdir(run_dir))
    snaps = [n for n in names if n.startswith("snap_") and n.endswith(".txt")]
    for name in snaps:
        stem = name[:-4]
        ls_name = "ls_" + stem.split("_", 1)[1] + ".txt"
        ls = None
        if ls_name in names:
            ls = vio.read_levelset(os.path.join(run_dir, ls_name))
        else:
            report.missing.append(ls_name)
        snap = vio.read_snapshot(os.path.join(run_dir, name))
        out = os.path.join(out_dir, stem + ".png")
        render_snapshot(snap, out, levelset=ls, style=style, title=stem)
        report.images.append(out)

    tol = None
    cfg_path = os.path.join(run_dir, "config.txt")
    if os.path.exists(cfg_path):
        try:
            tol = float(vio.read_config(cfg_path).get("tol", "nan"))
        except ValueError:
            tol = None

    blocks_path = os.path.join(run_dir, "blocks.csv")
    if os.path.exists(blocks_path):
        blocks = vio.read_csv(blocks_path)
        acc = blocks["action"] == "accept+coarsen"
        t = blocks["t"][acc]
        report.plots.append(_line_plot(
            t, blocks["E"][acc], "t", "E", os.path.join(out_dir, "E_vs_t.png"),
            style, hline=tol))
        report.plots.append(_line_plot(
            t, blocks["dofs"][acc], "t", "DOFs",
            os.path.join(out_dir, "dofs_vs_t.png"), style))
        report.plots.append(_line_plot(
            t, blocks["energy"][acc], "t", "energy",
            os.path.join(out_dir, "energy_vs_t.png"), style))
    else:
        report.missing.append("blocks.csv")

    bounds_path = os.path.join(run_dir, "bounds.csv")
    if os.path.exists(bounds_path):
        bounds = vio.read_csv(bounds_path)
        report.plots.append(_line_plot(
            bounds["t"], bounds["xi_hat"], "t", "xi_hat",
            os.path.join(out_dir, "xi_hat_vs_t.png"), style))
    else:
        report.missing.append("bounds.csv")
    return report
