"""SVG figures for samples and experiment tables (matplotlib, deterministic output)."""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

from .oracle import EVEN, ODD  # noqa: E402

plt.rcParams["svg.hashsalt"] = "doublecurrent"
plt.rcParams["svg.fonttype"] = "none"

HOLE_COLORS = {True: "#c0392b", False: "#2471a3"}


def _save(fig, path: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(suffix=".svg", dir=d)
    os.close(fd)
    fig.savefig(tmp, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)


def render_sample(m, classes, family, path: str, title: str = ""):
    """Trace edges (odd dark, even light) with cluster outer boundaries solid and holes
    dashed, coloured by hole parity."""
    fig, ax = plt.subplots(figsize=(6, 6))
    pos = m.positions
    seg = pos[m.edges]
    for cls, color, lw in ((EVEN, "#b0b0b0", 0.6), (ODD, "#202020", 1.0)):
        sel = np.asarray(classes) == cls
        if sel.any():
            ax.add_collection(LineCollection(seg[sel], colors=color, linewidths=lw))
    for P, meta in zip(family.loops, family.meta):
        Q = np.vstack([P, P[:1]])
        if meta.outer:
            ax.plot(Q[:, 0], Q[:, 1], color="#117a65", lw=0.8)
        else:
            ax.plot(Q[:, 0], Q[:, 1], color=HOLE_COLORS[bool(meta.odd)], lw=0.8, ls="--")
    ax.set_aspect("equal")
    ax.autoscale()
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, path)


def render_moments(report, path: str):
    rows = [r for r in report.rows if r.target is not None and len(r.points) in (2, 4)]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    k = np.arange(len(rows))
    ax.errorbar(k, [r.estimate for r in rows], yerr=[3 * r.se for r in rows], fmt="o", label="estimate, 3 se")
    ax.plot(k, [r.target for r in rows], "x", color="#c0392b", label="pairing target")
    ax.set_xticks(k, ["-".join(map(str, r.points)) for r in rows], rotation=45, fontsize=7)
    ax.set_ylabel("moment")
    ax.legend(fontsize=8)
    _save(fig, path)


def render_cluster_counts(table, path: str):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(table.eps, table.ratio, yerr=table.ratio_se, fmt="o-", label="N(eps) / log(1/eps)")
    ax.axhline(table.limit, color="#c0392b", ls="--", label="limit constant")
    ax.set_xscale("log")
    ax.set_xlabel("eps")
    ax.legend(fontsize=8)
    _save(fig, path)


def render_exit_times(report, path: str):
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.bar(["first", "second", "sum"], [report.first, report.second, report.estimate], color="#5d6d7e")
    ax.axhline(report.target, color="#c0392b", ls="--")
    ax.set_ylabel("mean exit time")
    _save(fig, path)


def render_crossings(radii, probs, path: str):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, p in probs.items():
        ax.plot(radii, p, "o-", label=name)
    ax.set_xlabel("outer radius (mesh units)")
    ax.set_ylabel("probability")
    ax.legend(fontsize=8)
    _save(fig, path)
