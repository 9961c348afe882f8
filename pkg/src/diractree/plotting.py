"""Figures written next to the numeric artifacts (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def response_figure(R, path: Path):
    m = R.size
    fig, axes = plt.subplots(m, 1, figsize=(7, 1.6 * m + 0.6), sharex=True, squeeze=False)
    t = R.t
    for i in range(m):
        ax = axes[i, 0]
        for j in range(m):
            ax.plot(t, R.regular[i, j].imag, lw=0.7, label=f"{R.labels[j]}")
            for ts, a in R.spikes[i][j]:
                ax.axvline(ts, color="0.6", lw=0.4)
        ax.set_ylabel(f"Im r, src {R.labels[i]}", fontsize=7)
    axes[0, 0].legend(fontsize=6, ncol=min(m, 6))
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def tw_figure(tw, path: Path):
    lam = tw.grid.points
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.2))
    for i in range(tw.size):
        ax[0].plot(lam.real, tw.M[:, i, i].real, lw=0.8, label=tw.labels[i])
        ax[1].plot(lam.real, tw.M[:, i, i].imag, lw=0.8)
    ax[0].set_title("Re M_ii")
    ax[1].set_title("Im M_ii")
    ax[0].legend(fontsize=6)
    for a in ax:
        a.set_xlabel("Re lambda")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def potentials_figure(potentials, path: Path, truth=None):
    """``potentials``: ``{name: (x, p, q)}``; ``truth`` the same keys, optional."""
    names = sorted(potentials)
    n = len(names)
    fig, axes = plt.subplots(n, 1, figsize=(6, 1.5 * n + 0.6), squeeze=False)
    for k, name in enumerate(names):
        ax = axes[k, 0]
        x, p, q = potentials[name]
        ax.plot(x, p, "C0", lw=1, label="p")
        ax.plot(x, q, "C1", lw=1, label="q")
        if truth and name in truth:
            xt, pt, qt = truth[name]
            ax.plot(xt, pt, "C0:", lw=1)
            ax.plot(xt, qt, "C1:", lw=1)
        ax.set_ylabel(name, fontsize=7)
    axes[0, 0].legend(fontsize=6)
    axes[-1, 0].set_xlabel("x")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def tree_figure(tree, path: Path):
    """Planar drawing with edges scaled by length (root at the top)."""
    adj = tree.adjacency()
    pos = {}
    leaves = []

    def leaves_under(v, parent):
        kids = [w for w, _ in adj[v] if w != parent]
        if not kids:
            leaves.append(v)
        for w in kids:
            leaves_under(w, v)

    leaves_under(tree.clamped, None)
    order = {v: k for k, v in enumerate(leaves)}

    def place(v, parent, depth):
        kids = [(w, e) for w, e in adj[v] if w != parent]
        xs = []
        for w, e in kids:
            xs.append(place(w, v, depth + e.length))
        x = np.mean(xs) if xs else order[v]
        pos[v] = (x, -depth)
        return x

    place(tree.clamped, None, 0.0)
    fig, ax = plt.subplots(figsize=(6, 4))
    for e in tree.edges:
        (x1, y1), (x2, y2) = pos[e.start], pos[e.end]
        ax.plot([x1, x2], [y1, y2], "k-", lw=1)
        ax.text((x1 + x2) / 2, (y1 + y2) / 2, f"{e.length:.2f}", fontsize=6, color="C3")
    for v, (x, y) in pos.items():
        color = "C0" if v in tree.boundary else ("C2" if v == tree.clamped else "0.4")
        ax.plot(x, y, "o", color=color, ms=4)
        ax.text(x, y, " " + v, fontsize=7)
    ax.set_axis_off()
    ax.margins(0.1)
    fig.savefig(path, dpi=110)
    plt.close(fig)
