"""Figures written next to the CSV reports (non-interactive backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def error_curves(result, path, threshold=None):
    """Mean overall error per strategy with a one-standard-deviation band."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    axis = result["axis"]
    for strat, (mean, var, n) in sorted(result["aggregate"].items()):
        line, = ax.plot(axis, mean, label=f"{strat} (n={n})")
        sd = np.sqrt(var)
        ax.fill_between(axis, np.clip(mean - sd, 0, 1), np.clip(mean + sd, 0, 1), color=line.get_color(), alpha=0.15)
    if threshold is not None:
        ax.axhline(threshold, color="0.5", lw=0.8, ls="--")
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("overall error")
    ax.set_ylim(0, 1)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def time_allocation(starts, names, fracs, path, title=None):
    """Stacked share of frames per area over sliding windows."""
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    if len(starts):
        ax.stackplot(starts, fracs.T, labels=[n or "(none)" for n in names])
        ax.legend(loc="upper right", fontsize=7)
    ax.set_xlabel("window start (s)")
    ax.set_ylabel("fraction of frames")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def navigation_graph(grid, graph, path, title=None):
    """Occupancy grid underlay with region centroids and graph edges on top."""
    ny, nx = grid.shape
    extent = (0, nx * grid.cell, 0, ny * grid.cell)
    img = np.array([0.75, 1.0, 0.0])[grid.state]  # unexplored, free, occupied
    fig, ax = plt.subplots(figsize=(6.4, 6.4 * ny / max(nx, 1) + 0.6))
    ax.imshow(img, cmap="gray", vmin=0, vmax=1, origin="lower", extent=extent)
    for (a, b), _ in sorted(graph.undirected().items()):
        (xa, ya), (xb, yb) = graph.nodes[a], graph.nodes[b]
        ax.plot([xa, xb], [ya, yb], color="tab:blue", lw=1)
    for rid, (x, y) in sorted(graph.nodes.items()):
        ax.plot(x, y, "o", color="tab:red", ms=4)
        ax.annotate(str(rid), (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
