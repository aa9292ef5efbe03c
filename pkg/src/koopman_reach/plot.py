"""SVG rendering of per-step reach zonotopes (2-D state projections)."""

from __future__ import annotations

import numpy as np

from .koopman import KoopmanModel
from .numerics.intervals import Interval, IntervalBox
from .observables import lift_box
from .sets import UnsafeSet, reach_zonotope

__all__ = ["zonotope_polygon", "write_reach_plot"]


def zonotope_polygon(center: np.ndarray, generators: np.ndarray) -> np.ndarray:
    """Boundary vertices of a 2-D zonotope with domain [-1,1]^p, ccw order."""
    c = np.asarray(center, dtype=float)
    g = np.asarray(generators, dtype=float)
    keep = np.linalg.norm(g, axis=0) > 0
    g = g[:, keep]
    if g.shape[1] == 0:
        return c[None, :]
    flip = (g[1] < 0) | ((g[1] == 0) & (g[0] < 0))
    g = np.where(flip[None, :], -g, g)
    order = np.argsort(np.arctan2(g[1], g[0]), kind="stable")
    g = g[:, order]
    start = c - g.sum(axis=1)
    pts = [start]
    for j in range(g.shape[1]):
        pts.append(pts[-1] + 2.0 * g[:, j])
    for j in range(g.shape[1]):
        pts.append(pts[-1] - 2.0 * g[:, j])
    return np.vstack(pts[:-1])


def write_reach_plot(
    path,
    model: KoopmanModel,
    init_box: IntervalBox,
    unsafe: UnsafeSet,
    n_steps: int,
    dims: tuple[int, int] = (0, 1),
) -> None:
    """Plot the projected reach zonotope at every step plus the unsafe boundary."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    d0, d1 = dims
    obs_box = lift_box(model.dictionary, init_box, Interval(0.0, 0.0))
    fig, ax = plt.subplots(figsize=(6, 5))
    cmap = plt.get_cmap("viridis")
    for i in range(n_steps + 1):
        z = reach_zonotope(obs_box, model.step_operator(i))
        poly = zonotope_polygon(z.center[[d0, d1]], z.generators[[d0, d1], :])
        color = cmap(i / max(n_steps, 1))
        if poly.shape[0] == 1:
            ax.plot(poly[0, 0], poly[0, 1], ".", color=color)
        else:
            ax.fill(poly[:, 0], poly[:, 1], alpha=0.35, facecolor=color, edgecolor=color, lw=0.5)

    x_lo, x_hi = ax.get_xlim()
    y_lo, y_hi = ax.get_ylim()
    for hs in unsafe.halfspaces:
        q, r = hs.normal, hs.offset
        active = [k for k in range(q.size) if q[k] != 0.0]
        if not set(active) <= {d0, d1}:
            continue  # the boundary is not drawable in this projection
        if q[d1] != 0.0:
            xs = np.array([x_lo, x_hi])
            ys = (r - q[d0] * xs) / q[d1]
            ax.plot(xs, ys, "r--", lw=1.5)
        else:
            ax.axvline(r / q[d0], color="r", ls="--", lw=1.5)

    ax.set_xlim(x_lo, x_hi)
    ax.set_ylim(y_lo, y_hi)
    ax.set_xlabel(f"x{d0 + 1}")
    ax.set_ylabel(f"x{d1 + 1}")
    ax.set_title("reach set per step (red dashes: unsafe boundary)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
