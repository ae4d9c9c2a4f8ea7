"""Figure rendering for study reports.

Every study command can drop plot-ready CSV plus rendered PNG figures next
to each other; these helpers do the rendering. Import stays cheap and
headless (Agg backend), so the CLI works on machines without a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_COLORS = {"phi1": "tab:blue", "phi2": "tab:red", "power": "tab:green"}
_LABELS = {"phi1": "fast flux", "phi2": "thermal flux", "power": "power"}


def _new_axes(xlabel, ylabel, title=None):
    fig, ax = plt.subplots(figsize=(5.0, 3.6), dpi=150)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(True, which="both", alpha=0.3)
    return fig, ax


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_error_decay(curves, path, title=None, svd=None):
    """Noiseless error curves per component, optionally with the SVD tail."""
    fig, ax = _new_axes("basis dimension n", "max reconstruction error", title)
    for c in curves:
        ax.semilogy(c.ns, np.maximum(c.errors, 1e-300), marker=".",
                    color=_COLORS.get(c.component), label=_LABELS.get(c.component, c.component))
    if svd is not None:
        ns = np.arange(1, len(svd) + 1)
        ax.semilogy(ns, np.maximum(svd, 1e-300), "k--", lw=1, label="singular values")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_noise_study(table, component, path, title=None):
    """Mean error vs n for both methods, one line per noise amplitude."""
    fig, ax = _new_axes("basis dimension n", "mean error", title)
    sigmas = sorted({r.sigma for r in table.rows})
    for sigma in sigmas:
        for method, style in (("geim", "--"), ("csgeim", "-")):
            ns, errs = table.curve(method, component, sigma)
            if ns.size == 0:
                continue
            label = f"{method} sigma={sigma:g}"
            ax.semilogy(ns, np.maximum(errs, 1e-300), style, marker=".", ms=3, label=label)
        if sigma > 0:
            ax.axhline(sigma, color="gray", lw=0.6, alpha=0.6)
    ax.legend(fontsize=7)
    return _finish(fig, path)


def plot_ratio_study(table, fit, component, sigma, path, title=None):
    slope, intercept, _ = fit
    fig, ax = _new_axes("measurements m", "mean error", title)
    ms, errs = table.curve("csgeim", component, sigma, x="m")
    ax.loglog(ms, errs, "o", label="measured")
    ax.loglog(ms, np.exp(intercept) * np.asarray(ms, float) ** slope, "-",
              label=f"fit slope {slope:.3f}")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_lebesgue(tables, path, title=None):
    """Lebesgue-constant growth; one line per (case label, table)."""
    fig, ax = _new_axes("basis dimension n", "Lebesgue constant", title)
    for label, lam in tables.items():
        ax.semilogy(np.arange(1, len(lam) + 1), lam, marker=".", label=label)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_coefficient_bounds(bounds, path, title=None):
    fig, ax = _new_axes("coefficient index n", "bound radius", title)
    for label, r in bounds.items():
        ax.semilogy(np.arange(1, len(r) + 1), r, marker=".", label=label)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_sensors(model, path, title=None):
    """Sensor locations over the region map."""
    fig, ax = _new_axes("x (cm)", "y (cm)", title)
    dom = model.domain
    g = dom.grid
    extent = (g.ox, g.ox + (g.nx - 1) * g.hx, g.oy, g.oy + (g.ny - 1) * g.hy)
    ax.imshow(dom.region_ids, origin="lower", extent=extent, cmap="Pastel1",
              interpolation="nearest", alpha=0.8)
    xy = np.array([g.node_xy(s) for s in model.sensors])
    n = model.n_max
    ax.scatter(xy[:n, 0], xy[:n, 1], s=14, c="k", marker="x", label="interpolation sensors")
    if xy.shape[0] > n:
        ax.scatter(xy[n:, 0], xy[n:, 1], s=10, facecolors="none", edgecolors="k",
                   marker="o", label="extra sensors")
    ax.legend(fontsize=8)
    ax.set_aspect("equal")
    return _finish(fig, path)


def plot_field(field, path, title=None):
    fig, ax = _new_axes("x (cm)", "y (cm)", title)
    g = field.domain.grid
    extent = (g.ox, g.ox + (g.nx - 1) * g.hx, g.oy, g.oy + (g.ny - 1) * g.hy)
    vals = np.where(field.domain.in_domain, field.values, np.nan)
    im = ax.imshow(vals, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_aspect("equal")
    return _finish(fig, path)


def plot_svd(singular_values, path, eps=None, title=None):
    fig, ax = _new_axes("index n", "magnitude", title)
    sv = np.asarray(singular_values)
    ax.semilogy(np.arange(1, sv.size + 1), np.maximum(sv, 1e-300), "k--", label="singular values")
    if eps is not None:
        eps = np.asarray(eps)
        ax.semilogy(np.arange(eps.size), np.maximum(eps, 1e-300), "r.-", label="greedy training error")
    ax.legend(fontsize=8)
    return _finish(fig, path)
