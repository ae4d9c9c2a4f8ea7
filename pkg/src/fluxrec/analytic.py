"""Closed-form parametric manifold used for dense measurement-count sweeps.

g(x, mu) = ((x1 - mu1)^2 + (x2 - mu2)^2)^(-1/2) on the unit square, with the
pole mu kept in [-1, -0.01]^2 so every field is smooth and positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Field2D, Grid2D, uniform_domain
from .snapshots import Snapshot, SnapshotSet

MU_BOX = ((-1.0, -0.01), (-1.0, -0.01))


@dataclass(frozen=True)
class AnalyticManifoldSpec:
    """Sampling plan: spatial nodes per axis and parameter lattice per axis."""

    nx: int = 64
    ny: int = 64
    mu_counts: tuple = (20, 20)
    mu_box: tuple = MU_BOX

    def __post_init__(self):
        (a1, b1), (a2, b2) = self.mu_box
        if not (b1 < 0.0 and b2 < 0.0):
            raise ValueError("parameter box must stay strictly below the unit square")
        if min(self.mu_counts) < 1:
            raise ValueError("need at least one parameter per axis")


def eval_g(x, mu) -> float:
    """Inverse distance between a point of the unit square and the pole mu."""
    x1, x2 = x
    m1, m2 = mu
    if not (0.0 <= x1 <= 1.0 and 0.0 <= x2 <= 1.0):
        raise ValueError("x must lie in the closed unit square")
    (a1, b1), (a2, b2) = MU_BOX
    if not (a1 <= m1 <= b1 and a2 <= m2 <= b2):
        raise ValueError("mu outside the admissible parameter box")
    return float(((x1 - m1) ** 2 + (x2 - m2) ** 2) ** -0.5)


def analytic_field(domain, mu) -> Field2D:
    m1, m2 = mu
    xs = domain.grid.xs()
    ys = domain.grid.ys()
    xx, yy = np.meshgrid(xs, ys)
    return Field2D(domain, ((xx - m1) ** 2 + (yy - m2) ** 2) ** -0.5)


def generate_analytic_snapshots(spec: AnalyticManifoldSpec = AnalyticManifoldSpec(), role: str = "training") -> SnapshotSet:
    """Uniform parameter lattice; each snapshot holds only the phi2 slot."""
    grid = Grid2D(spec.nx, spec.ny, 1.0 / (spec.nx - 1), 1.0 / (spec.ny - 1))
    domain = uniform_domain(grid)
    (a1, b1), (a2, b2) = spec.mu_box
    n1, n2 = spec.mu_counts
    mu1 = np.linspace(a1, b1, n1) if n1 > 1 else np.array([0.5 * (a1 + b1)])
    mu2 = np.linspace(a2, b2, n2) if n2 > 1 else np.array([0.5 * (a2 + b2)])
    snaps = []
    for m2 in mu2:
        for m1 in mu1:
            snaps.append(Snapshot(mu=(float(m1), float(m2)), phi2=analytic_field(domain, (m1, m2))))
    return SnapshotSet(domain, snaps, role=role)


def analytic_test_snapshots(spec: AnalyticManifoldSpec = AnalyticManifoldSpec(), counts=(10, 10), role: str = "test") -> SnapshotSet:
    """Midpoint lattice of the parameter box, disjoint from the training lattice."""
    grid = Grid2D(spec.nx, spec.ny, 1.0 / (spec.nx - 1), 1.0 / (spec.ny - 1))
    domain = uniform_domain(grid)
    (a1, b1), (a2, b2) = spec.mu_box
    n1, n2 = counts
    mu1 = a1 + (np.arange(n1) + 0.5) * (b1 - a1) / n1
    mu2 = a2 + (np.arange(n2) + 0.5) * (b2 - a2) / n2
    snaps = []
    for m2 in mu2:
        for m1 in mu1:
            snaps.append(Snapshot(mu=(float(m1), float(m2)), phi2=analytic_field(domain, (m1, m2))))
    return SnapshotSet(domain, snaps, role=role)
