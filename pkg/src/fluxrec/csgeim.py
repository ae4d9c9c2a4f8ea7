"""Constrained stabilized reconstruction: least squares on the coefficient cone.

Noisy sensor readings are fit in the interpolation basis by minimizing the
sum of squared measurement mismatches subject to per-coefficient box bounds
|c_i| <= alpha * r_i, where the radii r_i come from the model's training
error and stability tables. The box keeps the noise from exciting
high-index basis functions whose true coefficients are known to be tiny,
and extra measurement rows (m > n) average the noise down further.

The box-constrained problem is solved with an active-set method in the
style of Stark and Parker's bounded-variable least squares: start from the
clipped unconstrained solution, restore primal feasibility by freezing
violated variables, then trade variables between the free set and the
bounds until the Karush-Kuhn-Tucker conditions hold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BvlsError
from .geim import GeimModel, reconstruct

DEFAULT_ALPHA = 2.0
DEFAULT_TOL = 1e-10


@dataclass
class CoefficientCone:
    """Symmetric box bounds |c_i| <= alpha * r_i around the origin."""

    alpha: float
    radii: np.ndarray

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        if self.alpha <= 1.0:
            raise ValueError("alpha must exceed 1")
        if (self.radii <= 0.0).any():
            raise ValueError("cone radii must be positive")

    @classmethod
    def from_model(cls, model: GeimModel, alpha: float = DEFAULT_ALPHA) -> "CoefficientCone":
        return cls(alpha=alpha, radii=model.coefficient_bounds())

    def bounds(self, n: int) -> np.ndarray:
        if n > self.radii.size:
            raise ValueError(f"cone has {self.radii.size} radii, {n} requested")
        return self.alpha * self.radii[:n]

    def contains(self, c: np.ndarray, slack: float = 1e-12) -> bool:
        c = np.asarray(c, dtype=float)
        b = self.bounds(c.size)
        return bool((np.abs(c) <= b * (1.0 + slack) + slack).all())


@dataclass
class MeasurementVector:
    """m noisy sensor readings with their provenance."""

    sensor_indices: np.ndarray
    values: np.ndarray
    sigma: float = 0.0
    seed: int = 0
    repetition: int = 0

    def __post_init__(self):
        self.sensor_indices = np.asarray(self.sensor_indices, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.sensor_indices.shape != self.values.shape:
            raise ValueError("sensor index and value counts differ")

    @property
    def m(self) -> int:
        return self.values.size


@dataclass
class BvlsProblem:
    """Design matrix, target, and symmetric bounds of one cone projection."""

    a: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    eta: np.ndarray | None = None


def build_design(model: GeimModel, m: int, n: int | None = None, cone: CoefficientCone | None = None) -> BvlsProblem:
    """Least-squares skeleton: basis sampled at the first m greedy sensors.

    The top n x n block of the design equals the interpolation matrix, so a
    square problem (m = n) reduces to plain interpolation.
    """
    n = model.n_max if n is None else int(n)
    if not n <= m <= model.m_max:
        raise ValueError(f"need n <= m <= {model.m_max}, got n={n}, m={m}")
    cone = CoefficientCone.from_model(model) if cone is None else cone
    b = cone.bounds(n)
    a = model.sample_matrix[:m, :n]
    return BvlsProblem(a=a, lower=-b, upper=b)


def kkt_residual(a: np.ndarray, eta: np.ndarray, c: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    """Largest violation of the first-order optimality conditions.

    Free coordinates must have zero gradient; coordinates at a bound must
    have a gradient pushing outward.
    """
    g = a.T @ (a @ c - eta)
    res = np.abs(g).copy()
    at_lo = c <= lower + 1e-14 * np.maximum(1.0, np.abs(lower))
    at_up = c >= upper - 1e-14 * np.maximum(1.0, np.abs(upper))
    res[at_lo] = np.maximum(0.0, -g[at_lo])
    res[at_up] = np.maximum(0.0, g[at_up])
    res[at_lo & at_up] = 0.0  # degenerate interval
    return float(res.max()) if res.size else 0.0


def bvls_solve(
    a: np.ndarray,
    eta: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Minimize ||a c - eta||_2^2 subject to lower <= c <= upper.

    Active-set iteration with a finite-termination guard of 10*n*m pivots;
    exceeding it raises BvlsError with the worst KKT violation attached.
    """
    a = np.asarray(a, dtype=float)
    eta = np.asarray(eta, dtype=float)
    m, n = a.shape
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not (tol > 0.0):
        raise ValueError("tol must be positive")
    if (lower > upper).any():
        raise ValueError("lower bound exceeds upper bound")

    max_pivots = 10 * n * m

    x, _, _, _ = np.linalg.lstsq(a, eta, rcond=None)
    state = np.zeros(n, dtype=np.int8)  # -1 at lower, +1 at upper, 0 free
    state[x <= lower] = -1
    state[x >= upper] = 1
    x = np.clip(x, lower, upper)

    pivots = 0

    def free_solution(free):
        """LS over the free coordinates with the bound ones held fixed."""
        rhs = eta - a[:, state != 0] @ x[state != 0]
        z, _, _, _ = np.linalg.lstsq(a[:, free], rhs, rcond=None)
        return z

    # Phase 1: make the free-set LS solution feasible by freezing violators.
    while True:
        free = np.flatnonzero(state == 0)
        if free.size == 0:
            break
        z = free_solution(free)
        lo_v = z < lower[free]
        up_v = z > upper[free]
        if not (lo_v.any() or up_v.any()):
            x[free] = z
            break
        x[free[lo_v]] = lower[free[lo_v]]
        state[free[lo_v]] = -1
        x[free[up_v]] = upper[free[up_v]]
        state[free[up_v]] = 1
        pivots += int(lo_v.sum() + up_v.sum())
        if pivots > max_pivots:
            raise BvlsError(
                f"pivot budget {max_pivots} exhausted in feasibility phase "
                f"(m={m}, n={n}, kkt={kkt_residual(a, eta, x, lower, upper):.3e})"
            )

    # Phase 2: free the most promising bound variable, re-solve, and clip
    # along the segment toward the new free solution until KKT holds.
    while True:
        g = a.T @ (a @ x - eta)
        kkt = np.abs(g).copy()
        kkt[state == -1] = np.maximum(0.0, -g[state == -1])
        kkt[state == 1] = np.maximum(0.0, g[state == 1])
        worst = int(np.argmax(kkt))
        if kkt[worst] <= tol:
            return np.clip(x, lower, upper)
        if state[worst] == 0:
            # free-gradient noise above tol: re-solve the free set below
            pass
        else:
            state[worst] = 0

        while True:
            pivots += 1
            if pivots > max_pivots:
                raise BvlsError(
                    f"pivot budget {max_pivots} exhausted "
                    f"(m={m}, n={n}, kkt={kkt_residual(a, eta, x, lower, upper):.3e})"
                )
            free = np.flatnonzero(state == 0)
            z = free_solution(free)
            lo_v = z < lower[free]
            up_v = z > upper[free]
            if not (lo_v.any() or up_v.any()):
                x[free] = z
                break
            # step from x toward z, stopping at the first bound crossing
            viol = np.flatnonzero(lo_v | up_v)
            targets = np.where(lo_v[viol], lower[free[viol]], upper[free[viol]])
            denom = z[viol] - x[free[viol]]
            with np.errstate(divide="ignore", invalid="ignore"):
                alphas = (targets - x[free[viol]]) / denom
            alphas[~np.isfinite(alphas)] = 0.0
            alphas = np.clip(alphas, 0.0, 1.0)
            kmin = int(np.argmin(alphas))
            step = alphas[kmin]
            x[free] += step * (z - x[free])
            blocked = viol[kmin]
            idx = free[blocked]
            state[idx] = -1 if lo_v[blocked] else 1
            x[idx] = lower[idx] if lo_v[blocked] else upper[idx]


def bvls_batch(a: np.ndarray, etas: np.ndarray, lower: np.ndarray, upper: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Solve one bounded LS problem for each column of ``etas``.

    Columns whose unconstrained solution is already feasible are accepted
    directly from a shared QR factorization; the rest go through the
    active-set path.
    """
    etas = np.asarray(etas, dtype=float)
    q, r = np.linalg.qr(a)
    x0 = np.linalg.solve(r, q.T @ etas)
    out = np.empty_like(x0)
    feasible = ((x0 >= lower[:, None]) & (x0 <= upper[:, None])).all(axis=0)
    out[:, feasible] = x0[:, feasible]
    for j in np.flatnonzero(~feasible):
        out[:, j] = bvls_solve(a, etas[:, j], lower, upper, tol=tol)
    return out


def cs_reconstruct(
    model: GeimModel,
    meas: MeasurementVector,
    n: int,
    cone: CoefficientCone | None = None,
    components=None,
    tol: float = DEFAULT_TOL,
) -> tuple[dict, np.ndarray]:
    """Cone-constrained reconstruction from m >= n noisy measurements.

    Returns (fields, coefficients); fields maps each requested component to
    its reconstruction. The coefficient vector is feasible by construction.
    """
    if meas.m < n:
        raise ValueError(f"need at least n={n} measurements, got m={meas.m}")
    cone = CoefficientCone.from_model(model) if cone is None else cone
    problem = build_design(model, meas.m, n=n, cone=cone)
    expected = model.sensors[: meas.m]
    if not np.array_equal(meas.sensor_indices, expected):
        raise ValueError("measurement sensors do not match the model's sensor ordering")
    c = bvls_solve(problem.a, meas.values, problem.lower, problem.upper, tol=tol)
    if not cone.contains(c):
        raise BvlsError("solver returned a cone-infeasible coefficient vector")
    components = model.components if components is None else tuple(components)
    fields = {comp: reconstruct(model, c, comp) for comp in components}
    return fields, c
