"""Greedy interpolation bases, sensor placement, and their diagnostics.

The greedy loop alternates three argmax steps: pick the worst-approximated
training snapshot, place a sensor at the peak of its interpolation residual,
and normalize that residual into the next basis function. Companion bases
for the unmeasured components (fast flux, power) are built from the same
selected snapshots with the same normalization scalars, so expanding one
coefficient vector in each basis yields a coherent vector-valued
reconstruction from thermal-flux measurements alone.

Everything about a built model is immutable; the selection matrix restricted
to the first n sensors and basis functions is unit lower triangular by
construction, which makes interpolation a forward substitution.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .errors import ConfigError, NumericalError
from .fields import Domain, Field2D, canonical_norm, load_regions, save_regions
from .snapshots import COMPONENTS, SnapshotSet

_MODEL_FORMAT = "fluxrec-model-1"

# Selection values below this are indistinguishable from roundoff; the
# manifold is treated as exhausted and the basis truncated.
MIN_RESIDUAL = 1e-13


@dataclass(frozen=True)
class Sensor:
    """A pointwise measurement functional: the nodal value of one component."""

    node: int
    component: str = "phi2"


def measure(f: Field2D, sensor) -> float:
    """Apply a sensor to a field (pointwise nodal value)."""
    node = sensor.node if isinstance(sensor, Sensor) else int(sensor)
    if not 0 <= node < f.domain.grid.n_nodes:
        raise ValueError(f"sensor node {node} outside grid")
    return float(f.flat[node])


@dataclass
class GeimModel:
    """Greedy-ordered basis triples, sensors, and stability tables.

    ``basis['phi2']`` holds the interpolation basis itself; companions are
    reconstruction bases sharing its coefficients. ``sensors`` may be longer
    than the basis (extra measurement rows for least-squares use); the first
    n sensors pair with the first n basis functions.
    """

    domain: Domain
    norm: str
    case: str
    mask: np.ndarray
    sensors: np.ndarray
    basis: dict
    selected_mus: list
    selected_indices: list
    eps: np.ndarray                  # training errors, eps[k] after k bases
    sensor_scale: float = 1.0
    seed: int = 0
    exhausted: bool = False
    random_sensors_from: int | None = None
    _cache: dict = dc_field(default_factory=dict, repr=False)

    @property
    def n_max(self) -> int:
        return self.basis["phi2"].shape[1]

    @property
    def m_max(self) -> int:
        return int(self.sensors.size)

    @property
    def components(self) -> tuple:
        return tuple(c for c in COMPONENTS if c in self.basis)

    @property
    def B(self) -> np.ndarray:
        """Interpolation matrix B[j, i] = q_i(x_j), unit lower triangular."""
        return self.sample_matrix[: self.n_max]

    @property
    def sample_matrix(self) -> np.ndarray:
        """All stored sensors applied to all basis functions, (m_max, n_max)."""
        if "A" not in self._cache:
            self._cache["A"] = self.basis["phi2"][self.sensors, :]
        return self._cache["A"]

    def measurements(self, values_flat: np.ndarray, m: int | None = None) -> np.ndarray:
        """Noiseless sensor readings of one field or a stack of fields."""
        m = self.m_max if m is None else int(m)
        if m > self.m_max:
            raise ValueError(f"only {self.m_max} sensors stored, {m} requested")
        return np.asarray(values_flat)[self.sensors[:m]]

    def lebesgue_table(self, kind: str | None = None) -> np.ndarray:
        kind = canonical_norm(self.norm if kind is None else kind)
        key = ("lebesgue", kind)
        if key not in self._cache:
            self._cache[key] = _lebesgue_table(self, kind)
        return self._cache[key]

    def coefficient_bounds(self, kind: str | None = None) -> np.ndarray:
        """Per-index bounds r_n = (1 + Lambda_{n-1}) eps_{n-1}, n = 1..n_max."""
        leb = self.lebesgue_table(kind)
        r = np.empty(self.n_max)
        r[0] = self.eps[0]
        if self.n_max > 1:
            r[1:] = (1.0 + leb[: self.n_max - 1]) * self.eps[1 : self.n_max]
        return r

    # -- persistence --------------------------------------------------------

    def save(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        save_regions(self.domain, path / "regions.txt")
        manifest = {
            "format": _MODEL_FORMAT,
            "norm": self.norm,
            "case": self.case,
            "n": self.n_max,
            "m": self.m_max,
            "sensors": [int(s) for s in self.sensors],
            "mask": [int(s) for s in self.mask],
            "selected_mus": [list(np.atleast_1d(np.asarray(m, dtype=float))) for m in self.selected_mus],
            "selected_indices": [int(i) for i in self.selected_indices],
            "components": list(self.components),
            "sensor_scale": self.sensor_scale,
            "seed": self.seed,
            "exhausted": self.exhausted,
            "random_sensors_from": self.random_sensors_from,
            "symmetry_edges": sorted(self.domain.symmetry_edges),
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
        leb = self.lebesgue_table()
        r = self.coefficient_bounds()
        with open(path / "tables.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "eps_train", "lebesgue", "coeff_bound"])
            writer.writerow([0, repr(float(self.eps[0])), "", ""])
            for i in range(self.n_max):
                writer.writerow([i + 1, repr(float(self.eps[i + 1])), repr(float(leb[i])), repr(float(r[i]))])
        for comp in self.components:
            block = np.ascontiguousarray(self.basis[comp].T, dtype="<f8")
            block.tofile(path / f"basis_{comp}.bin")

    @classmethod
    def load(cls, path) -> "GeimModel":
        path = Path(path)
        mf_path = path / "manifest.json"
        if not mf_path.exists():
            raise ConfigError(f"{path} is not a model archive (missing manifest.json)")
        mf = json.loads(mf_path.read_text())
        if mf.get("format") != _MODEL_FORMAT:
            raise ConfigError(f"{path}: unsupported model format {mf.get('format')!r}")
        domain = load_regions(path / "regions.txt", symmetry_edges=mf.get("symmetry_edges", ()))
        n, m = mf["n"], mf["m"]
        basis = {}
        for comp in mf["components"]:
            raw = np.fromfile(path / f"basis_{comp}.bin", dtype="<f8")
            basis[comp] = raw.reshape(n, domain.grid.n_nodes).T.copy()
        eps = np.empty(n + 1)
        leb = np.empty(n)
        with open(path / "tables.csv", newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                k = int(row["n"])
                eps[k] = float(row["eps_train"])
                if k >= 1:
                    leb[k - 1] = float(row["lebesgue"])
        mus = [tuple(v) if len(v) > 1 else v[0] for v in mf["selected_mus"]]
        model = cls(
            domain=domain,
            norm=mf["norm"],
            case=mf["case"],
            mask=np.asarray(mf["mask"], dtype=int),
            sensors=np.asarray(mf["sensors"], dtype=int),
            basis=basis,
            selected_mus=mus,
            selected_indices=mf["selected_indices"],
            eps=eps,
            sensor_scale=mf.get("sensor_scale", 1.0),
            seed=mf.get("seed", 0),
            exhausted=mf.get("exhausted", False),
            random_sensors_from=mf.get("random_sensors_from"),
        )
        model._cache[("lebesgue", canonical_norm(mf["norm"]))] = leb
        return model


def greedy_build(
    training: SnapshotSet,
    mask: np.ndarray,
    n_max: int,
    norm: str = "l2",
    m_sensors: int | None = None,
    extra_strategy: str = "greedy",
    seed: int = 0,
    case: str = "custom",
    min_residual: float = MIN_RESIDUAL,
) -> GeimModel:
    """Run the greedy selection on a training set.

    Parameters
    ----------
    mask : flat node indices admissible as sensor locations.
    n_max : number of basis triples to keep (truncated if the training
        residual drops below ``min_residual`` first).
    m_sensors : total sensors to store (default n_max). Rows beyond the
        basis come from continuing the same greedy selection
        (``extra_strategy='greedy'``) or from a seeded draw of admissible
        nodes (``'random'``); the greedy continuation falls back to the
        random draw once the manifold is exhausted.
    """
    norm = canonical_norm(norm)
    mask = np.asarray(mask, dtype=int)
    if mask.size == 0:
        raise ValueError("no admissible sensors")
    if not 1 <= n_max <= len(training):
        raise ValueError(f"n_max must be in [1, {len(training)}]")
    m_sensors = n_max if m_sensors is None else int(m_sensors)
    if m_sensors < n_max:
        raise ValueError("m_sensors must be at least n_max")
    if m_sensors > mask.size:
        raise ValueError(f"cannot place {m_sensors} sensors on a {mask.size}-node mask")
    if extra_strategy not in ("greedy", "random"):
        raise ValueError(f"unknown sensor extension strategy {extra_strategy!r}")

    domain = training.domain
    comps = training.components
    residual = {c: training.component_matrix(c).copy() for c in comps}
    r2 = residual["phi2"]

    taken = np.zeros(domain.grid.n_nodes, dtype=bool)
    sensors: list[int] = []
    sel_idx: list[int] = []
    eps: list[float] = []
    basis = {c: [] for c in comps}
    exhausted = False

    greedy_steps = m_sensors if extra_strategy == "greedy" else n_max
    for step in range(1, greedy_steps + 1):
        norms = domain.norm_many(r2, norm)
        jstar = int(np.argmax(norms))
        sel_val = float(norms[jstar])
        if step <= n_max + 1:
            eps.append(sel_val)
        if sel_val < min_residual:
            exhausted = True
            break

        col = r2[:, jstar]
        cand = np.abs(col[mask])
        cand[taken[mask]] = -1.0
        pos = int(np.argmax(cand))
        if cand[pos] <= 0.0:
            raise NumericalError("mask cannot resolve residual")
        node = int(mask[pos])
        gamma = col[node]

        crow = r2[node, :].copy()
        if step <= n_max:
            for c in comps:
                q = residual[c][:, jstar] / gamma
                basis[c].append(q)
                residual[c] -= np.outer(q, crow)
            sel_idx.append(jstar)
        else:
            q2 = col / gamma
            r2 -= np.outer(q2, crow)
        sensors.append(node)
        taken[node] = True

    n_built = min(len(sensors), n_max)
    if n_built == 0:
        raise NumericalError("training set is numerically zero; nothing to build")
    if len(eps) < n_built + 1:
        # loop ended exactly at the last basis step; one more residual pass
        eps.append(float(domain.norm_many(r2, norm).max()))
    eps = np.asarray(eps[: n_built + 1])

    random_from = None
    if len(sensors) < m_sensors:
        random_from = len(sensors)
        rng = np.random.default_rng(seed)
        avail = mask[~taken[mask]]
        extra = rng.choice(avail, size=m_sensors - len(sensors), replace=False)
        sensors.extend(int(s) for s in extra)

    model = GeimModel(
        domain=domain,
        norm=norm,
        case=case,
        mask=mask,
        sensors=np.asarray(sensors, dtype=int),
        basis={c: np.column_stack(basis[c]) for c in comps},
        selected_mus=[training.mus[j] for j in sel_idx],
        selected_indices=sel_idx,
        eps=eps,
        sensor_scale=training.sensor_scale,
        seed=seed,
        exhausted=exhausted,
        random_sensors_from=random_from,
    )
    return model


def interpolate(model: GeimModel, y: np.ndarray) -> np.ndarray:
    """Coefficients from the first n sensor readings by forward substitution."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n > model.n_max:
        raise ValueError(f"{n} measurements but model size is {model.n_max}")
    if n == 0:
        return np.zeros_like(y)
    return la.solve_triangular(model.B[:n, :n], y, lower=True, unit_diagonal=True)


def reconstruct(model: GeimModel, c: np.ndarray, component: str = "phi2") -> Field2D:
    """Expand coefficients in the basis of one component."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 1:
        raise ValueError("coefficient vector expected")
    if c.size > model.n_max:
        raise ValueError(f"{c.size} coefficients but model size is {model.n_max}")
    if component not in model.basis:
        raise ValueError(f"model has no {component} companion basis")
    values = model.basis[component][:, : c.size] @ c
    return Field2D(model.domain, values.reshape(model.domain.grid.shape))


# -- Lebesgue constants -------------------------------------------------------


def _basis_inverse(model: GeimModel) -> np.ndarray:
    """B^-1; its leading n x n block inverts the leading block of B."""
    if "binv" not in model._cache:
        model._cache["binv"] = la.solve_triangular(
            model.B, np.eye(model.n_max), lower=True, unit_diagonal=True
        )
    return model._cache["binv"]


def _lebesgue_table(model: GeimModel, kind: str) -> np.ndarray:
    """Operator norms of the interpolation operators for n = 1..n_max.

    The cardinal functions Psi_n = Q_n (B_n)^-1 change with n, but the heavy
    grid-size work (the basis Gram matrix) is shared across all n; only
    small n x n congruences remain inside the loop.
    """
    q2 = model.basis["phi2"]
    n_max = model.n_max
    binv = _basis_inverse(model)
    out = np.empty(n_max)

    if kind == "linf":
        dom_idx = np.flatnonzero(model.domain.in_domain_flat)
        for n in range(1, n_max + 1):
            psi = q2[:, :n] @ binv[:n, :n]
            out[n - 1] = np.abs(psi[dom_idx]).sum(axis=1).max()
        return out

    if kind == "l2":
        w = model.domain.weights_flat
        gram_q = q2.T @ (w[:, None] * q2)
        dual_half = np.diag(1.0 / np.sqrt(w[model.sensors[:n_max]]))
    else:  # h1: operator norm on the quotient modulo constants
        wh = model.domain.h1_matrix()
        gram_q = q2.T @ (wh @ q2)
        m_dual = _h1_dual_gram(model)
        vals, vecs = np.linalg.eigh(m_dual)
        vals = np.clip(vals, 0.0, None)
        dual_half = vecs @ (np.sqrt(vals)[:, None] * vecs.T)

    for n in range(1, n_max + 1):
        g = binv[:n, :n].T @ gram_q[:n, :n] @ binv[:n, :n]
        s = dual_half[:n, :n] @ g @ dual_half[:n, :n]
        out[n - 1] = np.sqrt(max(np.linalg.eigvalsh(0.5 * (s + s.T))[-1], 0.0))
    return out


def _h1_dual_gram(model: GeimModel) -> np.ndarray:
    """Gram matrix of the sensor functionals in the dual of the h1 quotient.

    Entry (k, l) is z_l evaluated at sensor k, where z_l solves the singular
    system K z = e_l (mean removed) on the in-domain nodes. Solved with an
    algebraic multigrid preconditioner when available; the result is tagged
    approximate because of the iterative tolerance.
    """
    wh = model.domain.h1_matrix()
    dom = np.flatnonzero(model.domain.in_domain_flat)
    k_dom = wh[dom][:, dom].tocsr()
    nloc = dom.size
    pos = -np.ones(model.domain.grid.n_nodes, dtype=int)
    pos[dom] = np.arange(nloc)

    sensors = model.sensors[: model.n_max]
    rhs = np.zeros((nloc, sensors.size))
    rhs[pos[sensors], np.arange(sensors.size)] = 1.0
    rhs -= rhs.mean(axis=0, keepdims=True)

    try:
        import pyamg

        solver = pyamg.ruge_stuben_solver(k_dom.tocsr())
        z = np.column_stack([
            solver.solve(rhs[:, j], tol=1e-12, accel="cg") for j in range(rhs.shape[1])
        ])
    except ImportError:
        import scipy.sparse.linalg as spla

        diag = k_dom.diagonal()
        diag[diag <= 0] = 1.0
        precond = spla.LinearOperator((nloc, nloc), matvec=lambda v: v / diag)
        cols = []
        for j in range(rhs.shape[1]):
            z_j, info = spla.cg(k_dom, rhs[:, j], rtol=1e-12, maxiter=20000, M=precond)
            if info != 0:
                raise NumericalError("h1 dual solve did not converge")
            cols.append(z_j)
        z = np.column_stack(cols)
    z -= z.mean(axis=0, keepdims=True)
    m = z[pos[sensors], :]
    return 0.5 * (m + m.T)


def lebesgue_constant(model: GeimModel, n: int, kind: str | None = None) -> float:
    """Operator norm of the n-term interpolation operator in the given norm."""
    if not 1 <= n <= model.n_max:
        raise ValueError(f"n must be in [1, {model.n_max}]")
    return float(model.lebesgue_table(kind)[n - 1])


def coefficient_bounds(model: GeimModel) -> np.ndarray:
    return model.coefficient_bounds()


# -- baselines and error curves ----------------------------------------------


def svd_baseline(training: SnapshotSet, component: str = "phi2") -> np.ndarray:
    """Singular values of the snapshot matrix in the weighted L2 geometry."""
    phi = training.component_matrix(component)
    w = np.sqrt(training.domain.weights_flat)
    return np.linalg.svd(w[:, None] * phi, compute_uv=False)


@dataclass
class ErrorCurve:
    """Worst-case reconstruction error over a snapshot set, per basis size."""

    component: str
    norm: str
    set_role: str
    ns: np.ndarray
    errors: np.ndarray
    relative: bool = False


def error_curves(
    model: GeimModel,
    eval_set: SnapshotSet,
    norm: str | None = None,
    components=None,
    relative: bool = False,
) -> list[ErrorCurve]:
    """Noiseless reconstruction error curves for n = 0..n_max.

    For each n the reported value is the max over the set of the distance
    between truth and reconstruction (divided by the truth norm when
    ``relative``).
    """
    norm = canonical_norm(model.norm if norm is None else norm)
    if eval_set.domain.grid != model.domain.grid:
        raise ValueError("grid mismatch")
    components = model.components if components is None else tuple(components)
    n_max = model.n_max
    y = model.measurements(eval_set.component_matrix("phi2"), m=n_max)
    coeffs = interpolate(model, y)

    curves = []
    for comp in components:
        if comp not in model.basis:
            raise ValueError(f"model has no {comp} companion basis")
        truth = eval_set.component_matrix(comp)
        scale = model.domain.norm_many(truth, norm) if relative else None
        q = model.basis[comp]
        errs = np.empty(n_max + 1)
        errs[0] = _agg(model.domain.norm_many(truth, norm), scale)
        for n in range(1, n_max + 1):
            resid = truth - q[:, :n] @ coeffs[:n]
            errs[n] = _agg(model.domain.norm_many(resid, norm), scale)
        curves.append(
            ErrorCurve(comp, norm, eval_set.role, np.arange(n_max + 1), errs, relative)
        )
    return curves


def _agg(norms: np.ndarray, scale: np.ndarray | None) -> float:
    if scale is not None:
        norms = norms / scale
    return float(norms.max())
