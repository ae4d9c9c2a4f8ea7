"""Structured-grid scalar fields over a 2D reactor domain.

The domain is described by a node-centered tensor grid plus a cell-centered
region map (integer ids, 0 = exterior). All norms integrate over the union of
non-exterior cells with trapezoidal quadrature, so the quadrature weight of a
node equals the area of its control volume. Three norms are supported:

* ``l2``    sqrt( sum_ij w_ij f_ij^2 )
* ``linf``  max_ij |f_ij| over nodes inside the domain
* ``h1``    sqrt( sum_ij w_ij |grad f|_ij^2 ), central differences in the
            interior and one-sided differences at the boundary

``h1`` is the square root of the gradient energy, i.e. a seminorm vanishing
exactly on constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

NORM_KINDS = ("l2", "linf", "h1")

_NORM_ALIASES = {
    "l2": "l2",
    "linf": "linf",
    "linfty": "linf",
    "h1": "h1",
    "h1semi": "h1",
}


def canonical_norm(kind) -> str:
    """Map user-facing norm names (L2, Linf, H1semi, ...) to internal tokens."""
    key = str(kind).strip().lower()
    if key not in _NORM_ALIASES:
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
    return _NORM_ALIASES[key]


@dataclass(frozen=True)
class Grid2D:
    """Node-centered tensor grid: nodes at origin + (i*hx, j*hy)."""

    nx: int
    ny: int
    hx: float
    hy: float
    ox: float = 0.0
    oy: float = 0.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 nodes per direction")
        if not (self.hx > 0.0 and self.hy > 0.0):
            raise ValueError("grid spacings must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape of nodal data, (ny, nx)."""
        return (self.ny, self.nx)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def cell_shape(self) -> tuple[int, int]:
        return (self.ny - 1, self.nx - 1)

    def xs(self) -> np.ndarray:
        return self.ox + self.hx * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.oy + self.hy * np.arange(self.ny)

    def node_xy(self, flat_index: int) -> tuple[float, float]:
        j, i = divmod(int(flat_index), self.nx)
        return (self.ox + i * self.hx, self.oy + j * self.hy)


class Domain:
    """Grid + region map + the quadrature/masks everything else relies on.

    Parameters
    ----------
    grid : Grid2D
    region_ids : (ny-1, nx-1) int array
        Region id per cell; 0 marks exterior cells (outside the domain).
    symmetry_edges : iterable of {"west", "east", "south", "north"}
        Bounding-box edges that are symmetry lines rather than part of the
        physical boundary. Nodes on them count as interior.

    Immutable after construction; all derived arrays are precomputed.
    """

    def __init__(self, grid: Grid2D, region_ids, symmetry_edges=()):
        self.grid = grid
        ids = np.asarray(region_ids, dtype=np.int32)
        if ids.shape != grid.cell_shape:
            raise ValueError(
                f"region map shape {ids.shape} does not match cell shape {grid.cell_shape}"
            )
        if (ids < 0).any():
            raise ValueError("region ids must be >= 0 (0 marks exterior)")
        self.region_ids = ids
        self.symmetry_edges = frozenset(symmetry_edges)
        bad = self.symmetry_edges - {"west", "east", "south", "north"}
        if bad:
            raise ValueError(f"unknown symmetry edges {sorted(bad)}")

        interior = ids > 0
        if not interior.any():
            raise ValueError("empty domain")
        self.cell_interior = interior

        ny, nx = grid.shape
        quarter = 0.25 * grid.hx * grid.hy
        w = np.zeros((ny, nx))
        q = np.where(interior, quarter, 0.0)
        w[:-1, :-1] += q
        w[:-1, 1:] += q
        w[1:, :-1] += q
        w[1:, 1:] += q
        self.node_weights = w
        self.weights_flat = w.ravel()
        self.in_domain = w > 0.0
        self.in_domain_flat = self.in_domain.ravel()
        self._domain_idx = np.flatnonzero(self.in_domain_flat)

        self._boundary_length = self._exposed_boundary_length()
        self.interior_nodes = self.in_domain & (self._boundary_length == 0.0)

        self._grad_ops = None
        self._h1_matrix = None

    # -- geometry ---------------------------------------------------------

    def _padded_cell_mask(self, cell_mask: np.ndarray) -> np.ndarray:
        """Pad a cell mask so node (j, i) sees quadrants P[j:j+2, i:i+2]."""
        ny, nx = self.grid.shape
        p = np.zeros((ny + 1, nx + 1), dtype=bool)
        p[1:ny, 1:nx] = cell_mask
        return p

    def _exposed_boundary_length(self) -> np.ndarray:
        """Length of the physical boundary crossing each node's control volume.

        A half-segment of a cell edge is exposed when exactly one of the two
        cell quadrants it separates is interior (missing cells beyond the
        bounding box count as exterior). Segments lying on a symmetry edge
        are not physical boundary and are skipped.
        """
        g = self.grid
        p = self._padded_cell_mask(self.cell_interior)
        sw = p[:-1, :-1]
        se = p[:-1, 1:]
        nw = p[1:, :-1]
        ne = p[1:, 1:]

        vert_n = nw ^ ne  # segment x = x_i, y in [y_j, y_j + hy/2]
        vert_s = sw ^ se
        horz_e = se ^ ne  # segment y = y_j, x in [x_i, x_i + hx/2]
        horz_w = sw ^ nw

        if "west" in self.symmetry_edges:
            vert_n[:, 0] = False
            vert_s[:, 0] = False
        if "east" in self.symmetry_edges:
            vert_n[:, -1] = False
            vert_s[:, -1] = False
        if "south" in self.symmetry_edges:
            horz_e[0, :] = False
            horz_w[0, :] = False
        if "north" in self.symmetry_edges:
            horz_e[-1, :] = False
            horz_w[-1, :] = False

        length = 0.5 * g.hy * (vert_n + vert_s) + 0.5 * g.hx * (horz_e + horz_w)
        length[~self.in_domain] = 0.0
        return length

    @property
    def boundary_length(self) -> np.ndarray:
        """Per-node length of adjacent physical boundary (0 for interior nodes)."""
        return self._boundary_length

    @property
    def boundary_nodes(self) -> np.ndarray:
        return self.in_domain & (self._boundary_length > 0.0)

    @property
    def area(self) -> float:
        return float(self.weights_flat.sum())

    def region_area(self, ids) -> float:
        ids = np.atleast_1d(ids)
        mask = np.isin(self.region_ids, ids)
        return float(mask.sum()) * self.grid.hx * self.grid.hy

    def cell_value_map(self, per_region: dict) -> np.ndarray:
        """Expand a region -> value dict to a per-cell array (0.0 on exterior)."""
        out = np.zeros(self.grid.cell_shape)
        for rid, val in per_region.items():
            out[self.region_ids == rid] = val
        out[~self.cell_interior] = 0.0
        return out

    def node_average(self, cell_values: np.ndarray) -> np.ndarray:
        """Average a per-cell quantity onto nodes with quarter-cell weights.

        Exterior cells do not contribute. Returns 0 at nodes outside the
        domain.
        """
        ny, nx = self.grid.shape
        quarter = 0.25 * self.grid.hx * self.grid.hy
        acc = np.zeros((ny, nx))
        q = np.where(self.cell_interior, cell_values * quarter, 0.0)
        acc[:-1, :-1] += q
        acc[:-1, 1:] += q
        acc[1:, :-1] += q
        acc[1:, 1:] += q
        with np.errstate(invalid="ignore"):
            out = np.where(self.in_domain, acc / np.where(self.in_domain, self.node_weights, 1.0), 0.0)
        return out

    # -- sensor masks -----------------------------------------------------

    def restrict_mask(self, which: str = "all") -> np.ndarray:
        """Admissible sensor nodes as sorted flat indices.

        ``all``  every interior node of the domain (symmetry edges count as
        interior, the physical boundary does not).
        ``core`` interior nodes all of whose touching cells belong to the
        fuel zone (region ids 1-3).
        """
        if which == "all":
            mask = self.interior_nodes
        elif which == "core":
            core_cells = self._padded_cell_mask(np.isin(self.region_ids, (1, 2, 3)))
            exists = self._padded_cell_mask(np.ones(self.grid.cell_shape, dtype=bool))
            all_core = np.ones(self.grid.shape, dtype=bool)
            for quad_core, quad_exists in (
                (core_cells[:-1, :-1], exists[:-1, :-1]),
                (core_cells[:-1, 1:], exists[:-1, 1:]),
                (core_cells[1:, :-1], exists[1:, :-1]),
                (core_cells[1:, 1:], exists[1:, 1:]),
            ):
                all_core &= quad_core | ~quad_exists
            mask = self.interior_nodes & all_core
        else:
            raise ValueError(f"unknown mask selector {which!r}")
        idx = np.flatnonzero(mask.ravel())
        if idx.size == 0:
            raise ValueError("no admissible sensors")
        return idx

    # -- gradients and norms ----------------------------------------------

    def gradient_ops(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse d/dx and d/dy acting on flattened nodal values.

        Central differences where both neighbors are inside the domain,
        one-sided toward the available neighbor otherwise, zero rows at
        isolated or exterior nodes.
        """
        if self._grad_ops is None:
            self._grad_ops = (self._grad_op(axis=1), self._grad_op(axis=0))
        return self._grad_ops

    def _grad_op(self, axis: int) -> sp.csr_matrix:
        ny, nx = self.grid.shape
        h = self.grid.hx if axis == 1 else self.grid.hy
        ind = self.in_domain
        j, i = np.nonzero(ind)
        if axis == 1:
            has_m = np.zeros_like(ind)
            has_m[:, 1:] = ind[:, :-1]
            has_p = np.zeros_like(ind)
            has_p[:, :-1] = ind[:, 1:]
            step = 1
        else:
            has_m = np.zeros_like(ind)
            has_m[1:, :] = ind[:-1, :]
            has_p = np.zeros_like(ind)
            has_p[:-1, :] = ind[1:, :]
            step = nx
        rows, cols, vals = [], [], []
        center = j * nx + i
        hm = has_m[j, i]
        hp = has_p[j, i]
        both = hm & hp
        only_p = hp & ~hm
        only_m = hm & ~hp
        for sel, offs, coefs in (
            (both, (-step, step), (-0.5 / h, 0.5 / h)),
            (only_p, (0, step), (-1.0 / h, 1.0 / h)),
            (only_m, (-step, 0), (-1.0 / h, 1.0 / h)),
        ):
            c = center[sel]
            for off, coef in zip(offs, coefs):
                rows.append(c)
                cols.append(c + off)
                vals.append(np.full(c.size, coef))
        n = self.grid.n_nodes
        if rows:
            rows = np.concatenate(rows)
            cols = np.concatenate(cols)
            vals = np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def h1_matrix(self) -> sp.csr_matrix:
        """Symmetric PSD matrix of the h1 semi-inner product, fT K f = |f|_h1^2."""
        if self._h1_matrix is None:
            gx, gy = self.gradient_ops()
            w = sp.diags(self.weights_flat)
            self._h1_matrix = (gx.T @ w @ gx + gy.T @ w @ gy).tocsr()
        return self._h1_matrix

    def _values(self, f) -> np.ndarray:
        if isinstance(f, Field2D):
            if f.domain.grid != self.grid:
                raise ValueError("grid mismatch")
            return f.values.ravel()
        arr = np.asarray(f, dtype=float)
        if arr.shape == self.grid.shape:
            return arr.ravel()
        if arr.ndim == 1 and arr.size == self.grid.n_nodes:
            return arr
        raise ValueError("grid mismatch")

    def norm(self, f, kind="l2") -> float:
        return float(self.norm_many(self._values(f)[:, None], kind)[0])

    def norm_many(self, values: np.ndarray, kind="l2") -> np.ndarray:
        """Norms of many fields at once; values has shape (n_nodes, m)."""
        kind = canonical_norm(kind)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_nodes:
            raise ValueError("grid mismatch")
        if kind == "l2":
            return np.sqrt(np.einsum("i,ij,ij->j", self.weights_flat, v, v))
        if kind == "linf":
            return np.abs(v[self._domain_idx]).max(axis=0)
        gx, gy = self.gradient_ops()
        dx = gx @ v
        dy = gy @ v
        e = np.einsum("i,ij,ij->j", self.weights_flat, dx, dx)
        e += np.einsum("i,ij,ij->j", self.weights_flat, dy, dy)
        return np.sqrt(e)

    def distance(self, f, g, kind="l2") -> float:
        return float(self.norm(self._values(f) - self._values(g), kind))

    # -- persistence --------------------------------------------------------

    def save(self, path):
        save_regions(self, path)

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes


def uniform_domain(grid: Grid2D, region: int = 1, symmetry_edges=()) -> Domain:
    """Domain whose every cell carries one region id."""
    ids = np.full(grid.cell_shape, int(region), dtype=np.int32)
    return Domain(grid, ids, symmetry_edges)


@dataclass
class Field2D:
    """A scalar field sampled at the nodes of a domain's grid."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.domain.grid.shape:
            raise ValueError(
                f"value shape {self.values.shape} does not match grid {self.domain.grid.shape}"
            )
        if not np.isfinite(self.values).all():
            raise ValueError("field values must be finite")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def sample(self, node_indices) -> np.ndarray:
        """Pointwise values at flat node indices (the sensor model)."""
        return self.flat[np.asarray(node_indices, dtype=int)]

    def norm(self, kind="l2") -> float:
        return self.domain.norm(self.values, kind)

    def __add__(self, other: "Field2D") -> "Field2D":
        self._check(other)
        return Field2D(self.domain, self.values + other.values)

    def __sub__(self, other: "Field2D") -> "Field2D":
        self._check(other)
        return Field2D(self.domain, self.values - other.values)

    def __mul__(self, scalar: float) -> "Field2D":
        return Field2D(self.domain, self.values * float(scalar))

    __rmul__ = __mul__

    def _check(self, other: "Field2D"):
        if self.domain.grid != other.domain.grid:
            raise ValueError("grid mismatch")


def norm(f: Field2D, kind="l2") -> float:
    return f.norm(kind)


def distance(f: Field2D, g: Field2D, kind="l2") -> float:
    if f.domain.grid != g.domain.grid:
        raise ValueError("grid mismatch")
    return f.domain.norm(f.values - g.values, kind)


def l2_distance(f: Field2D, g: Field2D) -> float:
    return distance(f, g, "l2")


def linf_distance(f: Field2D, g: Field2D) -> float:
    return distance(f, g, "linf")


# -- geometry file ----------------------------------------------------------
#
# Plain text: one header line "nx ny hx hy", then ny-1 rows of nx-1 region
# ids (row j=0 first, i.e. ascending y). 0 marks exterior cells.


def save_regions(domain: Domain, path):
    path = Path(path)
    g = domain.grid
    lines = [f"{g.nx} {g.ny} {g.hx!r} {g.hy!r}"]
    for row in domain.region_ids:
        lines.append(" ".join(str(int(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def load_regions(path, symmetry_edges=()) -> Domain:
    from .errors import ConfigError

    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().split()
            if len(header) != 4:
                raise ConfigError(f"{path}: header must be 'nx ny hx hy'")
            nx, ny = int(header[0]), int(header[1])
            hx, hy = float(header[2]), float(header[3])
            ids = np.loadtxt(fh, dtype=np.int32, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read geometry file {path}: {exc}") from exc
    grid = Grid2D(nx, ny, hx, hy)
    if ids.shape != grid.cell_shape:
        raise ConfigError(
            f"{path}: {ids.shape} region rows/cols, expected {grid.cell_shape}"
        )
    return Domain(grid, ids, symmetry_edges)
