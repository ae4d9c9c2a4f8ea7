"""Two-group neutron diffusion k-eigenvalue solver on structured grids.

Finite-volume 5-point discretization on the dual (node-centered) mesh:
face diffusion coefficients are harmonic means of the two cells a face
crosses, removal/scattering/fission are integrated over each control volume
with quarter-cell weights, and the axial dimension enters through a buckling
term D_g * Bz2 added to the removal of each group.

The dominant eigenpair of A phi = (1/k_eff) F phi is found by power
iteration accelerated with a Wielandt shift: the shifted operator
(A - F/ks)^-1 F is applied with a sparse LU factorization, which brings the
iteration count down to a few tens regardless of the dominance ratio. Inner
solves are direct, so their residual is at roundoff level, well inside the
1e-10 relative contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, ConvergenceError
from .fields import Domain, Field2D, Grid2D
from .snapshots import Snapshot, SnapshotSet

BOUNDARY_KINDS = ("zero-flux", "zero-incoming", "reflective")

# Eigenvalue residual ||A phi - (1/k) F phi||_2 / ||F phi||_2 required at
# convergence, on top of the user-facing tolerances.
EIG_RESIDUAL_TARGET = 1e-8


@dataclass(frozen=True)
class CrossSections:
    """Two-group macroscopic data of one material region (cm / cm^-1 units)."""

    d1: float
    d2: float
    sa1: float
    sa2: float
    s12: float
    nsf1: float = 0.0
    nsf2: float = 0.0
    chi1: float = 1.0
    chi2: float = 0.0
    bz2: float = 0.0

    def __post_init__(self):
        if not (self.d1 > 0.0 and self.d2 > 0.0):
            raise ValueError("diffusion coefficients must be positive")
        for name in ("sa1", "sa2", "s12", "nsf1", "nsf2", "chi1", "chi2", "bz2"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if abs(self.chi1 + self.chi2 - 1.0) > 1e-12:
            raise ValueError("fission spectrum must satisfy chi1 + chi2 = 1")

    @property
    def removal1(self) -> float:
        return self.sa1 + self.s12 + self.d1 * self.bz2

    @property
    def removal2(self) -> float:
        return self.sa2 + self.d2 * self.bz2


@dataclass
class DiffusionProblem:
    """A fully specified eigenvalue problem on a domain.

    ``boundary`` applies to the physical outer boundary; symmetry edges of
    the domain are always reflective (they fall out of the discretization
    naturally). ``mu`` is the scalar parameter of the benchmark manifold,
    the fast-group diffusion coefficient of the reflector region.
    """

    domain: Domain
    xs: dict
    boundary: str = "zero-flux"
    mu: float | None = None
    mu_range: tuple | None = None
    reflector_region: int = 4

    def __post_init__(self):
        if self.boundary not in BOUNDARY_KINDS:
            raise ConfigError(f"unknown boundary kind {self.boundary!r}")
        present = set(np.unique(self.domain.region_ids)) - {0}
        missing = present - set(self.xs)
        if missing:
            raise ConfigError(f"no cross sections for regions {sorted(missing)}")

    def with_mu(self, mu: float) -> "DiffusionProblem":
        """Copy of the problem with the reflector fast diffusion set to mu."""
        if self.mu_range is not None:
            lo, hi = self.mu_range
            if not (lo <= mu <= hi):
                raise ConfigError(f"mu={mu} outside admissible range [{lo}, {hi}]")
        xs = dict(self.xs)
        if self.reflector_region in xs:
            xs[self.reflector_region] = replace(xs[self.reflector_region], d1=float(mu))
        return replace(self, xs=xs, mu=float(mu))


# -- IAEA 2D benchmark -------------------------------------------------------

# Quarter-core layout, 20 cm assemblies with the first row/column halved by
# the symmetry planes. Region 1/2 = fuel, 3 = rodded fuel, 4 = reflector,
# 0 = outside the stepped vessel boundary.
IAEA_ASSEMBLY_MAP = np.array(
    [
        [3, 2, 2, 2, 3, 2, 2, 1, 4],
        [2, 2, 2, 2, 2, 2, 2, 1, 4],
        [2, 2, 2, 2, 2, 2, 1, 1, 4],
        [2, 2, 2, 2, 2, 2, 1, 4, 4],
        [3, 2, 2, 2, 3, 1, 1, 4, 0],
        [2, 2, 2, 1, 1, 4, 4, 0, 0],
        [2, 2, 1, 1, 4, 4, 0, 0, 0],
        [1, 1, 1, 4, 4, 0, 0, 0, 0],
        [4, 4, 4, 4, 0, 0, 0, 0, 0],
    ],
    dtype=np.int32,
)

IAEA_ASSEMBLY_EDGES = np.array([0.0, 10.0, 30.0, 50.0, 70.0, 90.0, 110.0, 130.0, 150.0, 170.0])
IAEA_SIDE = 170.0
IAEA_MU_RANGE = (1.0, 3.0)
IAEA_MU_NOMINAL = 2.0


def iaea_cross_sections(mu: float = IAEA_MU_NOMINAL) -> dict:
    """Benchmark coefficients; only the reflector fast D depends on mu."""
    fuel = dict(d1=1.5, d2=0.4, s12=0.02, sa1=0.01, nsf2=0.135, bz2=0.8e-4)
    return {
        1: CrossSections(sa2=0.080, **fuel),
        2: CrossSections(sa2=0.085, **fuel),
        3: CrossSections(sa2=0.130, **fuel),
        4: CrossSections(d1=float(mu), d2=0.3, s12=0.04, sa1=0.0, sa2=0.010, bz2=0.8e-4),
    }


def iaea_domain(h: float = 1.0) -> Domain:
    """Quarter-core domain at mesh size h (h must divide the 10 cm half pitch)."""
    ratio = 10.0 / h
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError(f"mesh size {h} does not align with the 10 cm half pitch")
    n_cells = int(round(IAEA_SIDE / h))
    grid = Grid2D(n_cells + 1, n_cells + 1, h, h)
    centers = (np.arange(n_cells) + 0.5) * h
    asm = np.searchsorted(IAEA_ASSEMBLY_EDGES, centers) - 1
    ids = IAEA_ASSEMBLY_MAP[np.ix_(asm, asm)]
    return Domain(grid, ids, symmetry_edges=("west", "south"))


def iaea_problem(h: float = 1.0, mu: float = IAEA_MU_NOMINAL, boundary: str = "zero-flux") -> DiffusionProblem:
    return DiffusionProblem(
        domain=iaea_domain(h),
        xs=iaea_cross_sections(mu),
        boundary=boundary,
        mu=mu,
        mu_range=IAEA_MU_RANGE,
    )


def shipped_regions_path():
    """Path of the packaged default geometry file (h = 1 cm quarter core)."""
    return resources.files("fluxrec.data") / "iaea2d.regions"


# -- assembly ----------------------------------------------------------------


@dataclass
class DiffusionOperators:
    """Discrete operators restricted to the active (unknown) nodes."""

    problem: DiffusionProblem
    active: np.ndarray          # flat node indices of unknowns
    volumes: np.ndarray         # control volume areas
    m1: sp.csr_matrix
    m2: sp.csr_matrix
    scatter: np.ndarray         # integrated downscatter coefficient per node
    fission1: np.ndarray        # integrated nu-Sigma_f per node and group
    fission2: np.ndarray
    chi1: np.ndarray
    chi2: np.ndarray

    @property
    def n(self) -> int:
        return self.active.size

    def loss_matrix(self) -> sp.csr_matrix:
        """Block two-group loss operator [[M1, 0], [-S, M2]]."""
        s = sp.diags(self.scatter)
        return sp.bmat([[self.m1, None], [-s, self.m2]], format="csr")

    def fission_matrix(self) -> sp.csr_matrix:
        f1 = self.fission1
        f2 = self.fission2
        return sp.bmat(
            [
                [sp.diags(self.chi1 * f1), sp.diags(self.chi1 * f2)],
                [sp.diags(self.chi2 * f1), sp.diags(self.chi2 * f2)],
            ],
            format="csr",
        )

    def production(self, phi1: np.ndarray, phi2: np.ndarray) -> float:
        return float(self.fission1 @ phi1 + self.fission2 @ phi2)


def _per_cell(domain: Domain, xs: dict, attr: str) -> np.ndarray:
    table = np.zeros(max(xs) + 1)
    for rid, x in xs.items():
        table[rid] = getattr(x, attr)
    out = np.where(domain.cell_interior, table[domain.region_ids], 0.0)
    return out


def _face_couplings(domain: Domain, dcell: np.ndarray):
    """Transmissibilities T between adjacent nodes, x and y directions.

    The face between two neighboring nodes crosses up to two cells; its
    diffusion coefficient is the harmonic mean of the interior ones and the
    face length shrinks to a half face when only one cell is interior.
    """
    g = domain.grid
    ny, nx = g.shape
    interior = domain.cell_interior

    # x faces: between node (j,i) and (j,i+1); crossed cells (j-1,i), (j,i)
    dpad = np.zeros((ny + 1, nx - 1))
    mpad = np.zeros((ny + 1, nx - 1), dtype=bool)
    dpad[1:ny, :] = dcell
    mpad[1:ny, :] = interior
    lo_d, hi_d = dpad[:-1, :], dpad[1:, :]
    lo_m, hi_m = mpad[:-1, :], mpad[1:, :]
    count = lo_m.astype(int) + hi_m.astype(int)
    both = count == 2
    with np.errstate(divide="ignore", invalid="ignore"):
        harm = np.where(both, 2.0 * lo_d * hi_d / np.where(both, lo_d + hi_d, 1.0), 0.0)
    single = np.where(lo_m, lo_d, 0.0) + np.where(hi_m, hi_d, 0.0)
    dface = np.where(both, harm, single)
    tx = dface * (count * 0.5 * g.hy) / g.hx  # shape (ny, nx-1)

    # y faces: between node (j,i) and (j+1,i); crossed cells (j,i-1), (j,i)
    dpad = np.zeros((ny - 1, nx + 1))
    mpad = np.zeros((ny - 1, nx + 1), dtype=bool)
    dpad[:, 1:nx] = dcell
    mpad[:, 1:nx] = interior
    lo_d, hi_d = dpad[:, :-1], dpad[:, 1:]
    lo_m, hi_m = mpad[:, :-1], mpad[:, 1:]
    count = lo_m.astype(int) + hi_m.astype(int)
    both = count == 2
    with np.errstate(divide="ignore", invalid="ignore"):
        harm = np.where(both, 2.0 * lo_d * hi_d / np.where(both, lo_d + hi_d, 1.0), 0.0)
    single = np.where(lo_m, lo_d, 0.0) + np.where(hi_m, hi_d, 0.0)
    dface = np.where(both, harm, single)
    ty = dface * (count * 0.5 * g.hx) / g.hy  # shape (ny-1, nx)

    return tx, ty


def assemble(problem: DiffusionProblem) -> DiffusionOperators:
    domain = problem.domain
    g = domain.grid
    ny, nx = g.shape
    xs = problem.xs

    if problem.boundary == "zero-flux":
        active_mask = domain.interior_nodes
    else:
        active_mask = domain.in_domain
    active = np.flatnonzero(active_mask.ravel())
    index_of = -np.ones(g.n_nodes, dtype=np.int64)
    index_of[active] = np.arange(active.size)

    w = domain.weights_flat[active]

    rem = {1: domain.node_average(_per_cell(domain, xs, "removal1")).ravel(),
           2: domain.node_average(_per_cell(domain, xs, "removal2")).ravel()}
    scatter = domain.node_average(_per_cell(domain, xs, "s12")).ravel()
    fis1 = domain.node_average(_per_cell(domain, xs, "nsf1")).ravel()
    fis2 = domain.node_average(_per_cell(domain, xs, "nsf2")).ravel()
    chi1 = domain.node_average(_per_cell(domain, xs, "chi1")).ravel()
    chi2 = domain.node_average(_per_cell(domain, xs, "chi2")).ravel()

    robin = None
    if problem.boundary == "zero-incoming":
        robin = 0.5 * domain.boundary_length.ravel()

    mats = {}
    for grp in (1, 2):
        dcell = _per_cell(domain, xs, f"d{grp}")
        tx, ty = _face_couplings(domain, dcell)

        diag = np.zeros((ny, nx))
        diag[:, :-1] += tx
        diag[:, 1:] += tx
        diag[:-1, :] += ty
        diag[1:, :] += ty
        diag = diag.ravel()
        diag += rem[grp] * domain.weights_flat
        if robin is not None:
            diag += robin

        rows = [index_of[active]]
        cols = [index_of[active]]
        vals = [diag[active]]

        jj, ii = np.nonzero(tx)
        p = jj * nx + ii
        q = p + 1
        keep = (index_of[p] >= 0) & (index_of[q] >= 0)
        t = tx[jj, ii][keep]
        p, q = index_of[p[keep]], index_of[q[keep]]
        rows += [p, q]
        cols += [q, p]
        vals += [-t, -t]

        jj, ii = np.nonzero(ty)
        p = jj * nx + ii
        q = p + nx
        keep = (index_of[p] >= 0) & (index_of[q] >= 0)
        t = ty[jj, ii][keep]
        p, q = index_of[p[keep]], index_of[q[keep]]
        rows += [p, q]
        cols += [q, p]
        vals += [-t, -t]

        mats[grp] = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(active.size, active.size),
        )

    return DiffusionOperators(
        problem=problem,
        active=active,
        volumes=w,
        m1=mats[1],
        m2=mats[2],
        scatter=scatter[active] * w,
        fission1=fis1[active] * w,
        fission2=fis2[active] * w,
        chi1=chi1[active],
        chi2=chi2[active],
    )


# -- eigenvalue solve ---------------------------------------------------------


def _kinf_bound(xs: dict, present=None) -> float:
    """Upper bound on k_eff: largest infinite-medium k over the regions."""
    best = 0.0
    if present is not None:
        xs = {r: x for r, x in xs.items() if r in present}
    for x in xs.values():
        if x.nsf1 == 0.0 and x.nsf2 == 0.0:
            continue
        a = np.array([[x.sa1 + x.s12, 0.0], [-x.s12, x.sa2]])
        f = np.array([[x.chi1 * x.nsf1, x.chi1 * x.nsf2], [x.chi2 * x.nsf1, x.chi2 * x.nsf2]])
        try:
            vals = np.linalg.eigvals(np.linalg.solve(a, f))
        except np.linalg.LinAlgError:
            return math.nan
        best = max(best, float(np.max(vals.real)))
    return best


def solve_keff(
    problem: DiffusionProblem,
    tol_k: float = 1e-8,
    tol_flux: float = 1e-7,
    max_iter: int = 5000,
) -> Snapshot:
    """Fundamental-mode flux and multiplication factor.

    Stops once the eigenvalue change is below ``tol_k``, the fission-source
    change (relative max norm) is below ``tol_flux`` and the eigenvalue
    residual is below 1e-8. The returned flux is normalized so that the mean
    power over the fuel zone equals one.
    """
    if not (tol_k > 0.0 and tol_flux > 0.0):
        raise ConfigError("tolerances must be positive")
    ops = assemble(problem)
    n = ops.n
    loss = ops.loss_matrix().tocsc()
    fmat = ops.fission_matrix().tocsc()

    present = set(int(r) for r in np.unique(problem.domain.region_ids)) - {0}
    kbound = _kinf_bound(problem.xs, present)
    if not (kbound > 0.0) or math.isnan(kbound):
        raise ConfigError("problem has no usable fission source")

    phi = np.ones(2 * n)
    prod = ops.production(phi[:n], phi[n:])
    psi = ops.fission1 * phi[:n] + ops.fission2 * phi[n:]
    k = kbound

    shift = 1.02 * kbound
    lu = spla.splu((loss - fmat / shift).tocsc())
    refactors = 0
    since_refactor = 0

    fnorm_scale = None
    for iteration in range(1, max_iter + 1):
        y = lu.solve(fmat @ phi)
        prod_y = ops.production(y[:n], y[n:])
        if prod_y == 0.0:
            raise ConvergenceError("fission source vanished during iteration")
        growth = prod_y / prod
        k_new = 1.0 / (1.0 / shift + 1.0 / growth)
        phi = y / growth
        prod = ops.production(phi[:n], phi[n:])
        psi_new = ops.fission1 * phi[:n] + ops.fission2 * phi[n:]

        dk = abs(k_new - k)
        dpsi = np.max(np.abs(psi_new - psi)) / np.max(np.abs(psi_new))
        k, psi = k_new, psi_new

        since_refactor += 1
        if dk <= tol_k and dpsi <= tol_flux:
            fphi = fmat @ phi
            res = np.linalg.norm(loss @ phi - fphi / k) / np.linalg.norm(fphi)
            fnorm_scale = res
            if res <= EIG_RESIDUAL_TARGET:
                break
        # refresh a stale shift: keeps the convergence factor small
        if since_refactor >= 12 and shift > 1.03 * k and refactors < 4:
            shift = 1.015 * k
            lu = spla.splu((loss - fmat / shift).tocsc())
            refactors += 1
            since_refactor = 0
    else:
        raise ConvergenceError(
            f"k-eigenvalue iteration did not converge in {max_iter} iterations "
            f"(mu={problem.mu}, last dk={dk:.3e}, residual={fnorm_scale})"
        )

    phi1 = phi[:n]
    phi2 = phi[n:]
    if phi1.min() <= 0.0 or phi2.min() <= 0.0:
        raise ConvergenceError(
            "converged flux is not strictly positive; discretization is inconsistent"
        )

    # mean power over the fuel zone = 1
    domain = problem.domain
    nsf1_node = domain.node_average(_per_cell(domain, problem.xs, "nsf1")).ravel()
    nsf2_node = domain.node_average(_per_cell(domain, problem.xs, "nsf2")).ravel()
    core_cells = np.isin(domain.region_ids, (1, 2, 3)) & domain.cell_interior
    core_w = np.zeros(domain.grid.shape)
    quarter = 0.25 * domain.grid.hx * domain.grid.hy
    qc = np.where(core_cells, quarter, 0.0)
    core_w[:-1, :-1] += qc
    core_w[:-1, 1:] += qc
    core_w[1:, :-1] += qc
    core_w[1:, 1:] += qc
    core_w = core_w.ravel()
    core_area = float(qc.sum() * 4.0)

    full1 = np.zeros(domain.grid.n_nodes)
    full2 = np.zeros(domain.grid.n_nodes)
    full1[ops.active] = phi1
    full2[ops.active] = phi2
    power_density = nsf1_node * full1 + nsf2_node * full2
    mean_power = float(core_w @ power_density) / core_area
    if mean_power <= 0.0:
        raise ConvergenceError("zero mean core power at convergence")
    scale = 1.0 / mean_power
    full1 *= scale
    full2 *= scale

    f1 = Field2D(domain, full1.reshape(domain.grid.shape))
    f2 = Field2D(domain, full2.reshape(domain.grid.shape))
    power = compute_power(f1, f2, problem.xs, domain)
    return Snapshot(mu=problem.mu, keff=float(k), phi1=f1, phi2=f2, power=power)


def compute_power(phi1: Field2D, phi2: Field2D, xs: dict, domain: Domain) -> Field2D:
    """Pointwise fission power nu*Sigma_f1*phi1 + nu*Sigma_f2*phi2.

    Material data is cell-centered; the nodal coefficient is the
    quarter-cell average over the touching interior cells, which makes the
    power vanish identically in non-fissile regions.
    """
    if phi1.domain.grid != domain.grid or phi2.domain.grid != domain.grid:
        raise ValueError("grid mismatch")
    nsf1 = domain.node_average(_per_cell(domain, xs, "nsf1"))
    nsf2 = domain.node_average(_per_cell(domain, xs, "nsf2"))
    return Field2D(domain, nsf1 * phi1.values + nsf2 * phi2.values)


def generate_snapshots(
    base: DiffusionProblem,
    mus,
    tol_k: float = 1e-8,
    tol_flux: float = 1e-7,
    max_iter: int = 5000,
    jobs: int = 1,
    role: str = "training",
) -> SnapshotSet:
    """One converged snapshot per parameter value, in the given order.

    Snapshots for distinct parameters are independent, so they may be
    computed in parallel worker processes; results are deterministic either
    way.
    """
    mus = [float(m) for m in mus]
    if not mus:
        raise ConfigError("empty parameter list")
    if len(set(mus)) != len(mus):
        raise ConfigError("parameters pairwise distinct")

    def one(mu):
        try:
            return solve_keff(base.with_mu(mu), tol_k=tol_k, tol_flux=tol_flux, max_iter=max_iter)
        except Exception as exc:
            raise type(exc)(f"snapshot at mu={mu}: {exc}") from exc

    if jobs > 1:
        from joblib import Parallel, delayed

        snaps = Parallel(n_jobs=jobs)(delayed(one)(mu) for mu in mus)
    else:
        snaps = [one(mu) for mu in mus]
    return SnapshotSet(base.domain, snaps, role=role)
