"""Noise-robustness and measurement-count studies over a test manifold.

A study fixes a trained model and a test snapshot set, draws deterministic
noise realizations, reconstructs every test state with both the plain
interpolation (square system, m = n) and the cone-constrained least squares
(m >= n rows), and aggregates per-parameter errors over repetitions.

Errors are relative to the true field norm parameter by parameter, so the
tabulated values compare directly against the absolute noise amplitude of
the unit-peak-normalized measurements. Reported ``mean_error`` is the max
over the test set of the per-parameter repetition mean; the companion
aggregation file records the mean over the test set as well.

For the l2 and h1 norms the error of a candidate coefficient vector is
evaluated in coefficient space through precomputed Gram blocks, which keeps
the cost of a study independent of the grid size. Noise-free rows and all
max-norm rows are evaluated by expanding the reconstruction on the grid,
where the quadratic shortcut would lose accuracy to cancellation.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .csgeim import CoefficientCone, bvls_solve
from .errors import ConfigError
from .fields import canonical_norm
from .geim import GeimModel, error_curves
from .noise import NoiseSpec, noise_draws
from .snapshots import SnapshotSet

CSV_HEADER = ("n", "m", "sigma", "component", "norm", "mean_error", "std_error", "repetitions")


@dataclass
class StudyConfig:
    """Knobs of a noise or measurement-count study."""

    case: str = "I"
    norm: str = "l2"
    ns: tuple = tuple(range(1, 31))
    m_rule: str = "ratio:2"
    sigmas: tuple = (1e-2, 1e-4, 1e-6)
    seed: int = 2024
    repetitions: int = 50
    components: tuple | None = None
    relative: bool = True
    alpha: float = 2.0
    n_fixed: int = 10
    m_factors: tuple = (1, 2, 4, 8, 16)

    def m_of(self, n: int) -> int:
        kind, _, value = self.m_rule.partition(":")
        if kind == "ratio":
            return max(n, int(round(float(value) * n)))
        if kind == "fixed":
            m = int(value)
            if m < n:
                raise ConfigError(f"fixed m={m} smaller than n={n}")
            return m
        raise ConfigError(f"unknown m rule {self.m_rule!r}")


@dataclass
class ErrorRow:
    n: int
    m: int
    sigma: float
    component: str
    norm: str
    mean_error: float
    std_error: float
    repetitions: int
    method: str = "csgeim"
    mean_error_avg: float = float("nan")
    std_error_avg: float = float("nan")


@dataclass
class ErrorTable:
    """Study output: rows plus enough metadata to reproduce the run."""

    rows: list
    case: str
    norm: str
    relative: bool
    meta: dict = dc_field(default_factory=dict)

    def select(self, method=None, component=None, sigma=None, m=None):
        out = []
        for r in self.rows:
            if method is not None and r.method != method:
                continue
            if component is not None and r.component != component:
                continue
            if sigma is not None and not np.isclose(r.sigma, sigma, rtol=0, atol=1e-300 + 1e-12 * abs(sigma)):
                continue
            if m is not None and r.m != m:
                continue
            out.append(r)
        return out

    def curve(self, method: str, component: str, sigma: float, x: str = "n"):
        rows = sorted(self.select(method, component, sigma), key=lambda r: getattr(r, x))
        return (
            np.array([getattr(r, x) for r in rows]),
            np.array([r.mean_error for r in rows]),
        )


def _align_scale(model: GeimModel, snapshot_set: SnapshotSet) -> SnapshotSet:
    """Bring a snapshot set to the normalization the model was trained in."""
    if np.isclose(snapshot_set.sensor_scale, model.sensor_scale):
        return snapshot_set
    return snapshot_set.rescaled(model.sensor_scale / snapshot_set.sensor_scale,
                                 sensor_scale=model.sensor_scale)


class _ErrorEvaluator:
    """Per-parameter reconstruction errors for batches of coefficient vectors."""

    def __init__(self, model: GeimModel, test: SnapshotSet, norm: str, components, relative: bool):
        self.model = model
        self.norm = canonical_norm(norm)
        self.components = components
        self.relative = relative
        self.truth = {c: test.component_matrix(c) for c in components}
        dom = model.domain
        self.true_norms = {c: dom.norm_many(self.truth[c], self.norm) for c in components}
        self.quadratic = self.norm in ("l2", "h1")
        if self.quadratic:
            if self.norm == "l2":
                w = dom.weights_flat[:, None]
                inner = lambda mat: w * mat
            else:
                k = dom.h1_matrix()
                inner = lambda mat: k @ mat
            self.gram = {}
            self.cross = {}
            self.sq = {}
            for c in components:
                q = model.basis[c]
                wq = inner(q)
                self.gram[c] = q.T @ wq
                self.cross[c] = wq.T @ self.truth[c]
                self.sq[c] = np.einsum("ij,ij->j", self.truth[c], inner(self.truth[c]))

    def _scale(self, comp, errs):
        if self.relative:
            return errs / self.true_norms[comp]
        return errs

    def fast(self, comp: str, coeffs: np.ndarray) -> np.ndarray:
        """Gram-based errors; adequate whenever errors sit above the noise floor."""
        n = coeffs.shape[0]
        g = self.gram[comp][:n, :n]
        h = self.cross[comp][:n]
        e2 = self.sq[comp] - 2.0 * np.einsum("ij,ij->j", coeffs, h)
        e2 += np.einsum("ij,ik,kj->j", coeffs, g, coeffs)
        return self._scale(comp, np.sqrt(np.clip(e2, 0.0, None)))

    def exact(self, comp: str, coeffs: np.ndarray) -> np.ndarray:
        """Expansion on the grid; exact up to roundoff in the field values."""
        n = coeffs.shape[0]
        resid = self.truth[comp] - self.model.basis[comp][:, :n] @ coeffs
        return self._scale(comp, self.model.domain.norm_many(resid, self.norm))

    def __call__(self, comp: str, coeffs: np.ndarray, exact: bool) -> np.ndarray:
        if exact or not self.quadratic:
            return self.exact(comp, coeffs)
        return self.fast(comp, coeffs)


def _aggregate(per_param: np.ndarray) -> tuple:
    """(max-of-means, std at argmax, mean-of-means, rms std) over (reps, params)."""
    mean_p = per_param.mean(axis=0)
    if per_param.shape[0] > 1:
        std_p = per_param.std(axis=0, ddof=1)
    else:
        std_p = np.zeros_like(mean_p)
    p_star = int(np.argmax(mean_p))
    return (
        float(mean_p[p_star]),
        float(std_p[p_star]),
        float(mean_p.mean()),
        float(np.sqrt(np.mean(std_p**2))),
    )


def run_noise_study(model: GeimModel, test_set: SnapshotSet, cfg: StudyConfig) -> ErrorTable:
    """Plain-interpolation and cone-constrained errors across n, sigma, repetition.

    The plain baseline always uses the square system m = n on the same noisy
    readings; the constrained solve uses the configured number of rows.
    """
    test = _align_scale(model, test_set)
    norm = canonical_norm(cfg.norm)
    components = tuple(cfg.components) if cfg.components else model.components
    ns = sorted(set(int(n) for n in cfg.ns))
    if ns[0] < 1 or ns[-1] > model.n_max:
        raise ConfigError(f"basis sizes must lie in [1, {model.n_max}]")
    m_of = {n: cfg.m_of(n) for n in ns}
    if max(m_of.values()) > model.m_max:
        raise ConfigError(
            f"rule needs m={max(m_of.values())} sensors but model stores {model.m_max}"
        )
    # the plain baseline's coefficients come from one full-size triangular
    # solve per repetition (prefix-sliced per n), so draw noise for all rows
    max_m = max(max(m_of.values()), model.n_max)

    evaluator = _ErrorEvaluator(model, test, norm, components, cfg.relative)
    cone = CoefficientCone.from_model(model, alpha=cfg.alpha)
    n_test = len(test)
    exact_y = model.measurements(test.component_matrix("phi2"), m=max_m)

    reps = int(cfg.repetitions)
    unit_noise = np.empty((reps, max_m, n_test))
    spec = NoiseSpec(sigma=1.0, seed=cfg.seed, repetitions=reps)
    for rep in range(reps):
        for p in range(n_test):
            unit_noise[rep, :, p] = noise_draws(spec, rep, max_m, stream=p)

    rows = []
    full_b = model.B
    sample = model.sample_matrix
    plain_cache: dict = {}

    def plain_coefficients(sigma, rep, noisy):
        key = (sigma, rep)
        if key not in plain_cache:
            plain_cache[key] = la.solve_triangular(
                full_b, noisy[: model.n_max], lower=True, unit_diagonal=True
            )
        return plain_cache[key]

    for n in ns:
        m = m_of[n]
        a = sample[:m, :n]
        q_f, r_f = np.linalg.qr(a)
        bounds = cone.bounds(n)
        for sigma in cfg.sigmas:
            sigma = float(sigma)
            reps_eff = 1 if sigma == 0.0 else reps
            acc = {("geim", c): np.empty((reps_eff, n_test)) for c in components}
            acc.update({("csgeim", c): np.empty((reps_eff, n_test)) for c in components})
            for rep in range(reps_eff):
                noisy = exact_y + sigma * unit_noise[rep]
                c_plain = plain_coefficients(sigma, rep, noisy)[:n]
                x0 = la.solve_triangular(r_f, q_f.T @ noisy[:m], lower=False)
                feasible = ((x0 >= -bounds[:, None]) & (x0 <= bounds[:, None])).all(axis=0)
                c_cs = x0.copy()
                for p in np.flatnonzero(~feasible):
                    c_cs[:, p] = bvls_solve(a, noisy[:m, p], -bounds, bounds)
                assert (np.abs(c_cs) <= bounds[:, None] * (1.0 + 1e-12) + 1e-300).all(), \
                    "constrained solve left the coefficient cone"
                exact_eval = sigma == 0.0
                for comp in components:
                    acc[("geim", comp)][rep] = evaluator(comp, c_plain, exact_eval)
                    acc[("csgeim", comp)][rep] = evaluator(comp, c_cs, exact_eval)
            for comp in components:
                for method in ("geim", "csgeim"):
                    mx, sd, avg, sd_avg = _aggregate(acc[(method, comp)])
                    rows.append(ErrorRow(
                        n=n, m=n if method == "geim" else m, sigma=sigma,
                        component=comp, norm=norm, mean_error=mx, std_error=sd,
                        repetitions=reps, method=method,
                        mean_error_avg=avg, std_error_avg=sd_avg,
                    ))
    meta = {"config": asdict(cfg), "model": {"case": model.case, "norm": model.norm,
            "n_max": model.n_max, "m_max": model.m_max, "sensor_scale": model.sensor_scale}}
    return ErrorTable(rows=rows, case=cfg.case, norm=norm, relative=cfg.relative, meta=meta)


def run_ratio_study(model: GeimModel, test_set: SnapshotSet, cfg: StudyConfig) -> tuple:
    """Sweep the number of measurement rows at fixed basis dimension.

    Returns (table, (slope, intercept, residual)) with the slope fitted on
    log mean error against log m for the measured component. The fit uses
    the mean over the test set (not the max): the averaging law concerns
    the noise, and the worst-case statistic saturates at the cone-bias
    floor of extrapolatory parameters instead of following it.
    """
    factors = sorted(set(int(f) for f in cfg.m_factors))
    if len(factors) < 3:
        raise ConfigError("need at least 3 sweep points for a slope fit")
    n = int(cfg.n_fixed)
    ms = [f * n for f in factors]
    if ms[-1] > model.m_max:
        raise ConfigError(f"sweep needs m={ms[-1]} sensors but model stores {model.m_max}")
    if len(cfg.sigmas) != 1:
        raise ConfigError("ratio study expects exactly one noise amplitude")

    rows = []
    for m in ms:
        sub = StudyConfig(case=cfg.case, norm=cfg.norm, ns=(n,), m_rule=f"fixed:{m}",
                          sigmas=cfg.sigmas, seed=cfg.seed, repetitions=cfg.repetitions,
                          components=cfg.components, relative=cfg.relative, alpha=cfg.alpha)
        table = run_noise_study(model, test_set, sub)
        rows.extend(table.select(method="csgeim"))
    table = ErrorTable(rows=rows, case=cfg.case, norm=canonical_norm(cfg.norm),
                       relative=cfg.relative,
                       meta={"config": asdict(cfg), "n_fixed": n, "ms": ms})
    comp = (cfg.components or ("phi2",))[0]
    pts = [(r.m, r.mean_error_avg) for r in table.select(method="csgeim", component=comp, sigma=cfg.sigmas[0])]
    fit = fit_loglog_slope(pts)
    return table, fit


def fit_loglog_slope(points) -> tuple:
    """Ordinary least squares of log(error) on log(m): (slope, intercept, residual)."""
    pts = [(float(m), float(e)) for m, e in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if any(m <= 0 or e <= 0 for m, e in pts):
        raise ValueError("all points must be positive")
    x = np.log([m for m, _ in pts])
    y = np.log([e for _, e in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), float(intercept), resid


# -- emission ------------------------------------------------------------------


def _write_atomic(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _format_rows(rows, header, attrs) -> str:
    lines = [",".join(header)]
    for r in rows:
        vals = []
        for a in attrs:
            v = getattr(r, a)
            vals.append(repr(float(v)) if isinstance(v, float) else str(v))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def emit(table: ErrorTable, out_dir, stem: str | None = None) -> list:
    """Write one CSV per method plus the aggregate companion and run manifest.

    Overwrites are atomic and idempotent; a failed run never leaves a
    partial table behind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"case{table.case}_{table.norm}"
    written = []
    attrs = list(CSV_HEADER)
    for method in ("geim", "csgeim"):
        rows = [r for r in table.rows if r.method == method]
        if not rows:
            continue
        path = out / f"{stem}_{method}.csv"
        _write_atomic(path, _format_rows(rows, CSV_HEADER, attrs))
        written.append(path)
    agg_header = list(CSV_HEADER) + ["method", "mean_error_avg", "std_error_avg"]
    path = out / f"{stem}_agg.csv"
    _write_atomic(path, _format_rows(table.rows, agg_header, agg_header))
    written.append(path)

    import numpy as _np
    import scipy as _sp

    from . import __version__

    manifest = {
        "stem": stem,
        "case": table.case,
        "norm": table.norm,
        "relative_errors": table.relative,
        "meta": table.meta,
        "versions": {"fluxrec": __version__, "numpy": _np.__version__, "scipy": _sp.__version__},
    }
    path = out / f"{stem}_manifest.json"
    _write_atomic(path, json.dumps(manifest, indent=1, sort_keys=True))
    written.append(path)
    return written


def read_table(path) -> list:
    """Round-trip reader for the 8-column study CSV."""
    path = Path(path)
    lines = path.read_text().strip().splitlines()
    if not lines or lines[0] != ",".join(CSV_HEADER):
        raise ConfigError(f"{path}: unexpected CSV header")
    rows = []
    for line in lines[1:]:
        f = line.split(",")
        rows.append(ErrorRow(
            n=int(f[0]), m=int(f[1]), sigma=float(f[2]), component=f[3], norm=f[4],
            mean_error=float(f[5]), std_error=float(f[6]), repetitions=int(f[7]),
        ))
    return rows


def noiseless_reference(model: GeimModel, test_set: SnapshotSet, cfg: StudyConfig) -> dict:
    """Noise-free error curves in the study's conventions, keyed by component."""
    test = _align_scale(model, test_set)
    curves = error_curves(model, test, norm=cfg.norm,
                          components=cfg.components or model.components,
                          relative=cfg.relative)
    return {c.component: c for c in curves}
