"""Command-line front end.

Subcommands mirror the pipeline: ``generate`` snapshots, ``train`` a model,
``reconstruct`` one state from noisy readings, ``study-noise`` and
``study-ratio`` for the robustness tables, ``baseline-svd`` for the
optimal-decay reference. Study commands write delimited tables plus rendered
figures side by side (``--no-plots`` skips the figures).

Relative ``--out`` paths are resolved against $FLUXREC_OUTPUT_ROOT when it
is set. Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import AnalyticManifoldSpec, analytic_test_snapshots, generate_analytic_snapshots
from .config import get_float, get_int, get_str, parse_mu_spec, read_config
from .csgeim import CoefficientCone, cs_reconstruct
from .diffusion import DiffusionProblem, generate_snapshots, iaea_cross_sections, iaea_domain
from .errors import ConfigError, NumericalError
from .fields import load_regions
from .geim import GeimModel, greedy_build, svd_baseline
from .noise import NoiseSpec, perturb
from .snapshots import SnapshotSet, normalize_sensor_scale
from .studies import StudyConfig, emit, run_noise_study, run_ratio_study

OUTPUT_ROOT_ENV = "FLUXREC_OUTPUT_ROOT"


def _resolve_out(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _parse_ns(spec: str) -> tuple:
    if ":" in spec:
        lo, _, hi = spec.partition(":")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(tok) for tok in spec.replace(",", " ").split())


# -- generate -----------------------------------------------------------------


def _cmd_generate(args) -> int:
    cfg = read_config(args.config) if args.config else {}
    manifold = get_str(cfg, "manifold", "iaea")
    out = _resolve_out(args.out)

    if manifold == "analytic":
        spec = AnalyticManifoldSpec(
            nx=get_int(cfg, "nx", 64),
            ny=get_int(cfg, "ny", 64),
            mu_counts=(get_int(cfg, "mu_count1", 20), get_int(cfg, "mu_count2", 20)),
        )
        if args.mus and args.mus.startswith("mid"):
            k = int(args.mus.split(":")[1]) if ":" in args.mus else 10
            snaps = analytic_test_snapshots(spec, counts=(k, k), role=args.role)
        else:
            snaps = generate_analytic_snapshots(spec, role=args.role)
        snaps.save(out)
        print(f"wrote {len(snaps)} analytic snapshots to {out}")
        return 0

    if manifold != "iaea":
        raise ConfigError(f"unknown manifold {manifold!r}")
    regions = get_str(cfg, "regions", "iaea2d")
    h = get_float(cfg, "h", 1.0)
    boundary = get_str(cfg, "boundary", "zero-flux")
    if regions == "iaea2d":
        domain = iaea_domain(h)
    else:
        edges = get_str(cfg, "symmetry", "west,south")
        domain = load_regions(regions, symmetry_edges=[e for e in edges.split(",") if e])
    problem = DiffusionProblem(
        domain=domain,
        xs=iaea_cross_sections(),
        boundary=boundary,
        mu_range=(get_float(cfg, "mu_min", 1.0), get_float(cfg, "mu_max", 3.0)),
    )
    if not args.mus:
        raise ConfigError("--mus is required for the diffusion manifold")
    mus = parse_mu_spec(args.mus)
    snaps = generate_snapshots(
        problem,
        mus,
        tol_k=get_float(cfg, "tol_k", 1e-8),
        tol_flux=get_float(cfg, "tol_flux", 1e-7),
        max_iter=get_int(cfg, "max_iter", 5000),
        jobs=args.jobs,
        role=args.role,
    )
    snaps.save(out)
    print(f"wrote {len(snaps)} snapshots to {out} "
          f"(k_eff {min(s.keff for s in snaps):.6f}..{max(s.keff for s in snaps):.6f})")
    return 0


# -- train ---------------------------------------------------------------------


def _cmd_train(args) -> int:
    training = SnapshotSet.load(args.snapshots)
    domain = training.domain
    scale_mask = domain.restrict_mask("all")
    training, scale = normalize_sensor_scale(training, scale_mask)
    which = {"I": "all", "II": "core"}[args.case]
    mask = domain.restrict_mask(which)
    model = greedy_build(
        training,
        mask,
        n_max=args.n,
        norm=args.norm,
        m_sensors=args.m if args.m else args.n,
        extra_strategy=args.strategy,
        seed=args.seed,
        case=args.case,
    )
    out = _resolve_out(args.out)
    model.save(out)
    print(f"model: n={model.n_max} m={model.m_max} case={model.case} norm={model.norm} "
          f"scale={scale:.6e} exhausted={model.exhausted} -> {out}")
    if not args.no_plots:
        from . import plots

        plots.plot_sensors(model, out / "sensors.png", title=f"Case {model.case} sensors")
        plots.plot_svd(svd_baseline(training), out / "training_decay.png",
                       eps=model.eps, title="greedy error vs singular values")
    return 0


# -- reconstruct -----------------------------------------------------------------


def _cmd_reconstruct(args) -> int:
    model = GeimModel.load(args.model)
    snaps = SnapshotSet.load(args.snapshots)
    if not np.isclose(snaps.sensor_scale, model.sensor_scale):
        snaps = snaps.rescaled(model.sensor_scale / snaps.sensor_scale,
                               sensor_scale=model.sensor_scale)
    if not 0 <= args.index < len(snaps):
        raise ConfigError(f"--index must be in [0, {len(snaps) - 1}]")
    snap = snaps[args.index]
    m = args.m if args.m else args.n
    exact = model.measurements(snap.phi2.flat, m=m)
    meas = perturb(exact, NoiseSpec(sigma=args.sigma, seed=args.seed),
                   repetition=0, sensor_indices=model.sensors[:m], stream=args.index)
    cone = CoefficientCone.from_model(model, alpha=args.alpha)
    fields, coeffs = cs_reconstruct(model, meas, args.n, cone=cone)

    out = _resolve_out(args.out) if args.out else None
    print(f"reconstructed state mu={snap.mu} with n={args.n}, m={m}, sigma={args.sigma:g}")
    for comp, rec in fields.items():
        truth = snap.get(comp)
        err = model.domain.distance(rec.values, truth.values, model.norm)
        rel = err / max(truth.norm(model.norm), 1e-300)
        print(f"  {comp}: {model.norm} error {err:.4e} (relative {rel:.4e})")
    if out:
        out.mkdir(parents=True, exist_ok=True)
        for comp, rec in fields.items():
            np.ascontiguousarray(rec.flat, dtype="<f8").tofile(out / f"{comp}.bin")
        (out / "coefficients.csv").write_text(
            "coefficient\n" + "\n".join(repr(float(c)) for c in coeffs) + "\n")
        if not args.no_plots:
            from . import plots

            for comp, rec in fields.items():
                plots.plot_field(rec, out / f"{comp}.png", title=f"{comp} reconstruction")
        print(f"wrote fields to {out}")
    return 0


# -- studies ---------------------------------------------------------------------


def _cmd_study_noise(args) -> int:
    model = GeimModel.load(args.model)
    test = SnapshotSet.load(args.test)
    cfg = StudyConfig(
        case=model.case,
        norm=args.norm or model.norm,
        ns=_parse_ns(args.ns),
        m_rule=args.m_rule,
        sigmas=tuple(float(s) for s in args.sigmas.replace(",", " ").split()),
        seed=args.seed,
        repetitions=args.reps,
        alpha=args.alpha,
        components=tuple(args.components.split(",")) if args.components else None,
    )
    table = run_noise_study(model, test, cfg)
    out = _resolve_out(args.out)
    stem = f"noise_case{table.case}_{table.norm}"
    written = emit(table, out, stem=stem)
    if not args.no_plots:
        from . import plots

        for comp in (cfg.components or model.components):
            written.append(plots.plot_noise_study(
                table, comp, out / f"{stem}_{comp}.png",
                title=f"Case {table.case}, {table.norm}: {comp}"))
    print("\n".join(str(p) for p in written))
    return 0


def _cmd_study_ratio(args) -> int:
    model = GeimModel.load(args.model)
    test = SnapshotSet.load(args.test)
    cfg = StudyConfig(
        case=model.case,
        norm=args.norm or model.norm,
        sigmas=(args.sigma,),
        seed=args.seed,
        repetitions=args.reps,
        alpha=args.alpha,
        n_fixed=args.n,
        m_factors=tuple(int(f) for f in args.factors.replace(",", " ").split()),
        components=("phi2",),
    )
    table, fit = run_ratio_study(model, test, cfg)
    out = _resolve_out(args.out)
    stem = f"ratio_case{table.case}_{table.norm}_n{cfg.n_fixed}"
    written = emit(table, out, stem=stem)
    slope, intercept, resid = fit
    (out / f"{stem}_fit.csv").write_text(
        "slope,intercept,residual\n" + f"{slope!r},{intercept!r},{resid!r}\n")
    if not args.no_plots:
        from . import plots

        written.append(plots.plot_ratio_study(
            table, fit, "phi2", args.sigma, out / f"{stem}.png",
            title=f"error vs measurement count, n={cfg.n_fixed}"))
    print(f"slope = {slope:.4f} (residual {resid:.3e})")
    print("\n".join(str(p) for p in written))
    return 0


def _cmd_baseline_svd(args) -> int:
    snaps = SnapshotSet.load(args.snapshots)
    if args.normalize:
        snaps, _ = normalize_sensor_scale(snaps, snaps.domain.restrict_mask("all"))
    sv = svd_baseline(snaps, component=args.component)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"svd_{args.component}.csv"
    lines = ["n,singular_value"] + [f"{i + 1},{float(v)!r}" for i, v in enumerate(sv)]
    path.write_text("\n".join(lines) + "\n")
    if not args.no_plots:
        from . import plots

        plots.plot_svd(sv, out / f"svd_{args.component}.png", title="snapshot singular values")
    print(path)
    return 0


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluxrec",
        description="Sensor-based reconstruction of parametric reactor fields.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="solve the parametric model and archive snapshots")
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--mus", help="parameter spec: lin:a:b:k, mid:a:b:k, list:v1,v2,...")
    p.add_argument("--out", required=True)
    p.add_argument("--role", default="training", choices=("training", "test"))
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="build the greedy basis and sensor set")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--case", default="I", choices=("I", "II"))
    p.add_argument("--norm", default="l2", choices=("l2", "linf", "h1"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, help="sensors to store (default n)")
    p.add_argument("--strategy", default="greedy", choices=("greedy", "random"),
                   help="how sensors beyond the basis are chosen")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct one archived state from noisy readings")
    p.add_argument("--model", required=True)
    p.add_argument("--snapshots", required=True, help="archive providing the true state")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--out")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("study-noise", help="noise robustness table across n and sigma")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ns", default="1:30", help="basis sizes, 'lo:hi' or list")
    p.add_argument("--m-rule", default="ratio:2", help="'ratio:R' or 'fixed:K'")
    p.add_argument("--sigmas", default="1e-2,1e-4,1e-6")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--norm")
    p.add_argument("--components")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_study_noise)

    p = sub.add_parser("study-ratio", help="error vs measurement count at fixed n")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--factors", default="1,2,4,8,16")
    p.add_argument("--sigma", type=float, default=1e-2)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--norm")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_study_ratio)

    p = sub.add_parser("baseline-svd", help="singular values of a snapshot archive")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--component", default="phi2", choices=("phi1", "phi2", "power"))
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_baseline_svd)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
