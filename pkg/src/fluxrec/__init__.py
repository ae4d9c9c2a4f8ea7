"""Field reconstruction from sparse sensors for parametric reactor fields.

The package builds greedy interpolation bases and sensor placements from
snapshot sets, reconstructs vector-valued states (fast flux, thermal flux,
power) from thermal-flux measurements alone, and stabilizes reconstruction
under measurement noise by box-constrained least squares on the coefficient
cone implied by the greedy error and stability tables.
"""

from .analytic import AnalyticManifoldSpec, eval_g, generate_analytic_snapshots
from .csgeim import BvlsProblem, CoefficientCone, MeasurementVector, bvls_solve, build_design, cs_reconstruct
from .diffusion import (
    CrossSections,
    DiffusionProblem,
    assemble,
    compute_power,
    generate_snapshots,
    iaea_cross_sections,
    iaea_domain,
    iaea_problem,
    solve_keff,
)
from .fields import Domain, Field2D, Grid2D, distance, l2_distance, linf_distance, load_regions, norm, save_regions, uniform_domain
from .geim import GeimModel, Sensor, error_curves, greedy_build, interpolate, lebesgue_constant, measure, reconstruct, svd_baseline
from .noise import NoiseSpec, perturb
from .snapshots import Snapshot, SnapshotSet, normalize_sensor_scale
from .studies import ErrorTable, StudyConfig, fit_loglog_slope, run_noise_study, run_ratio_study

__version__ = "0.1.0"
