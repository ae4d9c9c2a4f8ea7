"""Snapshot containers and the on-disk snapshot archive.

An archive directory holds:

* ``manifest.json``   grid header, parameter list, k_eff list, component
                      order, role tag and normalization metadata
* ``regions.txt``     the geometry file of the domain
* ``snap_NNNN.bin``   raw little-endian float64 field blocks per snapshot,
                      in component order (phi1, phi2, power; absent
                      components are skipped)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fields import Domain, Field2D, load_regions, save_regions

COMPONENTS = ("phi1", "phi2", "power")

_FORMAT = "fluxrec-snapshots-1"


@dataclass
class Snapshot:
    """One manifold member: thermal flux, optional companions, optional k_eff."""

    mu: object
    phi2: Field2D
    phi1: Field2D | None = None
    power: Field2D | None = None
    keff: float | None = None

    def get(self, component: str) -> Field2D:
        if component not in COMPONENTS:
            raise ValueError(f"unknown component {component!r}")
        f = getattr(self, component)
        if f is None:
            raise ValueError(f"snapshot has no {component} component")
        return f

    def has(self, component: str) -> bool:
        return getattr(self, component) is not None

    def scaled(self, factor: float) -> "Snapshot":
        def s(f):
            return None if f is None else f * factor

        return Snapshot(mu=self.mu, phi2=self.phi2 * factor, phi1=s(self.phi1),
                        power=s(self.power), keff=self.keff)


def _mu_key(mu) -> tuple:
    return tuple(np.atleast_1d(np.asarray(mu, dtype=float)).tolist())


class SnapshotSet:
    """Ordered snapshots sharing one grid, with pairwise-distinct parameters."""

    def __init__(self, domain: Domain, snapshots, role: str = "training", sensor_scale: float = 1.0):
        snapshots = list(snapshots)
        if not snapshots:
            raise ValueError("empty snapshot set")
        for s in snapshots:
            if s.phi2.domain.grid != domain.grid:
                raise ValueError("all snapshots must share one grid")
        keys = [_mu_key(s.mu) for s in snapshots]
        if len(set(keys)) != len(keys):
            raise ValueError("parameters pairwise distinct")
        self.domain = domain
        self.snapshots = snapshots
        self.role = role
        self.sensor_scale = float(sensor_scale)
        self._matrices: dict = {}

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, i) -> Snapshot:
        return self.snapshots[i]

    @property
    def mus(self) -> list:
        return [s.mu for s in self.snapshots]

    @property
    def components(self) -> tuple:
        return tuple(c for c in COMPONENTS if self.snapshots[0].has(c))

    def component_matrix(self, component: str) -> np.ndarray:
        """All fields of one component as columns of an (n_nodes, m) matrix."""
        if component not in self._matrices:
            cols = [s.get(component).flat for s in self.snapshots]
            self._matrices[component] = np.column_stack(cols)
        return self._matrices[component]

    def rescaled(self, factor: float, sensor_scale: float | None = None) -> "SnapshotSet":
        """Every component of every snapshot multiplied by one scalar."""
        out = SnapshotSet(
            self.domain,
            [s.scaled(factor) for s in self.snapshots],
            role=self.role,
            sensor_scale=self.sensor_scale * factor if sensor_scale is None else sensor_scale,
        )
        return out

    # -- archive ------------------------------------------------------------

    def save(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        save_regions(self.domain, path / "regions.txt")
        comps = list(self.components)
        manifest = {
            "format": _FORMAT,
            "grid": {
                "nx": self.domain.grid.nx,
                "ny": self.domain.grid.ny,
                "hx": self.domain.grid.hx,
                "hy": self.domain.grid.hy,
            },
            "symmetry_edges": sorted(self.domain.symmetry_edges),
            "regions_file": "regions.txt",
            "role": self.role,
            "components": comps,
            "mus": [list(_mu_key(s.mu)) for s in self.snapshots],
            "keffs": [s.keff for s in self.snapshots],
            "norm_tags": {
                "flux_normalization": "mean-core-power",
                "sensor_scale": self.sensor_scale,
            },
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
        for idx, snap in enumerate(self.snapshots):
            blocks = [np.ascontiguousarray(snap.get(c).flat, dtype="<f8") for c in comps]
            with open(path / f"snap_{idx:04d}.bin", "wb") as fh:
                for b in blocks:
                    fh.write(b.tobytes())

    @classmethod
    def load(cls, path) -> "SnapshotSet":
        path = Path(path)
        mf_path = path / "manifest.json"
        if not mf_path.exists():
            raise ConfigError(f"{path} is not a snapshot archive (missing manifest.json)")
        manifest = json.loads(mf_path.read_text())
        if manifest.get("format") != _FORMAT:
            raise ConfigError(f"{path}: unsupported archive format {manifest.get('format')!r}")
        domain = load_regions(
            path / manifest["regions_file"],
            symmetry_edges=manifest.get("symmetry_edges", ()),
        )
        comps = manifest["components"]
        n = domain.grid.n_nodes
        shape = domain.grid.shape
        snaps = []
        for idx, (mu, keff) in enumerate(zip(manifest["mus"], manifest["keffs"])):
            raw = np.fromfile(path / f"snap_{idx:04d}.bin", dtype="<f8")
            if raw.size != n * len(comps):
                raise ConfigError(f"{path}: snapshot {idx} has wrong block size")
            fields = {}
            for k, comp in enumerate(comps):
                fields[comp] = Field2D(domain, raw[k * n : (k + 1) * n].reshape(shape))
            mu_val = mu[0] if len(mu) == 1 else tuple(mu)
            snaps.append(Snapshot(mu=mu_val, keff=keff, **fields))
        return cls(
            domain,
            snaps,
            role=manifest.get("role", "training"),
            sensor_scale=manifest.get("norm_tags", {}).get("sensor_scale", 1.0),
        )


def normalize_sensor_scale(training: SnapshotSet, mask: np.ndarray) -> tuple:
    """Rescale a training set so its largest phi2 sensor value is one.

    Returns the rescaled set and the applied factor; apply the same factor
    to any test set evaluated against a model trained on the result.
    """
    phi2 = training.component_matrix("phi2")
    peak = float(np.abs(phi2[mask]).max())
    if peak == 0.0:
        raise ValueError("training set has identically zero phi2")
    factor = 1.0 / peak
    return training.rescaled(factor, sensor_scale=factor), factor
