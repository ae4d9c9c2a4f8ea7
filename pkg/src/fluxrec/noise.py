"""Deterministic Gaussian measurement noise.

Draws come from the counter-based Philox generator keyed on (seed,
repetition) with the counter block selecting an independent stream per
field; the k-th draw of a stream perturbs the k-th sensor. Requesting more
sensors extends the same stream, so the first m values never change when m
grows — the row-by-row extension property the least-squares studies rely
on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .csgeim import MeasurementVector


@dataclass(frozen=True)
class NoiseSpec:
    """Absolute noise amplitude plus the reproducibility keys."""

    sigma: float
    seed: int = 0
    repetitions: int = 1

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")


def noise_draws(spec: NoiseSpec, repetition: int, count: int, stream: int = 0) -> np.ndarray:
    """The first ``count`` noise values of one (seed, repetition, stream)."""
    if spec.sigma == 0.0:
        return np.zeros(count)
    gen = np.random.Generator(
        np.random.Philox(key=[spec.seed, repetition], counter=[0, 0, 0, stream])
    )
    return spec.sigma * gen.standard_normal(count)


def perturb(
    exact: np.ndarray,
    spec: NoiseSpec,
    repetition: int = 0,
    sensor_indices=None,
    stream: int = 0,
) -> MeasurementVector:
    """Add i.i.d. Gaussian noise to exact sensor readings.

    With sigma = 0 the values are returned unchanged (no generator state is
    consumed). ``stream`` separates independent targets measured within the
    same repetition.
    """
    exact = np.asarray(exact, dtype=float)
    values = exact + noise_draws(spec, repetition, exact.size, stream)
    if sensor_indices is None:
        sensor_indices = np.arange(exact.size)
    return MeasurementVector(
        sensor_indices=np.asarray(sensor_indices, dtype=int),
        values=values,
        sigma=spec.sigma,
        seed=spec.seed,
        repetition=repetition,
    )
