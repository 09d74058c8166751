"""Trajectory containers, canonical resampling, and inference-net preprocessing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from skillseg.errors import ConfigError, DataError

CANONICAL_STEPS = 200


@dataclass(frozen=True)
class Trajectory:
    """A T x D array of positions over normalized time.

    Values are in normalized workspace units; dataset builders scale raw data
    so every dimension lies in [-1, 1].
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataError(f"trajectory values must be T x D, got shape {values.shape}")
        if values.shape[0] < 2 or values.shape[1] < 1:
            raise DataError(f"need T >= 2 and D >= 1, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise DataError("trajectory contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


def resample(traj: Trajectory, t_out: int) -> Trajectory:
    """Linearly interpolate onto ``t_out`` uniformly spaced normalized times.

    Endpoints are preserved exactly; affine-in-time trajectories are
    reproduced exactly for any output length.
    """
    if t_out < 2:
        raise ConfigError(f"t_out must be >= 2, got {t_out}")
    if t_out == traj.T:
        return Trajectory(traj.values.copy())
    return Trajectory(resample_values(traj.values, t_out))


def resample_values(values: np.ndarray, t_out: int) -> np.ndarray:
    """resample() on a bare T x D array."""
    t_in = values.shape[0]
    src = np.linspace(0.0, 1.0, t_in)
    dst = np.linspace(0.0, 1.0, t_out)
    out = np.empty((t_out, values.shape[1]), dtype=np.float64)
    for d in range(values.shape[1]):
        out[:, d] = np.interp(dst, src, values[:, d])
    # np.interp guarantees exact endpoints; pin them anyway against fp drift
    out[0] = values[0]
    out[-1] = values[-1]
    return out


def mean_velocity(traj: Trajectory) -> np.ndarray:
    """Per-timestep mean of signed first differences across dimensions.

    Returns a T x 1 signal; the first entry is padded with 0 so the signal
    keeps the trajectory's length.
    """
    diffs = np.diff(traj.values, axis=0).mean(axis=1)
    out = np.zeros((traj.T, 1), dtype=np.float64)
    out[1:, 0] = diffs
    return out


def identity_signal(traj: Trajectory) -> np.ndarray:
    """Identity preprocessing: the raw T x D values (config-switch alternative)."""
    return traj.values.copy()
