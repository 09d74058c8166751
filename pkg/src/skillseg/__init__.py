"""Unsupervised segmentation of demonstration trajectories into a skill library.

A trajectory is explained as a sequence of (duration, skill id) latents: a
recurrent inference network proposes how much of the remaining trajectory the
next skill covers, a differentiable window extractor cuts that piece out, and
a discrete-latent autoencoder reconstructs it from a small library of learned
skills. Training maximizes a capacity-constrained, importance-weighted bound.
"""

from skillseg.errors import ConfigError, DataError, NumericError
from skillseg.trajectory import Trajectory, mean_velocity, resample

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "Trajectory",
    "mean_velocity",
    "resample",
]

__version__ = "0.1.0"
