"""Synthetic dataset construction, smooth augmentation, and dataset file IO.

Synthetic tasks are reaching movements: waypoints are drawn from a canonical
location set, joined by minimum-jerk segments, and disturbed by a smooth
Gaussian process whose covariance propagates noise along the trajectory while
pinning the start point. Recorded corpora are turned into datasets by cutting
them at known goal locations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from skillseg.errors import ConfigError, DataError, NumericError
from skillseg.trajectory import Trajectory, resample_values

DEFAULT_JITTER_SIGMA = 0.02
DEFAULT_AUGMENT_A = 1e-4
SEGMENT_BUILD_STEPS = 200


# ---- canonical locations ----


@dataclass(frozen=True)
class SkillLocationSet:
    """Canonical target positions (S_true x D) plus per-location jitter std."""

    locations: np.ndarray
    jitter_sigma: float = DEFAULT_JITTER_SIGMA

    def __post_init__(self):
        locs = np.atleast_2d(np.asarray(self.locations, dtype=np.float64))
        if locs.shape[0] < 2:
            raise ConfigError("need at least 2 locations")
        if np.abs(locs).max() > 1.0 + 1e-12:
            raise ConfigError("locations must lie in [-1, 1]^D")
        diffs = np.linalg.norm(locs[:, None, :] - locs[None, :, :], axis=-1)
        np.fill_diagonal(diffs, np.inf)
        if diffs.min() == 0.0:
            raise ConfigError("locations must be pairwise distinct")
        object.__setattr__(self, "locations", locs)

    @property
    def n_locations(self) -> int:
        return self.locations.shape[0]

    @property
    def D(self) -> int:
        return self.locations.shape[1]


def locations_1d(n: int = 6) -> SkillLocationSet:
    """n equally spaced points spanning [-1, 1]."""
    return SkillLocationSet(np.linspace(-1.0, 1.0, n)[:, None])


def locations_3d() -> SkillLocationSet:
    """12 points on a 3 x 2 x 2 axis-aligned lattice over [-1, 1]^3."""
    xs, ys, zs = np.meshgrid(np.linspace(-1, 1, 3), np.linspace(-1, 1, 2),
                             np.linspace(-1, 1, 2), indexing="ij")
    return SkillLocationSet(np.stack([xs, ys, zs], axis=-1).reshape(12, 3))


# ---- trajectory composition ----


def min_jerk_segment(x0, x1, length: int) -> np.ndarray:
    """Quintic point-to-point profile 10s^3 - 15s^4 + 6s^5 from x0 to x1."""
    if length < 2:
        raise ConfigError(f"segment length must be >= 2, got {length}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
    s = np.linspace(0.0, 1.0, length)
    blend = 10.0 * s**3 - 15.0 * s**4 + 6.0 * s**5
    out = x0[None, :] + blend[:, None] * (x1 - x0)[None, :]
    out[0] = x0
    out[-1] = x1  # exact endpoints; x0 + (x1 - x0) can drift an ulp
    return out


def compose_waypoints(waypoints: np.ndarray, t_steps: int) -> tuple[np.ndarray, list[float]]:
    """Join consecutive waypoints with equal-length minimum-jerk segments.

    Returns the composed T x D values and the interior segment boundaries in
    normalized time (exactly k / n_segments). When the output grid divides
    evenly into the segments, they are sampled on it directly; otherwise the
    composition is built on a fine grid and resampled.
    """
    n_seg = waypoints.shape[0] - 1
    if (t_steps - 1) % n_seg == 0:
        seg_len = (t_steps - 1) // n_seg + 1
        parts = [waypoints[0:1, :]]
        for k in range(n_seg):
            parts.append(min_jerk_segment(waypoints[k], waypoints[k + 1], seg_len)[1:])
        values = np.concatenate(parts, axis=0)
    else:
        parts = [waypoints[0:1, :]]
        for k in range(n_seg):
            parts.append(min_jerk_segment(waypoints[k], waypoints[k + 1],
                                          SEGMENT_BUILD_STEPS)[1:])
        values = resample_values(np.concatenate(parts, axis=0), t_steps)
    boundaries = [k / n_seg for k in range(1, n_seg)]
    return values, boundaries


def sample_task_trajectory(locset: SkillLocationSet, n_skills: int, t_steps: int,
                           rng: np.random.Generator, n_max: int = 3,
                           active: list[int] | None = None):
    """One demonstration visiting a start plus n_skills uniformly drawn goals.

    Immediate repetition of a location is excluded (no zero-length skills);
    each visited waypoint gets independent Gaussian jitter. Returns the
    trajectory, its interior boundaries in normalized time, and the canonical
    ids of the visited locations (start first).
    """
    if not 1 <= n_skills <= n_max:
        raise ConfigError(f"n_skills must be in [1, {n_max}], got {n_skills}")
    pool = np.arange(locset.n_locations) if active is None else np.asarray(active, dtype=np.intp)
    if pool.size < 2:
        raise ConfigError("need at least 2 active locations")
    ids = [int(rng.choice(pool))]
    for _ in range(n_skills):
        others = pool[pool != ids[-1]]
        ids.append(int(rng.choice(others)))
    waypoints = locset.locations[ids] + rng.normal(0.0, locset.jitter_sigma,
                                                   size=(len(ids), locset.D))
    values, boundaries = compose_waypoints(waypoints, t_steps)
    return Trajectory(values), boundaries, ids


# ---- smooth augmentation ----


def build_structure_matrix(t_steps: int) -> np.ndarray:
    """T x T matrix with zero first row/column and tridiagonal (2, -1) interior."""
    if t_steps < 3:
        raise ConfigError(f"need T >= 3, got {t_steps}")
    m = np.zeros((t_steps, t_steps))
    idx = np.arange(1, t_steps)
    m[idx, idx] = 2.0
    m[idx[:-1], idx[:-1] + 1] = -1.0
    m[idx[:-1] + 1, idx[:-1]] = -1.0
    return m


@dataclass(frozen=True)
class AugmentationKernel:
    """Factorized disturbance covariance for one trajectory length.

    ``cov`` is the pseudo-inverse of the structure matrix; ``factor`` F
    satisfies F @ F.T == cov, with its first row zeroed so the start point
    never moves.
    """

    t_steps: int
    structure: np.ndarray
    cov: np.ndarray
    factor: np.ndarray

    @classmethod
    def for_length(cls, t_steps: int) -> "AugmentationKernel":
        m = build_structure_matrix(t_steps)
        cov = np.linalg.pinv(m)
        eigvals, eigvecs = np.linalg.eigh(cov)
        if eigvals.min() < -1e-8 * max(eigvals.max(), 1.0):
            raise NumericError(
                f"disturbance covariance not PSD at T={t_steps}: "
                f"min eig {eigvals.min():.3e}, max eig {eigvals.max():.3e}")
        factor = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))[None, :]
        factor = factor.copy()
        factor[0, :] = 0.0
        return cls(t_steps, m, cov, factor)


_KERNEL_CACHE: dict[int, AugmentationKernel] = {}


def get_kernel(t_steps: int) -> AugmentationKernel:
    if t_steps not in _KERNEL_CACHE:
        _KERNEL_CACHE[t_steps] = AugmentationKernel.for_length(t_steps)
    return _KERNEL_CACHE[t_steps]


def augment(traj: Trajectory, a: float, rng: np.random.Generator,
            kernel: AugmentationKernel | None = None) -> Trajectory:
    """Add a draw from N(0, a * cov) independently per spatial dimension."""
    if a < 0:
        raise ConfigError(f"augmentation constant must be >= 0, got {a}")
    if a == 0:
        return Trajectory(traj.values.copy())
    kernel = kernel if kernel is not None else get_kernel(traj.T)
    eps = rng.standard_normal((traj.T, traj.D))
    delta = np.sqrt(a) * (kernel.factor @ eps)
    return Trajectory(traj.values + delta)


# ---- dataset container ----


@dataclass
class Dataset:
    """In-memory dataset: values (n, T, D) plus optional ground-truth annotations."""

    name: str
    values: np.ndarray
    boundaries: list[list[float]] | None = None
    waypoints: list[list[int]] | None = None
    generator_config: dict = field(default_factory=dict)
    split_seed: int = 0
    skipped: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError(f"dataset values must be (n, T, D), got {self.values.shape}")
        for ann in (self.boundaries, self.waypoints):
            if ann is not None and len(ann) != self.count:
                raise DataError("annotation length does not match trajectory count")

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def D(self) -> int:
        return self.values.shape[2]

    @property
    def has_annotations(self) -> bool:
        return self.boundaries is not None

    def train_test_split(self, train_frac: float = 0.9) -> tuple["Dataset", "Dataset"]:
        rng = np.random.default_rng(self.split_seed)
        perm = rng.permutation(self.count)
        n_train = int(round(train_frac * self.count))
        return self._take(perm[:n_train], "train"), self._take(perm[n_train:], "test")

    def _take(self, idx, suffix: str) -> "Dataset":
        return Dataset(
            name=f"{self.name}-{suffix}",
            values=self.values[idx],
            boundaries=None if self.boundaries is None else [self.boundaries[i] for i in idx],
            waypoints=None if self.waypoints is None else [self.waypoints[i] for i in idx],
            generator_config=self.generator_config,
            split_seed=self.split_seed,
            skipped=self.skipped,
        )


def make_synthetic_dataset(locset: SkillLocationSet, per_length: int, n_max: int,
                           t_steps: int, seed: int, name: str,
                           a: float = DEFAULT_AUGMENT_A,
                           active: list[int] | None = None) -> Dataset:
    """per_length trajectories for every sequence length 1..n_max.

    Each trajectory draws from its own child rng stream, so the result is
    reproducible for a fixed seed no matter how generation is partitioned
    across workers.
    """
    total = per_length * n_max
    streams = np.random.SeedSequence(seed).spawn(total)
    kernel = get_kernel(t_steps)
    values = np.empty((total, t_steps, locset.D))
    boundaries, waypoints = [], []
    i = 0
    for n_skills in range(1, n_max + 1):
        for _ in range(per_length):
            rng = np.random.default_rng(streams[i])
            traj, bounds, ids = sample_task_trajectory(
                locset, n_skills, t_steps, rng, n_max=n_max, active=active)
            values[i] = augment(traj, a, rng, kernel).values
            boundaries.append(bounds)
            waypoints.append(ids)
            i += 1
    config = {
        "kind": "synthetic",
        "per_length": per_length,
        "n_max": n_max,
        "T": t_steps,
        "seed": seed,
        "augment_a": a,
        "jitter_sigma": locset.jitter_sigma,
        "locations": locset.locations.tolist(),
        "active": list(map(int, active)) if active is not None else None,
    }
    return Dataset(name, values, boundaries, waypoints, config, split_seed=seed)


# ---- random cuts of recorded trajectories ----


def _goal_visits(values: np.ndarray, goals: np.ndarray, proximity: float):
    """Ordered (step index, goal id) visit events of one trajectory."""
    events = []
    for gid, goal in enumerate(goals):
        dist = np.linalg.norm(values - goal[None, :], axis=1)
        near = dist < proximity
        if not near.any():
            return None, gid
        edges = np.flatnonzero(np.diff(near.astype(np.int8)))
        starts = np.concatenate([[0] if near[0] else [], edges[near[edges + 1]] + 1]).astype(int)
        ends = np.concatenate([edges[~near[edges + 1]], [len(near) - 1] if near[-1] else []]).astype(int)
        for s, e in zip(starts, ends):
            events.append((int(s + np.argmin(dist[s:e + 1])), gid))
    events.sort()
    deduped = [events[0]]
    for ev in events[1:]:
        if ev[1] != deduped[-1][1]:
            deduped.append(ev)
    return deduped, None


def random_cut_dataset(recorded: list[Trajectory], goals: SkillLocationSet,
                       n_cuts: int, min_segments: int, max_segments: int,
                       t_steps: int, seed: int, name: str = "cuts",
                       a: float = DEFAULT_AUGMENT_A, proximity: float = 0.15,
                       normalize: bool = True) -> Dataset:
    """Cut recorded trajectories between goal visits into training samples.

    Every cut spans between min_segments and max_segments consecutive goal
    visits, is resampled to t_steps, and augmented. Recorded trajectories
    that never enter some goal's proximity are skipped and counted.
    """
    if not 1 <= min_segments <= max_segments:
        raise ConfigError("need 1 <= min_segments <= max_segments")
    goal_arr = goals.locations.copy()
    trajs = [t.values.copy() for t in recorded]
    if normalize:
        stacked = np.concatenate(trajs, axis=0)
        lo, hi = stacked.min(axis=0), stacked.max(axis=0)
        span = np.where(hi - lo < 1e-12, 1.0, hi - lo)
        trajs = [2.0 * (v - lo) / span - 1.0 for v in trajs]
        goal_arr = 2.0 * (goal_arr - lo) / span - 1.0

    candidates = []
    skipped = 0
    for values in trajs:
        visits, missing = _goal_visits(values, goal_arr, proximity)
        if visits is None:
            skipped += 1
            continue
        for i in range(len(visits)):
            for j in range(i + min_segments, min(i + max_segments, len(visits) - 1) + 1):
                candidates.append((values, visits[i:j + 1]))
    if not candidates:
        raise DataError("no usable cuts: no recorded trajectory visits all goals")

    rng = np.random.default_rng(seed)
    kernel = get_kernel(t_steps)
    out = np.empty((n_cuts, t_steps, goals.D))
    boundaries, waypoints = [], []
    for k in range(n_cuts):
        values, visits = candidates[rng.integers(len(candidates))]
        idx = [v[0] for v in visits]
        piece = resample_values(values[idx[0]:idx[-1] + 1], t_steps)
        out[k] = augment(Trajectory(piece), a, rng, kernel).values
        span = idx[-1] - idx[0]
        boundaries.append([(i - idx[0]) / span for i in idx[1:-1]])
        waypoints.append([v[1] for v in visits])
    config = {
        "kind": "random-cut",
        "n_cuts": n_cuts,
        "min_segments": min_segments,
        "max_segments": max_segments,
        "T": t_steps,
        "seed": seed,
        "augment_a": a,
        "proximity": proximity,
        "goals": goal_arr.tolist(),
    }
    return Dataset(name, out, boundaries, waypoints, config, split_seed=seed, skipped=skipped)


# ---- file IO ----
#
# On disk a dataset is a JSON manifest plus CSV shards (one row per timestep,
# columns t,dim_0..dim_{D-1}; trajectories separated by one blank line) and,
# when annotations exist, a parallel annotations.json.

SHARD_SIZE = 2000


def _format_shard(values: np.ndarray) -> str:
    d = values.shape[2]
    header = "t," + ",".join(f"dim_{i}" for i in range(d))
    blocks = []
    for traj in values:
        lines = [f"{t}," + ",".join(repr(float(x)) for x in row)
                 for t, row in enumerate(traj)]
        blocks.append("\n".join(lines))
    return header + "\n" + "\n\n".join(blocks) + "\n"


def _parse_shard(text: str, t_steps: int, dims: int, expect_count: int) -> np.ndarray:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("t,"):
        raise DataError("shard missing 't,dim_*' header")
    n_cols = lines[0].count(",") + 1
    if n_cols != dims + 1:
        raise DataError(f"shard has {n_cols - 1} dimensions, manifest says {dims}")
    data_lines = [ln for ln in lines[1:] if ln]
    if len(data_lines) != expect_count * t_steps:
        raise DataError(f"shard has {len(data_lines)} rows, expected {expect_count * t_steps}")
    flat = np.asarray(",".join(data_lines).split(","), dtype=np.float64)
    rows = flat.reshape(len(data_lines), n_cols)
    return rows[:, 1:].reshape(expect_count, t_steps, dims)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write manifest + shards (+ annotations); returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shards = []
    for s, start in enumerate(range(0, dataset.count, SHARD_SIZE)):
        chunk = dataset.values[start:start + SHARD_SIZE]
        fname = f"data_{s:04d}.csv"
        (out / fname).write_text(_format_shard(chunk))
        shards.append({"file": fname, "count": int(chunk.shape[0])})
    manifest = {
        "name": dataset.name,
        "D": dataset.D,
        "T": dataset.T,
        "count": dataset.count,
        "has_annotations": dataset.has_annotations,
        "shards": shards,
        "generator_config": dataset.generator_config,
        "split_seed": dataset.split_seed,
        "skipped": dataset.skipped,
    }
    if dataset.has_annotations:
        (out / "annotations.json").write_text(json.dumps(
            {"boundaries": dataset.boundaries, "waypoints": dataset.waypoints}))
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read manifest {path}: {err}") from err
    for key in ("name", "D", "T", "count", "shards"):
        if key not in manifest:
            raise DataError(f"manifest missing field {key!r}")
    chunks = []
    for shard in manifest["shards"]:
        shard_path = path.parent / shard["file"]
        if not shard_path.exists():
            raise DataError(f"missing shard {shard_path}")
        chunks.append(_parse_shard(shard_path.read_text(), manifest["T"],
                                   manifest["D"], shard["count"]))
    values = np.concatenate(chunks, axis=0) if chunks else np.empty((0, manifest["T"], manifest["D"]))
    if values.shape[0] != manifest["count"]:
        raise DataError(f"manifest count {manifest['count']} != loaded {values.shape[0]}")
    boundaries = waypoints = None
    if manifest.get("has_annotations"):
        ann_path = path.parent / "annotations.json"
        if not ann_path.exists():
            raise DataError(f"missing annotations file {ann_path}")
        ann = json.loads(ann_path.read_text())
        boundaries, waypoints = ann["boundaries"], ann["waypoints"]
    return Dataset(manifest["name"], values, boundaries, waypoints,
                   manifest.get("generator_config", {}),
                   split_seed=manifest.get("split_seed", 0),
                   skipped=manifest.get("skipped", 0))


def load_trajectory_csv(path) -> list[Trajectory]:
    """Ingest recorded trajectories from the same CSV shape as dataset shards."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    lines = text.splitlines()
    if not lines or not lines[0].startswith("t,"):
        raise DataError("trajectory CSV missing 't,dim_*' header")
    n_cols = lines[0].count(",") + 1
    trajectories = []
    block: list[str] = []
    for ln in lines[1:] + [""]:
        if ln:
            block.append(ln)
        elif block:
            flat = np.asarray(",".join(block).split(","), dtype=np.float64)
            trajectories.append(Trajectory(flat.reshape(len(block), n_cols)[:, 1:]))
            block = []
    if not trajectories:
        raise DataError("trajectory CSV contains no data rows")
    return trajectories
