"""Held-out metrics: log-likelihoods, missed skills, conditioning, boundaries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from skillseg.datagen import SkillLocationSet, min_jerk_segment
from skillseg.model import ForwardTrace, SkillModel, extract_row_trace
from skillseg.objective import TrainConfig, dataset_loglik

DELTA_MATCH = 0.15


# ---- skill matching ----


def skill_prototype_targets(locset: SkillLocationSet, sub_len: int,
                            active: list[int] | None = None) -> np.ndarray:
    """Expected decoded skill per goal location under uniform task sampling.

    The average sub-trajectory reaching location j starts at the mean of the
    other locations, so the target for skill j is the minimum-jerk segment
    from that mean to location j.
    """
    locs = locset.locations if active is None else locset.locations[list(active)]
    n = locs.shape[0]
    targets = np.empty((n, sub_len, locs.shape[1]))
    for j in range(n):
        start = np.delete(locs, j, axis=0).mean(axis=0)
        targets[j] = min_jerk_segment(start, locs[j], sub_len)
    return targets


@dataclass
class MissedSkillResult:
    count: int
    assignment: list[tuple[int, int]]
    distances: list[float]


def prototype_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over steps of the pointwise L2 distance between two L x D curves."""
    return float(np.linalg.norm(a - b, axis=1).mean())


def missed_skills(decoded: np.ndarray, targets: np.ndarray,
                  delta_match: float = DELTA_MATCH) -> MissedSkillResult:
    """Optimal one-to-one match of ground-truth prototypes to decoded skills.

    A prototype is missed when its assigned decoded skill is farther than
    ``delta_match`` (mean pointwise L2), or when there are fewer decoded
    skills than prototypes. Invariant under relabeling of decoded skills.
    """
    n_true, n_dec = targets.shape[0], decoded.shape[0]
    cost = np.empty((n_true, n_dec))
    for j in range(n_true):
        for k in range(n_dec):
            cost[j, k] = prototype_distance(targets[j], decoded[k])
    rows, cols = linear_sum_assignment(cost)
    assignment = list(zip(rows.tolist(), cols.tolist()))
    distances = [float(cost[j, k]) for j, k in assignment]
    missed = sum(1 for d in distances if d > delta_match)
    missed += max(0, n_true - n_dec)
    return MissedSkillResult(missed, assignment, distances)


def missed_skills_for_model(model: SkillModel, locset: SkillLocationSet,
                            delta_match: float = DELTA_MATCH,
                            active: list[int] | None = None) -> MissedSkillResult:
    targets = skill_prototype_targets(locset, model.config.sub_len, active)
    return missed_skills(model.skill_prototypes(), targets, delta_match)


# ---- conditioning ----


def extract_conditioning(model: SkillModel) -> np.ndarray:
    """Row-stochastic S x S matrix: entry (i, j) = P(skill j follows skill i)."""
    matrix = model.conditioning_matrix()
    if not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
        raise AssertionError("conditioning rows do not sum to 1")
    return matrix


def conditioning_gap_split(model: SkillModel) -> tuple[float, float]:
    """(mean P over small-gap pairs, mean P over large-gap pairs).

    The gap of an ordered pair (i, j) is the distance from skill i's decoded
    endpoint to skill j's decoded start; pairs split at the median gap.
    """
    protos = model.skill_prototypes()
    matrix = model.conditioning_matrix()
    gaps = np.linalg.norm(protos[:, -1, :][:, None, :] - protos[:, 0, :][None, :, :], axis=-1)
    median = np.median(gaps)
    small = matrix[gaps <= median]
    large = matrix[gaps > median]
    return float(small.mean()), float(large.mean())


# ---- segmentation quality ----


@dataclass
class BoundaryError:
    mean_abs_error: float
    over_segmentation: int
    under_segmentation: int
    n_matched: int


def boundary_error(predicted: list[float], truth: list[float]) -> BoundaryError:
    """Optimal monotone alignment of predicted and true boundaries.

    Matches min(P, G) pairs preserving order so the total absolute time
    difference is minimal; surplus on either side counts as over- or
    under-segmentation.
    """
    pred = sorted(float(x) for x in predicted)
    true = sorted(float(x) for x in truth)
    over = max(0, len(pred) - len(true))
    under = max(0, len(true) - len(pred))
    small, big = (pred, true) if len(pred) <= len(true) else (true, pred)
    k, n = len(small), len(big)
    if k == 0:
        return BoundaryError(0.0, over, under, 0)
    inf = float("inf")
    cost = np.full((k + 1, n + 1), inf)
    cost[0, :] = 0.0
    for i in range(1, k + 1):
        for j in range(1, n + 1):
            step = cost[i - 1, j - 1] + abs(small[i - 1] - big[j - 1])
            cost[i, j] = min(cost[i, j - 1], step)
    return BoundaryError(float(cost[k, n]) / k, over, under, k)


def segmentation_errors(model: SkillModel, values: np.ndarray,
                        boundaries: list[list[float]]) -> list[BoundaryError]:
    """Test-mode boundary errors for every annotated trajectory."""
    out = []
    for start in range(0, values.shape[0], 256):
        batch = values[start:start + 256]
        trace = model.forward_batch(batch, mode="test")
        for row in range(batch.shape[0]):
            ft = extract_row_trace(trace, row)
            out.append(boundary_error(ft.boundaries, boundaries[start + row]))
    return out


# ---- report ----


@dataclass
class EvalReport:
    test_loglik: float
    train_loglik: float
    missed_skills: int | None = None
    skill_distances: list[float] = field(default_factory=list)
    mean_boundary_error: float | None = None
    over_segmentation: int = 0
    under_segmentation: int = 0
    n_trajectories: int = 0
    seed: int = 0
    checkpoint: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


def evaluate_model(model: SkillModel, dataset, cfg: TrainConfig,
                   locset: SkillLocationSet | None = None,
                   checkpoint_name: str = "", var_norm: np.ndarray | None = None,
                   rng: np.random.Generator | None = None) -> EvalReport:
    """Full held-out evaluation: both log-likelihoods plus, when ground truth
    is available, missed skills and boundary errors."""
    from skillseg.objective import TRAIN_FRAC, variance_normalizer

    train_split, test_split = dataset.train_test_split(TRAIN_FRAC)
    if var_norm is None:
        var_norm = variance_normalizer(train_split, cfg.variance_normalization)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    test_ll = dataset_loglik(model, test_split.values, cfg, mode="test", var_norm=var_norm)
    train_ll = dataset_loglik(model, train_split.values[:512], cfg, mode="train",
                              omega=cfg.omega[1], rng=rng, var_norm=var_norm)
    report = EvalReport(test_loglik=test_ll, train_loglik=train_ll,
                        n_trajectories=dataset.count, seed=cfg.seed,
                        checkpoint=checkpoint_name)
    if locset is not None:
        active = dataset.generator_config.get("active")
        result = missed_skills_for_model(model, locset, active=active)
        report.missed_skills = result.count
        report.skill_distances = result.distances
    if test_split.has_annotations:
        errors = segmentation_errors(model, test_split.values, test_split.boundaries)
        matched = sum(e.n_matched for e in errors)
        unmatched = sum(e.over_segmentation + e.under_segmentation for e in errors)
        # unmatched boundaries count at the worst possible offset (1.0), so a
        # model that never segments cannot score well by matching nothing
        total = sum(e.mean_abs_error * e.n_matched for e in errors) + 1.0 * unmatched
        report.mean_boundary_error = float(total / max(matched + unmatched, 1))
        report.over_segmentation = int(sum(e.over_segmentation for e in errors))
        report.under_segmentation = int(sum(e.under_segmentation for e in errors))
    return report


def locset_from_config(config: dict) -> SkillLocationSet | None:
    """Rebuild the canonical location set recorded in a dataset manifest."""
    locs = config.get("locations") or config.get("goals")
    if locs is None:
        return None
    return SkillLocationSet(np.asarray(locs), config.get("jitter_sigma", 0.0) or 0.02)
