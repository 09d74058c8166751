"""Desk-scale reproduction studies runnable from one CLI invocation.

Three studies: a deterministic smoke run (tiny two-skill data, minutes), the
scaled 1D study (compressed schedules, hours over 5 seeds), and the staged
curriculum study (2 -> 4 -> 6 skills with temperature resets).
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from skillseg.datagen import locations_1d, make_synthetic_dataset
from skillseg.evaluation import (
    conditioning_gap_split,
    evaluate_model,
    extract_conditioning,
    missed_skills_for_model,
)
from skillseg.objective import TRAIN_FRAC, TrainConfig, curriculum_train, train, variance_normalizer


def smoke_config(seed: int = 0) -> TrainConfig:
    """Two locations, one segment per trajectory, single-sample objective."""
    return TrainConfig(
        s_skills=2, n_max=1, iwae_k=1, batch_size=32, rnn_size=32, linear_size=8,
        gamma_d=1.0, gamma_s=5.0, cap_d=(0.0, 2.0, 2500), cap_s=(0.0, 0.7, 2500),
        omega=(1.0, 0.2, 5000), mu_d=2.0, iterations=5000, seed=seed,
        eval_interval=1000, checkpoint_interval=5000)


def smoke_run(out_dir, seed: int = 0, iterations: int | None = None) -> dict:
    """Criterion: held-out test-mode reconstruction MSE < 1e-2, 0 missed skills."""
    out = Path(out_dir)
    cfg = smoke_config(seed)
    if iterations is not None:
        cfg = replace(cfg, iterations=iterations)
    locset = locations_1d(2)
    dataset = make_synthetic_dataset(locset, per_length=500, n_max=1,
                                     t_steps=cfg.t_steps, seed=seed, name="smoke-1d")
    result = train(cfg, dataset, out)
    model = result.model
    _, test_split = dataset.train_test_split(TRAIN_FRAC)
    trace = model.forward_batch(test_split.values, mode="test")
    mse = float(np.mean((trace.canvas.data - test_split.values) ** 2))
    missed = missed_skills_for_model(model, locset).count
    summary = {
        "study": "smoke", "seed": seed, "iterations": cfg.iterations,
        "test_mse": mse, "missed_skills": missed,
        "passed": bool(mse < 1e-2 and missed == 0),
        "checkpoint": str(result.checkpoint_path),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def scaled_1d_config(seed: int, iterations: int = 10_000) -> TrainConfig:
    """Table-style 1D hyperparameters with schedules compressed to 10k."""
    return TrainConfig(
        cap_d=(0.0, 1.0, iterations), cap_s=(0.0, 1.0, iterations),
        omega=(1.0, 0.2, iterations), iterations=iterations, seed=seed,
        eval_interval=1000, checkpoint_interval=iterations)


def scaled_1d_run(out_dir, seed: int, iterations: int = 10_000,
                  per_length: int = 1000) -> dict:
    """One seed of the scaled 1D study: missed skills, boundary error, ll gap."""
    out = Path(out_dir)
    cfg = scaled_1d_config(seed, iterations)
    locset = locations_1d(6)
    dataset = make_synthetic_dataset(locset, per_length=per_length, n_max=3,
                                     t_steps=cfg.t_steps, seed=seed, name="1d-scaled")
    result = train(cfg, dataset, out)
    report = evaluate_model(result.model, dataset, cfg, locset=locset,
                            checkpoint_name=str(result.checkpoint_path))
    report.save(out / "report.json")
    matrix = extract_conditioning(result.model)
    gap_small, gap_large = conditioning_gap_split(result.model)
    ll_gap = abs(report.test_loglik - report.train_loglik) / max(abs(report.train_loglik), 1e-9)
    summary = {
        "study": "scaled-1d", "seed": seed, "iterations": iterations,
        "missed_skills": report.missed_skills,
        "boundary_error": report.mean_boundary_error,
        "test_loglik": report.test_loglik, "train_loglik": report.train_loglik,
        "loglik_gap": ll_gap,
        "rows_sum_to_one": bool(np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9)),
        "gap_small_mean_prob": gap_small, "gap_large_mean_prob": gap_large,
        "checkpoint": str(result.checkpoint_path),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def scaled_1d_study(out_dir, seeds=(0, 1, 2, 3, 4), iterations: int = 10_000,
                    per_length: int = 1000) -> dict:
    out = Path(out_dir)
    runs = [scaled_1d_run(out / f"seed_{s}", s, iterations, per_length) for s in seeds]
    missed = [r["missed_skills"] for r in runs]
    bounds = [r["boundary_error"] for r in runs]
    gaps = [r["loglik_gap"] for r in runs]
    summary = {
        "study": "scaled-1d-study", "seeds": list(seeds),
        "median_missed": float(np.median(missed)),
        "median_boundary_error": float(np.median(bounds)),
        "median_loglik_gap": float(np.median(gaps)),
        "passed": bool(np.median(missed) <= 1 and np.median(bounds) < 0.05
                       and np.median(gaps) <= 0.15),
        "runs": runs,
    }
    (out / "study.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def curriculum_run(out_dir, seed: int, stage_length: int = 3000,
                   per_length: int = 500) -> dict:
    """Staged 2 -> 4 -> 6 skills; temperature resets at each switch."""
    out = Path(out_dir)
    locset = locations_1d(6)
    horizon = stage_length
    cfg = TrainConfig(cap_d=(0.0, 1.0, 3 * horizon), cap_s=(0.0, 1.0, 3 * horizon),
                      omega=(1.0, 0.2, horizon), seed=seed,
                      eval_interval=max(1, stage_length // 3),
                      checkpoint_interval=stage_length)
    stages = []
    for count in (2, 4, 6):
        stages.append(make_synthetic_dataset(
            locset, per_length=per_length, n_max=3, t_steps=cfg.t_steps,
            seed=seed + count, name=f"1d-{count}skills", active=list(range(count))))
    result = curriculum_train(cfg, stages, out, stage_length=stage_length)
    missed = missed_skills_for_model(result.model, locset).count
    summary = {
        "study": "curriculum", "seed": seed, "stage_length": stage_length,
        "missed_skills": missed, "checkpoint": str(result.checkpoint_path),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def curriculum_study(out_dir, seeds=(0, 1, 2), stage_length: int = 3000,
                     per_length: int = 500) -> dict:
    out = Path(out_dir)
    runs = [curriculum_run(out / f"seed_{s}", s, stage_length, per_length) for s in seeds]
    missed = [r["missed_skills"] for r in runs]
    summary = {
        "study": "curriculum-study", "seeds": list(seeds),
        "median_missed": float(np.median(missed)),
        "passed": bool(np.median(missed) <= 1),
        "runs": runs,
    }
    (out / "study.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary
