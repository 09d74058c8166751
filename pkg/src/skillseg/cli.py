"""Command-line entry point.

One executable with subcommands wiring datasets, training, evaluation,
segmentation, sampling, conditioning export, plotting, gradient checks, and
the reproduction studies. Exit codes: 0 ok, 1 IO error, 2 config error,
3 numeric failure. Every run writes a provenance record (config echo + seed +
package version) next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

import skillseg
from skillseg.datagen import (
    Dataset,
    SkillLocationSet,
    load_dataset,
    load_trajectory_csv,
    locations_1d,
    locations_3d,
    make_synthetic_dataset,
    random_cut_dataset,
    save_dataset,
)
from skillseg.errors import ConfigError, DataError, NumericError
from skillseg.evaluation import evaluate_model, extract_conditioning, locset_from_config
from skillseg.model import SkillModel, extract_row_trace
from skillseg.objective import TRAIN_FRAC, TrainConfig, train, variance_normalizer
from skillseg.plots import render_overlay, render_plots
from skillseg.trajectory import Trajectory, resample


def _write_provenance(out_dir, args: argparse.Namespace, config_echo: dict | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": sys.argv[1:],
        "subcommand": args.cmd,
        "seed": getattr(args, "seed", None),
        "config": config_echo or {},
        "version": skillseg.__version__,
    }
    (out / "provenance.json").write_text(json.dumps(record, indent=1, sort_keys=True))


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"malformed JSON in {path}: {err}") from err


# ---- subcommand implementations ----


def cmd_gen_data(args) -> int:
    overrides = _load_json(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else overrides.get("seed", 0)
    t_steps = overrides.get("T", 200)
    a = overrides.get("augment_a", 1e-4)
    if args.dataset == "1d-syn":
        locset = SkillLocationSet(np.asarray(overrides["locations"])) \
            if "locations" in overrides else locations_1d(overrides.get("n_locations", 6))
        dataset = make_synthetic_dataset(
            locset, per_length=args.per_length or overrides.get("per_length", 10_000),
            n_max=overrides.get("n_max", 3), t_steps=t_steps, seed=seed,
            name=args.name or "1d-syn", a=a, active=overrides.get("active"))
    elif args.dataset == "3d-syn":
        locset = SkillLocationSet(np.asarray(overrides["locations"])) \
            if "locations" in overrides else locations_3d()
        dataset = make_synthetic_dataset(
            locset, per_length=args.per_length or overrides.get("per_length", 10_000),
            n_max=overrides.get("n_max", 3), t_steps=t_steps, seed=seed,
            name=args.name or "3d-syn", a=a, active=overrides.get("active"))
    elif args.dataset == "cut":
        if not args.traj_csv:
            raise ConfigError("--traj-csv is required for --dataset cut")
        goals_spec = overrides.get("goals")
        if goals_spec is None:
            raise ConfigError("cut generation needs 'goals' in --config")
        recorded = load_trajectory_csv(args.traj_csv)
        dataset = random_cut_dataset(
            recorded, SkillLocationSet(np.asarray(goals_spec)),
            n_cuts=overrides.get("n_cuts", 1000),
            min_segments=overrides.get("min_segments", 2),
            max_segments=overrides.get("max_segments", 5),
            t_steps=t_steps, seed=seed, name=args.name or "cuts", a=a,
            proximity=overrides.get("proximity", 0.15))
    else:
        raise ConfigError(f"unknown dataset kind {args.dataset!r}")
    manifest = save_dataset(dataset, args.out)
    _write_provenance(args.out, args, dataset.generator_config)
    print(f"wrote {dataset.count} trajectories to {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    paths = [p for p in args.data.split(",") if p]
    datasets = [load_dataset(p) for p in paths]
    cfg.dataset = args.data
    _write_provenance(args.out, args, cfg.to_dict())
    if len(datasets) == 1:
        result = train(cfg, datasets[0], args.out)
    else:
        from skillseg.objective import curriculum_train
        result = curriculum_train(cfg, datasets, args.out, stage_length=args.stage_length)
    print(f"final checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    model, _, meta = SkillModel.load(args.checkpoint)
    dataset = load_dataset(args.data)
    cfg = TrainConfig.from_dict(meta.get("config", {})) if meta.get("config") else TrainConfig()
    locset = locset_from_config(dataset.generator_config)
    report = evaluate_model(model, dataset, cfg, locset=locset,
                            checkpoint_name=str(args.checkpoint))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    _, test_split = dataset.train_test_split(TRAIN_FRAC)
    traces = []
    for row in range(min(4, test_split.count)):
        trace = model.forward(Trajectory(test_split.values[row]))
        traces.append((test_split.values[row], trace))
    render_plots(out / "plots", traces=traces, library=model.skill_prototypes(),
                 matrix=extract_conditioning(model))
    _write_provenance(args.out, args, {"checkpoint": str(args.checkpoint)})
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return 0


def cmd_segment(args) -> int:
    model, _, _ = SkillModel.load(args.checkpoint)
    trajectories = load_trajectory_csv(args.traj_csv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, traj in enumerate(trajectories):
        canonical = resample(traj, model.config.t_steps)
        trace = model.forward(canonical)
        records.append({
            "index": i,
            "n_segments": trace.n_steps,
            "boundaries": trace.boundaries,
            "skill_ids": trace.skill_ids,
            "durations": trace.durations,
            "window_clipped": trace.clipped,
        })
        render_overlay(canonical.values, trace, out / f"segmentation_{i:03d}.svg")
    (out / "segmentation.json").write_text(json.dumps(records, indent=1, sort_keys=True))
    _write_provenance(args.out, args, {"checkpoint": str(args.checkpoint)})
    print(f"segmented {len(records)} trajectories into {out}")
    return 0


def cmd_sample(args) -> int:
    model, _, _ = SkillModel.load(args.checkpoint)
    rng = np.random.default_rng(args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    chains = []
    for i in range(args.count):
        gen = model.generate(args.n_skills, rng,
                             first_skill=args.first_skill)
        rows.append(gen.trajectory.values)
        chains.append({"index": i, "skill_ids": gen.skill_ids,
                       "durations": gen.durations,
                       "untrained_warning": gen.untrained_warning})
        if gen.untrained_warning:
            print("warning: sampling from an untrained model", file=sys.stderr)
    sampled = Dataset("samples", np.stack(rows), generator_config={"kind": "samples"})
    save_dataset(sampled, out / "data")
    (out / "chains.json").write_text(json.dumps(chains, indent=1, sort_keys=True))
    _write_provenance(args.out, args, {"n_skills": args.n_skills, "count": args.count})
    print(f"wrote {args.count} sampled trajectories to {out}")
    return 0


def cmd_export_conditioning(args) -> int:
    model, _, _ = SkillModel.load(args.checkpoint)
    matrix = extract_conditioning(model)
    out = Path(args.out)
    render_plots(out, matrix=matrix)
    _write_provenance(args.out, args, {"checkpoint": str(args.checkpoint)})
    print(f"conditioning matrix ({matrix.shape[0]} skills) written to {out}")
    return 0


def cmd_plot(args) -> int:
    run_dir = Path(args.report)
    if run_dir.is_file():
        run_dir = run_dir.parent
    metrics = run_dir / "metrics.csv"
    ckpt = run_dir / "checkpoint.json"
    library = matrix = None
    if ckpt.exists():
        model, _, _ = SkillModel.load(ckpt)
        library = model.skill_prototypes()
        matrix = extract_conditioning(model)
    written = render_plots(args.out, library=library, matrix=matrix,
                           metrics_csv=metrics if metrics.exists() else None)
    _write_provenance(args.out, args, {"source": str(run_dir)})
    print(json.dumps({k: v for k, v in written.items() if k != "bands"},
                     indent=1, sort_keys=True))
    return 0


def cmd_grad_check(args) -> int:
    from skillseg.verify import run_gradient_suite
    results = run_gradient_suite(seed=args.seed or 0, points=args.points)
    failed = 0
    for res in results:
        status = "ok" if res.passed else "FAIL"
        print(f"{status:4s} {res.name:28s} max rel err {res.max_rel_error:.3e} "
              f"(tol {res.tolerance:.0e})")
        failed += 0 if res.passed else 1
    if failed:
        print(f"{failed} gradient check(s) failed")
        return 3
    print("all gradient checks passed")
    return 0


def cmd_repro(args) -> int:
    from skillseg import repro
    if args.study == "smoke":
        summary = repro.smoke_run(args.out, seed=args.seed or 0)
    elif args.study == "1d":
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0, 1, 2, 3, 4]
        summary = repro.scaled_1d_study(args.out, seeds=seeds,
                                        iterations=args.iterations or 10_000)
    elif args.study == "curriculum":
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0, 1, 2]
        summary = repro.curriculum_study(args.out, seeds=seeds)
    else:
        raise ConfigError(f"unknown study {args.study!r}")
    _write_provenance(args.out, args, summary)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0 if summary.get("passed", True) else 1


# ---- parser ----


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillseg",
        description="Learn trajectory segmentations and a discrete skill library "
                    "from unlabelled demonstrations.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset on disk")
    p.add_argument("--dataset", required=True, choices=["1d-syn", "3d-syn", "cut"])
    p.add_argument("--config", help="JSON generator config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--per-length", type=int, dest="per_length")
    p.add_argument("--name")
    p.add_argument("--traj-csv", dest="traj_csv", help="recorded trajectories (cut mode)")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on one or more datasets")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--data", required=True,
                   help="dataset manifest; comma-separate for a curriculum")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--stage-length", type=int, default=3000, dest="stage_length")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("segment", help="segment trajectories from a CSV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--traj-csv", required=True, dest="traj_csv")
    p.add_argument("--out", default="segmentation")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("sample", help="sample trajectories from the generative model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-skills", type=int, required=True, dest="n_skills")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--first-skill", type=int, dest="first_skill")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="samples")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("export-conditioning", help="write the skill transition matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="conditioning")
    p.set_defaults(fn=cmd_export_conditioning)

    p = sub.add_parser("plot", help="render figures from a run directory")
    p.add_argument("--report", required=True, help="run directory or report.json")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("grad-check", help="run the full gradient verification suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--points", type=int, default=10)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("repro", help="run a desk-scale reproduction study")
    p.add_argument("--study", required=True, choices=["smoke", "1d", "curriculum"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--iterations", type=int)
    p.set_defaults(fn=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (DataError, OSError) as err:
        print(f"io error: {err}", file=sys.stderr)
        return 1
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
