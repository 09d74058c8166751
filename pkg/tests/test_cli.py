import json

import numpy as np
import pytest

from skillseg.cli import main
from skillseg.datagen import load_dataset

from conftest import tiny_config


def _gen(tmp_path, name="ds", per_length=6, seed=0):
    out = tmp_path / name
    code = main(["gen-data", "--dataset", "1d-syn", "--out", str(out),
                 "--seed", str(seed), "--per-length", str(per_length),
                 "--config", str(_gen_config(tmp_path))])
    assert code == 0
    return out


def _gen_config(tmp_path):
    path = tmp_path / "gen.json"
    if not path.exists():
        path.write_text(json.dumps({"T": 60, "n_max": 2, "n_locations": 3}))
    return path


def _train_config(tmp_path):
    path = tmp_path / "train.json"
    cfg = tiny_config(iterations=25, batch_size=4, eval_interval=0,
                      checkpoint_interval=0, seed=1)
    path.write_text(json.dumps(cfg.to_dict()))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli")
    data = _gen(tmp_path)
    out = tmp_path / "run"
    code = main(["train", "--config", str(_train_config(tmp_path)),
                 "--data", str(data), "--out", str(out)])
    assert code == 0
    return tmp_path, data, out


def test_gen_data_writes_dataset(tmp_path):
    out = _gen(tmp_path)
    ds = load_dataset(out)
    assert ds.count == 12  # per_length 6 x n_max 2
    assert ds.T == 60
    assert (out / "provenance.json").exists()


def test_gen_data_seeded_shards_byte_identical(tmp_path):
    a = _gen(tmp_path, "a", seed=5)
    b = _gen(tmp_path, "b", seed=5)
    assert (a / "data_0000.csv").read_bytes() == (b / "data_0000.csv").read_bytes()
    c = _gen(tmp_path, "c", seed=6)
    assert (a / "data_0000.csv").read_bytes() != (c / "data_0000.csv").read_bytes()


def test_gen_data_bad_kind_exits_2(tmp_path, capsys):
    code = main(["gen-data", "--dataset", "cut", "--out", str(tmp_path / "x")])
    assert code == 2


def test_gen_data_3d_lattice(tmp_path):
    cfg = tmp_path / "g3.json"
    cfg.write_text(json.dumps({"T": 50, "n_max": 2}))
    code = main(["gen-data", "--dataset", "3d-syn", "--out", str(tmp_path / "d3"),
                 "--seed", "1", "--per-length", "4", "--config", str(cfg)])
    assert code == 0
    ds = load_dataset(tmp_path / "d3")
    assert ds.D == 3 and ds.count == 8
    assert len(np.asarray(ds.generator_config["locations"])) == 12


def test_train_run_outputs(run_dir):
    _, _, out = run_dir
    assert (out / "metrics.csv").exists()
    assert (out / "checkpoint.json").exists()
    assert (out / "provenance.json").exists()
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["config"]["iterations"] == 25


def test_eval_subcommand(run_dir, tmp_path):
    root, data, out = run_dir
    eval_out = root / "eval"
    code = main(["eval", "--checkpoint", str(out / "checkpoint.json"),
                 "--data", str(data), "--out", str(eval_out)])
    assert code == 0
    report = json.loads((eval_out / "report.json").read_text())
    assert "test_loglik" in report and "missed_skills" in report
    assert (eval_out / "plots" / "conditioning.svg").exists()
    assert (eval_out / "plots" / "library.csv").exists()


def test_segment_subcommand(run_dir):
    root, data, out = run_dir
    seg_out = root / "seg"
    code = main(["segment", "--checkpoint", str(out / "checkpoint.json"),
                 "--traj-csv", str(data / "data_0000.csv"), "--out", str(seg_out)])
    assert code == 0
    records = json.loads((seg_out / "segmentation.json").read_text())
    assert len(records) == 12
    assert {"boundaries", "skill_ids", "durations"} <= set(records[0])
    assert (seg_out / "segmentation_000.svg").exists()


def test_sample_subcommand(run_dir):
    root, _, out = run_dir
    sample_out = root / "samples"
    code = main(["sample", "--checkpoint", str(out / "checkpoint.json"),
                 "--n-skills", "2", "--count", "3", "--seed", "0",
                 "--out", str(sample_out)])
    assert code == 0
    chains = json.loads((sample_out / "chains.json").read_text())
    assert len(chains) == 3
    sampled = load_dataset(sample_out / "data")
    assert sampled.count == 3


def test_export_conditioning_subcommand(run_dir):
    root, _, out = run_dir
    cond_out = root / "cond"
    code = main(["export-conditioning", "--checkpoint", str(out / "checkpoint.json"),
                 "--out", str(cond_out)])
    assert code == 0
    rows = (cond_out / "conditioning.csv").read_text().splitlines()
    assert len(rows) == 4  # header + S=3 rows


def test_plot_subcommand(run_dir):
    root, _, out = run_dir
    plot_out = root / "plots"
    code = main(["plot", "--report", str(out), "--out", str(plot_out)])
    assert code == 0
    assert (plot_out / "loglik.svg").exists()
    assert (plot_out / "library.svg").exists()


def test_grad_check_subcommand(capsys):
    code = main(["grad-check", "--points", "2"])
    assert code == 0
    out = capsys.readouterr().out
    assert "all gradient checks passed" in out


def test_missing_file_exits_1(tmp_path):
    code = main(["eval", "--checkpoint", str(tmp_path / "nope.json"),
                 "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
    assert code == 1


def test_malformed_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"alpha\": 1e-3, \"unknown_field\": 3}")
    code = main(["train", "--config", str(bad), "--data", "x", "--out",
                 str(tmp_path / "o")])
    assert code == 2
