import json

import pytest

from hydraplus.cli import main
from hydraplus.models import read_manifest


def write(tmp_path, name="c.json", **cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def spiral_teacher(tmp_path_factory):
    d = tmp_path_factory.mktemp("teacher")
    cfg = write(d, task="classification", epochs=1, grid_resolution=4)
    assert run("train-teacher", "--config", cfg, "--out", d / "out") == 0
    return d, cfg, d / "out" / "teacher.ckpt"


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_teacher_manifest(spiral_teacher):
    d, _, ckpt = spiral_teacher
    assert read_manifest(ckpt)["param_count"] == 618060
    log = read_jsonl(d / "out" / "teacher_log.jsonl")
    assert len(log) == 20 and log[0]["member"] == 0
    assert "started" in json.loads((d / "out" / "run_train-teacher.json").read_text())


def test_teacher_rerun_identical(spiral_teacher, tmp_path):
    _, cfg, ckpt = spiral_teacher
    assert run("train-teacher", "--config", cfg, "--out", tmp_path) == 0
    assert (tmp_path / "teacher.ckpt").read_bytes() == ckpt.read_bytes()
    assert (tmp_path / "teacher_log.jsonl").read_bytes() == (ckpt.parent / "teacher_log.jsonl").read_bytes()


def test_distill_and_evaluate(spiral_teacher, tmp_path):
    _, cfg, ckpt = spiral_teacher
    assert run("distill", "--config", cfg, "--teacher", ckpt, "--out", tmp_path / "s") == 0
    student = tmp_path / "s" / "student.ckpt"
    assert read_manifest(student)["param_count"] == 228560
    assert run("evaluate", "--config", cfg, "--model", student, "--reference", ckpt, "--out", tmp_path / "e") == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert metrics["flop_count"] == 230860 and {"error", "ece"} <= set(metrics)
    assert len((tmp_path / "e" / "grid.csv").read_text().splitlines()) == 16 + 1
    tv = json.loads((tmp_path / "e" / "tv.json").read_text())
    assert set(tv) == {"predictive", "aleatoric", "epistemic"}


def test_teacher_vs_teacher_tv(spiral_teacher, tmp_path):
    _, cfg, ckpt = spiral_teacher
    assert run("evaluate", "--config", cfg, "--model", ckpt, "--out", tmp_path / "ref") == 0
    assert run("evaluate", "--config", cfg, "--model", ckpt, "--reference", tmp_path / "ref", "--out", tmp_path) == 0
    assert set(json.loads((tmp_path / "tv.json").read_text()).values()) == {0.0}


def test_hydra_preset(spiral_teacher, tmp_path):
    _, cfg, ckpt = spiral_teacher
    assert run("distill", "--config", cfg, "--teacher", ckpt, "--preset", "hydra", "--out", tmp_path) == 0
    run_cfg = read_manifest(tmp_path / "student.ckpt")["extra"]["run"]
    assert (run_cfg["loss"]["alpha"], run_cfg["loss"]["beta"]) == (1.0, 1.0)
    assert run_cfg["lambda_schedule"] == {"kind": "constant", "value": 0.0}


def test_heads_flag(spiral_teacher, tmp_path):
    _, cfg, ckpt = spiral_teacher
    assert run("distill", "--config", cfg, "--teacher", ckpt, "--heads", "5", "--out", tmp_path) == 0
    log = read_jsonl(tmp_path / "distill_log.jsonl")
    assert log[0]["teachers_per_head"] == [4] * 5
    assert log[0]["lambda"] == 9.0


def test_task_mismatch(spiral_teacher, tmp_path):
    _, _, ckpt = spiral_teacher
    cfg = write(tmp_path, task="regression", epochs=200)
    assert run("distill", "--config", cfg, "--teacher", ckpt, "--out", tmp_path) == 2


def test_ablation(spiral_teacher, tmp_path):
    d, _, ckpt = spiral_teacher
    cfg = write(tmp_path, task="classification", epochs=1, grid_resolution=3)
    assert run("ablate", "--config", cfg, "--teacher", ckpt, "--out", tmp_path / "a") == 0
    summary = json.loads((tmp_path / "a" / "ablation.json").read_text())
    grid = [c for c in summary if c["cell"].startswith("beta")]
    sweep = [c for c in summary if c["cell"].startswith("heads")]
    assert len(grid) == 4 and len(sweep) == 3
    off = [c for c in grid if c["cell"].endswith("off")]
    assert all(c["lambda_schedule"]["value"] == 0.0 for c in off)
    params = [c["metrics"]["param_count"] for c in sweep]
    assert params == sorted(params, reverse=True) and len(set(params)) == 3
    for c in summary:
        assert (tmp_path / "a" / c["cell"] / "metrics.json").exists()


def test_empty_sweep(tmp_path):
    cfg = write(tmp_path, task="classification", ablation={"betas": [], "lambda_on": [], "heads": []})
    assert run("ablate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert not (tmp_path / "a" / "ablation.json").exists()


def test_dump_dataset(tmp_path):
    cfg = write(tmp_path, task="regression")
    assert run("dump-dataset", "--config", cfg, "--out", tmp_path) == 0
    lines = (tmp_path / "dataset.csv").read_text().splitlines()
    assert lines[0] == "x1,target,split" and len(lines) == 301


def test_exit_codes(tmp_path, capsys):
    assert run("train-teacher", "--config", tmp_path / "missing.json") == 2
    assert run("train-teacher", "--config", write(tmp_path, task="classification", bogus=1)) == 2
    cfg = write(tmp_path, task="classification", epochs=1)
    assert run("evaluate", "--config", cfg, "--model", tmp_path / "none.ckpt", "--out", tmp_path) == 4
    err = capsys.readouterr().err
    assert "missing.json" in err and "bogus" in err and "none.ckpt" in err


@pytest.mark.filterwarnings("ignore:overflow")
def test_numeric_failure(tmp_path):
    cfg = write(tmp_path, task="regression", epochs=3, n_members=1, lr=1e6, clip_norm=1e12,
                lambda_schedule={"kind": "constant", "value": 0.0})
    assert run("train-teacher", "--config", cfg, "--out", tmp_path) == 3
