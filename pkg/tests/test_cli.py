import csv
import hashlib
import json
import os
import subprocess
import sys

import pytest

from roler_lab.cli import main

TINY = """
[run]
method = {method}
seed = {seed}

[dataset]
seed = 5
n_users = 16
n_items = 12
n_clusters = 2
n_categories = 3
log_density = 0.7

[world_model]
oracle_sigma = 0.5

[shaping]
k = 3

[a2c]
epochs = 3
trajectories_per_epoch = 8
batch_size = 4

[eval]
episodes = 4
final_episodes = 10

[ablate]
methods = baseline_worldmodel roler
seeds = 0 1

[bound]
seed = 2
n_instances = 6
"""


def write_cfg(tmp_path, name="cfg.ini", method="roler", seed=0, text=None):
    p = tmp_path / name
    p.write_text(text if text is not None else TINY.format(method=method, seed=seed))
    return p


def read_csv(path):
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_generate_writes_four_files_and_manifest(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    names = sorted(p.name for p in (tmp_path / "d").iterdir())
    assert names == ["categories.csv", "features.txt", "gt.txt", "log.csv", "manifest.json"]
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["seed"] == 5
    for entry in manifest["files"].values():
        assert digest(tmp_path / "d" / entry["path"]) == entry["sha256"]


def test_generate_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    for d in ("a", "b"):
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name


def test_generate_seed_override(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["generate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["generate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed-override", "6"])
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 6
    assert (tmp_path / "a" / "gt.txt").read_bytes() != (tmp_path / "b" / "gt.txt").read_bytes()


def test_missing_field_exit_2_names_field(tmp_path, capsys):
    text = TINY.format(method="roler", seed=0).replace("[dataset]\nseed = 5\n", "[dataset]\n")
    cfg = write_cfg(tmp_path, text=text)
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2
    assert "dataset.seed" in capsys.readouterr().err


def test_missing_config_file_exit_4(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == 4


def test_bad_parallel_exit_2(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--parallel", "0"]) == 2


def test_run_outputs_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, seed=3)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d), "--episodes"]) == 0
    for name in ("trace.csv", "report.csv", "episodes.csv", "policy.npz", "world_model.npz", "config.ini"):
        assert (tmp_path / "a" / name).exists(), name
    for name in ("trace.csv", "report.csv", "episodes.csv"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name), name
    header = (tmp_path / "a" / "trace.csv").read_text().splitlines()[0]
    assert header.startswith("# config_hash=") and "seed=3" in header
    rows = read_csv(tmp_path / "a" / "trace.csv")
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2]
    report = read_csv(tmp_path / "a" / "report.csv")
    assert [r["kind"] for r in report] == ["final_epoch", "across_epochs"]


def test_run_two_seeds_distinct_same_schema(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "s0")])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "s1"), "--seed-override", "1"])
    a, b = (read_csv(tmp_path / s / "trace.csv") for s in ("s0", "s1"))
    assert list(a[0].keys()) == list(b[0].keys())
    assert len(a) == len(b)
    assert a != b


def test_run_written_config_reproduces(tmp_path):
    cfg = write_cfg(tmp_path, seed=2)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(tmp_path / "a" / "config.ini"), "--out", str(tmp_path / "b")])
    assert digest(tmp_path / "a" / "trace.csv") == digest(tmp_path / "b" / "trace.csv")


def test_run_divergence_exit_3(tmp_path, capsys):
    text = TINY.format(method="gt_oracle", seed=0).replace("n_categories = 3", "n_categories = 3\nreward_range = 0 100000")
    cfg = write_cfg(tmp_path, text=text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "diverged" in err and "critic_loss" in err


def test_run_bad_data_file_exit_4(tmp_path, capsys):
    gen = write_cfg(tmp_path)
    main(["generate", "--config", str(gen), "--out", str(tmp_path / "d")])
    (tmp_path / "d" / "gt.txt").write_text("0.1 0.2\nnot numbers\n")
    text = f"""
[run]
method = baseline_worldmodel
seed = 0
[dataset]
kind = files
gt_path = {tmp_path / 'd' / 'gt.txt'}
log_path = {tmp_path / 'd' / 'log.csv'}
categories_path = {tmp_path / 'd' / 'categories.csv'}
file_n_users = 16
file_n_items = 12
"""
    cfg = write_cfg(tmp_path, "files.ini", text=text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4
    assert "gt.txt" in capsys.readouterr().err


def test_run_from_generated_files_matches_synthetic(tmp_path):
    gen = write_cfg(tmp_path, method="baseline_worldmodel")
    main(["generate", "--config", str(gen), "--out", str(tmp_path / "d")])
    d = tmp_path / "d"
    files_cfg = TINY.format(method="baseline_worldmodel", seed=0).replace(
        "[dataset]\nseed = 5\n",
        f"[dataset]\nkind = files\ngt_path = {d / 'gt.txt'}\nlog_path = {d / 'log.csv'}\n"
        f"categories_path = {d / 'categories.csv'}\nfeatures_path = {d / 'features.txt'}\n"
        "file_n_users = 16\nfile_n_items = 12\n")
    cfg = write_cfg(tmp_path, "files.ini", text=files_cfg)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "f")]) == 0
    assert main(["run", "--config", str(gen), "--out", str(tmp_path / "s")]) == 0
    a, b = (read_csv(tmp_path / x / "trace.csv") for x in ("f", "s"))
    assert a == b


def test_ablate_cardinality_and_summary(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "ablate.csv")
    assert len(rows) == 4
    assert {"method", "variant", "k", "seed", "R_tra", "R_each", "length", "MCD"} <= set(rows[0])
    summary = read_csv(tmp_path / "o" / "ablate_summary.csv")
    assert len(summary) == 2
    # independent aggregation straight from the long CSV
    for s in summary:
        vals = [float(r["R_tra"]) for r in rows if r["method"] == s["method"] and r["status"] == "ok"]
        assert float(s["R_tra_mean"]) == pytest.approx(sum(vals) / len(vals), rel=1e-12)
        mean = sum(vals) / len(vals)
        std = (sum((v - mean) ** 2 for v in vals) / len(vals)) ** 0.5
        assert float(s["R_tra_std"]) == pytest.approx(std, rel=1e-9, abs=1e-12)


def test_ablate_parallel_matches_serial(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "s")])
    main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "p"), "--parallel", "2"])
    assert digest(tmp_path / "s" / "ablate.csv") == digest(tmp_path / "p" / "ablate.csv")


def test_verify_bound(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["verify-bound", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "bound.csv")
    assert len(rows) == 6
    assert "instances" in capsys.readouterr().out
    main(["verify-bound", "--config", str(cfg), "--out", str(tmp_path / "p"), "--parallel", "2"])
    assert digest(tmp_path / "o" / "bound.csv") == digest(tmp_path / "p" / "bound.csv")


def _cli(args, env_level):
    env = dict(os.environ)
    env.pop("ROLER_LAB_LOG", None)
    if env_level is not None:
        env["ROLER_LAB_LOG"] = env_level
    return subprocess.run([sys.executable, "-m", "roler_lab.cli", *args], capture_output=True, text=True, env=env,
                          check=False)


def test_log_env_controls_verbosity(tmp_path):
    cfg = write_cfg(tmp_path)
    args = ["run", "--config", str(cfg), "--out", str(tmp_path / "o")]
    quiet = _cli(args, None)
    loud = _cli(args, "info")
    assert quiet.returncode == loud.returncode == 0
    assert "INFO" not in quiet.stderr
    assert "INFO roler_lab" in loud.stderr


def test_log_env_bad_level_warns(tmp_path):
    cfg = write_cfg(tmp_path)
    res = _cli(["verify-bound", "--config", str(cfg), "--out", str(tmp_path / "o")], "chatty")
    assert res.returncode == 0
    assert "not a log level" in res.stderr
