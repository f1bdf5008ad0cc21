"""Command-line interface: exit codes, config handling, output formats,
and byte-level reproducibility against golden files."""

import json
import os
import subprocess
import sys

import pytest

from magsim.cli import main
from magsim.graph import load

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")

TINY_CONFIG = {
    "synthetic": {
        "num_nodes": 120,
        "num_classes": 3,
        "modalities": [
            {"name": "text", "dim": 6, "signal_norm": 1.0, "noise_var": 0.2},
            {"name": "visual", "dim": 6, "signal_norm": 1.0, "noise_var": 0.6},
        ],
        "homophily": 0.7,
        "mean_degree": 5,
        "seed": 42,
    },
    "train": {"kind": "ef-mlp", "hidden": 8, "max_epochs": 5, "patience": 5,
              "dropout": 0.0, "seed": 42},
}


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


@pytest.fixture()
def dataset_dir(tmp_path, config_path):
    out = str(tmp_path / "data")
    assert main(["gen", "--config", config_path, "--out", out]) == 0
    return out


def supra_config(tmp_path, **train_overrides):
    doc = json.loads(json.dumps(TINY_CONFIG))
    doc["train"].update({"kind": "supra", "hidden": 8, "num_layers": 1,
                         **train_overrides})
    path = tmp_path / "supra_config.json"
    path.write_text(json.dumps(doc))
    return str(path)


# ---------------------------------------------------------------------------
# help and argument plumbing
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("cmd", ["gen", "train", "sweep-noise", "track-grads",
                                 "corrupt", "theory"])
def test_help_exits_zero(cmd):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0


def test_installed_entry_point():
    out = subprocess.run(["magsim", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "gen" in out.stdout and "theory" in out.stdout


# ---------------------------------------------------------------------------
# config errors
# ---------------------------------------------------------------------------

def test_unknown_config_key_names_it(tmp_path, capsys):
    doc = json.loads(json.dumps(TINY_CONFIG))
    doc["synthetic"]["homophilly"] = 0.7
    del doc["synthetic"]["homophily"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code = main(["gen", "--config", str(path), "--out", str(tmp_path / "d")])
    assert code == 2
    assert "homophilly" in capsys.readouterr().err


def test_malformed_json_is_config_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["gen", "--config", str(path), "--out", str(tmp_path / "d")]) == 2


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["gen", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "d")]) == 3


def test_missing_data_dir_is_io_error(tmp_path, config_path):
    assert main(["train", "--config", config_path,
                 "--data", str(tmp_path / "nowhere")]) == 3


def test_bad_train_key_rejected(tmp_path, dataset_dir):
    doc = json.loads(json.dumps(TINY_CONFIG))
    doc["train"]["learning_rate"] = 0.01
    path = tmp_path / "bad_train.json"
    path.write_text(json.dumps(doc))
    assert main(["train", "--config", str(path), "--data", dataset_dir]) == 2


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def test_gen_writes_loadable_dataset(dataset_dir, capsys):
    mag = load(dataset_dir)
    assert mag.num_nodes == 120
    assert [n for n, _ in mag.modalities] == ["text", "visual"]
    for fname in ("meta.json", "edges.csv", "feat_text.f32", "feat_visual.f32"):
        assert os.path.exists(os.path.join(dataset_dir, fname))


def test_gen_stdout_reports_calibration(tmp_path, config_path, capsys):
    main(["gen", "--config", config_path, "--out", str(tmp_path / "d2")])
    out = capsys.readouterr().out
    assert "beta_hat=" in out and "tau=" in out and "snr_int=" in out


def test_gen_byte_reproducible(tmp_path, config_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["gen", "--config", config_path, "--out", a]) == 0
    assert main(["gen", "--config", config_path, "--out", b]) == 0
    for fname in sorted(os.listdir(a)):
        fa = open(os.path.join(a, fname), "rb").read()
        fb = open(os.path.join(b, fname), "rb").read()
        assert fa == fb, fname


def test_gen_seed_override_changes_data(tmp_path, config_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    main(["gen", "--config", config_path, "--out", a])
    main(["gen", "--config", config_path, "--out", b, "--seed", "99"])
    fa = open(os.path.join(a, "feat_text.f32"), "rb").read()
    fb = open(os.path.join(b, "feat_text.f32"), "rb").read()
    assert fa != fb
    assert json.load(open(os.path.join(b, "meta.json")))  # still valid


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_stdout_and_report(tmp_path, config_path, dataset_dir, capsys):
    report_path = str(tmp_path / "report.json")
    code = main(["train", "--config", config_path, "--data", dataset_dir,
                 "--out", report_path])
    assert code == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    parts = line.split()
    assert parts[0] == "ef-mlp"
    assert 0.0 <= float(parts[1]) <= 1.0
    doc = json.loads(open(report_path).read())
    assert doc["config"]["kind"] == "ef-mlp"
    assert len(doc["epochs"]) >= 1
    assert "wall_clock_seconds" in doc


# ---------------------------------------------------------------------------
# sweep / grads / corrupt outputs
# ---------------------------------------------------------------------------

def run_sweep(tmp_path, config_path, dataset_dir, name="sweep.csv"):
    out = str(tmp_path / name)
    doc = json.loads(json.dumps(TINY_CONFIG))
    doc["sweep"] = {"kinds": ["ef-mlp"], "seeds": [0]}
    path = tmp_path / f"cfg_{name}.json"
    path.write_text(json.dumps(doc))
    code = main(["sweep-noise", "--config", str(path), "--data", dataset_dir,
                 "--out", out, "--scales", "0"])
    return code, out


def test_sweep_single_scale(tmp_path, config_path, dataset_dir, capsys):
    code, out = run_sweep(tmp_path, config_path, dataset_dir)
    assert code == 0
    lines = open(out).read().splitlines()
    assert lines[0] == "scale,kind,seed,acc,f1"
    assert len(lines) == 2
    assert lines[1].startswith("0.0,ef-mlp,0,")
    manifest = json.loads(open(out + ".manifest.json").read())
    assert manifest["scales"] == [0.0]
    assert "tau" in manifest["annotation"]["modalities"]["text"]


def test_sweep_csv_reproducible(tmp_path, config_path, dataset_dir):
    _, a = run_sweep(tmp_path, config_path, dataset_dir, "a.csv")
    _, b = run_sweep(tmp_path, config_path, dataset_dir, "b.csv")
    assert open(a, "rb").read() == open(b, "rb").read()


def test_track_grads_csv(tmp_path, dataset_dir):
    cfg = supra_config(tmp_path)
    out = str(tmp_path / "grads.csv")
    doc = json.loads(open(cfg).read())
    doc["grads"] = {"epochs": 3,
                    "variants": [["supra-base", {"kind": "supra",
                                                 "supra_variant": "base"}]]}
    path = tmp_path / "grads_cfg.json"
    path.write_text(json.dumps(doc))
    assert main(["track-grads", "--config", str(path), "--data", dataset_dir,
                 "--out", out]) == 0
    lines = open(out).read().splitlines()
    assert lines[0] == "epoch,variant,branch,grad_l2"
    assert len(lines) == 1 + 3 * 3   # 3 epochs x (2 projectors + synergy)


def test_corrupt_csv_and_harmonic_column(tmp_path, dataset_dir, capsys):
    cfg = supra_config(tmp_path)
    out = str(tmp_path / "probe.csv")
    doc = json.loads(open(cfg).read())
    doc["probe"] = {"dominant": "text", "seeds": [0],
                    "kinds": [["supra-base", {"kind": "supra",
                                              "supra_variant": "base"}]]}
    path = tmp_path / "probe_cfg.json"
    path.write_text(json.dumps(doc))
    assert main(["corrupt", "--config", str(path), "--data", dataset_dir,
                 "--out", out]) == 0
    lines = open(out).read().splitlines()
    assert lines[0] == "kind,seed,F,D,H"
    _, _, f, d, h = lines[1].split(",")
    f, d, h = float(f), float(d), float(h)
    expected = 0.0 if f + d == 0 else 2 * f * d / (f + d)
    assert abs(h - expected) < 1e-12
    assert "F=" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# theory
# ---------------------------------------------------------------------------

def test_theory_command_all_pass(capsys):
    assert main(["theory"]) == 0
    out = capsys.readouterr().out
    assert "4/4 properties PASS" in out
    assert out.count("PASS") >= 5


# ---------------------------------------------------------------------------
# golden files
# ---------------------------------------------------------------------------

def test_golden_sweep_csv(tmp_path, config_path, dataset_dir):
    _, out = run_sweep(tmp_path, config_path, dataset_dir)
    assert open(out, "rb").read() == \
        open(os.path.join(GOLDEN, "sweep.csv"), "rb").read()


def test_golden_meta_json(dataset_dir):
    got = open(os.path.join(dataset_dir, "meta.json"), "rb").read()
    want = open(os.path.join(GOLDEN, "meta.json"), "rb").read()
    assert got == want
