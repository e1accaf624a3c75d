"""CLI tests: exit codes, file outputs, manifests, and reproducibility."""

import json
from pathlib import Path

import pytest

from hga.cli import run


def read_json(path):
    return json.loads(Path(path).read_text())


def synth_args(out, seed=3, n_docs=8, extra=()):
    return ["synth", "--seed", str(seed), "--n-docs", str(n_docs), "--out", str(out),
            "--nodes-per-doc", "4,6", "--tokens-per-node", "1,3", *extra]


def train_args(data, out, extra=()):
    return ["train", "--data", str(data), "--dev", str(data), "--out", str(out),
            "--max-steps", "4", "--eval-every", "2", "--max-seq-len", "24", "--seed", "1", *extra]


def dir_bytes(path):
    # the manifest embeds the --out path from argv, so it is excluded from
    # cross-directory byte comparisons
    return {p.name: p.read_bytes() for p in sorted(Path(path).iterdir())
            if p.is_file() and p.name != "manifest.json"}


def test_unknown_flag_gives_usage_exit(capsys):
    assert run(["synth", "--bogus", "1"]) == 2
    capsys.readouterr()


def test_missing_subcommand_gives_usage_exit(capsys):
    assert run([]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert run(["train", "--help"]) == 0
    capsys.readouterr()


def test_runtime_error_exit_one(tmp_path, capsys):
    code = run(["eval", "--checkpoint", str(tmp_path / "missing"), "--data", str(tmp_path)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_synth_writes_docs_and_manifest(tmp_path, capsys):
    out = tmp_path / "data"
    assert run(synth_args(out)) == 0
    files = sorted(out.glob("*.json"))
    assert len(files) == 9  # 8 docs + manifest
    manifest = read_json(out / "manifest.json")
    assert manifest["command"] == "synth" and manifest["seed"] == 3
    capsys.readouterr()


def test_synth_identical_runs_identical_files(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(synth_args(a)) == 0
    assert run(synth_args(b)) == 0
    assert dir_bytes(a) == dir_bytes(b)
    capsys.readouterr()


def test_synth_split_layout(tmp_path, capsys):
    out = tmp_path / "split"
    assert run(synth_args(out, extra=("--n-test", "3"))) == 0
    assert len(list((out / "train").glob("*.json"))) == 8
    assert len(list((out / "test").glob("*.json"))) == 3
    capsys.readouterr()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    assert run(synth_args(data, n_docs=10)) == 0
    run_dir = root / "run1"
    assert run(train_args(data, run_dir)) == 0
    return root, data, run_dir


def test_train_outputs(workspace, capsys):
    _, _, run_dir = workspace
    for name in ("history.csv", "vocab.tsv", "best.ckpt", "last.ckpt", "report.json", "manifest.json"):
        assert (run_dir / name).exists(), name
    history = (run_dir / "history.csv").read_text().splitlines()
    assert history[0] == "step,split,metric,value"
    assert any(",dev,f1," in line for line in history[1:])
    report = read_json(run_dir / "report.json")
    assert {"precision", "recall", "f1"} <= set(report)
    capsys.readouterr()


def test_eval_checkpoint_without_extension(workspace, tmp_path, capsys):
    _, data, run_dir = workspace
    out = tmp_path / "evalout"
    assert run(["eval", "--checkpoint", str(run_dir / "best"), "--data", str(data),
                "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "f1=" in printed
    report = read_json(out / "report.json")
    assert 0.0 <= report["f1"] <= 1.0
    assert (out / "manifest.json").exists()


def test_predict_writes_entities(workspace, tmp_path, capsys):
    _, data, run_dir = workspace
    out = tmp_path / "pred"
    assert run(["predict", "--checkpoint", str(run_dir / "best.ckpt"), "--data", str(data),
                "--out", str(out)]) == 0
    preds = read_json(out / "predictions.json")
    assert len(preds) == 10
    for ents in preds.values():
        for e in ents:
            assert {"type", "start", "end", "text"} <= set(e)
    capsys.readouterr()


def test_train_rerun_byte_identical(workspace, tmp_path, capsys):
    _, data, first_run = workspace
    second = tmp_path / "run2"
    assert run(train_args(data, second)) == 0
    a, b = dir_bytes(first_run), dir_bytes(second)
    assert a["history.csv"] == b["history.csv"]
    assert a["vocab.tsv"] == b["vocab.tsv"]
    assert a["best.ckpt"] == b["best.ckpt"]
    capsys.readouterr()


def test_train_position_mode_multi_arm(workspace, tmp_path, capsys):
    _, data, _ = workspace
    out = tmp_path / "arms"
    assert run(train_args(data, out, extra=("--position-mode", "none,token,span"))) == 0
    for mode in ("none", "token", "span"):
        assert (out / f"history_{mode}.csv").exists()
        assert (out / f"best_{mode}.ckpt").exists()
    table = (out / "positions.tsv").read_text().splitlines()
    assert table[0] == "position_mode\tf1" and len(table) == 4
    capsys.readouterr()


def test_config_file_with_flag_overrides(workspace, tmp_path, capsys):
    _, data, _ = workspace
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"max_steps": 2, "eval_every": 2, "max_seq_len": 24,
                                    "hidden_size": 16, "encoder_layers": 1, "attn_heads": 2,
                                    "head_hidden": 8, "seed": 9}))
    out = tmp_path / "cfgrun"
    assert run(["train", "--config", str(cfg_path), "--data", str(data), "--dev", str(data),
                "--out", str(out), "--head", "linear"]) == 0
    manifest = read_json(out / "manifest.json")
    assert manifest["config"]["head_kind"] == "linear"
    assert manifest["config"]["max_steps"] == 2
    assert manifest["config"]["seed"] == 9
    capsys.readouterr()


def test_gradcheck_small_exit_codes(capsys):
    assert run(["gradcheck", "--L", "6", "--D", "2", "--H", "8", "--d", "4"]) == 0
    out = capsys.readouterr().out
    assert "max rel err" in out
    # an impossible tolerance flips the exit code
    assert run(["gradcheck", "--L", "6", "--D", "2", "--H", "8", "--d", "4", "--tol", "0"]) == 1
    capsys.readouterr()


def test_sweep_b_and_compare_heads_tables(workspace, tmp_path, capsys):
    _, data, _ = workspace
    sweep_out = tmp_path / "sweep"
    assert run(["sweep-b", "--data", str(data), "--dev", str(data), "--out", str(sweep_out),
                "--values", "0.0,0.4", "--max-steps", "2", "--eval-every", "2",
                "--max-seq-len", "24", "--seed", "1"]) == 0
    table = (sweep_out / "sweep_b.tsv").read_text().splitlines()
    assert table[0] == "b\tf1" and len(table) == 3

    cmp_out = tmp_path / "cmp"
    assert run(["compare-heads", "--data", str(data), "--dev", str(data), "--out", str(cmp_out),
                "--max-steps", "2", "--eval-every", "2", "--max-seq-len", "24", "--seed", "1"]) == 0
    table = (cmp_out / "compare_heads.tsv").read_text().splitlines()
    assert table[0] == "head\tprecision\trecall\tf1"
    assert [line.split("\t")[0] for line in table[1:]] == ["hga", "linear", "mlp"]
    capsys.readouterr()
