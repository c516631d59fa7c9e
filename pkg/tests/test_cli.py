import subprocess
import sys

import numpy as np
import pytest

from mambahash.checkpoint import load_checkpoint
from mambahash.cli import run_command
from mambahash.config import load_config
from mambahash.data import load_dataset, to_float
from mambahash.network import MambaHash
from mambahash.retrieval import binarize_pack, mean_average_precision, read_codes, write_codes
from mambahash.trainer import train


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run_command(["synth-data", "--out", str(root / "data"), "--train-per-class", "4",
                        "--query-per-class", "2", "--db-per-class", "4"]) == 0
    cfg = root / "run.cfg"
    cfg.write_text("[model]\nstem_channels = 8\n[train]\nbatch_size = 4\n")
    return root, cfg


def test_eval_hand_codes_prints_map(tmp_path, capsys):
    write_codes(tmp_path / "q.mbhc", binarize_pack(np.ones((1, 4)), [0]))
    write_codes(tmp_path / "d.mbhc",
                binarize_pack(np.array([[1, 1, 1, 1], [1, 1, 1, -1], [1, 1, -1, -1.0]]), [0, 1, 0]))
    assert run_command(["eval", "--query", str(tmp_path / "q.mbhc"), "--db", str(tmp_path / "d.mbhc"),
                        "--topk", "0", "--precision-k", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "map=0.833333"
    assert out[1] == "precision@2=0.500000"


def test_query_listing(tmp_path, capsys):
    write_codes(tmp_path / "q.mbhc", binarize_pack(np.ones((1, 4)), [0]))
    write_codes(tmp_path / "d.mbhc", binarize_pack(np.array([[1, 1, -1, -1], [1, 1, 1, 1], [1, 1, 1, -1.0]])))
    assert run_command(["query", "--query", str(tmp_path / "q.mbhc"), "--db", str(tmp_path / "d.mbhc"),
                        "--topk", "2"]) == 0
    assert capsys.readouterr().out.splitlines() == ["1\t1\t0", "2\t2\t1"]


def test_missing_checkpoint_exit_one(tmp_path, capsys):
    code = run_command(["encode", "--ckpt", str(tmp_path / "missing.bin"), "--data", str(tmp_path),
                        "--out", str(tmp_path / "x.mbhc")])
    err = capsys.readouterr().err
    assert code == 1
    assert "missing.bin" in err and len(err.strip().splitlines()) == 1


def test_usage_errors_exit_two():
    assert run_command(["frobnicate"]) == 2
    assert run_command(["eval", "--bogus"]) == 2


def test_corrupt_code_file_exit_one(tmp_path, capsys):
    (tmp_path / "bad.mbhc").write_bytes(b"NOPE" + b"\0" * 20)
    assert run_command(["index-check", str(tmp_path / "bad.mbhc")]) == 1
    assert "magic" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mambahash.cli", "selfcheck"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert all(line.startswith("PASS") for line in proc.stdout.splitlines())


def test_train_encode_eval_matches_library(workspace, tmp_path, capsys):
    root, cfg = workspace
    data = root / "data"
    ckpt = tmp_path / "m.mbhh"
    assert run_command(["train", "--config", str(cfg), "--data", str(data), "--bits", "16", "--epochs", "2",
                        "--seed", "1", "--deterministic", "--quiet", "--out", str(ckpt)]) == 0
    manifest = (tmp_path / "m.mbhh.manifest").read_text().splitlines()
    keys = {line.split("=", 1)[0] for line in manifest}
    assert {"command", "seed", "duration_s", "epoch.0.loss", "epoch.1.loss", "train_map"} <= keys
    for split in ("query", "database"):
        assert run_command(["encode", "--ckpt", str(ckpt), "--data", str(data), "--split", split,
                            "--out", str(tmp_path / f"{split}.mbhc")]) == 0
    assert run_command(["index-check", str(tmp_path / "query.mbhc")]) == 0
    capsys.readouterr()
    assert run_command(["eval", "--query", str(tmp_path / "query.mbhc"),
                        "--db", str(tmp_path / "database.mbhc")]) == 0
    cli_map = capsys.readouterr().out.strip()

    # same pipeline through the library
    model_cfg, train_cfg = load_config(cfg, train__epochs=2, train__seed=1, model__hash_bits=16)
    ds = load_dataset(data)
    images, labels = ds.load("train")
    model = MambaHash(model_cfg, seed=1)
    train(model, images, labels, train_cfg)
    stored = load_checkpoint(ckpt)
    for (n, a), (_, b) in zip(model.named_parameters(), stored.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes(), n
    codes = {}
    for split in ("query", "database"):
        imgs, labs = ds.load(split)
        codes[split] = binarize_pack(model.encode(to_float(imgs)), labs)
        assert read_codes(tmp_path / f"{split}.mbhc") == codes[split]
    assert cli_map == f"map={mean_average_precision(codes['query'], codes['database']):.6f}"
