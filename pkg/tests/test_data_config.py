import numpy as np
import pytest

from mambahash.config import load_config
from mambahash.data import DatasetSpec, ImageRecord, load_dataset, make_synthetic, read_image
from mambahash.errors import ConfigError, DataError


def test_synthetic_dataset_layout(tmp_path):
    ds = make_synthetic(tmp_path, n_classes=3, train_per_class=2, query_per_class=1, database_per_class=2)
    assert len(ds.split("train")) == 6 and len(ds.split("query")) == 3 and len(ds.split("database")) == 6
    back = load_dataset(tmp_path)
    assert back.records == ds.records
    images, labels = back.load("query")
    assert images.shape == (3, 32, 32, 3) and images.dtype == np.uint8
    assert labels == [frozenset([0]), frozenset([1]), frozenset([2])]


def test_synthetic_dataset_is_seeded(tmp_path):
    a = make_synthetic(tmp_path / "a", train_per_class=2, seed=5).load("train")[0]
    b = make_synthetic(tmp_path / "b", train_per_class=2, seed=5).load("train")[0]
    c = make_synthetic(tmp_path / "c", train_per_class=2, seed=6).load("train")[0]
    assert a.tobytes() == b.tobytes() != c.tobytes()


def test_dataset_errors(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    with pytest.raises(DataError):
        DatasetSpec(tmp_path, [ImageRecord("a", "x", "train", frozenset([0])),
                               ImageRecord("a", "y", "query", frozenset([0]))])
    with pytest.raises(DataError):
        DatasetSpec(tmp_path, [ImageRecord("a", "x", "train", frozenset())])
    (tmp_path / "odd.rgb").write_bytes(b"\0" * 10)
    with pytest.raises(DataError):
        read_image(tmp_path / "odd.rgb")


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[model]\nhash_bits = 48\nratio_mu = 1/16\n[train]\nepochs = 7\n[loss]\neta = 0.1\n")
    model, train = load_config(cfg, preset="tiny", train__epochs=3, train__seed=None)
    assert model.hash_bits == 48 and model.ciam_kernel == 5 and model.eta == 0.1
    assert model.ratio_mu == 0.0625 and model.dims == [8, 16, 24, 32]
    assert train.epochs == 3 and train.learning_rate == 1e-4


def test_config_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[model]\nwidth = 3\n")
    with pytest.raises(ConfigError):
        load_config(cfg)
    cfg.write_text("[optim]\nlr = 1\n")
    with pytest.raises(ConfigError):
        load_config(cfg)
    cfg.write_text("[train]\nepochs = many\n")
    with pytest.raises(ConfigError):
        load_config(cfg)
    with pytest.raises(ConfigError):
        load_config(preset="huge")
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.cfg")


def test_full_preset_defaults():
    model, train = load_config(preset="full")
    assert model.dims == [64, 128, 348, 512] and model.depths == [3, 4, 16, 3]
    assert train.learning_rate == 1.5e-5 and train.weight_decay == 1e-7 and train.batch_size == 32
