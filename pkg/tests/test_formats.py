import struct

import numpy as np
import pytest

from graspfusion import formats
from graspfusion.data import DataConfig, generate_dataset
from graspfusion.formats import FormatError
from graspfusion.fusion import BackboneConfig, FusionConfig, FusionModel
from graspfusion.gan import GanTrainConfig, generate_paired_toy, init_gan, translate
from graspfusion.training import TrainConfig, evaluate, predict_proba, quantize_float32

BB = BackboneConfig(stages=((4, 3, 2),), d=8)
TINY = FusionConfig(d=8, n_heads=2, n_layers=1, visual_backbone=BB, tactile_backbone=BB)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(DataConfig(), 12, seed=0)


def test_dataset_round_trip(tmp_path, dataset):
    path = tmp_path / "d.vtg"
    formats.write_dataset(path, dataset)
    back = formats.read_dataset(path)
    np.testing.assert_array_equal(back.visual, dataset.visual)
    np.testing.assert_array_equal(back.tactile, dataset.tactile)
    np.testing.assert_array_equal(back.label, dataset.label)
    np.testing.assert_array_equal(back.force, dataset.force.astype(np.float32))


def test_dataset_layout_is_little_endian(tmp_path, dataset):
    path = tmp_path / "d.vtg"
    formats.write_dataset(path, dataset)
    raw = path.read_bytes()
    assert raw[:4] == b"VTG1"
    version, count, ndim = struct.unpack("<III", raw[4:16])
    assert (version, count, ndim) == (1, 12, 3)
    header = 16 + 4 * 3 + 4 + 4 * 3
    record = 4 * (3 * 24 * 24) * 2 + 4 + 1
    assert len(raw) == header + 12 * record
    first = np.frombuffer(raw[header:header + 4 * 3 * 24 * 24], dtype="<f4")
    np.testing.assert_array_equal(first, dataset.visual[0].ravel())
    assert raw[header + record - 1] == dataset.label[0]


def test_identical_inputs_give_identical_bytes(tmp_path):
    a, b = tmp_path / "a.vtg", tmp_path / "b.vtg"
    formats.write_dataset(a, generate_dataset(DataConfig(), 8, seed=4))
    formats.write_dataset(b, generate_dataset(DataConfig(), 8, seed=4))
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("reader", [formats.read_dataset, formats.read_pairs, formats.read_checkpoint])
def test_bad_magic_is_rejected(tmp_path, reader):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\0" * 32)
    with pytest.raises(FormatError, match="bad file format"):
        reader(path)


def test_truncated_dataset_is_rejected(tmp_path, dataset):
    path = tmp_path / "d.vtg"
    formats.write_dataset(path, dataset)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError, match="truncated"):
        formats.read_dataset(path)


def test_wrong_version_is_rejected(tmp_path, dataset):
    path = tmp_path / "d.vtg"
    formats.write_dataset(path, dataset)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        formats.read_dataset(path)


def test_pairs_round_trip(tmp_path):
    pairs = generate_paired_toy(5, seed=1, size=16)
    path = tmp_path / "p.vtp"
    formats.write_pairs(path, pairs)
    assert path.read_bytes()[:4] == b"VTP1"
    back = formats.read_pairs(path)
    np.testing.assert_array_equal(back.real, pairs.real)
    np.testing.assert_array_equal(back.sim, pairs.sim)


def test_checkpoint_round_trip_reproduces_predictions(tmp_path, dataset):
    model = FusionModel.create(TINY, seed=3)
    quantize_float32(model)
    cfg = TrainConfig(resize=26, crop=24)
    path = tmp_path / "m.xmf"
    formats.save_model(path, model, cfg)
    loaded, loaded_cfg = formats.load_model(path)
    assert loaded.config == model.config
    assert loaded_cfg == cfg
    np.testing.assert_array_equal(predict_proba(loaded, dataset, cfg), predict_proba(model, dataset, cfg))
    assert evaluate(loaded, dataset, cfg) == evaluate(model, dataset, cfg)


def test_checkpoint_header_carries_model_dimensions(tmp_path):
    path = tmp_path / "m.xmf"
    formats.save_model(path, FusionModel.create(TINY, seed=0))
    config, params = formats.read_checkpoint(path)
    assert (config["d"], config["n_layers"], config["n_heads"]) == (8, 1, 2)
    assert all(v.dtype == np.float64 for v in params.values())


def test_checkpoint_kind_is_checked(tmp_path):
    G, D = init_gan(GanTrainConfig(width=4))
    path = tmp_path / "g.xmf"
    formats.save_gan(path, G, D, width=4)
    with pytest.raises(FormatError, match="not a fusion"):
        formats.load_model(path)


def test_gan_checkpoint_round_trip(tmp_path):
    G, D = init_gan(GanTrainConfig(width=4, seed=2))
    path = tmp_path / "g.xmf"
    formats.save_gan(path, G, D, width=4)
    G2, _ = formats.load_gan(path)
    x = generate_paired_toy(2, seed=0, size=16).real
    np.testing.assert_allclose(translate(G2, x), translate(G, x), atol=1e-6)
