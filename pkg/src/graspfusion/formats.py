"""Little-endian binary containers: VTG1 grasp datasets, VTP1 image pairs, XMF1 checkpoints."""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .data import GraspDataset
from .fusion import FusionConfig, FusionModel, init_params
from .gan import DiscriminatorNet, GeneratorNet, PairDataset
from .layers import assign_parameters, named_parameters
from .training import TrainConfig

DATASET_MAGIC = b"VTG1"
PAIRS_MAGIC = b"VTP1"
CHECKPOINT_MAGIC = b"XMF1"
VERSION = 1


class FormatError(ValueError):
    """Raised for bad magic bytes, unsupported versions or truncated files."""


def _u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"file truncated: wanted {n} bytes, got {len(b)}")
    return b


def _read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(f, 4))[0]


def _write_shape(f: BinaryIO, shape: tuple[int, ...]) -> None:
    _u32(f, len(shape))
    for s in shape:
        _u32(f, s)


def _read_shape(f: BinaryIO) -> tuple[int, ...]:
    ndim = _read_u32(f)
    if ndim > 8:
        raise FormatError(f"implausible rank {ndim}")
    return tuple(_read_u32(f) for _ in range(ndim))


def _header(f: BinaryIO, magic: bytes) -> None:
    got = f.read(4)
    if got != magic:
        raise FormatError(f"bad file format: expected magic {magic!r}, found {got!r}")
    version = _read_u32(f)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


def _read_records(f: BinaryIO, dtype: np.dtype, count: int) -> np.ndarray:
    raw = _read_exact(f, dtype.itemsize * count)
    if f.read(1):
        raise FormatError("trailing bytes after the last record")
    return np.frombuffer(raw, dtype=dtype, count=count)


# ---------------------------------------------------------------------------
# datasets


def _dataset_dtype(vshape, tshape) -> np.dtype:
    return np.dtype([("visual", "<f4", vshape), ("tactile", "<f4", tshape), ("force", "<f4"), ("label", "u1")])


def write_dataset(path, ds: GraspDataset) -> None:
    vshape, tshape = ds.visual.shape[1:], ds.tactile.shape[1:]
    rec = np.zeros(len(ds), dtype=_dataset_dtype(vshape, tshape))
    rec["visual"], rec["tactile"] = ds.visual, ds.tactile
    rec["force"], rec["label"] = ds.force, ds.label
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        _u32(f, VERSION)
        _u32(f, len(ds))
        _write_shape(f, vshape)
        _write_shape(f, tshape)
        f.write(rec.tobytes())


def read_dataset(path) -> GraspDataset:
    with open(path, "rb") as f:
        _header(f, DATASET_MAGIC)
        n = _read_u32(f)
        vshape, tshape = _read_shape(f), _read_shape(f)
        rec = _read_records(f, _dataset_dtype(vshape, tshape), n)
    label = rec["label"].copy()
    if (label > 1).any():
        raise FormatError("labels must be 0 or 1")
    return GraspDataset(
        rec["visual"].astype(np.float32), rec["tactile"].astype(np.float32),
        rec["force"].astype(np.float64), label,
    )


# ---------------------------------------------------------------------------
# image pairs


def write_pairs(path, pairs: PairDataset) -> None:
    shape = pairs.real.shape[1:]
    rec = np.zeros(len(pairs), dtype=np.dtype([("real", "<f4", shape), ("sim", "<f4", shape)]))
    rec["real"], rec["sim"] = pairs.real, pairs.sim
    with open(path, "wb") as f:
        f.write(PAIRS_MAGIC)
        _u32(f, VERSION)
        _u32(f, len(pairs))
        _write_shape(f, shape)
        f.write(rec.tobytes())


def read_pairs(path) -> PairDataset:
    with open(path, "rb") as f:
        _header(f, PAIRS_MAGIC)
        n = _read_u32(f)
        shape = _read_shape(f)
        rec = _read_records(f, np.dtype([("real", "<f4", shape), ("sim", "<f4", shape)]), n)
    return PairDataset(rec["real"].astype(np.float32), rec["sim"].astype(np.float32))


# ---------------------------------------------------------------------------
# checkpoints


def write_checkpoint(path, config: dict, params: dict[str, np.ndarray]) -> None:
    """``config`` is stored as JSON; every parameter is stored as float32."""
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        _u32(f, VERSION)
        _u32(f, len(blob))
        f.write(blob)
        _u32(f, len(params))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype="<f4")
            key = name.encode()
            _u32(f, len(key))
            f.write(key)
            _write_shape(f, arr.shape)
            f.write(arr.tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        _header(f, CHECKPOINT_MAGIC)
        try:
            config = json.loads(_read_exact(f, _read_u32(f)).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"unreadable config block: {e}") from None
        params = {}
        for _ in range(_read_u32(f)):
            name = _read_exact(f, _read_u32(f)).decode()
            shape = _read_shape(f)
            n = int(np.prod(shape, dtype=np.int64))
            params[name] = np.frombuffer(_read_exact(f, 4 * n), dtype="<f4").reshape(shape).astype(np.float64)
        if f.read(1):
            raise FormatError("trailing bytes after the last parameter")
    return config, params


def _arrays(obj) -> dict[str, np.ndarray]:
    return {k: t.data for k, t in named_parameters(obj)}


def save_model(path, model: FusionModel, train_cfg: TrainConfig | None = None) -> None:
    cfg = model.config
    config = {"kind": "fusion", "d": cfg.d, "n_layers": cfg.n_layers, "n_heads": cfg.n_heads,
              "model": cfg.to_dict()}
    if train_cfg is not None:
        config["train"] = train_cfg.to_dict()
    write_checkpoint(path, config, _arrays(model.params))


def load_model(path) -> tuple[FusionModel, TrainConfig | None]:
    config, params = read_checkpoint(path)
    if config.get("kind") != "fusion":
        raise FormatError(f"{path}: not a fusion-model checkpoint (kind={config.get('kind')!r})")
    try:
        cfg = FusionConfig.from_dict(config["model"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: bad model config: {e}") from None
    model = FusionModel(cfg, init_params(cfg, 0))
    try:
        assign_parameters(model.params, params)
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: parameters do not match the config: {e}") from None
    train_cfg = TrainConfig.from_dict(config["train"]) if "train" in config else None
    return model, train_cfg


def save_gan(path, G: GeneratorNet, D: DiscriminatorNet, width: int, channels: int = 3) -> None:
    params = {f"generator.{k}": v for k, v in _arrays(G).items()}
    params.update({f"discriminator.{k}": v for k, v in _arrays(D).items()})
    write_checkpoint(path, {"kind": "gan", "width": width, "channels": channels}, params)


def load_gan(path) -> tuple[GeneratorNet, DiscriminatorNet]:
    config, params = read_checkpoint(path)
    if config.get("kind") != "gan":
        raise FormatError(f"{path}: not a GAN checkpoint (kind={config.get('kind')!r})")
    rng = np.random.default_rng(0)
    G = GeneratorNet.init(rng, config["channels"], config["width"])
    D = DiscriminatorNet.init(rng, config["channels"], config["width"])
    try:
        assign_parameters(G, {k[10:]: v for k, v in params.items() if k.startswith("generator.")})
        assign_parameters(D, {k[14:]: v for k, v in params.items() if k.startswith("discriminator.")})
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: parameters do not match the config: {e}") from None
    return G, D

