"""Self-describing single-file weight checkpoints.

Binary layout (all integers little-endian):

    bytes 0..7    magic b"WLCSTCKP"
    u32           format version (1)
    u64           length of the JSON header, then that many UTF-8 bytes;
                  the header holds {"model_config": ..., "meta": ...}
    u32           number of named arrays, then per array:
                      u32  name length, name UTF-8 bytes
                      u8   ndim, then ndim * u64 dimensions
                      raw float64 little-endian data (prod(dims) * 8 bytes)

Arrays cover all model parameters plus the normalization statistics
(names prefixed "stats."). The meta dict is free-form (seeds, data paths).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..datamodel import NormStats
from ..errors import ConfigurationError
from .model import ModelConfig, WellModel

MAGIC = b"WLCSTCKP"
VERSION = 1

_STATS_FIELDS = ("design_mean", "design_std", "ops_mean", "ops_std",
                 "target_mean", "target_std")


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f8")
    name_b = name.encode("utf-8")
    fh.write(struct.pack("<I", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", data.ndim))
    for dim in data.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(data.tobytes())


def _read_array(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", fh.read(4))
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape).copy()
    return name, arr


def save_checkpoint(path, model: WellModel, meta: dict | None = None) -> None:
    path = Path(path)
    header = json.dumps(
        {"model_config": model.config.to_dict(),
         "meta": dict(meta or {}, stats_n_rows=model.stats.n_rows)},
        sort_keys=True).encode("utf-8")
    arrays = [(f"stats.{f}", getattr(model.stats, f)) for f in _STATS_FIELDS]
    arrays += sorted(model.params.items())
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            _write_array(fh, name, arr)


def load_checkpoint(path) -> tuple[WellModel, dict]:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigurationError(f"{path} is not a wellcast checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        arrays = dict(_read_array(fh) for _ in range(n_arrays))

    meta = header["meta"]
    stats = NormStats(*(arrays.pop(f"stats.{f}") for f in _STATS_FIELDS),
                      n_rows=int(meta.get("stats_n_rows", 0)))
    model = WellModel(ModelConfig(**header["model_config"]), stats)
    if set(arrays) != set(model.params):
        missing = set(model.params) - set(arrays)
        extra = set(arrays) - set(model.params)
        raise ConfigurationError(
            f"checkpoint parameter mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, arr in arrays.items():
        if arr.shape != model.params[name].shape:
            raise ConfigurationError(f"checkpoint array {name} has shape {arr.shape}, "
                                     f"expected {model.params[name].shape}")
        model.params[name] = arr
    return model, meta
