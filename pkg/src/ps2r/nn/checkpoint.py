"""PS2W checkpoint files.

Layout (little-endian): magic ``PS2W``, u32 version, u32 tensor count, then for
each tensor a u16 name length, the UTF-8 name, u8 rank, rank x u32 dims and the
f64 values in C order. Model hyperparameters that the tensor shapes do not
determine are stored as rank-0 ``config.*`` tensors.
"""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .model import EDGE_CONV, POINT_MLP, ClassifierConfig, EncoderConfig, ModelParams

MAGIC = b"PS2W"
VERSION = 1


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.array(arr, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ValueError("not a PS2W checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        pos = 12
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 1)
            pos += 1 + 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise ValueError("truncated tensor data")
            flat = np.frombuffer(data, "<f8", size, pos).astype(np.float64)
            tensors[name] = np.reshape(flat, dims)
            pos += 8 * size
    except struct.error:
        raise ValueError("truncated checkpoint") from None
    if pos != len(data):
        raise ValueError("trailing bytes after last tensor")
    return tensors


def save_checkpoint(path, params: ModelParams, enc: EncoderConfig, cls: ClassifierConfig,
                    target_points: int) -> None:
    tensors = dict(params.tensors)
    tensors["config.kind"] = np.array(1.0 if enc.kind == EDGE_CONV else 0.0)
    tensors["config.k"] = np.array(float(enc.k))
    tensors["config.target_points"] = np.array(float(target_points))
    Path(path).write_bytes(encode_tensors(tensors))


def load_checkpoint(path):
    """Returns ``(params, encoder_config, classifier_config, target_points)``."""
    path = Path(path)
    try:
        tensors = decode_tensors(path.read_bytes())
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    try:
        kind = EDGE_CONV if tensors.pop("config.kind") == 1 else POINT_MLP
        k = int(tensors.pop("config.k"))
        target_points = int(tensors.pop("config.target_points"))
    except KeyError as exc:
        raise ValueError(f"{path}: missing {exc.args[0]}") from None

    def widths(prefix):
        idx = sorted(int(m.group(1)) for n in tensors
                     if (m := re.fullmatch(rf"{prefix}\.(\d+)\.bias", n)))
        return [tensors[f"{prefix}.{i}.bias"].shape[0] for i in idx]

    enc_w = widths("enc")
    cls_w = widths("cls")
    enc = EncoderConfig(kind=kind, layer_widths=tuple(enc_w), k=k)
    cls = ClassifierConfig(num_classes=cls_w[-1], hidden_widths=tuple(cls_w[:-1]))
    params = ModelParams(tensors)
    params.check_shapes(enc, cls)
    return params, enc, cls, target_points
