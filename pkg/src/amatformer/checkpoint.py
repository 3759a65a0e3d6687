"""Checkpoint file: a config echo plus every parameter in a fixed order.

Layout, all little-endian:

    4s   magic  b"AMCK"
    u16  format version (1)
    u32  config JSON length, then that many UTF-8 bytes
    f32  raw parameter data, arrays concatenated in named order
         (params.iter_named); shapes come from the config, not the file
    u8   optimizer flag: 0 = none, 1 = Adam state follows
    u64  Adam step count              } only when the
    f32  first-moment arrays, order as above  } flag is 1
    f32  second-moment arrays, order as above }

Parameters are stored float32; training runs float32 end-to-end so the
round trip is exact, while a float64 model narrows on write.
"""

import json
import struct

import numpy as np

from .config import config_from_dict
from .data import atomic_write_bytes
from .errors import FileFormatError
from .optim import AdamState
from .params import init_model_params, named_arrays, rebuild_like

MAGIC = b"AMCK"
VERSION = 1
_HEAD = struct.Struct("<4sH")


def _packed(arrays):
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)


def checkpoint_bytes(cfg, model, state=None):
    blob = cfg.to_json().encode("utf-8")
    parts = [
        _HEAD.pack(MAGIC, VERSION),
        struct.pack("<I", len(blob)),
        blob,
        _packed(a for _, a in named_arrays(model)),
    ]
    if state is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<Q", state.step))
        parts.append(_packed(state.m))
        parts.append(_packed(state.v))
    return b"".join(parts)


def write_checkpoint(path, cfg, model, state=None):
    atomic_write_bytes(path, checkpoint_bytes(cfg, model, state))


def _take_arrays(raw, offset, shapes, path):
    out = []
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise FileFormatError(f"{path}: truncated parameter data")
        out.append(np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy())
        offset = end
    return out, offset


def read_checkpoint(path):
    """Returns (config, model, adam state or None)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size + 4:
        raise FileFormatError(f"{path}: truncated header")
    magic, version = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    offset = _HEAD.size
    (blob_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if offset + blob_len > len(raw):
        raise FileFormatError(f"{path}: truncated config blob")
    try:
        cfg = config_from_dict(json.loads(raw[offset:offset + blob_len]))
    except (ValueError, TypeError) as e:
        raise FileFormatError(f"{path}: bad config blob: {e}") from None
    offset += blob_len

    skeleton = init_model_params(cfg)
    shapes = [a.shape for _, a in named_arrays(skeleton)]
    arrays, offset = _take_arrays(raw, offset, shapes, path)
    model = rebuild_like(skeleton, arrays)

    if offset + 1 > len(raw):
        raise FileFormatError(f"{path}: missing optimizer flag")
    (flag,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    state = None
    if flag == 1:
        if offset + 8 > len(raw):
            raise FileFormatError(f"{path}: truncated optimizer step")
        (step,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        m, offset = _take_arrays(raw, offset, shapes, path)
        v, offset = _take_arrays(raw, offset, shapes, path)
        state = AdamState(step=int(step), m=m, v=v)
    elif flag != 0:
        raise FileFormatError(f"{path}: bad optimizer flag {flag}")
    if offset != len(raw):
        raise FileFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return cfg, model, state
