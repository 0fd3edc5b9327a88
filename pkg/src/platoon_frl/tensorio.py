"""Binary tensor container used for checkpoints and the aggregation boundary.

Layout (all integers little-endian)::

    magic   8 bytes   b"PFRLTNS1"
    count   uint32
    then per tensor:
      name_len uint16, name utf-8 bytes
      ndim     uint8,  dims uint64 * ndim
      data     float64 little-endian, C order
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

MAGIC = b"PFRLTNS1"


class LoadError(ValueError):
    """A tensor file is malformed or does not match the expected layout."""


def write_tensors(dest, tensors: Iterable[tuple[str, np.ndarray]]) -> None:
    tensors = list(tensors)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes(order="C"))
    payload = buf.getvalue()
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(payload)
    else:
        dest.write(payload)


def _read(stream: BinaryIO, n: int) -> bytes:
    chunk = stream.read(n)
    if len(chunk) != n:
        raise LoadError("truncated tensor file")
    return chunk


def read_tensors(src) -> list[tuple[str, np.ndarray]]:
    if isinstance(src, (str, Path)):
        try:
            stream: BinaryIO = io.BytesIO(Path(src).read_bytes())
        except OSError as exc:
            raise LoadError(str(exc)) from exc
    else:
        stream = src
    if _read(stream, len(MAGIC)) != MAGIC:
        raise LoadError("not a tensor file (bad magic)")
    (count,) = struct.unpack("<I", _read(stream, 4))
    out = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read(stream, 2))
        name = _read(stream, name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read(stream, 1))
        shape = struct.unpack(f"<{ndim}Q", _read(stream, 8 * ndim))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(_read(stream, 8 * size), dtype="<f8").astype(np.float64)
        out.append((name, data.reshape(shape)))
    return out


def dumps(tensors) -> bytes:
    buf = io.BytesIO()
    write_tensors(buf, tensors)
    return buf.getvalue()


def loads(payload: bytes) -> list[tuple[str, np.ndarray]]:
    return read_tensors(io.BytesIO(payload))


def save_params(dest, params) -> None:
    write_tensors(dest, params.named())


def load_params(src, spec):
    """Read a network saved by :func:`save_params`, checking it against ``spec``."""
    from platoon_frl.nn import NetworkParams

    named = read_tensors(src)
    layout = spec.layout()
    if [n for n, _ in named] != [n for n, _, _ in layout]:
        raise LoadError("tensor names do not match the network spec")
    params = NetworkParams(spec)
    for (name, arr), (_, shape, _) in zip(named, layout):
        if arr.shape != tuple(shape):
            raise LoadError(f"tensor {name} has shape {arr.shape}, expected {tuple(shape)}")
        params[name][...] = arr
    return params


def save_optimizer(dest, state) -> None:
    scalars = np.array([state.lr, state.beta1, state.beta2, state.eps, float(state.t)])
    write_tensors(dest, [("hyper", scalars), ("m", state.m), ("v", state.v)])


def load_optimizer(src, n_trainable: int):
    from platoon_frl.nn import OptimizerState

    named = dict(read_tensors(src))
    if set(named) != {"hyper", "m", "v"}:
        raise LoadError("malformed optimizer file")
    if named["m"].shape != (n_trainable,) or named["v"].shape != (n_trainable,):
        raise LoadError("optimizer moments do not match the network")
    lr, b1, b2, eps, t = named["hyper"]
    return OptimizerState(float(lr), named["m"].copy(), named["v"].copy(), float(b1), float(b2), float(eps), int(t))
