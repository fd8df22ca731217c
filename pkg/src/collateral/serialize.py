"""Binary model containers and the feature CSV format.

QNET1 (networks)::

    b"QNET1" | u32 n_dims | u32 input dims | u32 n_layers
    per layer: u32 kind | u32 n_meta | u32 meta... | u32 n_tensors
               per tensor: u32 ndim | u32 dims... | f32 data (C order)

CLF1 (other classifiers)::

    b"CLF1" | u32 len | kind (utf-8) | u64 seed | u32 len | hyperparameters (JSON)
    | u32 n_arrays | per array: u32 len | name | u32 len | dtype | u32 ndim | u32 dims... | data

All integers and floats are little endian. Writing the same object twice
gives identical bytes.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .nn import LAYER_KINDS, Sequential

QNET_MAGIC = b"QNET1"
CLF_MAGIC = b"CLF1"
KIND_CODES = {"conv3d": 1, "tconv3d": 2, "dense": 3, "flatten": 4, "tanh": 5, "sigmoid": 6, "softmax": 7}
_KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated container")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, n: int) -> tuple[int, ...]:
        return struct.unpack(f"<{n}I", self.take(4 * n))

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _u32s(values) -> bytes:
    values = [int(v) for v in values]
    return struct.pack(f"<{len(values)}I", *values)


def _text(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32s([len(b)]) + b


def qnet_bytes(net: Sequential) -> bytes:
    shape = net.input_shape or ()
    out = [QNET_MAGIC, _u32s([len(shape), *shape, len(net.layers)])]
    for layer in net.layers:
        meta = layer.meta()
        out.append(_u32s([KIND_CODES[layer.kind], len(meta), *meta, len(layer.params)]))
        for name in ("w", "b"):
            if name not in layer.params:
                continue
            t = np.ascontiguousarray(layer.params[name], dtype="<f4")
            out.append(_u32s([t.ndim, *t.shape]))
            out.append(t.tobytes())
    return b"".join(out)


def _build_layer(kind: str, meta):
    cls = LAYER_KINDS[kind]
    if kind in ("conv3d", "tconv3d"):
        in_ch, out_ch, k, s, pad = meta
        return cls(in_ch, out_ch, k, s, pad=pad)
    if kind == "dense":
        return cls(*meta)
    return cls()


def qnet_from_bytes(buf: bytes) -> Sequential:
    r = _Reader(buf)
    if r.take(len(QNET_MAGIC)) != QNET_MAGIC:
        raise FormatError("not a QNET1 container")
    shape = r.u32s(r.u32())
    layers = []
    for _ in range(r.u32()):
        code = r.u32()
        if code not in _KIND_NAMES:
            raise FormatError(f"unknown layer kind code {code}")
        layer = _build_layer(_KIND_NAMES[code], r.u32s(r.u32()))
        n_tensors = r.u32()
        if n_tensors != len(layer.params):
            raise FormatError(f"layer {layer.kind} expects {len(layer.params)} tensors, got {n_tensors}")
        for name in ("w", "b")[:n_tensors]:
            dims = r.u32s(r.u32())
            n = int(np.prod(dims, dtype=np.int64))
            t = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
            if t.shape != layer.params[name].shape:
                raise FormatError(f"tensor {name} of {layer.kind} has shape {t.shape}")
            layer.params[name] = t.astype(np.float32)
        layer.zero_grad()
        layers.append(layer)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after QNET1 container")
    return Sequential(layers, shape or None)


def save_qnet(net: Sequential, path) -> Path:
    path = Path(path)
    path.write_bytes(qnet_bytes(net))
    return path


def load_qnet(path) -> Sequential:
    return qnet_from_bytes(Path(path).read_bytes())


def clf_bytes(kind: str, seed: int, hyper: dict, arrays: dict) -> bytes:
    out = [CLF_MAGIC, _text(kind), struct.pack("<Q", int(seed)),
           _text(json.dumps(hyper, sort_keys=True)), _u32s([len(arrays)])]
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        a = np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))
        out += [_text(name), _text(a.dtype.str), _u32s([a.ndim, *a.shape]), a.tobytes()]
    return b"".join(out)


def clf_from_bytes(buf: bytes):
    """Returns ``(kind, seed, hyperparameters, arrays)``."""
    r = _Reader(buf)
    if r.take(len(CLF_MAGIC)) != CLF_MAGIC:
        raise FormatError("not a CLF1 container")
    kind = r.text()
    seed = struct.unpack("<Q", r.take(8))[0]
    hyper = json.loads(r.text())
    arrays = {}
    for _ in range(r.u32()):
        name, dtype = r.text(), np.dtype(r.text())
        dims = r.u32s(r.u32())
        n = int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(dims).copy()
    if r.pos != len(buf):
        raise FormatError("trailing bytes after CLF1 container")
    return kind, seed, hyper, arrays


def format_value(v: float) -> str:
    # shortest repr that round-trips a float32
    return np.format_float_positional(np.float32(v), unique=True, trim="-")


def write_features(rows, path) -> Path:
    """Rows of ``(sample_id, label, scheme, vector)`` as ``sample_id,label,scheme,dim,v0,...``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for sid, label, scheme, vec in rows:
            vec = np.asarray(vec).ravel()
            w.writerow([sid, int(label), scheme, vec.size, *(format_value(v) for v in vec)])
    return path


def read_features(path):
    rows = []
    with Path(path).open(newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if len(rec) < 4:
                raise FormatError(f"line {i + 1}: too few fields")
            sid, label, scheme, dim = rec[0], int(rec[1]), rec[2], int(rec[3])
            vals = np.array(rec[4:], dtype=np.float32)
            if vals.size != dim:
                raise FormatError(f"line {i + 1}: declared dimension {dim}, found {vals.size}")
            rows.append((sid, label, scheme, vals))
    return rows
