"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"DFI1"
    u32 in_h, in_w, in_c, crop_w, crop_h
    u32 n_entries
    n_entries x [u8 kind, u32 d0, u32 d1, u32 d2]
    float32 tensors, in entry order (conv: weight then bias)
    u64 byte count of everything above

Kinds: 0 conv (kernel, in, out), 1 relu, 2 maxpool, 3 bare tensor (shape).
Conv weights are stored in (k, k, in, out) order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .augment import AugmentConfig
from .errors import CheckpointError
from .network import LayerSpec, Regressor

MAGIC = b"DFI1"
_KINDS = {"conv": 0, "relu": 1, "maxpool": 2}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}
_TENSOR = 3
_F32 = np.dtype("<f4")


def _encode(header: tuple[int, ...], entries: list[tuple[int, int, int, int]], tensors: list[np.ndarray]) -> bytes:
    buf = bytearray(MAGIC)
    buf += struct.pack("<5I", *header)
    buf += struct.pack("<I", len(entries))
    for e in entries:
        buf += struct.pack("<B3I", *e)
    for t in tensors:
        buf += np.ascontiguousarray(t, dtype=_F32).tobytes()
    buf += struct.pack("<Q", len(buf))
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated file while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _decode(data: bytes):
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic")
    r = _Reader(data)
    r.take(4, "magic")
    header = r.unpack("<5I", "header")
    (n,) = r.unpack("<I", "entry count")
    entries = []
    for i in range(n):
        kind, *dims = r.unpack("<B3I", f"layer table entry {i}")
        if kind not in _KIND_NAMES and kind != _TENSOR:
            raise CheckpointError(f"layer {i}: unknown kind {kind}")
        entries.append((kind, *dims))
    tensors = []
    for i, (kind, d0, d1, d2) in enumerate(entries):
        shapes = []
        if kind == 0:
            shapes = [("weight", (d0, d0, d1, d2)), ("bias", (d2,))]
        elif kind == _TENSOR:
            shapes = [("tensor", (d0, d1, d2))]
        for name, shape in shapes:
            nbytes = int(np.prod(shape)) * 4
            if r.pos + nbytes + 8 > len(data):
                raise CheckpointError(f"truncated tensor in layer {i} ({name})")
            tensors.append(np.frombuffer(r.take(nbytes, f"layer {i} {name}"), dtype=_F32).reshape(shape).copy())
    (length,) = r.unpack("<Q", "length check")
    if length != r.pos - 8:
        raise CheckpointError(f"length check mismatch: recorded {length}, found {r.pos - 8}")
    if r.pos != len(data):
        raise CheckpointError(f"dimension mismatch: {len(data) - r.pos} trailing bytes after length check")
    return header, entries, tensors


def checkpoint_bytes(model: Regressor, aug: AugmentConfig | None = None) -> bytes:
    h, w, c = model.input_size
    crop = tuple(aug.crop_size) if aug is not None else (w, h)
    entries, tensors = [], []
    for spec, p in zip(model.layers, model.params):
        if spec.kind == "conv":
            entries.append((0, spec.kernel, spec.in_channels, spec.out_channels))
            tensors.extend(p)
        else:
            entries.append((_KINDS[spec.kind], 0, 0, 0))
    return _encode((h, w, c, *crop), entries, tensors)


def save_checkpoint(model: Regressor, path: str | Path, aug: AugmentConfig | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(checkpoint_bytes(model, aug))


def load_checkpoint(path: str | Path) -> tuple[Regressor, AugmentConfig]:
    """Return the model and the evaluation preprocessing it was trained with."""
    header, entries, tensors = _decode(Path(path).read_bytes())
    in_h, in_w, in_c, crop_w, crop_h = header
    layers = []
    for kind, d0, d1, d2 in entries:
        if kind == _TENSOR:
            raise CheckpointError("file holds a bare tensor, not a network")
        layers.append(LayerSpec(_KIND_NAMES[kind], d1, d2, d0) if kind == 0 else LayerSpec(_KIND_NAMES[kind]))
    try:
        model = Regressor(layers, (in_h, in_w, in_c), seed=None)
    except ValueError as exc:
        raise CheckpointError(f"dimension mismatch: {exc}") from None
    it = iter(tensors)
    model.params = [(next(it), next(it)) if s.kind == "conv" else None for s in layers]
    aug = AugmentConfig(crop_size=(crop_w, crop_h), output_size=(in_w, in_h), enabled=False)
    return model, aug


def save_heatmaps(stack: np.ndarray, path: str | Path) -> None:
    """Debug dump of a (k, h, w) heatmap stack in the checkpoint container."""
    k, h, w = stack.shape
    Path(path).write_bytes(_encode((0, 0, 0, 0, 0), [(_TENSOR, k, h, w)], [stack]))


def load_heatmaps(path: str | Path) -> np.ndarray:
    _, entries, tensors = _decode(Path(path).read_bytes())
    if len(entries) != 1 or entries[0][0] != _TENSOR:
        raise CheckpointError("file does not hold a single heatmap stack")
    return tensors[0]
