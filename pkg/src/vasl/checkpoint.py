"""Binary checkpoint format (all integers and floats little-endian).

::

    b"VASL1"
    u32 config_len, config text (canonical ModelConfig form, UTF-8)
    u64 epoch, u64 adam_step
    u32 n_params, then per parameter (lexicographic by name):
        u16 name_len, name, 4 x u32 dims, f64 values, f64 adam m, f64 adam v
    u32 n_buffers, then per buffer (lexicographic by name):
        u16 name_len, name, 4 x u32 dims, f64 values

Nothing may follow the last buffer.  Encoding the result of decoding a file
reproduces it byte for byte.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .model import build_model

MAGIC = b"VASL1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    epoch: int
    step: int
    params: dict  # name -> (values, m, v)
    buffers: dict  # name -> values

    @classmethod
    def from_store(cls, cfg, store, epoch=0):
        params = {name: (p.data, store.m[name], store.v[name]) for name, p in store}
        return cls(cfg, int(epoch), int(store.step), params, store.buffers())

    def restore(self):
        """Rebuild the network from the embedded config and load all state."""
        net, store = build_model(self.config)
        if set(self.params) != set(store.params):
            extra = sorted(set(self.params) ^ set(store.params))
            raise CheckpointError(f"parameter set does not match config (first difference: {extra[0]!r})")
        for name, (values, m, v) in self.params.items():
            p = store[name]
            if values.shape != p.dims:
                raise CheckpointError(f"{name}: dims {list(values.shape)} != config {list(p.dims)}")
            p.data = values.copy()
            store.m[name] = m.copy()
            store.v[name] = v.copy()
        expected = store.buffers()
        if set(self.buffers) != set(expected):
            raise CheckpointError("buffer set does not match config")
        for name, values in self.buffers.items():
            if values.shape != expected[name].shape:
                raise CheckpointError(f"{name}: dims {list(values.shape)} != config {list(expected[name].shape)}")
            store.set_buffer(name, values)
        store.step = self.step
        return net, store


def _dims4(shape):
    if len(shape) != 4:
        raise CheckpointError(f"record must be rank 4, got {shape}")
    return struct.pack("<4I", *shape)


def _name(name):
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def encode(ckpt):
    cfg = ckpt.config.to_text().encode("utf-8")
    out = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<QQ", ckpt.epoch, ckpt.step)]
    out.append(struct.pack("<I", len(ckpt.params)))
    for name in sorted(ckpt.params):
        values, m, v = ckpt.params[name]
        out += [_name(name), _dims4(values.shape), _f64(values), _f64(m), _f64(v)]
    out.append(struct.pack("<I", len(ckpt.buffers)))
    for name in sorted(ckpt.buffers):
        values = ckpt.buffers[name]
        out += [_name(name), _dims4(values.shape), _f64(values)]
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self):
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def floats(self, dims):
        count = int(np.prod(dims))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)


def decode(buf):
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not a VASL1 checkpoint")
    r = _Reader(buf)
    r.take(len(MAGIC))
    (cfg_len,) = r.unpack("<I")
    try:
        cfg = ModelConfig.from_text(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"embedded config unreadable: {exc}") from None
    epoch, step = r.unpack("<QQ")
    (n_params,) = r.unpack("<I")
    params = {}
    for _ in range(n_params):
        name = r.name()
        dims = r.unpack("<4I")
        params[name] = (r.floats(dims), r.floats(dims), r.floats(dims))
    (n_buf,) = r.unpack("<I")
    buffers = {}
    for _ in range(n_buf):
        name = r.name()
        dims = r.unpack("<4I")
        buffers[name] = r.floats(dims)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(cfg, epoch, step, params, buffers)


def save_checkpoint(path, cfg, store, epoch=0):
    data = encode(Checkpoint.from_store(cfg, store, epoch))
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def read_checkpoint(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def load_checkpoint(path):
    """Returns ``(net, store, checkpoint)`` rebuilt from the file."""
    ckpt = read_checkpoint(path)
    net, store = ckpt.restore()
    return net, store, ckpt
