"""Binary network checkpoints.

Single-file little-endian format:

    magic   b"CGL1"
    version u32
    seed    u64
    rank    u32, then rank x u32 input dims
    n       u32 layer count
    layer table, n entries:
        kind u8, activation u8, noise u8, padding u8 (0 same / 1 valid)
        rate f64
        units u32, filters u32, kh u32, kw u32, stride u32, pool u32
        n_params u32, then per parameter:
            name_len u8 + ascii name, ndim u32, ndim x u32 dims
    parameter blobs: raw float64 little-endian arrays, concatenated in
    table order

Round-trips are bit-exact: blobs are written with tobytes() and read back
with frombuffer().
"""

import struct

import numpy as np

from catgeo.errors import FormatError
from catgeo.engine.layers import ACTIVATIONS, KINDS, LayerSpec, NOISE_KINDS, PADDINGS
from catgeo.engine.network import Network

MAGIC = b"CGL1"
VERSION = 1


def _pack_spec(spec):
    kh, kw = spec.kernel
    return struct.pack(
        "<BBBBdIIIIII",
        KINDS.index(spec.kind), ACTIVATIONS.index(spec.activation),
        NOISE_KINDS.index(spec.noise), PADDINGS.index(spec.padding),
        spec.rate, spec.units, spec.filters, kh, kw, spec.stride, spec.pool)


_SPEC_FMT = "<BBBBdIIIIII"
_SPEC_SIZE = struct.calcsize(_SPEC_FMT)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError(f"truncated checkpoint at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, size):
        if self.pos + size > len(self.data):
            raise FormatError(f"truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out


def save_network(net, path):
    parts = [MAGIC, struct.pack("<IQ", VERSION, net.rng_seed)]
    parts.append(struct.pack("<I", len(net.input_shape)))
    parts.append(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    parts.append(struct.pack("<I", net.n_layers))
    blobs = []
    for impl in net.layers:
        parts.append(_pack_spec(impl.spec))
        names = sorted(impl.params)
        parts.append(struct.pack("<I", len(names)))
        for name in names:
            encoded = name.encode("ascii")
            arr = impl.params[name]
            parts.append(struct.pack("<B", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<I", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
        fh.write(b"".join(blobs))


def load_network(path):
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.raw(4) != MAGIC:
        raise FormatError("bad magic: not a CGL1 checkpoint")
    version, seed = r.take("<IQ")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (rank,) = r.take("<I")
    input_shape = r.take(f"<{rank}I")
    (n_layers,) = r.take("<I")
    specs = []
    param_meta = []
    for _ in range(n_layers):
        kind, act, noise, pad, rate, units, filters, kh, kw, stride, pool = \
            r.take(_SPEC_FMT)
        try:
            specs.append(LayerSpec(
                kind=KINDS[kind], units=units, filters=filters, kernel=(kh, kw),
                stride=stride, padding=PADDINGS[pad], pool=pool,
                activation=ACTIVATIONS[act], noise=NOISE_KINDS[noise], rate=rate))
        except IndexError:
            raise FormatError(f"invalid layer table entry at byte {r.pos - _SPEC_SIZE}")
        (n_params,) = r.take("<I")
        meta = []
        for _ in range(n_params):
            (name_len,) = r.take("<B")
            name = r.raw(name_len).decode("ascii")
            (ndim,) = r.take("<I")
            shape = r.take(f"<{ndim}I")
            meta.append((name, shape))
        param_meta.append(meta)
    net = Network(specs, input_shape, seed)
    for impl, meta in zip(net.layers, param_meta):
        if sorted(impl.params) != sorted(name for name, _ in meta):
            raise FormatError("layer table parameters do not match layer kind")
        for name, shape in meta:
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            blob = r.raw(count * 8)
            arr = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
            if arr.shape != impl.params[name].shape:
                raise FormatError(
                    f"parameter {name} shape {arr.shape} does not match "
                    f"layer expectation {impl.params[name].shape}")
            impl.params[name] = arr
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after blobs")
    return net
