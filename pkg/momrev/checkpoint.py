# momrev/checkpoint.py
"""Binary formats.

Pair stream (exact states):

    b"MRPB" | u16 version | u32 count | count * (pair)
    pair  = u32 length + signed mantissa, u32 length + unsigned buffer
    ints are little-endian two's complement of minimal length

Network checkpoint:

    b"MRNC" | u16 version | u8 kind | u64 gamma_n | u64 gamma_d | i32 frac_bits (-1: float)
    | u8 v0_mode | u8 tied | u32 depth | u32 stored blocks | blocks
    block = arrays (u8 ndim, u32 shape..., row-major <f8 data) [+ <f8 threshold, <f8 scale for LISTA]

Pair streams are version 1, network checkpoints version 2 (LISTA scale added).
"""
from __future__ import annotations

import struct
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .momentum_net import V0_MODES, BlockParams, ListaParams, MomentumState, Network
from .revarith import Ratio

__all__ = [
    "PAIR_MAGIC",
    "NET_MAGIC",
    "decode_pairs",
    "decode_state",
    "encode_pairs",
    "encode_state",
    "load_network",
    "save_network",
]

PAIR_MAGIC = b"MRPB"
NET_MAGIC = b"MRNC"
VERSION = 1
NET_VERSION = 2

_KINDS = {BlockParams: 0, ListaParams: 1}


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValidationError("truncated checkpoint")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ValidationError(f"{len(self.data) - self.pos} trailing bytes in checkpoint")


def _int_bytes(v: int, signed: bool) -> bytes:
    if v == 0:
        return b""
    n = (v.bit_length() + (8 if signed else 7)) // 8
    return v.to_bytes(n, "little", signed=signed)


def _check_magic(r: _Reader, magic: bytes) -> None:
    if r.take(4) != magic:
        raise ValidationError("not a momrev checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")


def encode_pairs(mantissas: Sequence[int], buffers: Sequence[int]) -> bytes:
    mantissas = [int(m) for m in mantissas]
    buffers = [int(b) for b in buffers]
    if len(mantissas) != len(buffers):
        raise ValidationError("one buffer per mantissa is required")
    out = [PAIR_MAGIC, struct.pack("<HI", VERSION, len(mantissas))]
    for m, b in zip(mantissas, buffers):
        if b < 0:
            raise ValidationError("information buffers are non-negative")
        mb, bb = _int_bytes(m, True), _int_bytes(b, False)
        out += [struct.pack("<I", len(mb)), mb, struct.pack("<I", len(bb)), bb]
    return b"".join(out)


def decode_pairs(data: bytes) -> Tuple[List[int], List[int]]:
    r = _Reader(data)
    _check_magic(r, PAIR_MAGIC)
    (count,) = r.unpack("<I")
    mantissas, buffers = [], []
    for _ in range(count):
        (n,) = r.unpack("<I")
        mantissas.append(int.from_bytes(r.take(n), "little", signed=True))
        (n,) = r.unpack("<I")
        buffers.append(int.from_bytes(r.take(n), "little", signed=False))
    r.done()
    return mantissas, buffers


def encode_state(state: MomentumState) -> bytes:
    """x and v mantissas (v carries the buffers; x gets zero buffers)."""
    if not state.exact:
        raise ValidationError("only exact states have a pair encoding")
    shape = np.shape(state.x)
    head = struct.pack("<iB" + "I" * len(shape), state.frac_bits, len(shape), *shape)
    zeros = [0] * int(np.prod(shape, dtype=np.int64))
    return head + encode_pairs(state.x.ravel(), zeros) + encode_pairs(state.v.ravel(), state.buffers.ravel())


def decode_state(data: bytes) -> MomentumState:
    r = _Reader(data)
    frac_bits, ndim = r.unpack("<iB")
    shape = r.unpack("<" + "I" * ndim)
    size = int(np.prod(shape, dtype=np.int64))
    xs, vs = _split_pair_streams(r.take(len(data) - r.pos), size)

    def obj(values):
        a = np.empty(size, dtype=object)
        a[:] = values
        return a.reshape(shape)

    x, _ = decode_pairs(xs)
    v, buffers = decode_pairs(vs)
    return MomentumState(obj(x), obj(v), obj(buffers), frac_bits)


def _split_pair_streams(data: bytes, size: int) -> Tuple[bytes, bytes]:
    r = _Reader(data)
    _check_magic(r, PAIR_MAGIC)
    (count,) = r.unpack("<I")
    if count != size:
        raise ValidationError(f"pair count {count} does not match shape size {size}")
    for _ in range(2 * count):
        (n,) = r.unpack("<I")
        r.take(n)
    return data[:r.pos], data[r.pos:]


def _write_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack("<B" + "I" * a.ndim, a.ndim, *a.shape) + a.tobytes(order="C")


def _read_array(r: _Reader) -> np.ndarray:
    (ndim,) = r.unpack("<B")
    shape = r.unpack("<" + "I" * ndim)
    n = int(np.prod(shape, dtype=np.int64))
    return np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)


def save_network(net: Network) -> bytes:
    if not net.blocks:
        raise ValidationError("cannot checkpoint an empty network")
    kinds = {_KINDS.get(type(b)) for b in net.blocks}
    if None in kinds or len(kinds) != 1:
        raise ValidationError("checkpoints hold MLP or LISTA blocks of a single kind")
    kind = kinds.pop()
    stored = net.blocks[:1] if net.tied else net.blocks
    gamma = net.gamma
    out = [
        NET_MAGIC,
        struct.pack(
            "<HBQQiBBII",
            NET_VERSION, kind, gamma.n, gamma.d,
            -1 if net.frac_bits is None else net.frac_bits,
            V0_MODES.index(net.v0_mode), int(net.tied), net.depth, len(stored),
        ),
    ]
    for block in stored:
        if kind == 0:
            out += [_write_array(block.W1), _write_array(block.W2), _write_array(block.b)]
        else:
            out += [_write_array(block.W1), _write_array(block.W2)]
            out.append(struct.pack("<dd", block.threshold, block.scale))
    return b"".join(out)


def load_network(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4) != NET_MAGIC:
        raise ValidationError("not a momrev network checkpoint (bad magic)")
    version, kind, gn, gd, frac_bits, v0_idx, tied, depth, n_stored = r.unpack("<HBQQiBBII")
    if version != NET_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    if kind not in (0, 1) or v0_idx >= len(V0_MODES):
        raise ValidationError("corrupt checkpoint header")
    if tied and n_stored != 1:
        raise ValidationError(f"tied checkpoint must store exactly one block, found {n_stored}")
    gamma = Ratio(gn, gd)
    blocks = []
    for _ in range(n_stored):
        if kind == 0:
            blocks.append(BlockParams(_read_array(r), _read_array(r), _read_array(r), gamma))
        else:
            W1, W2 = _read_array(r), _read_array(r)
            threshold, scale = r.unpack("<dd")
            blocks.append(ListaParams(W1, W2, threshold, gamma, scale))
    r.done()
    kwargs = dict(v0_mode=V0_MODES[v0_idx], frac_bits=None if frac_bits < 0 else frac_bits)
    if tied:
        return Network.tied_weights(blocks[0], depth, **kwargs)
    if len(blocks) != depth:
        raise ValidationError(f"checkpoint stores {len(blocks)} blocks for depth {depth}")
    return Network(tuple(blocks), **kwargs)
