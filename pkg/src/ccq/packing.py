"""Bit-exact packed layouts for quantized groups and their scales.

Per group at ``g = 64``:

* ``2.75``: 22 one-byte ``(4,3,2)`` codes. Only the high nibble of the last
  byte is a real state; its low nibble holds the 4-bit group scale.
* ``2.5``: 10 little-endian 16-bit hybrid words. The top 3 bits of the last
  word are the 64th weight, the low 13 bits hold the group scale.
* ``2.06``: 16 one-byte cluster indices. Group scales travel side-band as
  4-bit fields, two per byte, even group in the low nibble.

When ``g`` is a multiple of the weights per storage unit there are no
redundant bits and every family stores its scales side-band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coding import Family, layout_for
from .errors import CodeDomainError, EncodingError

SCALE_BITS = {Family.BPW275: 4, Family.BPW25: 13, Family.BPW206: 4}


def scale_bits_for(family) -> int:
    return SCALE_BITS[Family.parse(family)]


def unit_bytes(family) -> int:
    return layout_for(family).word_bits // 8


def quantize_scales(channel_scales, scale_bits: int):
    """Compress one channel's group scales against a shared super scale.

    Returns:
        (super_scale, q_scales): ``super_scale`` as float32 and the unsigned
        integer codes; a scale dequantizes as ``q * super_scale``.
    """
    if scale_bits not in (4, 13):
        raise CodeDomainError(f"scale_bits must be 4 or 13, got {scale_bits}")
    s = np.asarray(channel_scales, dtype=np.float64)
    if s.size and np.any(s < 0):
        raise CodeDomainError("group scales must be non-negative")
    top = (1 << scale_bits) - 1
    peak = float(s.max()) if s.size else 0.0
    sup = np.float32(peak / top) if peak > 0 else np.float32(1.0)
    if sup == 0:
        sup = np.float32(np.finfo(np.float32).tiny)
    q = np.clip(np.floor(s / float(sup) + 0.5), 0, top).astype(np.int64)
    return sup, q


# ---------------------------------------------------------------------------
# Generic little-endian bit fields (side-band scales)
# ---------------------------------------------------------------------------


def pack_bits(values, width: int) -> bytes:
    """Pack unsigned ``width``-bit fields LSB-first into bytes."""
    v = np.asarray(values, dtype=np.int64).reshape(-1)
    if v.size == 0:
        return b""
    if v.min() < 0 or v.max() >= 1 << width:
        raise EncodingError(f"value does not fit in {width} bits")
    bits = (v[:, None] >> np.arange(width)) & 1
    return np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little").tobytes()


def unpack_bits(data: bytes, width: int, count: int) -> np.ndarray:
    need = -(-count * width // 8)
    if len(data) < need:
        raise EncodingError(f"need {need} bytes for {count} fields, got {len(data)}")
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    raw = np.frombuffer(bytes(data[:need]), dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="little")[: count * width].reshape(count, width)
    return (bits.astype(np.int64) << np.arange(width)).sum(axis=1)


def pack_cluster_scales(q_scales) -> bytes:
    """Two 4-bit scales per byte: group ``2k`` low nibble, ``2k+1`` high."""
    return pack_bits(q_scales, 4)


def unpack_cluster_scales(data: bytes, count: int) -> np.ndarray:
    raw = np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int64)
    if len(raw) * 2 < count:
        raise EncodingError(f"{len(raw)} bytes cannot hold {count} scales")
    layout = layout_for(Family.BPW206)
    out = np.empty(count, dtype=np.int64)
    # per-group shift selects the nibble, as the dequant kernel does
    for k, shift in enumerate(layout.scale_shifts):
        out[k::2] = (raw[: len(out[k::2])] >> shift) & layout.scale_mask
    return out


# ---------------------------------------------------------------------------
# Groups
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedGroup:
    """Serialized codes of one group.

    ``side_scale`` is set when the scale does not live inside ``payload``.
    """

    family: Family
    payload: bytes
    side_scale: int | None = None


def _dtype(family) -> np.dtype:
    return np.dtype("<u2") if unit_bytes(family) == 2 else np.dtype("u1")


def pack_group(codes, q_scale: int, family, embedded: bool = True) -> PackedGroup:
    """Serialize one group's storage units and its quantized scale.

    Args:
        codes: storage units of the group; for ``2.06`` the cluster indices.
        q_scale: quantized group scale.
        embedded: store the scale in the redundant low bits of the last unit
            (the ``g = 1 mod N`` layouts). Ignored for the clustered family.

    Raises:
        EncodingError: if a unit or the scale overflows its field, or the
            redundant bits of the last unit are not clear.
    """
    family = Family.parse(family)
    layout = layout_for(family)
    units = np.asarray(codes, dtype=np.int64).reshape(-1).copy()
    if units.size and (units.min() < 0 or units.max() >= 1 << layout.word_bits):
        raise EncodingError(f"code does not fit a {layout.word_bits}-bit unit")
    q_scale = int(q_scale)
    if not 0 <= q_scale <= layout.scale_mask:
        raise EncodingError(f"scale {q_scale} overflows {layout.scale_bits} bits")
    if embedded and not layout.uses_cluster:
        if units.size == 0:
            raise EncodingError("cannot embed a scale in an empty group")
        if units[-1] & layout.scale_mask:
            raise EncodingError("redundant bits of the last code are not clear")
        units[-1] |= q_scale
        return PackedGroup(family, units.astype(_dtype(family)).tobytes())
    return PackedGroup(family, units.astype(_dtype(family)).tobytes(), q_scale)


def unpack_group(packed: PackedGroup):
    """Inverse of :func:`pack_group`: returns ``(codes, q_scale)``."""
    layout = layout_for(packed.family)
    units = np.frombuffer(packed.payload, dtype=_dtype(packed.family)).astype(np.int64)
    if packed.side_scale is not None:
        return units, int(packed.side_scale)
    q_scale = int(units[-1] & layout.scale_mask)
    units[-1] &= ~layout.scale_mask
    return units, q_scale


def pack_units(units: np.ndarray, q_scales: np.ndarray, family, embedded: bool):
    """Vectorized :func:`pack_group` over ``(n_groups, n_units)``.

    Returns:
        (code_bytes, scale_bytes): scale bytes are empty for embedded layouts.
    """
    family = Family.parse(family)
    layout = layout_for(family)
    units = np.asarray(units, dtype=np.int64).copy()
    q = np.asarray(q_scales, dtype=np.int64)
    if units.size and (units.min() < 0 or units.max() >= 1 << layout.word_bits):
        raise EncodingError(f"code does not fit a {layout.word_bits}-bit unit")
    if q.size and (q.min() < 0 or q.max() > layout.scale_mask):
        raise EncodingError(f"scale overflows {layout.scale_bits} bits")
    if embedded and not layout.uses_cluster:
        if units.size and np.any(units[:, -1] & layout.scale_mask):
            raise EncodingError("redundant bits of the last code are not clear")
        if units.size:
            units[:, -1] |= q
        return units.astype(_dtype(family)).tobytes(), b""
    return units.astype(_dtype(family)).tobytes(), pack_bits(q, layout.scale_bits)
