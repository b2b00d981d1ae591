"""The ``.ccq`` container: one quantized matrix per file.

Layout (all integers little-endian)::

    0   4s   magic  b"CCQ\\x00"
    4   u16  format version
    6   u16  reserved, zero
    8   u32  header length H
    12  H    UTF-8 JSON header
    ..  pad to 8 bytes, then each section 8-byte aligned

The header records shape, family, group size, scale layout and, for every
section, its absolute offset, length and CRC-32. Sections:

``codes``         packed storage units, groups in row-major order
``scales``        side-band group scales (bit fields, LSB first); may be empty
``super_scales``  float32 per output channel
``cluster_alpha`` float32 per output channel (2.06 only)
``cluster_beta``  float32 per output channel (2.06 only)
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .coding import Family, family_encoding, layout_for
from .errors import FormatError
from .packing import pack_units, unit_bytes, unpack_bits
from .quantizer import QuantizedTensor, cluster_codes_from_indices, group_layout

MAGIC = b"CCQ\x00"
VERSION = 1
_PREFIX = struct.Struct("<4sHHI")
_ALIGN = 8

SECTION_ORDER = ("codes", "scales", "super_scales", "cluster_alpha", "cluster_beta")


def _pad(n: int) -> int:
    return (-n) % _ALIGN


@dataclass
class CcqContainer:
    """Parsed container: header dict plus raw section bytes."""

    header: dict
    sections: dict[str, bytes] = field(repr=False)
    header_bytes: int = 0
    table: dict = field(default_factory=dict, repr=False)

    @property
    def family(self) -> Family:
        return Family.parse(self.header["family"])

    @property
    def shape(self) -> tuple[int, int]:
        d_o, d_i = self.header["shape"]
        return int(d_o), int(d_i)

    @property
    def group_size(self) -> int:
        return int(self.header["group_size"])

    @property
    def n_groups(self) -> int:
        return int(self.header["n_groups"])

    @property
    def units_per_group(self) -> int:
        return int(self.header["units_per_group"])

    @property
    def embedded_scale(self) -> bool:
        return bool(self.header["embedded_scale"])

    @property
    def scale_bits(self) -> int:
        return int(self.header["scale_bits"])

    @property
    def weight_count(self) -> int:
        d_o, d_i = self.shape
        return d_o * d_i

    def units(self) -> np.ndarray:
        """Storage units as ``(n_groups, units_per_group)`` integers."""
        dt = np.dtype("<u2") if unit_bytes(self.family) == 2 else np.dtype("u1")
        raw = np.frombuffer(self.sections["codes"], dtype=dt)
        return raw.reshape(self.n_groups, self.units_per_group)

    def side_scales(self) -> np.ndarray | None:
        if self.embedded_scale:
            return None
        return unpack_bits(self.sections["scales"], self.scale_bits, self.n_groups)

    def channel_array(self, name: str) -> np.ndarray:
        return np.frombuffer(self.sections[name], dtype="<f4")

    def to_bytes(self) -> bytes:
        return _serialize(self.header, self.sections)


def measured_bpw_exact(container: CcqContainer) -> Fraction:
    """Code plus group-scale bits per weight, per-channel reals excluded."""
    n = container.weight_count
    if n == 0:
        return Fraction(0)
    bits = len(container.sections["codes"]) * 8
    if not container.embedded_scale:
        bits += container.n_groups * container.scale_bits
    return Fraction(bits, n)


def measured_bpw(container: CcqContainer) -> float:
    return float(measured_bpw_exact(container))


def from_tensor(qt: QuantizedTensor, meta: dict | None = None) -> CcqContainer:
    layout = group_layout(qt.family, qt.group_size)
    units = qt.clustered_codes if qt.family is Family.BPW206 else qt.codes
    units = np.asarray(units).reshape(qt.n_groups, layout.n_units)
    codes, scales = pack_units(units, qt.q_scales, qt.family, layout.embedded_scale)
    sections = {
        "codes": codes,
        "scales": scales,
        "super_scales": np.asarray(qt.super_scales, dtype="<f4").tobytes(),
    }
    if qt.family is Family.BPW206:
        sections["cluster_alpha"] = np.asarray(qt.cluster_alpha, dtype="<f4").tobytes()
        sections["cluster_beta"] = np.asarray(qt.cluster_beta, dtype="<f4").tobytes()
    enc = family_encoding(qt.family)
    spec = layout_for(qt.family)
    header = {
        "shape": list(qt.shape),
        "family": qt.family.value,
        "encoding": [str(p) for p in getattr(enc, "parts", (enc,))],
        "group_size": qt.group_size,
        "n_groups": qt.n_groups,
        "units_per_group": layout.n_units,
        "unit_bytes": unit_bytes(qt.family),
        "embedded_scale": layout.embedded_scale,
        "scale_bits": qt.scale_bits,
        "zero_point": layout.zero_point,
        "weight_shifts": list(spec.weight_shifts),
        "weight_mask": spec.weight_mask,
        "scale_mask": spec.scale_mask,
        "uses_cluster": spec.uses_cluster,
    }
    if meta:
        header["meta"] = dict(meta)
    blob = _serialize(header, sections)
    return parse(blob)


def to_tensor(container: CcqContainer) -> QuantizedTensor:
    family = container.family
    d_o, _ = container.shape
    units = container.units().astype(np.int64)
    layout = layout_for(family)
    if container.embedded_scale:
        q_scales = units[:, -1] & layout.scale_mask if units.size else np.zeros(0, np.int64)
        units = units.copy()
        if units.size:
            units[:, -1] &= ~layout.scale_mask
    else:
        q_scales = container.side_scales()
    qt = QuantizedTensor(
        shape=container.shape, family=family, group_size=container.group_size,
        codes=units.astype(np.uint16), q_scales=q_scales.astype(np.uint16),
        super_scales=container.channel_array("super_scales").copy(),
    )
    if family is Family.BPW206:
        qt.cluster_alpha = container.channel_array("cluster_alpha").copy()
        qt.cluster_beta = container.channel_array("cluster_beta").copy()
        qt.clustered_codes = units.astype(np.uint8)
        rows = np.repeat(np.arange(d_o), qt.groups_per_row)
        qt.codes = cluster_codes_from_indices(
            units, qt.cluster_alpha[rows][:, None], qt.cluster_beta[rows][:, None]
        ).astype(np.uint16)
    return qt


def _serialize(header: dict, sections: dict[str, bytes]) -> bytes:
    names = [n for n in SECTION_ORDER if n in sections]
    # offsets depend on the header length, which depends on the offsets
    table = {n: {"offset": 0, "length": len(sections[n]),
                 "crc32": zlib.crc32(sections[n])} for n in names}
    while True:
        head = dict(header, sections=table)
        text = json.dumps(head, sort_keys=True).encode()
        pos = _PREFIX.size + len(text)
        pos += _pad(pos)
        new = {}
        for n in names:
            new[n] = dict(table[n], offset=pos)
            pos += len(sections[n]) + _pad(len(sections[n]))
        if new == table:
            break
        table = new
    out = bytearray(_PREFIX.pack(MAGIC, VERSION, 0, len(text)))
    out += text
    out += b"\0" * _pad(len(out))
    for n in names:
        assert len(out) == table[n]["offset"]
        out += sections[n]
        out += b"\0" * _pad(len(out))
    return bytes(out)


def parse(blob: bytes, check_crc: bool = True) -> CcqContainer:
    """Parse container bytes.

    Raises:
        FormatError: bad magic or version, truncated data, inconsistent
            section sizes, or (with ``check_crc``) a checksum mismatch.
    """
    if len(blob) < _PREFIX.size:
        raise FormatError("file too short for container prefix", len(blob))
    magic, version, _, hlen = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    end = _PREFIX.size + hlen
    if end > len(blob):
        raise FormatError("truncated header", len(blob))
    try:
        header = json.loads(blob[_PREFIX.size:end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", _PREFIX.size) from None
    table = header.pop("sections", None)
    if not isinstance(table, dict):
        raise FormatError("header has no section table", _PREFIX.size)
    sections = {}
    for name, info in table.items():
        off, length = int(info["offset"]), int(info["length"])
        if off < end or off + length > len(blob):
            raise FormatError(f"section {name!r} runs past end of file", off)
        data = blob[off:off + length]
        if check_crc and zlib.crc32(data) != info.get("crc32"):
            raise FormatError(f"checksum mismatch in section {name!r}", off)
        sections[name] = data
    container = CcqContainer(header=header, sections=sections, header_bytes=end,
                             table=table)
    _check_sizes(container, table)
    return container


def _check_sizes(c: CcqContainer, table: dict) -> None:
    try:
        family = c.family
        expected = group_layout(family, c.group_size)
        d_o, d_i = c.shape
    except Exception as exc:
        raise FormatError(f"invalid header: {exc}", _PREFIX.size) from None
    if d_i % c.group_size or c.n_groups != d_o * d_i // c.group_size:
        raise FormatError("group count does not match shape", _PREFIX.size)
    if c.units_per_group != expected.n_units or c.embedded_scale != expected.embedded_scale:
        raise FormatError("unit layout does not match family", _PREFIX.size)
    need = {"codes": c.n_groups * c.units_per_group * unit_bytes(family),
            "super_scales": 4 * d_o,
            "scales": 0 if c.embedded_scale else -(-c.n_groups * c.scale_bits // 8)}
    if family is Family.BPW206:
        need["cluster_alpha"] = need["cluster_beta"] = 4 * d_o
    for name, size in need.items():
        if name not in c.sections:
            raise FormatError(f"missing section {name!r}", _PREFIX.size)
        if len(c.sections[name]) != size:
            raise FormatError(
                f"section {name!r} has {len(c.sections[name])} bytes, expected {size}",
                int(table[name]["offset"]),
            )


def save_container(container: CcqContainer, path) -> None:
    Path(path).write_bytes(container.to_bytes())


def load_container(path, check_crc: bool = True) -> CcqContainer:
    return parse(Path(path).read_bytes(), check_crc=check_crc)


def write_container(qt: QuantizedTensor, path, meta: dict | None = None) -> CcqContainer:
    container = from_tensor(qt, meta)
    save_container(container, path)
    return container


def read_container(path) -> QuantizedTensor:
    return to_tensor(load_container(path))


def expected_bpw(family, group_size: int) -> Fraction:
    """Closed-form bits per weight of a family at a group size.

    With ``g = 1 (mod N)`` the scale hides in the last code word and the
    cost is the code words alone; otherwise the scale bits are added.
    """
    family = Family.parse(family)
    layout = group_layout(family, group_size)
    word = unit_bytes(family) * 8
    bits = word * layout.n_units
    if not layout.embedded_scale:
        bits += layout_for(family).scale_bits
    return Fraction(bits, group_size)
