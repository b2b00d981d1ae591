"""Dequantization and fused GEMV straight from packed containers.

Decoding uses only shifts, masks and the per-family constants in
:class:`~ccq.coding.LayoutSpec`; no codebook is ever built here.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .coding import Family, LayoutSpec, layout_for
from .container import CcqContainer, from_tensor
from .errors import CodeDomainError, ShapeError
from .packing import PackedGroup, unpack_bits
from .quantizer import QuantizedTensor, group_layout

BENCH_SHAPES = ((4096, 4096), (4096, 1024), (8192, 8192), (8192, 1024))
BENCH_M = (1, 4)

_BLOCK_ELEMENTS = 1 << 20


@dataclass(frozen=True)
class DequantContext:
    """Per-channel constants a group decode needs besides its packed bytes."""

    layout: LayoutSpec
    group_size: int
    super_scale: np.float32
    code_scale: np.float32 = np.float32(1.0)
    code_zero_point: np.float32 = np.float32(0.0)

    @property
    def zero_point(self) -> int:
        return self.layout.zero_point


def dequant_group_plain(packed: PackedGroup, ctx: DequantContext) -> np.ndarray:
    """Decode one group without code cluster (2.75 and 2.5 families)."""
    lay = ctx.layout
    dt = "<u2" if lay.word_bits == 16 else "u1"
    wq = np.frombuffer(packed.payload, dtype=dt).astype(np.int64)
    p_w = len(lay.weight_shifts)
    s_uint = wq[-1] if packed.side_scale is None else packed.side_scale
    s = np.float32(s_uint & lay.scale_mask) * np.float32(ctx.super_scale)
    idx = np.arange(ctx.group_size)
    q_w = wq[idx // p_w]
    w_uint = (q_w >> np.asarray(lay.weight_shifts)[idx % p_w]) & lay.weight_mask
    return (w_uint - ctx.zero_point).astype(np.float32) * s


def dequant_group_cluster(packed: PackedGroup, s_q: int, ctx: DequantContext,
                          s_shift: int = 0) -> np.ndarray:
    """Decode one clustered group (2.06 family).

    ``s_q`` is the byte holding the group's 4-bit scale, ``s_shift`` selects
    the nibble.
    """
    lay = ctx.layout
    s = np.float32((int(s_q) >> s_shift) & lay.scale_mask) * np.float32(ctx.super_scale)
    wq = np.frombuffer(packed.payload, dtype="u1").astype(np.float64)
    p_w = len(lay.weight_shifts)
    idx = np.arange(ctx.group_size)
    wide = _widen(wq, ctx.code_scale, ctx.code_zero_point)
    if wide.size and wide.max() >= 1 << (lay.weight_shifts[0] + lay.weight_mask.bit_length()):
        raise CodeDomainError("cluster index reconstructs past the code space")
    w_uint = (wide[idx // p_w] >> np.asarray(lay.weight_shifts)[idx % p_w]) & lay.weight_mask
    return (w_uint - ctx.zero_point).astype(np.float32) * s


def _widen(q, alpha, beta) -> np.ndarray:
    """8-bit cluster index back to its code: ``round(q * alpha + beta)``."""
    a = np.asarray(alpha, dtype=np.float32).astype(np.float64)
    b = np.asarray(beta, dtype=np.float32).astype(np.float64)
    return np.floor(np.asarray(q, dtype=np.float64) * a + b + 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# Tensor-level decode
# ---------------------------------------------------------------------------


class _Decoder:
    """Decodes row blocks of a container into centred states and scales."""

    def __init__(self, c: CcqContainer):
        self.c = c
        self.layout = layout_for(c.family)
        self.d_o, self.d_i = c.shape
        self.g = c.group_size
        self.per_row = self.d_i // self.g if self.g else 0
        self.units = c.units()
        self.super_scales = c.channel_array("super_scales")
        lay = self.layout
        idx = np.arange(self.g)
        p_w = len(lay.weight_shifts)
        self.word_of = idx // p_w
        self.shift_of = np.asarray(lay.weight_shifts, dtype=np.int64)[idx % p_w]
        if lay.uses_cluster:
            self.alpha = c.channel_array("cluster_alpha")
            self.beta = c.channel_array("cluster_beta")
            self.scale_bytes = np.frombuffer(c.sections["scales"], dtype="u1")
        elif not c.embedded_scale:
            self.side = unpack_bits(c.sections["scales"], c.scale_bits, c.n_groups)

    def rows_per_block(self) -> int:
        return max(1, _BLOCK_ELEMENTS // max(self.d_i, 1))

    def block(self, r0: int, r1: int):
        """Centred states ``(r1-r0, per_row, g)`` as int64 and float32 scales."""
        lay = self.layout
        g0, g1 = r0 * self.per_row, r1 * self.per_row
        wq = self.units[g0:g1].astype(np.int64)
        sup = np.repeat(self.super_scales[r0:r1], self.per_row)
        if lay.uses_cluster:
            grp = np.arange(g0, g1)
            s_q = self.scale_bytes[grp // 2].astype(np.int64)
            s_shift = np.asarray(lay.scale_shifts)[grp % 2]
            s_uint = (s_q >> s_shift) & lay.scale_mask
            rows = np.repeat(np.arange(r0, r1), self.per_row)
            wq = _widen(wq, self.alpha[rows][:, None], self.beta[rows][:, None])
        elif self.c.embedded_scale:
            s_uint = wq[:, -1] & lay.scale_mask
        else:
            s_uint = self.side[g0:g1]
        s = s_uint.astype(np.float32) * sup.astype(np.float32)
        w_uint = (wq[:, self.word_of] >> self.shift_of) & lay.weight_mask
        centred = w_uint - lay.zero_point
        return centred.reshape(r1 - r0, self.per_row, self.g), s.reshape(r1 - r0, self.per_row)


def dequantize_tensor(container: CcqContainer) -> np.ndarray:
    """Full float32 matrix from a container."""
    dec = _Decoder(container)
    out = np.empty(container.shape, dtype=np.float32)
    step = dec.rows_per_block()
    for r0 in range(0, dec.d_o, step):
        r1 = min(r0 + step, dec.d_o)
        centred, s = dec.block(r0, r1)
        out[r0:r1] = (centred.astype(np.float32) * s[:, :, None]).reshape(r1 - r0, dec.d_i)
    return out


def gemv(container: CcqContainer, x) -> np.ndarray:
    """``W @ x`` decoded on the fly, one row block at a time.

    ``x`` is ``(d_i,)`` or ``(M, d_i)``; the result is ``(d_o,)`` or
    ``(M, d_o)``. Integer states are dotted with ``x`` per group first and
    the group scale applied once per group; accumulation is float64.
    """
    d_o, d_i = container.shape
    xa = np.asarray(x, dtype=np.float32)
    vec = xa.ndim == 1
    xs = xa[None, :] if vec else xa
    if xs.ndim != 2 or xs.shape[1] != d_i:
        raise ShapeError(f"x has shape {xa.shape}, expected (..., {d_i})")
    M = xs.shape[0]
    y = np.zeros((d_o, M), dtype=np.float64)
    dec = _Decoder(container)
    if dec.per_row:
        xg = xs.astype(np.float64).T.reshape(dec.per_row, dec.g, M)
        step = dec.rows_per_block()
        for r0 in range(0, d_o, step):
            r1 = min(r0 + step, d_o)
            centred, s = dec.block(r0, r1)
            partial = np.einsum("rgi,gim->rgm", centred.astype(np.float64), xg)
            y[r0:r1] = np.einsum("rgm,rg->rm", partial, s.astype(np.float64))
    out = y.T.astype(np.float32)
    return out[0] if vec else out


def packed_weight_bytes(container: CcqContainer) -> int:
    """Bytes a fused kernel must read: codes, group scales, channel reals."""
    return sum(len(v) for v in container.sections.values())


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


def random_tensor(d_o: int, d_i: int, family=Family.BPW206, group_size: int = 64,
                  seed: int = 0) -> QuantizedTensor:
    """A valid quantized tensor with random codes and scales.

    Kernel timing and correctness do not depend on how the codes were found,
    and searching codes for the largest benchmark shapes would dominate the
    run time.
    """
    family = Family.parse(family)
    rng = np.random.default_rng(seed)
    layout = group_layout(family, group_size)
    lay = layout_for(family)
    G = d_o * d_i // group_size
    units = rng.integers(0, 1 << lay.word_bits, size=(G, layout.n_units), dtype=np.int64)
    if layout.embedded_scale:
        units[:, -1] &= ~lay.scale_mask
    q_scales = rng.integers(1, lay.scale_mask + 1, size=G, dtype=np.int64)
    sup = rng.uniform(0.5, 1.5, size=d_o).astype(np.float32) / np.float32(lay.scale_mask)
    qt = QuantizedTensor(
        shape=(d_o, d_i), family=family, group_size=group_size,
        codes=units.astype(np.uint16), q_scales=q_scales.astype(np.uint16),
        super_scales=sup,
    )
    if family is Family.BPW206:
        T = 15
        alpha = rng.uniform(1.0, ((1 << T) - 1) / 255.0, size=d_o).astype(np.float32)
        room = (1 << T) - 1 - 255.0 * alpha.astype(np.float64)
        beta = np.floor(rng.uniform(0, 1, size=d_o) * room).astype(np.float32)
        qt.cluster_alpha, qt.cluster_beta = alpha, beta
        qt.clustered_codes = (units & 0xFF).astype(np.uint8)
        rows = np.repeat(np.arange(d_o), d_i // group_size)
        qt.codes = _widen(qt.clustered_codes, alpha[rows][:, None],
                          beta[rows][:, None]).astype(np.uint16)
    return qt


def _median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


BENCH_FIELDS = ("shape", "M", "variant", "median_ms", "bytes_read")


def bench_gemv(shapes=BENCH_SHAPES, m_sizes=BENCH_M, family=Family.BPW206,
               group_size: int = 64, repeats: int = 3, seed: int = 0) -> list[dict]:
    """Time dense, dequantize-then-dense and fused GEMV on each shape.

    ``bytes_read`` counts weight-side reads only: the dense float32 matrix,
    the packed container plus the materialized matrix, or the packed
    container alone.
    """
    rows = []
    rng = np.random.default_rng(seed)
    for d_o, d_i in shapes:
        container = from_tensor(random_tensor(d_o, d_i, family, group_size, seed))
        dense = dequantize_tensor(container)
        packed = packed_weight_bytes(container)
        dense_bytes = dense.nbytes
        for M in m_sizes:
            x = rng.standard_normal((M, d_i)).astype(np.float32)
            variants = {
                "dense_f32": (lambda: x @ dense.T, dense_bytes),
                "dequant_dense": (lambda: x @ dequantize_tensor(container).T,
                                  packed + dense_bytes),
                "ccq_fused": (lambda: gemv(container, x), packed),
            }
            for name, (fn, nbytes) in variants.items():
                rows.append({
                    "shape": f"{d_o}x{d_i}", "M": M, "variant": name,
                    "median_ms": round(_median_ms(fn, repeats), 4),
                    "bytes_read": int(nbytes),
                })
    return rows
