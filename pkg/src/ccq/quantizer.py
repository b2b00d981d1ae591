"""Group-wise convolutional code quantization.

Weights are split into contiguous groups of ``g`` values along the input
dimension. Each group gets one scale; its values are cut into sub-vectors of
``N`` weights and every sub-vector is replaced by the code whose decoded
states, centred on the zero point and multiplied by the scale, are closest in
squared error. Scales are then refit in closed form and the search repeated.

The search walks the state trellis backwards (a Viterbi pass) instead of
scoring all ``2**T`` codes; it returns the same argmin, and ties go to the
smallest code index because the code index orders paths lexicographically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding import (
    CONFIG_206,
    EncodingConfig,
    Family,
    HybridSchedule,
    decode_states,
    family_encoding,
)
from .errors import ConfigurationError, ShapeError
from .packing import quantize_scales, scale_bits_for

DEFAULT_GROUP_SIZE = 64
DEFAULT_ROUNDS = 2
CLUSTER_LEVELS = 256

_CHUNK_GROUPS = 8192


def zero_point(L: int) -> int:
    return 1 << (L - 1)


# ---------------------------------------------------------------------------
# Group layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Sub-vectors of a group handled by one configuration.

    Attributes:
        config: code configuration for these sub-vectors
        positions: (n, N) weight index inside the group, -1 for padding
        units: (n,) storage unit (code word) index of each sub-vector
        offsets: (n,) bit offset of the code inside its storage unit
    """

    config: EncodingConfig
    positions: np.ndarray
    units: np.ndarray
    offsets: np.ndarray


@dataclass(frozen=True)
class GroupLayout:
    family: Family
    group_size: int
    weights_per_unit: int
    n_units: int
    embedded_scale: bool
    segments: tuple[Segment, ...]

    @property
    def L(self) -> int:
        return self.segments[0].config.L

    @property
    def zero_point(self) -> int:
        return zero_point(self.L)


def group_layout(family, group_size: int) -> GroupLayout:
    """Map the weights of one group onto code words for ``family``.

    Raises:
        ConfigurationError: if ``group_size`` is not congruent to 0 or 1
            modulo the weights per storage unit, or if a clustered family
            is asked for the 1 (mod N) layout, which has no redundant bits.
    """
    family = Family.parse(family)
    enc = family_encoding(family)
    g = int(group_size)
    if g < 1:
        raise ConfigurationError(f"group size must be positive, got {g}")
    if isinstance(enc, HybridSchedule):
        parts = list(enc.parts)
        offsets = enc.part_offsets()
    else:
        parts = [enc]
        offsets = [0]
    per_unit = sum(p.N for p in parts)
    rem = g % per_unit
    if per_unit > 1 and rem not in (0, 1):
        raise ConfigurationError(
            f"group size {g} is {rem} mod {per_unit}; only 0 or 1 are supported"
        )
    if family is Family.BPW206 and rem != 0:
        raise ConfigurationError(
            f"clustered family needs group size divisible by {per_unit}, got {g}"
        )
    n_units = -(-g // per_unit)
    embedded = rem == 1 and per_unit > 1

    by_config: dict[EncodingConfig, tuple[list, list, list]] = {}
    for u in range(n_units):
        start = u * per_unit
        for part, off in zip(parts, offsets):
            pos = [start + j if start + j < g else -1 for j in range(part.N)]
            start += part.N
            acc = by_config.setdefault(part, ([], [], []))
            acc[0].append(pos)
            acc[1].append(u)
            acc[2].append(off)
    segments = tuple(
        Segment(cfg, np.array(p, dtype=np.int64), np.array(u, dtype=np.int64),
                np.array(o, dtype=np.int64))
        for cfg, (p, u, o) in by_config.items()
    )
    return GroupLayout(family, g, per_unit, n_units, embedded, segments)


# ---------------------------------------------------------------------------
# Scalar pieces
# ---------------------------------------------------------------------------


def init_group_scale(group, L: int) -> float:
    """Symmetric starting scale ``max|w| / (2**(L-1) - 1)``."""
    group = np.asarray(group, dtype=np.float64)
    if group.size == 0:
        raise ShapeError("group must be non-empty")
    return float(np.abs(group).max() / ((1 << (L - 1)) - 1))


def _init_scales(groups: np.ndarray, L: int) -> np.ndarray:
    return np.abs(groups).max(axis=-1) / ((1 << (L - 1)) - 1)


def optimize_scale(group, centered_codes, prior: float = 0.0) -> float:
    """Least-squares scale for fixed codes: ``sum(w*q) / sum(q*q)``.

    ``prior`` is returned unchanged when every centred code is zero.
    """
    w = np.asarray(group, dtype=np.float64)
    q = np.asarray(centered_codes, dtype=np.float64)
    if w.shape != q.shape:
        raise ShapeError(f"group shape {w.shape} != codes shape {q.shape}")
    den = float(np.dot(q, q))
    if den == 0.0:
        return float(prior)
    return float(np.dot(w, q) / den)


def _optimize_scales(groups, centered, mask, prior):
    q = centered * mask
    den = np.einsum("ij,ij->i", q, q)
    num = np.einsum("ij,ij->i", groups, q)
    out = prior.copy()
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    # unsigned scale codes downstream; a negative fit is never better than 0
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# Code search
# ---------------------------------------------------------------------------


def search_codes_batch(vectors, scales, zp: int, config: EncodingConfig,
                       weights=None) -> np.ndarray:
    """Best code for each row of ``vectors`` (shape ``(B, N)``).

    ``weights`` (same shape, 0 or 1) drops padding positions from the error.
    """
    v = np.asarray(vectors, dtype=np.float64)
    B, N = v.shape
    if N != config.N:
        raise ShapeError(f"sub-vectors have {N} values, {config} needs {config.N}")
    L, S = config.L, config.S
    s = np.asarray(scales, dtype=np.float64).reshape(B, 1, 1)
    levels = (np.arange(1 << L, dtype=np.float64) - zp)[None, None, :]
    err = (v[:, :, None] - levels * s) ** 2
    if weights is not None:
        err *= np.asarray(weights, dtype=np.float64)[:, :, None]

    keep = (1 << (L - S)) - 1
    carry = np.arange(1 << L) & keep
    cost = [None] * N
    cost[N - 1] = err[:, N - 1, :]
    for j in range(N - 2, -1, -1):
        nxt = cost[j + 1].reshape(B, keep + 1, 1 << S).min(axis=2)
        cost[j] = err[:, j, :] + nxt[:, carry]

    state = np.argmin(cost[0], axis=1)
    code = state.astype(np.int64)
    fresh = np.arange(1 << S)
    for j in range(1, N):
        idx = ((state & keep) << S)[:, None] + fresh[None, :]
        t = np.argmin(np.take_along_axis(cost[j], idx, axis=1), axis=1)
        state = ((state & keep) << S) + t
        code = (code << S) | t
    return code


def search_codes(subvector, scale: float, zero_point: int,
                 config: EncodingConfig) -> int:
    """Code minimising ``sum((v - (states - zp) * scale)**2)``; lowest wins ties."""
    v = np.asarray(subvector, dtype=np.float64).reshape(1, -1)
    return int(search_codes_batch(v, [scale], zero_point, config)[0])


# ---------------------------------------------------------------------------
# Group-level machinery (batched over many groups)
# ---------------------------------------------------------------------------


def _gather(groups: np.ndarray, seg: Segment):
    """Sub-vectors (G, n, N) and their padding mask for one segment."""
    pos = seg.positions
    safe = np.where(pos < 0, 0, pos)
    vec = groups[:, safe]
    mask = np.broadcast_to((pos >= 0).astype(np.float64), vec.shape)
    return np.where(pos >= 0, vec, 0.0), mask


def _search_groups(groups, scales, layout: GroupLayout):
    """Segment codes for every group: list of (G, n_seg) arrays."""
    G = len(groups)
    out = []
    for seg in layout.segments:
        vec, mask = _gather(groups, seg)
        n = seg.positions.shape[0]
        codes = search_codes_batch(
            vec.reshape(G * n, -1), np.repeat(scales, n), layout.zero_point,
            seg.config, mask.reshape(G * n, -1),
        )
        out.append(codes.reshape(G, n))
    return out


def _states_to_groups(seg_codes, layout: GroupLayout, G: int) -> np.ndarray:
    """Decoded states laid back onto group positions, (G, g); padding dropped."""
    states = np.zeros((G, layout.group_size), dtype=np.int64)
    for seg, codes in zip(layout.segments, seg_codes):
        dec = decode_states(codes, seg.config)
        pos = seg.positions
        valid = pos >= 0
        states[:, pos[valid]] = dec[:, valid]
    return states


def _group_error(groups, states, scales, zp):
    recon = (states - zp) * scales[:, None]
    return ((groups - recon) ** 2).sum(axis=1)


def _refine(groups, layout: GroupLayout, rounds: int):
    """Search, then alternate scale refit and re-search, keeping the best."""
    zp = layout.zero_point
    G = len(groups)
    scales = _init_scales(groups, layout.L)
    codes = _search_groups(groups, scales, layout)
    states = _states_to_groups(codes, layout, G)
    best = _group_error(groups, states, scales, zp)
    ones = np.ones_like(groups)
    for _ in range(rounds):
        new_scales = _optimize_scales(groups, (states - zp).astype(np.float64),
                                      ones, scales)
        new_codes = _search_groups(groups, new_scales, layout)
        new_states = _states_to_groups(new_codes, layout, G)
        err = _group_error(groups, new_states, new_scales, zp)
        better = err <= best
        scales = np.where(better, new_scales, scales)
        states = np.where(better[:, None], new_states, states)
        codes = [np.where(better[:, None], n, c) for n, c in zip(new_codes, codes)]
        best = np.minimum(err, best)
    return codes, scales


def _assemble_units(seg_codes, layout: GroupLayout, G: int) -> np.ndarray:
    units = np.zeros((G, layout.n_units), dtype=np.int64)
    for seg, codes in zip(layout.segments, seg_codes):
        units[:, seg.units] |= codes << seg.offsets
    return units


def _split_units(units, layout: GroupLayout):
    out = []
    for seg in layout.segments:
        mask = (1 << seg.config.total_bits) - 1
        out.append((units[:, seg.units] >> seg.offsets) & mask)
    return out


def quantize_group(group, family=Family.BPW275, rounds: int = DEFAULT_ROUNDS):
    """Quantize one group with a full-precision scale.

    Returns:
        (codes, scale): the storage-unit codes of the group (partial last
        unit with its redundant bits cleared) and the fitted scale.
    """
    group = np.asarray(group, dtype=np.float64).reshape(1, -1)
    layout = group_layout(family, group.shape[1])
    seg_codes, scales = _refine(group, layout, rounds)
    units = _assemble_units(seg_codes, layout, 1)
    return units[0], float(scales[0])


def group_reconstruction(units, scale: float, family, group_size: int) -> np.ndarray:
    """Float32 reconstruction of one group from its storage-unit codes."""
    layout = group_layout(family, group_size)
    units = np.asarray(units, dtype=np.int64).reshape(1, -1)
    states = _states_to_groups(_split_units(units, layout), layout, 1)
    return _dequant(states, np.array([scale], dtype=np.float32), layout.zero_point)[0]


def _dequant(states, scales32, zp) -> np.ndarray:
    return (states - zp).astype(np.float32) * scales32.astype(np.float32)[:, None]


# ---------------------------------------------------------------------------
# Code cluster
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterParams:
    """Per-channel affine map from 8-bit cluster indices back to codes."""

    code_scale: np.float32
    code_zero_point: np.float32

    def reconstruct(self, q) -> np.ndarray:
        return cluster_codes_from_indices(q, self.code_scale, self.code_zero_point)


def cluster_codes_from_indices(q, alpha, beta) -> np.ndarray:
    """``round(q * alpha + beta)`` in float64 from the stored float32 params."""
    q = np.asarray(q, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float32).astype(np.float64)
    b = np.asarray(beta, dtype=np.float32).astype(np.float64)
    return np.floor(q * a + b + 0.5).astype(np.int64)


def cluster_params(channel_codes, T: int) -> ClusterParams:
    codes = np.asarray(channel_codes, dtype=np.int64)
    lo, hi = int(codes.min()), int(codes.max())
    if hi == lo:
        return ClusterParams(np.float32(1.0), np.float32(lo))
    alpha = np.float32((hi - lo) / (CLUSTER_LEVELS - 1))
    params = ClusterParams(alpha, np.float32(lo))
    top = int(params.reconstruct(CLUSTER_LEVELS - 1))
    if top >= 1 << T:
        # float32 rounding of alpha pushed the top index past the code space
        params = ClusterParams(np.nextafter(alpha, np.float32(0)), np.float32(lo))
    return params


def naive_cluster_indices(channel_codes, params: ClusterParams) -> np.ndarray:
    c = np.asarray(channel_codes, dtype=np.float64)
    a = float(params.code_scale)
    b = float(params.code_zero_point)
    q = np.floor((c - b) / a + 0.5)
    return np.clip(q, 0, CLUSTER_LEVELS - 1).astype(np.int64)


def _cluster_search(vectors, scales, candidate_states, zp):
    """Index of the best candidate per sub-vector; lowest index on ties.

    vectors: (n, N); scales: (n,); candidate_states: (K, N)
    """
    levels = (candidate_states - zp).astype(np.float64)
    recon = levels[None, :, :] * scales[:, None, None]
    err = ((vectors[:, None, :] - recon) ** 2).sum(axis=2)
    return np.argmin(err, axis=1)


def cluster_channel(channel_codes, T: int, subvectors=None, scales=None,
                    zp: int | None = None, config: EncodingConfig = CONFIG_206):
    """Compress a channel's ``T``-bit codes to 8-bit cluster indices.

    Without ``subvectors`` the indices are the plain affine rounding of the
    codes. With the channel's sub-vectors (and their group scales) each index
    is re-chosen among the 256 codes the channel can reconstruct, which is
    what keeps the error bounded: neighbouring code integers decode to
    unrelated state sequences, so rounding in code space alone is lossy.

    Returns:
        (ClusterParams, indices) with ``indices`` as uint8.
    """
    codes = np.asarray(channel_codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= 1 << T):
        raise ConfigurationError(f"codes must lie in [0, 2**{T})")
    params = cluster_params(codes, T)
    if subvectors is None:
        return params, naive_cluster_indices(codes, params).astype(np.uint8)
    if zp is None:
        zp = zero_point(config.L)
    cand = params.reconstruct(np.arange(CLUSTER_LEVELS))
    cand_states = decode_states(cand, config)
    vec = np.asarray(subvectors, dtype=np.float64).reshape(len(codes), config.N)
    sc = np.asarray(scales, dtype=np.float64).reshape(len(codes))
    q = _cluster_search(vec, sc, cand_states, zp)
    return params, q.astype(np.uint8)


# ---------------------------------------------------------------------------
# Tensor level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantizerOptions:
    family: Family = Family.BPW275
    group_size: int = DEFAULT_GROUP_SIZE
    refinement_rounds: int = DEFAULT_ROUNDS

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family.parse(self.family))
        if self.refinement_rounds < 0:
            raise ConfigurationError("refinement_rounds must be >= 0")
        group_layout(self.family, self.group_size)


@dataclass
class QuantizedTensor:
    """Logical result of quantizing a ``(d_o, d_i)`` matrix.

    Attributes:
        shape: (d_o, d_i)
        family: code family
        group_size: weights per group
        codes: (n_groups, units) storage-unit codes; for the clustered family
            these are the 15-bit codes the cluster indices reconstruct to.
            Redundant bits of a partial last unit are zero here; the scale is
            only inserted when packing.
        q_scales: (n_groups,) quantized group scales
        super_scales: (d_o,) float32 per-channel super scale
        cluster_alpha, cluster_beta: (d_o,) float32, clustered family only
        clustered_codes: (n_groups, units) uint8, clustered family only
        group_errors: squared error of each group, when the source is known
    """

    shape: tuple[int, int]
    family: Family
    group_size: int
    codes: np.ndarray
    q_scales: np.ndarray
    super_scales: np.ndarray
    cluster_alpha: np.ndarray | None = None
    cluster_beta: np.ndarray | None = None
    clustered_codes: np.ndarray | None = None
    group_errors: np.ndarray | None = field(default=None, compare=False)

    @property
    def n_groups(self) -> int:
        return len(self.codes)

    @property
    def groups_per_row(self) -> int:
        return self.shape[1] // self.group_size if self.shape[1] else 0

    @property
    def layout(self) -> GroupLayout:
        return group_layout(self.family, self.group_size)

    @property
    def scale_bits(self) -> int:
        return scale_bits_for(self.family)

    @property
    def group_scales(self) -> np.ndarray:
        """Dequantized group scales ``q_scale * super_scale`` (float32)."""
        sup = np.repeat(self.super_scales.astype(np.float32), self.groups_per_row)
        return self.q_scales.astype(np.float32) * sup

    def reconstruct(self) -> np.ndarray:
        """Quantizer-side float32 reconstruction of the full matrix."""
        d_o, d_i = self.shape
        if self.n_groups == 0:
            return np.zeros(self.shape, dtype=np.float32)
        layout = self.layout
        units = self.codes.astype(np.int64)
        if self.family is Family.BPW206:
            rows = np.repeat(np.arange(d_o), self.groups_per_row)
            units = cluster_codes_from_indices(
                self.clustered_codes, self.cluster_alpha[rows][:, None],
                self.cluster_beta[rows][:, None])
        states = _states_to_groups(_split_units(units, layout), layout, self.n_groups)
        out = _dequant(states, self.group_scales, layout.zero_point)
        return out.reshape(d_o, d_i)


def _check_shape(matrix: np.ndarray, g: int):
    if matrix.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {matrix.shape}")
    d_o, d_i = matrix.shape
    if d_i % g:
        raise ShapeError(
            f"input dimension {d_i} is not divisible by group size {g}; "
            "groups never straddle output channels and are not padded"
        )


def quantize_tensor(matrix, options: QuantizerOptions | None = None, **kwargs
                    ) -> QuantizedTensor:
    """Quantize a ``(d_o, d_i)`` matrix group by group.

    Groups run contiguously along the input dimension of each output channel.
    After the full-precision scale search, scales are compressed per channel
    and the codes are searched once more against the compressed scales so
    that stored codes and stored scales agree.
    """
    if options is None:
        options = QuantizerOptions(**kwargs)
    w = np.asarray(matrix, dtype=np.float32)
    g = options.group_size
    _check_shape(w, g)
    layout = group_layout(options.family, g)
    d_o, d_i = w.shape
    per_row = d_i // g
    groups = w.reshape(-1, g).astype(np.float64)
    G = len(groups)

    units = np.zeros((G, layout.n_units), dtype=np.int64)
    scales = np.zeros(G, dtype=np.float64)
    for lo in range(0, G, _CHUNK_GROUPS):
        hi = min(lo + _CHUNK_GROUPS, G)
        seg, sc = _refine(groups[lo:hi], layout, options.refinement_rounds)
        units[lo:hi] = _assemble_units(seg, layout, hi - lo)
        scales[lo:hi] = sc

    bits = scale_bits_for(options.family)
    super_scales = np.zeros(d_o, dtype=np.float32)
    q_scales = np.zeros(G, dtype=np.int64)
    for r in range(d_o):
        sl = slice(r * per_row, (r + 1) * per_row)
        super_scales[r], q_scales[sl] = quantize_scales(scales[sl], bits)
    sup = np.repeat(super_scales, per_row)
    final = (q_scales.astype(np.float32) * sup).astype(np.float64)

    qt = QuantizedTensor(
        shape=(d_o, d_i), family=options.family, group_size=g,
        codes=np.zeros_like(units, dtype=np.uint16),
        q_scales=q_scales.astype(np.uint16), super_scales=super_scales,
    )
    if options.family is Family.BPW206:
        _cluster_tensor(qt, groups, units, final, layout)
    else:
        for lo in range(0, G, _CHUNK_GROUPS):
            hi = min(lo + _CHUNK_GROUPS, G)
            seg = _search_groups(groups[lo:hi], final[lo:hi], layout)
            units[lo:hi] = _assemble_units(seg, layout, hi - lo)
        qt.codes = units.astype(np.uint16)
    recon = qt.reconstruct().reshape(-1, g).astype(np.float64)
    qt.group_errors = ((groups - recon) ** 2).sum(axis=1)
    return qt


def _cluster_tensor(qt: QuantizedTensor, groups, units, scales, layout):
    d_o = qt.shape[0]
    per_row = qt.groups_per_row
    cfg = layout.segments[0].config
    T = cfg.total_bits
    n_units = layout.n_units
    alpha = np.zeros(d_o, dtype=np.float32)
    beta = np.zeros(d_o, dtype=np.float32)
    q_all = np.zeros_like(units)
    vec, _ = _gather(groups, layout.segments[0])
    for r in range(d_o):
        sl = slice(r * per_row, (r + 1) * per_row)
        params, q = cluster_channel(
            units[sl].reshape(-1), T,
            subvectors=vec[sl].reshape(-1, cfg.N),
            scales=np.repeat(scales[sl], n_units),
            zp=layout.zero_point, config=cfg,
        )
        alpha[r], beta[r] = params.code_scale, params.code_zero_point
        q_all[sl] = q.reshape(-1, n_units)
    qt.cluster_alpha = alpha
    qt.cluster_beta = beta
    qt.clustered_codes = q_all.astype(np.uint8)
    rows = np.repeat(np.arange(d_o), per_row)
    qt.codes = cluster_codes_from_indices(
        q_all, alpha[rows][:, None], beta[rows][:, None]).astype(np.uint16)


def rtn_quantize(matrix, bits: int = 2, group_size: int = DEFAULT_GROUP_SIZE
                 ) -> np.ndarray:
    """Round-to-nearest baseline; returns the reconstructed matrix.

    Each group uses ``2**bits`` evenly spaced levels spanning
    ``[-max|w|, max|w|]`` with the scale kept in full precision.
    """
    if bits not in (2, 4):
        raise ConfigurationError(f"RTN baseline supports 2 or 4 bits, got {bits}")
    w = np.asarray(matrix, dtype=np.float64)
    _check_shape(w, group_size)
    groups = w.reshape(-1, group_size)
    amax = np.abs(groups).max(axis=1, keepdims=True)
    step = 2 * amax / ((1 << bits) - 1)
    safe = np.where(step > 0, step, 1.0)
    q = np.clip(np.floor((groups + amax) / safe + 0.5), 0, (1 << bits) - 1)
    recon = q * step - amax
    return recon.reshape(w.shape).astype(np.float32)
