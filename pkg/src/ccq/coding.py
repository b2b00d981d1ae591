"""Convolutional code configurations, codebooks and bit-shift decoding.

A configuration ``(L, N, S)`` describes ``N`` consecutive ``L``-bit states in
which each state after the first contributes only ``S`` fresh bits; the
remaining ``L - S`` bits are shared with its predecessor. The whole sequence
fits in ``T = L + (N - 1) * S`` bits.

Bit order inside a code word is MSB-first with overlapping windows: state
``j`` occupies bits ``[T - 1 - j*S, T - L - j*S]``. This is the only ordering
that yields the published shift lists (``[4, 2, 0]`` for ``(4, 3, 2)`` etc.),
but it is inferred rather than stated, so treat it as a format decision.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import CodeDomainError, ConfigurationError, TransitionError

MAX_TOTAL_BITS = 16


@dataclass(frozen=True)
class EncodingConfig:
    """The ``(L, N, S)`` triplet of a convolutional code.

    Attributes:
        L: bits per state
        N: states per code
        S: fresh (transition) bits per state after the first
    """

    L: int
    N: int
    S: int

    def __post_init__(self) -> None:
        if not 1 <= self.S <= self.L <= 8:
            raise ConfigurationError(f"need 1 <= S <= L <= 8, got {self}")
        if self.N < 1:
            raise ConfigurationError(f"need N >= 1, got {self}")
        if self.total_bits > MAX_TOTAL_BITS:
            raise ConfigurationError(
                f"{self} needs {self.total_bits} bits, more than {MAX_TOTAL_BITS}"
            )

    @property
    def total_bits(self) -> int:
        return self.L + (self.N - 1) * self.S

    @property
    def state_mask(self) -> int:
        return (1 << self.L) - 1

    @property
    def shifts(self) -> list[int]:
        """Right-shift that brings each state to the low bits of the code."""
        T = self.total_bits
        return [T - self.L - j * self.S for j in range(self.N)]

    def __str__(self) -> str:
        return f"({self.L},{self.N},{self.S})"


@dataclass(frozen=True)
class HybridSchedule:
    """Several configurations packed side by side into one storage word.

    The first part occupies the most significant bits of the word.
    """

    parts: tuple[EncodingConfig, ...]
    word_bits: int

    def __post_init__(self) -> None:
        if not self.parts:
            raise ConfigurationError("hybrid schedule needs at least one part")
        used = sum(p.total_bits for p in self.parts)
        if used != self.word_bits:
            raise ConfigurationError(
                f"parts use {used} bits but the word has {self.word_bits}"
            )
        if len({p.L for p in self.parts}) != 1:
            raise ConfigurationError("all hybrid parts must share the same L")

    @property
    def L(self) -> int:
        return self.parts[0].L

    @property
    def states_per_word(self) -> int:
        return sum(p.N for p in self.parts)

    def part_offsets(self) -> list[int]:
        """Bit offset of each part's least significant bit within the word."""
        offsets = []
        top = self.word_bits
        for part in self.parts:
            top -= part.total_bits
            offsets.append(top)
        return offsets

    @property
    def shifts(self) -> list[int]:
        out: list[int] = []
        for part, offset in zip(self.parts, self.part_offsets()):
            out.extend(offset + s for s in part.shifts)
        return out


def total_bits(config: EncodingConfig) -> int:
    """Number of bits used by one code of ``config``."""
    return config.L + (config.N - 1) * config.S


@dataclass
class Codebook:
    """Materialized table of every decodable state sequence.

    Only tests and oracles build this; the codec itself decodes by shifting.
    """

    config: EncodingConfig
    rows: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.rows)


def build_codebook(config: EncodingConfig) -> Codebook:
    """Enumerate all state sequences reachable under the transition rule.

    Walks the state graph: every first state, then every choice of ``S``
    transition bits at each step. The code index is the first state followed
    by the transition bits, so row ``k`` is the sequence stored as code ``k``.
    """
    if config.total_bits > MAX_TOTAL_BITS:
        raise ConfigurationError(f"{config} is too large to enumerate")
    L, N, S = config.L, config.N, config.S
    keep = (1 << (L - S)) - 1
    paths = [([s0], s0) for s0 in range(1 << L)]
    for _ in range(1, N):
        grown = []
        for states, code in paths:
            carry = states[-1] & keep
            for t in range(1 << S):
                grown.append((states + [(carry << S) | t], (code << S) | t))
        paths = grown
    rows = np.zeros((1 << config.total_bits, N), dtype=np.int64)
    for states, code in paths:
        rows[code] = states
    return Codebook(config=config, rows=rows)


def decode_states(code, config: EncodingConfig) -> np.ndarray:
    """Recover the ``N`` states of ``code`` with shifts and masks only.

    ``code`` may be a scalar or an integer array; the states axis is appended
    last.
    """
    codes = np.asarray(code)
    if codes.dtype.kind not in "iu":
        raise CodeDomainError(f"codes must be integers, got dtype {codes.dtype}")
    if codes.size and (codes.min() < 0 or codes.max() >= 1 << config.total_bits):
        raise CodeDomainError(f"code out of range for {config}")
    codes = codes.astype(np.int64)
    shifts = np.asarray(config.shifts, dtype=np.int64)
    return (codes[..., None] >> shifts) & config.state_mask


def states_to_code(states, config: EncodingConfig) -> int:
    """Inverse of :func:`decode_states` for a single state sequence."""
    states = [int(s) for s in states]
    if len(states) != config.N:
        raise CodeDomainError(f"expected {config.N} states, got {len(states)}")
    if any(s < 0 or s > config.state_mask for s in states):
        raise CodeDomainError(f"state out of range for L={config.L}")
    overlap = config.L - config.S
    keep = (1 << overlap) - 1
    code = states[0]
    for prev, cur in zip(states, states[1:]):
        if (cur >> config.S) != (prev & keep):
            raise TransitionError(
                f"not a valid transition sequence: {prev} -> {cur} under {config}"
            )
        code = (code << config.S) | (cur & ((1 << config.S) - 1))
    return code


class Family(str, enum.Enum):
    """The three supported code families, named by their bits per weight."""

    BPW275 = "2.75"
    BPW25 = "2.5"
    BPW206 = "2.06"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().removeprefix("bpw")
        aliases = {"2.75": cls.BPW275, "275": cls.BPW275, "2.5": cls.BPW25,
                   "25": cls.BPW25, "2.50": cls.BPW25, "2.06": cls.BPW206,
                   "206": cls.BPW206, "2.0625": cls.BPW206}
        try:
            return aliases[text]
        except KeyError:
            raise ConfigurationError(
                f"unknown family {value!r}; expected one of 2.75, 2.5, 2.06"
            ) from None


CONFIG_275 = EncodingConfig(4, 3, 2)
CONFIG_206 = EncodingConfig(6, 4, 3)
HYBRID_25 = HybridSchedule(parts=(EncodingConfig(3, 3, 2), EncodingConfig(3, 4, 2)),
                           word_bits=16)


def family_encoding(family) -> EncodingConfig | HybridSchedule:
    family = Family.parse(family)
    return {Family.BPW275: CONFIG_275, Family.BPW25: HYBRID_25,
            Family.BPW206: CONFIG_206}[family]


@dataclass(frozen=True)
class LayoutSpec:
    """Masks and shift schedule used by the dequantization kernels."""

    family: Family
    weight_shifts: tuple[int, ...]
    weight_mask: int
    scale_mask: int
    scale_shifts: tuple[int, ...]
    uses_cluster: bool
    word_bits: int

    @property
    def states_per_word(self) -> int:
        return len(self.weight_shifts)

    @property
    def zero_point(self) -> int:
        return 1 << (self.weight_mask.bit_length() - 1)

    @property
    def scale_bits(self) -> int:
        return self.scale_mask.bit_length()


def layout_for(target) -> LayoutSpec:
    """Dequantization layout for a family, configuration or hybrid schedule."""
    if isinstance(target, (EncodingConfig, HybridSchedule)):
        matches = [f for f in Family if family_encoding(f) == target]
        if not matches:
            raise ConfigurationError(f"no dequantization layout for {target}")
        family = matches[0]
    else:
        family = Family.parse(target)
    enc = family_encoding(family)
    if family is Family.BPW275:
        return LayoutSpec(family, tuple(enc.shifts), 0xF, 0xF, (), False, 8)
    if family is Family.BPW25:
        return LayoutSpec(family, tuple(enc.shifts), 0x7, 0x1FFF, (), False, 16)
    # clustered codes are 8-bit; widening recovers the 16-bit code word
    return LayoutSpec(family, tuple(enc.shifts), 0x3F, 0xF, (0, 4), True, 8)
