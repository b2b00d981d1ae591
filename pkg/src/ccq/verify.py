"""Integrity checks over a stored container."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .container import (
    CcqContainer,
    expected_bpw,
    from_tensor,
    measured_bpw_exact,
    to_tensor,
)
from .kernels import dequantize_tensor
from .quantizer import DEFAULT_ROUNDS, QuantizerOptions, quantize_tensor


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


def verify_container(container: CcqContainer, original=None) -> list[Check]:
    """Run every check; never raises on a failed check.

    Args:
        container: ideally parsed without checksum enforcement, so that a
            corrupted payload is reported here instead of failing the load.
        original: source matrix; enables the quantizer/kernel agreement check.
    """
    checks = []
    if container.table:
        bad = [n for n, info in container.table.items()
               if zlib.crc32(container.sections[n]) != info.get("crc32")]
        checks.append(Check("checksums", not bad,
                            f"mismatch in {', '.join(bad)}" if bad else ""))

    qt = to_tensor(container)
    again = from_tensor(qt)
    same = all(again.sections[n] == container.sections[n] for n in container.sections)
    checks.append(Check("round_trip", same, "" if same else "repacking changed bytes"))

    got = measured_bpw_exact(container)
    want = expected_bpw(container.family, container.group_size)
    ok = got == want or container.weight_count == 0
    checks.append(Check("bpw_exact", ok, f"measured {float(got)}, expected {float(want)}"))

    if qt.clustered_codes is not None and qt.n_groups:
        top = int(qt.codes.max())
        ok = top < 1 << 15
        checks.append(Check("cluster_range", ok, f"max reconstructed code {top}"))

    recon = dequantize_tensor(container)
    finite = bool(np.isfinite(recon).all())
    checks.append(Check("finite", finite, "" if finite else "non-finite weights"))

    if original is not None:
        checks.extend(_agreement(container, recon, np.asarray(original, dtype=np.float32)))
    return checks


def _agreement(container: CcqContainer, recon, original) -> list[Check]:
    if original.shape != container.shape:
        return [Check("shape", False, f"original {original.shape} vs {container.shape}")]
    rounds = int(container.header.get("meta", {}).get("rounds", DEFAULT_ROUNDS))
    qt = quantize_tensor(original, QuantizerOptions(
        family=container.family, group_size=container.group_size,
        refinement_rounds=rounds))
    fresh = from_tensor(qt)
    same = all(fresh.sections[n] == container.sections[n] for n in fresh.sections)
    g = container.group_size
    kernel_err = ((original.reshape(-1, g).astype(np.float64)
                   - recon.reshape(-1, g).astype(np.float64)) ** 2).sum(axis=1)
    agree = bool(np.array_equal(kernel_err, qt.group_errors)) and same
    worst = float(np.max(np.abs(kernel_err - qt.group_errors))) if kernel_err.size else 0.0
    return [
        Check("requantize_identical", same, "" if same else "stored codes differ from a fresh run"),
        Check("group_error_agreement", agree, f"max per-group difference {worst:g}"),
    ]
