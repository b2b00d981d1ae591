"""Reconstruction error and storage accounting."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .container import CcqContainer, measured_bpw_exact
from .errors import ShapeError


@dataclass
class ErrorReport:
    mse: float
    max_abs: float
    rel_frobenius: float
    per_group_error: np.ndarray

    def to_dict(self, with_groups: bool = False) -> dict:
        d = asdict(self)
        d["per_group_error"] = self.per_group_error.tolist() if with_groups else None
        if not with_groups:
            del d["per_group_error"]
        return d


def error_report(original, reconstructed, group_size: int | None = None) -> ErrorReport:
    """Compare a matrix with its reconstruction.

    ``per_group_error`` holds the squared error of each contiguous run of
    ``group_size`` values along the last axis (whole rows when omitted or
    when the row length is not a multiple).
    """
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    sq = diff * diff
    n = a.size
    if n == 0:
        return ErrorReport(0.0, 0.0, 0.0, np.zeros(0))
    width = a.shape[-1] if a.ndim else 1
    g = group_size if group_size and width % group_size == 0 else width
    per_group = sq.reshape(-1, g).sum(axis=1)
    norm = float(np.sqrt((a * a).sum()))
    rel = float(np.sqrt(sq.sum()) / norm) if norm > 0 else 0.0
    return ErrorReport(
        mse=float(sq.sum() / n),
        max_abs=float(np.abs(diff).max()),
        rel_frobenius=rel,
        per_group_error=per_group,
    )


def compression_summary(container: CcqContainer, original_bytes: int | None = None) -> dict:
    """Storage breakdown of a container.

    ``original_bytes`` defaults to the float32 size of the matrix.
    """
    n = container.weight_count
    if original_bytes is None:
        original_bytes = 4 * n
    code_bytes = len(container.sections["codes"])
    scale_bytes = len(container.sections["scales"])
    channel_bytes = sum(len(v) for k, v in container.sections.items()
                        if k not in ("codes", "scales"))
    total = len(container.to_bytes())
    payload_bits = measured_bpw_exact(container) * n
    payload_bytes = float(payload_bits / 8)
    ratio = (lambda x: x / original_bytes if original_bytes else 0.0)
    return {
        "bpw": float(measured_bpw_exact(container)),
        "weights": n,
        "original_bytes": int(original_bytes),
        "payload_bytes": payload_bytes,
        "code_bytes": code_bytes,
        "scale_bytes": scale_bytes,
        "channel_bytes": channel_bytes,
        "header_bytes": total - code_bytes - scale_bytes - channel_bytes,
        "total_bytes": total,
        "payload_ratio": ratio(payload_bytes),
        "total_ratio": ratio(total),
        "saving": 1.0 - ratio(payload_bytes) if original_bytes else 0.0,
    }
