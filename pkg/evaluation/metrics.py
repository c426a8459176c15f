"""
Reconstruction and subspace measures comparing a recovered tensor (or factor)
with the clean reference.

``subspace_angle`` reports the largest principal angle between the spans of
the first ``count`` columns: arccos of the smallest singular value of
V[:, :count]^T U[:, :count].  ``alignment_diag`` keeps the per-vector view,
|v_i^T u_i| for each of those columns.
"""
import logging
from typing import Dict, Optional

import numpy as np

from core.exceptions import NotOrthonormal, OperationContext, RankError, ShapeError, ZeroInput
from core.tensor_core import DenseTensor, matricize

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-6


def _check_same_shape(a: DenseTensor, b: DenseTensor, operation: str):
    if a.shape != b.shape:
        raise ShapeError(
            f"shapes differ: {a.shape} vs {b.shape}",
            OperationContext(operation, shape=a.shape),
        )


def recon_error(y: DenseTensor, y_star: DenseTensor) -> float:
    """||vec(y) - vec(y_star)|| / ||vec(y_star)||."""
    _check_same_shape(y, y_star, "recon_error")
    ref = y_star.norm()
    if ref == 0.0:
        raise ZeroInput("reference tensor is zero", OperationContext("recon_error", shape=y_star.shape))
    return float(np.linalg.norm((y.data - y_star.data).ravel()) / ref)


def singular_value_error(y: DenseTensor, y_star: DenseTensor, mode: int, k_star: int) -> float:
    """Relative l2 error of the leading k_star mode singular values."""
    _check_same_shape(y, y_star, "singular_value_error")
    m = matricize(y, mode).data
    m_star = matricize(y_star, mode).data
    if not 1 <= k_star <= min(m.shape):
        raise RankError(
            f"k_star must be in 1..{min(m.shape)}, got {k_star}",
            OperationContext("singular_value_error", mode=mode, shape=y.shape),
        )
    s = np.linalg.svd(m, compute_uv=False)[:k_star]
    s_star = np.linalg.svd(m_star, compute_uv=False)[:k_star]
    ref = np.linalg.norm(s_star)
    if ref == 0.0:
        raise ZeroInput("reference tensor is zero", OperationContext("singular_value_error", mode=mode))
    return float(np.linalg.norm(s - s_star) / ref)


def _leading_columns(v: np.ndarray, u: np.ndarray, count: int, operation: str):
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if v.ndim != 2 or u.ndim != 2 or v.shape[0] != u.shape[0]:
        raise ShapeError(f"factor shapes {v.shape} and {u.shape} are incompatible", OperationContext(operation))
    if not 1 <= count <= min(v.shape[1], u.shape[1]):
        raise RankError(
            f"count must be in 1..{min(v.shape[1], u.shape[1])}, got {count}",
            OperationContext(operation),
        )
    v, u = v[:, :count], u[:, :count]
    for name, m in (("V", v), ("U", u)):
        err = float(np.max(np.abs(m.T @ m - np.eye(count))))
        if err > ORTHONORMAL_TOL:
            raise NotOrthonormal(
                f"{name} columns deviate from orthonormal by {err:.3g}",
                OperationContext(operation, shape=m.shape),
            )
    return v, u


def subspace_angle(v: np.ndarray, u: np.ndarray, count: int = 5) -> float:
    """Largest principal angle (radians) between the leading column spans."""
    v, u = _leading_columns(v, u, count, "subspace_angle")
    s = np.linalg.svd(v.T @ u, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), 0.0, 1.0)))


def alignment_diag(v: np.ndarray, u: np.ndarray, count: int = 5) -> np.ndarray:
    """|v_i^T u_i| for i = 1..count."""
    v, u = _leading_columns(v, u, count, "alignment_diag")
    return np.clip(np.abs(np.einsum("ij,ij->j", v, u)), 0.0, 1.0)


def mode_singular_vectors(y: DenseTensor, mode: int = 1) -> np.ndarray:
    """Left singular vectors of the mode matricization."""
    U, _, _ = np.linalg.svd(matricize(y, mode).data, full_matrices=False)
    return U


def evaluate(
    estimate: DenseTensor,
    reference: DenseTensor,
    mode: int = 1,
    k_star: Optional[int] = None,
    count: int = 5,
    v: Optional[np.ndarray] = None,
    u: Optional[np.ndarray] = None,
) -> Dict[str, object]:
    """
    All four measures at once. Factors default to the mode singular vectors of
    each tensor; ``k_star`` and ``count`` are clipped to what the tensors allow.
    """
    v = mode_singular_vectors(estimate, mode) if v is None else np.asarray(v, dtype=np.float64)
    u = mode_singular_vectors(reference, mode) if u is None else np.asarray(u, dtype=np.float64)
    limit = min(matricize(reference, mode).data.shape)
    k_star = min(30 if k_star is None else k_star, limit)
    count = min(count, v.shape[1], u.shape[1])
    align = alignment_diag(v, u, count)
    result = {
        "recon_error": recon_error(estimate, reference),
        "singular_value_error": singular_value_error(estimate, reference, mode, k_star),
        "subspace_angle": subspace_angle(v, u, count),
        "alignment_mean": float(np.mean(align)),
        "alignment_diag": align,
    }
    logger.debug("evaluated estimate against reference", extra={"extra": {"recon_error": result["recon_error"]}})
    return result
