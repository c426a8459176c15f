"""
Graph spectral covariance and the two low-rank-on-graphs diagnostics.

For a matricization Y_mu with covariance C = Y_mu Y_mu^T (unnormalized) and a
graph eigenbasis P, the GSC is Gamma = P^T C P.  Stationarity measures how
much of its energy sits on the diagonal, energy concentration how much sits
in the leading k x k block.  When only a partial basis is available the
total energy is taken from ||C||_F, which equals ||Gamma||_F for a full
orthonormal basis.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from core.exceptions import OperationContext, RankError, ShapeError, ZeroInput
from core.tensor_core import DenseTensor, ModeMatrix, matricize, multi_ttm
from engine.graph_laplacian import GraphBasis

logger = logging.getLogger(__name__)

FULL_BASIS_LIMIT = 500


@dataclass(frozen=True, eq=False)
class GscMatrix:
    mode: int
    gamma: np.ndarray
    basis_size_used: int
    # ||C||_F; only set when the basis is partial
    covariance_norm: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64))

    @property
    def total_energy(self) -> float:
        """Squared Frobenius norm of the full GSC."""
        if self.covariance_norm is None:
            return float(np.sum(self.gamma ** 2))
        return self.covariance_norm ** 2


@dataclass(frozen=True, eq=False)
class GctDecomposition:
    core: DenseTensor
    bases: List[GraphBasis]
    residual_norm: float

    def __post_init__(self):
        ranks = tuple(b.k for b in self.bases)
        if ranks != self.core.shape:
            raise ShapeError(
                f"core shape {self.core.shape} does not match basis sizes {ranks}",
                OperationContext("GctDecomposition", shape=self.core.shape),
            )

    @property
    def shape(self):
        return tuple(b.n for b in self.bases)

    def reconstruct(self) -> DenseTensor:
        return DenseTensor(multi_ttm(self.core.data, [b.eigenvectors for b in self.bases]))

    @property
    def compression_ratio(self) -> float:
        """Numbers stored (core + bases) over numbers in the full tensor."""
        stored = self.core.size + sum(b.n * b.k for b in self.bases)
        return stored / float(np.prod(self.shape))


def _basis_matrix(basis) -> np.ndarray:
    return basis.eigenvectors if isinstance(basis, GraphBasis) else np.asarray(basis, dtype=np.float64)


def gsc(y_mode: ModeMatrix, basis) -> GscMatrix:
    """Gamma = P^T (Y_mu Y_mu^T) P for a GraphBasis or a raw eigenvector matrix."""
    P = _basis_matrix(basis)
    Y = y_mode.data
    if P.shape[0] != Y.shape[0]:
        raise ShapeError(
            f"basis has {P.shape[0]} vertices, matricization has {Y.shape[0]} rows",
            OperationContext("gsc", mode=y_mode.mode, shape=Y.shape),
        )
    B = P.T @ Y
    gamma = B @ B.T
    gamma = 0.5 * (gamma + gamma.T)
    covariance_norm = None
    if P.shape[1] < P.shape[0]:
        covariance_norm = float(np.linalg.norm(Y @ Y.T))
    return GscMatrix(
        mode=y_mode.mode,
        gamma=gamma,
        basis_size_used=P.shape[1],
        covariance_norm=covariance_norm,
    )


def stationarity_ratio(g: GscMatrix) -> float:
    """||diag(Gamma)||^2 / ||Gamma||^2."""
    total = g.total_energy
    if total == 0.0:
        raise ZeroInput("GSC is identically zero", OperationContext("stationarity_ratio", mode=g.mode))
    return float(np.sum(np.diag(g.gamma) ** 2) / total)


def energy_concentration(g: GscMatrix, k: int) -> float:
    """||Gamma[:k, :k]||^2 / ||Gamma||^2."""
    if not 1 <= k <= g.basis_size_used:
        raise RankError(
            f"k must be in 1..{g.basis_size_used}, got {k}",
            OperationContext("energy_concentration", mode=g.mode),
        )
    total = g.total_energy
    if total == 0.0:
        raise ZeroInput("GSC is identically zero", OperationContext("energy_concentration", mode=g.mode))
    return float(min(np.sum(g.gamma[:k, :k] ** 2) / total, 1.0))


def noise_floor_concentration(x_clean: DenseTensor, x_noise: DenseTensor, mode: int) -> float:
    """Predicted concentration ||X_mu||^4 / (||X_mu||^4 + ||Xbar_mu||^4) for a known signal/noise split."""
    a = x_clean.norm() ** 4
    b = x_noise.norm() ** 4
    if a + b == 0.0:
        raise ZeroInput("both parts are zero", OperationContext("noise_floor_concentration", mode=mode))
    return float(a / (a + b))


def project_gct(y: DenseTensor, bases: Sequence[GraphBasis]) -> GctDecomposition:
    """Core X = Y x_mu P_mu^T for all modes, with the orthogonal-projection residual."""
    if len(bases) != y.order:
        raise ShapeError(
            f"expected {y.order} bases, got {len(bases)}",
            OperationContext("project_gct", shape=y.shape),
        )
    for mu, b in enumerate(bases):
        if b.n != y.shape[mu]:
            raise ShapeError(
                f"basis for mode {mu + 1} has {b.n} vertices, tensor has {y.shape[mu]}",
                OperationContext("project_gct", mode=mu + 1, shape=y.shape),
            )
    mats = [b.eigenvectors for b in bases]
    core = multi_ttm(y.data, mats, transpose=True)
    recon = multi_ttm(core, mats)
    residual = float(np.linalg.norm((y.data - recon).ravel()))
    return GctDecomposition(core=DenseTensor(core), bases=list(bases), residual_norm=residual)


def mode_singular_values(y: DenseTensor, mode: int) -> np.ndarray:
    return np.linalg.svd(matricize(y, mode).data, compute_uv=False)


def diagnose(y: DenseTensor, bases: Sequence[GraphBasis], k_grid: Sequence[int]) -> pd.DataFrame:
    """One row per mode: stationarity ratio and energy concentration at every k of the grid (k <= basis size)."""
    if len(bases) != y.order:
        raise ShapeError(f"expected {y.order} bases, got {len(bases)}", OperationContext("diagnose"))
    rows = []
    for mu, basis in enumerate(bases):
        ym = matricize(y, mu + 1)
        if basis.n != ym.rows:
            raise ShapeError(
                f"basis for mode {mu + 1} has {basis.n} vertices, tensor has {ym.rows}",
                OperationContext("diagnose", mode=mu + 1, shape=y.shape),
            )
        g = gsc(ym, basis)
        row = {"mode": mu + 1, "stationarity_ratio": stationarity_ratio(g)}
        for k in k_grid:
            row[f"energy_concentration@{k}"] = energy_concentration(g, int(k))
        rows.append(row)
        logger.info("diagnosed mode %d", mu + 1, extra={"extra": {"stationarity": row["stationarity_ratio"]}})
    return pd.DataFrame(rows)
