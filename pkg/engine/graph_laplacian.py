"""
kNN graphs, combinatorial Laplacians and their low-frequency eigenbases.

Graphs are built on the rows of a matricized tensor: exact brute-force
neighbor search, Gaussian-kernel weights, symmetrization by union (the
larger directed weight wins).  Laplacians are kept sparse; eigenpairs come
from a dense symmetric solver up to ``DENSE_EIG_LIMIT`` vertices and from
shift-invert Lanczos above it.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg
from sklearn.neighbors import NearestNeighbors

from core.exceptions import (
    OperationContext,
    RankError,
    ShapeError,
    TooFewPoints,
    UsageError,
)
from core.tensor_core import DenseTensor, matricize

logger = logging.getLogger(__name__)

DENSE_EIG_LIMIT = 2000
# relative to ||L||_F; eigenvalues below it are the graph's null space
NULL_SPACE_TOL = 1e-12

MatrixLike = Union[np.ndarray, sp.spmatrix]


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected weighted graph on the rows of a point matrix."""
    weights: sp.csr_matrix
    k_nn: int
    kernel_width: float

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class GraphBasis:
    """First k Laplacian eigenpairs, eigenvalues ascending."""
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    k_nn: Optional[int] = None
    kernel_width: Optional[float] = None

    def __post_init__(self):
        vecs = np.asarray(self.eigenvectors, dtype=np.float64)
        vals = np.asarray(self.eigenvalues, dtype=np.float64).ravel()
        if vecs.ndim != 2 or vecs.shape[1] != vals.size:
            raise ShapeError(
                f"eigenvectors {vecs.shape} do not match {vals.size} eigenvalues",
                OperationContext("GraphBasis", shape=vecs.shape),
            )
        object.__setattr__(self, "eigenvectors", vecs)
        object.__setattr__(self, "eigenvalues", vals)

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def k(self) -> int:
        return self.eigenvectors.shape[1]

    def truncate(self, k: int) -> "GraphBasis":
        if not 1 <= k <= self.k:
            raise RankError(f"cannot truncate a {self.k}-column basis to {k}", OperationContext("truncate"))
        return replace(self, eigenvectors=self.eigenvectors[:, :k], eigenvalues=self.eigenvalues[:k])

    def complement(self, k_star: int) -> np.ndarray:
        """Columns k_star+1..k, the high-frequency part of the basis."""
        return self.eigenvectors[:, k_star:]

    def projector(self) -> np.ndarray:
        return self.eigenvectors @ self.eigenvectors.T

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.eigenvectors.T @ self.eigenvectors - np.eye(self.k))))


def knn_graph(points: np.ndarray, k_nn: int, kernel_width: Optional[float] = None) -> WeightedGraph:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"points must be a matrix, got {points.ndim} dims", OperationContext("knn_graph"))
    m = points.shape[0]
    if k_nn < 1:
        raise UsageError(f"k_nn must be >= 1, got {k_nn}", OperationContext("knn_graph"))
    if m <= k_nn:
        raise TooFewPoints(
            f"{m} points cannot each have {k_nn} neighbors",
            OperationContext("knn_graph", shape=points.shape),
        )

    nn = NearestNeighbors(n_neighbors=k_nn, algorithm="brute", metric="euclidean").fit(points)
    # without a query the indexed point is never its own neighbor, duplicates included
    _, idx = nn.kneighbors()

    # exact squared distances; identical for (i, j) and (j, i)
    diff = points[:, None, :] - points[idx]
    sq_dist = np.einsum("ijk,ijk->ij", diff, diff)

    if kernel_width is None:
        sigma = float(np.mean(np.sqrt(sq_dist[:, -1])))
        if sigma <= 0.0:
            sigma = 1.0
    elif kernel_width <= 0:
        raise UsageError(f"kernel_width must be positive, got {kernel_width}", OperationContext("knn_graph"))
    else:
        sigma = float(kernel_width)

    w = np.exp(-sq_dist / sigma ** 2)
    rows = np.repeat(np.arange(m), k_nn)
    directed = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(m, m))
    weights = directed.maximum(directed.T).tocsr()
    weights.sort_indices()
    logger.debug("knn graph: %d vertices, %d edges, sigma=%.4g", m, weights.nnz // 2, sigma)
    return WeightedGraph(weights=weights, k_nn=int(k_nn), kernel_width=sigma)


def combinatorial_laplacian(g: WeightedGraph) -> sp.csr_matrix:
    """L = D - W."""
    W = g.weights
    degrees = np.asarray(W.sum(axis=1)).ravel()
    L = (sp.diags(degrees) - W).tocsr()
    L.sort_indices()
    return L


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude entry positive, argmax picks the lowest index on ties
    pivots = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivots, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def smallest_eigs(L: MatrixLike, k: int, dense_limit: int = DENSE_EIG_LIMIT) -> GraphBasis:
    n = L.shape[0]
    if L.shape != (n, n):
        raise ShapeError(f"Laplacian must be square, got {L.shape}", OperationContext("smallest_eigs"))
    if not 1 <= k <= n:
        raise RankError(f"k must be in 1..{n}, got {k}", OperationContext("smallest_eigs", shape=L.shape))

    if n <= dense_limit or k >= n - 1:
        dense = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=np.float64)
        vals, vecs = scipy.linalg.eigh(dense, subset_by_index=[0, k - 1])
        scale = np.linalg.norm(dense)
        logger.debug("dense eigensolver: n=%d k=%d", n, k)
    else:
        Ls = sp.csc_matrix(L, dtype=np.float64)
        v0 = np.random.default_rng(0).standard_normal(n)
        vals, vecs = scipy.sparse.linalg.eigsh(Ls, k=k, sigma=-1e-6, which="LM", v0=v0, tol=0)
        scale = scipy.sparse.linalg.norm(Ls)
        logger.debug("iterative eigensolver: n=%d k=%d", n, k)

    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    vals = np.where(np.abs(vals) <= NULL_SPACE_TOL * max(scale, 1.0), 0.0, vals)
    vals = np.maximum(vals, 0.0)
    return GraphBasis(eigenvectors=_fix_signs(vecs), eigenvalues=vals)


def cartesian_product_laplacian(L1: MatrixLike, L2: MatrixLike) -> MatrixLike:
    """L1 kron I + I kron L2, sparse when either factor is sparse."""
    n1, n2 = L1.shape[0], L2.shape[0]
    if sp.issparse(L1) or sp.issparse(L2):
        return (sp.kron(L1, sp.identity(n2)) + sp.kron(sp.identity(n1), L2)).tocsr()
    L1 = np.asarray(L1, dtype=np.float64)
    L2 = np.asarray(L2, dtype=np.float64)
    return np.kron(L1, np.eye(n2)) + np.kron(np.eye(n1), L2)


def eigen_gap(basis: GraphBasis, k_star: int) -> float:
    """lambda_{k*} / lambda_{k*+1}; 0 when both vanish."""
    if not 1 <= k_star < basis.k:
        raise RankError(
            f"k_star must be in 1..{basis.k - 1}, got {k_star}",
            OperationContext("eigen_gap"),
        )
    low = basis.eigenvalues[k_star - 1]
    high = basis.eigenvalues[k_star]
    if high == 0.0:
        return 0.0
    return float(low / high)


def basis_from_tensor(
    y: DenseTensor,
    mode: int,
    k: int,
    k_nn: int = 10,
    kernel_width: Optional[float] = None,
) -> GraphBasis:
    """Graph on the rows of the mode-``mode`` matricization, first k eigenpairs."""
    rows = matricize(y, mode).data
    graph = knn_graph(rows, k_nn, kernel_width)
    basis = smallest_eigs(combinatorial_laplacian(graph), k)
    return replace(basis, k_nn=graph.k_nn, kernel_width=graph.kernel_width)


def bases_from_tensor(
    y: DenseTensor,
    ranks,
    k_nn: int = 10,
    kernel_width: Optional[float] = None,
):
    ranks = list(ranks)
    if len(ranks) != y.order:
        raise ShapeError(f"expected {y.order} ranks, got {len(ranks)}", OperationContext("bases_from_tensor"))
    return [basis_from_tensor(y, mu + 1, ranks[mu], k_nn, kernel_width) for mu in range(y.order)]
