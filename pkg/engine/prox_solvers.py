"""
Graph core tensor pursuit, graph multilinear SVD, tensor robust PCA on graphs,
the classical MLSVD baseline and the proximal operators they share.

Weighted nuclear norms pair the i-th largest singular value of a mode
matricization with the i-th smallest kernelized Laplacian eigenvalue, so
high-frequency directions are penalized hardest. With ascending weights the
norm is not convex; weighted SVT is still its exact proximal map.

GCTP on matrices has a closed form. Everything else runs on one engine that
majorizes each weighted norm at the current core by a uniform nuclear norm
minus a linear term, minimizes that convex surrogate with parallel proximal
splitting (d + 1 terms, equal weights 1 / (d + 1), relaxation beta), and moves
to the surrogate minimizer only when it lowers the true objective.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import SolverOptions
from core.exceptions import NumericError, OperationContext, RankError, ShapeError, UsageError
from core.tensor_core import DenseTensor, multi_ttm, refold, unfold
from engine.graph_laplacian import GraphBasis, _fix_signs
from engine.spectral_analysis import project_gct

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Per-singular-value thresholds gamma * lambda**alpha, ascending."""
    values: np.ndarray
    alpha: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise NumericError("weights must be finite and nonnegative", OperationContext("WeightVector"))
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    def scaled(self, factor: float) -> "WeightVector":
        return WeightVector(self.values * factor, self.alpha, self.gamma * factor)


@dataclass(frozen=True, eq=False)
class SvdFactors:
    factors: List[np.ndarray]
    core: DenseTensor

    def reconstruct(self) -> DenseTensor:
        return DenseTensor(multi_ttm(self.core.data, self.factors))


@dataclass
class SolverReport:
    """
    ``objective_trace`` holds the true objective after every round, starting
    from ``initial_objective``. ``start_returned`` is set when no round improved
    on the starting point, so the returned core is that point unchanged.
    """
    iterations: int = 0
    objective_trace: List[float] = field(default_factory=list)
    converged: bool = False
    tolerance_used: float = 0.0
    wall_time: float = 0.0
    iteration_times: List[float] = field(default_factory=list)
    initial_objective: float = float("nan")
    inner_iterations: List[int] = field(default_factory=list)
    step_times: List[float] = field(default_factory=list)
    start_returned: bool = False

    def to_frame(self) -> pd.DataFrame:
        n = len(self.objective_trace)
        times = self.iteration_times if len(self.iteration_times) == n else [np.nan] * n
        return pd.DataFrame({
            "iteration": np.arange(1, n + 1),
            "objective": self.objective_trace,
            "time": np.cumsum(times) if n else [],
        })

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else self.initial_objective

    @property
    def per_iteration_time(self) -> float:
        """Median time of one splitting step, or of one round when no steps were timed."""
        times = self.step_times or self.iteration_times
        if not times:
            return float("nan")
        return float(np.median(times))


def weights_from_basis(basis: GraphBasis, gamma: float, alpha: float = 1.0) -> WeightVector:
    if alpha < 1:
        raise UsageError(f"alpha must be >= 1, got {alpha}", OperationContext("weights_from_basis"))
    return WeightVector(gamma * basis.eigenvalues ** alpha, alpha=alpha, gamma=gamma)


def _threshold_values(thresholds, r: int, operation: str) -> np.ndarray:
    tau = thresholds.values if isinstance(thresholds, WeightVector) else np.asarray(thresholds, dtype=np.float64).ravel()
    if tau.size < r:
        raise ShapeError(f"{tau.size} thresholds for {r} singular values", OperationContext(operation))
    return tau[:r]


def weighted_svt(m: np.ndarray, thresholds) -> np.ndarray:
    """A diag(max(sigma_i - tau_i, 0)) B^T for m = A diag(sigma) B^T, sigma descending."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries", OperationContext("weighted_svt", shape=m.shape))
    U, s, Vt = np.linalg.svd(m, full_matrices=False)
    tau = _threshold_values(thresholds, s.size, "weighted_svt")
    shrunk = np.maximum(s - tau, 0.0)
    keep = shrunk > 0
    return (U[:, keep] * shrunk[keep]) @ Vt[keep]


def weighted_nuclear_norm(m: np.ndarray, weights) -> float:
    s = np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)
    return float(np.dot(s, _threshold_values(weights, s.size, "weighted_nuclear_norm")))


def _regularizer(core: np.ndarray, weights: Sequence[WeightVector]) -> float:
    return sum(weighted_nuclear_norm(unfold(core, mu), w) for mu, w in enumerate(weights))


def gctp_objective(core: np.ndarray, x_hat: np.ndarray, weights: Sequence[WeightVector]) -> float:
    """||X_hat - X||_F^2 + sum_mu ||X_mu||_{*w_mu}."""
    return float(np.sum((x_hat - core) ** 2)) + _regularizer(core, weights)


def trpcag_objective(core: np.ndarray, y: np.ndarray, mats: Sequence[np.ndarray], weights: Sequence[WeightVector]) -> float:
    """||P_1 X_1 P_{-1}^T - Y_1||_1 + sum_mu ||X_mu||_{*w_mu}."""
    return float(np.sum(np.abs(multi_ttm(core, mats) - y))) + _regularizer(core, weights)


def _basis_mats(bases) -> List[np.ndarray]:
    return [b.eigenvectors if isinstance(b, GraphBasis) else np.asarray(b, dtype=np.float64) for b in bases]


def _check_bases(y: DenseTensor, mats: Sequence[np.ndarray], operation: str):
    if len(mats) != y.order:
        raise ShapeError(f"expected {y.order} bases, got {len(mats)}", OperationContext(operation, shape=y.shape))
    for mu, P in enumerate(mats):
        if P.shape[0] != y.shape[mu]:
            raise ShapeError(
                f"basis for mode {mu + 1} has {P.shape[0]} rows, tensor has {y.shape[mu]}",
                OperationContext(operation, mode=mu + 1, shape=y.shape),
            )


def _check_weights(weights: Sequence[WeightVector], core_shape, operation: str):
    if len(weights) != len(core_shape):
        raise ShapeError(f"expected {len(core_shape)} weight vectors, got {len(weights)}", OperationContext(operation))
    for mu, w in enumerate(weights):
        r = min(core_shape[mu], int(np.prod(core_shape)) // core_shape[mu])
        if len(w) < r:
            raise ShapeError(
                f"mode {mu + 1} needs {r} weights, got {len(w)}",
                OperationContext(operation, mode=mu + 1, shape=core_shape),
            )


def _soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def _l1_step(core: np.ndarray, y: np.ndarray, mats: Sequence[np.ndarray], step: float) -> np.ndarray:
    residual = multi_ttm(core, mats) - y
    return core + multi_ttm(_soft_threshold(residual, step) - residual, mats, transpose=True)


def prox_l1_dataterm(x_core: DenseTensor, y: DenseTensor, bases, step: float) -> DenseTensor:
    """
    X + P^T (Omega(P X - Y, step) - (P X - Y)) applied mode-wise.

    Exact proximal map of step * ||P X - Y||_1 only when every basis is square
    orthogonal. ``trpcag`` does not use it.
    """
    mats = _basis_mats(bases)
    _check_bases(y, mats, "prox_l1_dataterm")
    if tuple(P.shape[1] for P in mats) != x_core.shape:
        raise ShapeError(
            f"core shape {x_core.shape} does not match basis sizes",
            OperationContext("prox_l1_dataterm", shape=x_core.shape),
        )
    if step <= 0:
        raise NumericError(f"step must be positive, got {step}", OperationContext("prox_l1_dataterm"))
    return DenseTensor(_l1_step(x_core.data, y.data, mats, step))


def _mode_svt(z: np.ndarray, axis: int, tau: np.ndarray) -> np.ndarray:
    return refold(weighted_svt(unfold(z, axis), tau), axis, z.shape)


def _identity(x: np.ndarray) -> np.ndarray:
    return x


def _tangents(core: np.ndarray, weights: Sequence[WeightVector]) -> List[Tuple[float, np.ndarray]]:
    """
    Per mode, the largest active weight w_max and G = A diag(w_max - w) B^T
    for core_mu = A diag(sigma) B^T.

    w_max ||X_mu||_* - <G, X> majorizes ||X_mu||_{*w} and touches it at ``core``.
    """
    out = []
    for mu, w in enumerate(weights):
        U, s, Vt = np.linalg.svd(unfold(core, mu), full_matrices=False)
        tau = w.values[:s.size]
        top = float(tau[-1])
        out.append((top, refold((U * (top - tau)) @ Vt, mu, core.shape)))
    return out


def _surrogate_prox(z: np.ndarray, axis: int, top: float, tangent: np.ndarray, c: float) -> np.ndarray:
    shifted = z + c * tangent
    if top == 0.0:
        return shifted
    return _mode_svt(shifted, axis, np.full(z.shape[axis], c * top))


def _majorized_splitting(
    start: np.ndarray,
    data_prox: Callable[[np.ndarray, float], np.ndarray],
    lift: Callable[[np.ndarray], np.ndarray],
    restrict: Callable[[np.ndarray], np.ndarray],
    weights: Sequence[WeightVector],
    objective: Callable[[np.ndarray], float],
    opts: SolverOptions,
    name: str,
) -> Tuple[np.ndarray, SolverReport]:
    """
    Minimize data + sum_mu ||X_mu||_{*w_mu} starting from ``start``.

    ``data_prox`` acts where the data term lives: on the core, or on the full
    tensor with ``lift`` / ``restrict`` applying the orthonormal bases. The
    splitting state carries over between rounds; only the tangents move.
    """
    opts.validate()
    d = start.ndim
    omega = 1.0 / (d + 1)
    c = opts.step_size(max(w.gamma for w in weights)) / omega
    beta = opts.beta
    tiny = np.finfo(float).tiny

    started = time.perf_counter()
    report = SolverReport(tolerance_used=opts.tol)
    core = start.copy()
    current = objective(core)
    report.initial_objective = current
    tangents = _tangents(core, weights)
    accepted = False

    z_data = lift(core)
    z_modes = [core.copy() for _ in range(d)]
    x = z_data.copy()
    x_core = core.copy()
    pool = Parallel(n_jobs=opts.n_jobs, prefer="threads") if opts.n_jobs != 1 else None

    for j in range(1, opts.max_iters + 1):
        tic = time.perf_counter()
        settled = False
        steps = 0
        for _ in range(opts.inner_iters):
            step_tic = time.perf_counter()
            if pool is None:
                p_data = data_prox(z_data, c)
                p_modes = [_surrogate_prox(z_modes[mu], mu, *tangents[mu], c) for mu in range(d)]
            else:
                jobs = [delayed(data_prox)(z_data, c)]
                jobs += [delayed(_surrogate_prox)(z_modes[mu], mu, *tangents[mu], c) for mu in range(d)]
                p_data, *p_modes = pool(jobs)
            mode_sum = sum(p_modes)
            p_bar = omega * (p_data + lift(mode_sum))
            p_bar_core = omega * (restrict(p_data) + mode_sum)
            z_data = z_data + beta * (2.0 * p_bar - x - p_data)
            z_modes = [z + beta * (2.0 * p_bar_core - x_core - p) for z, p in zip(z_modes, p_modes)]
            move = beta * (p_bar_core - x_core)
            x = x + beta * (p_bar - x)
            x_core = x_core + move
            steps += 1
            report.step_times.append(time.perf_counter() - step_tic)
            if np.linalg.norm(move) <= opts.inner_tol * max(np.linalg.norm(x_core), tiny):
                settled = True
                break

        value = objective(x_core)
        if not np.isfinite(value):
            raise NumericError(f"{name}: objective became non-finite in round {j}", OperationContext(name))
        improved = value < current
        if improved:
            core, current = x_core.copy(), value
            tangents = _tangents(core, weights)
            accepted = True
        report.objective_trace.append(current)
        report.inner_iterations.append(steps)
        report.iteration_times.append(time.perf_counter() - tic)
        report.iterations = j

        if not improved and settled:
            # the surrogate minimizer does not beat the current core: stationary
            report.converged = True
            break
        if improved and j > opts.window:
            drop = report.objective_trace[-1 - opts.window] - current
            if drop <= opts.tol * max(abs(current), tiny):
                report.converged = True
                break

    report.start_returned = not accepted
    report.wall_time = time.perf_counter() - started
    logger.info(
        "%s finished: %d rounds, %d splitting steps, objective %.6g -> %.6g, converged=%s",
        name, report.iterations, len(report.step_times), report.initial_objective, current, report.converged,
        extra={"extra": {"solver": name, "iterations": report.iterations, "converged": report.converged}},
    )
    if report.start_returned and not report.converged:
        logger.warning(
            "%s: no round improved on the starting point", name,
            extra={"extra": {"solver": name, "start_returned": True}},
        )
    return core, report


def gctp(x_hat: DenseTensor, weights: Sequence[WeightVector], opts: Optional[SolverOptions] = None) -> Tuple[DenseTensor, SolverReport]:
    """
    Denoise a projected core: min ||X_hat - X||^2 + sum_mu ||X_mu||_{*w_mu}.

    Both unfoldings of a matrix share its singular values, so there the
    minimizer is one weighted SVT with the averaged half-thresholds.
    """
    opts = (opts or SolverOptions()).validate()
    _check_weights(weights, x_hat.shape, "gctp")
    xh = np.array(x_hat.data)
    started = time.perf_counter()

    def objective(core: np.ndarray) -> float:
        return gctp_objective(core, xh, weights)

    ranks = [min(n, xh.size // n) for n in xh.shape]
    if not any(np.any(w.values[:r]) for w, r in zip(weights, ranks)):
        report = SolverReport(objective_trace=[0.0], converged=True, tolerance_used=opts.tol,
                              initial_objective=0.0, start_returned=True)
        report.wall_time = time.perf_counter() - started
        return DenseTensor(xh), report

    if xh.ndim == 2:
        tau = 0.5 * (weights[0].values[:ranks[0]] + weights[1].values[:ranks[1]])
        out = weighted_svt(xh, tau)
        elapsed = time.perf_counter() - started
        report = SolverReport(
            iterations=1, objective_trace=[objective(out)], converged=True, tolerance_used=opts.tol,
            wall_time=elapsed, iteration_times=[elapsed], initial_objective=objective(xh),
        )
        logger.debug("gctp: closed form on a %dx%d core, objective %.6g", *xh.shape, report.final_objective)
        return DenseTensor(out), report

    def quad_prox(v: np.ndarray, c: float) -> np.ndarray:
        return (v + 2.0 * c * xh) / (1.0 + 2.0 * c)

    core, report = _majorized_splitting(
        start=xh,
        data_prox=quad_prox,
        lift=_identity,
        restrict=_identity,
        weights=weights,
        objective=objective,
        opts=opts,
        name="gctp",
    )
    return DenseTensor(core), report


def trpcag(
    y: DenseTensor,
    bases,
    weights: Sequence[WeightVector],
    opts: Optional[SolverOptions] = None,
) -> Tuple[DenseTensor, DenseTensor, DenseTensor, SolverReport]:
    """
    Robust PCA on the graph core; returns (core, low-rank part, sparse part, report).

    The l1 term is split in the tensor space, where its proximal map is exact;
    the norms act on P^T L and keep L in the range of the bases.
    """
    opts = opts or SolverOptions()
    mats = _basis_mats(bases)
    _check_bases(y, mats, "trpcag")
    core_shape = tuple(P.shape[1] for P in mats)
    _check_weights(weights, core_shape, "trpcag")
    yd = y.data

    def lift(core: np.ndarray) -> np.ndarray:
        return multi_ttm(core, mats)

    def restrict(full: np.ndarray) -> np.ndarray:
        return multi_ttm(full, mats, transpose=True)

    def l1_prox(v: np.ndarray, c: float) -> np.ndarray:
        return yd + _soft_threshold(v - yd, c)

    core, report = _majorized_splitting(
        start=restrict(yd),
        data_prox=l1_prox,
        lift=lift,
        restrict=restrict,
        weights=weights,
        objective=lambda a: trpcag_objective(a, yd, mats, weights),
        opts=opts,
        name="trpcag",
    )
    low_rank = lift(core)
    sparse = yd - low_rank
    return DenseTensor(core), DenseTensor(low_rank), DenseTensor(sparse), report


def _canonical_signs(factors: List[np.ndarray], core: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """Flip factor columns so their largest-magnitude entry is positive; compensate in the core."""
    out = []
    for mu, U in enumerate(factors):
        fixed = _fix_signs(U)
        signs = np.sign(np.sum(fixed * U, axis=0))
        signs[signs == 0] = 1.0
        shape = [1] * core.ndim
        shape[mu] = -1
        core = core * signs.reshape(shape)
        out.append(fixed)
    return out, core


def _leading_left_vectors(mat: np.ndarray, r: int) -> np.ndarray:
    # full U when the leading subspace needs more columns than the thin SVD gives
    U, _, _ = np.linalg.svd(mat, full_matrices=r > min(mat.shape))
    return U[:, :r]


def _check_ranks(y: DenseTensor, ranks, operation: str) -> List[int]:
    ranks = [int(r) for r in ranks]
    if len(ranks) != y.order:
        raise ShapeError(f"expected {y.order} ranks, got {len(ranks)}", OperationContext(operation, shape=y.shape))
    for mu, r in enumerate(ranks):
        if not 1 <= r <= y.shape[mu]:
            raise RankError(
                f"rank {r} invalid for mode {mu + 1} of size {y.shape[mu]}",
                OperationContext(operation, mode=mu + 1, shape=y.shape),
            )
    return ranks


def mlsvd(y: DenseTensor, ranks, max_sweeps: int = 50, tol: float = 1e-8) -> Tuple[SvdFactors, SolverReport]:
    """Truncated HOSVD initialization followed by HOOI sweeps, then all-orthogonal rotation of the core."""
    ranks = _check_ranks(y, ranks, "mlsvd")
    started = time.perf_counter()
    data = y.data
    norm_y = y.norm()
    factors = [_leading_left_vectors(unfold(data, mu), r) for mu, r in enumerate(ranks)]
    report = SolverReport(tolerance_used=tol)

    def relative_residual(core: np.ndarray) -> float:
        if norm_y == 0.0:
            return 0.0
        gap = max(norm_y ** 2 - float(np.sum(core ** 2)), 0.0)
        return float(np.sqrt(gap) / norm_y)

    core = multi_ttm(data, factors, transpose=True)
    report.objective_trace.append(relative_residual(core))
    full_rank = all(r == n for r, n in zip(ranks, y.shape))
    for sweep in range(1, max_sweeps + 1):
        if full_rank:
            report.converged = True
            break
        tic = time.perf_counter()
        for mu in range(y.order):
            others = [None if nu == mu else U for nu, U in enumerate(factors)]
            partial = multi_ttm(data, others, transpose=True)
            factors[mu] = _leading_left_vectors(unfold(partial, mu), ranks[mu])
        core = multi_ttm(data, factors, transpose=True)
        fit = relative_residual(core)
        report.iteration_times.append(time.perf_counter() - tic)
        previous = report.objective_trace[-1]
        report.objective_trace.append(fit)
        report.iterations = sweep
        if previous - fit <= tol * max(previous, 1.0):
            report.converged = True
            break

    # rotate to the all-orthogonal core so factor columns follow mode singular values
    rotations = [_leading_left_vectors(unfold(core, mu), ranks[mu]) for mu in range(y.order)]
    factors = [U @ A for U, A in zip(factors, rotations)]
    core = multi_ttm(core, rotations, transpose=True)
    factors, core = _canonical_signs(factors, core)
    report.wall_time = time.perf_counter() - started
    logger.debug("mlsvd: ranks=%s sweeps=%d residual=%.3g", ranks, report.iterations, report.objective_trace[-1])
    return SvdFactors(factors=factors, core=DenseTensor(core)), report


def gmlsvd(
    y: DenseTensor,
    bases: Sequence[GraphBasis],
    weights: Sequence[WeightVector],
    opts: Optional[SolverOptions] = None,
) -> Tuple[SvdFactors, SolverReport]:
    """Project onto the graph bases, denoise the core, MLSVD the core, lift the factors back."""
    started = time.perf_counter()
    x_hat = project_gct(y, bases).core
    x, report = gctp(x_hat, weights, opts)
    inner, _ = mlsvd(x, x.shape)
    factors = [b.eigenvectors @ A for b, A in zip(bases, inner.factors)]
    factors, core = _canonical_signs(factors, inner.core.data)
    report.wall_time = time.perf_counter() - started
    return SvdFactors(factors=factors, core=DenseTensor(core)), report


def truncated_hosvd(y: DenseTensor, ranks) -> DenseTensor:
    """Rank-truncated HOSVD reconstruction; the truncated SVD for matrices."""
    ranks = _check_ranks(y, ranks, "truncated_hosvd")
    factors = [_leading_left_vectors(unfold(y.data, mu), r) for mu, r in enumerate(ranks)]
    core = multi_ttm(y.data, factors, transpose=True)
    return DenseTensor(multi_ttm(core, factors))
