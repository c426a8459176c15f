import numpy as np
import pytest

from config import SolverOptions
from core.exceptions import NumericError, RankError, ShapeError, UsageError
from core.tensor_core import DenseTensor, unfold
from engine.graph_laplacian import GraphBasis
from engine.prox_solvers import (
    SolverReport,
    WeightVector,
    gctp,
    gctp_objective,
    gmlsvd,
    mlsvd,
    prox_l1_dataterm,
    trpcag,
    trpcag_objective,
    truncated_hosvd,
    weighted_nuclear_norm,
    weighted_svt,
    weights_from_basis,
)
from engine.spectral_analysis import project_gct
from engine.synth_data import add_sparse_noise
from evaluation.metrics import recon_error
from testing.oracles import best_perturbation_gain, dual_prox_l1, scalar_prox_l1, svt_objective


def _classic_svt(m, t):
    U, s, Vt = np.linalg.svd(m, full_matrices=False)
    return (U * np.maximum(s - t, 0.0)) @ Vt


def _zero_weights(shape):
    return [WeightVector(np.zeros(n)) for n in shape]


# weighted singular value thresholding

def test_uniform_thresholds_match_classic_svt(rng):
    m = rng.standard_normal((5, 7))
    np.testing.assert_allclose(weighted_svt(m, np.full(5, 0.8)), _classic_svt(m, 0.8), atol=1e-12)


def test_zero_and_huge_thresholds(rng):
    m = rng.standard_normal((4, 6))
    np.testing.assert_allclose(weighted_svt(m, np.zeros(4)), m, atol=1e-12)
    s1 = np.linalg.svd(m, compute_uv=False)[0]
    np.testing.assert_array_equal(weighted_svt(m, np.full(4, s1 + 1.0)), np.zeros((4, 6)))


def test_ascending_thresholds_shrink_each_singular_value(rng):
    m = rng.standard_normal((4, 4))
    tau = np.array([0.0, 0.1, 0.2, 0.3])
    s = np.linalg.svd(m, compute_uv=False)
    out = np.linalg.svd(weighted_svt(m, tau), compute_uv=False)
    np.testing.assert_allclose(out, np.maximum(s - tau, 0.0), atol=1e-12)


@pytest.mark.slow
def test_weighted_svt_is_a_minimizer_under_perturbation():
    rng = np.random.default_rng(8)
    for _ in range(20):
        m = rng.standard_normal((4, 4))
        tau = np.sort(rng.uniform(0.0, 1.5, size=4))
        x = weighted_svt(m, tau)
        gain = best_perturbation_gain(lambda z: svt_objective(z, m, tau), x, rng, trials=10_000)
        assert gain <= 1e-8


def test_uniform_svt_is_nonexpansive(rng):
    for _ in range(20):
        a, b = rng.standard_normal((2, 5, 6))
        t = np.full(5, rng.uniform(0.0, 2.0))
        lhs = np.linalg.norm(weighted_svt(a, t) - weighted_svt(b, t))
        assert lhs <= np.linalg.norm(a - b) + 1e-12


def test_ascending_svt_is_not_nonexpansive():
    # swapping which direction carries the larger singular value swaps the thresholds
    tau = np.array([0.0, 0.5])
    a = np.diag([1.1, 1.0])
    b = np.diag([1.0, 1.1])
    np.testing.assert_allclose(weighted_svt(a, tau), np.diag([1.1, 0.5]), atol=1e-12)
    np.testing.assert_allclose(weighted_svt(b, tau), np.diag([0.5, 1.1]), atol=1e-12)
    ratio = np.linalg.norm(weighted_svt(a, tau) - weighted_svt(b, tau)) / np.linalg.norm(a - b)
    assert ratio == pytest.approx(6.0)


def test_svt_errors(rng):
    bad = rng.standard_normal((3, 3))
    bad[1, 1] = np.nan
    with pytest.raises(NumericError):
        weighted_svt(bad, np.zeros(3))
    with pytest.raises(ShapeError):
        weighted_svt(rng.standard_normal((4, 4)), np.zeros(3))


def test_weighted_nuclear_norm_pairs_largest_with_first():
    assert weighted_nuclear_norm(np.diag([1.0, 3.0]), [1.0, 2.0]) == pytest.approx(5.0)


def test_weight_vector_validation():
    with pytest.raises(NumericError):
        WeightVector([0.0, -1.0])
    with pytest.raises(NumericError):
        WeightVector([0.0, np.inf])
    w = WeightVector([0.0, 1.0], gamma=2.0).scaled(3.0)
    np.testing.assert_array_equal(w.values, [0.0, 3.0])
    assert w.gamma == 6.0


def test_weights_from_basis():
    basis = GraphBasis(np.eye(3), [0.0, 1.0, 4.0])
    w = weights_from_basis(basis, gamma=2.0, alpha=2.0)
    np.testing.assert_allclose(w.values, [0.0, 2.0, 32.0])
    assert len(w) == 3
    with pytest.raises(UsageError):
        weights_from_basis(basis, gamma=1.0, alpha=0.5)


# l1 data-term proximal map

def test_prox_l1_identity_bases_is_entrywise(rng):
    x = rng.standard_normal((3, 4))
    y = rng.standard_normal((3, 4))
    out = prox_l1_dataterm(DenseTensor(x), DenseTensor(y), [np.eye(3), np.eye(4)], 0.4)
    expected = np.vectorize(scalar_prox_l1)(x, y, 0.4)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_prox_l1_square_orthogonal_bases_matches_dual_solver(orthonormal, rng):
    Q1, Q2 = orthonormal(3, 3), orthonormal(3, 3)
    v = rng.standard_normal((3, 3))
    y = rng.standard_normal((3, 3))
    out = prox_l1_dataterm(DenseTensor(v), DenseTensor(y), [Q1, Q2], 0.3)
    expected = dual_prox_l1(lambda x: Q1 @ x @ Q2.T, lambda z: Q1.T @ z @ Q2, v, y, 0.3)
    np.testing.assert_allclose(out.data, expected, atol=1e-6)


def test_prox_l1_errors(rng):
    y = DenseTensor(rng.standard_normal((3, 4)))
    with pytest.raises(ShapeError):
        prox_l1_dataterm(DenseTensor(np.zeros((2, 4))), y, [np.eye(3), np.eye(4)], 1.0)
    with pytest.raises(ShapeError):
        prox_l1_dataterm(DenseTensor(np.zeros((3, 4))), y, [np.eye(3)], 1.0)
    with pytest.raises(NumericError):
        prox_l1_dataterm(DenseTensor(np.zeros((3, 4))), y, [np.eye(3), np.eye(4)], 0.0)


# graph core tensor pursuit

def test_gctp_without_regularization_returns_input(random_tensor):
    out, report = gctp(random_tensor, _zero_weights(random_tensor.shape), SolverOptions(max_iters=20))
    np.testing.assert_array_equal(out.data, random_tensor.data)
    assert report.objective_trace[-1] == 0.0


def test_gctp_on_matrices_is_one_weighted_svt(rng):
    xh = rng.standard_normal((6, 5))
    weights = [WeightVector(np.linspace(0.0, 2.0, 6), gamma=10.0), WeightVector(np.linspace(0.0, 1.0, 5), gamma=10.0)]
    out, report = gctp(DenseTensor(xh), weights)
    tau = 0.5 * (weights[0].values[:5] + weights[1].values)
    np.testing.assert_allclose(out.data, weighted_svt(xh, tau), atol=1e-12)
    assert report.converged and report.iterations == 1
    assert report.final_objective < report.initial_objective
    gain = best_perturbation_gain(lambda z: gctp_objective(z, xh, weights), out.data, rng, trials=2000)
    assert gain <= 1e-8


@pytest.mark.parametrize("gamma, expected", [(0.4, [3.0, 1.4, 0.0]), (100.0, [3.0, 0.0, 0.0])])
def test_gctp_shrinks_a_diagonal_core_entrywise(gamma, expected):
    # every unfolding of a diagonal core has its diagonal as singular values,
    # so entry i drops by 3 / 2 of its weight
    idx = np.arange(3)
    xh = np.zeros((3, 3, 3))
    xh[idx, idx, idx] = [3.0, 2.0, 1.0]
    target = np.zeros((3, 3, 3))
    target[idx, idx, idx] = expected
    weights = [WeightVector(gamma * np.arange(3.0), gamma=gamma) for _ in range(3)]
    out, report = gctp(DenseTensor(xh), weights, SolverOptions(max_iters=200))
    np.testing.assert_allclose(out.data, target, atol=1e-4)
    assert not report.start_returned
    assert report.converged


def test_gctp_decreases_the_objective_every_round(random_tensor):
    weights = [WeightVector(0.5 * np.arange(n)) for n in random_tensor.shape]
    out, report = gctp(random_tensor, weights, SolverOptions(max_iters=300))
    trace = np.array(report.objective_trace)
    assert np.all(np.diff(trace) <= 0.0)
    assert report.initial_objective == pytest.approx(gctp_objective(random_tensor.data, random_tensor.data, weights))
    assert report.final_objective == pytest.approx(gctp_objective(out.data, random_tensor.data, weights))
    assert report.final_objective < report.initial_objective
    assert not report.start_returned
    assert report.converged
    assert len(trace) == report.iterations == len(report.inner_iterations)
    assert len(report.step_times) == sum(report.inner_iterations)


def test_gctp_rejects_short_weights(random_tensor):
    weights = [WeightVector(np.zeros(2)) for _ in range(3)]
    with pytest.raises(ShapeError):
        gctp(random_tensor, weights)


def test_parallel_workers_agree(random_tensor):
    weights = [WeightVector(0.3 * np.arange(n)) for n in random_tensor.shape]
    serial, _ = gctp(random_tensor, weights, SolverOptions(max_iters=25))
    threaded, _ = gctp(random_tensor, weights, SolverOptions(max_iters=25, n_jobs=2))
    np.testing.assert_allclose(threaded.data, serial.data, atol=1e-12)


def test_report_frame():
    report = SolverReport(objective_trace=[3.0, 2.0], iteration_times=[0.1, 0.3], iterations=2)
    frame = report.to_frame()
    assert list(frame.columns) == ["iteration", "objective", "time"]
    np.testing.assert_allclose(frame["time"], [0.1, 0.4])
    assert report.per_iteration_time == pytest.approx(0.2)
    assert np.isnan(SolverReport().per_iteration_time)


# tensor robust PCA on graphs

def test_trpcag_removes_sparse_corruption(mlrtg_3d):
    y_star, bases, _ = mlrtg_3d
    y = add_sparse_noise(y_star, 0.05, 5.0, seed=4)
    weights = [weights_from_basis(b, 1.0) for b in bases]
    core, low, sparse, report = trpcag(y, bases, weights, SolverOptions(max_iters=100))
    assert core.shape == (4, 4, 4)
    np.testing.assert_allclose(low.data + sparse.data, y.data, atol=1e-10)
    projection = project_gct(y, bases)
    mats = [b.eigenvectors for b in bases]
    assert report.initial_objective == pytest.approx(trpcag_objective(projection.core.data, y.data, mats, weights))
    assert report.final_objective < report.initial_objective
    assert not report.start_returned
    assert np.all(np.diff(report.objective_trace) <= 0.0)
    assert recon_error(low, y_star) <= 0.5 * recon_error(projection.reconstruct(), y_star)


def test_trpcag_leaves_an_exact_low_rank_tensor_alone(mlrtg_3d):
    y, bases, _ = mlrtg_3d
    weights = [weights_from_basis(b, 0.1) for b in bases]
    _, _, sparse, _ = trpcag(y, bases, weights, SolverOptions(max_iters=20))
    assert np.linalg.norm(sparse.data.ravel()) <= 1e-6 * y.norm()


def test_trpcag_step_times_feed_the_timing(mlrtg_3d):
    y, bases, _ = mlrtg_3d
    weights = [weights_from_basis(b, 1.0) for b in bases]
    opts = SolverOptions(max_iters=1, inner_iters=7, inner_tol=0.0)
    _, _, _, report = trpcag(add_sparse_noise(y, 0.05, 5.0, seed=1), bases, weights, opts)
    assert report.iterations == 1
    assert report.inner_iterations == [7]
    assert len(report.step_times) == 7
    assert report.per_iteration_time == pytest.approx(np.median(report.step_times))


def test_trpcag_checks_bases(mlrtg_3d):
    y, bases, _ = mlrtg_3d
    with pytest.raises(ShapeError):
        trpcag(y, bases[:2], [weights_from_basis(b, 1.0) for b in bases[:2]])


# classical and graph multilinear SVD

def test_mlsvd_is_exact_at_the_true_ranks(mlrtg_3d):
    y, _, _ = mlrtg_3d
    svd, _ = mlsvd(y, (4, 4, 4))
    assert np.linalg.norm((svd.reconstruct().data - y.data).ravel()) <= 1e-10 * y.norm()
    for U in svd.factors:
        np.testing.assert_allclose(U.T @ U, np.eye(4), atol=1e-10)
        pivots = np.argmax(np.abs(U), axis=0)
        assert np.all(U[pivots, np.arange(4)] > 0)


def test_mlsvd_core_is_all_orthogonal(mlrtg_3d):
    y, _, _ = mlrtg_3d
    svd, _ = mlsvd(y, (4, 4, 4))
    scale = svd.core.norm() ** 2
    for mu in range(3):
        gram = unfold(svd.core.data, mu) @ unfold(svd.core.data, mu).T
        off = gram - np.diag(np.diag(gram))
        assert np.max(np.abs(off)) <= 1e-10 * scale
        assert np.all(np.diff(np.diag(gram)) <= 1e-10 * scale)


def test_hooi_improves_on_hosvd(rng):
    y = DenseTensor(rng.standard_normal((6, 7, 8)))
    svd, report = mlsvd(y, (2, 3, 3))
    hooi_err = np.linalg.norm((svd.reconstruct().data - y.data).ravel())
    hosvd_err = np.linalg.norm((truncated_hosvd(y, (2, 3, 3)).data - y.data).ravel())
    assert hooi_err <= hosvd_err + 1e-10
    assert np.all(np.diff(report.objective_trace) <= 1e-12)


def test_mlsvd_rank_checks(random_tensor):
    with pytest.raises(RankError):
        mlsvd(random_tensor, (0, 2, 2))
    with pytest.raises(RankError):
        mlsvd(random_tensor, (5, 2, 2))
    with pytest.raises(ShapeError):
        mlsvd(random_tensor, (2, 2))


def test_truncated_hosvd_full_rank_is_identity(random_tensor):
    np.testing.assert_allclose(truncated_hosvd(random_tensor, random_tensor.shape).data, random_tensor.data, atol=1e-12)


def test_gmlsvd_without_regularization_matches_mlsvd(mlrtg_3d):
    y, bases, _ = mlrtg_3d
    graph_svd, _ = gmlsvd(y, bases, _zero_weights((4, 4, 4)), SolverOptions(max_iters=5))
    plain, _ = mlsvd(y, (4, 4, 4))
    np.testing.assert_allclose(graph_svd.reconstruct().data, y.data, atol=1e-9)
    for G, U in zip(graph_svd.factors, plain.factors):
        np.testing.assert_allclose(G @ G.T, U @ U.T, atol=1e-8)
        np.testing.assert_allclose(G.T @ G, np.eye(4), atol=1e-10)
