"""
Command-line entry point: synthesis, graph bases, solvers, sweeps, diagnostics and evaluation.

    python main.py synth --shape 100,100 --rank 10 --seed 7 --snr 5 --out run/
    python main.py basis --tensor run/y.dtf --k 30 --k-star 10 --out run/
    python main.py solve gctp --tensor run/y.dtf --bases run/ --gamma 10 --out run/gctp
    python main.py sweep --param k --grid 10,20,30 --tensor run/y.dtf --reference run/y_star.dtf --out sweep.csv
    python main.py diagnose --tensor run/y_star.dtf --k-grid 5,10,20 --out diag.csv
    python main.py eval --estimate run/gctp/recovered.dtf --reference run/y_star.dtf --out metrics.csv

Exit codes: 0 success (a solver that did not converge still succeeds), 2 usage,
3 file I/O, 4 numeric failure.
"""
import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import (
    DEFAULT_CORE,
    DEFAULT_KNN,
    DEFAULT_RANK,
    SolverOptions,
    __version__,
    get_log_level,
    parse_int_list,
    resolve_options,
)
from core.exceptions import (
    MLRTGError,
    OperationContext,
    RankError,
    TensorIOError,
    UsageError,
    create_error_envelope,
    safe_execute_with_context,
)
from core.tensor_core import DenseTensor, multilinear_transform
from engine.graph_laplacian import GraphBasis, eigen_gap
from engine.prox_solvers import SolverReport, gctp, gmlsvd, mlsvd, trpcag, weights_from_basis
from engine.spectral_analysis import FULL_BASIS_LIMIT, GctDecomposition, diagnose, project_gct
from engine.synth_data import SynthSpec, add_gaussian_noise, add_sparse_noise, generate
from evaluation.metrics import evaluate
from observability.logging import set_run_id, setup_logger
from schemas.schema_manager import file_sha256, write_manifest
from storage.cache_manager import CacheManager
from storage.tensor_io import load_basis, read_matrix, read_tensor, save_basis, write_tensor

logger = logging.getLogger("main")

ALGORITHMS = ("gctp", "gmlsvd", "trpcag", "mlsvd")
SWEEP_PARAMS = ("gamma", "k", "alpha", "knn")
# argument names holding file locations; recorded by hash, not in the config block
PATH_ARGS = {"out", "tensor", "bases", "reference", "estimate", "config", "cache_dir",
             "factors_estimate", "factors_reference", "func", "run_id"}


def _int_list(text: str):
    try:
        values = parse_int_list(text)
    except UsageError as e:
        raise argparse.ArgumentTypeError(str(e))
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _float_list(text: str):
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated number list, got {text!r}")


def _per_mode(values, order: int, name: str) -> tuple:
    values = tuple(int(v) for v in values)
    if len(values) == 1:
        return values * order
    if len(values) != order:
        raise UsageError(f"--{name} needs 1 or {order} values, got {len(values)}")
    return values


def _basis_prefix(directory, mode: int) -> Path:
    return Path(directory) / f"basis_mode{mode}"


def _run_id(command: str, seed: Optional[int], argv: Sequence[str]) -> str:
    if seed is not None:
        return f"{command}-{seed}"
    return f"{command}-{hashlib.sha256(' '.join(argv).encode()).hexdigest()[:8]}"


def _config_block(args: argparse.Namespace, opts: Optional[SolverOptions] = None) -> Dict[str, Any]:
    block = {}
    for key, value in sorted(vars(args).items()):
        if key in PATH_ARGS or value is None:
            continue
        block[key] = list(value) if isinstance(value, tuple) else value
    if opts is not None:
        for key, value in vars(opts).items():
            block[f"solver.{key}"] = list(value) if isinstance(value, tuple) else value
    return block


def _manifest(args, command: str, inputs: Sequence[Path], outputs: Sequence[Path], out_dir: Path,
              opts: Optional[SolverOptions] = None, seed: Optional[int] = None) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "run_id": args.run_id,
        "seed": seed,
        "config": _config_block(args, opts),
        "inputs": {Path(p).name: file_sha256(p) for p in inputs},
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
    }
    path = write_manifest(Path(out_dir) / "manifest.json", manifest)
    logger.info("wrote %d files and manifest to %s", len(outputs), out_dir)
    return path


def _write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise TensorIOError(f"cannot write table: {e}", path=str(path))
    return path


def _options(args) -> SolverOptions:
    overrides = {
        "gamma": args.gamma,
        "alpha": args.alpha,
        "core_ranks": args.core,
        "max_iters": args.max_iters,
        "tol": args.tol,
        "beta": args.beta,
        "step": args.step,
        "n_jobs": getattr(args, "solver_jobs", None),
    }
    return resolve_options(args.config, overrides)


def _default_ranks(y: DenseTensor, opts: SolverOptions) -> tuple:
    if opts.core_ranks is None:
        return tuple(min(DEFAULT_CORE, n) for n in y.shape)
    return _per_mode(opts.core_ranks, y.order, "core")


def _resolve_bases(y: DenseTensor, ranks, k_nn: int, bases_dir=None, cache_dir=None,
                   kernel_width: Optional[float] = None) -> List[GraphBasis]:
    if bases_dir is not None:
        loaded = [load_basis(_basis_prefix(bases_dir, mu + 1)) for mu in range(y.order)]
        if ranks is None:
            return loaded
        return [b.truncate(k) if k != b.k else b for b, k in zip(loaded, ranks)]
    cache = CacheManager(cache_dir)
    return [cache.ensure_basis(y, mu + 1, k, k_nn, kernel_width) for mu, k in enumerate(ranks)]


@dataclass
class SolveResult:
    recovered: DenseTensor
    core: DenseTensor
    report: SolverReport
    compression_ratio: float
    factors: Optional[List[np.ndarray]] = None
    sparse: Optional[DenseTensor] = None


def run_solver(algorithm: str, y: DenseTensor, bases: Optional[List[GraphBasis]], opts: SolverOptions) -> SolveResult:
    """Dispatch one solve; ``bases`` is ignored by mlsvd."""
    if algorithm == "mlsvd":
        ranks = _default_ranks(y, opts)
        svd, report = mlsvd(y, ranks)
        stored = svd.core.size + sum(U.size for U in svd.factors)
        return SolveResult(
            recovered=svd.reconstruct(),
            core=svd.core,
            report=report,
            compression_ratio=stored / y.size,
            factors=svd.factors,
        )

    weights = [weights_from_basis(b, opts.gamma, opts.alpha) for b in bases]
    mats = [b.eigenvectors for b in bases]
    if algorithm == "gctp":
        core, report = gctp(project_gct(y, bases).core, weights, opts)
        return SolveResult(
            recovered=multilinear_transform(core, mats),
            core=core,
            report=report,
            compression_ratio=GctDecomposition(core, bases, 0.0).compression_ratio,
        )
    if algorithm == "gmlsvd":
        svd, report = gmlsvd(y, bases, weights, opts)
        return SolveResult(
            recovered=svd.reconstruct(),
            core=svd.core,
            report=report,
            compression_ratio=GctDecomposition(svd.core, bases, 0.0).compression_ratio,
            factors=svd.factors,
        )
    if algorithm == "trpcag":
        core, low_rank, sparse, report = trpcag(y, bases, weights, opts)
        return SolveResult(
            recovered=low_rank,
            core=core,
            report=report,
            compression_ratio=GctDecomposition(core, bases, 0.0).compression_ratio,
            sparse=sparse,
        )
    raise UsageError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")


def _report_frame(report: SolverReport) -> pd.DataFrame:
    frame = report.to_frame()
    frame["converged"] = report.converged
    return frame


# commands

def cmd_synth(args) -> int:
    shape = args.shape
    signal = _per_mode(args.rank, len(shape), "rank")
    core = signal if args.core is None else _per_mode(args.core, len(shape), "core")
    method = {"1": "direct_basis", "2": "laplacian_filter"}.get(args.method, args.method)
    spec = SynthSpec(shape=shape, core_ranks=core, signal_rank=signal, k_nn=args.knn, seed=args.seed, method=method)
    result = generate(spec)

    y = result.y_star
    if args.snr is not None:
        y = add_gaussian_noise(y, args.snr, args.seed + 1)
    if args.sparse_fraction:
        y = add_sparse_noise(y, args.sparse_fraction, args.sparse_std, args.seed + 2)

    out = Path(args.out)
    outputs = [
        write_tensor(out / "y_star.dtf", result.y_star),
        write_tensor(out / "y.dtf", y),
        write_tensor(out / "core.dtf", result.core),
    ]
    for mu, basis in enumerate(result.bases):
        prefix = save_basis(_basis_prefix(out, mu + 1), basis)
        outputs += [prefix.with_suffix(".dtf"), prefix.with_suffix(".csv")]
    _manifest(args, "synth", [], outputs, out, seed=args.seed)
    return 0


def cmd_basis(args) -> int:
    y = read_tensor(args.tensor)
    ranks = _per_mode(args.k, y.order, "k")
    for mu, k in enumerate(ranks):
        if k > y.shape[mu]:
            raise RankError(
                f"k={k} exceeds the {y.shape[mu]} rows of mode {mu + 1}",
                OperationContext("cmd_basis", mode=mu + 1, shape=y.shape),
            )
    bases = _resolve_bases(y, ranks, args.knn, cache_dir=args.cache_dir, kernel_width=args.kernel_width)

    out = Path(args.out)
    outputs = []
    eig_rows, gap_rows = [], []
    for mu, basis in enumerate(bases):
        prefix = save_basis(_basis_prefix(out, mu + 1), basis)
        outputs += [prefix.with_suffix(".dtf"), prefix.with_suffix(".csv")]
        eig_rows += [{"mode": mu + 1, "index": i + 1, "eigenvalue": lam} for i, lam in enumerate(basis.eigenvalues)]
        if args.k_star is not None:
            gap_rows.append({"mode": mu + 1, "k_star": args.k_star, "eigen_gap": eigen_gap(basis, args.k_star)})
    outputs.append(_write_csv(pd.DataFrame(eig_rows), out / "eigenvalues.csv"))
    if gap_rows:
        outputs.append(_write_csv(pd.DataFrame(gap_rows), out / "eigen_gap.csv"))
    _manifest(args, "basis", [Path(args.tensor)], outputs, out)
    return 0


def cmd_solve(args) -> int:
    opts = _options(args)
    y = read_tensor(args.tensor)
    bases = None
    if args.algorithm != "mlsvd":
        ranks = None if args.bases is not None and opts.core_ranks is None else _default_ranks(y, opts)
        bases = _resolve_bases(y, ranks, args.knn, args.bases, args.cache_dir)
    result = run_solver(args.algorithm, y, bases, opts)

    out = Path(args.out)
    outputs = [write_tensor(out / "recovered.dtf", result.recovered), write_tensor(out / "core.dtf", result.core)]
    if result.factors is not None:
        outputs += [write_tensor(out / f"factor_mode{mu + 1}.dtf", DenseTensor(U)) for mu, U in enumerate(result.factors)]
    if result.sparse is not None:
        outputs.append(write_tensor(out / "sparse.dtf", result.sparse))
    outputs.append(_write_csv(_report_frame(result.report), out / "report.csv"))
    summary = pd.DataFrame([{
        "algorithm": args.algorithm,
        "iterations": result.report.iterations,
        "converged": result.report.converged,
        "final_objective": result.report.final_objective,
        "start_returned": result.report.start_returned,
        "wall_time": result.report.wall_time,
        "compression_ratio": result.compression_ratio,
    }])
    outputs.append(_write_csv(summary, out / "summary.csv"))
    inputs = [Path(args.tensor)]
    if args.bases is not None:
        inputs += [_basis_prefix(args.bases, mu + 1).with_suffix(".dtf") for mu in range(y.order)]
    _manifest(args, "solve", inputs, outputs, out, opts)
    return 0


def _sweep_point(args, param: str, value, y: DenseTensor, reference: Optional[DenseTensor], base: SolverOptions):
    opts, k_nn = base, args.knn
    if param == "gamma":
        opts = replace(base, gamma=float(value))
    elif param == "alpha":
        opts = replace(base, alpha=float(value))
    elif param == "k":
        opts = replace(base, core_ranks=(int(value),) * y.order)
    else:
        k_nn = int(value)
    opts.validate()
    logger.info("sweep point %s=%s started", param, value)
    bases = None
    if args.algorithm != "mlsvd":
        bases = _resolve_bases(y, _default_ranks(y, opts), k_nn, cache_dir=args.cache_dir)
    result = run_solver(args.algorithm, y, bases, opts)
    row = {
        "iterations": result.report.iterations,
        "converged": result.report.converged,
        "wall_time": result.report.wall_time,
    }
    if reference is not None:
        metrics = evaluate(result.recovered, reference, k_star=args.k_star)
        metrics.pop("alignment_diag")
        row.update(metrics)
    logger.info("sweep point %s=%s finished", param, value)
    return row


def cmd_sweep(args) -> int:
    if not args.grid:
        raise UsageError("sweep grid is empty")
    base = _options(args)
    y = read_tensor(args.tensor)
    reference = read_tensor(args.reference) if args.reference else None
    grid = [int(v) if args.param in ("k", "knn") else float(v) for v in args.grid]

    def point(value):
        ctx = OperationContext("sweep", detail=f"{args.param}={value}")
        return safe_execute_with_context(_sweep_point, ctx, args, args.param, value, y, reference, base)

    results = Parallel(n_jobs=args.n_jobs, prefer="threads")(delayed(point)(v) for v in grid)
    rows = []
    for value, (row, envelope) in zip(grid, results):
        entry = {"param": args.param, "value": value}
        if envelope is not None:
            logger.warning("sweep point failed", extra={"extra": envelope.to_dict()})
            entry["error"] = f"{envelope.exception_type}: {envelope.exception_message}"
        else:
            entry.update(row)
            entry["error"] = ""
        rows.append(entry)

    out = Path(args.out)
    _write_csv(pd.DataFrame(rows), out)
    inputs = [Path(args.tensor)] + ([Path(args.reference)] if args.reference else [])
    _manifest(args, "sweep", inputs, [out], out.parent, base)
    return 0


def cmd_diagnose(args) -> int:
    y = read_tensor(args.tensor)
    k_grid = sorted(set(args.k_grid))
    if args.bases is not None:
        bases = [load_basis(_basis_prefix(args.bases, mu + 1)) for mu in range(y.order)]
    else:
        ranks = [n if n <= FULL_BASIS_LIMIT else min(n, max(k_grid)) for n in y.shape]
        bases = _resolve_bases(y, ranks, args.knn, cache_dir=args.cache_dir)
    frame = diagnose(y, bases, k_grid)
    out = Path(args.out)
    _write_csv(frame, out)
    _manifest(args, "diagnose", [Path(args.tensor)], [out], out.parent)
    return 0


def cmd_eval(args) -> int:
    estimate = read_tensor(args.estimate)
    reference = read_tensor(args.reference)
    v = read_matrix(args.factors_estimate) if args.factors_estimate else None
    u = read_matrix(args.factors_reference) if args.factors_reference else None
    metrics = evaluate(estimate, reference, mode=args.mode, k_star=args.k_star, count=args.count, v=v, u=u)

    rows = [{"metric": name, "index": "", "value": metrics[name]}
            for name in ("recon_error", "singular_value_error", "subspace_angle", "alignment_mean")]
    rows += [{"metric": "alignment_diag", "index": i + 1, "value": a} for i, a in enumerate(metrics["alignment_diag"])]
    out = Path(args.out)
    _write_csv(pd.DataFrame(rows), out)
    inputs = [Path(args.estimate), Path(args.reference)]
    inputs += [Path(p) for p in (args.factors_estimate, args.factors_reference) if p]
    _manifest(args, "eval", inputs, [out], out.parent)
    return 0


def cmd_bench(args) -> int:
    from benchmarks.performance_test import run_benchmark

    result = run_benchmark(args.n_values, args.k, args.m, args.iterations)
    table = result["table"]
    table["slope"] = result["slope"]
    table["intercept"] = result["intercept"]
    table["r_squared"] = result["r_squared"]
    _write_csv(table, args.out)
    logger.info("bench fit R^2=%.4f, last ratio %.3f", result["r_squared"], result["last_ratio"])
    return 0


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=str, default=None, help="key = value solver configuration file")
    p.add_argument("--gamma", type=float, default=None, help="Regularization weight (default 1)")
    p.add_argument("--alpha", type=float, default=None, help="Laplacian eigenvalue power (default 1)")
    p.add_argument("--core", type=_int_list, default=None, help="Core size per mode, one value or one per mode")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--beta", type=float, default=None, help="Relaxation of the splitting iteration")
    p.add_argument("--step", type=float, default=None, help="Splitting step size")
    p.add_argument("--solver-jobs", type=int, default=None, help="Threads for the per-term proximal maps")
    p.add_argument("--knn", type=int, default=DEFAULT_KNN)
    p.add_argument("--cache-dir", type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlrtg", description="Low-rank tensors on graphs.")
    parser.add_argument("--log-level", type=str, default=None, help="Overrides MLRTG_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate an artificial low-rank tensor on graphs")
    p.add_argument("--shape", type=_int_list, required=True)
    p.add_argument("--rank", type=_int_list, default=(DEFAULT_RANK,), help="Signal rank per mode")
    p.add_argument("--core", type=_int_list, default=None, help="Graph eigenvectors kept per mode (default: rank)")
    p.add_argument("--method", choices=("1", "2", "direct_basis", "laplacian_filter"), default="1")
    p.add_argument("--knn", type=int, default=DEFAULT_KNN)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, default=None, help="Gaussian noise level in dB")
    p.add_argument("--sparse-fraction", type=float, default=0.0)
    p.add_argument("--sparse-std", type=float, default=0.1)
    p.add_argument("--out", type=str, default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("basis", help="Build per-mode graph eigenbases")
    p.add_argument("--tensor", type=str, required=True)
    p.add_argument("--k", type=_int_list, default=(DEFAULT_CORE,))
    p.add_argument("--k-star", type=int, default=None, help="Report the eigen gap at this index")
    p.add_argument("--knn", type=int, default=DEFAULT_KNN)
    p.add_argument("--kernel-width", type=float, default=None)
    p.add_argument("--cache-dir", type=str, default=None)
    p.add_argument("--out", type=str, default=".")
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("solve", help="Run one solver")
    p.add_argument("algorithm", choices=ALGORITHMS)
    p.add_argument("--tensor", type=str, required=True)
    p.add_argument("--bases", type=str, default=None, help="Directory holding basis_mode<mu> files")
    _add_solver_flags(p)
    p.add_argument("--out", type=str, default=".")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="Run a solver across a parameter grid")
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p.add_argument("--grid", type=_float_list, required=True)
    p.add_argument("--algorithm", choices=ALGORITHMS, default="gctp")
    p.add_argument("--tensor", type=str, required=True)
    p.add_argument("--reference", type=str, default=None, help="Clean tensor for the metric columns")
    p.add_argument("--k-star", type=int, default=None)
    p.add_argument("--n-jobs", type=int, default=1, help="Grid points run in parallel")
    _add_solver_flags(p)
    p.add_argument("--out", type=str, default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="Stationarity and energy concentration per mode")
    p.add_argument("--tensor", type=str, required=True)
    p.add_argument("--bases", type=str, default=None)
    p.add_argument("--k-grid", type=_int_list, default=(5, 10, 20, 30))
    p.add_argument("--knn", type=int, default=DEFAULT_KNN)
    p.add_argument("--cache-dir", type=str, default=None)
    p.add_argument("--out", type=str, default="diagnose.csv")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("eval", help="Compare an estimate with a reference tensor")
    p.add_argument("--estimate", type=str, required=True)
    p.add_argument("--reference", type=str, required=True)
    p.add_argument("--mode", type=int, default=1)
    p.add_argument("--k-star", type=int, default=None)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--factors-estimate", type=str, default=None)
    p.add_argument("--factors-reference", type=str, default=None)
    p.add_argument("--out", type=str, default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="Per-iteration timing of the robust solver")
    p.add_argument("--n-values", type=_int_list, default=(200, 400, 800))
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--out", type=str, default="bench.csv")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logger((args.log_level or get_log_level()).upper())
    args.run_id = _run_id(args.command, getattr(args, "seed", None), argv)
    set_run_id(args.run_id)
    try:
        return args.func(args)
    except MLRTGError as e:
        envelope = create_error_envelope(e, OperationContext(args.command))
        logger.error("%s failed: %s", args.command, e, extra={"extra": {"error": envelope.to_dict()}})
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
