"""
Artificial low-rank tensors on graphs and the noise models used to corrupt them.

Random streams
--------------
Every generator draws from numpy's ``Philox`` counter-based bit generator.
``SeedSequence(spec.seed).spawn(2)`` fixes the layout of a synthesis run:

    stream 0  the Gaussian tensor whose matricization rows define the graphs
    stream 1  the core coefficients (direct_basis) / unused (laplacian_filter)

The noise injectors seed their own ``Philox(SeedSequence(seed))`` stream, so
noise and signal can be varied independently.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULT_KNN
from core.exceptions import OperationContext, RankError, ShapeError, UsageError, ZeroInput
from core.tensor_core import DenseTensor, multi_ttm
from engine.graph_laplacian import GraphBasis, bases_from_tensor
from engine.spectral_analysis import project_gct

logger = logging.getLogger(__name__)

METHODS = ("direct_basis", "laplacian_filter")


def _philox(seed) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def _per_mode(value, order: int, name: str) -> Tuple[int, ...]:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * order
    value = tuple(int(v) for v in value)
    if len(value) != order:
        raise ShapeError(f"{name} needs {order} entries, got {len(value)}", OperationContext("SynthSpec"))
    return value


@dataclass(frozen=True)
class SynthSpec:
    """
    Parameters of one artificial tensor.

    ``core_ranks`` is the number of graph eigenvectors kept per mode (k);
    ``signal_rank`` (r <= k) restricts the planted core to its leading r block,
    so the tensor has mode ranks r while the returned bases keep k columns.
    """
    shape: Tuple[int, ...]
    core_ranks: Tuple[int, ...]
    signal_rank: Optional[Tuple[int, ...]] = None
    k_nn: int = DEFAULT_KNN
    seed: int = 0
    method: str = "direct_basis"

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) < 2:
            raise ShapeError(f"tensor order must be >= 2, got {len(shape)}", OperationContext("SynthSpec", shape=shape))
        ranks = _per_mode(self.core_ranks, len(shape), "core_ranks")
        signal = ranks if self.signal_rank is None else _per_mode(self.signal_rank, len(shape), "signal_rank")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "core_ranks", ranks)
        object.__setattr__(self, "signal_rank", signal)
        if self.method not in METHODS:
            raise UsageError(f"method must be one of {METHODS}, got {self.method!r}", OperationContext("SynthSpec"))
        for mu, (n, k, r) in enumerate(zip(shape, ranks, signal)):
            if not 1 <= k <= n:
                raise RankError(
                    f"core rank {k} invalid for mode {mu + 1} of size {n}",
                    OperationContext("SynthSpec", mode=mu + 1, shape=shape),
                )
            if not 1 <= r <= k:
                raise RankError(
                    f"signal rank {r} must be in 1..{k} for mode {mu + 1}",
                    OperationContext("SynthSpec", mode=mu + 1, shape=shape),
                )

    @property
    def order(self) -> int:
        return len(self.shape)

    def streams(self) -> List[np.random.Generator]:
        return [_philox(s) for s in np.random.SeedSequence(int(self.seed)).spawn(2)]


@dataclass(frozen=True, eq=False)
class SynthResult:
    y_star: DenseTensor
    bases: List[GraphBasis]
    core: DenseTensor
    spec: SynthSpec = field(repr=False, default=None)


def _graph_bases(spec: SynthSpec, rng: np.random.Generator) -> Tuple[np.ndarray, List[GraphBasis]]:
    source = rng.standard_normal(spec.shape)
    return source, bases_from_tensor(DenseTensor(source), spec.core_ranks, spec.k_nn)


def _unit_rms(y: np.ndarray) -> float:
    norm = float(np.linalg.norm(y.ravel()))
    if norm == 0.0:
        raise ZeroInput("generated tensor is identically zero", OperationContext("synth"))
    return math.sqrt(y.size) / norm


def method1(spec: SynthSpec) -> Tuple[DenseTensor, List[GraphBasis], DenseTensor]:
    """Graph bases from a random tensor, then y_star = core x_1 P_1 ... x_d P_d, scaled to unit RMS entry."""
    graph_rng, core_rng = spec.streams()
    _, bases = _graph_bases(spec, graph_rng)

    core = np.zeros(spec.core_ranks)
    block = tuple(slice(0, r) for r in spec.signal_rank)
    core[block] = core_rng.standard_normal(spec.signal_rank)
    y_star = multi_ttm(core, [b.eigenvectors for b in bases])
    scale = _unit_rms(y_star)
    logger.debug("method1: shape=%s ranks=%s seed=%d", spec.shape, spec.core_ranks, spec.seed)
    return DenseTensor(y_star * scale), bases, DenseTensor(core * scale)


def method2(spec: SynthSpec) -> DenseTensor:
    """Random tensor filtered along every mode by the projector onto its own low-frequency graph eigenvectors."""
    return _laplacian_filter(spec).y_star


def _laplacian_filter(spec: SynthSpec) -> SynthResult:
    graph_rng, _ = spec.streams()
    source, bases = _graph_bases(spec, graph_rng)
    filters = [b.eigenvectors[:, :r] for b, r in zip(bases, spec.signal_rank)]
    coeffs = multi_ttm(source, filters, transpose=True)
    y_star = multi_ttm(coeffs, filters)
    y_star = y_star * _unit_rms(y_star)
    y = DenseTensor(y_star)
    logger.debug("method2: shape=%s ranks=%s seed=%d", spec.shape, spec.core_ranks, spec.seed)
    return SynthResult(y_star=y, bases=bases, core=project_gct(y, bases).core, spec=spec)


def generate(spec: SynthSpec) -> SynthResult:
    """Dispatch on ``spec.method``; both methods return tensor, bases and core."""
    if spec.method == "direct_basis":
        y_star, bases, core = method1(spec)
        return SynthResult(y_star=y_star, bases=bases, core=core, spec=spec)
    return _laplacian_filter(spec)


def add_gaussian_noise(y: DenseTensor, snr_db: float, seed: int) -> DenseTensor:
    """y + e with e Gaussian, rescaled so 10 log10(||y||^2 / ||e||^2) == snr_db."""
    if not np.isfinite(snr_db):
        raise UsageError(f"snr_db must be finite, got {snr_db}", OperationContext("add_gaussian_noise"))
    y_norm = y.norm()
    if y_norm == 0.0:
        raise ZeroInput("cannot set an SNR for a zero tensor", OperationContext("add_gaussian_noise", shape=y.shape))
    e = _philox(seed).standard_normal(y.shape)
    e *= y_norm * 10.0 ** (-snr_db / 20.0) / np.linalg.norm(e.ravel())
    return DenseTensor(y.data + e)


def add_sparse_noise(y: DenseTensor, fraction: float, std: float, seed: int) -> DenseTensor:
    """Add N(0, std^2) to a uniformly random ceil(fraction * N) subset of entries."""
    if not 0.0 <= fraction <= 1.0:
        raise UsageError(f"fraction must be in [0, 1], got {fraction}", OperationContext("add_sparse_noise"))
    if std < 0:
        raise UsageError(f"std must be >= 0, got {std}", OperationContext("add_sparse_noise"))
    n = y.size
    count = min(n, math.ceil(round(fraction * n, 9)))
    rng = _philox(seed)
    out = np.array(y.data).ravel(order="F")
    idx = rng.choice(n, size=count, replace=False)
    out[idx] += rng.normal(0.0, std, size=count)
    return DenseTensor.from_vec(out, y.shape)


def measured_snr_db(y: DenseTensor, noisy: DenseTensor) -> float:
    e = np.linalg.norm((noisy.data - y.data).ravel())
    return float(20.0 * np.log10(y.norm() / e))
