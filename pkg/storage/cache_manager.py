"""On-disk cache of per-mode graph bases, keyed by the tensor content and graph parameters."""
import hashlib
import logging
import os
from pathlib import Path
from typing import Optional

import numpy as np

from config import DEFAULT_KNN, get_cache_dir
from core.exceptions import TensorIOError
from core.tensor_core import DenseTensor
from engine.graph_laplacian import GraphBasis, basis_from_tensor
from storage.tensor_io import load_basis, save_basis

logger = logging.getLogger(__name__)


def basis_key(y: DenseTensor, mode: int, k: int, k_nn: int, kernel_width: Optional[float]) -> str:
    h = hashlib.sha256()
    h.update(repr(y.shape).encode())
    h.update(y.vec().astype("<f8").tobytes())
    h.update(f"mode={mode};k={k};knn={k_nn};width={kernel_width!r}".encode())
    return h.hexdigest()


class CacheManager:
    def __init__(self, cache_dir=None):
        self.cache_dir = Path(cache_dir) if cache_dir is not None else get_cache_dir()
        try:
            os.makedirs(self.cache_dir, exist_ok=True)
        except OSError as e:
            raise TensorIOError(f"cannot create basis cache: {e}", path=str(self.cache_dir))

    def _get_cache_path(self, key: str) -> Path:
        return self.cache_dir / f"basis_{key}"

    def has_cache(self, key: str) -> bool:
        prefix = self._get_cache_path(key)
        return prefix.with_suffix(".dtf").exists() and prefix.with_suffix(".csv").exists()

    def get_basis(self, key: str) -> Optional[GraphBasis]:
        if not self.has_cache(key):
            return None
        try:
            return load_basis(self._get_cache_path(key))
        except TensorIOError as e:
            logger.warning("discarding corrupt cache entry %s: %s", key[:12], e)
            return None

    def set_basis(self, key: str, basis: GraphBasis) -> None:
        save_basis(self._get_cache_path(key), basis)

    def ensure_basis(
        self,
        y: DenseTensor,
        mode: int,
        k: int,
        k_nn: int = DEFAULT_KNN,
        kernel_width: Optional[float] = None,
    ) -> GraphBasis:
        key = basis_key(y, mode, k, k_nn, kernel_width)
        cached = self.get_basis(key)
        if cached is not None:
            logger.info("cache hit for mode %d basis (k=%d)", mode, k, extra={"extra": {"key": key[:12]}})
            return cached
        logger.info("cache miss for mode %d basis (k=%d)", mode, k, extra={"extra": {"key": key[:12]}})
        basis = basis_from_tensor(y, mode, k, k_nn, kernel_width)
        self.set_basis(key, basis)
        return basis
