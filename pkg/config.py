"""
Solver options, key=value configuration files and environment settings.

Precedence: built-in defaults < config file < command-line flags.
"""
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from core.exceptions import OperationContext, TensorIOError, UsageError

__version__ = "0.1.0"

DEFAULT_KNN = 10
DEFAULT_CORE = 30
DEFAULT_SIZE = 100
DEFAULT_RANK = 10


@dataclass(frozen=True)
class SolverOptions:
    gamma: float = 1.0
    alpha: float = 1.0
    core_ranks: Optional[Tuple[int, ...]] = None
    max_iters: int = 500
    tol: float = 1e-6
    window: int = 5
    beta: float = 1.0
    epsilon: float = 0.1
    # splitting step; every proximal map runs at step / omega, omega = 1 / (d + 1)
    step: Optional[float] = None
    # splitting steps per majorization round and their stopping tolerance
    inner_iters: int = 100
    inner_tol: float = 1e-9
    n_jobs: int = 1

    def step_size(self, gamma: float) -> float:
        """The explicit step, else 1 / gamma (1 when gamma is zero)."""
        if self.step is not None:
            return float(self.step)
        return 1.0 / gamma if gamma > 0 else 1.0

    def validate(self) -> "SolverOptions":
        ctx = OperationContext("SolverOptions")
        if self.gamma < 0:
            raise UsageError(f"gamma must be >= 0, got {self.gamma}", ctx)
        if self.alpha < 1:
            raise UsageError(f"alpha must be >= 1, got {self.alpha}", ctx)
        if not 0 < self.epsilon < 1:
            raise UsageError(f"epsilon must be in (0, 1), got {self.epsilon}", ctx)
        if not self.epsilon <= self.beta <= 2 - self.epsilon:
            raise UsageError(f"beta must be in [{self.epsilon}, {2 - self.epsilon}], got {self.beta}", ctx)
        if self.max_iters < 1 or self.window < 1:
            raise UsageError("max_iters and window must be positive", ctx)
        if self.tol <= 0:
            raise UsageError(f"tol must be positive, got {self.tol}", ctx)
        if self.inner_iters < 1:
            raise UsageError(f"inner_iters must be positive, got {self.inner_iters}", ctx)
        if self.inner_tol < 0:
            raise UsageError(f"inner_tol must be >= 0, got {self.inner_tol}", ctx)
        if self.step is not None and self.step <= 0:
            raise UsageError(f"step must be positive, got {self.step}", ctx)
        if self.core_ranks is not None and any(int(k) < 1 for k in self.core_ranks):
            raise UsageError(f"core ranks must be positive, got {self.core_ranks}", ctx)
        return self


_CASTS = {
    "gamma": float,
    "alpha": float,
    "max_iters": int,
    "tol": float,
    "window": int,
    "beta": float,
    "epsilon": float,
    "step": float,
    "inner_iters": int,
    "inner_tol": float,
    "n_jobs": int,
}


def parse_int_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}")


def _cast(key: str, value: Any) -> Any:
    if value is None:
        return None
    if key == "core_ranks":
        return parse_int_list(value) if isinstance(value, str) else tuple(int(v) for v in value)
    try:
        return _CASTS[key](value)
    except (TypeError, ValueError):
        raise UsageError(f"invalid value for {key}: {value!r}")


def load_config_file(path: str) -> Dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise TensorIOError(f"cannot read config file: {e}", path=str(path))
    known = {f.name for f in fields(SolverOptions)}
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown option {key!r}")
        values[key] = _cast(key, value)
    return values


def resolve_options(config_path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> SolverOptions:
    opts = SolverOptions()
    if config_path:
        opts = replace(opts, **load_config_file(config_path))
    if overrides:
        flags = {k: _cast(k, v) for k, v in overrides.items() if v is not None}
        opts = replace(opts, **flags)
    return opts.validate()


def get_cache_dir() -> Path:
    return Path(os.environ.get("MLRTG_CACHE_DIR", Path.home() / ".cache" / "mlrtg"))


def get_log_level() -> str:
    return os.environ.get("MLRTG_LOG_LEVEL", "INFO").upper()
