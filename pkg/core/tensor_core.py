"""
Dense tensor storage, matricization/folding and multilinear products.

Linearization convention
------------------------
``vec(T)`` lists the entries of ``T`` with mode 1 varying fastest (column-major,
numpy ``order="F"``).  The mode-``mu`` matricization ``T_mu`` has ``n_mu`` rows;
its columns enumerate the remaining modes in ascending order with the
first-listed mode varying fastest.  Under this convention

    vec(X x_1 A_1 x_2 A_2 ... x_d A_d) = (A_d kron ... kron A_1) vec(X)

so the Kronecker factor of a matricization never contains the matricized mode.
Modes are 1-based in the public API.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from core.exceptions import InvalidMode, ShapeError, OperationContext


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Order-d (d >= 2) real double-precision tensor."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim < 2:
            raise ShapeError(
                f"tensor order must be >= 2, got {arr.ndim}",
                OperationContext("DenseTensor", shape=arr.shape),
            )
        if any(s < 1 for s in arr.shape):
            raise ShapeError(
                f"all dimensions must be >= 1, got {arr.shape}",
                OperationContext("DenseTensor", shape=arr.shape),
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def vec(self) -> np.ndarray:
        """Linearization with mode 1 fastest."""
        return self.data.ravel(order="F")

    @classmethod
    def from_vec(cls, values: np.ndarray, shape: Sequence[int]) -> "DenseTensor":
        values = np.asarray(values, dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ShapeError(
                f"{values.size} values cannot fill shape {tuple(shape)}",
                OperationContext("from_vec", shape=tuple(shape)),
            )
        return cls(values.reshape(tuple(shape), order="F"))

    def norm(self) -> float:
        return float(np.linalg.norm(self.data.ravel()))

    def equals(self, other: "DenseTensor") -> bool:
        """Bit-identical comparison."""
        return self.shape == other.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class ModeMatrix:
    """Mode-``mode`` matricization of a tensor of shape ``tensor_shape``."""
    mode: int
    data: np.ndarray
    tensor_shape: Tuple[int, ...]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def _check_mode(mode: int, order: int, operation: str) -> int:
    if not isinstance(mode, (int, np.integer)) or not 1 <= mode <= order:
        raise InvalidMode(
            f"mode must be in 1..{order}, got {mode}",
            OperationContext(operation, mode=mode if isinstance(mode, int) else None),
        )
    return int(mode) - 1


# ndarray-level kernels (0-based axis) shared by the engines

def unfold(arr: np.ndarray, axis: int) -> np.ndarray:
    return np.reshape(np.moveaxis(arr, axis, 0), (arr.shape[axis], -1), order="F")


def refold(mat: np.ndarray, axis: int, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(shape)
    full = (shape[axis],) + shape[:axis] + shape[axis + 1:]
    return np.moveaxis(np.reshape(mat, full, order="F"), 0, axis)


def ttm(arr: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    """Mode product along a 0-based axis, ``refold(mat @ unfold(arr))``."""
    return np.moveaxis(np.tensordot(mat, arr, axes=([1], [axis])), 0, axis)


def multi_ttm(arr: np.ndarray, mats: Sequence[Optional[np.ndarray]], transpose: bool = False) -> np.ndarray:
    out = arr
    for axis, mat in enumerate(mats):
        if mat is None:
            continue
        out = ttm(out, mat.T if transpose else mat, axis)
    return out


# public operations

def matricize(t: DenseTensor, mode: int) -> ModeMatrix:
    axis = _check_mode(mode, t.order, "matricize")
    return ModeMatrix(mode=axis + 1, data=unfold(t.data, axis), tensor_shape=t.shape)


def fold(m: ModeMatrix, mode: int, shape: Sequence[int]) -> DenseTensor:
    shape = tuple(int(s) for s in shape)
    axis = _check_mode(mode, len(shape), "fold")
    data = m.data if isinstance(m, ModeMatrix) else np.asarray(m)
    expected = (shape[axis], int(np.prod(shape)) // shape[axis])
    if data.ndim != 2 or data.shape != expected:
        raise ShapeError(
            f"matrix of shape {data.shape} does not fold into {shape} along mode {mode}",
            OperationContext("fold", mode=mode, shape=shape),
        )
    return DenseTensor(refold(data, axis, shape))


def mode_product(t: DenseTensor, mode: int, A: np.ndarray) -> DenseTensor:
    axis = _check_mode(mode, t.order, "mode_product")
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] != t.shape[axis]:
        raise ShapeError(
            f"matrix {A.shape} incompatible with mode {mode} of size {t.shape[axis]}",
            OperationContext("mode_product", mode=mode, shape=t.shape),
        )
    return DenseTensor(ttm(t.data, A, axis))


def multilinear_transform(x: DenseTensor, mats: Sequence[Optional[np.ndarray]], transpose: bool = False) -> DenseTensor:
    """Apply ``mats[mu]`` (or its transpose) along every mode; ``None`` leaves a mode untouched."""
    if len(mats) != x.order:
        raise ShapeError(
            f"expected {x.order} matrices, got {len(mats)}",
            OperationContext("multilinear_transform", shape=x.shape),
        )
    prepared = []
    for axis, mat in enumerate(mats):
        if mat is None:
            prepared.append(None)
            continue
        mat = np.asarray(mat, dtype=np.float64)
        if mat.ndim != 2 or (mat.shape[0] if transpose else mat.shape[1]) != x.shape[axis]:
            raise ShapeError(
                f"matrix {mat.shape} incompatible with mode {axis + 1} of size {x.shape[axis]}",
                OperationContext("multilinear_transform", mode=axis + 1, shape=x.shape),
            )
        prepared.append(mat)
    return DenseTensor(multi_ttm(x.data, prepared, transpose=transpose))
