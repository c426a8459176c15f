"""
Binary tensor files and CSV matrices.

DTF1 layout (all little-endian):

    4 bytes   magic ``DTF1``
    u32       order d
    d x u64   dimensions n_1 .. n_d
    float64   payload, mode 1 varying fastest

Graph bases are stored as a pair: ``<prefix>.dtf`` holds the eigenvector
matrix, ``<prefix>.csv`` the eigenvalues with the graph provenance.
"""
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from core.exceptions import MLRTGError, TensorIOError
from core.tensor_core import DenseTensor
from engine.graph_laplacian import GraphBasis

logger = logging.getLogger(__name__)

MAGIC = b"DTF1"
PathLike = Union[str, Path]


def write_tensor(path: PathLike, t: DenseTensor) -> Path:
    path = Path(path)
    header = MAGIC + struct.pack("<I", t.order) + struct.pack(f"<{t.order}Q", *t.shape)
    payload = t.vec().astype("<f8").tobytes()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + payload)
    except OSError as e:
        raise TensorIOError(f"cannot write tensor: {e}", path=str(path))
    logger.debug("wrote %s %s", path, t.shape)
    return path


def read_tensor(path: PathLike) -> DenseTensor:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise TensorIOError(f"cannot read tensor: {e}", path=str(path))
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise TensorIOError("not a DTF1 file", path=str(path))
    (order,) = struct.unpack_from("<I", raw, 4)
    header_len = 8 + 8 * order
    if order < 2 or len(raw) < header_len:
        raise TensorIOError(f"corrupt header (order {order})", path=str(path))
    shape = struct.unpack_from(f"<{order}Q", raw, 8)
    count = int(np.prod(shape))
    if len(raw) - header_len != 8 * count:
        raise TensorIOError(
            f"payload has {len(raw) - header_len} bytes, shape {shape} needs {8 * count}",
            path=str(path),
        )
    values = np.frombuffer(raw, dtype="<f8", offset=header_len, count=count)
    try:
        return DenseTensor.from_vec(values.astype(np.float64), shape)
    except MLRTGError as e:
        raise TensorIOError(str(e), path=str(path))


def write_matrix_csv(path: PathLike, m: np.ndarray) -> Path:
    path = Path(path)
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(m).to_csv(path, header=False, index=False, float_format="%.17g")
    except OSError as e:
        raise TensorIOError(f"cannot write matrix: {e}", path=str(path))
    return path


def read_matrix_csv(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise TensorIOError(f"cannot read matrix: {e}", path=str(path))
    try:
        return frame.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise TensorIOError(f"non-numeric matrix entries: {e}", path=str(path))


def read_matrix(path: PathLike) -> np.ndarray:
    """Factor or basis matrix from either a CSV file or an order-2 DTF1 file."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_matrix_csv(path)
    return np.array(read_tensor(path).data)


def save_basis(prefix: PathLike, basis: GraphBasis) -> Path:
    prefix = Path(prefix)
    write_tensor(prefix.with_suffix(".dtf"), DenseTensor(basis.eigenvectors))
    table = pd.DataFrame({
        "index": np.arange(1, basis.k + 1),
        "eigenvalue": basis.eigenvalues,
        "k_nn": basis.k_nn if basis.k_nn is not None else -1,
        "kernel_width": basis.kernel_width if basis.kernel_width is not None else np.nan,
    })
    csv_path = prefix.with_suffix(".csv")
    try:
        table.to_csv(csv_path, index=False, float_format="%.17g")
    except OSError as e:
        raise TensorIOError(f"cannot write eigenvalues: {e}", path=str(csv_path))
    return prefix


def load_basis(prefix: PathLike) -> GraphBasis:
    prefix = Path(prefix)
    vecs = read_tensor(prefix.with_suffix(".dtf")).data
    csv_path = prefix.with_suffix(".csv")
    try:
        table = pd.read_csv(csv_path, float_precision="round_trip")
        vals = table["eigenvalue"].to_numpy(dtype=np.float64)
    except (OSError, KeyError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise TensorIOError(f"cannot read eigenvalues: {e}", path=str(csv_path))
    if vals.size != vecs.shape[1]:
        raise TensorIOError(
            f"{vals.size} eigenvalues for {vecs.shape[1]} eigenvectors",
            path=str(csv_path),
        )
    k_nn = int(table["k_nn"].iloc[0]) if "k_nn" in table and table["k_nn"].iloc[0] >= 0 else None
    width = float(table["kernel_width"].iloc[0]) if "kernel_width" in table else float("nan")
    return GraphBasis(
        eigenvectors=np.array(vecs),
        eigenvalues=vals,
        k_nn=k_nn,
        kernel_width=None if np.isnan(width) else width,
    )
