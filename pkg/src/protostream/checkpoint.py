"""Binary and CSV serialization for mixture states and prototype matrices.

Checkpoint layout (little-endian): magic ``PDGM``, u32 version, u32 K,
u32 D, u64 step, then weights (K f64), means (K*D f64 row-major), variances
(K*D f64), and the sufficient statistics in the same order (counts K f64,
first moments K*D f64, second moments K*D f64).  A state saved before its
first update stores zero statistics and loads back with ``suffstats=None``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .mixture import MixtureState, SufficientStats

MAGIC = b"PDGM"
VERSION = 1

_HEADER = struct.Struct("<4sIIIQ")


class CheckpointError(ValueError):
    """Malformed checkpoint or matrix file; carries the failing byte offset."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def save_checkpoint(state: MixtureState, path: str | Path) -> None:
    k, d = state.k, state.d
    if state.suffstats is None:
        s_pi = np.zeros(k)
        s_mu = np.zeros((k, d))
        s_sigma = np.zeros((k, d))
    else:
        s_pi = state.suffstats.s_pi
        s_mu = state.suffstats.s_mu
        s_sigma = state.suffstats.s_sigma
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, k, d, state.step))
        for arr in (state.weights, state.means, state.variances, s_pi, s_mu, s_sigma):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> MixtureState:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError("file too short for header", len(raw))
    magic, version, k, d, step = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}", 4)
    offset = _HEADER.size
    sizes = [k, k * d, k * d, k, k * d, k * d]
    expected = offset + 8 * sum(sizes)
    if len(raw) != expected:
        raise CheckpointError(
            f"expected {expected} bytes for K={k}, D={d}, got {len(raw)}",
            min(len(raw), expected),
        )
    arrays = []
    for size in sizes:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset
                                    ).astype(np.float64))
        offset += 8 * size
    weights, means, variances, s_pi, s_mu, s_sigma = arrays
    suffstats = None
    if step > 0:
        suffstats = SufficientStats(
            s_pi, s_mu.reshape(k, d), s_sigma.reshape(k, d)
        )
    return MixtureState(
        weights, means.reshape(k, d), variances.reshape(k, d), suffstats, int(step)
    )


def save_state_csv(state: MixtureState, directory: str | Path) -> list[Path]:
    """Lossless text export, one CSV per array (debugging aid)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    arrays = {
        "weights": state.weights[None, :],
        "means": state.means,
        "variances": state.variances,
    }
    if state.suffstats is not None:
        arrays["s_pi"] = state.suffstats.s_pi[None, :]
        arrays["s_mu"] = state.suffstats.s_mu
        arrays["s_sigma"] = state.suffstats.s_sigma
    for name, arr in arrays.items():
        path = directory / f"{name}.csv"
        write_matrix_csv(arr, path)
        written.append(path)
    return written


def write_matrix_csv(matrix: np.ndarray, path: str | Path) -> None:
    """Write a matrix as CSV with header ``d0,...,d{D-1}`` and 17-digit floats."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    header = ",".join(f"d{i}" for i in range(matrix.shape[1]))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in matrix:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    text = Path(path).read_bytes()
    lines = text.split(b"\n")
    if not lines or not lines[0].strip():
        raise CheckpointError("empty matrix file", 0)
    header = lines[0].decode("utf-8", errors="replace").strip()
    cols = header.split(",")
    if cols != [f"d{i}" for i in range(len(cols))]:
        raise CheckpointError(f"bad header {header!r}", 0)
    rows = []
    offset = len(lines[0]) + 1
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if stripped:
            parts = stripped.split(b",")
            if len(parts) != len(cols):
                raise CheckpointError(
                    f"row {lineno} has {len(parts)} values, expected {len(cols)}",
                    offset,
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise CheckpointError(f"row {lineno} is not numeric", offset) from None
        offset += len(line) + 1
    if not rows:
        raise CheckpointError("matrix file has no data rows", offset)
    return np.array(rows, dtype=np.float64)


def load_matrix(path: str | Path) -> np.ndarray:
    """Load a row matrix from either a checkpoint (its means) or a CSV file."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return load_checkpoint(path).means
    return read_matrix_csv(path)
