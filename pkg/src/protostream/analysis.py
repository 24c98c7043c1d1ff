"""Data exports for prototype-distribution visualization.

Prototypes are projected to the plane with a two-component PCA (power
iteration with deflation), the planar distribution is summarized by a
Gaussian kernel density on a grid, and the angular distribution by a von
Mises-Fisher kernel density over [-pi, pi].  Everything is exported as CSV;
no plotting happens here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import i0 as bessel_i0

from .collapse import PrototypeMatrix, normalize_rows

logger = logging.getLogger(__name__)

_POWER_TOL = 1e-10
_POWER_MAX_ITER = 10_000


class DegenerateRankError(RuntimeError):
    """Input has fewer than two informative directions (or fewer than 3 rows)."""


@dataclass
class Projection2D:
    points: np.ndarray  # (K, 2)
    explained_variance: tuple  # fractions for the two components
    mean: np.ndarray  # (D,) centering vector
    basis: np.ndarray  # (D, 2), orthonormal columns


@dataclass
class KdeGrid:
    x: np.ndarray
    y: np.ndarray | None
    density: np.ndarray
    bandwidth: tuple
    kappa: float | None = None
    skipped_points: int = 0


def _power_iteration(matrix: np.ndarray, rng: np.random.Generator):
    v = rng.standard_normal(matrix.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(_POWER_MAX_ITER):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        w /= norm
        if np.linalg.norm(w - v) < _POWER_TOL:
            v = w
            break
        v = w
    return float(v @ matrix @ v), v


def _fix_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def pca_project(protos: PrototypeMatrix | np.ndarray) -> Projection2D:
    """Top-2 principal projection of the prototype rows.

    Directions come from iterated power method with deflation on the centered
    covariance; each direction's largest-magnitude coordinate is made
    positive so the output is sign-deterministic.
    """
    rows = protos.rows if isinstance(protos, PrototypeMatrix) else np.asarray(protos)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 3:
        raise DegenerateRankError(
            f"need at least 3 prototypes for a planar projection, got {rows.shape}"
        )
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / rows.shape[0]
    total = float(np.trace(cov))
    if total <= 0.0:
        raise DegenerateRankError("all prototypes identical")
    rng = np.random.default_rng(0)  # fixed stream: output depends only on input
    lam1, v1 = _power_iteration(cov, rng)
    deflated = cov - lam1 * np.outer(v1, v1)
    lam2, v2 = _power_iteration(deflated, rng)
    v2 -= (v2 @ v1) * v1  # re-orthogonalize against numerical drift
    norm2 = np.linalg.norm(v2)
    if lam2 <= 1e-12 * max(lam1, 1.0) or norm2 == 0.0:
        raise DegenerateRankError(
            f"second principal value {lam2:.3e} is negligible; rank < 2"
        )
    v2 /= norm2
    v1, v2 = _fix_sign(v1), _fix_sign(v2)
    basis = np.stack([v1, v2], axis=1)
    return Projection2D(
        points=centered @ basis,
        explained_variance=(lam1 / total, lam2 / total),
        mean=mean,
        basis=basis,
    )


@dataclass
class GridSpec2D:
    x_min: float = -1.1
    x_max: float = 1.1
    y_min: float = -1.1
    y_max: float = 1.1
    n: int = 64


def scott_bandwidth(points: np.ndarray) -> tuple:
    """Scott-style rule: per-axis standard deviation times K^(-1/6)."""
    k = points.shape[0]
    factor = k ** (-1.0 / 6.0)
    sx = float(np.std(points[:, 0]))
    sy = float(np.std(points[:, 1]))
    return (max(sx * factor, 1e-12), max(sy * factor, 1e-12))


def gaussian_kde2d(points: np.ndarray, grid: GridSpec2D | None = None,
                   bandwidth: float | tuple | None = None) -> KdeGrid:
    """Average of axis-aligned Gaussian kernels evaluated on a regular grid."""
    points = np.asarray(points, dtype=np.float64)
    if grid is None:
        grid = GridSpec2D()
    if bandwidth is None:
        bw = scott_bandwidth(points)
    elif np.isscalar(bandwidth):
        if bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        bw = (float(bandwidth), float(bandwidth))
    else:
        bw = (float(bandwidth[0]), float(bandwidth[1]))
        if bw[0] <= 0 or bw[1] <= 0:
            raise ValueError(f"bandwidth must be positive, got {bw}")
    xs = np.linspace(grid.x_min, grid.x_max, grid.n)
    ys = np.linspace(grid.y_min, grid.y_max, grid.n)
    dx = (xs[None, :, None] - points[None, None, :, 0]) / bw[0]
    dy = (ys[:, None, None] - points[None, None, :, 1]) / bw[1]
    kernels = np.exp(-0.5 * (dx * dx + dy * dy))
    density = kernels.sum(axis=2) / (points.shape[0] * 2.0 * np.pi * bw[0] * bw[1])
    return KdeGrid(x=xs, y=ys, density=density, bandwidth=bw)


def vmf_kde_angles(points2d: np.ndarray, kappa: float = 20.0,
                   n_samples: int = 1024) -> KdeGrid:
    """Von Mises-Fisher kernel density over the angles of planar points.

    Each point contributes exp(kappa*cos(a - a_i)) / (2*pi*I0(kappa)); zero
    length points carry no angle and are skipped (count reported on the grid).
    """
    if kappa <= 0.0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    points2d = np.asarray(points2d, dtype=np.float64)
    lengths = np.hypot(points2d[:, 0], points2d[:, 1])
    keep = lengths > 0.0
    skipped = int((~keep).sum())
    if skipped:
        logger.warning("vmf_kde_angles: skipping %d zero-length points", skipped)
    pts = points2d[keep]
    if pts.shape[0] == 0:
        raise ValueError("no nonzero points to estimate angles from")
    angles = np.arctan2(pts[:, 1], pts[:, 0])
    grid = np.linspace(-np.pi, np.pi, n_samples)
    norm = 2.0 * np.pi * float(bessel_i0(kappa))
    density = np.exp(kappa * np.cos(grid[:, None] - angles[None, :])).sum(axis=1)
    density /= pts.shape[0] * norm
    return KdeGrid(x=grid, y=None, density=density, bandwidth=(0.0, 0.0),
                   kappa=kappa, skipped_points=skipped)


def write_kde2d_csv(kde: KdeGrid, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# bandwidth_x={kde.bandwidth[0]:.17g} bandwidth_y={kde.bandwidth[1]:.17g}\n")
        fh.write("x_grid,y_grid,prob\n")
        for yi, y in enumerate(kde.y):
            for xi, x in enumerate(kde.x):
                fh.write(f"{x:.17g},{y:.17g},{kde.density[yi, xi]:.17g}\n")


def write_vmf_csv(kde: KdeGrid, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# kappa={kde.kappa:.17g} skipped={kde.skipped_points}\n")
        fh.write("x,prob\n")
        for x, p in zip(kde.x, kde.density):
            fh.write(f"{x:.17g},{p:.17g}\n")


def export_prototype_kde(rows: np.ndarray, out_prefix: str | Path,
                         kappa: float = 20.0, normalize: bool = True,
                         grid: GridSpec2D | None = None) -> dict:
    """Full pipeline: (normalize) -> PCA -> planar KDE + angular KDE -> CSVs."""
    protos = normalize_rows(rows) if normalize else PrototypeMatrix(
        np.asarray(rows, dtype=np.float64), normalized=False)
    projection = pca_project(protos)
    planar = gaussian_kde2d(projection.points, grid=grid)
    angular = vmf_kde_angles(projection.points, kappa=kappa)
    prefix = str(out_prefix)
    gauss_path = Path(prefix + "_gaussian_kde.csv")
    vmf_path = Path(prefix + "_vmf_kde.csv")
    write_kde2d_csv(planar, gauss_path)
    write_vmf_csv(angular, vmf_path)
    return {
        "gaussian_csv": gauss_path,
        "vmf_csv": vmf_path,
        "explained_variance": projection.explained_variance,
        "kappa": kappa,
        "bandwidth": planar.bandwidth,
    }
