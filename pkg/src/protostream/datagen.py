"""Synthetic class-structured data with optional power-law long tails.

Classes are Gaussian blobs around random unit directions.  In longtail mode
class c receives a share proportional to (c+1)**(-exponent), so early classes
are heavy and late ones sparse; classes are then bucketed into head, medium,
and tail by their training counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DataSpec:
    mode: str = "balanced"  # "balanced" or "longtail"
    n_classes: int = 8
    input_dim: int = 32
    n_samples: int = 2048
    spread: float = 0.25
    exponent: float = 1.5
    head_min: int = 100  # head classes have more than this many train samples
    tail_max: int = 20   # tail classes have at most this many train samples
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.mode not in ("balanced", "longtail"):
            raise ValueError(f"unknown data mode {self.mode!r}")
        if self.n_classes < 1 or self.n_samples < self.n_classes:
            raise ValueError("need at least one sample per class")
        if self.tail_max >= self.head_min:
            raise ValueError("tail_max must be below head_min")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    centers: np.ndarray
    train_counts: np.ndarray  # per-class training-sample counts
    buckets: dict = field(default_factory=dict)  # class -> head/medium/tail


def class_sizes(spec: DataSpec) -> np.ndarray:
    if spec.mode == "balanced":
        base = spec.n_samples // spec.n_classes
        sizes = np.full(spec.n_classes, base, dtype=np.int64)
        sizes[: spec.n_samples - base * spec.n_classes] += 1
        return sizes
    shares = (np.arange(1, spec.n_classes + 1, dtype=np.float64)) ** (-spec.exponent)
    shares /= shares.sum()
    sizes = np.maximum(np.round(shares * spec.n_samples).astype(np.int64), 3)
    return sizes


def bucket_of(train_count: int, spec: DataSpec) -> str:
    if train_count > spec.head_min:
        return "head"
    if train_count <= spec.tail_max:
        return "tail"
    return "medium"


def make_dataset(spec: DataSpec, rng: np.random.Generator) -> Dataset:
    sizes = class_sizes(spec)
    centers = rng.standard_normal((spec.n_classes, spec.input_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    xs_train, ys_train, xs_test, ys_test = [], [], [], []
    train_counts = np.zeros(spec.n_classes, dtype=np.int64)
    for c, size in enumerate(sizes):
        pts = centers[c] + spec.spread * rng.standard_normal((size, spec.input_dim))
        n_test = max(1, int(round(spec.test_fraction * size)))
        n_train = size - n_test
        xs_train.append(pts[:n_train])
        ys_train.append(np.full(n_train, c, dtype=np.int64))
        xs_test.append(pts[n_train:])
        ys_test.append(np.full(n_test, c, dtype=np.int64))
        train_counts[c] = n_train
    buckets = {c: bucket_of(int(train_counts[c]), spec)
               for c in range(spec.n_classes)}
    return Dataset(
        x_train=np.vstack(xs_train),
        y_train=np.concatenate(ys_train),
        x_test=np.vstack(xs_test),
        y_test=np.concatenate(ys_test),
        centers=centers,
        train_counts=train_counts,
        buckets=buckets,
    )


def make_views(x: np.ndarray, n_views: int, noise: float, dropout: float,
               rng: np.random.Generator) -> np.ndarray:
    """Stochastic views: additive Gaussian noise plus coordinate dropout."""
    b, d = x.shape
    views = np.empty((n_views, b, d))
    for j in range(n_views):
        v = x + noise * rng.standard_normal((b, d))
        if dropout > 0.0:
            mask = rng.random((b, d)) >= dropout
            v = v * mask
        views[j] = v
    return views
