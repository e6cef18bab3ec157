"""Synthetic Gaussian-mixture datasets: generation, standardization, labeling.

The data model is K equally weighted Gaussian components with distinct means
and a shared isotropic standard deviation. Generated sets are standardized
column-wise (zero mean, unit variance) and keep the fitted scaler so points
can be mapped back to raw coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .artifacts import atomic_write_text, csv_text
from .rngs import derived_rng


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """K-component mixture: equal weights, shared std, distinct means."""

    num_components: int
    points_per_component: int
    dim: int
    means: np.ndarray  # (K, dim)
    std: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float).reshape(self.num_components, self.dim))
        if self.num_components < 1:
            raise ValueError("num_components must be >= 1")
        if self.points_per_component < 1:
            raise ValueError("points_per_component must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.std > 0:
            raise ValueError("std must be positive")
        for i in range(self.num_components):
            for j in range(i + 1, self.num_components):
                if np.array_equal(self.means[i], self.means[j]):
                    raise ValueError(f"duplicate component means at indices {i} and {j}")

    @property
    def size(self) -> int:
        return self.num_components * self.points_per_component


@dataclass
class LabeledDataset:
    """Standardized points with their source-component labels and the fitted scaler."""

    points: np.ndarray  # (N, dim)
    labels: np.ndarray  # (N,) int
    scaler_mean: np.ndarray = field(default=None)  # (dim,)
    scaler_std: np.ndarray = field(default=None)  # (dim,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scaler_mean is None:
            self.scaler_mean = np.zeros(self.points.shape[1])
        if self.scaler_std is None:
            self.scaler_std = np.ones(self.points.shape[1])

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_raw(self, points: np.ndarray | None = None) -> np.ndarray:
        """Map standardized coordinates back to the raw sampling frame."""
        pts = self.points if points is None else points
        return pts * self.scaler_std + self.scaler_mean

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.scaler_mean) / self.scaler_std


def default_means(num_components: int, dim: int, separation: float) -> np.ndarray:
    """Well-separated default means: a line for dim=1, a circle for dim>=2.

    dim=1 places components equally spaced with gap `separation`, centered at
    the origin. dim>=2 places them on a circle of radius `separation` in the
    first two coordinates (zeros elsewhere).
    """
    if num_components < 1:
        raise ValueError("num_components must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    means = np.zeros((num_components, dim))
    if dim == 1:
        offsets = (np.arange(num_components) - (num_components - 1) / 2.0) * separation
        means[:, 0] = offsets
    else:
        angles = 2.0 * np.pi * np.arange(num_components) / num_components
        means[:, 0] = separation * np.cos(angles)
        means[:, 1] = separation * np.sin(angles)
    return means


def generate(spec: GaussianMixtureSpec) -> LabeledDataset:
    """Sample the mixture, then standardize column-wise.

    Each component k draws from its own RNG stream keyed by (seed, k), so a
    component's points do not depend on K or on the other components. Row
    order is component-major.
    """
    blocks = []
    for k in range(spec.num_components):
        rng = derived_rng(spec.seed, k)
        blocks.append(spec.means[k] + spec.std * rng.standard_normal((spec.points_per_component, spec.dim)))
    raw = np.concatenate(blocks, axis=0)
    labels = np.repeat(np.arange(spec.num_components), spec.points_per_component)

    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    if np.any(std == 0):
        raise ValueError("cannot standardize a degenerate (zero-variance) dimension")
    return LabeledDataset(points=(raw - mean) / std, labels=labels, scaler_mean=mean, scaler_std=std)


def assign_to_component(points: np.ndarray, spec: GaussianMixtureSpec, means: np.ndarray | None = None) -> np.ndarray:
    """Nearest component mean per point (Euclidean, lowest index on ties).

    `means` overrides the spec means when the points live in a different
    frame (e.g. pass standardized means for standardized points).
    """
    points = np.asarray(points, dtype=float)
    centers = spec.means if means is None else np.asarray(means, dtype=float)
    if points.ndim != 2 or points.shape[1] != centers.shape[1]:
        raise ValueError(f"point dim {points.shape} does not match component dim {centers.shape[1]}")
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.int64)


def dataset_csv_text(dataset: LabeledDataset) -> str:
    header = [f"x{i}" for i in range(dataset.dim)] + ["label"]
    rows = ([*point, int(label)] for point, label in zip(dataset.points, dataset.labels))
    return csv_text(header, rows, exact=True)


def save_dataset_csv(path: str, dataset: LabeledDataset) -> None:
    """Export as CSV `x0,...,x{d-1},label`, one row per point, component-major order."""
    atomic_write_text(path, dataset_csv_text(dataset))
