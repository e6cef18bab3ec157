"""Independent brute-force and closed-form references for the test suite.

Nothing here shares code with the modules under test. Intended scale is
small (S <= 256, d <= 32, n <= 1e6); these are validation baselines, not
production paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rngs import derived_rng
from .synth import GaussianMixtureSpec


def _nearest_scan(points: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Linear scan over tokens; strictly-closer wins, so ties keep the lowest index."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    best_d2 = np.full(points.shape[0], np.inf)
    best_idx = np.zeros(points.shape[0], dtype=np.int64)
    for k in range(tokens.shape[0]):
        d2 = ((points - tokens[k]) ** 2).sum(axis=1)
        closer = d2 < best_d2
        best_d2[closer] = d2[closer]
        best_idx[closer] = k
    return best_idx


def exhaustive_nearest(z: np.ndarray, tokens: np.ndarray) -> int:
    """Index of the nearest token to one vector (lowest index on ties)."""
    tokens = np.asarray(tokens, dtype=float)
    if tokens.size == 0:
        raise ValueError("empty token set")
    return int(_nearest_scan(np.asarray(z, dtype=float).reshape(1, -1), tokens)[0])


@dataclass
class LloydMax1D:
    """Optimal scalar quantizer fit: sorted levels, midpoint boundaries, distortion."""

    levels: np.ndarray  # (S,)
    boundaries: np.ndarray  # (S-1,)
    distortion: float
    history: list[float]  # per-iteration distortion, non-increasing


def lloyd_max_1d(samples: np.ndarray, s: int, iters: int = 200, tol: float = 1e-12) -> LloydMax1D:
    """Alternating optimization on the empirical distribution.

    Levels are conditional means of their cells, boundaries are midpoints of
    adjacent levels. Initial levels are spread at the (k+0.5)/S quantiles.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if np.unique(x).size < s:
        raise ValueError(f"need at least {s} distinct samples")
    levels = np.quantile(x, (np.arange(s) + 0.5) / s)
    history: list[float] = []
    for _ in range(iters):
        boundaries = 0.5 * (levels[:-1] + levels[1:])
        cells = np.searchsorted(boundaries, x, side="right")
        distortion = float(((x - levels[cells]) ** 2).mean())
        if history and distortion > history[-1] + 1e-9 * max(1.0, history[-1]):
            raise AssertionError("Lloyd-Max distortion increased across an iteration")
        history.append(distortion)
        new_levels = levels.copy()
        for k in range(s):
            members = x[cells == k]
            if members.size:
                new_levels[k] = members.mean()
        shift = float(np.max(np.abs(new_levels - levels)))
        levels = np.sort(new_levels)
        if shift < tol:
            break
    boundaries = 0.5 * (levels[:-1] + levels[1:])
    cells = np.searchsorted(boundaries, x, side="right")
    distortion = float(((x - levels[cells]) ** 2).mean())
    if history and distortion > history[-1] + 1e-9 * max(1.0, history[-1]):
        raise AssertionError("Lloyd-Max distortion increased at convergence")
    history.append(distortion)
    return LloydMax1D(levels=levels, boundaries=boundaries, distortion=distortion, history=history)


def monte_carlo_distortion(spec: GaussianMixtureSpec, tokens: np.ndarray, n_samples: int, seed: int = 0) -> float:
    """Unbiased estimate of the expected squared quantization error.

    Draws fresh i.i.d. samples from the mixture (independent of any training
    set), quantizes with the exhaustive scan, and averages the squared error.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    tokens = np.asarray(tokens, dtype=float)
    if tokens.shape[1] != spec.dim:
        raise ValueError("token dim does not match mixture dim")
    rng = derived_rng(seed, 0xAC)
    components = rng.integers(spec.num_components, size=n_samples)
    x = spec.means[components] + spec.std * rng.standard_normal((n_samples, spec.dim))
    nearest = _nearest_scan(x, tokens)
    return float(((x - tokens[nearest]) ** 2).sum(axis=1).mean())
