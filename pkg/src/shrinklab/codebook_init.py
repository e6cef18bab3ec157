"""Codebook initialization.

Pools encoder embeddings (untrained or pretrained encoder) and runs
k-means++ seeding plus Lloyd iterations to place the initial tokens. The
Lloyd objective (total squared distance of each embedding to its nearest
center) is asserted non-increasing every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Mlp
from .quantizer import Codebook
from .rngs import derived_rng
from .synth import LabeledDataset

INIT_MODES = ("untrained_encoder", "pretrained_encoder", "random_uniform")

_BATCH = 256


@dataclass
class EmbeddingPool:
    embeddings: np.ndarray  # (N, d)
    source: str  # "untrained" | "pretrained"
    ratio: float  # N / codebook size

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def collect_embeddings(encoder: Mlp, dataset: LabeledDataset, target_ratio: float,
                       codebook_size: int, seed: int, source: str = "untrained") -> EmbeddingPool:
    """Encode uniformly sampled batches until ratio*S embeddings are pooled."""
    needed = math.ceil(target_ratio * codebook_size)
    if needed > len(dataset):
        raise ValueError(
            f"dataset of {len(dataset)} points is too small for ratio {target_ratio} x {codebook_size} tokens"
        )
    rng = derived_rng(seed, 0xC0)
    picks = rng.choice(len(dataset), size=needed, replace=False)
    chunks = [encoder.forward(dataset.points[picks[i : i + _BATCH]], cache=False) for i in range(0, needed, _BATCH)]
    embeddings = np.concatenate(chunks, axis=0)
    return EmbeddingPool(embeddings=embeddings, source=source, ratio=len(embeddings) / codebook_size)


def _kmeans_pp_seed(points: np.ndarray, s: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding; zero-distance duplicates can never be re-picked."""
    n = points.shape[0]
    centers = np.empty((s, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, s):
        total = d2.sum()
        if total <= 0:
            raise ValueError(f"duplicate-center fault: fewer than {s} distinct pool points")
        cdf = np.cumsum(d2 / total)
        idx = min(int(np.searchsorted(cdf, rng.random(), side="right")), n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iters: int, tol: float) -> tuple[np.ndarray, list[float]]:
    s = centers.shape[0]
    history: list[float] = []
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        objective = float(d2[np.arange(points.shape[0]), labels].sum())
        # monotone by construction; the slack only absorbs float rounding
        if history and objective > history[-1] + 1e-9 * max(1.0, history[-1]):
            raise AssertionError("Lloyd objective increased across an iteration")
        history.append(objective)

        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=s)
        for k in range(s):
            if counts[k]:
                new_centers[k] = points[labels == k].mean(axis=0)
        for k in np.flatnonzero(counts == 0):
            # deterministic empty-cluster repair: steal the farthest member
            # of the (currently) largest cluster
            donor = int(np.argmax(counts))
            members = np.flatnonzero(labels == donor)
            dists = ((points[members] - new_centers[donor]) ** 2).sum(axis=1)
            steal = members[int(np.argmax(dists))]
            new_centers[k] = points[steal]
            labels[steal] = k
            counts[donor] -= 1
            counts[k] += 1

        shift = float(np.max(np.sqrt(((new_centers - centers) ** 2).sum(axis=1))))
        centers = new_centers
        if shift < tol:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    objective = float(d2.min(axis=1).sum())
    if history and objective > history[-1] + 1e-9 * max(1.0, history[-1]):
        raise AssertionError("Lloyd objective increased at convergence")
    history.append(objective)
    return centers, history


def kmeans_init(pool: EmbeddingPool, s: int, max_iters: int = 100, tol: float = 1e-7,
                seed: int = 0, return_history: bool = False):
    """k-means++ seeding then Lloyd iterations; returns the S centers as tokens."""
    points = np.asarray(pool.embeddings, dtype=float)
    if np.unique(points, axis=0).shape[0] < s:
        raise ValueError(f"duplicate-center fault: fewer than {s} distinct pool points")
    rng = derived_rng(seed, 0xB0)
    centers = _kmeans_pp_seed(points, s, rng)
    centers, history = _lloyd(points, centers, max_iters, tol)
    if return_history:
        return centers, history
    return centers


def init_codebook(mode: str, encoder: Mlp | None, dataset: LabeledDataset, size: int, *,
                  ratio: float = 10.0, seed: int = 0, decay: float = 0.9, beta: float = 0.25,
                  max_iters: int = 100, tol: float = 1e-7) -> Codebook:
    """Build the initial codebook for one training run.

    Encoder modes pool embeddings from the given encoder and run k-means;
    `random_uniform` draws tokens uniformly from the bounding box of a small
    embedding sample (ablation control). EMA statistics are seeded as one
    prior assignment per token.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    if encoder is None:
        raise ValueError(f"init mode {mode!r} requires an encoder")
    source = "pretrained" if mode == "pretrained_encoder" else "untrained"
    pool = collect_embeddings(encoder, dataset, ratio, size, seed, source=source)
    if mode == "random_uniform":
        rng = derived_rng(seed, 0xD0)
        lo = pool.embeddings.min(axis=0)
        hi = pool.embeddings.max(axis=0)
        tokens = rng.uniform(lo, hi, size=(size, pool.embeddings.shape[1]))
    else:
        tokens = kmeans_init(pool, size, max_iters=max_iters, tol=tol, seed=seed)
    return Codebook.from_tokens(tokens, decay=decay, beta=beta, initial_count=1.0)
