"""Vector-quantization layer.

Nearest-token assignment, straight-through gradient routing, EMA codebook
updates, commitment/codebook losses, and usage tracking. Distances are plain
squared Euclidean differences (no expanded dot-product form) so ties resolve
identically to a direct linear scan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifacts import atomic_write_text, csv_text

# Additive smoothing for the EMA denominator. Kept small and absolute so a
# token receiving the same embedding every step converges to it within 1e-6.
EPS_LAPLACE = 1e-5

_ASSIGN_CHUNK = 512


@dataclass
class Codebook:
    """S token vectors plus EMA state and a usage histogram.

    `ema_cluster_size` / `ema_embed_sum` are the decayed assignment counts and
    assigned-embedding sums; `usage_counts` accumulates assignments during
    evaluation passes only.
    """

    tokens: np.ndarray  # (S, d)
    ema_cluster_size: np.ndarray = None  # (S,)
    ema_embed_sum: np.ndarray = None  # (S, d)
    usage_counts: np.ndarray = None  # (S,) int64
    decay: float = 0.9
    beta: float = 0.25

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=float)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1 or self.tokens.shape[1] < 1:
            raise ValueError("tokens must be a non-empty (S, d) matrix")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.ema_cluster_size is None:
            self.ema_cluster_size = np.zeros(self.size)
        if self.ema_embed_sum is None:
            self.ema_embed_sum = np.zeros_like(self.tokens)
        if self.usage_counts is None:
            self.usage_counts = np.zeros(self.size, dtype=np.int64)
        self.ema_cluster_size = np.asarray(self.ema_cluster_size, dtype=float)
        self.ema_embed_sum = np.asarray(self.ema_embed_sum, dtype=float)
        self.usage_counts = np.asarray(self.usage_counts, dtype=np.int64)
        if np.any(self.ema_cluster_size < 0):
            raise ValueError("ema_cluster_size entries must be >= 0")

    @classmethod
    def from_tokens(cls, tokens: np.ndarray, decay: float = 0.9, beta: float = 0.25,
                    initial_count: float = 1.0) -> "Codebook":
        """Seed EMA state as if each token had `initial_count` prior assignments."""
        tokens = np.asarray(tokens, dtype=float)
        return cls(
            tokens=tokens.copy(),
            ema_cluster_size=np.full(tokens.shape[0], float(initial_count)),
            ema_embed_sum=tokens * float(initial_count),
            decay=decay,
            beta=beta,
        )

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def reset_usage(self) -> None:
        self.usage_counts = np.zeros(self.size, dtype=np.int64)


@dataclass
class QuantizeResult:
    indices: np.ndarray  # (batch,)
    quantized: np.ndarray  # (batch, d), rows are exact token rows
    commit_loss: float  # beta * mean((z - sg(quantized))**2), per-element mean
    codebook_loss: float  # mean((sg(z) - quantized)**2), logged even under EMA
    straight_through_output: np.ndarray  # value = quantized; gradients route to z


def assign(z: np.ndarray, codebook: Codebook, track_usage: bool = False) -> np.ndarray:
    """Nearest token per row (Euclidean, lowest index on ties).

    With `track_usage`, accumulates the assignment histogram into
    `codebook.usage_counts` (evaluation-pass bookkeeping).
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != codebook.dim:
        raise ValueError(f"expected input (*, {codebook.dim}), got {z.shape}")
    tokens = codebook.tokens
    out = np.empty(z.shape[0], dtype=np.int64)
    for start in range(0, z.shape[0], _ASSIGN_CHUNK):
        chunk = z[start : start + _ASSIGN_CHUNK]
        d2 = ((chunk[:, None, :] - tokens[None, :, :]) ** 2).sum(axis=2)
        out[start : start + _ASSIGN_CHUNK] = np.argmin(d2, axis=1)
    if track_usage:
        codebook.usage_counts += np.bincount(out, minlength=codebook.size).astype(np.int64)
    return out


def quantize(z: np.ndarray, codebook: Codebook) -> QuantizeResult:
    """Assign, select token rows, and compute the quantization losses.

    The straight-through output equals the selected tokens bit-for-bit; its
    gradient contract is that downstream gradients pass to z unchanged.
    Losses are means over every element (batch x dim).
    """
    indices = assign(z, codebook)
    quantized = codebook.tokens[indices]
    residual_mse = float(((z - quantized) ** 2).mean())
    return QuantizeResult(
        indices=indices,
        quantized=quantized,
        commit_loss=codebook.beta * residual_mse,
        codebook_loss=residual_mse,
        straight_through_output=quantized,
    )


def ema_update(codebook: Codebook, z: np.ndarray, indices: np.ndarray) -> Codebook:
    """Decay-update the assignment statistics and refresh token positions.

    Tokens whose smoothed count is exactly zero are left untouched; others are
    set to ema_embed_sum / (ema_cluster_size + EPS_LAPLACE). A token that is
    never assigned therefore moves only through the smoothing denominator.
    """
    z = np.asarray(z, dtype=float)
    gamma = codebook.decay
    counts = np.bincount(indices, minlength=codebook.size).astype(float)
    sums = np.zeros_like(codebook.ema_embed_sum)
    np.add.at(sums, indices, z)
    codebook.ema_cluster_size = gamma * codebook.ema_cluster_size + (1.0 - gamma) * counts
    codebook.ema_embed_sum = gamma * codebook.ema_embed_sum + (1.0 - gamma) * sums
    live = codebook.ema_cluster_size > 0
    codebook.tokens[live] = codebook.ema_embed_sum[live] / (codebook.ema_cluster_size[live, None] + EPS_LAPLACE)
    return codebook


def perplexity(usage_counts: np.ndarray) -> float:
    """exp(entropy) of the usage distribution over nonzero entries.

    Computed in base 2 so the uniform case is exact for power-of-two sizes;
    the result is clamped into the mathematical range [1, S].
    """
    counts = np.asarray(usage_counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("perplexity requires at least one nonzero usage count")
    p = counts[counts > 0] / total
    bits = -(p * np.log2(p)).sum()
    return float(min(max(np.exp2(bits), 1.0), counts.size))


def mean_pairwise_distance(tokens: np.ndarray) -> float:
    """Mean Euclidean distance over all unordered token pairs."""
    tokens = np.asarray(tokens, dtype=float)
    s = tokens.shape[0]
    if s < 2:
        raise ValueError("mean_pairwise_distance needs at least 2 tokens")
    d2 = ((tokens[:, None, :] - tokens[None, :, :]) ** 2).sum(axis=2)
    iu = np.triu_indices(s, k=1)
    return float(np.sqrt(d2[iu]).mean())


def codebook_csv_text(codebook: Codebook) -> str:
    header = ["token_id", "usage_count"] + [f"c{i}" for i in range(codebook.dim)]
    rows = ([i, int(codebook.usage_counts[i]), *codebook.tokens[i]] for i in range(codebook.size))
    return csv_text(header, rows, exact=True)


def save_codebook_csv(path: str, codebook: Codebook) -> None:
    """Dump as CSV `token_id,usage_count,c0,...,c{d-1}`."""
    atomic_write_text(path, codebook_csv_text(codebook))


def load_codebook_csv(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Parse a codebook dump; returns (tokens, usage or None).

    Accepts dumps without the usage_count column (external tools). Malformed
    lines raise ValueError naming the 1-based line number.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or not lines[0]:
        raise ValueError(f"{path}: line 1: empty codebook dump")
    header = lines[0].split(",")
    has_usage = "usage_count" in header
    coord_cols = [i for i, name in enumerate(header) if name.startswith("c") and name[1:].isdigit()]
    if header[0] != "token_id" or not coord_cols:
        raise ValueError(f"{path}: line 1: expected header token_id[,usage_count],c0,...")
    tokens, usage = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            tokens.append([float(cells[i]) for i in coord_cols])
            if has_usage:
                usage.append(int(cells[header.index("usage_count")]))
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    if not tokens:
        raise ValueError(f"{path}: line 2: no token rows")
    return np.asarray(tokens, dtype=float), (np.asarray(usage, dtype=np.int64) if has_usage else None)
