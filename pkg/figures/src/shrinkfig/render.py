"""The four figure kinds.

scatter_tokens_vs_embeddings   codebook.csv embeddings.csv [codebook2 embeddings2]
recon_histogram                reconstructions.csv [dataset.csv]
metric_curves                  trainlog.csv [trainlog2.csv]
embedding_histogram            embeddings.csv [embeddings2.csv]

When two series are supplied the figure overlays them (baseline vs deferred
style). Histogram series within one figure share bin edges so identical
inputs produce identical counts bin for bin.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("scatter_tokens_vs_embeddings", "recon_histogram", "metric_curves",
                "embedding_histogram")

HIST_BINS = 60
SERIES_COLORS = ("#1f77b4", "#d62728")

TRAINLOG_COLUMNS = ("epoch", "loss", "mse", "commit", "codebook", "perplexity",
                    "mean_pairwise_dist")


@dataclass
class FigureSpec:
    kind: str
    inputs: list[str]
    output: str

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected one of {FIGURE_KINDS}")
        if not self.inputs:
            raise ValueError("at least one input artifact is required")


@dataclass
class RenderResult:
    """Output path plus the plotted series data (for downstream checks)."""

    path: str
    data: dict = field(default_factory=dict)


def _read_csv(path: str) -> tuple[list[str], np.ndarray]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"artifact not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if len(lines) < 2:
        raise ValueError(f"malformed artifact {path}: no data rows")
    header = lines[0].split(",")
    try:
        values = np.array([[float(cell) for cell in line.split(",")] for line in lines[1:]])
    except ValueError as exc:
        raise ValueError(f"malformed artifact {path}: {exc}") from exc
    if values.shape[1] != len(header):
        raise ValueError(f"malformed artifact {path}: ragged rows")
    return header, values


def load_points(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Point-cloud CSV (dataset/embeddings/reconstructions): coords [+ label]."""
    header, values = _read_csv(path)
    if "label" in header:
        idx = header.index("label")
        coords = np.delete(values, idx, axis=1)
        return coords, values[:, idx].astype(int)
    return values, None


def load_codebook(path: str) -> np.ndarray:
    """Codebook dump `token_id,usage_count,c0,...` (usage column optional)."""
    header, values = _read_csv(path)
    coord_cols = [i for i, name in enumerate(header) if name.startswith("c") and name[1:].isdigit()]
    if header[0] != "token_id" or not coord_cols:
        raise ValueError(f"malformed artifact {path}: expected token_id[,usage_count],c0,...")
    return values[:, coord_cols]


def load_trainlog(path: str) -> dict[str, np.ndarray]:
    header, values = _read_csv(path)
    if list(header) != list(TRAINLOG_COLUMNS):
        raise ValueError(f"malformed artifact {path}: expected columns {','.join(TRAINLOG_COLUMNS)}")
    return {name: values[:, i] for i, name in enumerate(header)}


def _series_name(path: str) -> str:
    parts = os.path.normpath(path).split(os.sep)
    return parts[-3] if len(parts) >= 3 else os.path.splitext(parts[-1])[0]


def _shared_edges(series: list[np.ndarray], bins: int) -> np.ndarray:
    lo = min(float(s.min()) for s in series)
    hi = max(float(s.max()) for s in series)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def _histogram_panels(series: list[tuple[str, np.ndarray]], bins: int):
    """Per-dimension histograms with shared edges; returns (fig, data)."""
    dim = series[0][1].shape[1]
    for name, pts in series:
        if pts.shape[1] != dim:
            raise ValueError(f"artifact dimension mismatch: {name} has {pts.shape[1]} columns, expected {dim}")
    fig, axes = plt.subplots(1, dim, figsize=(4 * dim, 3), squeeze=False)
    data = {name: [] for name, _ in series}
    for j in range(dim):
        edges = _shared_edges([pts[:, j] for _, pts in series], bins)
        for k, (name, pts) in enumerate(series):
            counts, _ = np.histogram(pts[:, j], bins=edges)
            data[name].append(counts)
            axes[0][j].stairs(counts, edges, label=name, color=SERIES_COLORS[k % 2],
                              fill=(len(series) == 1), alpha=0.8 if len(series) > 1 else 0.6)
        axes[0][j].set_xlabel(f"dim {j}")
        axes[0][j].set_ylabel("count")
    axes[0][0].legend(fontsize=8)
    return fig, data


def _render_scatter(spec: FigureSpec) -> tuple[plt.Figure, dict]:
    if len(spec.inputs) not in (2, 4):
        raise ValueError("scatter_tokens_vs_embeddings expects CODEBOOK EMBEDDINGS "
                         "[CODEBOOK2 EMBEDDINGS2]")
    pairs = [(spec.inputs[i], spec.inputs[i + 1]) for i in range(0, len(spec.inputs), 2)]
    fig, axes = plt.subplots(1, len(pairs), figsize=(5.5 * len(pairs), 5), squeeze=False)
    data = {}
    for ax, (cb_path, emb_path) in zip(axes[0], pairs):
        tokens = load_codebook(cb_path)
        embeddings, labels = load_points(emb_path)
        color = labels if labels is not None else None
        ax.scatter(embeddings[:, 0], embeddings[:, 1] if embeddings.shape[1] > 1 else np.zeros(len(embeddings)),
                   c=color, cmap="tab10", s=4, alpha=0.35, linewidths=0)
        ax.scatter(tokens[:, 0], tokens[:, 1] if tokens.shape[1] > 1 else np.zeros(len(tokens)),
                   marker="x", c="black", s=36, linewidths=1.2, label=f"tokens ({len(tokens)})")
        ax.set_title(_series_name(cb_path))
        ax.legend(fontsize=8)
        data[_series_name(cb_path)] = {"tokens": len(tokens), "embeddings": len(embeddings)}
    return fig, data


def _render_recon_histogram(spec: FigureSpec) -> tuple[plt.Figure, dict]:
    if len(spec.inputs) not in (1, 2):
        raise ValueError("recon_histogram expects RECONSTRUCTIONS [DATASET]")
    names = ["reconstructions", "dataset"]
    series = [(names[i], load_points(path)[0]) for i, path in enumerate(spec.inputs)]
    fig, data = _histogram_panels(series, HIST_BINS)
    fig.suptitle("reconstruction histogram")
    return fig, data


def _render_metric_curves(spec: FigureSpec) -> tuple[plt.Figure, dict]:
    if len(spec.inputs) not in (1, 2):
        raise ValueError("metric_curves expects TRAINLOG [TRAINLOG2]")
    logs = [(_series_name(path), load_trainlog(path)) for path in spec.inputs]
    panels = [("mse", "reconstruction MSE", True), ("perplexity", "perplexity", False),
              ("mean_pairwise_dist", "mean pairwise token distance", False),
              ("loss", "total loss", True)]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    data = {name: {} for name, _ in logs}
    for ax, (column, title, logy) in zip(axes.ravel(), panels):
        for k, (name, log) in enumerate(logs):
            ax.plot(log["epoch"], log[column], label=name, color=SERIES_COLORS[k % 2])
            data[name][column] = log[column]
        if logy:
            ax.set_yscale("log")
        ax.set_title(title)
        ax.set_xlabel("epoch")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    return fig, data


def _render_embedding_histogram(spec: FigureSpec) -> tuple[plt.Figure, dict]:
    if len(spec.inputs) not in (1, 2):
        raise ValueError("embedding_histogram expects EMBEDDINGS [EMBEDDINGS2]")
    series = [(_series_name(path), load_points(path)[0]) for path in spec.inputs]
    fig, data = _histogram_panels(series, HIST_BINS)
    fig.suptitle("encoder output distribution")
    return fig, data


_RENDERERS = {
    "scatter_tokens_vs_embeddings": _render_scatter,
    "recon_histogram": _render_recon_histogram,
    "metric_curves": _render_metric_curves,
    "embedding_histogram": _render_embedding_histogram,
}


def render(spec: FigureSpec) -> RenderResult:
    """Write the figure image; returns the path and the plotted series data."""
    fig, data = _RENDERERS[spec.kind](spec)
    out_dir = os.path.dirname(os.path.abspath(spec.output))
    os.makedirs(out_dir, exist_ok=True)
    fig.savefig(spec.output, dpi=120)
    plt.close(fig)
    return RenderResult(path=spec.output, data=data)
