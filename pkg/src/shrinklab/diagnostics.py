"""Shrinkage diagnostics.

All quantities are pure functions of a model snapshot (or of externally
supplied codebook/embedding dumps): usage perplexity, mean pairwise token
distance, token-mass entropy over mixture components and its log-M bound,
quantization distortion, a Gaussian Frechet distance between point sets,
reconstruction mode coverage, and per-dimension embedding histograms with
peak counts. Entropies are in nats.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .artifacts import atomic_write_text, round9
from .nn import Mlp, MlpParams
from .quantizer import Codebook, assign, mean_pairwise_distance, perplexity
from .rngs import derived_rng
from .synth import GaussianMixtureSpec, LabeledDataset, assign_to_component

SCHEMA_VERSION = 1

COVERAGE_THRESHOLD = 1e-3  # fraction of reconstructions a component needs to count as covered
PEAK_PROMINENCE = 0.02  # of the max bin count
DEFAULT_BINS = 24  # wide enough that Poisson noise stays under the prominence threshold
PAIRWISE_MAX_POINTS = 2000
SIMPLEX_TOL = 1e-9
ENTROPY_BOUND_TOL = 1e-12


@dataclass
class DiagnosticsReport:
    """All shrinkage metrics for one snapshot; absent fields are None.

    A completed training run must produce every field finite; the partial
    (external-dump) path marks what it cannot compute as absent.
    """

    schema_version: int = SCHEMA_VERSION
    perplexity: float | None = None
    mean_pairwise_distance: float | None = None
    mode_entropy: float | None = None
    active_modes: int | None = None
    entropy_bound: float | None = None
    mode_masses: list[float] | None = None
    usage_weighted_masses: list[float] | None = None
    distortion: float | None = None
    frechet_distance: float | None = None
    mode_coverage: int | None = None
    pairwise_recon_distance: float | None = None
    covariance_warning: bool = False

    SCALAR_FIELDS = ("perplexity", "mean_pairwise_distance", "mode_entropy", "active_modes",
                     "entropy_bound", "distortion", "frechet_distance", "mode_coverage",
                     "pairwise_recon_distance")

    def require_complete(self) -> None:
        """Fail if any field is absent or non-finite (full-run contract)."""
        for name, value in asdict(self).items():
            if value is None:
                raise ValueError(f"diagnostics field {name!r} is absent")
            if isinstance(value, list):
                if not all(math.isfinite(v) for v in value):
                    raise ValueError(f"diagnostics field {name!r} contains non-finite entries")
            elif isinstance(value, (int, float)) and not math.isfinite(float(value)):
                raise ValueError(f"diagnostics field {name!r} is non-finite")

    def to_json(self) -> str:
        def clean(value):
            if isinstance(value, float):
                return round9(value)
            if isinstance(value, list):
                return [clean(v) for v in value]
            return value

        payload = {k: clean(v) for k, v in asdict(self).items()}
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def save(self, path: str) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "DiagnosticsReport":
        return cls(**json.loads(text))

    def scalar_items(self) -> list[tuple[str, float]]:
        return [(name, float(getattr(self, name))) for name in self.SCALAR_FIELDS
                if getattr(self, name) is not None]


def _validate_simplex(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError("expected a probability vector (entries >= 0, sum within 1e-9 of 1)")
    return p


def mode_entropy(p: np.ndarray) -> float:
    """Entropy in nats of a mass vector, with 0*ln(0) = 0."""
    p = _validate_simplex(p)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_bound_check(p: np.ndarray) -> tuple[float, int, bool]:
    """(entropy, support size, entropy <= ln(support)). Holds for every valid
    input; a failure indicates an implementation bug, not a model property."""
    p = _validate_simplex(p)
    h = mode_entropy(p)
    m = int((p > 0).sum())
    return h, m, h <= math.log(m) + ENTROPY_BOUND_TOL


def mode_masses(codebook: Codebook, spec: GaussianMixtureSpec, decoder: Mlp | None = None,
                means: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Token mass per mixture component, and the number of occupied components.

    Tokens are decoded before nearest-mean assignment; with `decoder=None`
    the latent space is taken to be the data space and tokens are assigned
    directly. `means` overrides the spec means (e.g. standardized frame).
    """
    points = codebook.tokens if decoder is None else decoder.forward(codebook.tokens, cache=False)
    labels = assign_to_component(points, spec, means=means)
    counts = np.bincount(labels, minlength=spec.num_components).astype(float)
    p = counts / counts.sum()
    return p, int((p > 0).sum())


def usage_weighted_masses(codebook: Codebook, spec: GaussianMixtureSpec, decoder: Mlp | None = None,
                          means: np.ndarray | None = None) -> np.ndarray:
    """Auxiliary view: component masses weighted by token usage instead of count."""
    points = codebook.tokens if decoder is None else decoder.forward(codebook.tokens, cache=False)
    labels = assign_to_component(points, spec, means=means)
    usage = codebook.usage_counts.astype(float)
    total = usage.sum()
    if total <= 0:
        return np.full(spec.num_components, np.nan)
    masses = np.zeros(spec.num_components)
    np.add.at(masses, labels, usage)
    return masses / total


def distortion(params: MlpParams | None, codebook: Codebook, points: np.ndarray) -> float:
    """Mean squared Euclidean error of the encode-quantize-decode round trip.

    The error is the squared norm per point (summed over dimensions),
    averaged over the dataset. `params=None` means identity encoder/decoder,
    i.e. pure codebook quantization in the data space.
    """
    points = np.asarray(points, dtype=float)
    if points.shape[0] == 0:
        raise ValueError("empty dataset")
    if params is None:
        out = codebook.tokens[assign(points, codebook)]
    else:
        z = params.encoder.forward(points, cache=False)
        out = params.decoder.forward(codebook.tokens[assign(z, codebook)], cache=False)
    return float(((out - points) ** 2).sum(axis=1).mean())


def _psd_sqrt(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetric PSD square root by eigendecomposition; returns clamp magnitude."""
    eigvals, eigvecs = np.linalg.eigh((mat + mat.T) / 2.0)
    clamp = float(max(0.0, -eigvals.min())) if eigvals.size else 0.0
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T, clamp


def frechet_gaussian_distance(a: np.ndarray, b: np.ndarray, _warn: list | None = None) -> float:
    """Squared 2-Wasserstein distance between Gaussian fits of two point sets.

    ||mu_a - mu_b||^2 + tr(Sa + Sb - 2(Sa Sb)^(1/2)); the cross term uses the
    symmetrized product sqrt(Sa) Sb sqrt(Sa) with negative eigenvalues clamped
    at 0. A clamp beyond tolerance flags degenerate covariance via `_warn`.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dim = a.shape[1]
    if a.shape[0] < dim + 1 or b.shape[0] < dim + 1:
        raise ValueError("each point set needs at least dim+1 points to fit a covariance")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(dim, dim)
    cov_b = np.cov(b, rowvar=False).reshape(dim, dim)
    root_a, clamp_a = _psd_sqrt(cov_a)
    cross, clamp_c = _psd_sqrt(root_a @ cov_b @ root_a)
    if _warn is not None and max(clamp_a, clamp_c) > 1e-8:
        _warn.append(max(clamp_a, clamp_c))
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def mode_coverage(reconstructions: np.ndarray, spec: GaussianMixtureSpec,
                  means: np.ndarray | None = None, threshold: float = COVERAGE_THRESHOLD) -> int:
    """Components receiving at least `threshold` fraction of the reconstructions."""
    reconstructions = np.asarray(reconstructions, dtype=float)
    if reconstructions.shape[0] == 0:
        raise ValueError("empty reconstruction set")
    labels = assign_to_component(reconstructions, spec, means=means)
    counts = np.bincount(labels, minlength=spec.num_components)
    return int((counts >= threshold * reconstructions.shape[0]).sum())


def pairwise_recon_distance(reconstructions: np.ndarray, max_points: int = PAIRWISE_MAX_POINTS,
                            seed: int = 0) -> float:
    """Mean pairwise Euclidean distance; exact up to `max_points`, then a
    deterministic subsample of that size."""
    pts = np.asarray(reconstructions, dtype=float)
    if pts.shape[0] == 0:
        raise ValueError("empty reconstruction set")
    if pts.shape[0] == 1:
        return 0.0
    if pts.shape[0] > max_points:
        picks = derived_rng(seed, 0xFA).choice(pts.shape[0], size=max_points, replace=False)
        pts = pts[picks]
    total = 0.0
    n = pts.shape[0]
    for i in range(0, n, 256):
        chunk = pts[i : i + 256]
        d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        total += np.sqrt(d2).sum()
    return float(total / (n * (n - 1)))  # sums include both (i,j) orders; diagonal is zero


@dataclass
class EmbeddingHistogram:
    edges: list[np.ndarray]  # per latent dimension
    counts: list[np.ndarray]
    peak_counts: list[int]
    peak_count: int  # max over dimensions


def _count_peaks(counts: np.ndarray) -> int:
    """Local maxima exceeding both neighbors by PEAK_PROMINENCE * max count."""
    if counts.max() <= 0:
        return 0
    prom = PEAK_PROMINENCE * counts.max()
    padded = np.concatenate([[0.0], counts.astype(float), [0.0]])
    mid = padded[1:-1]
    return int(((mid >= padded[:-2] + prom) & (mid >= padded[2:] + prom)).sum())


def embedding_histogram(encoder: Mlp | None, points: np.ndarray, bins: int = DEFAULT_BINS) -> EmbeddingHistogram:
    """Per-latent-dimension histogram over a full dataset pass, with peak counts."""
    if bins < 10:
        raise ValueError("bins must be >= 10")
    points = np.asarray(points, dtype=float)
    z = points if encoder is None else encoder.forward(points, cache=False)
    edges, counts, peaks = [], [], []
    for j in range(z.shape[1]):
        c, e = np.histogram(z[:, j], bins=bins)
        edges.append(e)
        counts.append(c)
        peaks.append(_count_peaks(c))
    return EmbeddingHistogram(edges=edges, counts=counts, peak_counts=peaks, peak_count=max(peaks))


def build_report(dataset: LabeledDataset, spec: GaussianMixtureSpec, codebook: Codebook,
                 params: MlpParams | None = None, means: np.ndarray | None = None) -> DiagnosticsReport:
    """Compute the full report for one snapshot.

    `means` gives the component means in the frame of `dataset.points` (for
    generated datasets, pass the standardized spec means). `params=None`
    evaluates the identity-map setting.
    """
    if means is None:
        means = dataset.standardize(spec.means)
    codebook.reset_usage()
    if params is None:
        z = dataset.points
        recons = codebook.tokens[assign(z, codebook, track_usage=True)]
    else:
        z = params.encoder.forward(dataset.points, cache=False)
        tokens = codebook.tokens[assign(z, codebook, track_usage=True)]
        recons = params.decoder.forward(tokens, cache=False)

    p, active = mode_masses(codebook, spec, decoder=None if params is None else params.decoder, means=means)
    h, m, holds = entropy_bound_check(p)
    if not holds:
        raise AssertionError("entropy bound H <= ln(M) violated; implementation bug")
    warn: list = []
    frechet = frechet_gaussian_distance(dataset.points, recons, _warn=warn)
    report = DiagnosticsReport(
        perplexity=perplexity(codebook.usage_counts),
        mean_pairwise_distance=mean_pairwise_distance(codebook.tokens),
        mode_entropy=h,
        active_modes=m,
        entropy_bound=math.log(m),
        mode_masses=[float(v) for v in p],
        usage_weighted_masses=[float(v) for v in usage_weighted_masses(codebook, spec,
                               decoder=None if params is None else params.decoder, means=means)],
        distortion=float(((recons - dataset.points) ** 2).sum(axis=1).mean()),
        frechet_distance=frechet,
        mode_coverage=mode_coverage(recons, spec, means=means),
        pairwise_recon_distance=pairwise_recon_distance(recons),
        covariance_warning=bool(warn),
    )
    report.require_complete()
    return report


def report_csv_rows(report: DiagnosticsReport, run: str, seed) -> list[list]:
    """Flat `run,seed,metric,value` rows for cross-run aggregation."""
    return [[run, seed, name, value] for name, value in report.scalar_items()]
