"""Desk-scale vector-quantization lab.

Trains small MLP VQ-VAEs on synthetic Gaussian mixtures, measures codebook
shrinkage (perplexity, pairwise token distance, mode entropy, distortion),
and compares from-scratch VQ training against the two-phase deferred
protocol (continuous autoencoder pretraining, then VQ fine-tuning with a
codebook seeded from the pretrained encoder).
"""

from .synth import GaussianMixtureSpec, LabeledDataset, assign_to_component, default_means, generate
from .quantizer import Codebook, QuantizeResult, assign, ema_update, mean_pairwise_distance, perplexity, quantize
from .nn import AdamWState, LinearLayer, Mlp, MlpParams, TrainingFault, adamw_step, mse_loss, relu_backward, relu_forward
from .codebook_init import EmbeddingPool, collect_embeddings, init_codebook, kmeans_init
from .trainer import TrainConfig, TrainLog, reconstruct, train_ae, train_baseline_vq, train_deferred_vq
from .diagnostics import DiagnosticsReport, build_report, distortion, entropy_bound_check, frechet_gaussian_distance, mode_entropy, mode_masses

__version__ = "0.1.0"
