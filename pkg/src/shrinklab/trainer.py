"""Training regimes.

- baseline_vq: VQ-VAE from scratch, codebook seeded from the untrained encoder.
- ae_pretrain: continuous autoencoder, no quantization anywhere in the path.
- deferred_vq: load pretrained weights, seed the codebook from the pretrained
  encoder, then train under the VQ objective.

One run is a single logical thread; independent runs may execute in parallel.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .artifacts import load_checkpoint, save_checkpoint
from .codebook_init import init_codebook
from .nn import AdamWState, MlpParams, TrainingFault, adamw_step, mse_loss
from .quantizer import Codebook, assign, ema_update, mean_pairwise_distance, perplexity, quantize
from .rngs import derived_rng
from .synth import LabeledDataset

REGIMES = ("baseline_vq", "ae_pretrain", "deferred_vq")
CODEBOOK_UPDATES = ("ema", "gradient")

TRAINLOG_HEADER = ["epoch", "loss", "mse", "commit", "codebook", "perplexity", "mean_pairwise_dist"]


@dataclass(frozen=True)
class TrainConfig:
    """One experiment's knobs. Reference values: S=128, hidden 32, batch 256,
    lr 0.001, beta 0.25, decay 0.9; 100 epochs for ae_pretrain and deferred_vq,
    200 for baseline_vq."""

    regime: str
    epochs: int
    latent_dim: int
    batch_size: int = 256
    lr: float = 1e-3
    beta: float = 0.25
    decay: float = 0.9
    codebook_size: int = 128
    hidden_dim: int = 32
    codebook_update: str = "ema"
    weight_decay: float = 0.01
    embed_ratio: float = 10.0
    seed: int = 0
    checkpoint_path: str | None = None
    pretrained_checkpoint: str | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.codebook_update not in CODEBOOK_UPDATES:
            raise ValueError(f"unknown codebook_update {self.codebook_update!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.latent_dim < 1:
            raise ValueError("epochs must be >= 0; batch_size and latent_dim >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mse: float
    commit: float  # unweighted mean residual; total = mse + beta*commit (+ codebook)
    codebook: float
    perplexity: float
    mean_pairwise_dist: float
    wall_clock: float

    def row(self) -> list:
        return [self.epoch, self.loss, self.mse, self.commit, self.codebook,
                self.perplexity, self.mean_pairwise_dist]


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def rows(self) -> list[list]:
        return [r.row() for r in self.records]

    def final(self) -> EpochRecord:
        if not self.records:
            raise ValueError("empty training log")
        return self.records[-1]


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return derived_rng(seed, 0x5F, epoch).permutation(n)


def save_run_checkpoint(path: str, params: MlpParams, codebook: Codebook | None = None) -> None:
    """Model (and codebook, when present) in the flat float64 checkpoint format."""
    tensors = params.to_tensors()
    if codebook is not None:
        tensors["codebook.tokens"] = codebook.tokens
        tensors["codebook.ema_cluster_size"] = codebook.ema_cluster_size
        tensors["codebook.ema_embed_sum"] = codebook.ema_embed_sum
        tensors["codebook.decay_beta"] = np.array([codebook.decay, codebook.beta])
    save_checkpoint(path, tensors)


def load_run_checkpoint(path: str) -> tuple[MlpParams, Codebook | None]:
    tensors = load_checkpoint(path)
    params = MlpParams.from_tensors(tensors)
    codebook = None
    if "codebook.tokens" in tensors:
        decay, beta = tensors.get("codebook.decay_beta", np.array([0.9, 0.25]))
        codebook = Codebook(
            tokens=tensors["codebook.tokens"],
            ema_cluster_size=tensors["codebook.ema_cluster_size"],
            ema_embed_sum=tensors["codebook.ema_embed_sum"],
            decay=float(decay),
            beta=float(beta),
        )
    return params, codebook


def fresh_params(config: TrainConfig, input_dim: int) -> MlpParams:
    return MlpParams.create(input_dim, config.hidden_dim, config.latent_dim, config.seed)


def train_ae(config: TrainConfig, dataset: LabeledDataset) -> tuple[MlpParams, TrainLog]:
    """Continuous phase: pure MSE autoencoding, no codebook state anywhere."""
    params = fresh_params(config, dataset.dim)
    state = AdamWState.for_params(params.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    log = TrainLog()
    n = len(dataset)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = _epoch_order(config.seed, epoch, n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            xb = dataset.points[order[start : start + config.batch_size]]
            recon = params.decoder.forward(params.encoder.forward(xb))
            loss, grad = mse_loss(recon, xb)
            if not np.isfinite(loss):
                raise TrainingFault(f"non-finite loss at epoch {epoch}", epoch=epoch)
            grad_latent, dec_grads = params.decoder.backward(grad)
            _, enc_grads = params.encoder.backward(grad_latent)
            try:
                adamw_step(params.parameters(), enc_grads + dec_grads, state)
            except TrainingFault as fault:
                raise TrainingFault(f"{fault} at epoch {epoch}", epoch=epoch) from fault
            loss_sum += len(xb) * loss
        loss = mse = loss_sum / n
        log.records.append(EpochRecord(epoch=epoch, loss=loss, mse=mse, commit=0.0, codebook=0.0,
                                       perplexity=0.0, mean_pairwise_dist=0.0,
                                       wall_clock=time.perf_counter() - t0))
    if config.checkpoint_path:
        params.save(config.checkpoint_path)
    return params, log


def _train_vq(config: TrainConfig, dataset: LabeledDataset, params: MlpParams,
              codebook: Codebook) -> tuple[MlpParams, Codebook, TrainLog]:
    """Shared VQ loop for the baseline and deferred regimes.

    Loss = MSE + beta * commit (+ codebook term when codebook_update=gradient).
    Gradients reach the encoder through the straight-through path plus the
    commitment pull; the codebook moves by EMA or by its own gradient.
    """
    gradient_mode = config.codebook_update == "gradient"
    opt_params = params.parameters() + ([codebook.tokens] if gradient_mode else [])
    state = AdamWState.for_params(opt_params, lr=config.lr, weight_decay=config.weight_decay)
    log = TrainLog()
    n = len(dataset)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = _epoch_order(config.seed, epoch, n)
        sums = np.zeros(4)  # weighted (loss, mse, commit, codebook)
        usage = np.zeros(codebook.size, dtype=np.int64)
        for start in range(0, n, config.batch_size):
            xb = dataset.points[order[start : start + config.batch_size]]
            z = params.encoder.forward(xb)
            result = quantize(z, codebook)
            recon = params.decoder.forward(result.straight_through_output)
            mse, grad_recon = mse_loss(recon, xb)
            total = mse + config.beta * result.codebook_loss
            if gradient_mode:
                total += result.codebook_loss
            if not np.isfinite(total):
                raise TrainingFault(f"non-finite loss at epoch {epoch}", epoch=epoch)

            grad_st, dec_grads = params.decoder.backward(grad_recon)
            commit_grad = (2.0 * config.beta / z.size) * (z - result.quantized)
            _, enc_grads = params.encoder.backward(grad_st + commit_grad)
            grads = enc_grads + dec_grads
            if gradient_mode:
                token_grad = np.zeros_like(codebook.tokens)
                np.add.at(token_grad, result.indices, (2.0 / z.size) * (result.quantized - z))
                grads = grads + [token_grad]
            try:
                adamw_step(opt_params, grads, state)
            except TrainingFault as fault:
                raise TrainingFault(f"{fault} at epoch {epoch}", epoch=epoch) from fault
            if not gradient_mode:
                ema_update(codebook, z, result.indices)

            usage += np.bincount(result.indices, minlength=codebook.size)
            sums += len(xb) * np.array([total, mse, result.codebook_loss, result.codebook_loss])
        loss, mse, commit, cb_loss = sums / n
        log.records.append(EpochRecord(
            epoch=epoch, loss=loss, mse=mse, commit=commit, codebook=cb_loss,
            perplexity=perplexity(usage), mean_pairwise_dist=mean_pairwise_distance(codebook.tokens),
            wall_clock=time.perf_counter() - t0))
    if config.checkpoint_path:
        save_run_checkpoint(config.checkpoint_path, params, codebook)
    return params, codebook, log


def train_baseline_vq(config: TrainConfig, dataset: LabeledDataset) -> tuple[MlpParams, Codebook, TrainLog]:
    """VQ-VAE from scratch: codebook seeded by k-means on untrained-encoder output."""
    params = fresh_params(config, dataset.dim)
    codebook = init_codebook("untrained_encoder", params.encoder, dataset, config.codebook_size,
                             ratio=config.embed_ratio, seed=config.seed, decay=config.decay, beta=config.beta)
    return _train_vq(config, dataset, params, codebook)


def train_deferred_vq(config: TrainConfig, dataset: LabeledDataset,
                      pretrained_checkpoint: str) -> tuple[MlpParams, Codebook, TrainLog]:
    """Discretization phase: pretrained weights, codebook from the pretrained encoder."""
    params = MlpParams.load(pretrained_checkpoint)
    if params.input_dim != dataset.dim:
        raise ValueError("pretrained checkpoint does not match the dataset dimension")
    codebook = init_codebook("pretrained_encoder", params.encoder, dataset, config.codebook_size,
                             ratio=config.embed_ratio, seed=config.seed, decay=config.decay, beta=config.beta)
    return _train_vq(config, dataset, params, codebook)


def reconstruct(params: MlpParams, codebook: Codebook, points: np.ndarray) -> np.ndarray:
    """encode -> nearest token -> decode, with no gradient machinery engaged."""
    z = params.encoder.forward(np.asarray(points, dtype=float), cache=False)
    tokens = codebook.tokens[assign(z, codebook)]
    return params.decoder.forward(tokens, cache=False)
