"""Minimal differentiable kernel: dense layers, ReLU, MSE, AdamW.

Backward passes are hand-derived and validated against central finite
differences by the test suite. The only architecture here is the 3-layer
MLP encoder/decoder pair used throughout the lab.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifacts import load_checkpoint, save_checkpoint
from .rngs import derived_rng


class TrainingFault(RuntimeError):
    """Non-finite loss or gradients; carries the offending epoch when known."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class LinearLayer:
    """Dense layer y = x @ W.T + b with cached input for the backward pass."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be (out_dim, in_dim) and bias (out_dim,)")
        self.cached_input: np.ndarray | None = None

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearLayer":
        # uniform in +-sqrt(1/in_dim), same bound for weight and bias
        bound = np.sqrt(1.0 / in_dim)
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        bias = rng.uniform(-bound, bound, size=out_dim)
        return cls(weight, bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input (*, {self.in_dim}), got {x.shape}")
        if cache:
            self.cached_input = x
        return x @ self.weight.T + self.bias

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (grad_in, grad_weight, grad_bias); clears the cached input."""
        if self.cached_input is None:
            raise RuntimeError("backward called before forward")
        grad_out = np.asarray(grad_out, dtype=float)
        if grad_out.shape != (self.cached_input.shape[0], self.out_dim):
            raise ValueError(f"grad_out shape {grad_out.shape} does not match forward output")
        grad_in = grad_out @ self.weight
        grad_weight = grad_out.T @ self.cached_input
        grad_bias = grad_out.sum(axis=0)
        self.cached_input = None
        return grad_in, grad_weight, grad_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Subgradient at exactly 0 is 0 (fixed for gradient-check determinism)."""
    if grad_out.shape != x.shape:
        raise ValueError("grad_out shape does not match relu input")
    return grad_out * (x > 0)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all elements of the squared difference, with its gradient."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float((diff**2).mean()), 2.0 * diff / diff.size


class Mlp:
    """Three linear layers with ReLU between them."""

    def __init__(self, layers: list[LinearLayer]):
        if len(layers) != 3:
            raise ValueError("Mlp expects exactly 3 linear layers")
        self.layers = layers
        self._pre: list[np.ndarray] = []  # cached ReLU pre-activations

    @classmethod
    def create(cls, in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator) -> "Mlp":
        dims = [in_dim, hidden_dim, hidden_dim, out_dim]
        return cls([LinearLayer.create(dims[i], dims[i + 1], rng) for i in range(3)])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if cache:
            self._pre = []
        out = x
        for i, layer in enumerate(self.layers):
            out = layer.forward(out, cache=cache)
            if i < len(self.layers) - 1:
                if cache:
                    self._pre.append(out)
                out = relu_forward(out)
        return out

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (grad_input, grads aligned with parameters())."""
        if len(self._pre) != len(self.layers) - 1:
            raise RuntimeError("backward called before forward")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        grad = grad_out
        for i in reversed(range(len(self.layers))):
            grad, gw, gb = self.layers[i].backward(grad)
            grads[2 * i] = gw
            grads[2 * i + 1] = gb
            if i > 0:
                grad = relu_backward(grad, self._pre[i - 1])
        self._pre = []
        return grad, grads

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def set_parameters(self, params: list[np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            layer.weight = np.asarray(params[2 * i], dtype=float)
            layer.bias = np.asarray(params[2 * i + 1], dtype=float)


@dataclass
class MlpParams:
    """Encoder/decoder pair: input -> hidden -> hidden -> latent and its mirror."""

    encoder: Mlp
    decoder: Mlp
    hidden_dim: int

    def __post_init__(self):
        if self.encoder.out_dim != self.decoder.in_dim:
            raise ValueError("encoder output dim must equal decoder input dim")

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, latent_dim: int, seed: int) -> "MlpParams":
        rng = derived_rng(seed, 0xE)
        encoder = Mlp.create(input_dim, hidden_dim, latent_dim, rng)
        decoder = Mlp.create(latent_dim, hidden_dim, input_dim, rng)
        return cls(encoder=encoder, decoder=decoder, hidden_dim=hidden_dim)

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim

    @property
    def input_dim(self) -> int:
        return self.encoder.in_dim

    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()

    def set_parameters(self, params: list[np.ndarray]) -> None:
        n = len(self.encoder.parameters())
        self.encoder.set_parameters(params[:n])
        self.decoder.set_parameters(params[n:])

    def parameter_names(self) -> list[str]:
        names = []
        for prefix in ("encoder", "decoder"):
            for i in range(3):
                names.extend([f"{prefix}.{i}.weight", f"{prefix}.{i}.bias"])
        return names

    def to_tensors(self) -> dict[str, np.ndarray]:
        return dict(zip(self.parameter_names(), self.parameters()))

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "MlpParams":
        def stack(prefix: str) -> Mlp:
            layers = [LinearLayer(tensors[f"{prefix}.{i}.weight"], tensors[f"{prefix}.{i}.bias"]) for i in range(3)]
            return Mlp(layers)

        encoder = stack("encoder")
        hidden = encoder.layers[0].out_dim
        return cls(encoder=encoder, decoder=stack("decoder"), hidden_dim=hidden)

    def save(self, path: str) -> None:
        save_checkpoint(path, self.to_tensors())

    @classmethod
    def load(cls, path: str) -> "MlpParams":
        return cls.from_tensors(load_checkpoint(path))


@dataclass
class AdamWState:
    """Per-parameter moments plus the shared step counter and hyperparameters."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01) -> "AdamWState":
        if not lr > 0:
            raise ValueError("lr must be positive")
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params],
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamWState) -> tuple[list[np.ndarray], AdamWState]:
    """One AdamW update, in place.

    Decoupled weight decay is applied to the parameters before the adaptive
    step; bias correction follows the shared step counter.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state are misaligned")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingFault("non-finite gradient encountered")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g**2
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
