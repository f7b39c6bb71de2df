"""Gradient training of SIREN models on coordinate/pixel pairs.

Backpropagation is written out by hand (the only nonlinearity is
sin(omega*z), whose derivative is omega*cos(omega*z)) and optimized with
Adam. Training is full batch by default and fully deterministic given
(seed, config, data): gradient accumulation over batch chunks runs in a
fixed sequential order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .imageio import ImageBuffer
from .linalg import Matrix, STREAM_BATCH, make_rng
from .model import SirenModel, forward

# Rows per forward/backward chunk; bounds peak memory without changing
# results between runs (the reduction order is fixed).
GRAD_CHUNK_ROWS = 16384


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite during training."""


@dataclass
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int | None = None  # None means full batch
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be non-negative, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 < beta < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {beta}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")


@dataclass
class Dataset:
    coords: Matrix  # (N, 2) rows of (y, x) in [-1, 1]
    targets: Matrix  # (N, C) pixel values in [-1, 1]
    width: int
    height: int
    channels: int

    def __post_init__(self):
        n = self.width * self.height
        if self.coords.shape[0] != n or self.targets.shape[0] != n:
            raise ValueError(
                f"dataset rows {self.coords.shape[0]} do not match width*height {n}"
            )


def grid_coords(width: int, height: int) -> Matrix:
    """Pixel-center coordinate grid, row-major, corners mapping to +-1.

    An axis of a single pixel maps to 0.
    """
    ys = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.ascontiguousarray(np.stack([gy.ravel(), gx.ravel()], axis=1))


def make_grid_dataset(image: ImageBuffer) -> Dataset:
    """Turn an 8-bit image into (coords, targets) with targets in [-1, 1]."""
    coords = grid_coords(image.width, image.height)
    flat = image.pixels.reshape(-1, image.channels).astype(np.float64)
    targets = flat / 127.5 - 1.0
    return Dataset(coords, targets, image.width, image.height, image.channels)


def mse_loss_and_grads(
    model: SirenModel, coords: Matrix, targets: Matrix
) -> tuple[float, list[tuple[Matrix, np.ndarray]]]:
    """Mean squared error over the batch plus per-layer (dW, db) gradients.

    The batch is processed in fixed-size chunks and gradients accumulated
    sequentially, so results are reproducible and memory stays bounded.
    """
    if coords.shape[0] != targets.shape[0]:
        raise ValueError(
            f"coords rows {coords.shape[0]} do not match target rows {targets.shape[0]}"
        )
    n_rows, n_chan = targets.shape
    grads = [
        (np.zeros_like(lyr.weight), np.zeros_like(lyr.bias)) for lyr in model.layers
    ]
    sq_err = 0.0
    denom = n_rows * n_chan
    for start in range(0, n_rows, GRAD_CHUNK_ROWS):
        x0 = coords[start : start + GRAD_CHUNK_ROWS]
        t = targets[start : start + GRAD_CHUNK_ROWS]
        preds, trace = forward(model, x0, capture=True)
        resid = preds - t
        sq_err += float(np.sum(resid * resid))
        # delta holds dLoss/d(pre-activation) of the current layer.
        delta = (2.0 / denom) * resid
        for k in range(len(model.layers) - 1, -1, -1):
            lyr = model.layers[k]
            layer_in = trace.post[k - 1] if k > 0 else x0
            dw, db = grads[k]
            dw += delta.T @ layer_in
            db += delta.sum(axis=0)
            if k > 0:
                below = model.layers[k - 1]
                d_post = delta @ lyr.weight
                delta = d_post * (below.omega * np.cos(below.omega * trace.pre[k - 1]))
    return sq_err / denom, grads


class _AdamState:
    def __init__(self, model: SirenModel):
        self.m = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]
        self.v = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]
        self.t = 0

    def step(self, model: SirenModel, grads, cfg: TrainConfig) -> None:
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for k, lyr in enumerate(model.layers):
            for m, v, param, g in (
                (self.m[k][0], self.v[k][0], lyr.weight, grads[k][0]),
                (self.m[k][1], self.v[k][1], lyr.bias, grads[k][1]),
            ):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                param -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)


def train(
    model: SirenModel,
    data: Dataset,
    cfg: TrainConfig,
    checkpoint_hook: Callable[[int, SirenModel], None] | None = None,
) -> tuple[SirenModel, list[float]]:
    """Train a copy of the model, returning it with the per-iteration losses.

    With cfg.iterations == 0 the returned model equals the input bit for
    bit. Aborts with TrainingDiverged if the loss leaves the finite range.
    """
    if model.in_dim != data.coords.shape[1] or model.out_dim != data.targets.shape[1]:
        raise ValueError(
            f"model dims ({model.in_dim}->{model.out_dim}) do not match dataset "
            f"({data.coords.shape[1]}->{data.targets.shape[1]})"
        )
    model = model.copy()
    state = _AdamState(model)
    rng = make_rng(cfg.seed, STREAM_BATCH)
    n = data.coords.shape[0]
    losses: list[float] = []
    for it in range(1, cfg.iterations + 1):
        if cfg.batch_size is None or cfg.batch_size >= n:
            coords, targets = data.coords, data.targets
        else:
            idx = rng.choice(n, size=cfg.batch_size, replace=False)
            coords, targets = data.coords[idx], data.targets[idx]
        loss, grads = mse_loss_and_grads(model, coords, targets)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite ({loss}) at iteration {it}")
        losses.append(loss)
        state.step(model, grads, cfg)
        if checkpoint_hook is not None and cfg.checkpoint_every > 0:
            if it % cfg.checkpoint_every == 0:
                checkpoint_hook(it, model)
    return model, losses


def write_loss_curve(losses: list[float], path: str) -> None:
    """CSV export of the loss curve, one (iteration, loss) row per step."""
    with open(path, "w") as f:
        f.write("iteration,loss\n")
        for i, loss in enumerate(losses, start=1):
            f.write(f"{i},{loss:.17g}\n")
