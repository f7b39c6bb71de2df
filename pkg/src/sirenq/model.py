"""Sine-activated MLP (SIREN) for coordinate-to-pixel regression.

A model is a chain of affine layers; every layer except the last applies
sin(omega * (W x + b)). Checkpoints are a small binary container that
round-trips weights bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import Matrix, Rng

CHECKPOINT_MAGIC = b"SQCK"
CHECKPOINT_VERSION = 1


@dataclass
class SirenLayer:
    weight: Matrix  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    apply_sine: bool
    omega: float

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError(f"layer weight must be 2-D, got {self.weight.ndim} dimensions")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias length {self.bias.shape} does not match out_dim {self.weight.shape[0]}"
            )
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "SirenLayer":
        return SirenLayer(self.weight.copy(), self.bias.copy(), self.apply_sine, self.omega)


@dataclass
class SirenModel:
    layers: list[SirenLayer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model must have at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.in_dim != prev.out_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} followed by in_dim {cur.in_dim}"
                )
        if self.layers[-1].apply_sine:
            raise ValueError("output layer must be linear (apply_sine=False)")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def layer_dims(self) -> list[tuple[int, int]]:
        return [(lyr.out_dim, lyr.in_dim) for lyr in self.layers]

    def copy(self) -> "SirenModel":
        return SirenModel([lyr.copy() for lyr in self.layers])


@dataclass
class ActivationTrace:
    """Per-layer snapshots of W x + b (pre) and the layer output (post)."""

    pre: list[Matrix] = field(default_factory=list)
    post: list[Matrix] = field(default_factory=list)


def init_siren(
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    num_hidden_layers: int,
    omega_first: float = 30.0,
    omega_hidden: float = 30.0,
    rng: Rng | None = None,
) -> SirenModel:
    """Standard SIREN initialization.

    First layer weights ~ U(-1/in_dim, 1/in_dim); every later layer
    ~ U(-sqrt(6/fan_in)/omega_hidden, +sqrt(6/fan_in)/omega_hidden).
    Biases start at zero. Deterministic for a given rng.
    """
    if min(in_dim, hidden_dim, out_dim) < 1 or num_hidden_layers < 1:
        raise ValueError("all dimensions and num_hidden_layers must be at least 1")
    if rng is None:
        raise ValueError("init_siren requires an explicit rng")
    dims = [in_dim] + [hidden_dim] * num_hidden_layers + [out_dim]
    layers = []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        if k == 0:
            bound = 1.0 / fan_in
            omega = omega_first
        else:
            bound = np.sqrt(6.0 / fan_in) / omega_hidden
            omega = omega_hidden
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        is_last = k == len(dims) - 2
        layers.append(SirenLayer(weight, np.zeros(fan_out), apply_sine=not is_last, omega=omega))
    return SirenModel(layers)


def forward(
    model: SirenModel, coords: Matrix, capture: bool = False
) -> tuple[Matrix, ActivationTrace | None]:
    """Evaluate the model on a batch of coordinate rows.

    Returns (outputs, trace); the trace is populated only when capture is
    set, holding pre- and post-activation snapshots for every layer.
    """
    if coords.ndim != 2 or coords.shape[1] != model.in_dim:
        raise ValueError(
            f"coords shape {coords.shape} does not match model in_dim {model.in_dim}"
        )
    trace = ActivationTrace() if capture else None
    a = coords
    for lyr in model.layers:
        z = a @ lyr.weight.T + lyr.bias
        a = np.sin(lyr.omega * z) if lyr.apply_sine else z
        if trace is not None:
            trace.pre.append(z)
            trace.post.append(a)
    return a, trace


def save_checkpoint(model: SirenModel, path: str) -> None:
    """Write the model to a versioned little-endian binary container."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(model.layers)))
        for lyr in model.layers:
            f.write(struct.pack("<IIBd", lyr.out_dim, lyr.in_dim, int(lyr.apply_sine), lyr.omega))
            f.write(lyr.weight.astype("<f8").tobytes())
            f.write(lyr.bias.astype("<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IOError(f"checkpoint truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path: str) -> SirenModel:
    """Read a checkpoint written by save_checkpoint, bit-exactly."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint (bad magic {magic!r})")
        version, n_layers = struct.unpack("<II", _read_exact(f, 8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        layers = []
        for _ in range(n_layers):
            out_dim, in_dim, sine, omega = struct.unpack("<IIBd", _read_exact(f, 17))
            weight = np.frombuffer(
                _read_exact(f, out_dim * in_dim * 8), dtype="<f8"
            ).reshape(out_dim, in_dim)
            bias = np.frombuffer(_read_exact(f, out_dim * 8), dtype="<f8")
            layers.append(SirenLayer(weight.copy(), bias.copy(), bool(sine), omega))
    return SirenModel(layers)
