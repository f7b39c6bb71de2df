"""Quantized SIREN execution in three modes.

W32A32 runs the float reference bit-exactly, W8A32 dequantizes weights once
and stays in float, and W8A8 performs the true integer matmul. In W8A8 the
rotated scheme works per layer as

    x' = Hhat_n^T x  (float fast transform)
    y' = Wq' @ xq'   (integer codes, 32-bit-safe accumulation)
    y  = Hhat_m^T dequant(y') + b,

which is exact because Hhat_m (W x) = (Hhat_m W Hhat_n)(Hhat_n^T x). The
unrotated schemes run the same integer path without the transforms; the
codebook scheme has no affine integer form, so its activations are
quantize-dequantized and the matmul stays float.

Mode labels keep the nominal W8/A8 names even when configured bit widths
differ; they select the execution path, not the exact widths.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .hadamard import HadamardPlan, apply_fwht_columns, transform_2d
from .linalg import Matrix, Rng
from .imageio import ImageBuffer
from .model import SirenLayer, SirenModel, forward
from .quant import (
    QuantConfig,
    QuantizedTensor,
    ROUND_NEAREST,
    ROUND_STOCHASTIC,
    SCHEME_DHQ,
    SCHEME_KMEANS,
    affine_params,
    dequantize,
    quantize_weight,
    quantize_with_params,
)
from .trainer import Dataset, grid_coords

MODE_W32A32 = "W32A32"
MODE_W8A32 = "W8A32"
MODE_W8A8 = "W8A8"
MODES = (MODE_W32A32, MODE_W8A32, MODE_W8A8)

# Inner-dimension cap for the integer accumulator: with signed 8-bit
# operands, |sum| <= 2^14 * 2^16 < 2^31, so 32-bit lanes cannot overflow.
MAX_ACCUM_INNER_DIM = 1 << 16

QMODEL_MAGIC = b"SQQM"
QMODEL_VERSION = 1

CALIB_CHUNK_ROWS = 16384


@dataclass(frozen=True)
class LayerActRange:
    """Input ranges for one layer: raw domain and rotated domain."""

    raw_lo: float
    raw_hi: float
    rot_lo: float
    rot_hi: float


@dataclass(frozen=True)
class Calibration:
    """Per-layer activation ranges plus the final linear output range.

    Raw ranges are analytic: coordinates and sine outputs both live in
    [-1, 1] exactly, no data pass needed. Rotated ranges and the output
    range are exact min/max over the full coordinate grid.
    """

    layers: tuple[LayerActRange, ...]
    output_lo: float
    output_hi: float


def calibrate(model: SirenModel, data: Dataset, cfg: QuantConfig | None = None) -> Calibration:
    """Collect activation quantization ranges over the full grid.

    Deterministic: a single chunked float forward pass records min/max of
    every layer's rotated input and of the final output.
    """
    n = data.coords.shape[0]
    rot_lo = [np.inf] * len(model.layers)
    rot_hi = [-np.inf] * len(model.layers)
    out_lo, out_hi = np.inf, -np.inf
    for start in range(0, n, CALIB_CHUNK_ROWS):
        a = data.coords[start : start + CALIB_CHUNK_ROWS]
        for li, lyr in enumerate(model.layers):
            padded = HadamardPlan.for_dim(lyr.in_dim).padded_dim
            ap = a if padded == lyr.in_dim else _pad_cols(a, padded)
            ar = apply_fwht_columns(ap)
            rot_lo[li] = min(rot_lo[li], float(ar.min()))
            rot_hi[li] = max(rot_hi[li], float(ar.max()))
            z = a @ lyr.weight.T + lyr.bias
            a = np.sin(lyr.omega * z) if lyr.apply_sine else z
        out_lo = min(out_lo, float(a.min()))
        out_hi = max(out_hi, float(a.max()))
    layers = tuple(
        LayerActRange(-1.0, 1.0, rot_lo[i], rot_hi[i]) for i in range(len(model.layers))
    )
    return Calibration(layers, out_lo, out_hi)


@dataclass
class QuantizedLayer:
    qweight: QuantizedTensor | None  # None only in W32A32 wrappers
    bias: np.ndarray
    apply_sine: bool
    omega: float
    float_weight: Matrix | None = None  # reference weights (W32A32)

    @property
    def out_dim(self) -> int:
        return self.bias.shape[0]


@dataclass
class QuantizedModel:
    mode: str
    scheme: str
    weight_bits: int
    act_bits: int
    act_rounding: str
    layers: list[QuantizedLayer]
    calibration: Calibration | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if (self.calibration is not None) != (self.mode == MODE_W8A8):
            raise ValueError("activation calibration must be present exactly in W8A8 mode")
        if self.mode == MODE_W32A32 and any(l.float_weight is None for l in self.layers):
            raise ValueError("W32A32 mode requires float weights")
        if self.mode != MODE_W32A32 and any(l.qweight is None for l in self.layers):
            raise ValueError(f"{self.mode} mode requires quantized weights")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = []
        for lyr in self.layers:
            if lyr.float_weight is not None:
                dims.append(lyr.float_weight.shape)
            else:
                dims.append(lyr.qweight.logical_shape)
        return dims


def wrap_float_model(model: SirenModel) -> QuantizedModel:
    """Reference W32A32 wrapper around an unquantized model."""
    layers = [
        QuantizedLayer(None, l.bias.copy(), l.apply_sine, l.omega, float_weight=l.weight.copy())
        for l in model.layers
    ]
    return QuantizedModel(MODE_W32A32, "none", 32, 32, ROUND_NEAREST, layers)


def build_quantized_model(
    model: SirenModel,
    cfg: QuantConfig,
    data: Dataset,
    rng: Rng | None = None,
) -> QuantizedModel:
    """Quantize a trained model's weights and calibrate its activations.

    The result runs in W8A8 mode; use with_mode to retarget it.
    """
    calibration = calibrate(model, data, cfg)
    layers = [
        QuantizedLayer(
            quantize_weight(l.weight, cfg, rng), l.bias.copy(), l.apply_sine, l.omega
        )
        for l in model.layers
    ]
    return QuantizedModel(
        MODE_W8A8, cfg.scheme, cfg.weight_bits, cfg.act_bits, cfg.act_rounding,
        layers, calibration,
    )


def with_mode(qmodel: QuantizedModel, mode: str) -> QuantizedModel:
    """Re-target a quantized model to another execution mode."""
    if mode == MODE_W32A32:
        raise ValueError("W32A32 needs the original float checkpoint, not a quantized model")
    if mode == MODE_W8A8 and qmodel.calibration is None:
        raise ValueError("cannot run W8A8 without activation calibration")
    calibration = qmodel.calibration if mode == MODE_W8A8 else None
    return replace(qmodel, mode=mode, calibration=calibration)


def int_matmul(qx: np.ndarray, qw: np.ndarray) -> np.ndarray:
    """Integer accumulation acc[b, i] = sum_k qx[b, k] * qw[i, k].

    Inputs are int64 code arrays; the inner dimension is capped so that
    8-bit signed operands provably fit 32-bit accumulator lanes.
    """
    if qx.ndim != 2 or qw.ndim != 2 or qx.shape[1] != qw.shape[1]:
        raise ValueError(f"int_matmul shape mismatch: {qx.shape} vs {qw.shape}")
    if qx.shape[1] > MAX_ACCUM_INNER_DIM:
        raise ValueError(
            f"inner dim {qx.shape[1]} exceeds the accumulator guard {MAX_ACCUM_INNER_DIM}"
        )
    return qx.astype(np.int64) @ qw.astype(np.int64).T


def integer_layer_product(
    qx: np.ndarray,
    x_scale: float,
    x_offset: float,
    x_bits: int,
    qw: QuantizedTensor,
) -> Matrix:
    """Dequantized product of affine-coded activations and weights.

    Codes are shifted to the signed range (so products of 8-bit operands
    stay within 2^14) and the affine offsets folded into correction terms
    built from integer row sums:

        y = (sx*sw)*acc + (sw*zx')*rowsum_w + (sx*zw')*rowsum_x + K*zx'*zw'

    The term order is fixed; the scalar oracle in the tests mirrors it so
    results compare bit for bit.
    """
    xs = qx - (1 << (x_bits - 1))
    ws = qw.values - (1 << (qw.bits - 1))
    zxp = x_offset + x_scale * float(1 << (x_bits - 1))
    zwp = qw.offset + qw.scale * float(1 << (qw.bits - 1))
    acc = int_matmul(xs, ws)
    if x_bits <= 8 and qw.bits <= 8:
        peak = int(np.abs(acc).max(initial=0))
        if peak >= 1 << 31:
            raise AssertionError(f"accumulator exceeded 32-bit range: {peak}")
    k = xs.shape[1]
    y = (x_scale * qw.scale) * acc.astype(np.float64)
    y += (qw.scale * zxp) * ws.sum(axis=1).astype(np.float64)
    y += (x_scale * zwp) * xs.sum(axis=1).astype(np.float64)[:, None]
    y += (k * zxp) * zwp
    return y


def _pad_cols(x: Matrix, cols: int) -> Matrix:
    if x.shape[1] == cols:
        return x
    out = np.zeros((x.shape[0], cols))
    out[:, : x.shape[1]] = x
    return out


def _act_params(qmodel: QuantizedModel, layer_index: int) -> tuple[float, float]:
    r = qmodel.calibration.layers[layer_index]
    if qmodel.scheme == SCHEME_DHQ:
        lo, hi = r.rot_lo, r.rot_hi
    else:
        lo, hi = r.raw_lo, r.raw_hi
    return affine_params(lo, hi, qmodel.act_bits)


def _float_model(qmodel: QuantizedModel) -> SirenModel:
    """Materialize a float SirenModel for the non-integer modes."""
    layers = []
    for lyr in qmodel.layers:
        w = lyr.float_weight if lyr.float_weight is not None else dequantize(lyr.qweight)
        layers.append(SirenLayer(w, lyr.bias, lyr.apply_sine, lyr.omega))
    return SirenModel(layers)


def infer(qmodel: QuantizedModel, coords: Matrix, rng: Rng | None = None) -> Matrix:
    """Run the quantized model over coordinate rows in its configured mode."""
    if qmodel.mode in (MODE_W32A32, MODE_W8A32):
        out, _ = forward(_float_model(qmodel), coords)
        return out
    if qmodel.act_rounding == ROUND_STOCHASTIC and rng is None:
        raise ValueError("stochastic activation rounding requires an rng")

    a = coords
    for li, lyr in enumerate(qmodel.layers):
        s_x, z_x = _act_params(qmodel, li)
        if qmodel.scheme == SCHEME_DHQ:
            row_plan, col_plan = lyr.qweight.transform
            ar = apply_fwht_columns(_pad_cols(a, col_plan.padded_dim))
            qx = quantize_with_params(ar, qmodel.act_bits, s_x, z_x, qmodel.act_rounding, rng)
            y = integer_layer_product(qx, s_x, z_x, qmodel.act_bits, lyr.qweight)
            y = apply_fwht_columns(y)[:, : lyr.out_dim]
            z = y + lyr.bias
        elif qmodel.scheme == SCHEME_KMEANS:
            # Codebook weights have no affine integer form; activations are
            # quantize-dequantized and the matmul stays float.
            qx = quantize_with_params(a, qmodel.act_bits, s_x, z_x, qmodel.act_rounding, rng)
            a_hat = qx * s_x + z_x
            z = a_hat @ dequantize(lyr.qweight).T + lyr.bias
        else:
            qx = quantize_with_params(a, qmodel.act_bits, s_x, z_x, qmodel.act_rounding, rng)
            y = integer_layer_product(qx, s_x, z_x, qmodel.act_bits, lyr.qweight)
            z = y + lyr.bias
        a = np.sin(lyr.omega * z) if lyr.apply_sine else z
    return a


def rotated_float_forward(model: SirenModel, coords: Matrix) -> Matrix:
    """The W8A8 rotated pipeline with quantizers replaced by the identity.

    Rotation and unrotation cancel exactly, so this must match the plain
    float forward to rounding error; it pins the algebra the integer path
    relies on.
    """
    a = coords
    for lyr in model.layers:
        row_plan = HadamardPlan.for_dim(lyr.out_dim)
        col_plan = HadamardPlan.for_dim(lyr.in_dim)
        ar = apply_fwht_columns(_pad_cols(a, col_plan.padded_dim))
        w_rot = transform_2d(lyr.weight, row_plan, col_plan)
        y = ar @ w_rot.T
        y = apply_fwht_columns(y)[:, : lyr.out_dim]
        z = y + lyr.bias
        a = np.sin(lyr.omega * z) if lyr.apply_sine else z
    return a


def reconstruct_image(
    qmodel: QuantizedModel, width: int, height: int, channels: int, rng: Rng | None = None
) -> ImageBuffer:
    """Infer over the full grid and denormalize [-1, 1] back to 8-bit pixels."""
    out_dim = qmodel.layers[-1].out_dim
    if channels != out_dim:
        raise ValueError(f"model produces {out_dim} channels, requested {channels}")
    coords = grid_coords(width, height)
    y = infer(qmodel, coords, rng)
    pixels = np.clip(np.rint((y + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return ImageBuffer(pixels.reshape(height, width, channels))


# ---------------------------------------------------------------------------
# Quantized model container
# ---------------------------------------------------------------------------

_ROUNDING_IDS = {ROUND_NEAREST: 0, ROUND_STOCHASTIC: 1}
_ROUNDING_NAMES = {v: k for k, v in _ROUNDING_IDS.items()}
_SCHEME_IDS = {"uniform": 0, "stochastic": 1, "kmeans": 2, "dhq": 3}
_SCHEME_NAMES = {v: k for k, v in _SCHEME_IDS.items()}


def _codes_dtype(bits: int):
    if bits <= 8:
        return np.dtype("<u1")
    if bits <= 16:
        return np.dtype("<u2")
    return np.dtype("<u4")


def save_quantized_model(qmodel: QuantizedModel, path: str) -> None:
    """Write the versioned binary container (codes packed at 8 bits when
    the width allows). Requires a W8A8-built model so calibration is
    present; the load side picks the execution mode."""
    if qmodel.calibration is None:
        raise ValueError("only calibrated (W8A8-built) models can be serialized")
    cal = qmodel.calibration
    with open(path, "wb") as f:
        f.write(QMODEL_MAGIC)
        f.write(
            struct.pack(
                "<IBBBBI",
                QMODEL_VERSION,
                _SCHEME_IDS[qmodel.scheme],
                qmodel.weight_bits,
                qmodel.act_bits,
                _ROUNDING_IDS[qmodel.act_rounding],
                len(qmodel.layers),
            )
        )
        f.write(struct.pack("<dd", cal.output_lo, cal.output_hi))
        for r in cal.layers:
            f.write(struct.pack("<dddd", r.raw_lo, r.raw_hi, r.rot_lo, r.rot_hi))
        for lyr in qmodel.layers:
            qw = lyr.qweight
            out_dim = lyr.bias.shape[0]
            f.write(struct.pack("<IBd", out_dim, int(lyr.apply_sine), lyr.omega))
            f.write(
                struct.pack(
                    "<IIddBB",
                    qw.rows,
                    qw.cols,
                    qw.scale,
                    qw.offset,
                    _ROUNDING_IDS[qw.rounding],
                    int(qw.transform is not None),
                )
            )
            if qw.transform is not None:
                rp, cp = qw.transform
                f.write(
                    struct.pack(
                        "<IIII", rp.logical_dim, rp.padded_dim, cp.logical_dim, cp.padded_dim
                    )
                )
            if qw.codebook is not None:
                f.write(struct.pack("<I", qw.codebook.size))
                f.write(qw.codebook.astype("<f8").tobytes())
            else:
                f.write(struct.pack("<I", 0))
            f.write(qw.values.astype(_codes_dtype(qw.bits)).tobytes())
            f.write(lyr.bias.astype("<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IOError(f"quantized model truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def load_quantized_model(path: str, mode: str = MODE_W8A8) -> QuantizedModel:
    """Load a container written by save_quantized_model and pick a mode."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != QMODEL_MAGIC:
            raise ValueError(f"not a quantized model file (bad magic {magic!r})")
        version, scheme_id, wbits, abits, act_round_id, n_layers = struct.unpack(
            "<IBBBBI", _read_exact(f, 12)
        )
        if version != QMODEL_VERSION:
            raise ValueError(f"unsupported quantized model version {version}")
        scheme = _SCHEME_NAMES[scheme_id]
        out_lo, out_hi = struct.unpack("<dd", _read_exact(f, 16))
        ranges = []
        for _ in range(n_layers):
            ranges.append(LayerActRange(*struct.unpack("<dddd", _read_exact(f, 32))))
        calibration = Calibration(tuple(ranges), out_lo, out_hi)
        layers = []
        for _ in range(n_layers):
            out_dim, sine, omega = struct.unpack("<IBd", _read_exact(f, 13))
            rows, cols, scale, offset, w_round_id, has_transform = struct.unpack(
                "<IIddBB", _read_exact(f, 26)
            )
            transform = None
            if has_transform:
                rl, rp, cl, cp = struct.unpack("<IIII", _read_exact(f, 16))
                transform = (HadamardPlan(rl, rp), HadamardPlan(cl, cp))
            (cb_size,) = struct.unpack("<I", _read_exact(f, 4))
            codebook = None
            if cb_size:
                codebook = np.frombuffer(_read_exact(f, cb_size * 8), dtype="<f8").copy()
            dtype = _codes_dtype(wbits)
            codes = np.frombuffer(
                _read_exact(f, rows * cols * dtype.itemsize), dtype=dtype
            ).reshape(rows, cols)
            bias = np.frombuffer(_read_exact(f, out_dim * 8), dtype="<f8").copy()
            qw = QuantizedTensor(
                codes.astype(np.int64),
                scale,
                offset,
                wbits,
                scheme,
                _ROUNDING_NAMES[w_round_id],
                codebook=codebook,
                transform=transform,
            )
            layers.append(QuantizedLayer(qw, bias, bool(sine), omega))
    qmodel = QuantizedModel(
        MODE_W8A8, scheme, wbits, abits, _ROUNDING_NAMES[act_round_id], layers, calibration
    )
    return qmodel if mode == MODE_W8A8 else with_mode(qmodel, mode)
