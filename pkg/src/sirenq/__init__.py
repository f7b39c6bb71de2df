"""Sine-activated image INRs with Hadamard-rotated post-training
quantization and a true integer W8A8 inference path."""

__version__ = "0.1.0"

from .hadamard import HadamardPlan, fwht_inplace, hadamard_matrix, inverse_transform_2d, transform_2d
from .imageio import ImageBuffer, read_image, write_image
from .linalg import make_rng
from .model import SirenLayer, SirenModel, forward, init_siren, load_checkpoint, save_checkpoint
from .quant import (
    QuantConfig,
    QuantizedTensor,
    dequantize,
    quantize_dhq_weight,
    quantize_kmeans,
    quantize_uniform,
)
from .qinfer import (
    QuantizedModel,
    build_quantized_model,
    calibrate,
    infer,
    load_quantized_model,
    reconstruct_image,
    save_quantized_model,
    wrap_float_model,
)
from .trainer import Dataset, TrainConfig, make_grid_dataset, mse_loss_and_grads, train
from .analysis import Histogram, MomentStats, collect_distributions, psnr, ssim
from .costmodel import CostSummary, estimate
