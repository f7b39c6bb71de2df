"""Analytic arithmetic and memory cost estimates per precision mode.

This stands in for platform measurements with bit-width-forced ratios only:
MAC counts are topology-invariant, weight storage scales with the weight
width, and the rotated integer mode adds n*log2(n) transform work per
vector side. No latency, power, or LUT figures are modeled; those depend on
toolchain details that cannot be derived from counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .hadamard import next_power_of_two

MODE_BIT_DEFAULTS = {
    "W32A32": (32, 32),
    "W8A32": (8, 32),
    "W8A8": (8, 8),
}


@dataclass(frozen=True)
class CostSummary:
    mode: str
    mac_count: int
    weight_bytes: int  # packed weight storage including bias_bytes
    bias_bytes: int  # biases stay float64
    activation_buffer_bytes: int
    transform_flops: int


def estimate(
    layer_dims: list[tuple[int, int]],
    mode: str,
    weight_bits: int | None = None,
    act_bits: int | None = None,
) -> CostSummary:
    """Cost summary for a model topology given as (out_dim, in_dim) pairs.

    Bit widths default from the mode label but can be overridden. The
    activation buffer is sized at the widest layer interface; transform
    flops count one forward pass over a single input vector (weights are
    rotated offline, so only W8A8 pays for runtime transforms).
    """
    if mode not in MODE_BIT_DEFAULTS:
        raise ValueError(f"unknown mode {mode!r}, expected one of {tuple(MODE_BIT_DEFAULTS)}")
    default_w, default_a = MODE_BIT_DEFAULTS[mode]
    wbits = default_w if weight_bits is None else weight_bits
    abits = default_a if act_bits is None else act_bits

    mac_count = sum(out * inp for out, inp in layer_dims)
    bias_bytes = sum(out * 8 for out, _ in layer_dims)
    weight_bytes = sum((out * inp * wbits + 7) // 8 for out, inp in layer_dims) + bias_bytes
    widest = max(max(out, inp) for out, inp in layer_dims)
    activation_buffer_bytes = widest * ((abits + 7) // 8)

    transform_flops = 0
    if mode == "W8A8":
        for out, inp in layer_dims:
            for dim in (next_power_of_two(inp), next_power_of_two(out)):
                if dim > 1:
                    transform_flops += dim * int(math.log2(dim))
    return CostSummary(
        mode, mac_count, weight_bytes, bias_bytes, activation_buffer_bytes, transform_flops
    )
