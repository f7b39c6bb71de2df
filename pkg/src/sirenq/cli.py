"""Command-line pipeline: train, quantize, eval, analyze, compare.

All randomness flows from one root --seed, split into fixed sub-streams
(init, batching, kmeans, rounding). Value-typed flags may also come from a
flat key=value --config file; explicit flags win. Exit codes: 0 on success,
1 on runtime/data errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis, costmodel, qinfer, trainer
from .imageio import ImageBuffer, read_image, write_image
from .linalg import STREAM_INIT, STREAM_ROUND, make_rng
from .model import init_siren, load_checkpoint, save_checkpoint
from .quant import SCHEMES, QuantConfig
from .trainer import TrainConfig, make_grid_dataset

REPORT_FORMAT_VERSION = 1


def _load_config_file(path: str) -> dict[str, str]:
    """Flat key=value file; blank lines and '#' comments ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


class _Resolver:
    """Merges CLI flags (highest priority), config file values, and defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_values = _load_config_file(args.config) if getattr(args, "config", None) else {}

    def get(self, name: str, default, cast=str):
        explicit = getattr(self.args, name, None)
        if explicit is not None:
            return explicit
        if name in self.file_values:
            raw = self.file_values[name]
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
        return default


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--config", default=None, help="key=value config file; flags override")
    p.add_argument("--out", default=None, help="output directory (default .)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=None, help="hidden layer width (default 256)")
    p.add_argument("--depth", type=int, default=None, help="number of hidden layers (default 3)")
    p.add_argument("--omega-first", type=float, default=None, dest="omega_first")
    p.add_argument("--omega-hidden", type=float, default=None, dest="omega_hidden")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sirenq",
        description="Train, quantize, and evaluate sine-activated image INRs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model to an image")
    p.add_argument("--image", required=True)
    _add_model_flags(p)
    p.add_argument("--iters", type=int, default=None, help="training iterations (default 2000)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-4)")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size",
                   help="mini-batch rows; 0 or omitted means full batch")
    p.add_argument("--checkpoint-every", type=int, default=None, dest="checkpoint_every")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", help="quantize a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="training image; used for calibration")
    p.add_argument("--scheme", choices=SCHEMES, default=None, help="default dhq")
    p.add_argument("--wbits", type=int, default=None, help="weight bits (default 8)")
    p.add_argument("--abits", type=int, default=None, help="activation bits (default 8)")
    p.add_argument("--rounding", choices=("nearest", "stochastic"), default=None)
    p.add_argument("--act-rounding", choices=("nearest", "stochastic"), default=None,
                   dest="act_rounding")
    _add_common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="reconstruct an image and report quality")
    p.add_argument("--model", required=True, help="checkpoint (.ckpt) or quantized model")
    p.add_argument("--image", required=True, help="source image to compare against")
    p.add_argument("--mode", choices=(qinfer.MODE_W32A32, qinfer.MODE_W8A32, qinfer.MODE_W8A8),
                   default=None, help="execution mode (default: W32A32 for checkpoints, "
                   "W8A8 for quantized models)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="export weight/activation distributions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--hadamard", action="store_true",
                   help="also export Hadamard-rotated weight distributions")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="side-by-side PSNR/SSIM table across schemes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--schemes", default=None, help="comma-separated list (default uniform,kmeans,dhq)")
    p.add_argument("--bits", type=int, default=None, help="weight and activation bits (default 8)")
    _add_common(p)
    p.set_defaults(func=cmd_compare)
    return parser


def _out_dir(res: _Resolver) -> Path:
    out = Path(res.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(res: _Resolver, image_path: str) -> dict:
    """Everything needed to reproduce a run; echoed into every report."""
    return {
        "image": str(image_path),
        "width": res.get("width", 256, int),
        "depth": res.get("depth", 3, int),
        "omega_first": res.get("omega_first", 30.0, float),
        "omega_hidden": res.get("omega_hidden", 30.0, float),
        "iterations": res.get("iters", 2000, int),
        "learning_rate": res.get("lr", 1e-4, float),
        "batch_size": res.get("batch_size", 0, int),
        "checkpoint_every": res.get("checkpoint_every", 0, int),
        "scheme": res.get("scheme", "dhq"),
        "weight_bits": res.get("wbits", 8, int),
        "act_bits": res.get("abits", 8, int),
        "rounding": res.get("rounding", "nearest"),
        "act_rounding": res.get("act_rounding", "nearest"),
        "seed": res.get("seed", 0, int),
    }


def _config_comment(cfg: dict) -> str:
    compact = " ".join(f"{k}={v}" for k, v in sorted(cfg.items()))
    return f"# sirenq v{REPORT_FORMAT_VERSION} {compact}"


def cmd_train(args) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    cfg = _run_config(res, args.image)
    image = read_image(args.image)
    data = make_grid_dataset(image)
    rng = make_rng(cfg["seed"], STREAM_INIT)
    model = init_siren(
        in_dim=2,
        hidden_dim=cfg["width"],
        out_dim=image.channels,
        num_hidden_layers=cfg["depth"],
        omega_first=cfg["omega_first"],
        omega_hidden=cfg["omega_hidden"],
        rng=rng,
    )
    tcfg = TrainConfig(
        iterations=cfg["iterations"],
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"] or None,
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
    )

    def hook(iteration: int, snapshot) -> None:
        save_checkpoint(snapshot, str(out / f"checkpoint_{iteration:06d}.ckpt"))

    model, losses = trainer.train(model, data, tcfg, checkpoint_hook=hook)
    save_checkpoint(model, str(out / "checkpoint.ckpt"))
    with open(out / "loss.csv", "w") as f:
        f.write(_config_comment(cfg) + "\n")
        f.write("iteration,loss\n")
        for i, loss in enumerate(losses, start=1):
            f.write(f"{i},{loss:.17g}\n")
    final = losses[-1] if losses else float("nan")
    print(f"trained {cfg['iterations']} iterations, final loss {final:.6g}")
    print(f"wrote {out / 'checkpoint.ckpt'} and {out / 'loss.csv'}")
    return 0


def cmd_quantize(args) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    cfg = _run_config(res, args.image)
    model = load_checkpoint(args.checkpoint)
    data = make_grid_dataset(read_image(args.image))
    qcfg = QuantConfig(
        scheme=cfg["scheme"],
        weight_bits=cfg["weight_bits"],
        act_bits=cfg["act_bits"],
        rounding=cfg["rounding"],
        act_rounding=cfg["act_rounding"],
    )
    rng = make_rng(cfg["seed"], STREAM_ROUND)
    qmodel = qinfer.build_quantized_model(model, qcfg, data, rng)
    path = out / "model.qmod"
    qinfer.save_quantized_model(qmodel, str(path))
    print(f"quantized with scheme={qcfg.scheme} W{qcfg.weight_bits}A{qcfg.act_bits}: wrote {path}")
    return 0


def _sniff_model(path: str):
    with open(path, "rb") as f:
        return f.read(4)


def _eval_pair(qmodel, source: ImageBuffer, rng=None):
    recon = qinfer.reconstruct_image(
        qmodel, source.width, source.height, source.channels, rng
    )
    return recon, analysis.psnr(recon, source), analysis.ssim(recon, source)


def cmd_eval(args) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    cfg = _run_config(res, args.image)
    source = read_image(args.image)
    magic = _sniff_model(args.model)
    mode = getattr(args, "mode", None)
    if magic == qinfer.QMODEL_MAGIC:
        mode = mode or qinfer.MODE_W8A8
        if mode == qinfer.MODE_W32A32:
            raise ValueError("W32A32 evaluation needs the float checkpoint, not a quantized model")
        qmodel = qinfer.load_quantized_model(args.model, mode)
    else:
        mode = mode or qinfer.MODE_W32A32
        if mode != qinfer.MODE_W32A32:
            raise ValueError(f"{mode} evaluation needs a quantized model file")
        qmodel = qinfer.wrap_float_model(load_checkpoint(args.model))
    rng = make_rng(cfg["seed"], STREAM_ROUND)
    recon, psnr_db, ssim_val = _eval_pair(qmodel, source, rng)
    write_image(recon, out / "recon.png")

    float_model = qinfer._float_model(qmodel)
    moments = {
        f"layer{i + 1}.weight": dataclasses.asdict(analysis.moment_stats(lyr.weight))
        for i, lyr in enumerate(float_model.layers)
    }
    cost = costmodel.estimate(qmodel.layer_dims(), qmodel.mode,
                              weight_bits=None if qmodel.mode == qinfer.MODE_W32A32
                              else qmodel.weight_bits)
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "mode": qmodel.mode,
        "scheme": qmodel.scheme,
        "psnr_db": psnr_db,
        "ssim": ssim_val,
        "image": {
            "path": str(args.image),
            "width": source.width,
            "height": source.height,
            "channels": source.channels,
        },
        "seed": cfg["seed"],
        "config": cfg,
        "cost": dataclasses.asdict(cost),
        "per_layer_moments": moments,
    }
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"{qmodel.mode} {qmodel.scheme}: PSNR {psnr_db:.2f} dB, SSIM {ssim_val:.4f}")
    print(f"wrote {out / 'report.json'} and {out / 'recon.png'}")
    return 0


def cmd_analyze(args) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    cfg = _run_config(res, args.image)
    model = load_checkpoint(args.checkpoint)
    data = make_grid_dataset(read_image(args.image))
    dists = analysis.collect_distributions(model, data, with_hadamard=args.hadamard)
    header = _config_comment(cfg)
    for label, (hist, _) in dists.items():
        path = out / f"hist_{label}.csv"
        with open(path, "w") as f:
            f.write(header + "\n")
            f.write("label,bin_left,bin_right,count\n")
            for left, right, count in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
                f.write(f"{label},{left:.17g},{right:.17g},{int(count)}\n")
    with open(out / "moments.csv", "w") as f:
        f.write(header + "\n")
        f.write("label,n,mean,std,skewness,excess_kurtosis,min,max\n")
        for label, (_, st) in dists.items():
            f.write(
                f"{label},{st.n},{st.mean:.17g},{st.std:.17g},{st.skewness:.17g},"
                f"{st.excess_kurtosis:.17g},{st.min:.17g},{st.max:.17g}\n"
            )
    print(f"wrote {len(dists)} histogram CSVs and moments.csv to {out}")
    return 0


def cmd_compare(args) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    cfg = _run_config(res, args.image)
    schemes_raw = res.get("schemes", "uniform,kmeans,dhq")
    schemes = [s.strip() for s in schemes_raw.split(",") if s.strip()]
    if not schemes:
        raise UsageError("empty scheme list")
    for s in schemes:
        if s not in SCHEMES:
            raise UsageError(f"unknown scheme {s!r}, expected one of {SCHEMES}")
    bits = res.get("bits", 8, int)
    source = read_image(args.image)
    model = load_checkpoint(args.checkpoint)
    data = make_grid_dataset(source)

    rows = []
    _, psnr_db, ssim_val = _eval_pair(qinfer.wrap_float_model(model), source)
    rows.append(("full-precision", "32/32", psnr_db, ssim_val))
    for scheme in schemes:
        qcfg = QuantConfig(scheme=scheme, weight_bits=bits, act_bits=bits)
        rng = make_rng(cfg["seed"], STREAM_ROUND)
        qmodel = qinfer.build_quantized_model(model, qcfg, data, rng)
        _, psnr_db, ssim_val = _eval_pair(qmodel, source, make_rng(cfg["seed"], STREAM_ROUND))
        rows.append((scheme, f"{bits}/{bits}", psnr_db, ssim_val))

    header = f"{'method':<16}{'W/A bits':<10}{'PSNR (dB)':>10}{'SSIM':>8}"
    print(header)
    print("-" * len(header))
    for name, wa, p, s in rows:
        print(f"{name:<16}{wa:<10}{p:>10.2f}{s:>8.4f}")
    with open(out / "compare.csv", "w") as f:
        f.write(_config_comment(cfg) + "\n")
        f.write("method,wa_bits,psnr_db,ssim\n")
        for name, wa, p, s in rows:
            f.write(f"{name},{wa},{p:.17g},{s:.17g}\n")
    print(f"wrote {out / 'compare.csv'}")
    return 0


class UsageError(ValueError):
    """Command-line usage problem detected after argparse (exit code 2)."""


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
