"""Command-line interface.

Subcommands: explain-local, explain-global, spectrum, benchmark-dsprites,
gen-sprites. Outputs are deterministic given the seed: identical command
lines produce byte-identical JSON/CSV, independent of LATENT_SHAP_THREADS.

Exit codes: 0 success, 2 configuration error, 3 wire-protocol error,
4 benchmark failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from typing import Optional

import numpy as np

from .codec import (
    CodecHandle,
    block_grouping,
    external_codec,
    fourier_codec,
    ground_truth_codec,
    identity_codec,
    pixel_location_grouping,
)
from .errors import ConfigError, LatentShapError, ProtocolError
from .image_io import load_image
from .models import ModelHandle, external_model, hole_detector_model, top_half_counter_model
from .pipeline import (
    DEFAULT_NUM_SAMPLES,
    ExplainConfig,
    attribution_payload,
    benchmark_dsprites,
    benchmark_payload,
    explain_global,
    explain_local,
    global_payload,
    payload_to_csv,
    spectrum_payload,
    spectrum_report,
)
from .sprites import SpriteGenerator, export_dataset, load_manifest, sample_dataset
from .value_function import BackgroundSet

MAX_IDENTITY_PIXEL_FEATURES = 64


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-shap",
        description="Shapley-value explanations of black-box classifiers "
                    "over semantic latent features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, needs_model=True):
        if needs_model:
            p.add_argument("--model", required=True,
                           help="builtin:tophalf[:t1,t2,...] | builtin:hole[:thr] | exec:<cmd>")
        p.add_argument("--samples", type=int, default=DEFAULT_NUM_SAMPLES,
                       help="Monte-Carlo permutation samples per explanation")
        p.add_argument("--bg-draws", type=int, default=1,
                       help="background draws per coalition evaluation")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--method", choices=("auto", "exact", "mc"), default="auto")
        p.add_argument("--target", default=None,
                       help="argmax | class:<k> | label")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--grid", type=int, default=32,
                       help="sprite grid size for manifest data and builtin thresholds")
        p.add_argument("--channels", type=int, default=1,
                       help="channel count for CSV image inputs")
        p.add_argument("--timeout", type=float, default=30.0,
                       help="per-request timeout for exec: handles (seconds)")

    p = sub.add_parser("explain-local", help="attribute one prediction to latent features")
    common(p)
    p.add_argument("--codec", required=True,
                   help="identity | fourier | ground-truth | exec:<cmd>")
    p.add_argument("--image", required=True, help="PNG or CSV image to explain")
    p.add_argument("--data", required=True,
                   help="background data: sprite manifest.csv or a directory of images")
    p.add_argument("--bins", type=int, default=25,
                   help="frequency bins for the fourier codec (0 = per-mode)")

    p = sub.add_parser("explain-global", help="aggregate local values over a labeled dataset")
    common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--data", required=True, help="labeled dataset: sprite manifest.csv")
    p.add_argument("--bins", type=int, default=25)
    p.add_argument("--limit", type=int, default=None,
                   help="explain only the first N points of the dataset")

    p = sub.add_parser("spectrum", help="frequency-binned attribution of one prediction")
    common(p)
    p.add_argument("--codec", default="fourier")
    p.add_argument("--image", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bins", type=int, default=25)

    p = sub.add_parser("benchmark-dsprites", help="run the sprite benchmark end to end")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=600)
    p.add_argument("--n-explain", type=int, default=200)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)

    p = sub.add_parser("gen-sprites", help="export a sprite dataset (PNGs + manifest)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--out", required=True, help="output directory")

    return parser


def _parse_target(spec: Optional[str], default: str) -> tuple[str, Optional[int]]:
    if spec is None:
        spec = default
    if spec == "argmax":
        return "argmax", None
    if spec == "label":
        return "label", None
    if spec.startswith("class:"):
        try:
            return "fixed", int(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad target class in {spec!r}") from None
    raise ConfigError(f"unknown target policy {spec!r}")


def _build_model(spec: str, grid: int, timeout: float) -> ModelHandle:
    if spec.startswith("exec:"):
        return external_model(spec[5:], timeout=timeout)
    if spec == "builtin:tophalf" or spec.startswith("builtin:tophalf:"):
        if ":" in spec[len("builtin:"):]:
            raw = spec.split(":", 2)[2]
            try:
                thresholds = [float(t) for t in raw.split(",")]
            except ValueError:
                raise ConfigError(f"bad thresholds in {spec!r}") from None
        else:
            thresholds = SpriteGenerator(grid=grid).default_thresholds()
        return top_half_counter_model(thresholds)
    if spec == "builtin:hole" or spec.startswith("builtin:hole:"):
        threshold = 0.5
        if spec.startswith("builtin:hole:"):
            try:
                threshold = float(spec.split(":", 2)[2])
            except ValueError:
                raise ConfigError(f"bad binarize threshold in {spec!r}") from None
        return hole_detector_model(threshold)
    raise ConfigError(f"unknown model spec {spec!r}")


def _load_data(path: str, grid: int, channels: int):
    """Returns (images, labels, sprite_samples); labels/samples may be None."""
    if os.path.isdir(path):
        manifest = os.path.join(path, "manifest.csv")
        if os.path.exists(manifest):
            path = manifest
        else:
            files = sorted(
                glob.glob(os.path.join(path, "*.png")) + glob.glob(os.path.join(path, "*.csv"))
            )
            if not files:
                raise ConfigError(f"no images found in {path}")
            return [load_image(f, channels=channels) for f in files], None, None
    if path.endswith(".csv") and os.path.basename(path).startswith("manifest"):
        samples = load_manifest(path, SpriteGenerator(grid=grid))
        return [s.image for s in samples], [s.label for s in samples], samples
    if os.path.isfile(path):
        return [load_image(path, channels=channels)], None, None
    raise ConfigError(f"no data at {path}")


def _build_codec(spec: str, shape, bins: int, sprites, grid: int, timeout: float) -> CodecHandle:
    h, w, c = shape
    if spec.startswith("exec:"):
        return external_codec(spec[5:], timeout=timeout)
    if spec == "identity":
        if h * w <= MAX_IDENTITY_PIXEL_FEATURES:
            grouping = pixel_location_grouping(h, w, c)
        else:
            grouping = block_grouping(h, w, c, 8, 8)
        return identity_codec(h, w, c, grouping)
    if spec == "fourier":
        return fourier_codec(h, w, c, bins if bins > 0 else None)
    if spec == "ground-truth":
        if not sprites:
            raise ConfigError("ground-truth codec needs --data pointing at a sprite manifest")
        return ground_truth_codec(SpriteGenerator(grid=grid), sprites)
    raise ConfigError(f"unknown codec spec {spec!r}")


def _emit(payload: dict, fmt: str, out: Optional[str]) -> None:
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        text = payload_to_csv(payload)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _run_explain_local(args) -> int:
    x = load_image(args.image, channels=args.channels)
    images, labels, sprites = _load_data(args.data, args.grid, args.channels)
    model = _build_model(args.model, args.grid, args.timeout)
    codec = _build_codec(args.codec, x.shape, args.bins, sprites, args.grid, args.timeout)
    policy, target = _parse_target(args.target, "argmax")
    if policy == "label":
        raise ConfigError("label policy needs a labeled dataset; use explain-global")
    cfg = ExplainConfig(
        model=model, codec=codec, target_policy=policy, target_class=target,
        method=args.method, num_samples=args.samples,
        num_background_draws=args.bg_draws, seed=args.seed,
    )
    bg = BackgroundSet(images, seed=args.seed)
    attr = explain_local(cfg, x, bg)
    _emit(attribution_payload(attr), args.format, args.out)
    return 0


def _run_explain_global(args) -> int:
    images, labels, sprites = _load_data(args.data, args.grid, args.channels)
    policy, target = _parse_target(args.target, "label")
    if policy == "label" and labels is None:
        raise ConfigError("explain-global with the label policy needs a labeled manifest")
    if args.limit is not None:
        images = images[: args.limit]
        labels = labels[: args.limit] if labels is not None else None
    model = _build_model(args.model, args.grid, args.timeout)
    codec = _build_codec(args.codec, images[0].shape, args.bins, sprites, args.grid,
                         args.timeout)
    cfg = ExplainConfig(
        model=model, codec=codec, target_policy=policy, target_class=target,
        method=args.method, num_samples=args.samples,
        num_background_draws=args.bg_draws, seed=args.seed,
    )
    dataset = list(zip(images, labels if labels is not None else [None] * len(images)))
    report = explain_global(cfg, dataset)
    _emit(global_payload(report), args.format, args.out)
    return 0


def _run_spectrum(args) -> int:
    x = load_image(args.image, channels=args.channels)
    images, labels, sprites = _load_data(args.data, args.grid, args.channels)
    model = _build_model(args.model, args.grid, args.timeout)
    codec = None
    if args.codec != "fourier":
        codec = _build_codec(args.codec, x.shape, args.bins, sprites, args.grid, args.timeout)
    policy, target = _parse_target(args.target, "argmax")
    if args.bins < 1:
        raise ConfigError("spectrum needs --bins >= 1")
    cfg = ExplainConfig(
        model=model, codec=codec, target_policy=policy, target_class=target,
        method=args.method, num_samples=args.samples,
        num_background_draws=args.bg_draws, seed=args.seed,
    )
    bg = BackgroundSet(images, seed=args.seed)
    rep = spectrum_report(cfg, x, args.bins, bg)
    _emit(spectrum_payload(rep), args.format, args.out)
    return 0


def _run_benchmark(args) -> int:
    result = benchmark_dsprites(
        seed=args.seed, n_train=args.n_train, n_explain=args.n_explain,
        num_samples=args.samples, grid=args.grid,
    )
    _emit(benchmark_payload(result), args.format, args.out)
    for name, ok in result.checks.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}", file=sys.stderr)
    return 0 if result.passed else 4


def _run_gen_sprites(args) -> int:
    gen = SpriteGenerator(grid=args.grid)
    samples = sample_dataset(args.n, seed=args.seed, gen=gen)
    manifest = export_dataset(samples, args.out)
    print(manifest)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "explain-local": _run_explain_local,
        "explain-global": _run_explain_global,
        "spectrum": _run_spectrum,
        "benchmark-dsprites": _run_benchmark,
        "gen-sprites": _run_gen_sprites,
    }
    try:
        return handlers[args.command](args)
    except ProtocolError as e:
        print(f"protocol error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, LatentShapError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
