"""Orchestration: local/global explanations, spectra, and the sprite benchmark.

Local explanations dispatch to exact enumeration when the feature count and
background size make it affordable, otherwise to Monte-Carlo permutation
sampling. Global explanations average local attributions under the true-label
(or configured) target policy and report the sum-rule diagnostic: the total
global attribution should match the model's accuracy-above-baseline measured
directly on the dataset.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .codec import CodecHandle, fourier_codec
from .errors import CodecMismatch, ConfigError, EmptyDataset
from .image_io import as_image
from .models import ModelHandle, calibrate_thresholds, top_half_counter_model, top_half_counts
from .rng import DOMAIN_GLOBAL, spawn_seed, substream
from .shapley import EXACT_PLAYER_CAP, Attribution, exact_shapley, efficiency_gap, mc_shapley
from .value_function import BackgroundSet, ValueFnConfig, make_latent_value_fn

THREADS_ENV = "LATENT_SHAP_THREADS"
DEFAULT_NUM_SAMPLES = 10_000
EXACT_EVAL_BUDGET = 10_000_000
SUM_RULE_PAIR_CAP = 512

TARGET_POLICIES = ("argmax", "fixed", "label")
METHODS = ("auto", "exact", "mc")


@dataclass
class ExplainConfig:
    model: ModelHandle
    codec: Optional[CodecHandle] = None
    target_policy: str = "argmax"
    target_class: Optional[int] = None  # required when target_policy == "fixed"
    method: str = "auto"
    num_samples: int = DEFAULT_NUM_SAMPLES
    num_background_draws: int = 1
    seed: int = 0
    threads: Optional[int] = None
    exact_eval_budget: int = EXACT_EVAL_BUDGET
    keep_locals: bool = False

    def __post_init__(self):
        if self.target_policy not in TARGET_POLICIES:
            raise ConfigError(f"unknown target policy {self.target_policy!r}")
        if self.target_policy == "fixed" and self.target_class is None:
            raise ConfigError("fixed target policy needs target_class")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.num_samples < 2:
            raise ConfigError("num_samples must be >= 2")


@dataclass
class GlobalReport:
    values: np.ndarray
    std_errors: np.ndarray
    feature_names: tuple[str, ...]
    sum_rule_lhs: float
    sum_rule_rhs: float
    num_points: int
    method: str
    num_samples: int
    locals: Optional[list[Attribution]] = None


@dataclass
class SpectrumReport:
    frequencies: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    attribution: Attribution


def resolve_threads(explicit: Optional[int] = None) -> int:
    if explicit is not None:
        if explicit < 1:
            raise ConfigError("thread count must be >= 1")
        return explicit
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from None
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return value
    return min(4, os.cpu_count() or 1)


def _resolve_target(cfg: ExplainConfig, x: np.ndarray, label: Optional[int]) -> int:
    if cfg.target_policy == "fixed":
        return int(cfg.target_class)
    if cfg.target_policy == "label":
        if label is None:
            raise ConfigError("label target policy needs a labeled data point")
        return int(label)
    return int(np.argmax(cfg.model.predict(x[None])[0]))


def _exhaustive_affordable(cfg: ExplainConfig, n: int, bg_size: int) -> bool:
    return n <= EXACT_PLAYER_CAP and (1 << n) * bg_size <= cfg.exact_eval_budget


def _local(cfg: ExplainConfig, x: np.ndarray, bg: BackgroundSet, y: int,
           vf_seed: int, mc_seed: int) -> Attribution:
    codec = cfg.codec
    if codec is None:
        raise ConfigError("explain config has no codec")
    n = codec.grouping.num_features
    # Background handling is decided by affordability alone, so that a forced
    # Monte-Carlo run on a small instance estimates the same game exact mode
    # enumerates; sampled single draws are the fallback for large instances.
    affordable = _exhaustive_affordable(cfg, n, len(bg))
    if cfg.method == "auto":
        method = "exact" if affordable else "mc"
    else:
        method = cfg.method
    vf_cfg = ValueFnConfig(
        target_class=y,
        num_background_draws=cfg.num_background_draws,
        seed=vf_seed,
        exhaustive=affordable or method == "exact",
    )
    vf = make_latent_value_fn(cfg.model, codec, x, bg, vf_cfg)
    if method == "exact":
        attr = exact_shapley(vf)
    else:
        attr = mc_shapley(vf, num_samples=cfg.num_samples, seed=mc_seed)
    attr.feature_names = list(codec.grouping.feature_names)
    attr.target_class = y
    return attr


def explain_local(cfg: ExplainConfig, x: np.ndarray, background: BackgroundSet,
                  label: Optional[int] = None) -> Attribution:
    """Attribution of the model's target-class probability on one point."""
    x = as_image(x)
    y = _resolve_target(cfg, x, label)
    return _local(cfg, x, background, y, vf_seed=cfg.seed, mc_seed=cfg.seed)


def explain_global(cfg: ExplainConfig,
                   dataset: Sequence[tuple[np.ndarray, Optional[int]]]) -> GlobalReport:
    """Mean local attribution over a labeled dataset, plus the sum-rule check.

    The background distribution is the dataset itself; every point gets its
    own derived seeds so local estimates are independent. Per-point work runs
    on up to ``resolve_threads`` threads; aggregation order is fixed by point
    index, so results do not depend on scheduling.
    """
    if len(dataset) == 0:
        raise EmptyDataset("explain_global needs at least one data point")
    codec = cfg.codec
    if codec is None:
        raise ConfigError("explain config has no codec")
    images = [as_image(x) for x, _ in dataset]
    labels = [lab for _, lab in dataset]
    bg = BackgroundSet(images, seed=spawn_seed(cfg.seed, DOMAIN_GLOBAL, "background"))
    targets = [_resolve_target(cfg, x, lab) for x, lab in zip(images, labels)]

    def one(j: int) -> Attribution:
        return _local(
            cfg, images[j], bg, targets[j],
            vf_seed=spawn_seed(cfg.seed, DOMAIN_GLOBAL, j, "draws"),
            mc_seed=spawn_seed(cfg.seed, DOMAIN_GLOBAL, j, "permutations"),
        )

    threads = resolve_threads(cfg.threads)
    indices = range(len(images))
    if threads == 1:
        locals_ = [one(j) for j in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            locals_ = list(pool.map(one, indices))

    stacked = np.stack([a.values for a in locals_])
    values = stacked.mean(axis=0)
    if len(locals_) > 1:
        std_errors = stacked.std(axis=0, ddof=1) / math.sqrt(len(locals_))
    else:
        std_errors = locals_[0].std_errors.copy()

    lhs = float(values.sum())
    rhs = _sum_rule_rhs(cfg, images, targets)
    return GlobalReport(
        values=values,
        std_errors=std_errors,
        feature_names=codec.grouping.feature_names,
        sum_rule_lhs=lhs,
        sum_rule_rhs=rhs,
        num_points=len(images),
        method=locals_[0].method,
        num_samples=locals_[0].num_samples,
        locals=locals_ if cfg.keep_locals else None,
    )


def _sum_rule_rhs(cfg: ExplainConfig, images: list[np.ndarray], targets: list[int]) -> float:
    """E[f_y(x)] - E[f_y(x')] with x' and y drawn independently.

    Model outputs are taken on codec reconstructions, matching the value
    functions' efficiency reference. Up to SUM_RULE_PAIR_CAP points the
    product measure is evaluated exactly by a full cross pairing; beyond
    that, the x' marginal is subsampled deterministically.
    """
    codec = cfg.codec
    recons = np.stack([codec.decode(codec.encode(x)) for x in images])
    probs = cfg.model.predict(recons)  # (N, num_classes)
    ys = np.asarray(targets)
    n = len(images)
    matched = float(np.mean(probs[np.arange(n), ys]))
    if n <= SUM_RULE_PAIR_CAP:
        baseline = float(np.mean(probs[:, ys]))
    else:
        rng = substream(cfg.seed, DOMAIN_GLOBAL, "sum-rule")
        rows = rng.integers(0, n, size=SUM_RULE_PAIR_CAP)
        baseline = float(np.mean(probs[rows][:, ys]))
    return matched - baseline


def spectrum_report(cfg: ExplainConfig, x: np.ndarray, num_bins: int,
                    background: BackgroundSet, label: Optional[int] = None) -> SpectrumReport:
    """Frequency-binned attribution rows (bin center, value, std error)."""
    x = as_image(x)
    h, w, c = x.shape
    if cfg.codec is not None and not cfg.codec.grouping.feature_kind.startswith("fourier"):
        raise CodecMismatch(
            f"spectrum needs a fourier codec, got {cfg.codec.grouping.feature_kind!r}"
        )
    codec = fourier_codec(h, w, c, num_bins)
    run_cfg = ExplainConfig(**{**cfg.__dict__, "codec": codec})
    attr = explain_local(run_cfg, x, background, label=label)
    order = np.argsort(codec.grouping.frequency_centers, kind="stable")
    return SpectrumReport(
        frequencies=np.asarray(codec.grouping.frequency_centers)[order],
        values=attr.values[order],
        std_errors=attr.std_errors[order],
        attribution=attr,
    )


# ---------------------------------------------------------------------------
# dSprites-style benchmark

BENCHMARK_GRID = 64
MAIN_SHARE_MIN = 0.90
MINOR_SHARE_MAX = 0.05


@dataclass
class BenchmarkResult:
    passed: bool
    checks: dict
    metrics: dict
    report: GlobalReport
    local_case: Attribution
    thresholds: list[float]
    config: dict


def benchmark_dsprites(seed: int, n_train: int = 600, n_explain: int = 200,
                       num_samples: int = 2000, grid: int = BENCHMARK_GRID,
                       threads: Optional[int] = None) -> BenchmarkResult:
    """Ground-truth-codec benchmark of the whole pipeline.

    Generates sprites, calibrates the counter model's thresholds on a
    top-half calibration ladder, explains the model globally over n_explain
    sprites with the true-label policy, and checks that attribution
    concentrates on vertical position and scale. Also checks the canonical
    local case: a sprite with an empty top half is predicted class 0 with
    pos-y dominant, and at maximum scale its scale value is negative.
    """
    from .codec import ground_truth_codec
    from .sprites import SpriteGenerator, SpriteLatents, calibration_ladder, sample_dataset

    if n_train < 1 or n_explain < 1:
        raise ConfigError("n_train and n_explain must be >= 1")

    gen = SpriteGenerator(grid=grid)
    ladder = calibration_ladder(gen, n_train, seed=spawn_seed(seed, "calibration"))
    thresholds = calibrate_thresholds(ladder, 6)
    model = top_half_counter_model(thresholds)
    dataset = sample_dataset(n_explain, seed=spawn_seed(seed, "dataset"), gen=gen,
                             thresholds=thresholds)
    codec = ground_truth_codec(gen, dataset)

    cfg = ExplainConfig(
        model=model,
        codec=codec,
        target_policy="label",
        method="mc",
        num_samples=num_samples,
        seed=seed,
        threads=threads,
    )
    report = explain_global(cfg, [(s.image, s.label) for s in dataset])

    names = list(report.feature_names)
    phi = dict(zip(names, np.abs(report.values)))
    total = float(np.abs(report.values).sum())
    slack = 3.0 * float(np.sqrt(np.sum(report.std_errors**2)))
    main_share = (phi["pos-y"] + phi["scale"]) / total
    checks = {
        "main_share": phi["pos-y"] + phi["scale"] + slack >= MAIN_SHARE_MIN * total,
    }
    metrics = {
        "main_share": main_share,
        "three_sigma_slack": slack,
        "total_abs_attribution": total,
    }
    for minor in ("shape", "orientation", "pos-x"):
        checks[f"{minor}_share"] = phi[minor] - slack <= MINOR_SHARE_MAX * total
        metrics[f"{minor}_share"] = phi[minor] / total

    # Local case: the largest sprite, axis-aligned, entirely below the midline.
    h6 = math.sqrt(gen.area(5)) / 2.0
    cy = min(grid / 2.0 + h6 + 1.0, grid - gen.margin)
    lat = SpriteLatents("square", 5, 0.0, 0.5, gen.pos_of_center(cy))
    image = gen.render(lat)
    if int(top_half_counts(image[None])[0]) != 0:
        raise ConfigError(f"grid {grid} cannot place the largest sprite below the midline")
    codec.register(lat, image)
    local_cfg = ExplainConfig(
        model=model, codec=codec, target_policy="argmax",
        method="auto", seed=spawn_seed(seed, "local-case"), threads=threads,
    )
    bg = BackgroundSet([s.image for s in dataset],
                       seed=spawn_seed(seed, "local-case-bg"))
    local_case = explain_local(local_cfg, image, bg)
    by_name = dict(zip(local_case.feature_names, local_case.values))
    checks["local_predicted_class_0"] = local_case.target_class == 0
    checks["local_pos_y_dominant"] = (
        local_case.feature_names[int(np.argmax(np.abs(local_case.values)))] == "pos-y"
    )
    checks["local_scale_negative"] = by_name["scale"] < 0.0
    metrics["local_phi"] = {k: float(v) for k, v in by_name.items()}

    return BenchmarkResult(
        passed=all(checks.values()),
        checks=checks,
        metrics=metrics,
        report=report,
        local_case=local_case,
        thresholds=[float(t) for t in thresholds],
        config={
            "seed": seed,
            "n_train": n_train,
            "n_explain": n_explain,
            "num_samples": num_samples,
            "grid": grid,
        },
    )


# ---------------------------------------------------------------------------
# plot-ready payloads

SCHEMA = "latent-shap/1"


def attribution_payload(attr: Attribution) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "local-attribution",
        "feature_names": list(attr.feature_names or
                              [f"feature_{i}" for i in range(attr.n)]),
        "values": [float(v) for v in attr.values],
        "std_errors": [float(s) for s in attr.std_errors],
        "v_full": attr.v_full,
        "v_empty": attr.v_empty,
        "efficiency_gap": efficiency_gap(attr),
        "method": attr.method,
        "num_samples": attr.num_samples,
        "target_class": attr.target_class,
    }


def global_payload(report: GlobalReport) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "global-attribution",
        "feature_names": list(report.feature_names),
        "values": [float(v) for v in report.values],
        "std_errors": [float(s) for s in report.std_errors],
        "sum_rule_lhs": report.sum_rule_lhs,
        "sum_rule_rhs": report.sum_rule_rhs,
        "num_points": report.num_points,
        "method": report.method,
        "num_samples": report.num_samples,
    }


def spectrum_payload(report: SpectrumReport) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "spectrum",
        "rows": [
            {"frequency": float(f), "value": float(v), "std_error": float(s)}
            for f, v, s in zip(report.frequencies, report.values, report.std_errors)
        ],
        "method": report.attribution.method,
        "num_samples": report.attribution.num_samples,
        "target_class": report.attribution.target_class,
    }


def benchmark_payload(result: BenchmarkResult) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "benchmark-dsprites",
        "passed": result.passed,
        "checks": result.checks,
        "metrics": result.metrics,
        "thresholds": result.thresholds,
        "global": global_payload(result.report),
        "local_case": attribution_payload(result.local_case),
        "config": result.config,
    }


def payload_to_csv(payload: dict) -> str:
    """Plot-ready CSV rendering of a payload's tabular core."""
    kind = payload.get("kind")
    lines = []
    if kind in ("local-attribution", "global-attribution"):
        lines.append("feature,value,std_error")
        for name, v, s in zip(payload["feature_names"], payload["values"],
                              payload["std_errors"]):
            lines.append(f"{name},{v!r},{s!r}")
    elif kind == "spectrum":
        lines.append("frequency,value,std_error")
        for row in payload["rows"]:
            lines.append(f"{row['frequency']!r},{row['value']!r},{row['std_error']!r}")
    elif kind == "benchmark-dsprites":
        lines.append("check,passed")
        for name, ok in payload["checks"].items():
            lines.append(f"{name},{int(ok)}")
    else:
        raise ConfigError(f"no CSV rendering for payload kind {kind!r}")
    return "\n".join(lines) + "\n"
