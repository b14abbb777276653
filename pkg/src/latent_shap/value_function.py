"""Coalition value functions over latent features.

The value of a coalition S is the model's expected target-class probability
after splicing: in-coalition latent scalars come from the explained point,
out-of-coalition scalars from background points, and the splice is decoded
back to an image before the model sees it. Background draws are keyed on the
coalition bitmask (and the configured seeds), so the value of a coalition is
a deterministic function and can be memoized.

The full coalition never touches the background: its value is the model's
output on decode(encode(x)). For lossy codecs that reconstruction, not x,
is the efficiency reference point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .codec import CodecHandle, LatentVector, pixel_location_grouping, identity_codec
from .errors import (
    CodecFailure,
    ConfigError,
    GroupingMismatch,
    LatentShapError,
    ModelFailure,
    ShapeMismatch,
)
from .image_io import as_image
from .models import ModelHandle
from .rng import DOMAIN_BACKGROUND, substream
from .shapley import Coalition, ValueFunction

# Upper bound on images pooled into one model call by batch evaluation.
_BATCH_IMAGE_CAP = 4096


@dataclass
class BackgroundSet:
    """Empirical stand-in for the data distribution; sampled with replacement."""

    points: list[np.ndarray]
    seed: int = 0

    def __post_init__(self):
        if len(self.points) == 0:
            raise ConfigError("background set must be non-empty")
        self.points = [as_image(p) for p in self.points]
        shapes = {p.shape for p in self.points}
        if len(shapes) != 1:
            raise ShapeMismatch(f"background images disagree on shape: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.points[0].shape

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class ValueFnConfig:
    target_class: Optional[int] = None  # None: model argmax on the explained point
    num_background_draws: int = 1
    seed: int = 0
    exhaustive: bool = False  # iterate the whole background set per coalition
    memoize: bool = True

    def __post_init__(self):
        if self.num_background_draws < 1:
            raise ConfigError("num_background_draws must be >= 1")


def splice(z: LatentVector, z_prime: LatentVector, s: Coalition) -> LatentVector:
    """In-coalition scalars from z, the rest from z_prime."""
    if z.grouping is not z_prime.grouping and not z.grouping.same_structure(z_prime.grouping):
        raise GroupingMismatch("spliced latents must share one grouping")
    if s.n != z.grouping.num_features:
        raise GroupingMismatch(
            f"coalition over {s.n} players, grouping has {z.grouping.num_features} features"
        )
    mask = z.grouping.scalar_mask(s.members)
    return LatentVector(np.where(mask, z.scalars, z_prime.scalars), z.grouping)


def make_latent_value_fn(model: ModelHandle, codec: CodecHandle, x: np.ndarray,
                         bg: BackgroundSet, cfg: ValueFnConfig) -> ValueFunction:
    """Value function of the target-class probability over latent coalitions.

    For coalition S the handle averages, over num_background_draws points x'
    drawn from bg on the substream keyed by (bg.seed, cfg.seed, S), the model
    probability of the target class on decode(splice(encode(x), encode(x'), S)).
    With cfg.exhaustive the whole background set is iterated instead of
    sampled. The full coalition is the background-independent reconstruction
    value.
    """
    x = as_image(x)
    if x.shape != tuple(codec.input_shape):
        raise ShapeMismatch(f"codec expects {tuple(codec.input_shape)}, image is {x.shape}")
    if bg.shape != x.shape:
        raise ShapeMismatch(f"background shape {bg.shape} differs from image shape {x.shape}")

    grouping = codec.grouping
    n = grouping.num_features
    full_mask = (1 << n) - 1

    def _encode(image, what):
        try:
            return codec.encode(image)
        except LatentShapError:
            raise
        except Exception as e:
            raise CodecFailure(f"encode failed on {what}: {e}") from e

    def _decode(z, mask):
        try:
            return codec.decode(z)
        except LatentShapError as e:
            raise type(e)(f"{e} (decoding coalition {mask:#x})") from e
        except Exception as e:
            raise CodecFailure(f"decode failed for coalition {mask:#x}: {e}") from e

    def _predict(batch, mask):
        try:
            probs = model.predict(batch)
        except LatentShapError as e:
            raise type(e)(f"{e} (predicting coalition {mask:#x})") from e
        except Exception as e:
            raise ModelFailure(f"predict failed for coalition {mask:#x}: {e}") from e
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (len(batch), model.num_classes):
            raise ModelFailure(
                f"model returned shape {probs.shape}, expected {(len(batch), model.num_classes)}"
            )
        return probs

    if cfg.target_class is None:
        y = int(np.argmax(_predict(x[None], full_mask)[0]))
    else:
        y = int(cfg.target_class)
        if not 0 <= y < model.num_classes:
            raise ConfigError(f"target class {y} outside 0..{model.num_classes - 1}")

    z_x = _encode(x, "the explained point")
    reconstruction = _decode(z_x, full_mask)
    v_full = float(_predict(reconstruction[None], full_mask)[0, y])

    bg_latents: dict[int, LatentVector] = {}

    def _bg_latent(j: int) -> LatentVector:
        z = bg_latents.get(j)
        if z is None:
            z = _encode(bg.points[j], f"background point {j}")
            bg_latents[j] = z
        return z

    def _draw_indices(mask: int) -> np.ndarray:
        if cfg.exhaustive:
            return np.arange(len(bg))
        rng = substream(bg.seed, DOMAIN_BACKGROUND, cfg.seed, mask)
        return rng.integers(0, len(bg), size=cfg.num_background_draws)

    def _spliced_batch(mask: int) -> np.ndarray:
        """Decoded splices for one coalition, shape (draws, H, W, C)."""
        s = Coalition(mask, n)
        zs = [splice(z_x, _bg_latent(int(j)), s) for j in _draw_indices(mask)]
        if codec.decode_batch is not None:
            try:
                return np.asarray(codec.decode_batch(zs))
            except LatentShapError as e:
                raise type(e)(f"{e} (decoding coalition {mask:#x})") from e
            except Exception as e:
                raise CodecFailure(f"decode failed for coalition {mask:#x}: {e}") from e
        return np.stack([_decode(z, mask) for z in zs])

    memo: dict[int, float] = {}

    def _value(mask: int) -> float:
        if mask == full_mask:
            return v_full
        hit = memo.get(mask)
        if hit is not None:
            return hit
        probs = _predict(_spliced_batch(mask), mask)
        value = float(np.mean(probs[:, y]))
        if cfg.memoize:
            memo[mask] = value
        return value

    def evaluate(s: Coalition) -> float:
        if s.n != n:
            raise GroupingMismatch(f"coalition over {s.n} players, value function has {n}")
        return _value(s.members)

    def batch_evaluate(masks: np.ndarray) -> np.ndarray:
        # Pool model calls over every coalition in the batch that is not
        # already memoized, bounding the pooled image count so exhaustive
        # backgrounds do not balloon memory.
        todo = []
        seen = set()
        for m in masks:
            m = int(m)
            if m != full_mask and m not in memo and m not in seen:
                seen.add(m)
                todo.append(m)
        computed: dict[int, float] = {}
        group: list[int] = []
        group_images = 0

        def flush():
            nonlocal group, group_images
            if not group:
                return
            per_mask = [_spliced_batch(m) for m in group]
            probs = _predict(np.concatenate(per_mask), group[0])[:, y]
            offset = 0
            for m, imgs in zip(group, per_mask):
                computed[m] = float(np.mean(probs[offset:offset + len(imgs)]))
                offset += len(imgs)
            group, group_images = [], 0

        per_eval = len(bg) if cfg.exhaustive else cfg.num_background_draws
        for m in todo:
            group.append(m)
            group_images += per_eval
            if group_images >= _BATCH_IMAGE_CAP:
                flush()
        flush()
        if cfg.memoize:
            memo.update(computed)

        out = np.empty(len(masks), dtype=np.float64)
        for i, m in enumerate(masks):
            m = int(m)
            if m == full_mask:
                out[i] = v_full
            else:
                hit = memo.get(m)
                out[i] = computed[m] if hit is None else hit
        return out

    return ValueFunction(n=n, evaluate=evaluate, batch_evaluate=batch_evaluate,
                         name=f"latent-value[{codec.name}->{model.name}]")


def make_raw_value_fn(model: ModelHandle, x: np.ndarray, bg: BackgroundSet,
                      cfg: ValueFnConfig, grouping=None) -> ValueFunction:
    """Raw-feature special case: identity codec over a pixel grouping."""
    x = as_image(x)
    h, w, c = x.shape
    if grouping is None:
        grouping = pixel_location_grouping(h, w, c)
    codec = identity_codec(h, w, c, grouping)
    return make_latent_value_fn(model, codec, x, bg, cfg)
