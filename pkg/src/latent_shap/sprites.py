"""Deterministic sprite benchmark data with a known 5-dimensional latent space.

Sprites are white shapes on a black square grid, described by five latents:
shape (square / ellipse / triangle), one of six scales, orientation, and a
normalized center position. All three shapes cover the same pixel area at a
given scale, so the top-half white-pixel count of a fully visible sprite is
set by its scale alone and the counts of a mixed dataset cluster by scale.

Rendering samples pixel centers against an analytic inside-test with no
anti-aliasing, so counts are integers and a latent tuple always renders to
the identical image.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, LatentOutOfRange
from .image_io import save_image_png
from .models import top_half_counts
from .rng import DOMAIN_CALIBRATION, DOMAIN_SPRITES, substream

SHAPES = ("square", "ellipse", "triangle")
NUM_SCALES = 6

# Square half-side ladders. Consecutive half-sides straddle a k+0.5 boundary,
# so centered-square pixel counts strictly increase with scale; the largest
# entry keeps the biggest sprite placeable entirely in one half of the grid.
_HALF_SIDES_SMALL = (0.8, 1.6, 2.6, 3.6, 4.6, 5.53)   # grids < 48
_HALF_SIDES_LARGE = (1.6, 2.6, 3.6, 4.6, 5.6, 6.6)    # grids >= 48

_TRIANGLE_AREA_FACTOR = 3.0 * math.sqrt(3.0) / 4.0  # area of unit-circumradius equilateral


@dataclass(frozen=True)
class SpriteLatents:
    shape: str
    scale_idx: int
    orientation: float
    pos_x: float
    pos_y: float

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise LatentOutOfRange(f"unknown shape {self.shape!r}")
        if not 0 <= self.scale_idx < NUM_SCALES:
            raise LatentOutOfRange(f"scale_idx {self.scale_idx} outside 0..{NUM_SCALES - 1}")
        if not (math.isfinite(self.orientation) and 0.0 <= self.orientation < 2.0 * math.pi):
            raise LatentOutOfRange(f"orientation {self.orientation} outside [0, 2*pi)")
        for name, v in (("pos_x", self.pos_x), ("pos_y", self.pos_y)):
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise LatentOutOfRange(f"{name} {v} outside [0, 1]")


@dataclass(frozen=True)
class SpriteSample:
    latents: SpriteLatents
    image: np.ndarray
    label: int


class SpriteGenerator:
    """Renders sprites onto a grid x grid x 1 canvas.

    scale_radii are equal-area disc radii: at scale k every shape covers
    pi * r_k^2 pixels of area. Centers are confined to a margin equal to the
    largest circumradius over shapes and scales, so every sprite fits the
    frame at every orientation and position.
    """

    def __init__(self, grid: int = 32, scale_radii: Optional[Sequence[float]] = None,
                 ellipse_aspect: float = 0.6):
        if grid < 8:
            raise ConfigError(f"grid {grid} too small")
        if not 0.0 < ellipse_aspect <= 1.0:
            raise ConfigError("ellipse aspect must be in (0, 1]")
        if scale_radii is None:
            half_sides = _HALF_SIDES_LARGE if grid >= 48 else _HALF_SIDES_SMALL
            scale_radii = tuple(2.0 * h / math.sqrt(math.pi) for h in half_sides)
        radii = tuple(float(r) for r in scale_radii)
        if len(radii) != NUM_SCALES or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ConfigError(f"scale_radii must be {NUM_SCALES} increasing values")
        self.grid = int(grid)
        self.scale_radii = radii
        self.ellipse_aspect = float(ellipse_aspect)
        # Triangle has the largest circumradius of the three equal-area shapes.
        self.margin = self.circumradius("triangle", NUM_SCALES - 1)
        if self.grid - 2.0 * self.margin < 2.0:
            raise ConfigError(
                f"grid {grid} cannot host the largest sprite (margin {self.margin:.2f})"
            )
        centers = np.arange(self.grid) + 0.5
        self._ys, self._xs = np.meshgrid(centers, centers, indexing="ij")

    def area(self, scale_idx: int) -> float:
        return math.pi * self.scale_radii[scale_idx] ** 2

    def circumradius(self, shape: str, scale_idx: int) -> float:
        a = self.area(scale_idx)
        if shape == "square":
            return math.sqrt(a / 2.0)
        if shape == "ellipse":
            return math.sqrt(a / (math.pi * self.ellipse_aspect))
        if shape == "triangle":
            return math.sqrt(a / _TRIANGLE_AREA_FACTOR)
        raise LatentOutOfRange(f"unknown shape {shape!r}")

    def center_px(self, pos: float) -> float:
        return self.margin + pos * (self.grid - 2.0 * self.margin)

    def pos_of_center(self, center: float) -> float:
        return (center - self.margin) / (self.grid - 2.0 * self.margin)

    def default_thresholds(self) -> np.ndarray:
        """Class boundaries at midpoints between consecutive scale areas."""
        areas = np.array([self.area(k) for k in range(NUM_SCALES)])
        return (areas[:-1] + areas[1:]) / 2.0

    def render(self, lat: SpriteLatents) -> np.ndarray:
        lat.validate()
        out = np.zeros((self.grid, self.grid, 1))
        self._paint(lat, out)
        return out

    def render_batch(self, latents: Sequence[SpriteLatents]) -> np.ndarray:
        """Render many sprites; returns (B, grid, grid, 1)."""
        out = np.zeros((len(latents), self.grid, self.grid, 1))
        for i, lat in enumerate(latents):
            lat.validate()
            self._paint(lat, out[i])
        return out

    def _paint(self, lat: SpriteLatents, out: np.ndarray) -> None:
        # The inside test only needs the circumradius bounding box; pixels
        # outside it cannot belong to the shape.
        g = self.grid
        cx = self.center_px(lat.pos_x)
        cy = self.center_px(lat.pos_y)
        radius = self.circumradius(lat.shape, lat.scale_idx)
        r0 = max(int(math.floor(cy - radius - 0.5)), 0)
        r1 = min(int(math.ceil(cy + radius + 0.5)), g)
        c0 = max(int(math.floor(cx - radius - 0.5)), 0)
        c1 = min(int(math.ceil(cx + radius + 0.5)), g)
        dx = self._xs[r0:r1, c0:c1] - cx
        dy = self._ys[r0:r1, c0:c1] - cy
        cos_t, sin_t = math.cos(lat.orientation), math.sin(lat.orientation)
        u = cos_t * dx + sin_t * dy
        w = -sin_t * dx + cos_t * dy

        area = self.area(lat.scale_idx)
        if lat.shape == "square":
            h = math.sqrt(area) / 2.0
            inside = (np.abs(u) <= h) & (np.abs(w) <= h)
        elif lat.shape == "ellipse":
            a = math.sqrt(area / (math.pi * self.ellipse_aspect))
            b = self.ellipse_aspect * a
            inside = (u / a) ** 2 + (w / b) ** 2 <= 1.0
        else:
            r = math.sqrt(area / _TRIANGLE_AREA_FACTOR)
            # Vertex up at orientation 0; counterclockwise winding.
            angles = [math.pi / 2 + k * 2.0 * math.pi / 3.0 for k in range(3)]
            verts = [(r * math.cos(t), -r * math.sin(t)) for t in angles]
            inside = np.ones_like(u, dtype=bool)
            for (x1, y1), (x2, y2) in zip(verts, verts[1:] + verts[:1]):
                cross = (x2 - x1) * (w - y1) - (y2 - y1) * (u - x1)
                inside &= cross <= 0.0
        out[r0:r1, c0:c1, 0] = inside


def render(lat: SpriteLatents, gen: SpriteGenerator) -> np.ndarray:
    return gen.render(lat)


def sample_latents(rng: np.random.Generator) -> SpriteLatents:
    return SpriteLatents(
        shape=SHAPES[int(rng.integers(len(SHAPES)))],
        scale_idx=int(rng.integers(NUM_SCALES)),
        orientation=float(rng.uniform(0.0, 2.0 * math.pi)),
        pos_x=float(rng.uniform(0.0, 1.0)),
        pos_y=float(rng.uniform(0.0, 1.0)),
    )


def sample_dataset(n: int, seed: int, gen: SpriteGenerator,
                   thresholds: Optional[Sequence[float]] = None) -> list[SpriteSample]:
    """n sprites with latents drawn uniformly from per-index substreams.

    Labels are top-half-counter classes under ``thresholds`` (defaulting to
    the generator's analytic scale-area midpoints).
    """
    if n < 1:
        raise ConfigError("need n >= 1")
    thr = np.asarray(thresholds if thresholds is not None else gen.default_thresholds())
    samples = []
    for i in range(n):
        lat = sample_latents(substream(seed, DOMAIN_SPRITES, i))
        img = gen.render(lat)
        count = int(top_half_counts(img[None])[0])
        label = int(np.searchsorted(thr, count, side="left"))
        samples.append(SpriteSample(latents=lat, image=img, label=label))
    return samples


def downward_extent(gen: SpriteGenerator, shape: str, scale_idx: int,
                    orientation: float) -> float:
    """How far below its center a sprite reaches, in pixels."""
    area = gen.area(scale_idx)
    cos_t, sin_t = math.cos(orientation), math.sin(orientation)
    if shape == "square":
        h = math.sqrt(area) / 2.0
        return h * (abs(cos_t) + abs(sin_t))
    if shape == "ellipse":
        a = math.sqrt(area / (math.pi * gen.ellipse_aspect))
        b = gen.ellipse_aspect * a
        return math.hypot(a * sin_t, b * cos_t)
    r = math.sqrt(area / _TRIANGLE_AREA_FACTOR)
    verts = [math.pi / 2 + k * 2.0 * math.pi / 3.0 for k in range(3)]
    return max(sin_t * (r * math.cos(t)) + cos_t * (-r * math.sin(t)) for t in verts)


def calibration_ladder(gen: SpriteGenerator, n: int, seed: int) -> list[np.ndarray]:
    """Sprites rendered entirely inside the top half, cycling scales & shapes.

    Because all shapes share one area per scale, the top-half counts of these
    images cluster into NUM_SCALES groups, one per scale, which is what
    threshold calibration consumes.
    """
    if n < 1:
        raise ConfigError("need n >= 1")
    ceiling = gen.grid / 2.0 - 0.55
    images = []
    for i in range(n):
        scale_idx = i % NUM_SCALES
        shape = SHAPES[(i // NUM_SCALES) % len(SHAPES)]
        rng = substream(seed, DOMAIN_CALIBRATION, i)
        orientation = float(rng.uniform(0.0, 2.0 * math.pi))
        top = ceiling - downward_extent(gen, shape, scale_idx, orientation)
        if top < gen.margin:
            # Cramped grid: fall back to the flattest pose of this shape.
            orientation = 0.0
            top = ceiling - downward_extent(gen, shape, scale_idx, orientation)
        if top < gen.margin:
            raise ConfigError(
                f"scale {scale_idx} {shape} cannot fit in the top half of grid {gen.grid}"
            )
        cy = float(rng.uniform(gen.margin, top))
        lat = SpriteLatents(
            shape=shape,
            scale_idx=scale_idx,
            orientation=orientation,
            pos_x=float(rng.uniform(0.0, 1.0)),
            pos_y=gen.pos_of_center(cy),
        )
        images.append(gen.render(lat))
    return images


MANIFEST_FIELDS = ("index", "shape", "scale_idx", "orientation", "pos_x", "pos_y", "label")


def export_dataset(samples: Sequence[SpriteSample], out_dir: str) -> str:
    """Write PNGs plus a manifest CSV; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_FIELDS)
        for i, s in enumerate(samples):
            save_image_png(s.image, os.path.join(out_dir, f"sprite_{i:05d}.png"))
            writer.writerow([
                i, s.latents.shape, s.latents.scale_idx,
                repr(s.latents.orientation), repr(s.latents.pos_x), repr(s.latents.pos_y),
                s.label,
            ])
    return manifest


def load_manifest(manifest_path: str, gen: SpriteGenerator) -> list[SpriteSample]:
    """Rebuild a dataset from its manifest by re-rendering each latent tuple."""
    samples = []
    with open(manifest_path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            lat = SpriteLatents(
                shape=row["shape"],
                scale_idx=int(row["scale_idx"]),
                orientation=float(row["orientation"]),
                pos_x=float(row["pos_x"]),
                pos_y=float(row["pos_y"]),
            )
            samples.append(SpriteSample(latents=lat, image=gen.render(lat),
                                        label=int(row["label"])))
    return samples
