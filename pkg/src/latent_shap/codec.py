"""Encode/decode pairs between images and semantic latent vectors.

A codec maps an (H, W, C) image to an ordered vector of real or complex
scalars and back, together with a FeatureGrouping that assigns every scalar
to one named semantic feature. Features are the players of the attribution
game, so groupings are capped at 64 features.

Built-in codecs: identity (flatten/reshape), 2-D Fourier (per-channel
orthonormal DFT with conjugate-pair and frequency-bin groupings), and a
ground-truth codec over the sprite generator's latent space. External codecs
run as child processes speaking a line-JSON protocol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    CodecFailure,
    GroupingMismatch,
    InvalidBinCount,
    ProtocolError,
    ShapeMismatch,
    UnknownImage,
)
from .image_io import as_image
from .sprites import NUM_SCALES, SHAPES, SpriteGenerator, SpriteLatents, SpriteSample

MAX_FEATURES = 64


@dataclass(frozen=True, eq=False)
class FeatureGrouping:
    """Total surjective map from scalar indices onto feature indices 0..n-1."""

    num_features: int
    scalar_assignment: np.ndarray
    feature_names: tuple[str, ...]
    feature_kind: str  # pixel | fourier-mode | fourier-bin | ground-truth-latent | external
    image_shape: Optional[tuple[int, int, int]] = None
    frequency_centers: Optional[np.ndarray] = None

    def __post_init__(self):
        assignment = np.ascontiguousarray(self.scalar_assignment, dtype=np.int64)
        object.__setattr__(self, "scalar_assignment", assignment)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        n = self.num_features
        if not 1 <= n <= MAX_FEATURES:
            raise GroupingMismatch(f"feature count {n} outside 1..{MAX_FEATURES}")
        if len(self.feature_names) != n:
            raise GroupingMismatch(f"{len(self.feature_names)} names for {n} features")
        if assignment.ndim != 1 or len(assignment) == 0:
            raise GroupingMismatch("scalar_assignment must be a non-empty 1-d array")
        if assignment.min() < 0 or assignment.max() >= n:
            raise GroupingMismatch("scalar_assignment references features outside 0..n-1")
        owned = np.bincount(assignment, minlength=n)
        if np.any(owned == 0):
            raise GroupingMismatch(f"features without scalars: {np.where(owned == 0)[0].tolist()}")

    @property
    def num_scalars(self) -> int:
        return len(self.scalar_assignment)

    def same_structure(self, other: "FeatureGrouping") -> bool:
        return (
            self.num_features == other.num_features
            and self.feature_kind == other.feature_kind
            and self.feature_names == other.feature_names
            and np.array_equal(self.scalar_assignment, other.scalar_assignment)
        )

    def scalar_mask(self, members: int) -> np.ndarray:
        """Boolean mask over scalars owned by the coalition bitmask."""
        in_coalition = np.array(
            [(members >> f) & 1 for f in range(self.num_features)], dtype=bool
        )
        return in_coalition[self.scalar_assignment]


@dataclass
class LatentVector:
    """Ordered scalars plus the grouping that names them."""

    scalars: np.ndarray
    grouping: FeatureGrouping

    def __post_init__(self):
        self.scalars = np.atleast_1d(np.asarray(self.scalars))
        if self.scalars.ndim != 1:
            raise ShapeMismatch("latent scalars must be 1-d")
        if len(self.scalars) != self.grouping.num_scalars:
            raise GroupingMismatch(
                f"{len(self.scalars)} scalars vs grouping over {self.grouping.num_scalars}"
            )


@dataclass
class CodecHandle:
    encode: Callable[[np.ndarray], LatentVector]
    decode: Callable[[LatentVector], np.ndarray]
    grouping: FeatureGrouping
    input_shape: tuple[int, int, int]
    name: str = ""
    # Optional fast path: decode many latents in one call, returning a
    # (B, H, W, C) array bit-identical to per-latent decode.
    decode_batch: Optional[Callable[[Sequence[LatentVector]], np.ndarray]] = None


# ---------------------------------------------------------------------------
# identity codec

def pixel_location_grouping(h: int, w: int, c: int) -> FeatureGrouping:
    """One feature per pixel location; channels grouped together."""
    locations = np.repeat(np.arange(h * w), c)
    names = tuple(f"px({r},{col})" for r in range(h) for col in range(w))
    return FeatureGrouping(
        num_features=h * w,
        scalar_assignment=locations,
        feature_names=names,
        feature_kind="pixel",
        image_shape=(h, w, c),
    )


def block_grouping(h: int, w: int, c: int, block_rows: int, block_cols: int) -> FeatureGrouping:
    """Features are a block_rows x block_cols partition of the pixel grid."""
    if not (1 <= block_rows <= h and 1 <= block_cols <= w):
        raise GroupingMismatch(f"cannot split {h}x{w} into {block_rows}x{block_cols} blocks")
    row_band = np.minimum(np.arange(h) * block_rows // h, block_rows - 1)
    col_band = np.minimum(np.arange(w) * block_cols // w, block_cols - 1)
    per_pixel = row_band[:, None] * block_cols + col_band[None, :]
    names = tuple(f"block({r},{col})" for r in range(block_rows) for col in range(block_cols))
    return FeatureGrouping(
        num_features=block_rows * block_cols,
        scalar_assignment=np.repeat(per_pixel.reshape(-1), c),
        feature_names=names,
        feature_kind="pixel",
        image_shape=(h, w, c),
    )


def identity_codec(h: int, w: int, c: int,
                   pixel_grouping: Optional[FeatureGrouping] = None) -> CodecHandle:
    """Flatten/reshape codec; decode(encode(x)) == x exactly."""
    grouping = pixel_grouping if pixel_grouping is not None else pixel_location_grouping(h, w, c)
    if grouping.num_scalars != h * w * c:
        raise GroupingMismatch(
            f"grouping covers {grouping.num_scalars} scalars, image has {h * w * c}"
        )

    def encode(x: np.ndarray) -> LatentVector:
        x = as_image(x)
        if x.shape != (h, w, c):
            raise ShapeMismatch(f"expected {(h, w, c)}, got {x.shape}")
        return LatentVector(x.reshape(-1).copy(), grouping)

    def decode(z: LatentVector) -> np.ndarray:
        if z.grouping.num_scalars != h * w * c:
            raise ShapeMismatch("latent length does not match the codec's image shape")
        return np.asarray(z.scalars).real.astype(np.float64).reshape(h, w, c)

    return CodecHandle(encode=encode, decode=decode, grouping=grouping,
                       input_shape=(h, w, c), name="identity")


# ---------------------------------------------------------------------------
# Fourier codec

@lru_cache(maxsize=32)
def _mode_structure(h: int, w: int):
    """Conjugate-pair structure of the h x w DFT grid.

    Returns (pair_id, canonical_flat, partner_flat, self_conjugate, freq_norm):
    pair_id numbers the canonical modes in lexicographic (u, v) order, with
    mode (u, v) paired to (-u mod h, -v mod w); freq_norm is the L2 norm of
    the pair's normalized frequencies, identical for both members.
    """
    us, vs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pu, pv = (-us) % h, (-vs) % w
    is_canonical = (us < pu) | ((us == pu) & (vs <= pv))
    self_conj = (us == pu) & (vs == pv)

    flat = (us * w + vs).reshape(-1)
    partner_flat_all = (pu * w + pv).reshape(-1)
    canonical_flat = flat[is_canonical.reshape(-1)]
    noncanon_flat = flat[~is_canonical.reshape(-1)]
    noncanon_partner = partner_flat_all[~is_canonical.reshape(-1)]

    pair_of_canonical = {int(m): i for i, m in enumerate(np.sort(canonical_flat))}
    pair_id = np.empty(h * w, dtype=np.int64)
    for m in canonical_flat:
        pair_id[m] = pair_of_canonical[int(m)]
    for m, p in zip(noncanon_flat, noncanon_partner):
        pair_id[m] = pair_of_canonical[int(p)]

    fu = np.minimum(us, h - us) / h
    fv = np.minimum(vs, w - vs) / w
    freq_norm = np.hypot(fu, fv).reshape(-1)
    canonical_sorted = np.sort(canonical_flat)
    return (
        pair_id,
        canonical_sorted,
        noncanon_flat,
        noncanon_partner,
        self_conj.reshape(-1),
        freq_norm,
    )


def fourier_grouping(h: int, w: int, c: int, num_bins: Optional[int] = None) -> FeatureGrouping:
    """Feature grouping of the per-channel 2-D DFT.

    Conjugate mode pairs (k, -k) are one feature and all channels of a mode
    share that feature; self-conjugate modes are singletons. With num_bins,
    pairs are aggregated into equal-width bins of the L2 norm of normalized
    frequency over [0, sqrt(2)/2], last bin closed; bins that own no mode are
    dropped.
    """
    pair_id, canonical, _, _, _, freq_norm = _mode_structure(h, w)
    num_pairs = len(canonical)
    pair_norm = freq_norm[canonical]

    if num_bins is None:
        feature_of_pair = np.arange(num_pairs)
        names = tuple(
            f"mode({m // w},{m % w})" for m in canonical
        )
        centers = pair_norm.copy()
        kind = "fourier-mode"
        n = num_pairs
    else:
        if num_bins < 1:
            raise InvalidBinCount(f"num_bins must be >= 1, got {num_bins}")
        top = math.sqrt(2.0) / 2.0
        edges = np.linspace(0.0, top, num_bins + 1)
        raw_bin = np.clip(np.searchsorted(edges, pair_norm, side="right") - 1, 0, num_bins - 1)
        occupied = np.unique(raw_bin)
        remap = {int(b): i for i, b in enumerate(occupied)}
        feature_of_pair = np.array([remap[int(b)] for b in raw_bin])
        names = tuple(
            f"freq[{edges[b]:.4f},{edges[b + 1]:.4f}{']' if b == num_bins - 1 else ')'}"
            for b in occupied
        )
        centers = np.array([(edges[b] + edges[b + 1]) / 2.0 for b in occupied])
        kind = "fourier-bin"
        n = len(occupied)

    per_mode_feature = feature_of_pair[pair_id]  # (h*w,)
    assignment = np.repeat(per_mode_feature, c)
    return FeatureGrouping(
        num_features=int(n),
        scalar_assignment=assignment,
        feature_names=names,
        feature_kind=kind,
        image_shape=(h, w, c),
        frequency_centers=centers,
    )


DEFAULT_NUM_BINS = 25


def default_fourier_grouping(h: int, w: int, c: int) -> FeatureGrouping:
    """Per-mode grouping when it fits the feature cap, else 25 frequency bins."""
    num_pairs = len(_mode_structure(h, w)[1])
    if num_pairs <= MAX_FEATURES:
        return fourier_grouping(h, w, c)
    return fourier_grouping(h, w, c, num_bins=DEFAULT_NUM_BINS)


def fft2_encode(x: np.ndarray, grouping: Optional[FeatureGrouping] = None) -> LatentVector:
    """Per-channel orthonormal 2-D DFT, scalars ordered (row, col, channel)."""
    x = as_image(x)
    h, w, c = x.shape
    if grouping is None:
        grouping = default_fourier_grouping(h, w, c)
    if grouping.image_shape != (h, w, c):
        raise ShapeMismatch(f"grouping is for {grouping.image_shape}, image is {(h, w, c)}")
    z = np.fft.fft2(x, axes=(0, 1), norm="ortho")
    return LatentVector(z.reshape(-1), grouping)


def ifft2_decode(z: LatentVector, *, clamp: bool = True) -> np.ndarray:
    """Inverse of fft2_encode with Hermitian repair.

    Spliced latents can violate DFT symmetry; before inverting, each pair is
    repaired to Z[-k] = conj(Z[k]) with the lexicographically smaller mode as
    canonical, and self-conjugate modes are forced real. The imaginary
    residue of the inverse transform (rounding-level after repair) is
    discarded and the image is clamped to [0, 1] unless clamp=False.
    """
    shape = z.grouping.image_shape
    if shape is None:
        raise ShapeMismatch("latent grouping does not describe an image shape")
    h, w, c = shape
    if len(z.scalars) != h * w * c:
        raise ShapeMismatch(f"{len(z.scalars)} scalars cannot fill {(h, w, c)}")

    _, _, noncanon, partner, self_conj, _ = _mode_structure(h, w)
    grid = np.array(z.scalars, dtype=np.complex128).reshape(h * w, c)
    grid[self_conj] = grid[self_conj].real
    grid[noncanon] = np.conj(grid[partner])
    x = np.fft.ifft2(grid.reshape(h, w, c), axes=(0, 1), norm="ortho").real
    if clamp:
        x = np.clip(x, 0.0, 1.0)
    return x


def fourier_codec(h: int, w: int, c: int, num_bins: Optional[int] = None) -> CodecHandle:
    grouping = fourier_grouping(h, w, c, num_bins)

    def encode(x: np.ndarray) -> LatentVector:
        return fft2_encode(x, grouping)

    def decode(z: LatentVector) -> np.ndarray:
        return ifft2_decode(z)

    def decode_batch(zs: Sequence[LatentVector]) -> np.ndarray:
        _, _, noncanon, partner, self_conj, _ = _mode_structure(h, w)
        grids = np.stack([
            np.array(z.scalars, dtype=np.complex128).reshape(h * w, c) for z in zs
        ])
        grids[:, self_conj] = grids[:, self_conj].real
        grids[:, noncanon] = np.conj(grids[:, partner])
        x = np.fft.ifft2(grids.reshape(-1, h, w, c), axes=(1, 2), norm="ortho").real
        return np.clip(x, 0.0, 1.0)

    return CodecHandle(encode=encode, decode=decode, grouping=grouping,
                       input_shape=(h, w, c), name="fourier", decode_batch=decode_batch)


# ---------------------------------------------------------------------------
# ground-truth sprite codec

GROUND_TRUTH_FEATURES = ("shape", "scale", "orientation", "pos-x", "pos-y")
_EXEMPLAR_TOL = 1e-9


def _latents_to_scalars(lat: SpriteLatents) -> np.ndarray:
    return np.array([
        float(SHAPES.index(lat.shape)),
        float(lat.scale_idx),
        float(lat.orientation),
        float(lat.pos_x),
        float(lat.pos_y),
    ])


def _scalars_to_latents(scalars: np.ndarray) -> SpriteLatents:
    vals = np.asarray(scalars, dtype=np.float64)
    shape_idx = int(round(vals[0]))
    scale_idx = int(round(vals[1]))
    if abs(vals[0] - shape_idx) > 1e-6 or not 0 <= shape_idx < len(SHAPES):
        raise CodecFailure(f"shape scalar {vals[0]!r} is not a valid shape index")
    if abs(vals[1] - scale_idx) > 1e-6 or not 0 <= scale_idx < NUM_SCALES:
        raise CodecFailure(f"scale scalar {vals[1]!r} is not a valid scale index")
    return SpriteLatents(
        shape=SHAPES[shape_idx],
        scale_idx=scale_idx,
        orientation=float(vals[2]) % (2.0 * math.pi),
        pos_x=float(np.clip(vals[3], 0.0, 1.0)),
        pos_y=float(np.clip(vals[4], 0.0, 1.0)),
    )


def ground_truth_codec(generator: SpriteGenerator,
                       samples: Sequence[SpriteSample] = ()) -> CodecHandle:
    """Perfect-disentanglement codec over the sprite generator's latents.

    encode recovers the known latent tuple of a generator-produced image via
    stored provenance, falling back to the nearest registered exemplar within
    an L2 pixel tolerance; decode renders the latent tuple.
    """
    g = generator.grid
    grouping = FeatureGrouping(
        num_features=5,
        scalar_assignment=np.arange(5),
        feature_names=GROUND_TRUTH_FEATURES,
        feature_kind="ground-truth-latent",
        image_shape=(g, g, 1),
    )

    provenance: dict[bytes, np.ndarray] = {}
    exemplars: list[tuple[np.ndarray, np.ndarray]] = []  # (image, scalars)

    def register(lat: SpriteLatents, image: np.ndarray) -> None:
        scalars = _latents_to_scalars(lat)
        key = np.ascontiguousarray(image).tobytes()
        if key not in provenance:
            provenance[key] = scalars
            exemplars.append((image, scalars))

    for s in samples:
        register(s.latents, s.image)

    def encode(x: np.ndarray) -> LatentVector:
        x = as_image(x)
        if x.shape != (g, g, 1):
            raise ShapeMismatch(f"expected {(g, g, 1)}, got {x.shape}")
        key = np.ascontiguousarray(x).tobytes()
        hit = provenance.get(key)
        if hit is not None:
            return LatentVector(hit.copy(), grouping)
        best, best_d2 = None, math.inf
        for image, scalars in exemplars:
            d2 = float(np.sum((image - x) ** 2))
            if d2 < best_d2:
                best, best_d2 = scalars, d2
        if best is not None and math.sqrt(best_d2) <= _EXEMPLAR_TOL:
            return LatentVector(best.copy(), grouping)
        raise UnknownImage(
            "image has no provenance and no exemplar within tolerance; "
            "register its latents first"
        )

    def decode(z: LatentVector) -> np.ndarray:
        # Rendering is pure, so decode(encode(x)) reproduces x bit-for-bit
        # without registering the output.
        return generator.render(_scalars_to_latents(z.scalars))

    def decode_batch(zs: Sequence[LatentVector]) -> np.ndarray:
        return generator.render_batch([_scalars_to_latents(z.scalars) for z in zs])

    handle = CodecHandle(encode=encode, decode=decode, grouping=grouping,
                         input_shape=(g, g, 1), name="ground-truth",
                         decode_batch=decode_batch)
    handle.register = register
    return handle


# ---------------------------------------------------------------------------
# external codec client

def external_codec(command, *, timeout: float = 30.0) -> CodecHandle:
    """Codec served by a child process speaking the codec wire protocol."""
    from .subproc import LineProcessClient

    client = LineProcessClient(command, timeout=timeout)
    hello = client.handshake
    if hello.get("type") != "hello" or hello.get("role") != "codec":
        client.close()
        raise ProtocolError(f"expected a codec hello handshake, got {hello!r}")
    try:
        num_scalars = int(hello["num_scalars"])
        num_features = int(hello["num_features"])
        assignment = np.asarray(hello["scalar_assignment"], dtype=np.int64)
        names = tuple(str(s) for s in hello["feature_names"])
        shape = tuple(int(d) for d in hello["input_shape"])
        if len(shape) != 3 or len(assignment) != num_scalars:
            raise ValueError
        grouping = FeatureGrouping(
            num_features=num_features,
            scalar_assignment=assignment,
            feature_names=names,
            feature_kind="external",
            image_shape=shape,
        )
    except (KeyError, TypeError, ValueError, GroupingMismatch) as e:
        client.close()
        raise ProtocolError(f"malformed codec handshake: {hello!r}") from e

    h, w, c = shape

    def encode(x: np.ndarray) -> LatentVector:
        x = as_image(x)
        if x.shape != shape:
            raise ShapeMismatch(f"codec expects {shape}, got {x.shape}")
        resp = client.request({"op": "encode", "image": x.reshape(-1).tolist()})
        if "error" in resp:
            raise CodecFailure(f"codec process reported: {resp['error']}")
        pairs = resp.get("scalars")
        if not isinstance(pairs, list) or len(pairs) != num_scalars:
            raise ProtocolError(f"encode response must carry {num_scalars} scalars")
        arr = np.asarray(pairs, dtype=np.float64)
        if arr.shape != (num_scalars, 2):
            raise ProtocolError("scalars must be [re, im] pairs")
        return LatentVector(arr[:, 0] + 1j * arr[:, 1], grouping)

    def decode(z: LatentVector) -> np.ndarray:
        scalars = np.asarray(z.scalars, dtype=np.complex128)
        pairs = [[float(s.real), float(s.imag)] for s in scalars]
        resp = client.request({"op": "decode", "scalars": pairs})
        if "error" in resp:
            raise CodecFailure(f"codec process reported: {resp['error']}")
        flat = resp.get("image")
        if not isinstance(flat, list) or len(flat) != h * w * c:
            raise ProtocolError(f"decode response must carry {h * w * c} image values")
        img = np.asarray(flat, dtype=np.float64).reshape(h, w, c)
        if not np.all(np.isfinite(img)):
            raise CodecFailure("codec process produced non-finite image values")
        return img

    handle = CodecHandle(encode=encode, decode=decode, grouping=grouping,
                         input_shape=shape, name="external")
    handle.client = client
    return handle
