"""Black-box classifier handles.

Ships the two rules-based reference models (top-half white-pixel counter and
geometric-hole detector), small analytic models for testing, and the client
for external classifier processes. Every handle maps a batch of images to a
batch of probability vectors on the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import BadProbabilities, DegenerateClusters, ConfigError, ProtocolError
from .image_io import as_image

SIMPLEX_TOL = 1e-9


@dataclass
class ModelHandle:
    """predict maps a (B, H, W, C) batch to (B, num_classes) probabilities."""

    predict: Callable[[np.ndarray], np.ndarray]
    num_classes: int
    name: str = ""


def check_probabilities(probs: np.ndarray, num_classes: int) -> np.ndarray:
    """Enforce the probability-vector invariant, raising BadProbabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != num_classes:
        raise BadProbabilities(
            f"expected (batch, {num_classes}) probabilities, got shape {probs.shape}"
        )
    if not np.all(np.isfinite(probs)):
        raise BadProbabilities("probabilities contain non-finite values")
    if probs.min() < 0.0:
        raise BadProbabilities(f"negative probability {probs.min()!r}")
    sums = probs.sum(axis=1)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > SIMPLEX_TOL:
        raise BadProbabilities(f"probability rows sum to 1 +/- {worst:.3g} (tol {SIMPLEX_TOL})")
    return probs


def _one_hot(classes: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(classes), num_classes))
    out[np.arange(len(classes)), classes] = 1.0
    return out


def top_half_counts(batch: np.ndarray) -> np.ndarray:
    """White-pixel counts (> 0.5, all channels) over rows 0 .. H//2 - 1."""
    batch = np.asarray(batch, dtype=np.float64)
    top = batch[:, : batch.shape[1] // 2]
    return (top > 0.5).reshape(len(batch), -1).sum(axis=1)


def top_half_counter_model(thresholds: Sequence[float]) -> ModelHandle:
    """Classifier on the number of white pixels in the image's top half.

    The class index is the number of thresholds strictly below the count;
    output is one-hot. Thresholds must be strictly increasing.
    """
    thr = np.asarray(thresholds, dtype=np.float64)
    if thr.ndim != 1 or len(thr) < 1:
        raise ConfigError("thresholds must be a non-empty 1-d sequence")
    if np.any(np.diff(thr) <= 0):
        raise ConfigError("thresholds must be strictly increasing")
    num_classes = len(thr) + 1

    def predict(batch):
        counts = top_half_counts(batch)
        classes = np.searchsorted(thr, counts, side="left")
        return _one_hot(classes, num_classes)

    return ModelHandle(predict=predict, num_classes=num_classes, name="top-half-counter")


def calibrate_thresholds(dataset: Sequence[np.ndarray], num_classes: int) -> np.ndarray:
    """Place class boundaries at the midpoints of the largest count gaps.

    Computes top-half white-pixel counts over the dataset, sorts the distinct
    values, and picks the num_classes-1 widest gaps between consecutive
    distinct counts (ties broken toward smaller counts).
    """
    if len(dataset) == 0:
        raise ConfigError("calibration dataset is empty")
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    batch = np.stack([as_image(x) for x in dataset])
    distinct = np.unique(top_half_counts(batch))
    if len(distinct) < num_classes:
        raise DegenerateClusters(
            f"{len(distinct)} distinct counts cannot support {num_classes} classes"
        )
    gaps = np.diff(distinct)
    order = np.lexsort((np.arange(len(gaps)), -gaps))
    chosen = np.sort(order[: num_classes - 1])
    return (distinct[chosen] + distinct[chosen + 1]) / 2.0


def _binarize_black(batch: np.ndarray, threshold: float) -> np.ndarray:
    # Black = below threshold; multi-channel images are judged on the
    # channel mean.
    batch = np.asarray(batch, dtype=np.float64)
    return batch.mean(axis=3) < threshold


def hole_detector_model(binarize_threshold: float = 0.5, *, connectivity: int = 4) -> ModelHandle:
    """Binary classifier for a geometric hole.

    A hole is a black region (intensity below the threshold) that is not
    path-connected to the image perimeter through black pixels. Class 1 means
    a hole exists; output is one-hot over 2 classes.
    """
    if not 0.0 < binarize_threshold < 1.0:
        raise ConfigError(f"binarize threshold must be in (0, 1), got {binarize_threshold}")
    if connectivity == 4:
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    elif connectivity == 8:
        structure = np.ones((3, 3), dtype=bool)
    else:
        raise ConfigError("connectivity must be 4 or 8")

    def has_hole(black: np.ndarray) -> bool:
        labels, num = ndimage.label(black, structure=structure)
        if num == 0:
            return False
        border = np.zeros_like(black)
        border[0, :] = border[-1, :] = True
        border[:, 0] = border[:, -1] = True
        reached = np.unique(labels[border & black])
        return num > len(reached)

    def predict(batch):
        black = _binarize_black(batch, binarize_threshold)
        classes = np.array([int(has_hole(b)) for b in black])
        return _one_hot(classes, 2)

    return ModelHandle(predict=predict, num_classes=2, name="hole-detector")


def constant_model(num_classes: int, probs: Sequence[float] | None = None) -> ModelHandle:
    """Model that ignores its input; useful as a null explanation target."""
    if probs is None:
        p = np.full(num_classes, 1.0 / num_classes)
    else:
        p = check_probabilities(np.asarray(probs, dtype=float)[None, :], num_classes)[0]

    def predict(batch):
        return np.tile(p, (len(batch), 1))

    return ModelHandle(predict=predict, num_classes=num_classes, name="constant")


def mean_intensity_model() -> ModelHandle:
    """Two-class model: p(class 0) is the mean pixel intensity."""

    def predict(batch):
        batch = np.asarray(batch, dtype=np.float64)
        p0 = batch.reshape(len(batch), -1).mean(axis=1)
        return np.stack([p0, 1.0 - p0], axis=1)

    return ModelHandle(predict=predict, num_classes=2, name="mean-intensity")


def external_model(command, *, timeout: float = 30.0) -> ModelHandle:
    """Classifier served by a child process speaking the model wire protocol."""
    from .subproc import LineProcessClient

    client = LineProcessClient(command, timeout=timeout)
    hello = client.handshake
    if hello.get("type") != "hello" or hello.get("role") != "model":
        client.close()
        raise ProtocolError(f"expected a model hello handshake, got {hello!r}")
    try:
        num_classes = int(hello["num_classes"])
        input_shape = tuple(int(d) for d in hello["input_shape"])
        if num_classes < 2 or len(input_shape) != 3:
            raise ValueError
    except (KeyError, TypeError, ValueError):
        client.close()
        raise ProtocolError(f"malformed model handshake: {hello!r}") from None

    def predict(batch):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.shape[1:] != input_shape:
            raise BadProbabilities(
                f"model expects images of shape {input_shape}, got {batch.shape[1:]}"
            )
        payload = {"op": "predict", "images": [img.reshape(-1).tolist() for img in batch]}
        resp = client.request(payload)
        if "error" in resp:
            raise BadProbabilities(f"model process reported: {resp['error']}")
        probs = resp.get("probs")
        if not isinstance(probs, list) or len(probs) != len(batch):
            raise ProtocolError(f"predict response must carry {len(batch)} probability rows")
        return check_probabilities(np.asarray(probs, dtype=np.float64), num_classes)

    handle = ModelHandle(predict=predict, num_classes=num_classes, name="external")
    handle.client = client  # keeps the process alive with the handle
    return handle
