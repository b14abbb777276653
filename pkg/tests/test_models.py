from collections import deque

import numpy as np
import pytest

from latent_shap.errors import BadProbabilities, ConfigError, DegenerateClusters
from latent_shap.models import (
    calibrate_thresholds,
    check_probabilities,
    constant_model,
    hole_detector_model,
    mean_intensity_model,
    top_half_counter_model,
    top_half_counts,
)


def has_hole_by_path_search(image, threshold=0.5):
    """Oracle: explicit breadth-first search over the black-pixel graph.

    A hole exists when some black pixel cannot reach any perimeter black
    pixel through 4-connected black neighbours.
    """
    grid = image[:, :, 0] < threshold
    h, w = grid.shape
    seen = np.zeros_like(grid, dtype=bool)
    queue = deque()
    for r in range(h):
        for c in range(w):
            if (r in (0, h - 1) or c in (0, w - 1)) and grid[r, c]:
                queue.append((r, c))
                seen[r, c] = True
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and grid[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                queue.append((rr, cc))
    return bool(np.any(grid & ~seen))


def draw_disc(size=24, radius=6.0, center=None, gap_angle=None, inner=None):
    """White shape on black background; optional annulus and 1-pixel gap."""
    if center is None:
        center = (size / 2.0, size / 2.0)
    ys, xs = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    d = np.hypot(xs - center[1], ys - center[0])
    white = d <= radius
    if inner is not None:
        white &= d >= inner
    img = white.astype(float)[:, :, None]
    if gap_angle is not None and inner is not None:
        # Carve a black corridor from the ring's hole to the outside.
        mid = (radius + inner) / 2.0
        for t in np.linspace(0, radius + 2.0, 200):
            r = int(center[0] + t * np.sin(gap_angle))
            c = int(center[1] + t * np.cos(gap_angle))
            if 0 <= r < size and 0 <= c < size:
                img[r, c, 0] = 0.0
    return img


class TestTopHalfCounter:
    def test_all_black_is_class_zero(self):
        model = top_half_counter_model([5.5, 15.5])
        probs = model.predict(np.zeros((1, 32, 32, 1)))
        assert probs[0].tolist() == [1.0, 0.0, 0.0]

    def test_all_white_is_highest_class(self):
        model = top_half_counter_model([100.0, 300.0, 500.0])
        x = np.ones((1, 32, 32, 1))
        assert top_half_counts(x)[0] == 512
        assert int(np.argmax(model.predict(x)[0])) == 3

    def test_bottom_half_ignored(self):
        model = top_half_counter_model([1.5])
        x = np.zeros((1, 10, 10, 1))
        x[0, 5:] = 1.0  # bottom half only
        assert int(np.argmax(model.predict(x)[0])) == 0

    def test_top_half_permutation_invariant(self):
        rng = np.random.default_rng(0)
        model = top_half_counter_model([10.0, 30.0])
        x = (rng.uniform(size=(8, 8, 1)) > 0.6).astype(float)
        base = model.predict(x[None])[0]
        top = x[:4].reshape(-1)
        for _ in range(10):
            shuffled = x.copy()
            shuffled[:4] = rng.permutation(top).reshape(4, 8, 1)
            shuffled[4:] = rng.uniform(size=(4, 8, 1))
            assert np.array_equal(model.predict(shuffled[None])[0], base)

    def test_simplex_invariant(self):
        model = top_half_counter_model([2.5])
        probs = model.predict(np.zeros((5, 6, 6, 1)))
        check_probabilities(probs, 2)


class TestCalibration:
    def test_midpoints_of_largest_gaps(self):
        imgs = []
        for count in (0, 0, 10, 10, 20, 20):
            x = np.zeros((8, 8, 1))
            x.reshape(-1)[:count] = 1.0  # fills top rows first
            imgs.append(x)
        thresholds = calibrate_thresholds(imgs, 3)
        assert thresholds.tolist() == [5.0, 15.0]

    def test_degenerate_counts(self):
        imgs = [np.zeros((4, 4, 1)) for _ in range(5)]
        with pytest.raises(DegenerateClusters):
            calibrate_thresholds(imgs, 2)

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            calibrate_thresholds([np.zeros((4, 4, 1))], 1)


class TestHoleDetector:
    def test_filled_disc_no_hole(self):
        model = hole_detector_model(0.5)
        img = draw_disc()
        assert int(np.argmax(model.predict(img[None])[0])) == 0
        assert not has_hole_by_path_search(img)

    def test_annulus_has_hole(self):
        model = hole_detector_model(0.5)
        img = draw_disc(radius=8.0, inner=4.0)
        assert int(np.argmax(model.predict(img[None])[0])) == 1
        assert has_hole_by_path_search(img)

    def test_gapped_annulus_no_hole(self):
        model = hole_detector_model(0.5)
        img = draw_disc(radius=8.0, inner=4.0, gap_angle=0.7)
        assert int(np.argmax(model.predict(img[None])[0])) == 0
        assert not has_hole_by_path_search(img)

    def test_matches_oracle_on_random_blobs(self):
        rng = np.random.default_rng(42)
        model = hole_detector_model(0.5)
        for _ in range(50):
            img = (rng.uniform(size=(12, 12, 1)) > 0.55).astype(float)
            got = int(np.argmax(model.predict(img[None])[0]))
            assert got == int(has_hole_by_path_search(img))

    def test_translation_invariance(self):
        model = hole_detector_model(0.5)
        for dy in range(-3, 4):
            img = draw_disc(size=28, radius=6.0, inner=3.0,
                            center=(14.0 + dy, 14.0))
            assert int(np.argmax(model.predict(img[None])[0])) == 1

    def test_threshold_validation(self):
        with pytest.raises(ConfigError):
            hole_detector_model(0.0)
        with pytest.raises(ConfigError):
            hole_detector_model(0.5, connectivity=6)


class TestAnalyticModels:
    def test_constant_model(self):
        model = constant_model(4)
        probs = model.predict(np.zeros((3, 2, 2, 1)))
        assert np.allclose(probs, 0.25)

    def test_mean_intensity(self):
        model = mean_intensity_model()
        x = np.full((1, 4, 4, 1), 0.3)
        probs = model.predict(x)
        assert probs[0, 0] == pytest.approx(0.3)
        assert probs[0, 1] == pytest.approx(0.7)

    def test_bad_probabilities_detected(self):
        with pytest.raises(BadProbabilities):
            check_probabilities(np.array([[0.5, 0.2]]), 2)
        with pytest.raises(BadProbabilities):
            check_probabilities(np.array([[1.5, -0.5]]), 2)
