import itertools

import numpy as np
import pytest

from disguise_id.errors import ContractError
from disguise_id.geom import KeypointSet
from disguise_id.heatmaps import GaussianSpec, decode, loss_and_grad, synthesize

SPEC = GaussianSpec()  # sigma 1.5, 64x64 from 256x256
PEAK = 1 / (2 * np.pi * 1.5 ** 2)


def kps_at(x, y, visible=True):
    pts = np.tile([[x, y]], (14, 1)).astype(float)
    return KeypointSet(pts, np.full(14, visible))


def gaussian_oracle(cx, cy, i, j, sigma=1.5):
    """Direct scalar evaluation of the 2-D normalised Gaussian."""
    return np.exp(-((cx - i) ** 2 + (cy - j) ** 2) / (2 * sigma ** 2)) / (2 * np.pi * sigma ** 2)


class TestSynthesize:
    def test_peak_on_grid(self):
        stack = synthesize(kps_at(80, 120), SPEC)
        assert stack[0, 30, 20] == pytest.approx(0.070736, abs=1e-6)
        assert stack[0].max() == pytest.approx(PEAK, abs=1e-12)

    def test_unit_distance(self):
        stack = synthesize(kps_at(80, 120), SPEC)
        assert stack[0, 30, 21] == pytest.approx(0.0566406, abs=1e-6)
        assert stack[0, 31, 20] == pytest.approx(0.0566406, abs=1e-6)

    def test_matches_scalar_oracle(self, rng):
        x, y = rng.uniform(0, 255, 2)
        stack = synthesize(kps_at(x, y), SPEC)
        for i, j in [(0, 0), (17, 40), (int(x // 4), int(y // 4))]:
            assert stack[3, j, i] == pytest.approx(gaussian_oracle(x / 4, y / 4, i, j), rel=1e-12, abs=1e-300)

    def test_not_visible_channel_is_zero(self):
        stack = synthesize(kps_at(80, 120, visible=False), SPEC)
        assert stack.sum() == 0.0

    def test_near_normalisation(self, rng):
        for x, y in rng.uniform(4 * 7.5, 4 * (63 - 7.5), (50, 2)):
            s = synthesize(kps_at(x, y), SPEC)[0].sum()
            assert 0.99 <= s <= 1.01

    def test_peak_bounded(self, rng):
        for x, y in rng.uniform(0, 252, (50, 2)):
            assert 0 < synthesize(kps_at(x, y), SPEC)[0].max() <= PEAK


class TestLoss:
    def test_zero_at_target(self, rng):
        gt = rng.random((14, 8, 8))
        loss, grad = loss_and_grad(gt, gt)
        assert loss == 0 and not grad.any()

    def test_single_cell(self, rng):
        gt = rng.random((14, 8, 8))
        pred = gt.copy()
        pred[2, 3, 4] -= 0.5
        loss, grad = loss_and_grad(pred, gt)
        assert loss == pytest.approx(0.25)
        assert grad[2, 3, 4] == pytest.approx(-1.0)
        assert np.count_nonzero(grad) == 1

    def test_quadratic_scaling(self, rng):
        gt, pred = rng.random((2, 14, 8, 8))
        base, _ = loss_and_grad(pred, gt)
        scaled, _ = loss_and_grad(gt + 3.0 * (pred - gt), gt)
        assert scaled == pytest.approx(9.0 * base, rel=1e-12)

    def test_gradient_finite_differences(self, rng):
        gt, pred = rng.random((2, 14, 6, 6))
        _, grad = loss_and_grad(pred, gt)
        h = 1e-6
        for idx in [tuple(rng.integers(0, s) for s in pred.shape) for _ in range(30)]:
            p, m = pred.copy(), pred.copy()
            p[idx] += h
            m[idx] -= h
            num = (loss_and_grad(p, gt)[0] - loss_and_grad(m, gt)[0]) / (2 * h)
            assert abs(num - grad[idx]) <= 1e-6 * max(abs(grad[idx]), 1e-3)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            loss_and_grad(np.zeros((14, 4, 4)), np.zeros((14, 4, 5)))


class TestDecode:
    def test_single_peak_mapping(self):
        stack = np.zeros((14, 64, 64))
        stack[:, 40, 12] = 1.0
        k = decode(stack, SPEC)
        assert tuple(k.points[0]) == (48.0, 160.0)
        assert k.visible.all()

    def test_zero_channel_not_visible(self):
        assert not decode(np.zeros((14, 64, 64)), SPEC).visible.any()

    def test_first_occurrence_tie_break(self):
        stack = np.zeros((14, 64, 64))
        stack[:, 5, 9] = 1.0
        stack[:, 5, 3] = 1.0
        stack[:, 7, 0] = 1.0
        assert tuple(decode(stack, SPEC).points[0]) == (12.0, 20.0)

    def test_round_trip_exhaustive(self):
        # every quarter-pixel-ish center over the grid extent [0, 252]^2
        worst = 0.0
        coords = np.arange(0.0, 252.0 + 1e-9, 1.75)
        for x, y in itertools.product(coords, coords):
            k = decode(synthesize(kps_at(x, y), SPEC), SPEC)
            worst = max(worst, float(np.hypot(*(k.points[0] - (x, y)))))
        assert worst <= 3.0

    def test_subpixel_refinement_improves(self, rng):
        for x, y in rng.uniform(20, 230, (20, 2)):
            k = decode(synthesize(kps_at(x, y), SPEC), SPEC, subpixel=True)
            assert np.hypot(*(k.points[0] - (x, y))) < 0.5
