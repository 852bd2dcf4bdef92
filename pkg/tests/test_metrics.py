import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lal.metrics import (
    NoVesselError, compute_metrics, eval_against_gt, fd, ni, vc, vd, vdi, vlf,
)
from lal.morphology import connected_components, skeletonize
from lal.phantom import PhantomConfig, generate_phantom


def rectangle(h=64, w=64, rows=(30, 34), cols=(12, 52)):
    m = np.zeros((h, w), bool)
    m[rows[0]:rows[1], cols[0]:cols[1]] = True
    return m


def isolated_by_neighbour_scan(mask):
    pad = np.pad(mask, 1)
    count = 0
    for y, x in zip(*np.nonzero(mask)):
        if pad[y:y + 3, x:x + 3].sum() == 1:
            count += 1
    return count


class TestDensityAndWidth:
    def test_full_mask_density(self):
        assert vd(np.ones((10, 10), bool)) == 1.0

    def test_rectangle(self):
        m = rectangle()
        assert vd(m) == pytest.approx(160 / 4096)
        s = skeletonize(m)
        assert 3.5 <= vdi(m, s) <= 4.5
        assert vlf(s) == s.sum() / 4096

    def test_empty(self):
        m = np.zeros((8, 8), bool)
        assert vd(m) == 0 and vlf(m) == 0
        with pytest.raises(NoVesselError, match="no vessel"):
            vdi(m)

    @settings(max_examples=40, deadline=None)
    @given(arrays(bool, (16, 16)))
    def test_vdi_at_least_one(self, m):
        if m.any():
            assert vdi(m) >= 1.0


class TestFractalDimension:
    def test_line(self):
        m = np.zeros((64, 64), bool)
        m[20, :] = True
        assert 0.95 <= fd(m) <= 1.05

    def test_filled_square(self):
        assert 1.85 <= fd(np.ones((64, 64), bool)) <= 2.0

    def test_point(self):
        m = np.zeros((64, 64), bool)
        m[9, 41] = True
        assert -0.05 <= fd(m) <= 0.05

    def test_empty(self):
        with pytest.raises(NoVesselError):
            fd(np.zeros((64, 64), bool))

    def test_flip_invariance(self):
        s = skeletonize(np.random.default_rng(0).random((64, 64)) < 0.3)
        assert fd(s[::-1]) == fd(s)
        assert fd(s[:, ::-1]) == fd(s)

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("dy,dx", [(3, 5), (1, 1), (8, 0), (7, 7)])
    def test_translation_tolerance_on_vessel_skeletons(self, seed, dy, dx):
        # box counting with an anchored grid is only shift-invariant up to aliasing
        s = generate_phantom(PhantomConfig(), seed)[1].skeleton
        placed = np.zeros_like(s)
        placed[:56, :56] = s[:56, :56]
        shifted = np.zeros_like(s)
        shifted[dy:dy + 56, dx:dx + 56] = s[:56, :56]
        assert abs(fd(shifted) - fd(placed)) <= 0.05


class TestConnectivity:
    def test_single_component(self):
        assert vc(rectangle()) == 100.0

    def test_twenty_one_components(self):
        m = np.zeros((200, 200), bool)
        m.ravel()[:9980] = True  # rows 0..48 full plus part of row 49
        m[150, 0:200:10] = True  # 20 isolated pixels
        lab = connected_components(m)
        assert lab.count == 21 and m.sum() == 10000
        assert vc(m) == 99.8

    def test_all_isolated(self):
        m = np.zeros((40, 40), bool)
        m[::2, ::2] = True
        p = m.sum()
        assert vc(m) == pytest.approx(100 * (1 - (p - 1) / p))
        assert vc(m) < 0.5

    def test_empty_is_fully_connected(self):
        assert vc(np.zeros((5, 5), bool)) == 100.0


class TestNoise:
    def test_three_isolated_points(self):
        m = rectangle()
        m[2, 2] = m[60, 5] = m[5, 60] = True
        assert ni(m) == 3

    def test_empty(self):
        assert ni(np.zeros((4, 4), bool)) == 0

    def test_matches_neighbour_scan(self):
        rng = np.random.default_rng(3)
        for p in (0.05, 0.1, 0.2):
            m = rng.random((48, 48)) < p
            assert ni(m) == isolated_by_neighbour_scan(m)

    @settings(max_examples=40, deadline=None)
    @given(arrays(bool, (12, 12)))
    def test_bounded_by_component_count(self, m):
        assert ni(m) <= connected_components(m).count


class TestGroundTruth:
    def test_identical(self):
        m = rectangle()
        assert eval_against_gt(m, m) == (1.0, 1.0)

    def test_disjoint(self):
        a = rectangle(rows=(0, 4))
        b = rectangle(rows=(10, 14))
        assert eval_against_gt(a, b)[0] == 0.0

    def test_half_versus_full(self):
        pred = np.zeros((64, 64), bool)
        pred[:, :32] = True
        dice, acc = eval_against_gt(pred, np.ones((64, 64), bool))
        assert dice == pytest.approx(2 * 2048 / (2048 + 4096))
        assert round(dice, 4) == 0.6667
        assert acc == 0.5

    def test_both_empty(self):
        z = np.zeros((3, 3), bool)
        assert eval_against_gt(z, z) == (1.0, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            eval_against_gt(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


@settings(max_examples=40, deadline=None)
@given(arrays(bool, (16, 16)), arrays(bool, (16, 16)))
def test_record_ranges(m, g):
    rec = compute_metrics(m, gt=g)
    assert 0 <= rec.vd <= 1 and 0 <= rec.vlf <= 1 and 0 <= rec.vc <= 100
    assert 0 <= rec.dice <= 1 and 0 <= rec.accuracy <= 1
    assert isinstance(rec.ni, int) and rec.ni >= 0
    assert rec.degenerate == (not m.any())
    assert compute_metrics(m, gt=g) == rec
