import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motiontubes import metrics
from motiontubes.mops import Proposal
from motiontubes.videoio import Tube

from oracles import brute_force_eval, voxel_iou


def square_tube(start, length, x0, y0, side, shape=(40, 40)):
    masks = np.zeros((length,) + shape, dtype=bool)
    masks[:, y0 : y0 + side, x0 : x0 + side] = True
    return Tube(start, masks)


def random_tube(rng, T, H, W):
    start = int(rng.integers(0, T))
    length = int(rng.integers(1, T - start + 1))
    masks = np.zeros((length, H, W), dtype=bool)
    for k in range(length):
        x0, x1 = sorted(rng.integers(0, W, size=2))
        y0, y1 = sorted(rng.integers(0, H, size=2))
        masks[k, y0 : y1 + 1, x0 : x1 + 1] = rng.random((y1 - y0 + 1, x1 - x0 + 1)) < 0.8
    masks[0, int(rng.integers(H)), int(rng.integers(W))] = True
    return Tube(start, masks)


class TestTubeIoU:
    def test_identical(self):
        a = square_tube(2, 5, 3, 3, 10)
        assert metrics.tube_iou(a, square_tube(2, 5, 3, 3, 10)) == 1.0

    def test_disjoint_spans(self):
        assert metrics.tube_iou(square_tube(0, 3, 0, 0, 5), square_tube(3, 3, 0, 0, 5)) == 0.0

    def test_hand_counted_one_third(self):
        # each tube spans 10 frames of 100-px masks; 5 frames shared exactly
        a = square_tube(0, 10, 0, 0, 10)
        b = square_tube(5, 10, 0, 0, 10)
        assert metrics.tube_iou(a, b) == 500 / 1500

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            metrics.tube_iou(square_tube(0, 1, 0, 0, 2, (5, 5)), square_tube(0, 1, 0, 0, 2, (5, 6)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_properties_against_voxel_sets(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_tube(rng, 6, 9, 11), random_tube(rng, 6, 9, 11)
        ab = metrics.tube_iou(a, b)
        assert ab == metrics.tube_iou(b, a) == voxel_iou(a, b)
        assert 0.0 <= ab <= 1.0
        assert metrics.tube_iou(a, a) == 1.0
        disjoint = not (a.masks.any() and b.masks.any()) or voxel_iou(a, b) == 0
        assert (ab == 0.0) == disjoint

    def test_mask_iou(self):
        a = np.zeros((4, 4), dtype=bool)
        a[:2] = True
        b = np.zeros((4, 4), dtype=bool)
        b[1:3] = True
        assert metrics.mask_iou(a, b) == 4 / 12
        assert metrics.mask_iou(np.zeros((2, 2), bool), np.zeros((2, 2), bool)) == 0.0
        with pytest.raises(ValueError):
            metrics.mask_iou(a, b[:3])


class TestEvaluate:
    def test_pool_contains_ground_truth(self):
        gt = [square_tube(0, 4, 0, 0, 5), square_tube(1, 3, 20, 20, 8)]
        pool = [square_tube(0, 2, 10, 10, 3)] + [Tube(g.start, g.masks.copy()) for g in gt]
        agg = metrics.evaluate(pool, gt).aggregates
        assert agg == {"abo": 1.0, "coverage": 1.0, "det50": 1.0, "det70": 1.0}

    def test_no_overlap(self):
        gt = [square_tube(0, 4, 0, 0, 5)]
        report = metrics.evaluate([square_tube(0, 4, 30, 30, 5)], gt)
        assert report.aggregates == {"abo": 0.0, "coverage": 0.0, "det50": 0.0, "det70": 0.0}
        assert report.per_gt[0]["best_item"] is None

    def test_hand_example(self):
        # gt areas 100 and 300 with best IoUs 0.8 and 0.4
        g1 = square_tube(0, 1, 0, 0, 10)
        g2 = Tube(0, np.zeros((3, 40, 40), dtype=bool))
        g2.masks[:, 20:30, 20:30] = True
        p1 = Tube(0, np.zeros((1, 40, 40), dtype=bool))
        p1.masks[0, 0:10, 0:8] = True  # 80 / 100
        p2 = Tube(0, np.zeros((3, 40, 40), dtype=bool))
        p2.masks[:, 20:30, 20:24] = True  # 120 / 300
        report = metrics.evaluate([p1, p2], [g1, g2])
        assert [g["best_iou"] for g in report.per_gt] == [0.8, 0.4]
        agg = report.aggregates
        assert agg["abo"] == pytest.approx(0.6, abs=1e-15)
        assert agg["coverage"] == 0.5
        assert agg["det50"] == 0.5
        # the 0.8 overlap clears the 0.7 bar too
        assert agg["det70"] == 0.5
        assert [g["best_item"] for g in report.per_gt] == [0, 1]

    def test_empty_gt(self):
        with pytest.raises(ValueError):
            metrics.evaluate([square_tube(0, 1, 0, 0, 2)], [])

    def test_empty_pool(self):
        report = metrics.evaluate([], [square_tube(0, 1, 0, 0, 2)], at_sizes=[1, 4])
        assert report.aggregates["abo"] == 0.0
        assert report.curve == [(1, 0.0), (4, 0.0)]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        T, H, W = int(rng.integers(1, 11)), int(rng.integers(2, 65)), int(rng.integers(2, 65))
        gt = [random_tube(rng, T, H, W) for _ in range(int(rng.integers(1, 4)))]
        pool = [random_tube(rng, T, H, W) for _ in range(int(rng.integers(0, 8)))]
        sizes = [1, 2, 3, 5, 8]
        report = metrics.evaluate(pool, gt, sizes)
        for size in sizes:
            assert report.by_size[size] == brute_force_eval(pool, gt, size)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_in_prefix_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        gt = [random_tube(rng, 5, 12, 12) for _ in range(3)]
        pool = [random_tube(rng, 5, 12, 12) for _ in range(12)]
        report = metrics.evaluate(pool, gt)
        prev = None
        for size in sorted(report.by_size):
            agg = report.by_size[size]
            assert all(0.0 <= v <= 1.0 for v in agg.values())
            assert agg["det70"] <= agg["det50"]
            if prev is not None:
                assert all(agg[k] >= prev[k] for k in agg)
            prev = agg
        abo = [a for _, a in report.curve]
        assert abo == sorted(abo)

    def test_outputs(self, tmp_path):
        gt = [square_tube(0, 2, 0, 0, 4)]
        report = metrics.evaluate([square_tube(0, 2, 0, 0, 3)], gt, at_sizes=[1, 2])
        report.save_json(tmp_path / "r.json")
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["aggregates"]["abo"] == 9 / 16
        assert data["curve"] == [[1, 9 / 16], [2, 9 / 16]]
        assert set(data["by_size"]) == {"1", "2"}
        report.save_curve_csv(tmp_path / "c.csv")
        rows = list(csv.reader((tmp_path / "c.csv").open()))
        assert rows[0] == ["pool_size", "abo", "coverage", "det50", "det70"]
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        assert float(rows[1][1]) == 9 / 16


class TestPerFrame:
    def test_gt_slices_everywhere(self):
        gt = [square_tube(1, 3, 2, 2, 6), square_tube(0, 2, 20, 20, 4)]
        props = [Proposal(g.masks[k], g.start + k) for g in gt for k in range(len(g.masks))]
        agg = metrics.evaluate_per_frame(props, gt).aggregates
        assert agg["abo"] == agg["abo_ab"] == 1.0

    def test_only_first_frame(self):
        gt = square_tube(0, 5, 0, 0, 10)
        m = np.zeros((40, 40), dtype=bool)
        m[0:9, 0:10] = True  # IoU 0.9
        report = metrics.evaluate_per_frame([Proposal(m, 0)], [gt])
        assert report.aggregates["abo_ab"] == 0.9
        assert report.per_gt[0]["best_iou_ab"] == 0.9

    def test_anytime_versus_per_frame(self):
        gt = square_tube(0, 3, 0, 0, 10)
        props = []
        for t, rows in enumerate((2, 9, 6)):
            m = np.zeros((40, 40), dtype=bool)
            m[0:rows, 0:10] = True
            props.append(Proposal(m, t))
        # a useless proposal on an extra frame outside the gt span
        other = np.zeros((40, 40), dtype=bool)
        other[0, 0] = True
        props.append(Proposal(other, 5))
        report = metrics.evaluate_per_frame(props, [gt])
        assert report.aggregates["abo_ab"] == 0.9
        assert report.aggregates["abo"] == math.fsum([0.2, 0.9, 0.6]) / 3
        assert report.per_gt[0]["per_frame"] == [[0, 0.2], [1, 0.9], [2, 0.6]]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_exhaustive_oracle_and_max_dominates_mean(self, seed):
        rng = np.random.default_rng(seed)
        T, H, W = 6, 10, 12
        gt = [random_tube(rng, T, H, W) for _ in range(2)]
        props = []
        for _ in range(8):
            tube = random_tube(rng, T, H, W)
            props.append(Proposal(tube.masks[0], tube.start))
        report = metrics.evaluate_per_frame(props, gt)
        for g, item in zip(gt, report.per_gt):
            per_frame = []
            for k, gm in enumerate(g.masks):
                if not gm.any():
                    continue
                ious = []
                for p in props:
                    if p.frame_index == g.start + k:
                        inter = sum(1 for y in range(H) for x in range(W) if p.mask[y, x] and gm[y, x])
                        union = sum(1 for y in range(H) for x in range(W) if p.mask[y, x] or gm[y, x])
                        ious.append(inter / union)
                per_frame.append(max(ious, default=0.0))
            assert item["best_iou_ab"] == max(per_frame)
            assert item["best_iou_ab"] >= math.fsum(per_frame) / len(per_frame)
        assert report.aggregates["det70_ab"] <= report.aggregates["det50_ab"]

    def test_empty_gt(self):
        with pytest.raises(ValueError):
            metrics.evaluate_per_frame([], [])
