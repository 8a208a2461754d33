import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motiontubes import boundaries, metrics, mops, objectness
from motiontubes.mops import Proposal, ProposalParams
from motiontubes.videoio import FlowField, Tube

from oracles import center_surround_reference


def box_tube(start, boxes, shape=(40, 40)):
    """Tube whose frame k is the filled box boxes[k]."""
    masks = np.zeros((len(boxes),) + shape, dtype=bool)
    for k, (x0, y0, x1, y1) in enumerate(boxes):
        masks[k, y0 : y1 + 1, x0 : x1 + 1] = True
    return Tube(start, masks)


def box_lookup(table):
    """Scorer returning a fixed score per box, regardless of frame."""
    return lambda t, box: table[tuple(box)]


@pytest.fixture(scope="module")
def scene_scorer(single_scene):
    return objectness.CenterSurroundScorer([single_scene.motion_field(t) for t in range(single_scene.num_frames)])


class TestCenterSurround:
    def test_zero_flow(self):
        flow = FlowField(np.zeros((20, 20)), np.zeros((20, 20)))
        assert objectness.center_surround(flow, (3, 4, 10, 12)) == 0.0

    def test_ideal_figure(self):
        u = np.zeros((20, 20))
        u[5:15, 5:15] = 1.0
        flow = FlowField(u, np.zeros_like(u))
        assert objectness.center_surround(flow, (5, 5, 14, 14)) == 1.0

    def test_full_frame_has_no_surround(self):
        u = np.zeros((10, 12))
        u[:, :6] = 2.0
        flow = FlowField(u, np.zeros_like(u))
        assert objectness.center_surround(flow, (0, 0, 11, 9)) == pytest.approx(0.5)

    def test_box_errors(self):
        flow = FlowField(np.zeros((10, 10)), np.zeros((10, 10)))
        with pytest.raises(ValueError, match="zero area"):
            objectness.center_surround(flow, (5, 5, 4, 6))
        with pytest.raises(ValueError, match="outside"):
            objectness.center_surround(flow, (5, 5, 10, 6))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_mask_oracle(self, seed):
        rng = np.random.default_rng(seed)
        H, W = rng.integers(4, 30, size=2)
        u, v = (rng.normal(size=(2, H, W)) * (rng.random((2, H, W)) < 0.3)).astype(np.float32)
        x0, x1 = sorted(rng.integers(0, W, size=2))
        y0, y1 = sorted(rng.integers(0, H, size=2))
        got = objectness.center_surround(FlowField(u, v), (x0, y0, x1, y1))
        assert -1.0 <= got <= 1.0
        assert got == pytest.approx(center_surround_reference(u, v, (x0, y0, x1, y1)), abs=1e-12)

    def test_gt_box_beats_random_background_boxes(self, single_scene, scene_scorer):
        t = 5
        gx0, gy0, gx1, gy1 = single_scene.gt_tubes[0].boxes[t]
        bw, bh = gx1 - gx0 + 1, gy1 - gy0 + 1
        H, W = single_scene.frame_shape
        gt_score = scene_scorer(t, (gx0, gy0, gx1, gy1))
        rng = np.random.default_rng(0)
        found = 0
        while found < 100:
            x0, y0 = int(rng.integers(0, W - bw + 1)), int(rng.integers(0, H - bh + 1))
            x1, y1 = x0 + bw - 1, y0 + bh - 1
            if x0 <= gx1 and gx0 <= x1 and y0 <= gy1 and gy0 <= y1:
                continue  # overlaps the object
            found += 1
            assert scene_scorer(t, (x0, y0, x1, y1)) < gt_score

    def test_scorer_frame_range(self, scene_scorer):
        with pytest.raises(ValueError):
            scene_scorer(99, (0, 0, 3, 3))


class TestScoreTube:
    def test_single_frame(self):
        tube = box_tube(3, [(2, 2, 9, 9)])
        scorer = lambda t, box: 0.25 * t  # noqa: E731
        assert objectness.score_tube(tube, scorer) == 0.75
        assert tube.score == 0.75

    def test_doubling_span_doubles_score(self):
        u = np.zeros((40, 40))
        u[10:20, 10:20] = 1.5
        flows = [FlowField(u, np.zeros_like(u))] * 6
        scorer = objectness.CenterSurroundScorer(flows)
        once = objectness.score_tube(box_tube(0, [(10, 10, 19, 19)] * 3), scorer)
        twice = objectness.score_tube(box_tube(0, [(10, 10, 19, 19)] * 6), scorer)
        assert twice == pytest.approx(2 * once, rel=1e-15)

    def test_additive_over_disjoint_spans(self):
        rng = np.random.default_rng(1)
        boxes = [(int(a), int(b), int(a) + 5, int(b) + 4) for a, b in rng.integers(0, 30, size=(7, 2))]
        table = {b: float(s) for b, s in zip(boxes, rng.normal(size=7))}
        whole = objectness.score_tube(box_tube(2, boxes), box_lookup(table))
        head = objectness.score_tube(box_tube(2, boxes[:3]), box_lookup(table))
        tail = objectness.score_tube(box_tube(5, boxes[3:]), box_lookup(table))
        assert whole == pytest.approx(head + tail, abs=1e-12)

    def test_empty_frames_skipped_and_mean(self):
        tube = box_tube(0, [(1, 1, 3, 3), (1, 1, 3, 3)])
        tube.masks[1] = False
        assert objectness.score_tube(tube, lambda t, b: 2.0) == 2.0
        tube = box_tube(0, [(1, 1, 3, 3)] * 4)
        assert objectness.score_tube(tube, lambda t, b: float(t), aggregate="mean") == 1.5
        with pytest.raises(ValueError):
            objectness.score_tube(tube, lambda t, b: 0.0, aggregate="max")

    def test_scorer_errors_propagate(self):
        scorer = objectness.ExternalScorer([{"frame": 0, "box": [1, 1, 3, 3], "score": 0.4}])
        with pytest.raises(KeyError, match="frame 1"):
            objectness.score_tube(box_tube(0, [(1, 1, 3, 3)] * 2), scorer)

    def test_gt_tube_outranks_background_tubes(self, single_scene, scene_scorer):
        gt = single_scene.gt_tubes[0]
        T = single_scene.num_frames
        pool = [Tube(0, gt.masks.copy())]
        # static boxes that never touch the object
        for x0, y0 in [(2, 2), (90, 5), (5, 95), (80, 90), (100, 60), (50, 100)]:
            tube = box_tube(0, [(x0, y0, x0 + 20, y0 + 15)] * T, single_scene.frame_shape)
            assert not (tube.masks & gt.masks).any()
            pool.append(tube)
        ranked = objectness.rank(pool, scene_scorer)
        assert ranked.ids[0] == 0


class TestRank:
    def make_pool(self, scores):
        boxes = [(i, i, i + 4, i + 4) for i in range(len(scores))]
        return [box_tube(0, [b]) for b in boxes], box_lookup(dict(zip(boxes, scores)))

    def test_plain_sort(self):
        pool, scorer = self.make_pool([0.2, 0.9, -0.1, 0.5])
        ranked = objectness.rank(pool, scorer)
        assert ranked.ids == [1, 3, 0, 2]
        assert ranked.scores == [0.9, 0.5, 0.2, -0.1]
        assert [id(t) for t in ranked] == [id(pool[i]) for i in ranked.ids]
        assert not ranked.diversified

    def test_tie_breaks(self):
        big = box_tube(1, [(0, 0, 9, 9)])
        small = box_tube(1, [(0, 0, 4, 4)])
        early = box_tube(0, [(20, 20, 22, 22)])
        same = box_tube(1, [(0, 0, 4, 4)])
        ranked = objectness.rank([small, big, same, early], lambda t, b: 1.0)
        assert ranked.ids == [3, 1, 0, 2]

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            objectness.rank([], lambda t, b: 0.0)

    def test_identical_copy_fully_suppressed(self):
        a = box_tube(0, [(0, 0, 9, 9)] * 2)
        b = box_tube(0, [(0, 0, 9, 9)] * 2)
        others = [box_tube(0, [(20 + k, 20, 25 + k, 25)] * 2) for k in range(3)]
        table = {(0, 0, 9, 9): 1.0, **{(20 + k, 20, 25 + k, 25): 0.1 * k for k in range(3)}}
        ranked = objectness.rank([a, b] + others, box_lookup(table), diversify=True, gamma=1e9)
        assert ranked.ids[0] == 0 and ranked.ids[-1] == 1
        assert ranked.diversified

    def test_three_tube_greedy_step(self):
        iou = np.array([[1.0, 0.9, 0.0], [0.9, 1.0, 0.0], [0.0, 0.0, 1.0]])
        # 4 - 0.9 = 3.1 still beats 3, so the near-duplicate keeps its place
        assert objectness.diversify_order([5, 4, 3], iou, 1.0) == [0, 1, 2]
        # with a stronger penalty 4 - 1.08 < 3 and the third tube moves up
        assert objectness.diversify_order([5, 4, 3], iou, 1.2) == [0, 2, 1]

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=1, max_size=8))
    def test_gamma_zero_and_permutation(self, raw):
        pool, scorer = self.make_pool([0.5 * r for r in raw])
        plain = objectness.rank(pool, scorer)
        zero = objectness.rank(pool, scorer, diversify=True, gamma=0.0)
        assert zero.ids == plain.ids
        div = objectness.rank(pool, scorer, diversify=True, gamma=0.7)
        assert sorted(div.ids) == list(range(len(pool)))
        assert all(a >= b for a, b in zip(plain.scores, plain.scores[1:]))

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(-300, 300), min_size=2, max_size=8))
    def test_monotone_transform_invariance(self, raw):
        pool, scorer = self.make_pool([r / 100 for r in raw])
        plain = objectness.rank(pool, scorer)
        warped = objectness.rank(pool, lambda t, b: float(np.exp(scorer(t, b))) + 1.0)
        assert warped.ids == plain.ids

    def test_iou_matrix_matches_metrics(self):
        rng = np.random.default_rng(2)
        pool = [Tube(int(rng.integers(0, 3)), rng.random((int(rng.integers(1, 4)), 8, 8)) < 0.4) for _ in range(5)]
        M = objectness.tube_iou_matrix(pool)
        for i in range(5):
            for j in range(5):
                assert M[i, j] == pytest.approx(metrics.tube_iou(pool[i], pool[j]), abs=1e-12)


class TestFilterProposals:
    def test_identity_when_keep_top_covers_pool(self):
        rng = np.random.default_rng(3)
        props = []
        for t in (0, 0, 1, 1, 1):
            m = np.zeros((12, 12), dtype=bool)
            x, y = rng.integers(0, 8, size=2)
            m[y : y + 4, x : x + 4] = True
            props.append(Proposal(m, t))
        kept = objectness.filter_proposals(props, lambda t, b: 0.0, keep_top=3)
        assert [id(p) for p in kept] == [id(p) for p in props]

    def test_static_background_dropped_first(self):
        u = np.zeros((40, 40))
        u[10:20, 10:20] = 1.0
        scorer = objectness.CenterSurroundScorer([FlowField(u, np.zeros_like(u))])
        moving = np.zeros((40, 40), dtype=bool)
        moving[10:20, 10:20] = True
        still = np.zeros((40, 40), dtype=bool)
        still[28:38, 28:38] = True
        assert scorer(0, (28, 28, 37, 37)) <= 0
        kept = objectness.filter_proposals([Proposal(still, 0), Proposal(moving, 0)], scorer, keep_top=1)
        assert len(kept) == 1 and kept[0].mask is moving
        assert kept[0].meta["score"] == 1.0

    def test_keep_top_contract(self):
        with pytest.raises(ValueError):
            objectness.filter_proposals([], lambda t, b: 0.0, keep_top=0)

    def test_two_object_keep_eight(self, two_scene):
        scorer = objectness.CenterSurroundScorer([two_scene.motion_field(t) for t in range(two_scene.num_frames)])
        for t in (0, 10):
            b = boundaries.motion_boundaries(two_scene.motion_field(t))
            props = mops.generate_proposals(b, ProposalParams(), seed=t, frame_index=t)
            kept = objectness.filter_proposals(props, scorer, keep_top=8)
            assert len(kept) == min(8, len(props))
            for g in two_scene.gt_tubes:
                assert max(metrics.mask_iou(p.mask, g.mask_at(t)) for p in kept) >= 0.8


def test_external_scorer_file(tmp_path):
    entries = [{"frame": 2, "box": [1, 2, 5, 6], "score": 0.75}]
    (tmp_path / "s.json").write_text(json.dumps(entries))
    scorer = objectness.ExternalScorer.load(tmp_path / "s.json")
    assert scorer(2, (1, 2, 5, 6)) == 0.75
    with pytest.raises(KeyError, match=r"frame 2 box \[1, 2, 5, 7\]"):
        scorer(2, (1, 2, 5, 7))
