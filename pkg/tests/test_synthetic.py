import numpy as np
import pytest

from motiontubes import synthetic, videoio
from motiontubes.synthetic import ObjectSpec, SynthConfig

from oracles import rasterize_reference


def test_single_rectangle_flow():
    cfg = SynthConfig(64, 48, 10, (ObjectSpec("rectangle", (20, 10), (20.0, 20.0), (2.0, 0.0)),))
    scene = synthetic.synthesize(cfg)
    for t, flow in enumerate(scene.flows):
        inside = rasterize_reference("rectangle", (20, 10), (20.0 + 2 * t, 20.0), 48, 64)
        np.testing.assert_array_equal(flow.u[inside], 2.0)
        np.testing.assert_array_equal(flow.u[~inside], 0.0)
        np.testing.assert_array_equal(flow.v, 0.0)


def test_static_object_has_zero_flow(tmp_path):
    scene = synthetic.synthesize(synthetic.preset("static", num_frames=4))
    assert len(scene.gt_tubes) == 1 and scene.gt_tubes[0].volume > 0
    for flow in scene.flows + scene.backward_flows:
        assert not flow.magnitude().any()


def test_two_objects_against_independent_rasterizer(two_scene):
    specs = synthetic.preset("two").objects
    H, W = two_scene.frame_shape
    for t in (0, 7, 18):
        masks = [rasterize_reference(o.shape, o.size, o.position(t), H, W) for o in specs]
        flow = two_scene.flows[t]
        owner = np.full((H, W), -1)
        for i, m in enumerate(masks):
            owner[m] = i
        for i, o in enumerate(specs):
            sel = owner == i
            np.testing.assert_array_equal(flow.u[sel], o.velocity[0])
            np.testing.assert_array_equal(flow.v[sel], o.velocity[1])
            np.testing.assert_array_equal(two_scene.gt_tubes[i].mask_at(t), sel)
        np.testing.assert_array_equal(flow.u[owner < 0], 0.0)


def test_later_objects_occlude_earlier():
    objs = (
        ObjectSpec("rectangle", (20, 20), (30.0, 30.0), (1.0, 0.0)),
        ObjectSpec("ellipse", (10, 10), (30.0, 30.0), (0.0, 1.0)),
    )
    scene = synthetic.synthesize(SynthConfig(64, 64, 3, objs))
    top = scene.gt_tubes[1].mask_at(0)
    assert not (scene.gt_tubes[0].mask_at(0) & top).any()
    np.testing.assert_array_equal(scene.flows[0].v[top], 1.0)
    np.testing.assert_array_equal(scene.flows[0].u[top], 0.0)


def test_flow_warps_gt_masks(two_scene):
    """Pushing each gt pixel along its flow reproduces the next mask up to
    the contour pixels."""
    H, W = two_scene.frame_shape
    for t in range(two_scene.num_frames - 1):
        flow = two_scene.flows[t]
        for g in two_scene.gt_tubes:
            mask = g.mask_at(t)
            ys, xs = np.nonzero(mask)
            nx = np.rint(xs + flow.u[ys, xs]).astype(int)
            ny = np.rint(ys + flow.v[ys, xs]).astype(int)
            warped = np.zeros((H, W), dtype=bool)
            warped[ny, nx] = True
            nxt = g.mask_at(t + 1)
            perimeter = np.count_nonzero(nxt & ~np.pad(nxt, 1)[1:-1, 2:]) * 2 + 8
            assert np.count_nonzero(warped ^ nxt) <= perimeter


def test_backward_flow_is_consistent(single_scene):
    for f, b in zip(single_scene.flows, single_scene.backward_flows):
        ys, xs = np.nonzero(f.u != 0)
        nx = (xs + f.u[ys, xs]).astype(int)
        np.testing.assert_array_equal(b.u[ys, nx], -f.u[ys, xs])


def test_deterministic_bytes(tmp_path):
    cfg = synthetic.preset("two", seed=5, num_frames=4)
    videoio.save_scene(tmp_path / "a", synthetic.synthesize(cfg))
    videoio.save_scene(tmp_path / "b", synthetic.synthesize(cfg))
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_frames_in_unit_range(two_scene):
    for f in two_scene.frames:
        assert f.min() >= 0 and f.max() <= 1


def test_object_leaving_canvas_rejected():
    cfg = SynthConfig(64, 64, 20, (ObjectSpec("rectangle", (10, 10), (40.0, 30.0), (2.0, 0.0)),))
    with pytest.raises(ValueError, match="inside"):
        synthetic.synthesize(cfg)


def test_contract_errors():
    with pytest.raises(ValueError):
        SynthConfig(num_frames=1)
    with pytest.raises(ValueError):
        ObjectSpec(shape="star")
    with pytest.raises(ValueError):
        synthetic.preset("three")
