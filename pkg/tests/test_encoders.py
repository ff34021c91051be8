import numpy as np
import pytest
import torch

from tryonlab import dolls, encoders, preprocess
from tryonlab.errors import ShapeError
from tryonlab.gradcheck import grad_check
from tryonlab.model import ModelBundle, TrainConfig
from tryonlab.oracles import warp_oracle


@pytest.fixture(scope="module")
def model():
    return ModelBundle(TrainConfig(seed=3)).eval()


def test_encode_pose_shape_and_finiteness(model):
    out = model.e_pose(torch.zeros(18, 64, 64))
    assert out.shape == (64, 16, 16)
    assert torch.isfinite(out).all()


def test_encode_pose_distinguishes_poses(model):
    a, _ = dolls.sample_pose_pair(1)
    _, b = dolls.sample_pose_pair(1)
    ha = preprocess.make_heatmaps(a.keypoints)
    hb = preprocess.make_heatmaps(b.keypoints)
    with torch.no_grad():
        za, zb = model.e_pose(ha), model.e_pose(hb)
    assert (za - zb).norm() > 0


def test_encode_pose_batch_independence(model):
    torch.manual_seed(0)
    batch = torch.rand(4, 18, 64, 64)
    with torch.no_grad():
        joint = model.e_pose(batch)
        singles = torch.stack([model.e_pose(batch[i]) for i in range(4)])
    # batch stats never mix items (instance norm); small conv batching jitter only
    assert torch.allclose(joint, singles, atol=1e-5)


def test_encode_pose_rejects_wrong_shape(model):
    with pytest.raises(ShapeError):
        model.e_pose(torch.zeros(17, 64, 64))


def test_flow_untrained_is_finite_zero(model):
    sample = dolls.render_person(dolls.random_spec(np.random.default_rng(2)))
    heat = preprocess.make_heatmaps(sample.keypoints)
    seg = preprocess.extract_segment(torch.from_numpy(sample.image), sample.seg, 3)
    with torch.no_grad():
        flow = model.flow_net(seg.masked_image, heat, heat)
    assert flow.shape == (2, 16, 16)
    assert torch.isfinite(flow).all()
    assert flow.abs().max() == 0  # zero-initialized final layer


def test_warp_zero_flow_identity_exact():
    feature = torch.randn(4, 16, 16)
    out = encoders.bilinear_warp(feature, torch.zeros(2, 16, 16))
    assert torch.equal(out, feature)


def test_warp_integer_shift_on_ramp():
    ramp = torch.arange(16.0).repeat(16, 1).unsqueeze(0)  # f(x) = x
    flow = torch.zeros(2, 16, 16)
    flow[0] = 1.0
    out = encoders.bilinear_warp(ramp, flow)
    assert torch.allclose(out[0, :, :-1], ramp[0, :, :-1] + 1.0)
    assert torch.allclose(out[0, :, -1], ramp[0, :, -1])  # clamped at border


def test_warp_half_pixel_shift_on_ramp():
    ramp = torch.arange(16.0).repeat(16, 1).unsqueeze(0)
    flow = torch.zeros(2, 16, 16)
    flow[0] = 0.5
    out = encoders.bilinear_warp(ramp, flow)
    assert torch.allclose(out[0, :, :-1], ramp[0, :, :-1] + 0.5)


def test_warp_matches_loop_oracle():
    rng = np.random.default_rng(8)
    for _ in range(20):
        feature = rng.normal(size=(3, 6, 6))
        flow = rng.uniform(-2, 2, size=(2, 6, 6))
        expected = warp_oracle(feature, flow)
        got = encoders.bilinear_warp(torch.from_numpy(feature), torch.from_numpy(flow))
        assert np.abs(got.numpy() - expected).max() < 1e-12


def test_warp_gradients_match_finite_differences():
    torch.manual_seed(4)
    feature = torch.randn(4, 4, 4, dtype=torch.float64)
    # keep samples interior and off-integer so the interpolation is smooth
    flow = torch.rand(2, 4, 4, dtype=torch.float64) * 0.5 + 0.2
    flow[:, :, 0] = 0.3
    proj = torch.randn(4, 4, 4, dtype=torch.float64)
    report = grad_check(
        lambda f, fl: (encoders.bilinear_warp(f, fl) * proj).sum(), [feature, flow])
    assert report.passed, report


def test_encode_segment_mask_in_unit_interval(model):
    seg = preprocess.GarmentSegment(mask=torch.zeros(1, 64, 64),
                                    masked_image=torch.zeros(3, 64, 64), source_label=3)
    feature = encoders.encode_segment(model.e_tex, model.shape_head, seg,
                                      torch.zeros(2, 16, 16))
    assert torch.isfinite(feature.shape_mask).all()
    assert (feature.shape_mask > 0).all() and (feature.shape_mask < 1).all()
    assert torch.equal(feature.shape_mask, torch.sigmoid(feature.shape_logits))


def test_encode_segment_flow_compositionality(model, toy_sample):
    seg = preprocess.extract_segment(torch.from_numpy(toy_sample.image), toy_sample.seg, 3)
    flow = torch.zeros(2, 16, 16)
    flow[0] = 0.75
    with torch.no_grad():
        base = encoders.encode_segment(model.e_tex, model.shape_head, seg, torch.zeros(2, 16, 16))
        shifted = encoders.encode_segment(model.e_tex, model.shape_head, seg, flow)
    rewarped = encoders.bilinear_warp(base.texture, flow)
    assert torch.allclose(shifted.texture, rewarped, atol=1e-6)


def test_map_texture_identity_stub(model):
    texture = torch.randn(64, 16, 16)
    mask = torch.rand(1, 16, 16)
    mapper = encoders.FeatureMapper().set_identity()
    with torch.no_grad():
        assert torch.allclose(mapper(texture, mask), texture)
    assert torch.equal(encoders.identity_map(texture, mask), texture)


def test_map_texture_zero_input_zero_bias():
    mapper = encoders.FeatureMapper()
    with torch.no_grad():
        mapper.proj.bias.zero_()
        out = mapper(torch.zeros(64, 16, 16), torch.zeros(1, 16, 16))
    assert out.abs().max() == 0


def test_map_texture_linearity(model):
    torch.manual_seed(5)
    t = torch.randn(64, 16, 16)
    m = torch.rand(1, 16, 16)
    with torch.no_grad():
        d1 = model.e_map(2 * t, m) - model.e_map(t, m)
        d2 = model.e_map(t, m) - model.e_map(0 * t, m)
    assert torch.allclose(d1, d2, atol=1e-5)


def test_encoders_finite_on_many_random_inputs(model):
    torch.manual_seed(6)
    with torch.no_grad():
        for _ in range(10):
            heat = torch.rand(100, 18, 64, 64)
            assert torch.isfinite(model.e_pose(heat)).all()
            image = torch.rand(100, 3, 64, 64) * torch.randint(0, 2, (100, 1, 64, 64))
            tex = model.e_tex(image)
            assert torch.isfinite(tex).all()
            assert torch.isfinite(model.shape_head(tex)).all()


def test_flow_learns_rigid_shift():
    """Train the flow estimator alone on rigid +8 px translations; converged
    offsets should approach -2 grid cells (backward sampling convention).

    Correctness is measured on frozen conv features, whose receptive field
    spans several grid cells and so carries gradient across the 2-cell shift.
    """
    torch.manual_seed(7)
    rng = np.random.default_rng(7)
    from tryonlab.losses import FrozenFeatureNet, geo_loss
    from tryonlab.training import _alignment_features

    features = FrozenFeatureNet(3)

    def feats(image: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return _alignment_features(features, image.unsqueeze(0)).squeeze(0)

    samples = []
    for _ in range(6):
        spec = dolls.random_spec(rng, hair_style="long")
        sample = dolls.render_person(spec)
        src = torch.from_numpy(sample.image)
        tgt = torch.full_like(src, 0.93)
        tgt[:, :, 8:] = src[:, :, :-8]
        kps = sample.keypoints.copy()
        kps[:, 0] += 8.0
        src_heat = preprocess.make_heatmaps(sample.keypoints)
        tgt_heat = preprocess.make_heatmaps(kps)
        fg16 = torch.from_numpy((sample.seg[::4, ::4] > 0)).roll(2, dims=1)
        samples.append((src, feats(src), feats(tgt), src_heat, tgt_heat, fg16))

    net = encoders.FlowEstimator()
    opt = torch.optim.Adam(net.parameters(), lr=5e-3)
    for step in range(400):
        src, sf, tf, sh, th, _ = samples[step % len(samples)]
        flow = net(src, sh, th)
        loss = geo_loss(flow, sf, tf)
        opt.zero_grad()
        loss.backward()
        opt.step()

    dx = []
    with torch.no_grad():
        for src, sf, tf, sh, th, fg16 in samples:
            flow = net(src, sh, th)
            dx.append(float(flow[0][fg16].mean()))
    mean_dx = float(np.mean(dx))
    # 8 px right shift / stride 4, backward sampling -> -2 grid cells
    assert abs(mean_dx - (-2.0)) <= 1.0, f"mean dx {mean_dx}"
