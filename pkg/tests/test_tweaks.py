import numpy as np
import pytest
import torch

from tryonlab import dolls, generator, pipeline, tweaks
from tryonlab.encoders import GarmentFeature
from tryonlab.errors import TweakError, ValidationError
from tryonlab.model import ModelBundle, TrainConfig


@pytest.fixture(scope="module")
def model():
    return ModelBundle(TrainConfig(seed=6)).eval()


@pytest.fixture(scope="module")
def person(model, toy_sample):
    with torch.no_grad():
        return pipeline.person_from_sample(model, toy_sample)


@pytest.fixture()
def boxed_top(toy_sample):
    gt16 = toy_sample.seg[::4, ::4]
    mask = torch.from_numpy((gt16 == dolls.LABEL_TOP).astype(np.float32)).unsqueeze(0)
    mask = mask * 0.9 + 0.05
    return GarmentFeature(texture=torch.randn(64, 16, 16), shape_mask=mask,
                          shape_logits=torch.zeros(1, 16, 16),
                          flow=torch.zeros(2, 16, 16), source_label=3)


def _arm_corridor_union(keypoints):
    union = np.zeros((16, 16), dtype=bool)
    for chain in tweaks.ARM_CHAINS:
        inside, _, _ = tweaks._corridor(keypoints, chain, tweaks.LIMB_CORRIDOR_RADIUS)
        union |= inside
    return union


class TestShapeTweaks:
    def test_zero_magnitude_is_identity(self, boxed_top, toy_sample):
        out = tweaks.tweak_shape_mask(boxed_top, toy_sample.keypoints, "sleeve_length", 0.0)
        assert out is boxed_top

    def test_full_extension_covers_wrist_cells(self, boxed_top, toy_sample):
        out = tweaks.tweak_shape_mask(boxed_top, toy_sample.keypoints, "sleeve_length", 1.0)
        for idx in (4, 7):
            x, y, _ = toy_sample.keypoints[idx]
            assert float(out.shape_mask[0, int(y // 4), int(x // 4)]) > 0.5

    def test_retraction_strictly_shrinks_in_corridor(self, boxed_top, toy_sample):
        out = tweaks.tweak_shape_mask(boxed_top, toy_sample.keypoints, "sleeve_length", -1.0)
        corridor = _arm_corridor_union(toy_sample.keypoints)
        before = ((boxed_top.shape_mask[0].numpy() > 0.5) & corridor).sum()
        after = ((out.shape_mask[0].numpy() > 0.5) & corridor).sum()
        assert after < before

    def test_untouched_outside_corridor_bit_exact(self, boxed_top, toy_sample):
        corridor = _arm_corridor_union(toy_sample.keypoints)
        for magnitude in (1.0, -1.0, 0.4, -0.3):
            out = tweaks.tweak_shape_mask(boxed_top, toy_sample.keypoints,
                                          "sleeve_length", magnitude)
            assert (out.shape_mask[0].numpy()[~corridor]
                    == boxed_top.shape_mask[0].numpy()[~corridor]).all()
            assert (out.texture.numpy()[:, ~corridor]
                    == boxed_top.texture.numpy()[:, ~corridor]).all()

    def test_extend_then_retract_roughly_restores_area(self, boxed_top, toy_sample):
        base_area = int((boxed_top.shape_mask > 0.5).sum())
        grown = tweaks.tweak_shape_mask(boxed_top, toy_sample.keypoints, "sleeve_length", 1.0)
        back = tweaks.tweak_shape_mask(grown, toy_sample.keypoints, "sleeve_length", -1.0)
        area = int((back.shape_mask > 0.5).sum())
        assert abs(area - base_area) <= max(2, 0.1 * base_area)

    def test_invisible_keypoints_name_joints(self, boxed_top, toy_sample):
        kps = toy_sample.keypoints.copy()
        kps[4, 2] = 0.0
        with pytest.raises(TweakError, match="4"):
            tweaks.tweak_shape_mask(boxed_top, kps, "sleeve_length", 0.5)

    def test_width_grows_and_shrinks(self, boxed_top, toy_sample):
        wide = tweaks.tweak_shape_mask(boxed_top, toy_sample.keypoints, "width", 1.0)
        slim = tweaks.tweak_shape_mask(boxed_top, toy_sample.keypoints, "width", -1.0)
        base = int((boxed_top.shape_mask > 0.5).sum())
        assert int((wide.shape_mask > 0.5).sum()) > base
        assert int((slim.shape_mask > 0.5).sum()) < base

    def test_leg_length_uses_leg_corridor(self, toy_sample):
        gt16 = toy_sample.seg[::4, ::4]
        mask = torch.from_numpy((gt16 == dolls.LABEL_BOTTOM).astype(np.float32)).unsqueeze(0)
        bottom = GarmentFeature(texture=torch.randn(64, 16, 16), shape_mask=mask,
                                shape_logits=torch.zeros(1, 16, 16),
                                flow=torch.zeros(2, 16, 16), source_label=4)
        out = tweaks.tweak_shape_mask(bottom, toy_sample.keypoints, "leg_length", 1.0)
        for idx in (10, 13):  # ankles
            x, y, _ = toy_sample.keypoints[idx]
            assert float(out.shape_mask[0, int(y // 4), int(x // 4)]) > 0.5


class TestRecolor:
    def test_zero_strength_identity(self, model, boxed_top):
        out = tweaks.recolor_texture(boxed_top, (0.9, 0.1, 0.1), 0.0, model.e_tex)
        assert out is boxed_top

    def test_full_strength_idempotent(self, model, boxed_top):
        once = tweaks.recolor_texture(boxed_top, (0.9, 0.1, 0.1), 1.0, model.e_tex)
        twice = tweaks.recolor_texture(once, (0.9, 0.1, 0.1), 1.0, model.e_tex)
        assert float((once.texture - twice.texture).abs().max()) < 1e-6

    def test_only_masked_cells_change(self, model, boxed_top):
        out = tweaks.recolor_texture(boxed_top, (0.9, 0.1, 0.1), 0.7, model.e_tex)
        outside = (boxed_top.shape_mask[0] <= 0.5).numpy()
        assert (out.texture.numpy()[:, outside]
                == boxed_top.texture.numpy()[:, outside]).all()

    def test_bad_strength_rejected(self, model, boxed_top):
        with pytest.raises(ValidationError):
            tweaks.recolor_texture(boxed_top, (0.9, 0.1, 0.1), 1.5, model.e_tex)


class TestAttributeDirections:
    def test_axis_separation_recovers_axis(self):
        rng = np.random.default_rng(1)
        n = 2000
        latents = rng.normal(size=(n, 64))
        labels = (rng.random(n) > 0.5).astype(int)
        latents[:, 1] = np.where(labels == 1, 1.0, -1.0) * (1.0 + np.abs(rng.normal(size=n)))
        direction = tweaks.fit_attribute_direction(latents, labels, "axis")
        e1 = np.zeros(64)
        e1[1] = 1.0
        assert abs(direction.direction @ e1) >= 0.99
        assert direction.fit_accuracy == 1.0

    def test_two_gaussian_clouds_accuracy(self):
        rng = np.random.default_rng(2)
        e1 = np.zeros(64)
        e1[0] = 1.0
        a = rng.normal(size=(100, 64)) + 2.0 * e1
        b = rng.normal(size=(100, 64)) - 2.0 * e1
        latents = np.concatenate([a, b])
        labels = np.array([1] * 100 + [0] * 100)
        direction = tweaks.fit_attribute_direction(latents, labels, "gauss", seed=3)
        assert direction.fit_accuracy >= 0.95

    def test_single_class_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValidationError):
            tweaks.fit_attribute_direction(rng.normal(size=(40, 64)), np.ones(40), "x")

    def test_too_few_examples_rejected(self):
        rng = np.random.default_rng(4)
        labels = np.array([0] * 15 + [1] * 30)
        with pytest.raises(ValidationError):
            tweaks.fit_attribute_direction(rng.normal(size=(45, 64)), labels, "x")

    def test_invariant_to_example_order(self):
        rng = np.random.default_rng(5)
        e1 = np.zeros(64)
        e1[0] = 1.0
        latents = np.concatenate([rng.normal(size=(60, 64)) + 2 * e1,
                                  rng.normal(size=(60, 64)) - 2 * e1])
        labels = np.array([1] * 60 + [0] * 60)
        d1 = tweaks.fit_attribute_direction(latents, labels, "g", seed=7)
        perm = rng.permutation(120)
        d2 = tweaks.fit_attribute_direction(latents[perm], labels[perm], "g", seed=7)
        agreement = abs(float(d1.direction @ d2.direction))
        assert agreement == pytest.approx(1.0, abs=1e-9)

    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        v = rng.normal(size=64)
        direction = tweaks.AttributeDirection(v / np.linalg.norm(v), "sleeve", 0.97, 160)
        direction.save(tmp_path / "d.json")
        loaded = tweaks.AttributeDirection.load(tmp_path / "d.json")
        assert np.allclose(loaded.direction, direction.direction)
        assert loaded.attribute == "sleeve"
        assert loaded.train_count == 160


class TestLatentTweak:
    @pytest.fixture()
    def direction(self):
        rng = np.random.default_rng(7)
        v = rng.normal(size=64)
        return tweaks.AttributeDirection(v / np.linalg.norm(v), "attr", 1.0, 100)

    def test_zero_magnitude_identity(self, boxed_top, direction):
        assert tweaks.tweak_latent(boxed_top, direction, 0.0) is boxed_top

    def test_classifier_score_monotone_in_magnitude(self, boxed_top, direction):
        scores = []
        for magnitude in (-1.0, -0.5, 0.0, 0.5, 1.0):
            shifted = tweaks.tweak_latent(boxed_top, direction, magnitude)
            scores.append(float(tweaks.pooled_latent(shifted) @ direction.direction))
        assert all(b >= a - 1e-9 for a, b in zip(scores, scores[1:]))
        assert scores[-1] > scores[0]

    def test_low_mask_cells_bit_identical(self, boxed_top, direction):
        out = tweaks.tweak_latent(boxed_top, direction, 0.8)
        outside = (boxed_top.shape_mask[0] <= 0.5).numpy()
        assert (out.texture.numpy()[:, outside]
                == boxed_top.texture.numpy()[:, outside]).all()

    def test_decode_locality(self, model, person, boxed_top, direction):
        base = person.with_garments([boxed_top])
        shifted = base.with_garments([tweaks.tweak_latent(boxed_top, direction, 1.0)])
        with torch.no_grad():
            img1 = generator.try_on(model, base)
            img2 = generator.try_on(model, shifted)
        support = (boxed_top.shape_mask[0] > 0).numpy()
        allowed = generator.decoder_affected_mask(support)
        diff = (img1 != img2).any(dim=0).numpy()
        assert not (diff & ~allowed).any()


class TestApplyTweaks:
    def test_empty_list_equals_plain_tryon(self, model, person):
        with torch.no_grad():
            direct = generator.try_on(model, person)
        via = tweaks.apply_tweaks(person, [], model)
        assert torch.equal(via, direct)

    def test_disjoint_garment_tweaks_commute(self, model, person):
        t_top = tweaks.Tweak("recolor", 0.8, 1, {"color": [0.9, 0.1, 0.1]})
        t_bottom = tweaks.Tweak("recolor", 0.8, 0, {"color": [0.1, 0.1, 0.9]})
        a = tweaks.apply_tweaks(person, [t_top, t_bottom], model)
        b = tweaks.apply_tweaks(person, [t_bottom, t_top], model)
        assert torch.allclose(a, b, atol=1e-6)

    def test_bad_garment_index_rejected(self, model, person):
        bad = tweaks.Tweak("recolor", 0.5, 9, {"color": [1, 0, 0]})
        with pytest.raises(ValidationError):
            tweaks.apply_tweaks(person, [bad], model)

    def test_unknown_direction_rejected(self, model, person):
        t = tweaks.Tweak("latent", 0.5, 0, {"direction": "nope"})
        with pytest.raises(ValidationError):
            tweaks.apply_tweaks(person, [t], model, directions={})

    def test_tweak_validation(self):
        with pytest.raises(ValidationError):
            tweaks.Tweak("sleeve_length", 1.5, 0)
        with pytest.raises(ValidationError):
            tweaks.Tweak("nonsense", 0.5, 0)
        with pytest.raises(ValidationError):
            tweaks.Tweak("recolor", 0.5, 0, {})
        round_trip = tweaks.Tweak.from_json(
            tweaks.Tweak("latent", -0.25, 1, {"direction": "d"}).to_json())
        assert round_trip.kind == "latent" and round_trip.magnitude == -0.25
