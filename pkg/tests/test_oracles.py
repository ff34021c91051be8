"""The oracle corpus: stored cases stay reproducible and the fast paths match."""
import numpy as np
import pytest
import torch

from tryonlab import encoders, generator, losses, metrics, oracles
from tryonlab.errors import OracleSizeError
from tryonlab.gradcheck import grad_check

from conftest import ORACLE_CORPUS

CORPUS = oracles.load_corpus(ORACLE_CORPUS)


def test_corpus_complete():
    for kind in oracles.ORACLE_KINDS:
        assert len(CORPUS[kind]) == 200


def test_corpus_regeneration_is_deterministic():
    for kind in oracles.ORACLE_KINDS:
        regenerated = oracles.generate_cases(kind, 10, seed=20240)
        for fresh, stored in zip(regenerated, CORPUS[kind][:10]):
            assert fresh.name == stored.name
            np.testing.assert_array_equal(np.asarray(fresh.expected),
                                          np.asarray(stored.expected))


def test_stored_expectations_match_oracle_recompute():
    for kind in oracles.ORACLE_KINDS:
        for case in CORPUS[kind][:25]:
            recomputed = np.asarray(oracles.eq_oracle(kind, dict(case.inputs)))
            np.testing.assert_allclose(recomputed, case.expected, rtol=0, atol=1e-12)


def _run_main_path(kind: str, inputs: dict):
    if kind == "eq1":
        skin = encoders.GarmentFeature(
            texture=torch.from_numpy(inputs["skin_texture"]),
            shape_mask=torch.from_numpy(inputs["skin_mask"]),
            shape_logits=torch.zeros(1), flow=torch.zeros(1), source_label=1)
        background = encoders.GarmentFeature(
            texture=torch.from_numpy(inputs["bg_mapped"]),
            shape_mask=torch.zeros_like(torch.from_numpy(inputs["skin_mask"])),
            shape_logits=torch.zeros(1), flow=torch.zeros(1), source_label=0)
        fg = [torch.from_numpy(m) for m in inputs["fg_masks"]]
        return generator.compose_body_texture(skin, background, fg,
                                              encoders.identity_map).texture.numpy()
    if kind == "eq2":
        return generator.blend_state(torch.from_numpy(inputs["state"]),
                                     torch.from_numpy(inputs["update"]),
                                     torch.from_numpy(inputs["mask"])).numpy()
    if kind == "warp":
        return encoders.bilinear_warp(torch.from_numpy(inputs["feature"]),
                                      torch.from_numpy(inputs["flow"])).numpy()
    if kind == "ssim":
        return metrics.ssim(inputs["a"], inputs["b"])
    if kind == "siou":
        scores = metrics.siou(inputs["pred"], inputs["truth"])
        return np.array([scores[label] for label in sorted(scores)])
    if kind == "xent":
        return float(losses.seg_loss(torch.from_numpy(inputs["logits"]),
                                     torch.from_numpy(inputs["labels"])))
    from tryonlab.model import TrainConfig

    cfg = TrainConfig(lambda_gan=float(inputs["lambda_gan"]),
                      lambda_seg=float(inputs["lambda_seg"]))
    total, _ = losses.total_loss(float(inputs["content"]), float(inputs["geo"]),
                                 float(inputs["gan"]), float(inputs["seg"]), cfg)
    return float(total)


@pytest.mark.parametrize("kind", oracles.ORACLE_KINDS)
def test_main_implementations_match_oracles(kind):
    for case in CORPUS[kind]:
        got = np.asarray(_run_main_path(kind, dict(case.inputs)))
        np.testing.assert_allclose(got, case.expected, rtol=0, atol=case.tolerance,
                                   err_msg=case.name)


def test_oversized_inputs_refused():
    with pytest.raises(OracleSizeError):
        oracles.eq_oracle("eq2", {
            "state": np.zeros((3, 32, 32)), "update": np.zeros((3, 32, 32)),
            "mask": np.zeros((1, 32, 32))})
    with pytest.raises(OracleSizeError):
        oracles.eq_oracle("warp", {
            "feature": np.zeros((8, 4, 4)), "flow": np.zeros((2, 4, 4))})


def test_ssim_oracle_identity():
    x = np.random.default_rng(0).uniform(size=(3, 12, 12))
    assert oracles.ssim_oracle(x, x) == pytest.approx(1.0, abs=1e-12)


def test_eq2_oracle_scalar_case():
    out = oracles.eq2_oracle(np.full((1, 1, 1), 1.0), np.full((1, 1, 1), 2.0),
                             np.full((1, 1, 1), 0.25))
    assert out.item() == pytest.approx(1.25, abs=1e-12)


class TestGradCheck:
    def test_quadratic_is_nearly_exact(self):
        torch.manual_seed(0)
        report = grad_check(lambda x: (x ** 2).sum(), [torch.randn(6)], tolerance=1e-8)
        assert report.passed and report.max_rel_error < 1e-8

    def test_detects_wrong_gradient(self):
        class WrongGrad(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                ctx.save_for_backward(x)
                return (x ** 2).sum()

            @staticmethod
            def backward(ctx, grad):
                (x,) = ctx.saved_tensors
                return grad * (2 * x + 0.5)

        report = grad_check(lambda x: WrongGrad.apply(x), [torch.randn(6)])
        assert not report.passed
        assert report.max_rel_error > 1e-1

    def test_non_finite_reported(self):
        from tryonlab.errors import ValidationError

        with pytest.raises(ValidationError):
            grad_check(lambda x: (1.0 / x).sum(), [torch.zeros(2)])
