import numpy as np
import pytest
import torch

from tryonlab.dataset import build_dataset
from tryonlab.errors import ValidationError
from tryonlab.losses import FrozenFeatureNet
from tryonlab.model import ModelBundle, TrainConfig
from tryonlab.training import PairSampler, train, transfer_forward, resolve_manifest


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("traindata")
    build_dataset(24, 3, out)
    return out


def _config(data_dir, tmp_path, **kw):
    defaults = dict(steps=1, batch_size=2, dataset_path=str(data_dir),
                    out_dir=str(tmp_path / "run"), checkpoint_every=0, seed=2)
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_single_step_logs_one_row_and_checkpoints(data_dir, tmp_path):
    config = _config(data_dir, tmp_path)
    model = train(config, quiet=True)
    assert model.step == 1
    log = (tmp_path / "run" / "loss_log.csv").read_text().strip().splitlines()
    assert log[0] == "step,content,geo,gan,seg,total"
    assert len(log) == 2 and log[1].startswith("1,")
    assert (tmp_path / "run" / "checkpoint_step1.pt").exists()
    assert (tmp_path / "run" / "checkpoint_latest.pt").exists()
    assert (tmp_path / "run" / "loss_curves.png").exists()


def test_checkpoint_round_trip_reproduces_outputs(data_dir, tmp_path):
    config = _config(data_dir, tmp_path, steps=2)
    model = train(config, quiet=True)
    path = tmp_path / "run" / "checkpoint_latest.pt"
    clone = ModelBundle.load(path)
    assert clone.step == 2
    assert clone.checkpoint_id == ModelBundle.load(path).checkpoint_id

    sampler = PairSampler(resolve_manifest(config.dataset_path), "train", 9)
    batch = sampler.batch(2)
    features = FrozenFeatureNet(config.feature_seed)
    model.eval()
    clone.eval()
    with torch.no_grad():
        a = transfer_forward(model, batch, features)["generated"]
        b = transfer_forward(clone, batch, features)["generated"]
    assert torch.equal(a, b)


def test_resume_continues_step_counter(data_dir, tmp_path):
    config = _config(data_dir, tmp_path, steps=2)
    train(config, quiet=True)
    ckpt = tmp_path / "run" / "checkpoint_latest.pt"
    config2 = _config(data_dir, tmp_path, steps=1)
    resumed = train(config2, resume_from=ckpt, quiet=True)
    assert resumed.step == 3
    rows = (tmp_path / "run" / "loss_log.csv").read_text().strip().splitlines()
    steps = [int(r.split(",")[0]) for r in rows[1:]]
    assert steps == [1, 2, 3]


def test_every_module_receives_gradient(data_dir, tmp_path):
    config = _config(data_dir, tmp_path, batch_size=2)
    model = ModelBundle(config).train()
    features = FrozenFeatureNet(config.feature_seed)
    sampler = PairSampler(resolve_manifest(config.dataset_path), "train", config.seed)

    from tryonlab.losses import content_loss, gan_loss, seg_loss, total_loss
    import torch.nn.functional as F

    touched = {name: False for name in model.MODULE_NAMES}
    for _ in range(5):
        batch = sampler.batch(2)
        out = transfer_forward(model, batch, features)
        onehot = F.one_hot(batch["tgt_seg"].long(), 5).permute(0, 3, 1, 2).float()
        g_pose, d_pose = gan_loss(model.d_pose, batch["tgt_image"], out["generated"],
                                  batch["tgt_heat"])
        g_seg, d_seg = gan_loss(model.d_seg, batch["tgt_image"], out["generated"], onehot)
        g_total, _ = total_loss(content_loss(out["generated"], batch["tgt_image"], features),
                                out["geo"], g_pose + g_seg,
                                seg_loss(out["logits"], batch["tgt_seg"]), config)
        for m in model.modules().values():
            m.zero_grad(set_to_none=True)
        (g_total + d_pose + d_seg).backward()
        for name, module in model.modules().items():
            for p in module.parameters():
                if p.grad is not None and p.grad.abs().sum() > 0:
                    touched[name] = True
                    break
    missing = [name for name, ok in touched.items() if not ok]
    assert not missing, f"no gradient reached: {missing}"


def test_missing_dataset_rejected(tmp_path):
    config = TrainConfig(steps=1, dataset_path=str(tmp_path / "nope"),
                         out_dir=str(tmp_path / "run"))
    with pytest.raises(ValidationError):
        train(config, quiet=True)


def test_pair_sampler_is_deterministic(data_dir):
    manifest = resolve_manifest(data_dir)
    b1 = PairSampler(manifest, "train", 5).batch(3)
    b2 = PairSampler(manifest, "train", 5).batch(3)
    for key in b1:
        assert torch.equal(b1[key], b2[key])


def test_config_toml_round_trip(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('steps = 7\nbatch_size = 3\nlambda_seg = 0.25\ndataset_path = "d"\n')
    config = TrainConfig.from_toml(path)
    assert config.steps == 7 and config.batch_size == 3 and config.lambda_seg == 0.25
    with pytest.raises(ValidationError):
        TrainConfig.from_toml(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("unknown_key = 1\n")
    with pytest.raises(ValidationError):
        TrainConfig.from_toml(bad)
