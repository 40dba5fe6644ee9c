import json
import math

import numpy as np
import pytest

from dgcl import ndtape as nd
from dgcl.config import TrainConfig
from dgcl.dataio import block_dataset, sample_bpr_batch
from dgcl.errors import CheckpointError, ConfigError
from dgcl.trainer import (
    DGCLModel,
    bpr_loss,
    evaluate_model,
    joint_gradients,
    joint_step,
    load_checkpoint,
    save_checkpoint,
    train,
    train_augmenter_epoch,
    train_diffusion_epoch,
)

SMALL = dict(embed_dim=8, layers=2, diff_steps=5, heads=2, batch_size=64, neg_candidates=4,
             lr=1e-2, epochs=2, diff_batch_size=32)


def small_cfg(**kw):
    return TrainConfig(**{**SMALL, **kw})


@pytest.fixture
def ds():
    return block_dataset(seed=0)


def test_bpr_examples():
    z = nd.Tensor(np.zeros((3, 2)))
    assert bpr_loss(z, z, z).item() == pytest.approx(math.log(2), abs=1e-12)
    u = nd.Tensor([[1.0, 0.0]])
    assert bpr_loss(u, nd.Tensor([[20.0, 0.0]]), nd.Tensor([[0.0, 0.0]])).item() < 1e-8
    assert bpr_loss(u, nd.Tensor([[1.0, 0.0]]), nd.Tensor([[0.0, 1.0]])).item() == \
        pytest.approx(0.31326, abs=1e-5)


def test_config_rejects_negative_lambda():
    with pytest.raises(ConfigError):
        small_cfg(lam=-0.1).validate()


def _grads(cfg, ds, seed=3):
    model = DGCLModel(cfg, ds)
    batch = sample_bpr_batch(ds, 16, cfg.neg_candidates, np.random.default_rng(seed))
    return model, joint_gradients(model, batch, np.random.default_rng(seed))


def test_lambda_zero_is_pure_bpr_gradient(ds):
    _, full = _grads(small_cfg(lam=0.0), ds)
    _, bpr = _grads(small_cfg(lam=0.0, ablation="no-diff"), ds)
    assert full.l_cl == 0.0
    assert full.grads["embeddings"].tobytes() == bpr.grads["embeddings"].tobytes()


def test_lambda_zero_step_leaves_augmenters_untouched(ds):
    model = DGCLModel(small_cfg(lam=0.0), ds)
    before = {k: {n: a.copy() for n, a in aug.params.items()} for k, aug in model.augmenters.items()}
    joint_step(model, sample_bpr_batch(ds, 16, 4, np.random.default_rng(0)), np.random.default_rng(0))
    for k, aug in model.augmenters.items():
        for n, a in aug.params.items():
            assert np.array_equal(a, before[k][n])


def test_no_diff_reports_joint_equal_to_rec(ds):
    _, res = _grads(small_cfg(ablation="no-diff", lam=0.3), ds)
    assert res.l_cl == 0.0 and res.l_joint == res.l_rec


@pytest.mark.parametrize("arm", ["full", "no-neg", "uniform-noise", "vae"])
def test_joint_equals_rec_plus_weighted_cl(ds, arm):
    cfg = small_cfg(ablation=arm, lam=0.3)
    _, res = _grads(cfg, ds)
    assert res.l_cl > 0
    assert res.l_joint == res.l_rec + 0.3 * res.l_cl


def test_contrastive_term_reaches_encoder(ds):
    _, with_cl = _grads(small_cfg(lam=0.3), ds)
    _, without = _grads(small_cfg(lam=0.0), ds)
    assert not np.array_equal(with_cl.grads["embeddings"], without.grads["embeddings"])


def test_zero_learning_rate_keeps_denoiser(ds):
    model = DGCLModel(small_cfg(), ds)
    model.aug_optim["user"].lr = 0.0
    before = {n: a.copy() for n, a in model.augmenters["user"].params.items()}
    users, _ = model.final_embeddings()
    train_augmenter_epoch(model, "user", users, np.random.default_rng(0))
    for n, a in model.augmenters["user"].params.items():
        assert np.array_equal(a, before[n])


def test_diffusion_epoch_is_deterministic(ds):
    out = []
    for _ in range(2):
        model = DGCLModel(small_cfg(), ds)
        out.append([train_diffusion_epoch(model, np.random.default_rng(9)) for _ in range(3)])
    assert out[0] == out[1]


def test_diffusion_refit_lowers_loss_on_fixed_embeddings(ds):
    model = DGCLModel(small_cfg(diff_steps=30), ds)
    users, _ = model.final_embeddings()
    users = users / np.linalg.norm(users, axis=1, keepdims=True)
    rng = np.random.default_rng(0)
    losses = [train_augmenter_epoch(model, "user", users, rng) for _ in range(200)]
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


def test_zero_epochs_reports_initial_model(ds):
    cfg = small_cfg(epochs=0)
    report, model = train(cfg, ds)
    assert report.epochs == []
    fresh = DGCLModel(cfg, ds)
    assert np.array_equal(model.embeddings, fresh.embeddings)
    from dgcl.metrics import evaluate_embeddings

    assert report.final == evaluate_embeddings(*fresh.final_embeddings(), ds, cfg.cutoffs).as_dict()


def test_seeded_replay_is_identical(ds):
    a, _ = train(small_cfg(), ds)
    b, _ = train(small_cfg(), ds)
    assert a.deterministic_view() == b.deterministic_view()
    assert len(a.epochs) == 2
    assert all(set(r) >= {"l_rec", "l_cl", "l_joint", "l_diff", "wall_time"} for r in a.epochs)


def test_report_records_lambda_identity(ds):
    report, _ = train(small_cfg(lam=0.2), ds)
    for rec in report.epochs:
        assert rec["l_joint"] == pytest.approx(rec["l_rec"] + 0.2 * rec["l_cl"], abs=1e-12)


@pytest.mark.parametrize("arm", ["no-diff", "no-neg", "uniform-noise", "vae"])
def test_ablation_config_diff_names_only_the_arm(ds, arm):
    report, _ = train(small_cfg(ablation=arm, epochs=0), ds)
    assert set(report.config_diff) == {"ablation"}


def test_early_stopping_respects_patience(ds):
    report, _ = train(small_cfg(ablation="no-diff", epochs=200, patience=3), ds)
    assert len(report.epochs) <= report.best_epoch + 3
    assert len(report.epochs) < 200


def test_checkpoint_roundtrip(tmp_path, ds):
    report, model = train(small_cfg(), ds)
    path = tmp_path / "ck.json"
    save_checkpoint(path, model, report)
    payload = json.loads(path.read_text())
    assert payload["format"] == "dgcl-checkpoint" and payload["version"] == 1
    assert payload["rng_state"] is not None
    loaded, _ = load_checkpoint(path, ds)
    for name, arr in model.state_dict().items():
        assert np.array_equal(loaded.state_dict()[name], arr)
    res = evaluate_model(path, ds)
    assert res.as_dict() == report.final
    assert evaluate_model(path, ds).as_dict() == res.as_dict()


def test_checkpoint_dimension_mismatch(tmp_path, ds):
    _, model = train(small_cfg(epochs=0), ds)
    path = tmp_path / "ck.json"
    save_checkpoint(path, model)
    with pytest.raises(CheckpointError, match="users"):
        load_checkpoint(path, block_dataset(16, 16, seed=0))


def test_missing_checkpoint_is_checkpoint_error(tmp_path):
    with pytest.raises(CheckpointError):
        evaluate_model(tmp_path / "nope.json")
