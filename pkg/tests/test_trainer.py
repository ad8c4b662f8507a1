import csv
import json

import numpy as np
import pytest
import torch

from seqjsp.checkpoint import file_hash, load_model
from seqjsp.instance import generate_taillard
from seqjsp.policy import ModelConfig, PolicyModel, flat_params, log_prob_and_grad, rollout
from seqjsp.trainer import (
    Trainer,
    TrainerConfig,
    _adam,
    create_baseline,
    derive_seed,
    greedy_costs,
    reinforce_loss,
    taillard_set,
    ttest_update,
)

SMALL = dict(d_h=16, n_heads=4, n_layers=1, ff_width=32)


def tiny_config(**kw):
    base = dict(batch_size=8, epoch_size=16, n_epochs=2, baseline_eval_size=16, n_jobs=3, n_machines=3, log_every=1, seed=3)
    return TrainerConfig(**{**base, **kw})


def tiny_model(seed=0, precision="f64"):
    return PolicyModel(ModelConfig(**SMALL, precision=precision, seed=seed))


def test_config_errors_are_exhaustive():
    errs = TrainerConfig(learning_rate=0, grad_clip=-1, ttest_alpha=1.5, batch_size=0).errors()
    assert len(errs) == 4
    assert any("learning_rate" in e for e in errs)
    with pytest.raises(ValueError):
        TrainerConfig(gamma=0.9).validate()


def test_derive_seed_stable_and_distinct():
    assert derive_seed(1, "train", 0) == derive_seed(1, "train", 0)
    assert derive_seed(1, "train", 0) != derive_seed(1, "train", 1)
    assert derive_seed(1, "train", 0) != derive_seed(1, "sample", 0)
    assert 0 <= derive_seed(5) < 2**63


def test_zero_advantage_gives_zero_update():
    model = tiny_model()
    insts = taillard_set(3, 3, 8, 0)
    model.train()
    out = rollout(model, insts, "sample", seed=1)
    loss = reinforce_loss(out.log_prob, out.makespans, out.makespans)
    loss.backward()
    for p in model.parameters():
        assert p.grad is None or torch.count_nonzero(p.grad) == 0


def test_batch_gradient_matches_log_prob_and_grad():
    model = tiny_model().eval()
    insts = taillard_set(3, 3, 6, 1)
    out = rollout(model, insts, "sample", seed=2)
    base = np.array([inst.lower_bound() for inst in insts])
    loss = reinforce_loss(out.log_prob, out.makespans, base)
    grads = torch.autograd.grad(loss, list(model.parameters()), allow_unused=True)
    g1 = torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, model.parameters())])
    weights = (out.makespans - base) / len(insts)
    _, g2 = log_prob_and_grad(model, insts, out.perms, weights)
    assert torch.allclose(g1, g2, atol=1e-6)


def test_greedy_costs_restores_train_flag():
    model = tiny_model().train()
    greedy_costs(model, taillard_set(3, 3, 4, 0))
    assert model.training


def test_ttest_identical_models_no_replacement():
    config = tiny_config()
    model = tiny_model()
    baseline = create_baseline(model, config)
    replaced, _ = ttest_update(model, baseline, config)
    assert not replaced
    assert baseline.generation == 0


def test_ttest_replaces_with_better_model():
    config = tiny_config()
    model = tiny_model()
    baseline = create_baseline(model, config)
    baseline.eval_costs = baseline.eval_costs + 5
    old_set = baseline.eval_set
    replaced, _ = ttest_update(model, baseline, config)
    assert replaced
    assert baseline.generation == 1
    assert baseline.eval_set != old_set
    assert torch.equal(flat_params(baseline.model), flat_params(model))


def test_ttest_never_adopts_worse_model():
    config = tiny_config()
    model = tiny_model()
    baseline = create_baseline(model, config)
    baseline.eval_costs = baseline.eval_costs - 5
    replaced, _ = ttest_update(model, baseline, config)
    assert not replaced


def test_nonfinite_loss_aborts():
    from seqjsp.trainer import TrainingError, reinforce_epoch

    config = tiny_config()
    model = tiny_model()
    baseline = create_baseline(model, config)
    with torch.no_grad():
        model.v.fill_(float("nan"))
    with pytest.raises((TrainingError, RuntimeError)):
        reinforce_epoch(model, baseline, _adam(model, config), config, taillard_set(3, 3, 8, 0), 0)


def _run(tmp_path, name, epochs=2):
    config = tiny_config()
    val = taillard_set(3, 3, 8, "val")
    trainer = Trainer(tiny_model(), config, val_set=val, out_dir=tmp_path / name)
    curve = trainer.run(epochs)
    return trainer, curve


def test_training_is_deterministic_and_logs(tmp_path):
    a, curve_a = _run(tmp_path, "a")
    b, curve_b = _run(tmp_path, "b")
    assert curve_a == curve_b
    assert len(curve_a) == 3
    assert file_hash(tmp_path / "a" / "last.ckpt") == file_hash(tmp_path / "b" / "last.ckpt")
    rows = list(csv.DictReader(open(tmp_path / "a" / "train_log.csv")))
    assert list(rows[0]) == Trainer.LOG_FIELDS
    ends = [r for r in rows if r["baseline_replaced"] != ""]
    assert len(ends) == 2 and all(r["baseline_replaced"] in ("0", "1") for r in ends)
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["epochs_done"] == 2
    assert (tmp_path / "a" / "epoch_001.ckpt").exists()
    model, meta, _ = load_model(tmp_path / "a" / "last.ckpt")
    assert torch.equal(flat_params(model), flat_params(a.model))
    assert meta["epoch"] == 2


def test_resume_matches_uninterrupted(tmp_path):
    full, curve_full = _run(tmp_path, "full", epochs=2)
    part, _ = _run(tmp_path, "part", epochs=1)
    val = taillard_set(3, 3, 8, "val")
    resumed = Trainer.resume(tmp_path / "part" / "last.ckpt", val_set=val, out_dir=tmp_path / "resumed")
    curve = resumed.run(2)
    assert curve == curve_full
    assert torch.equal(flat_params(resumed.model), flat_params(full.model))


def test_training_reduces_cost_on_fixed_instance():
    # overfit a single small instance: sampled cost should drop
    inst = generate_taillard(3, 3, 11)
    config = tiny_config(learning_rate=3e-2, epoch_size=64, batch_size=16, n_epochs=6)
    trainer = Trainer(tiny_model(precision="f32"), config, dataset=[inst] * 64)
    before = rollout(trainer.model.eval(), [inst] * 512, "sample", seed=1).makespans.mean()
    trainer.run()
    after = rollout(trainer.model.eval(), [inst] * 512, "sample", seed=1).makespans.mean()
    assert after < before
