import math

import numpy as np
import pytest
import torch

from seqjsp.checkpoint import load_model, save_model
from seqjsp.instance import Instance, generate_taillard
from seqjsp.masking import MaskViolation, init_masks
from seqjsp.policy import (
    ModelConfig,
    PolicyModel,
    decode,
    flat_params,
    instances_to_tensor,
    log_likelihood,
    log_prob_and_grad,
    rollout,
    set_flat_params,
)
from seqjsp.schedule import FeasibilityError, check_feasible

SMALL = dict(d_h=16, n_heads=4, n_layers=2, ff_width=32)


def small_model(seed=0, precision="f32", **kw):
    return PolicyModel(ModelConfig(**{**SMALL, **kw}, precision=precision, seed=seed))


def fd_gradient_check(model, inst, perm, n_coords, rng, step=1e-5):
    """Max relative error of analytic vs central-difference gradient of log P."""
    model.eval()
    _, grad = log_prob_and_grad(model, [inst], [perm])
    theta = flat_params(model)
    worst = 0.0
    for c in rng.choice(theta.numel(), size=n_coords, replace=False):
        vals = []
        for sign in (1, -1):
            t = theta.clone()
            t[c] += sign * step
            set_flat_params(model, t)
            with torch.no_grad():
                vals.append(float(log_likelihood(model, [inst], [perm])[0]))
        set_flat_params(model, theta)
        fd = (vals[0] - vals[1]) / (2 * step)
        an = float(grad[c])
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return worst


def test_config_validation():
    assert ModelConfig(d_h=10, n_heads=3).errors()
    assert ModelConfig(n_layers=0).errors()
    assert ModelConfig(precision="f16").errors()
    with pytest.raises(ValueError):
        PolicyModel(ModelConfig(d_h=10, n_heads=3))


def test_parameter_count_is_function_of_config():
    a, b = small_model(0), small_model(7)
    assert flat_params(a).numel() == flat_params(b).numel()
    assert not torch.equal(flat_params(a), flat_params(b))
    assert torch.equal(flat_params(a), flat_params(small_model(0)))


def test_init_range():
    model = small_model(3)
    theta = flat_params(model)
    assert theta.abs().max() <= 1 / math.sqrt(16)


def test_embed_shapes_and_identical_rows():
    model = small_model().eval()
    insts = [generate_taillard(3, 4, s) for s in range(5)]
    U = instances_to_tensor(insts)
    X = model.embed(U)
    assert X.shape == (5, 12, 16)
    U2 = U.clone()
    U2[0, 1] = U2[0, 0]
    X2 = model.embed(U2)
    assert torch.equal(X2[0, 0], X2[0, 1])


def test_heterogeneous_batch_rejected():
    with pytest.raises(ValueError):
        instances_to_tensor([generate_taillard(2, 3, 0), generate_taillard(3, 2, 0)])


def test_batch_permutation_in_inference_mode():
    model = small_model().eval()
    U = instances_to_tensor([generate_taillard(3, 3, s) for s in range(4)])
    order = torch.tensor([2, 0, 3, 1])
    with torch.no_grad():
        assert torch.allclose(model.embed(U)[order], model.embed(U[order]), atol=1e-6)


def test_encoder_mean_and_row_equivariance():
    model = small_model(precision="f64").eval()
    U = instances_to_tensor([generate_taillard(3, 4, 1)], torch.float64)
    perm = torch.randperm(12, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        H, h_bar = model.encode(model.embed(U))
        Hp, h_bar_p = model.encode(model.embed(U[:, perm]))
    assert torch.equal(h_bar, H.mean(dim=1))
    assert torch.allclose(Hp, H[:, perm], atol=1e-12)
    assert torch.allclose(h_bar_p, h_bar, atol=1e-12)


def _step0(model, inst):
    n, m = inst.shape
    U = instances_to_tensor([inst], model.dtype)
    H, h_bar = model.encode(model.embed(U))
    state, inp = model.decoder_start(h_bar)
    masks = init_masks(1, n, m)
    return model.decode_step(state, inp, model.w_ref(H), masks)


def test_step0_support_and_normalization():
    model = small_model().eval()
    inst = generate_taillard(2, 3, 0)
    with torch.no_grad():
        logp, _ = _step0(model, inst)
    probs = logp.exp()[0]
    assert abs(float(probs.sum()) - 1) <= 1e-6
    assert set(torch.nonzero(probs).ravel().tolist()) == {0, 3}
    assert all(probs[k] == 0 for k in (1, 2, 4, 5))


def test_zero_pointer_weights_give_uniform():
    model = small_model().eval()
    with torch.no_grad():
        model.v.zero_()
        logp, _ = _step0(model, generate_taillard(4, 3, 2))
    probs = logp.exp()[0]
    support = probs[probs > 0]
    assert len(support) == 4
    assert torch.allclose(support, torch.full_like(support, 0.25))


def test_fully_masked_lane_raises():
    model = small_model().eval()
    inst = generate_taillard(1, 1, 0)
    U = instances_to_tensor([inst])
    with torch.no_grad():
        H, h_bar = model.encode(model.embed(U))
        state, inp = model.decoder_start(h_bar)
        masks = init_masks(1, 1, 1)
        masks.advance(np.array([0]))
        with pytest.raises(MaskViolation):
            model.decode_step(state, inp, model.w_ref(H), masks)


def test_rollouts_feasible_and_normalized_every_step():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n, m = rng.integers(1, 6, size=2)
        model = small_model(seed=trial).eval()
        insts = [generate_taillard(int(n), int(m), 100 * trial + b) for b in range(8)]
        with torch.no_grad():
            U = instances_to_tensor(insts)
            H, h_bar = model.encode(model.embed(U))
            state, inp = model.decoder_start(h_bar)
            masks = init_masks(8, int(n), int(m))
            refs = model.w_ref(H)
            gen = torch.Generator().manual_seed(trial)
            for _ in range(int(n * m)):
                logp, state = model.decode_step(state, inp, refs, masks)
                probs = logp.exp()
                assert torch.allclose(probs.sum(1), torch.ones(8), atol=1e-6)
                assert torch.all(probs[~torch.from_numpy(masks.selectable())] == 0)
                sel = torch.multinomial(probs, 1, generator=gen).squeeze(1)
                masks.advance(sel.numpy())
                inp = H[torch.arange(8), sel]
        out = rollout(model, insts, "sample", seed=trial)
        for inst, perm in zip(insts, out.perms):
            assert check_feasible(perm, inst)[0]
        assert torch.all(out.log_prob <= 0)


def test_greedy_deterministic():
    model = small_model().eval()
    insts = [generate_taillard(4, 4, s) for s in range(3)]
    with torch.no_grad():
        a = rollout(model, insts, "greedy")
        b = rollout(model, insts, "greedy")
    assert np.array_equal(a.perms, b.perms)
    assert np.array_equal(a.makespans, b.makespans)


def test_sampling_seeded():
    model = small_model().eval()
    insts = [generate_taillard(4, 4, s) for s in range(3)]
    with torch.no_grad():
        a = rollout(model, insts, "sample", seed=5)
        b = rollout(model, insts, "sample", seed=5)
    assert np.array_equal(a.perms, b.perms)


def test_one_by_one_log_prob_zero():
    model = small_model().eval()
    inst = Instance.from_pairs([[(0, 3)]])
    assert float(log_likelihood(model, [inst], [[0]]).detach()[0]) == 0.0


def test_sampled_log_prob_matches_teacher_forcing():
    model = small_model().eval()
    insts = [generate_taillard(4, 3, s) for s in range(16)]
    with torch.no_grad():
        out = rollout(model, insts, "sample", seed=1)
        forced = log_likelihood(model, insts, out.perms)
    assert torch.allclose(out.log_prob, forced, atol=1e-6)


def test_log_likelihood_rejects_infeasible(table4):
    model = small_model()
    with pytest.raises(FeasibilityError):
        log_likelihood(model, [table4], [[1, 0, 2, 3, 4, 5]])


def test_log_prob_and_grad_weights():
    model = small_model(precision="f64").eval()
    insts = [generate_taillard(2, 2, s) for s in range(3)]
    perms = [[0, 2, 1, 3], [2, 0, 3, 1], [0, 1, 2, 3]]
    w = [0.5, -2.0, 1.0]
    _, g = log_prob_and_grad(model, insts, perms, w)
    total = torch.zeros_like(g)
    for inst, perm, wi in zip(insts, perms, w):
        total += wi * log_prob_and_grad(model, [inst], [perm])[1]
    assert torch.allclose(g, total, atol=1e-10)


def test_gradient_matches_finite_differences_2x2():
    rng = np.random.default_rng(0)
    model = small_model(seed=4, precision="f64")
    inst = generate_taillard(2, 2, 9)
    assert fd_gradient_check(model, inst, [2, 0, 1, 3], 50, rng) <= 1e-4


def test_encoder_parameter_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    model = small_model(seed=2, precision="f64").eval()
    inst = generate_taillard(3, 3, 4)
    # restrict to encoder-layer coordinates
    offsets, names = 0, []
    for name, p in model.named_parameters():
        if name.startswith("layers."):
            names.extend(range(offsets, offsets + p.numel()))
        offsets += p.numel()
    coords = rng.choice(names, size=20, replace=False)
    _, grad = log_prob_and_grad(model, [inst], [[0, 3, 6, 1, 4, 7, 2, 5, 8]])
    theta = flat_params(model)
    for c in coords:
        vals = []
        for sign in (1, -1):
            t = theta.clone()
            t[c] += sign * 1e-5
            set_flat_params(model, t)
            with torch.no_grad():
                vals.append(float(log_likelihood(model, [inst], [[0, 3, 6, 1, 4, 7, 2, 5, 8]])[0]))
        set_flat_params(model, theta)
        fd = (vals[0] - vals[1]) / 2e-5
        assert abs(float(grad[c]) - fd) <= 1e-4 * max(abs(fd), abs(float(grad[c])), 1e-6)


def test_uniform_2x2_trajectory_frequencies():
    # zero pointer vector: uniform over selectable rows at every step
    model = small_model().eval()
    with torch.no_grad():
        model.v.zero_()
    inst = generate_taillard(2, 2, 0)
    N = 60_000
    with torch.no_grad():
        H, _ = model.encode(model.embed(instances_to_tensor([inst])))
        perms, _ = decode(model, H.expand(N, -1, -1), 2, 2, generator=torch.Generator().manual_seed(0))
    uniq, counts = np.unique(perms, axis=0, return_counts=True)
    assert len(uniq) == 6
    # stepwise-uniform choice does not make the 6 lists equally likely; use the exact product
    exact = {}
    for perm in uniq:
        p, nxt = 1.0, [0, 0]
        for k in perm:
            p /= sum(1 for i in range(2) if nxt[i] < 2)
            nxt[k // 2] += 1
        exact[tuple(perm)] = p
    assert math.isclose(sum(exact.values()), 1.0)
    for perm, c in zip(uniq, counts):
        p = exact[tuple(perm)]
        assert abs(c - N * p) <= 3 * math.sqrt(N * p * (1 - p))


def test_serialization_bit_exact(tmp_path):
    model = small_model(seed=5).train()
    insts = [generate_taillard(3, 3, s) for s in range(4)]
    # populate running statistics
    model.embed(instances_to_tensor(insts))
    model.eval()
    save_model(model, tmp_path / "m.ckpt")
    loaded, _, _ = load_model(tmp_path / "m.ckpt")
    with torch.no_grad():
        a = rollout(model, insts, "sample", seed=3)
        b = rollout(loaded, insts, "sample", seed=3)
    assert torch.equal(flat_params(model), flat_params(loaded))
    assert np.array_equal(a.perms, b.perms)
    assert torch.equal(a.log_prob, b.log_prob)
