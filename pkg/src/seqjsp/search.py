"""Per-instance test-time search on top of a policy.

``active_search`` keeps optimizing a private copy of the whole policy on one
instance.  ``eas_emb`` freezes every model weight and instead optimizes a
per-instance copy of the encoder output, so a batch of instances is refined
in parallel.  ``sample_best`` is the no-learning reference: best of plain
samples under the same budget.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .instance import Instance
from .policy import PolicyModel, decode, instances_to_tensor, rollout
from .schedule import GAP_INSERT, list_makespan

__all__ = ["SearchResult", "active_search", "eas_emb", "sample_best"]


@dataclass
class SearchResult:
    best_lists: list[list[int]]
    best_makespans: np.ndarray
    # best-so-far per step and instance, shape [steps + 1, B]; row 0 is the starting point
    history: np.ndarray = field(repr=False)

    @property
    def mean(self) -> float:
        return float(self.best_makespans.mean())


def _generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def active_search(
    model: PolicyModel,
    inst: Instance,
    steps: int,
    *,
    samples: int = 16,
    learning_rate: float = 1e-4,
    grad_clip: float | None = 0.5,
    decay: float = 0.99,
    seed: int = 0,
    build_mode: str = GAP_INSERT,
) -> SearchResult:
    """Fine-tune a copy of ``model`` on ``inst`` and return the best list seen.

    Each step samples ``samples`` lists and applies one REINFORCE/Adam update
    against an exponential moving average of the sampled cost.  The incumbent
    starts from the greedy decode, so ``steps=0`` returns the greedy list.
    Normalization runs with frozen running statistics.
    """
    policy = copy.deepcopy(model)
    policy.eval()
    with torch.no_grad():
        greedy = rollout(policy, [inst], "greedy", build_mode=build_mode)
    best_list, best = greedy.perms[0].tolist(), int(greedy.makespans[0])
    history = [best]
    if steps <= 0:
        return SearchResult([best_list], np.array([best]), np.array(history)[:, None])
    for p in policy.parameters():
        p.requires_grad_(True)
    optimizer = torch.optim.Adam(policy.parameters(), lr=learning_rate)
    gen = _generator(seed)
    U = instances_to_tensor([inst], policy.dtype).expand(samples, -1, -1)
    n, m = inst.shape
    ema = None
    for _ in range(steps):
        H, _ = policy.encode(policy.embed(U))
        perms, logp = decode(policy, H, n, m, mode="sample", generator=gen)
        costs = np.array([list_makespan(inst, perm, build_mode) for perm in perms], dtype=np.float64)
        k = int(costs.argmin())
        if costs[k] < best:
            best, best_list = int(costs[k]), perms[k].tolist()
        history.append(best)
        ema = costs.mean() if ema is None else decay * ema + (1 - decay) * costs.mean()
        adv = torch.as_tensor(costs - ema, dtype=logp.dtype)
        loss = (adv * logp).mean()
        optimizer.zero_grad()
        loss.backward()
        if grad_clip:
            torch.nn.utils.clip_grad_norm_(policy.parameters(), grad_clip)
        optimizer.step()
    return SearchResult([best_list], np.array([best]), np.array(history)[:, None])


def _chunks(size: int, chunk: int):
    for lo in range(0, size, chunk):
        yield slice(lo, min(lo + chunk, size))


def _encode_frozen(model: PolicyModel, instances: Sequence[Instance]) -> torch.Tensor:
    with torch.no_grad():
        U = instances_to_tensor(instances, model.dtype)
        H, _ = model.encode(model.embed(U))
    return H


def _track(best, best_lists, instances, sl, perms, costs, samples, build_mode):
    for b_local, b in enumerate(range(sl.start, sl.stop)):
        block = costs[b_local * samples : (b_local + 1) * samples]
        k = int(block.argmin())
        if block[k] < best[b]:
            best[b] = block[k]
            best_lists[b] = perms[b_local * samples + k].tolist()


def eas_emb(
    model: PolicyModel,
    instances: Sequence[Instance],
    steps: int,
    *,
    samples: int = 16,
    learning_rate: float = 0.01,
    seed: int = 0,
    chunk: int = 8,
    build_mode: str = GAP_INSERT,
) -> SearchResult:
    """Optimize per-instance encoder embeddings with all weights frozen.

    Every step draws ``samples`` lists per instance, uses the per-instance mean
    sampled cost as baseline and takes one Adam step on the embedding leaf.
    The total sampling budget is ``steps * samples`` per instance.  ``chunk``
    instances are decoded together, which bounds autograd memory; it also
    fixes the order in which the sample stream is consumed.
    """
    was_training = model.training
    model.eval()
    flags = [p.requires_grad for p in model.parameters()]
    for p in model.parameters():
        p.requires_grad_(False)
    try:
        B = len(instances)
        n, m = instances[0].shape
        emb = _encode_frozen(model, instances).clone().requires_grad_(True)
        optimizer = torch.optim.Adam([emb], lr=learning_rate)
        gen = _generator(seed)
        best = np.full(B, np.inf)
        best_lists: list[list[int]] = [[] for _ in range(B)]
        history = []
        for _ in range(steps):
            optimizer.zero_grad()
            for sl in _chunks(B, chunk):
                H = emb[sl].repeat_interleave(samples, dim=0)
                perms, logp = decode(model, H, n, m, mode="sample", generator=gen)
                costs = np.array(
                    [list_makespan(instances[sl.start + r // samples], perm, build_mode) for r, perm in enumerate(perms)],
                    dtype=np.float64,
                )
                _track(best, best_lists, instances, sl, perms, costs, samples, build_mode)
                grouped = costs.reshape(-1, samples)
                adv = torch.as_tensor((grouped - grouped.mean(axis=1, keepdims=True)).ravel(), dtype=logp.dtype)
                ((adv * logp).sum() / samples).backward()
            optimizer.step()
            history.append(best.copy())
    finally:
        for p, f in zip(model.parameters(), flags):
            p.requires_grad_(f)
        model.train(was_training)
    return SearchResult(best_lists, best.astype(np.int64), np.array(history) if history else np.zeros((0, B)))


def sample_best(
    model: PolicyModel,
    instances: Sequence[Instance],
    n_samples: int,
    *,
    samples_per_round: int = 16,
    seed: int = 0,
    chunk: int = 8,
    build_mode: str = GAP_INSERT,
) -> SearchResult:
    """Best of ``n_samples`` independent samples per instance (inference mode)."""
    was_training = model.training
    model.eval()
    try:
        B = len(instances)
        n, m = instances[0].shape
        H0 = _encode_frozen(model, instances)
        gen = _generator(seed)
        best = np.full(B, np.inf)
        best_lists: list[list[int]] = [[] for _ in range(B)]
        history = []
        rounds = math.ceil(n_samples / samples_per_round)
        with torch.no_grad():
            for r in range(rounds):
                k = min(samples_per_round, n_samples - r * samples_per_round)
                for sl in _chunks(B, chunk):
                    H = H0[sl].repeat_interleave(k, dim=0)
                    perms, _ = decode(model, H, n, m, mode="sample", generator=gen)
                    costs = np.array(
                        [list_makespan(instances[sl.start + q // k], perm, build_mode) for q, perm in enumerate(perms)],
                        dtype=np.float64,
                    )
                    _track(best, best_lists, instances, sl, perms, costs, k, build_mode)
                history.append(best.copy())
    finally:
        model.train(was_training)
    return SearchResult(best_lists, best.astype(np.int64), np.array(history) if history else np.zeros((0, B)))
