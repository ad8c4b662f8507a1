"""Attention encoder + pointer decoder policy over the rows of an encoded instance.

Pipeline: per-row features ``(i, j)`` and ``(machine, p)`` are batch-normalized
and projected separately, summed, batch-normalized and mapped linearly to
``X``.  ``n_layers`` self-attention blocks turn ``X`` into ``H``; the mean row
``h_bar`` initializes a GRU decoder whose state points back at ``H``.  Scores
of rows that are scheduled or out of job order are masked to ``-inf`` before
the softmax, so every decoded sequence is a feasible dispatch list.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .instance import Instance, encode_instance
from .masking import JSP, MaskViolation, init_masks, mask_scores
from .schedule import GAP_INSERT, FeasibilityError, check_feasible, list_makespan

__all__ = [
    "ModelConfig",
    "PolicyModel",
    "Rollouts",
    "instances_to_tensor",
    "rollout",
    "decode",
    "log_likelihood",
    "log_prob_and_grad",
    "flat_params",
    "set_flat_params",
]

PRECISIONS = {"f32": torch.float32, "f64": torch.float64}


@dataclass
class ModelConfig:
    d_h: int = 128
    n_heads: int = 8
    n_layers: int = 3
    ff_width: int = 512
    score_clip: float | None = None
    precision: str = "f32"
    seed: int = 0

    def errors(self) -> list[str]:
        errs = []
        for name in ("d_h", "n_heads", "n_layers", "ff_width"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                errs.append(f"{name} must be a positive integer")
        if not errs and self.d_h % self.n_heads:
            errs.append(f"d_h={self.d_h} must be divisible by n_heads={self.n_heads}")
        if self.score_clip is not None and not self.score_clip > 0:
            errs.append("score_clip must be positive or None")
        if self.precision not in PRECISIONS:
            errs.append(f"precision must be one of {sorted(PRECISIONS)}")
        return errs

    @property
    def dtype(self) -> torch.dtype:
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        return asdict(self)


def _bn(x: torch.Tensor, bn: nn.BatchNorm1d) -> torch.Tensor:
    # normalize over batch and sequence positions together
    shape = x.shape
    return bn(x.reshape(-1, shape[-1])).reshape(shape)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_h: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d_h // n_heads
        self.w_q = nn.Linear(d_h, d_h, bias=False)
        self.w_k = nn.Linear(d_h, d_h, bias=False)
        self.w_v = nn.Linear(d_h, d_h, bias=False)
        self.w_o = nn.Linear(d_h, d_h, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        N, L, D = x.shape

        def heads(t):
            return t.view(N, L, self.n_heads, self.d_k).transpose(1, 2)

        q, k, v = heads(self.w_q(x)), heads(self.w_k(x)), heads(self.w_v(x))
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.d_k), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(N, L, D)
        return self.w_o(out)


class EncoderLayer(nn.Module):
    def __init__(self, d_h: int, n_heads: int, ff_width: int):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d_h, n_heads)
        self.norm1 = nn.BatchNorm1d(d_h)
        self.ff = nn.Sequential(nn.Linear(d_h, ff_width), nn.ReLU(), nn.Linear(ff_width, d_h))
        self.norm2 = nn.BatchNorm1d(d_h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = _bn(x + self.attn(x), self.norm1)
        return _bn(x + self.ff(x), self.norm2)


class PolicyModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        config = config or ModelConfig()
        errs = config.errors()
        if errs:
            raise ValueError("; ".join(errs))
        self.config = config
        d = config.d_h
        # embedding
        self.norm_ij = nn.BatchNorm1d(2)
        self.embed_ij = nn.Linear(2, d)
        self.norm_mp = nn.BatchNorm1d(2)
        self.embed_mp = nn.Linear(2, d)
        self.norm_sum = nn.BatchNorm1d(d)
        self.post_linear = nn.Linear(d, d)
        # encoder
        self.layers = nn.ModuleList(EncoderLayer(d, config.n_heads, config.ff_width) for _ in range(config.n_layers))
        # decoder
        self.init_state = nn.Linear(d, d)
        self.start_token = nn.Parameter(torch.empty(d))
        self.cell = nn.GRUCell(d, d)
        self.w_ref = nn.Linear(d, d, bias=False)
        self.w_query = nn.Linear(d, d)
        self.v = nn.Parameter(torch.empty(d))
        self.reset_parameters(config.seed)
        self.to(config.dtype)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(self.config.d_h)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)

    @property
    def dtype(self) -> torch.dtype:
        return self.config.dtype

    def embed(self, U: torch.Tensor) -> torch.Tensor:
        """``U``: ``[N, n*m, 4]`` float rows ``[i, j, machine, p]`` -> ``X``."""
        if U.dim() != 3 or U.shape[-1] != 4:
            raise ValueError(f"expected [N, n*m, 4] input, got {tuple(U.shape)}")
        a = self.embed_ij(_bn(U[..., :2], self.norm_ij))
        b = self.embed_mp(_bn(U[..., 2:], self.norm_mp))
        return self.post_linear(_bn(a + b, self.norm_sum))

    def encode(self, X: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        H = X
        for layer in self.layers:
            H = layer(H)
        return H, H.mean(dim=1)

    def decoder_start(self, h_bar: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Initial ``(state, input)`` for a batch."""
        state = self.init_state(h_bar)
        return state, self.start_token.expand_as(state)

    def decode_step(self, state, inp, refs, mask_state) -> tuple[torch.Tensor, torch.Tensor]:
        """One pointer step: returns ``(log pi_t [N, n*m], new state)``.

        ``refs`` is ``w_ref(H)``, precomputed once per decode.
        """
        state = self.cell(inp, state)
        u = torch.tanh(refs + self.w_query(state).unsqueeze(1)) @ self.v
        if self.config.score_clip is not None:
            u = self.config.score_clip * torch.tanh(u)
        u = mask_scores(u, mask_state)
        if torch.isinf(u).all(dim=1).any():
            raise MaskViolation("every row is masked in some lane")
        return torch.log_softmax(u, dim=1), state


def flat_params(model: nn.Module) -> torch.Tensor:
    return torch.nn.utils.parameters_to_vector(model.parameters()).detach().clone()


def set_flat_params(model: nn.Module, theta: torch.Tensor) -> None:
    torch.nn.utils.vector_to_parameters(theta.to(model.dtype), model.parameters())


def instances_to_tensor(instances: Sequence[Instance], dtype=torch.float32) -> torch.Tensor:
    shapes = {inst.shape for inst in instances}
    if len(shapes) != 1:
        raise ValueError(f"all instances in a batch must share (n, m); got {sorted(shapes)}")
    return torch.from_numpy(np.stack([encode_instance(inst) for inst in instances])).to(dtype)


@dataclass
class Rollouts:
    perms: np.ndarray  # [N, n*m] row indices in decode order
    log_prob: torch.Tensor  # [N]; carries a graph when decoded with grad enabled
    makespans: np.ndarray  # [N] int
    mode: str = "sample"

    def __len__(self):
        return len(self.perms)


def decode(
    model: PolicyModel,
    H: torch.Tensor,
    n: int,
    m: int,
    *,
    mode: str = "sample",
    generator: torch.Generator | None = None,
    forced: np.ndarray | None = None,
    problem: str = JSP,
) -> tuple[np.ndarray, torch.Tensor]:
    """Run ``n*m`` decode steps from encoder output ``H``.

    ``mode`` is ``sample`` or ``greedy`` (argmax, lowest row on ties); with
    ``forced`` the given row sequences are replayed instead (teacher forcing).
    Returns ``(rows [N, n*m], summed log-probabilities [N])``.
    """
    N, L, _ = H.shape
    if L != n * m:
        raise ValueError(f"H has {L} rows, expected {n * m}")
    masks = init_masks(N, n, m, problem)
    refs = model.w_ref(H)
    state, inp = model.decoder_start(H.mean(dim=1))
    lanes = torch.arange(N)
    chosen = np.empty((N, L), dtype=np.int64)
    total = H.new_zeros(N)
    for t in range(L):
        logp, state = model.decode_step(state, inp, refs, masks)
        if forced is not None:
            sel = torch.from_numpy(np.ascontiguousarray(forced[:, t]))
        elif mode == "greedy":
            sel = logp.argmax(dim=1)
        elif mode == "sample":
            sel = torch.multinomial(logp.detach().exp(), 1, generator=generator).squeeze(1)
        else:
            raise ValueError(f"unknown decode mode {mode!r}")
        rows = sel.numpy()
        masks.advance(rows)
        chosen[:, t] = rows
        total = total + logp[lanes, sel]
        inp = H[lanes, sel]
    return chosen, total


def _generator(seed: int | None) -> torch.Generator | None:
    return None if seed is None else torch.Generator().manual_seed(int(seed))


def rollout(
    model: PolicyModel,
    instances: Sequence[Instance],
    mode: str = "sample",
    seed: int | None = None,
    *,
    build_mode: str = GAP_INSERT,
    problem: str = JSP,
) -> Rollouts:
    """Decode one dispatch list per instance and evaluate its makespan.

    Gradients are tracked iff torch grad mode is on; the model's train/eval
    state decides which batch-norm statistics are used.
    """
    n, m = instances[0].shape
    U = instances_to_tensor(instances, model.dtype)
    H, _ = model.encode(model.embed(U))
    perms, logp = decode(model, H, n, m, mode=mode, generator=_generator(seed), problem=problem)
    costs = np.array([list_makespan(inst, p, build_mode) for inst, p in zip(instances, perms)], dtype=np.int64)
    return Rollouts(perms, logp, costs, mode)


def log_likelihood(model: PolicyModel, instances: Sequence[Instance], perms) -> torch.Tensor:
    """Teacher-forced ``log P(list | instance)`` per instance, with graph."""
    perms = np.asarray(perms, dtype=np.int64)
    for inst, perm in zip(instances, perms):
        ok, violation = check_feasible(perm, inst)
        if not ok:
            raise FeasibilityError(f"infeasible dispatch list: {violation}", violation)
    n, m = instances[0].shape
    U = instances_to_tensor(instances, model.dtype)
    H, _ = model.encode(model.embed(U))
    _, logp = decode(model, H, n, m, forced=perms)
    return logp


def log_prob_and_grad(model: PolicyModel, instances: Sequence[Instance], perms, weights=None):
    """Per-instance log-likelihood and the gradient of ``sum(weights * logP)``.

    Returns ``(logp [N] detached, grad)`` where ``grad`` is a flat vector in
    ``model.parameters()`` order.  ``weights`` defaults to all ones.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    logp = log_likelihood(model, instances, perms)
    w = torch.ones_like(logp) if weights is None else torch.as_tensor(weights, dtype=logp.dtype)
    grads = torch.autograd.grad((w * logp).sum(), params, allow_unused=True)
    flat = torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)])
    return logp.detach(), flat
