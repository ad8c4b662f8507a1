"""REINFORCE training with a greedy-rollout baseline.

Each batch samples one dispatch list per instance from the current policy and
decodes the same instances greedily with a frozen baseline policy.  The loss
``mean((C_sample - C_baseline) * log P(list))`` is minimized with Adam after
clipping the global gradient norm.  At the end of every epoch the baseline is
replaced by the current policy when a paired one-sided t-test on a held-out
set says the policy is better.

All randomness (training data, sampling, baseline evaluation sets) is derived
from ``TrainerConfig.seed`` so equal configs give bit-identical runs.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import load_model_arrays, model_arrays, read_container, write_container
from .instance import Instance, generate_taillard
from .policy import ModelConfig, PolicyModel, rollout
from .schedule import GAP_INSERT, MODES
from .stats import ttest_decision

log = logging.getLogger(__name__)

__all__ = [
    "TrainerConfig",
    "TrainingError",
    "BaselineState",
    "EpochMetrics",
    "derive_seed",
    "taillard_set",
    "greedy_costs",
    "create_baseline",
    "reinforce_loss",
    "reinforce_epoch",
    "ttest_update",
    "Trainer",
]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    learning_rate: float = 1e-5
    grad_clip: float = 0.5
    batch_size: int = 64
    epoch_size: int = 2000
    n_epochs: int = 10
    baseline_eval_size: int = 1000
    ttest_alpha: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    gamma: float = 1.0
    n_jobs: int = 6
    n_machines: int = 6
    build_mode: str = GAP_INSERT
    log_every: int = 50
    eval_batch_size: int = 256

    def errors(self) -> list[str]:
        errs = []
        if not self.learning_rate > 0:
            errs.append("learning_rate must be > 0")
        if not self.grad_clip > 0:
            errs.append("grad_clip must be > 0")
        if not 0 < self.ttest_alpha < 1:
            errs.append("ttest_alpha must lie in (0, 1)")
        for name in ("batch_size", "epoch_size", "baseline_eval_size", "n_jobs", "n_machines", "log_every", "eval_batch_size"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                errs.append(f"{name} must be a positive integer")
        if not isinstance(self.n_epochs, int) or self.n_epochs < 0:
            errs.append("n_epochs must be a non-negative integer")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            errs.append("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            errs.append("eps must be > 0")
        if self.gamma != 1.0:
            errs.append("gamma is fixed at 1 (undiscounted terminal reward)")
        if self.build_mode not in MODES:
            errs.append(f"build_mode must be one of {MODES}")
        return errs

    def validate(self) -> None:
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from ints and strings."""
    words = [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) & 0xFFFFFFFF for p in parts]
    lo, hi = np.random.SeedSequence(words).generate_state(2, np.uint32).tolist()
    return ((hi << 32) | lo) >> 1


def taillard_set(n: int, m: int, count: int, *seed_parts) -> list[Instance]:
    base = derive_seed(*seed_parts)
    return [generate_taillard(n, m, derive_seed(base, k)) for k in range(count)]


def greedy_costs(model: PolicyModel, instances: Sequence[Instance], batch_size: int = 256, build_mode: str = GAP_INSERT) -> np.ndarray:
    """Greedy makespans in inference mode; restores the model's train flag."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with torch.no_grad():
            for lo in range(0, len(instances), batch_size):
                out.append(rollout(model, instances[lo : lo + batch_size], "greedy", build_mode=build_mode).makespans)
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@dataclass
class BaselineState:
    model: PolicyModel
    eval_set: list[Instance]
    eval_costs: np.ndarray
    generation: int = 0


def _freeze(model: PolicyModel) -> PolicyModel:
    frozen = copy.deepcopy(model)
    frozen.eval()
    for p in frozen.parameters():
        p.requires_grad_(False)
    return frozen


def create_baseline(model: PolicyModel, config: TrainerConfig, generation: int = 0) -> BaselineState:
    frozen = _freeze(model)
    eval_set = taillard_set(config.n_jobs, config.n_machines, config.baseline_eval_size, config.seed, "baseline", generation)
    costs = greedy_costs(frozen, eval_set, config.eval_batch_size, config.build_mode)
    return BaselineState(frozen, eval_set, costs, generation)


def reinforce_loss(logp: torch.Tensor, costs, baseline_costs) -> torch.Tensor:
    """``mean((C - b) * log P)``; its gradient is the REINFORCE estimate."""
    adv = torch.as_tensor(np.asarray(costs, dtype=np.float64) - np.asarray(baseline_costs, dtype=np.float64), dtype=logp.dtype)
    return (adv * logp).mean()


@dataclass
class EpochMetrics:
    epoch: int
    mean_cost: float
    mean_baseline: float
    batch_costs: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)


def reinforce_epoch(
    model: PolicyModel,
    baseline: BaselineState,
    optimizer: torch.optim.Optimizer,
    config: TrainerConfig,
    dataset: Sequence[Instance],
    epoch: int,
    on_log: Callable[[int, float, float], None] | None = None,
) -> EpochMetrics:
    model.train()
    costs_all, base_all = [], []
    metrics = EpochMetrics(epoch, math.nan, math.nan)
    window: list[float] = []
    for b, lo in enumerate(range(0, len(dataset), config.batch_size)):
        batch = dataset[lo : lo + config.batch_size]
        sample = rollout(model, batch, "sample", seed=derive_seed(config.seed, "sample", epoch, b), build_mode=config.build_mode)
        base = greedy_costs(baseline.model, batch, config.eval_batch_size, config.build_mode)
        loss = reinforce_loss(sample.log_prob, sample.makespans, base)
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at epoch {epoch} batch {b}: loss={loss.item()}, "
                f"log_prob range=({sample.log_prob.min().item()}, {sample.log_prob.max().item()})"
            )
        optimizer.zero_grad()
        loss.backward()
        norm = float(torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip))
        if not math.isfinite(norm):
            bad = [n for n, p in model.named_parameters() if p.grad is not None and not torch.isfinite(p.grad).all()]
            raise TrainingError(f"non-finite gradient at epoch {epoch} batch {b} in {bad[:5]}")
        optimizer.step()
        mean_cost = float(sample.makespans.mean())
        costs_all.append(sample.makespans)
        base_all.append(base)
        metrics.batch_costs.append(mean_cost)
        metrics.grad_norms.append(norm)
        window.append(mean_cost)
        if (b + 1) % config.log_every == 0:
            if on_log:
                on_log(b + 1, float(np.mean(window)), norm)
            window = []
    if window and on_log:
        on_log(len(metrics.batch_costs), float(np.mean(window)), metrics.grad_norms[-1])
    metrics.mean_cost = float(np.concatenate(costs_all).mean()) if costs_all else math.nan
    metrics.mean_baseline = float(np.concatenate(base_all).mean()) if base_all else math.nan
    return metrics


def ttest_update(model: PolicyModel, baseline: BaselineState, config: TrainerConfig) -> tuple[bool, float]:
    """Replace the baseline by ``model`` if it is significantly better.

    Returns ``(replaced, p_value)``.  On replacement the evaluation set is
    resampled.
    """
    cand = greedy_costs(model, baseline.eval_set, config.eval_batch_size, config.build_mode)
    replace, p = ttest_decision(cand, baseline.eval_costs, config.ttest_alpha)
    log.info("baseline t-test: candidate %.3f vs baseline %.3f, p=%.3g", cand.mean(), baseline.eval_costs.mean(), p)
    if replace:
        fresh = create_baseline(model, config, baseline.generation + 1)
        baseline.model, baseline.eval_set, baseline.eval_costs = fresh.model, fresh.eval_set, fresh.eval_costs
        baseline.generation = fresh.generation
    return replace, p


def _adam(model: PolicyModel, config: TrainerConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.eps
    )


class Trainer:
    """Runs epochs, validation, logging and per-epoch checkpoints.

    ``dataset`` fixes the training instances; otherwise a fresh Taillard set of
    ``epoch_size`` instances is drawn every epoch.
    """

    LOG_FIELDS = ["epoch", "batch", "mean_cost", "grad_norm", "baseline_replaced"]

    def __init__(
        self,
        model: PolicyModel,
        config: TrainerConfig,
        *,
        dataset: Sequence[Instance] | None = None,
        val_set: Sequence[Instance] | None = None,
        out_dir=None,
        config_hash: str = "",
    ):
        config.validate()
        self.model = model
        self.config = config
        self.dataset = list(dataset) if dataset is not None else None
        self.val_set = list(val_set) if val_set is not None else None
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.config_hash = config_hash
        self.optimizer = _adam(model, config)
        self.baseline = create_baseline(model, config)
        self.epoch = 0
        self.history: list[dict] = []
        self.val_curve: list[float] = []
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def epoch_data(self, epoch: int) -> list[Instance]:
        c = self.config
        if self.dataset is None:
            return taillard_set(c.n_jobs, c.n_machines, c.epoch_size, c.seed, "train", epoch)
        order = np.random.default_rng(derive_seed(c.seed, "shuffle", epoch)).permutation(len(self.dataset))
        return [self.dataset[k] for k in order[: c.epoch_size]]

    def validate(self) -> float:
        if not self.val_set:
            return math.nan
        return float(greedy_costs(self.model, self.val_set, self.config.eval_batch_size, self.config.build_mode).mean())

    def _log_row(self, row: dict) -> None:
        self.history.append(row)
        if self.out_dir is None:
            return
        path = self.out_dir / "train_log.csv"
        new = not path.exists()
        with open(path, "a", newline="") as f:
            w = csv.DictWriter(f, fieldnames=self.LOG_FIELDS)
            if new:
                w.writeheader()
            w.writerow(row)

    def run(self, n_epochs: int | None = None) -> list[float]:
        """Train until ``n_epochs`` (default: config) epochs are done.

        Returns the validation curve, whose first entry is the untrained value.
        """
        target = self.config.n_epochs if n_epochs is None else n_epochs
        if not self.val_curve:
            self.val_curve.append(self.validate())
        while self.epoch < target:
            e = self.epoch

            def on_log(batch, cost, norm, e=e):
                self._log_row({"epoch": e, "batch": batch, "mean_cost": f"{cost:.4f}", "grad_norm": f"{norm:.6g}", "baseline_replaced": ""})

            metrics = reinforce_epoch(self.model, self.baseline, self.optimizer, self.config, self.epoch_data(e), e, on_log)
            replaced, p = ttest_update(self.model, self.baseline, self.config)
            self._log_row(
                {
                    "epoch": e,
                    "batch": len(metrics.batch_costs),
                    "mean_cost": f"{metrics.mean_cost:.4f}",
                    "grad_norm": f"{metrics.grad_norms[-1]:.6g}" if metrics.grad_norms else "",
                    "baseline_replaced": int(replaced),
                }
            )
            self.epoch += 1
            self.val_curve.append(self.validate())
            log.info("epoch %d: train cost %.2f, val greedy %.2f, baseline replaced=%s", e, metrics.mean_cost, self.val_curve[-1], replaced)
            if self.out_dir is not None:
                self.save(self.out_dir / f"epoch_{e:03d}.ckpt")
                self.save(self.out_dir / "last.ckpt")
                self.write_summary()
        return self.val_curve

    def write_summary(self) -> None:
        summary = {
            "epochs_done": self.epoch,
            "config_hash": self.config_hash,
            "trainer_config": asdict(self.config),
            "model_config": self.model.config.to_dict(),
            "val_greedy_mean": self.val_curve,
            "baseline_generation": self.baseline.generation,
        }
        (self.out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    # -- checkpointing -----------------------------------------------------

    def save(self, path) -> None:
        arrays, layout = model_arrays(self.model)
        base_arrays, _ = model_arrays(self.baseline.model, prefix="baseline/")
        arrays.update(base_arrays)
        params = list(self.model.parameters())
        state = self.optimizer.state
        if all(p in state for p in params):
            arrays["adam/exp_avg"] = torch.cat([state[p]["exp_avg"].reshape(-1) for p in params]).numpy()
            arrays["adam/exp_avg_sq"] = torch.cat([state[p]["exp_avg_sq"].reshape(-1) for p in params]).numpy()
            arrays["adam/step"] = np.array([float(state[params[0]]["step"])])
        meta = {
            "epoch": self.epoch,
            "trainer_config": asdict(self.config),
            "baseline_generation": self.baseline.generation,
            "val_curve": self.val_curve,
            "config_hash": self.config_hash,
        }
        write_container(path, arrays, {"model_config": self.model.config.to_dict(), "param_layout": layout, "meta": meta})

    @classmethod
    def resume(cls, path, **kwargs) -> "Trainer":
        header, arrays = read_container(path)
        meta = header["meta"]
        model = PolicyModel(ModelConfig(**header["model_config"]))
        load_model_arrays(model, arrays)
        known = {f.name for f in fields(TrainerConfig)}
        config = TrainerConfig(**{k: v for k, v in meta["trainer_config"].items() if k in known})
        if "config" in kwargs:
            config = kwargs.pop("config")
        trainer = cls(model, config, **kwargs)
        load_model_arrays(trainer.baseline.model, arrays, prefix="baseline/")
        gen = meta["baseline_generation"]
        trainer.baseline.generation = gen
        trainer.baseline.eval_set = taillard_set(config.n_jobs, config.n_machines, config.baseline_eval_size, config.seed, "baseline", gen)
        trainer.baseline.eval_costs = greedy_costs(trainer.baseline.model, trainer.baseline.eval_set, config.eval_batch_size, config.build_mode)
        if "adam/exp_avg" in arrays:
            step = float(arrays["adam/step"][0])
            m_flat = torch.from_numpy(arrays["adam/exp_avg"])
            v_flat = torch.from_numpy(arrays["adam/exp_avg_sq"])
            offset = 0
            for p in model.parameters():
                k = p.numel()
                trainer.optimizer.state[p] = {
                    "step": torch.tensor(step),
                    "exp_avg": m_flat[offset : offset + k].view_as(p).to(p.dtype).clone(),
                    "exp_avg_sq": v_flat[offset : offset + k].view_as(p).to(p.dtype).clone(),
                }
                offset += k
        trainer.epoch = meta["epoch"]
        trainer.val_curve = list(meta.get("val_curve", []))
        return trainer
