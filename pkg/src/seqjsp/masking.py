"""Action masks for decoding dispatch lists.

Two boolean matrices per batch lane track decoding progress: ``sched[k, p]``
is set once row ``p`` has been emitted and ``mask[k, p]`` is set while row
``p`` is not yet the next operation of its job.  A row is selectable iff
neither flag is set.  In open-shop mode the order constraint is dropped and
only ``sched`` is used (experimental).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import torch

__all__ = [
    "JSP",
    "OSP",
    "MaskViolation",
    "MaskState",
    "init_masks",
    "step_update",
    "mask_scores",
    "enumerate_trajectories",
    "count_trajectories",
    "NEG_FALLBACK",
]

JSP = "jsp"
OSP = "osp"
NEG_FALLBACK = -1e30


class MaskViolation(RuntimeError):
    """A non-selectable row was chosen; indicates a decoder bug."""


@dataclass
class MaskState:
    sched: np.ndarray  # [batch, n*m] bool
    mask: np.ndarray  # [batch, n*m] bool
    n: int
    m: int
    mode: str = JSP

    @property
    def batch(self) -> int:
        return self.sched.shape[0]

    def selectable(self) -> np.ndarray:
        if self.mode == OSP:
            return ~self.sched
        return ~(self.sched | self.mask)

    def steps_taken(self) -> np.ndarray:
        return self.sched.sum(axis=1)

    def copy(self) -> "MaskState":
        return MaskState(self.sched.copy(), self.mask.copy(), self.n, self.m, self.mode)

    def advance(self, rows) -> None:
        """Select ``rows[k]`` in every lane ``k`` at once (in place)."""
        rows = np.asarray(rows, dtype=np.int64)
        lanes = np.arange(self.batch)
        if not self.selectable()[lanes, rows].all():
            bad = int(np.flatnonzero(~self.selectable()[lanes, rows])[0])
            raise MaskViolation(f"lane {bad}: row {int(rows[bad])} is not selectable")
        self.sched[lanes, rows] = True
        if self.mode == JSP:
            has_next = (rows % self.m) < self.m - 1
            self.mask[lanes[has_next], rows[has_next] + 1] = False


def init_masks(batch: int, n: int, m: int, mode: str = JSP) -> MaskState:
    if batch < 1 or n < 1 or m < 1:
        raise ValueError("batch, n and m must be >= 1")
    if mode not in (JSP, OSP):
        raise ValueError(f"unknown mode {mode!r}")
    sched = np.zeros((batch, n * m), dtype=bool)
    if mode == JSP:
        mask = np.tile(np.arange(n * m) % m != 0, (batch, 1))
    else:
        mask = np.zeros((batch, n * m), dtype=bool)
    return MaskState(sched, mask, n, m, mode)


def step_update(state: MaskState, k: int, p: int) -> MaskState:
    """Mark row ``p`` of lane ``k`` scheduled and unmask its job successor (in place)."""
    if not state.selectable()[k, p]:
        raise MaskViolation(f"lane {k}: row {p} is not selectable")
    state.sched[k, p] = True
    # never unmask across a job boundary
    if state.mode == JSP and p % state.m < state.m - 1:
        state.mask[k, p + 1] = False
    return state


def mask_scores(scores, state: MaskState):
    """Replace scores of non-selectable rows with -inf.

    Accepts a torch tensor or numpy array of shape ``[batch, n*m]``.  Float
    formats without infinities are not used here; :data:`NEG_FALLBACK` is the
    documented substitute for them.
    """
    keep = state.selectable()
    if isinstance(scores, torch.Tensor):
        keep_t = torch.from_numpy(keep).to(scores.device)
        return scores.masked_fill(~keep_t, -math.inf)
    scores = np.asarray(scores, dtype=float)
    return np.where(keep, scores, -np.inf)


def enumerate_trajectories(n: int, m: int, mode: str = JSP) -> Iterator[list[int]]:
    """Yield every complete legal decode trajectory, depth first, rows ascending."""
    state = init_masks(1, n, m, mode)
    path: list[int] = []

    def rec():
        if len(path) == n * m:
            yield list(path)
            return
        for p in np.flatnonzero(state.selectable()[0]).tolist():
            saved = state.mask[0].copy()
            step_update(state, 0, p)
            path.append(p)
            yield from rec()
            path.pop()
            state.sched[0, p] = False
            state.mask[0] = saved

    yield from rec()


def count_trajectories(n: int, m: int, mode: str = JSP) -> int:
    return sum(1 for _ in enumerate_trajectories(n, m, mode))
