"""Exact optimum for tiny instances by depth-first search over dispatch lists.

The search walks legal decode trajectories (the same masks the decoder uses),
builds the partial schedule incrementally and cuts a branch once a lower bound
on its completion reaches the incumbent.

Only lists whose replayed start times are non-decreasing (ties in increasing
row order) are expanded.  This loses nothing: sorting any schedule's
operations by start and replaying never delays an operation, and repeating
that reaches a list that replays to itself with sorted starts.  A finished
search is therefore a certificate of optimality in either builder mode.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance
from .masking import init_masks, step_update, enumerate_trajectories
from .rules import RuleKind, run_pdr
from .schedule import APPEND, GAP_INSERT, MODES, list_makespan

__all__ = ["OracleResult", "optimal_makespan", "enumerate_optimum", "gap", "DEFAULT_NODE_BUDGET"]

DEFAULT_NODE_BUDGET = 5_000_000


@dataclass
class OracleResult:
    optimal_makespan: int
    optimal_list: list[int]
    explored: int
    certified: bool
    leaves: int = 0
    mode: str = GAP_INSERT


def gap(value: float, optimum: float) -> float:
    """Relative excess ``value / optimum - 1``."""
    if not optimum > 0:
        raise ValueError(f"optimum must be positive, got {optimum}")
    return value / optimum - 1.0


class _BudgetExhausted(Exception):
    pass


@dataclass
class _Search:
    inst: Instance
    mode: str
    budget: int
    best: int = 0
    best_list: list[int] = field(default_factory=list)
    explored: int = 0
    leaves: int = 0

    def run(self) -> None:
        inst = self.inst
        n, m = inst.shape
        self.machines = inst.machines.tolist()
        self.times = inst.times.tolist()
        self.job_ready = [0] * n
        self.nxt = [0] * n
        self.rem_work = [sum(r) for r in self.times]
        self.m_starts: list[list[int]] = [[] for _ in range(m)]
        self.m_ends: list[list[int]] = [[] for _ in range(m)]
        self.horizon = [0] * m
        self.state = init_masks(1, n, m)
        self.path: list[int] = []
        self.last_start, self.last_row = 0, -1
        self._dfs(0)

    def _bound(self, cur_max: int) -> int:
        n, m = self.inst.shape
        lb = cur_max
        heads_min = [None] * m
        load = [0] * m
        for i in range(n):
            t = self.job_ready[i]
            lb = max(lb, t + self.rem_work[i])
            for j in range(self.nxt[i], m):
                mach = self.machines[i][j]
                if heads_min[mach] is None or t < heads_min[mach]:
                    heads_min[mach] = t
                load[mach] += self.times[i][j]
                t += self.times[i][j]
        for mach in range(m):
            if heads_min[mach] is None:
                continue
            start = heads_min[mach]
            if self.mode == APPEND:
                start = max(start, self.horizon[mach])
            lb = max(lb, start + load[mach])
        return lb

    def _place(self, i: int) -> tuple[int, int, int]:
        j = self.nxt[i]
        mach = self.machines[i][j]
        p = self.times[i][j]
        ready = self.job_ready[i]
        if self.mode == APPEND:
            t = max(ready, self.horizon[mach])
            undo = self.horizon[mach]
            self.horizon[mach] = t + p
        else:
            starts, ends = self.m_starts[mach], self.m_ends[mach]
            t = ready
            idx = bisect.bisect_right(ends, t)
            for a, b in zip(starts[idx:], ends[idx:]):
                if t + p <= a:
                    break
                t = max(t, b)
            undo = bisect.bisect_left(starts, t)
            starts.insert(undo, t)
            ends.insert(undo, t + p)
        return t, undo, ready

    def _unplace(self, i: int, undo: int, ready: int) -> None:
        mach = self.machines[i][self.nxt[i]]
        if self.mode == APPEND:
            self.horizon[mach] = undo
        else:
            del self.m_starts[mach][undo]
            del self.m_ends[mach][undo]
        self.job_ready[i] = ready

    def _dfs(self, cur_max: int) -> None:
        n, m = self.inst.shape
        if len(self.path) == n * m:
            self.leaves += 1
            if cur_max < self.best:
                self.best = cur_max
                self.best_list = list(self.path)
            return
        for p in np.flatnonzero(self.state.selectable()[0]).tolist():
            self.explored += 1
            if self.explored > self.budget:
                raise _BudgetExhausted
            i = p // m
            t, undo, ready = self._place(i)
            if t < self.last_start or (t == self.last_start and p < self.last_row):
                self._unplace(i, undo, ready)
                continue
            p_time = self.times[i][self.nxt[i]]
            self.job_ready[i] = t + p_time
            self.nxt[i] += 1
            self.rem_work[i] -= p_time
            saved_mask = self.state.mask[0].copy()
            step_update(self.state, 0, p)
            self.path.append(p)
            new_max = max(cur_max, t + p_time)
            prev = self.last_start, self.last_row
            self.last_start, self.last_row = t, p
            if self._bound(new_max) < self.best:
                self._dfs(new_max)
            self.last_start, self.last_row = prev
            self.path.pop()
            self.state.sched[0, p] = False
            self.state.mask[0] = saved_mask
            self.rem_work[i] += p_time
            self.nxt[i] -= 1
            self._unplace(i, undo, ready)


def optimal_makespan(
    inst: Instance,
    node_budget: int = DEFAULT_NODE_BUDGET,
    mode: str = GAP_INSERT,
    incumbent: list[int] | None = None,
) -> OracleResult:
    """Branch-and-bound optimum; ``certified`` is False if the budget ran out.

    The incumbent starts from the best priority rule (or ``incumbent``), so an
    uncertified result is still a feasible list.
    """
    if node_budget <= 0:
        raise ValueError("node_budget must be positive")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    seeds = [run_pdr(inst, r) for r in RuleKind]
    if incumbent is not None:
        seeds.append(list(incumbent))
    start = min(seeds, key=lambda perm: list_makespan(inst, perm, mode))
    search = _Search(inst, mode, node_budget)
    # +1 so the search still records an optimal list equal to the seed value
    search.best = list_makespan(inst, start, mode) + 1
    search.best_list = list(start)
    certified = True
    try:
        search.run()
    except _BudgetExhausted:
        certified = False
    best_list = search.best_list
    return OracleResult(
        optimal_makespan=list_makespan(inst, best_list, mode),
        optimal_list=best_list,
        explored=min(search.explored, node_budget),
        certified=certified,
        leaves=search.leaves,
        mode=mode,
    )


def enumerate_optimum(inst: Instance, mode: str = GAP_INSERT) -> tuple[int, list[int], int]:
    """Plain exhaustive enumeration: ``(optimum, first optimal list, lists seen)``."""
    best, best_list, count = None, None, 0
    for perm in enumerate_trajectories(*inst.shape):
        count += 1
        c = list_makespan(inst, perm, mode)
        if best is None or c < best:
            best, best_list = c, perm
    return best, best_list, count
