"""Dispatch-list feasibility, list scheduling and Gantt output.

A dispatch list is a permutation of row indices ``k = m*i + j`` of the row
encoding.  It is feasible when every job's operations appear in position
order.  :func:`build_schedule` turns a feasible list into start times by placing
each operation, in list order, at the earliest time its machine is free and its
job predecessor has finished.
"""

from __future__ import annotations

import bisect
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .instance import Instance

__all__ = [
    "GAP_INSERT",
    "APPEND",
    "MODES",
    "FeasibilityError",
    "Violation",
    "Schedule",
    "check_feasible",
    "build_schedule",
    "makespan",
    "list_makespan",
    "render_gantt_svg",
    "render_gantt_text",
    "schedule_to_csv",
    "ops_to_perm",
    "perm_to_ops",
]

GAP_INSERT = "gap-insert"
APPEND = "append"
MODES = (GAP_INSERT, APPEND)


class FeasibilityError(ValueError):
    def __init__(self, message: str, violation: "Violation | None" = None):
        super().__init__(message)
        self.violation = violation


@dataclass(frozen=True)
class Violation:
    """Operation ``(job, later_pos)`` sits at list index ``s`` before
    ``(job, earlier_pos)`` at list index ``r``."""

    job: int
    later_pos: int
    earlier_pos: int
    s: int
    r: int

    def __str__(self):
        return (
            f"job {self.job}: position {self.later_pos} (list index {self.s}) "
            f"precedes position {self.earlier_pos} (list index {self.r})"
        )


@dataclass(frozen=True, eq=False)
class Schedule:
    start: np.ndarray  # [n, m]
    end: np.ndarray  # [n, m]
    machines: np.ndarray  # [n, m]

    @property
    def makespan(self) -> int:
        return int(self.end[:, -1].max())

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in ((self.start, other.start), (self.end, other.end), (self.machines, other.machines))
        )

    def machine_rows(self) -> list[list[tuple[int, int, int, int]]]:
        """Per machine, ``(start, end, job, pos)`` tuples sorted by start."""
        n, m = self.start.shape
        rows: list[list[tuple[int, int, int, int]]] = [[] for _ in range(m)]
        for i in range(n):
            for j in range(m):
                rows[self.machines[i, j]].append((int(self.start[i, j]), int(self.end[i, j]), i, j))
        for r in rows:
            r.sort()
        return rows


def _as_perm(perm: Sequence[int], size: int) -> np.ndarray:
    arr = np.asarray(perm, dtype=np.int64).ravel()
    if arr.size != size or not np.array_equal(np.sort(arr), np.arange(size)):
        raise FeasibilityError(f"dispatch list must be a permutation of 0..{size - 1}")
    return arr


def ops_to_perm(ops: Sequence[tuple[int, int]], m: int) -> list[int]:
    return [m * i + j for i, j in ops]


def perm_to_ops(perm: Sequence[int], m: int) -> list[tuple[int, int]]:
    return [divmod(int(k), m) for k in perm]


def check_feasible(perm: Sequence[int], inst: Instance) -> tuple[bool, Violation | None]:
    """Return ``(True, None)`` or ``(False, first_violation)``.

    Raises :class:`FeasibilityError` if ``perm`` is not a permutation.
    """
    n, m = inst.shape
    arr = _as_perm(perm, n * m)
    where = np.empty(n * m, dtype=np.int64)
    where[arr] = np.arange(n * m)
    nxt = [0] * n
    for s, k in enumerate(arr.tolist()):
        i, j = divmod(k, m)
        if j != nxt[i]:
            earlier = nxt[i]
            return False, Violation(i, j, earlier, s, int(where[m * i + earlier]))
        nxt[i] += 1
    return True, None


def build_schedule(inst: Instance, perm: Sequence[int], mode: str = GAP_INSERT, *, check: bool = True) -> Schedule:
    """Place operations in list order.

    ``gap-insert`` lets an operation fill an idle interval between operations
    already on its machine; ``append`` only starts at or after the machine's
    last end time.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    n, m = inst.shape
    if check:
        ok, violation = check_feasible(perm, inst)
        if not ok:
            raise FeasibilityError(f"infeasible dispatch list: {violation}", violation)
    machines = inst.machines
    times = inst.times
    start = np.zeros((n, m), dtype=np.int64)
    end = np.zeros((n, m), dtype=np.int64)
    job_ready = [0] * n
    if mode == APPEND:
        horizon = [0] * m
        for k in perm:
            i, j = divmod(int(k), m)
            mach = machines[i, j]
            t = max(job_ready[i], horizon[mach])
            e = t + int(times[i, j])
            start[i, j], end[i, j] = t, e
            horizon[mach] = job_ready[i] = e
    else:
        # per machine: sorted busy starts and matching ends
        starts: list[list[int]] = [[] for _ in range(m)]
        ends: list[list[int]] = [[] for _ in range(m)]
        for k in perm:
            i, j = divmod(int(k), m)
            mach = machines[i, j]
            p = int(times[i, j])
            t = _earliest_fit(starts[mach], ends[mach], job_ready[i], p)
            pos = bisect.bisect_left(starts[mach], t)
            starts[mach].insert(pos, t)
            ends[mach].insert(pos, t + p)
            start[i, j], end[i, j] = t, t + p
            job_ready[i] = t + p
    return Schedule(start, end, machines.copy())


def _earliest_fit(starts: list[int], ends: list[int], ready: int, p: int) -> int:
    t = ready
    # skip intervals that finish before we can start
    idx = bisect.bisect_right(ends, t)
    for a, b in zip(starts[idx:], ends[idx:]):
        if t + p <= a:
            return t
        t = max(t, b)
    return t


def makespan(s: Schedule) -> int:
    return s.makespan


def list_makespan(inst: Instance, perm: Sequence[int], mode: str = GAP_INSERT) -> int:
    """Makespan of a list already known to be feasible (skips the check)."""
    return build_schedule(inst, perm, mode, check=False).makespan


# ---------------------------------------------------------------------------
# output

_PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)


def render_gantt_svg(s: Schedule, *, unit: float | None = None, row_height: int = 28, title: str | None = None) -> str:
    """SVG Gantt chart, one row per machine, one labeled rect per operation."""
    n, m = s.start.shape
    horizon = max(s.makespan, 1)
    if unit is None:
        unit = max(1.0, min(40.0, 800.0 / horizon))
    left, top = 48, 24 if title else 8
    width = left + horizon * unit + 16
    height = top + m * row_height + 28
    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height}" '
        f'font-family="monospace" font-size="11" data-makespan="{s.makespan}">\n'
    )
    if title:
        out.write(f'<text x="{left}" y="16">{title}</text>\n')
    for mach, row in enumerate(s.machine_rows()):
        y = top + mach * row_height
        out.write(f'<text x="4" y="{y + row_height * 0.65:.1f}">M{mach}</text>\n')
        for a, b, i, j in row:
            # width from rounded endpoints so adjacent boxes stay disjoint on paper
            x = round(left + a * unit, 3)
            w = round(round(left + b * unit, 3) - x, 3)
            colour = _PALETTE[i % len(_PALETTE)]
            out.write(
                f'<rect class="op" x="{x:g}" y="{y + 2}" width="{w:g}" height="{row_height - 4}" '
                f'fill="{colour}" stroke="#222" data-machine="{mach}" data-job="{i}" data-pos="{j}" '
                f'data-start="{a}" data-end="{b}"/>\n'
            )
            out.write(f'<text x="{x + 2:.2f}" y="{y + row_height * 0.65:.1f}">{i},{j}</text>\n')
    axis_y = top + m * row_height + 14
    out.write(
        f'<line x1="{left}" y1="{axis_y - 8}" x2="{left + horizon * unit:.2f}" y2="{axis_y - 8}" stroke="#000"/>\n'
    )
    out.write(f'<text x="{left}" y="{axis_y + 6}">0</text>\n')
    out.write(f'<text x="{left + horizon * unit - 8:.2f}" y="{axis_y + 6}">{s.makespan}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()


def render_gantt_text(s: Schedule, width: int = 100) -> str:
    """Aligned text chart; each cell is ``scale`` time units, labeled by job index."""
    n, m = s.start.shape
    horizon = s.makespan
    scale = max(1, -(-horizon // width))
    cells = -(-horizon // scale)
    lines = [f"makespan {horizon}, 1 char = {scale} time unit{'s' if scale > 1 else ''}"]
    for mach, row in enumerate(s.machine_rows()):
        buf = ["."] * cells
        for a, b, i, _ in row:
            label = _job_char(i)
            for c in range(a // scale, -(-b // scale)):
                buf[c] = label
        lines.append(f"M{mach:<3}|{''.join(buf)}|")
    return "\n".join(lines) + "\n"


def _job_char(i: int) -> str:
    alphabet = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return alphabet[i % len(alphabet)]


def schedule_to_csv(s: Schedule) -> str:
    n, m = s.start.shape
    lines = ["job,pos,machine,start,end"]
    for i in range(n):
        for j in range(m):
            lines.append(f"{i},{j},{s.machines[i, j]},{s.start[i, j]},{s.end[i, j]}")
    return "\n".join(lines) + "\n"
