"""Job-shop instances, their row encoding, generators and the text file format.

An ``n x m`` instance holds, for every job ``i`` and position ``j``, the machine
the operation runs on and its integer processing time.  The row encoding is the
``(n*m) x 4`` integer matrix with row ``k = m*i + j`` equal to
``[i, j, machine, proc_time]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Instance",
    "InstanceFormatError",
    "EncodingError",
    "encode_instance",
    "decode_instance",
    "generate_taillard",
    "generate_flowshop",
    "read_instance",
    "write_instance",
    "read_dataset",
    "write_dataset",
    "is_feasible_perm",
]

TAILLARD_LOW = 1
TAILLARD_HIGH = 99


class InstanceFormatError(ValueError):
    """Raised when instance text cannot be parsed; carries 1-based line/column."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class EncodingError(ValueError):
    """Raised for malformed row encodings; ``row`` is the offending row index."""

    def __init__(self, message: str, row: int | None = None):
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)
        self.row = row


@dataclass(frozen=True, eq=False)
class Instance:
    """Immutable ``n x m`` job-shop instance.

    ``machines[i, j]`` and ``times[i, j]`` describe operation ``j`` of job ``i``.
    """

    machines: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        machines = np.array(self.machines, dtype=np.int64, copy=True)
        times = np.array(self.times, dtype=np.int64, copy=True)
        if machines.ndim != 2 or machines.shape != times.shape:
            raise ValueError(
                f"machines and times must be equal-shape 2-D arrays, got {machines.shape} and {times.shape}"
            )
        n, m = machines.shape
        if n < 1 or m < 1:
            raise ValueError("instance needs at least one job and one machine")
        expected = np.arange(m)
        for i in range(n):
            if not np.array_equal(np.sort(machines[i]), expected):
                raise ValueError(f"job {i} must visit every machine 0..{m - 1} exactly once, got {machines[i].tolist()}")
        if (times < 1).any():
            i, j = np.argwhere(times < 1)[0]
            raise ValueError(f"processing time of operation ({i}, {j}) must be >= 1, got {times[i, j]}")
        machines.flags.writeable = False
        times.flags.writeable = False
        object.__setattr__(self, "machines", machines)
        object.__setattr__(self, "times", times)

    @classmethod
    def from_pairs(cls, rows: Sequence[Sequence[tuple[int, int]]]) -> "Instance":
        """Build from ``rows[i][j] = (machine, proc_time)``."""
        arr = np.asarray(rows, dtype=np.int64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError("expected a jobs x machines x 2 nested sequence")
        return cls(arr[:, :, 0], arr[:, :, 1])

    @property
    def n_jobs(self) -> int:
        return self.machines.shape[0]

    @property
    def n_machines(self) -> int:
        return self.machines.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.machines.shape

    @property
    def n_ops(self) -> int:
        return self.machines.size

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return np.array_equal(self.machines, other.machines) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash((self.shape, self.machines.tobytes(), self.times.tobytes()))

    def __repr__(self):
        return f"Instance(n_jobs={self.n_jobs}, n_machines={self.n_machines})"

    def job_lower_bound(self) -> int:
        return int(self.times.sum(axis=1).max())

    def machine_lower_bound(self) -> int:
        load = np.bincount(self.machines.ravel(), weights=self.times.ravel(), minlength=self.n_machines)
        return int(load.max())

    def lower_bound(self) -> int:
        """Max of the longest job and the most loaded machine."""
        return max(self.job_lower_bound(), self.machine_lower_bound())


def encode_instance(inst: Instance) -> np.ndarray:
    n, m = inst.shape
    rows = np.empty((n * m, 4), dtype=np.int64)
    rows[:, 0] = np.repeat(np.arange(n), m)
    rows[:, 1] = np.tile(np.arange(m), n)
    rows[:, 2] = inst.machines.ravel()
    rows[:, 3] = inst.times.ravel()
    return rows


def decode_instance(seq: np.ndarray, n_machines: int | None = None) -> Instance:
    """Inverse of :func:`encode_instance`.

    ``n_machines`` is inferred from the largest position index when omitted.
    """
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[1] != 4 or seq.shape[0] == 0:
        raise EncodingError(f"expected a non-empty (n*m) x 4 matrix, got shape {seq.shape}")
    if not np.issubdtype(seq.dtype, np.integer):
        if not np.array_equal(seq, np.round(seq)):
            raise EncodingError("features must be integers")
        seq = seq.astype(np.int64)
    m = int(seq[:, 1].max()) + 1 if n_machines is None else n_machines
    total = seq.shape[0]
    if total % m:
        raise EncodingError(f"{total} rows is not a multiple of m={m}")
    n = total // m
    for k, (i, j, mach, p) in enumerate(seq.tolist()):
        if i != k // m or j != k % m:
            raise EncodingError(f"expected job/position ({k // m}, {k % m}), found ({i}, {j})", row=k)
        if not 0 <= mach < m:
            raise EncodingError(f"machine {mach} outside [0, {m})", row=k)
        if p < 1:
            raise EncodingError(f"processing time {p} must be >= 1", row=k)
    machines = seq[:, 2].reshape(n, m)
    for i in range(n):
        if len(set(machines[i].tolist())) != m:
            raise EncodingError(f"job {i} repeats a machine", row=i * m)
    return Instance(machines, seq[:, 3].reshape(n, m))


def _job_streams(seed: int, n: int) -> list[np.random.Generator]:
    # one independent stream per job so job i's data does not depend on n
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_taillard(n: int, m: int, seed: int) -> Instance:
    """Random instance: U{1..99} times, a uniform machine permutation per job.

    Job ``i`` draws from the ``i``-th child of ``SeedSequence(seed)``: first its
    ``m`` processing times, then its machine permutation.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    machines = np.empty((n, m), dtype=np.int64)
    times = np.empty((n, m), dtype=np.int64)
    for i, rng in enumerate(_job_streams(seed, n)):
        times[i] = rng.integers(TAILLARD_LOW, TAILLARD_HIGH + 1, size=m)
        machines[i] = rng.permutation(m)
    return Instance(machines, times)


def generate_flowshop(n: int, m: int, seed: int) -> Instance:
    """Like :func:`generate_taillard` but every job visits machines 0..m-1 in order."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    times = np.empty((n, m), dtype=np.int64)
    for i, rng in enumerate(_job_streams(seed, n)):
        times[i] = rng.integers(TAILLARD_LOW, TAILLARD_HIGH + 1, size=m)
    return Instance(np.tile(np.arange(m), (n, 1)), times)


def is_feasible_perm(perm: Sequence[int], n: int, m: int) -> bool:
    nxt = [0] * n
    for row in perm:
        i, j = divmod(int(row), m)
        if nxt[i] != j:
            return False
        nxt[i] += 1
    return sum(nxt) == n * m


# ---------------------------------------------------------------------------
# text format


def write_instance(inst: Instance) -> str:
    lines = [f"{inst.n_jobs} {inst.n_machines}"]
    for i in range(inst.n_jobs):
        lines.append(" ".join(f"{mach} {p}" for mach, p in zip(inst.machines[i], inst.times[i])))
    return "\n".join(lines) + "\n"


class _Tokens:
    """Whitespace tokenizer that remembers line/column of every token."""

    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.line_no = 0
        self.last_content = 0

    def next_line(self) -> tuple[int, list[tuple[str, int]]]:
        while self.line_no < len(self.lines):
            raw = self.lines[self.line_no]
            self.line_no += 1
            toks = []
            col = 0
            for tok in raw.split():
                col = raw.index(tok, col)
                toks.append((tok, col + 1))
                col += len(tok)
            if toks:
                self.last_content = self.line_no
                return self.line_no, toks
        raise EOFError

    def remaining(self) -> bool:
        return any(line.strip() for line in self.lines[self.line_no:])


def _to_int(tok: str, line: int, col: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise InstanceFormatError(f"expected an integer, found {tok!r}", line, col) from None


def _parse_one(tokens: _Tokens) -> Instance:
    try:
        line, toks = tokens.next_line()
    except EOFError:
        raise InstanceFormatError("missing 'n m' header", tokens.last_content + 1) from None
    if len(toks) != 2:
        raise InstanceFormatError(f"header must hold two integers 'n m', found {len(toks)} fields", line)
    n, m = (_to_int(t, line, c) for t, c in toks)
    if n < 1 or m < 1:
        raise InstanceFormatError(f"n and m must be positive, got {n} {m}", line)
    machines = np.empty((n, m), dtype=np.int64)
    times = np.empty((n, m), dtype=np.int64)
    for i in range(n):
        try:
            line, toks = tokens.next_line()
        except EOFError:
            raise InstanceFormatError(f"expected {n} job lines, found {i}", tokens.last_content + 1) from None
        if len(toks) != 2 * m:
            col = toks[min(len(toks), 2 * m) - 1][1] if toks else 1
            raise InstanceFormatError(f"job {i} needs {2 * m} integers, found {len(toks)}", line, col)
        vals = [_to_int(t, line, c) for t, c in toks]
        for j in range(m):
            mach, p = vals[2 * j], vals[2 * j + 1]
            if not 0 <= mach < m:
                raise InstanceFormatError(f"machine {mach} outside [0, {m})", line, toks[2 * j][1])
            if p < 1:
                raise InstanceFormatError(f"processing time {p} must be >= 1", line, toks[2 * j + 1][1])
            machines[i, j], times[i, j] = mach, p
        if len(set(machines[i].tolist())) != m:
            raise InstanceFormatError(f"job {i} must use each machine exactly once", line)
    return Instance(machines, times)


def read_instance(text: str) -> Instance:
    tokens = _Tokens(text)
    inst = _parse_one(tokens)
    if tokens.remaining():
        raise InstanceFormatError("unexpected trailing content", tokens.line_no + 1)
    return inst


def write_dataset(instances: Iterable[Instance]) -> str:
    instances = list(instances)
    return f"{len(instances)}\n" + "".join(write_instance(inst) for inst in instances)


def read_dataset(text: str) -> list[Instance]:
    tokens = _Tokens(text)
    try:
        line, toks = tokens.next_line()
    except EOFError:
        raise InstanceFormatError("missing instance count header", 1) from None
    if len(toks) != 1:
        raise InstanceFormatError("dataset header must be a single integer count", line)
    count = _to_int(toks[0][0], line, toks[0][1])
    if count < 0:
        raise InstanceFormatError("instance count must be >= 0", line)
    out = [_parse_one(tokens) for _ in range(count)]
    if tokens.remaining():
        raise InstanceFormatError("content after the last declared instance", tokens.line_no + 1)
    return out
