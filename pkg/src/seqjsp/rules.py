"""Priority dispatching rules producing dispatch lists.

At every step the candidates are each unfinished job's next operation; the
candidate with the best key is appended to the list.  Ties go to the lowest
job index.
"""

from __future__ import annotations

import enum

from .instance import Instance

__all__ = ["RuleKind", "rule_key", "run_pdr", "MINIMIZE"]


class RuleKind(str, enum.Enum):
    SPT = "SPT"  # shortest processing time
    MWKR = "MWKR"  # most work remaining
    MOPNR = "MOPNR"  # most operations remaining
    FDD = "FDD"  # flow due date / work remaining

    @classmethod
    def parse(cls, name: str) -> "RuleKind":
        try:
            return cls(name.upper())
        except ValueError:
            raise ValueError(f"unknown rule {name!r}; choose from {[r.value for r in cls]}") from None


# True: smaller key wins; False: larger key wins
MINIMIZE = {RuleKind.SPT: True, RuleKind.MWKR: False, RuleKind.MOPNR: False, RuleKind.FDD: True}


def rule_key(inst: Instance, job: int, next_pos: int, rule: RuleKind) -> float:
    """Priority of job ``job`` whose next unscheduled operation is ``next_pos``.

    SPT: processing time of that operation (min).  MWKR: remaining work of the
    job (max).  MOPNR: remaining operation count (max).  FDD: prefix work up to
    and including the operation divided by remaining work (min).
    """
    m = inst.n_machines
    if not 0 <= next_pos < m:
        raise ValueError(f"job {job} has no unscheduled operation at position {next_pos}")
    row = inst.times[job]
    if rule is RuleKind.SPT:
        return int(row[next_pos])
    if rule is RuleKind.MWKR:
        return int(row[next_pos:].sum())
    if rule is RuleKind.MOPNR:
        return m - next_pos
    if rule is RuleKind.FDD:
        return float(row[: next_pos + 1].sum()) / float(row[next_pos:].sum())
    raise ValueError(f"unknown rule {rule!r}")


def run_pdr(inst: Instance, rule: RuleKind | str) -> list[int]:
    rule = RuleKind.parse(rule) if isinstance(rule, str) else rule
    n, m = inst.shape
    minimize = MINIMIZE[rule]
    nxt = [0] * n
    perm: list[int] = []
    for _ in range(n * m):
        best_job, best_key = -1, None
        for i in range(n):
            if nxt[i] == m:
                continue
            key = rule_key(inst, i, nxt[i], rule)
            if best_key is None or (key < best_key if minimize else key > best_key):
                best_job, best_key = i, key
        perm.append(m * best_job + nxt[best_job])
        nxt[best_job] += 1
    return perm
