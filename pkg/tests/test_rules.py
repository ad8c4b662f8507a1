import numpy as np
import pytest

from seqjsp.instance import generate_taillard
from seqjsp.oracle import optimal_makespan
from seqjsp.rules import RuleKind, rule_key, run_pdr
from seqjsp.schedule import APPEND, GAP_INSERT, check_feasible, list_makespan, perm_to_ops


def test_spt_table4(table4):
    perm = run_pdr(table4, RuleKind.SPT)
    assert perm_to_ops(perm, 3) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    assert list_makespan(table4, perm, APPEND) == 33


def test_mwkr_table4(table4):
    perm = run_pdr(table4, RuleKind.MWKR)
    assert perm_to_ops(perm, 3) == [(1, 0), (0, 0), (0, 1), (1, 1), (1, 2), (0, 2)]
    assert list_makespan(table4, perm, APPEND) == 18
    assert list_makespan(table4, perm, GAP_INSERT) == 18


@pytest.mark.parametrize("rule", list(RuleKind))
def test_single_job_identity(rule):
    inst = generate_taillard(1, 5, seed=4)
    assert run_pdr(inst, rule) == [0, 1, 2, 3, 4]


def test_rule_keys_table4(table4):
    assert rule_key(table4, 1, 0, RuleKind.MWKR) == 17
    assert rule_key(table4, 0, 0, RuleKind.MWKR) == 16
    assert rule_key(table4, 0, 0, RuleKind.MOPNR) == 3
    assert rule_key(table4, 1, 0, RuleKind.MOPNR) == 3
    assert rule_key(table4, 0, 0, RuleKind.FDD) == pytest.approx(4 / 16)
    assert rule_key(table4, 1, 1, RuleKind.FDD) == pytest.approx((7 + 3) / 10)
    assert rule_key(table4, 1, 2, RuleKind.SPT) == 7


def test_rule_key_requires_unscheduled_op(table4):
    with pytest.raises(ValueError):
        rule_key(table4, 0, 3, RuleKind.SPT)


def test_parse_names():
    assert RuleKind.parse("mwkr") is RuleKind.MWKR
    with pytest.raises(ValueError):
        RuleKind.parse("LPT")


@pytest.mark.parametrize("rule", list(RuleKind))
def test_pdr_feasible_and_deterministic(rule):
    rng = np.random.default_rng(0)
    for s in range(1000):
        n, m = (int(x) for x in rng.integers(1, 9, size=2))
        inst = generate_taillard(n, m, s)
        perm = run_pdr(inst, rule)
        assert check_feasible(perm, inst)[0]
        if s < 50:
            assert run_pdr(inst, rule) == perm


def test_pdr_never_beats_oracle():
    for s in range(40):
        inst = generate_taillard(3, 3, s)
        opt = optimal_makespan(inst)
        assert opt.certified
        for rule in RuleKind:
            assert list_makespan(inst, run_pdr(inst, rule)) >= opt.optimal_makespan
