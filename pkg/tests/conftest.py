import pytest
import torch

from seqjsp.instance import Instance, read_instance

TABLE1_TEXT = "3 4\n0 4 2 2 1 6 3 2\n0 4 3 5 2 7 1 8\n2 6 0 4 1 3 3 1\n"

# the worked dispatch list for the 3x4 instance, as (job, position)
TABLE1_LIST_OPS = [(1, 0), (0, 0), (2, 0), (1, 1), (0, 1), (2, 1), (0, 2), (2, 2), (1, 2), (2, 3), (0, 3), (1, 3)]
TABLE1_LIST = [4 * i + j for i, j in TABLE1_LIST_OPS]

TABLE4_PAIRS = [[(1, 4), (2, 7), (0, 5)], [(0, 7), (1, 3), (2, 7)]]


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def table1():
    return read_instance(TABLE1_TEXT)


@pytest.fixture
def table1_list():
    return list(TABLE1_LIST)


@pytest.fixture
def table4():
    return Instance.from_pairs(TABLE4_PAIRS)


# acceptance criteria report one line each at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
