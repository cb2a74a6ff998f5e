import numpy as np
import pytest

from hierembed.encoder import EmbeddingModel, EncoderConfig
from hierembed.hierarchy import parse_forest

LAB_HIERARCHY = b"parent\tchild\nLP29693-6\tLP158133-1\nLP29693-6\tLP7798-4\n"
LAB_STRINGS = b"code\tstring\nLP29693-6\tLaboratory\nLP158133-1\tHNA\nLP7798-4\tFertility testing\n"

SMALL_ENCODER = EncoderConfig(dim=8, n_buckets=512)


@pytest.fixture
def lab_forest():
    return parse_forest(LAB_HIERARCHY, LAB_STRINGS)


@pytest.fixture
def lab_files(tmp_path):
    h, s = tmp_path / "hierarchy.tsv", tmp_path / "strings.tsv"
    h.write_bytes(LAB_HIERARCHY)
    s.write_bytes(LAB_STRINGS)
    return h, s


@pytest.fixture
def small_model():
    return EmbeddingModel.initialize(SMALL_ENCODER, seed=0, dtype=np.float64)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    lines = test_acceptance.report_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
