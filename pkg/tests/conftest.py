"""Shared fixtures for the FMD-analysis test suite"""
import numpy as np
import pytest

from components.fmd_model import dyadic_rate
from components.network_data import RateAssignment, degree_stats, save_edge_list, synthetic_graph

TINY_EDGES = """\
# source target timestamp
% konect-style comment
10 20 5
20 10 3
10 10 4
30 10 1

"""


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep the caller's FMD_* variables out of every test"""
    monkeypatch.delenv("FMD_CONFIG_FILE", raising=False)
    monkeypatch.delenv("FMD_OUTPUT_DIR", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_edge_file(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text(TINY_EDGES)
    return str(path)


@pytest.fixture
def small_graph():
    """50 users, 500 messages, no self-loops"""
    return synthetic_graph(50, 500, np.random.default_rng(7))


@pytest.fixture
def small_stats(small_graph):
    return degree_stats(small_graph)


@pytest.fixture
def small_edge_file(tmp_path, small_graph):
    path = tmp_path / "small-graph.txt"
    save_edge_list(small_graph, str(path))
    return str(path)


@pytest.fixture
def uniform_rates(small_graph):
    def build(l: int) -> RateAssignment:
        return RateAssignment.uniform(small_graph.user_count, dyadic_rate(l))
    return build
