import numpy as np
import pytest
from hypothesis import strategies as st

from stsir.graph import build_graph


@st.composite
def connected_graphs(draw, min_areas=2, max_areas=12):
    """Random island-free graphs: a random spanning path plus extra random edges."""
    n = draw(st.integers(min_areas, max_areas))
    ids = [f"G{k:02d}" for k in range(n)]
    order = draw(st.permutations(range(n)))
    edges = [(ids[order[k]], ids[order[k + 1]]) for k in range(n - 1)]
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    edges += [(ids[a], ids[b]) for a, b in extra if a != b]
    return build_graph(edges, ids)


@pytest.fixture
def path3():
    return build_graph([("A", "B"), ("B", "C")], ["A", "B", "C"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
