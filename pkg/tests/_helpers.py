"""Shared hypothesis strategies."""
import numpy as np
from hypothesis import strategies as st

from dynsolve.model import SourceGraph


@st.composite
def random_graphs(draw, min_p=1, max_p=8):
    p = draw(st.integers(min_p, max_p))
    pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    dists = draw(st.lists(st.floats(0.1, 10.0), min_size=len(pairs), max_size=len(pairs)))
    edges = [(i, j, d) for (i, j), m, d in zip(pairs, mask, dists) if m]
    pos = np.arange(3 * p, dtype=float).reshape(p, 3)
    return SourceGraph(pos, np.array(edges, dtype=float).reshape(-1, 3))


seeds = st.integers(0, 2**32 - 1)
