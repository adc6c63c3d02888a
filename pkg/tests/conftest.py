import warnings

import numpy as np
import pytest

from pathgnn.graph import build_graph


FIG3_EDGES = [(2, 0, 1), (0, 1, 1), (1, 3, 2), (3, 5, 2), (5, 4, 1), (2, 4, 1), (3, 4, 8)]


@pytest.fixture
def triangle():
    return build_graph(3, [(0, 1, 1), (1, 2, 1), (0, 2, 3)], 0, 2)


@pytest.fixture
def fig3():
    """Six-node instance: direct edge 2-4 costs 1, the detour 2-0-1-3-5-4 costs 7."""
    return build_graph(6, FIG3_EDGES, 2, 4)


def random_graph(rng, n, extra=None, weights=(1.0, 10.0)):
    """Connected random graph with random terminals."""
    from pathgnn.datagen import gen_structure

    factor = rng.uniform(0.0, 1.5) if extra is None else extra
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        topo = gen_structure(rng, n, factor)
    w = rng.uniform(*weights, size=len(topo))
    s, d = rng.choice(n, size=2, replace=False)
    return build_graph(n, [(u, v, x) for (u, v), x in zip(topo, w)], int(s), int(d))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
