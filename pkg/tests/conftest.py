import numpy as np
import pytest

from gmanifold.graph import AlignmentGraph
from gmanifold.groups import GroupId, compose_params, haar_params, inverse_params


def random_graph(group, n, density, rng, weights=True):
    """Connected-ish random alignment graph: a ring plus random chords."""
    group = GroupId.parse(group)
    I, J = np.triu_indices(n, 1)
    keep = rng.random(len(I)) < density
    ring = (J == I + 1) | ((I == 0) & (J == n - 1))
    keep |= ring
    I, J = I[keep], J[keep]
    w = rng.uniform(0.1, 1.0, len(I)) if weights else np.ones(len(I))
    align = haar_params(group, rng, size=len(I))
    return AlignmentGraph(n, group, I, J, w, align)


def gauge(graph, rng):
    """The same graph seen in random per-node frames: g_ij -> h_i g_ij h_j^-1.

    Returns the new graph and the frames ``h``.
    """
    h = haar_params(graph.group, rng, size=graph.n)
    align = compose_params(graph.group, h[graph.i], compose_params(graph.group, graph.align, inverse_params(graph.group, h[graph.j])))
    return AlignmentGraph(graph.n, graph.group, graph.i, graph.j, graph.w, align), h


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
