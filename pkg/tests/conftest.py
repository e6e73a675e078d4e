import itertools

import pytest

from moldtask.topology import Topology, tx2_like


def brute_places(topo: Topology):
    """Independent enumeration: every (c, w) whose member cores share one
    cluster and whose offset inside that cluster is a multiple of w."""
    owner = {}
    for i, cl in enumerate(topo.clusters):
        for c in range(cl.first_core, cl.first_core + cl.size):
            owner[c] = i
    out = []
    for c, w in itertools.product(range(topo.total_cores), range(1, topo.total_cores + 1)):
        cl = topo.clusters[owner[c]]
        members = range(c, c + w)
        if w not in cl.widths or any(owner.get(m) != owner[c] for m in members):
            continue
        if (c - cl.first_core) % w:
            continue
        out.append((c, w))
    return out


@pytest.fixture
def tx2():
    return tx2_like()
