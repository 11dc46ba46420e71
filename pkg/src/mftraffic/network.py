"""The fixed five-link, three-path network o -> {v1, v2} -> d."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NegativePreference, NonPositiveGeometry, ValidationError

LINKS = ("e1", "e2", "e3", "e4", "e5")
PATHS = ("p1", "p2", "p3")
NODES = ("o", "v1", "v2", "d")

# (tail, head) per link
TOPOLOGY = (("o", "v1"), ("o", "v2"), ("v1", "v2"), ("v1", "d"), ("v2", "d"))
# link indices along each path, in travel order
PATH_LINKS = ((0, 3), (1, 4), (0, 2, 4))

E1, E2, E3, E4, E5 = range(5)


@dataclass(frozen=True)
class Network:
    lengths: np.ndarray
    capacities: np.ndarray

    @cached_property
    def incidence(self) -> np.ndarray:
        A = np.zeros((5, 3))
        for p, links in enumerate(PATH_LINKS):
            A[list(links), p] = 1.0
        A.flags.writeable = False
        return A

    def path_length(self, p: int) -> float:
        return float(sum(self.lengths[e] for e in PATH_LINKS[p]))

    @cached_property
    def penalty_lengths(self) -> np.ndarray:
        """Length charged (times alpha) when an agent is still at the tail of e at T."""
        l = self.lengths
        out = np.array([
            min(l[E1] + l[E4], l[E1] + l[E3] + l[E5]),
            l[E2] + l[E5],
            l[E3] + l[E5],
            l[E4],
            l[E5],
        ])
        out.flags.writeable = False
        return out


def build_network(lengths, capacities) -> Network:
    lengths = np.array(lengths, dtype=float)
    capacities = np.array(capacities, dtype=float)
    if lengths.shape != (5,) or capacities.shape != (5,):
        raise ValidationError("network needs 5 lengths and 5 capacities", "network_shape")
    for name, arr in (("length", lengths), ("capacity", capacities)):
        bad = ~(np.isfinite(arr) & (arr > 0))
        if bad.any():
            e = int(np.argmax(bad))
            raise NonPositiveGeometry(f"{name} of {LINKS[e]} is {arr[e]}, must be > 0")
    lengths.flags.writeable = False
    capacities.flags.writeable = False
    check_topology()
    return Network(lengths, capacities)


def check_topology(edges=TOPOLOGY, origin="o", dest="d") -> None:
    """Acyclic, everything reachable from the origin, destination reachable from everything."""
    nodes = sorted({n for edge in edges for n in edge})
    succ = {n: [h for t, h in edges if t == n] for n in nodes}
    pred = {n: [t for t, h in edges if h == n] for n in nodes}

    indeg = {n: len(pred[n]) for n in nodes}
    queue = [n for n in nodes if indeg[n] == 0]
    seen = 0
    while queue:
        n = queue.pop()
        seen += 1
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if seen != len(nodes):
        raise ValidationError("network contains an oriented cycle", "acyclic")

    def reach(start, adj):
        stack, found = [start], {start}
        while stack:
            for m in adj[stack.pop()]:
                if m not in found:
                    found.add(m)
                    stack.append(m)
        return found

    if reach(origin, succ) != set(nodes):
        raise ValidationError("some node is unreachable from the origin", "reachability")
    if reach(dest, pred) != set(nodes):
        raise ValidationError("the destination is unreachable from some node", "reachability")


def path_flow(network: Network, z) -> np.ndarray:
    """Link flows y = A z induced by path preferences z."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise NegativePreference(f"path preferences must be >= 0, got {z}")
    return network.incidence @ z


def remaining_shortest_length(network: Network, e: int) -> float:
    if e not in range(5):
        raise ValidationError(f"unknown link index {e}", "link_id")
    return float(network.penalty_lengths[e])
