"""Distributed K-means over device positions (or label distributions).

Each iteration assigns every non-head device, then moves each head to its
cluster's medoid:

1. join the nearest head within range;
2. otherwise join the cluster of the nearest in-range device that already
   has one (devices are swept in id order, so adoption can chain);
3. otherwise become a new head. A device with no neighbours at all always
   ends up here; so does the lowest-id device of a connected group that
   contains no head, which is what lets the group be adopted in step 2.

Ties in any argmin go to the lowest device id. A head that attracted no
members although it has neighbours is moved to a random non-head device.
Iteration stops when the head set is unchanged or after ``max_iterations``;
the returned clusters are always the ones formed around the heads that
were used for that last assignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import emd, emd_matrix, label_distribution
from .errors import RejectedInput

GEOGRAPHIC = "geographic"
EMD = "emd"

RULE_HEAD = "head"
RULE_NEAREST_HEAD = "nearest_head"
RULE_NEIGHBOUR = "neighbour"
RULE_NEW_HEAD = "new_head"


@dataclass(frozen=True)
class ClusteringConfig:
    k_init: int = 4
    max_iterations: int = 5
    criterion: str = GEOGRAPHIC

    def __post_init__(self):
        if self.k_init < 1 or self.max_iterations < 1:
            raise RejectedInput("k_init and max_iterations must be positive")
        if self.criterion not in (GEOGRAPHIC, EMD):
            raise RejectedInput(f"unknown clustering criterion {self.criterion!r}")


@dataclass(frozen=True)
class ClusterAssignment:
    cluster_id: int
    head: int
    members: frozenset
    # member id -> (rule, via id); via is the head or adopted neighbour
    admission: dict = field(default_factory=dict, compare=False)


class Clustering(list):
    """List of ``ClusterAssignment`` with the iteration count attached."""

    iterations: int = 0

    def cluster_of(self) -> dict:
        return {m: c.cluster_id for c in self for m in c.members}

    @property
    def heads(self) -> list:
        return [c.head for c in self]


def head_stability(prev_heads, new_heads) -> bool:
    return set(prev_heads) == set(new_heads)


def _assign(ids, adj, dist, heads):
    n = len(ids)
    heads = set(heads)
    owner = {h: h for h in heads}
    admission = {h: (RULE_HEAD, h) for h in heads}
    for i in range(n):
        if i in heads:
            continue
        near = [h for h in heads if adj[i, h]]
        if near:
            h = min(near, key=lambda j: (dist[i, j], ids[j]))
            owner[i] = h
            admission[i] = (RULE_NEAREST_HEAD, h)

    pending = [i for i in range(n) if i not in owner]
    while pending:
        progressed = False
        for i in pending:
            seen = [k for k in np.flatnonzero(adj[i]) if k in owner]
            if seen:
                k = min(seen, key=lambda j: (dist[i, j], ids[j]))
                owner[i] = owner[k]
                admission[i] = (RULE_NEIGHBOUR, k)
                progressed = True
        pending = [i for i in pending if i not in owner]
        if pending and not progressed:
            i = pending.pop(0)
            heads.add(i)
            owner[i] = i
            admission[i] = (RULE_NEW_HEAD, i)
    return heads, owner, admission


def _groups(owner):
    groups: dict[int, list[int]] = {}
    for i in sorted(owner):
        groups.setdefault(owner[i], []).append(i)
    return groups


def _dk_means(ids, adj, dist, medoid, k_init, max_iterations, rng, initial_heads=None):
    n = len(ids)
    if n == 0:
        raise RejectedInput("clustering needs at least one device")
    if initial_heads is not None:
        pos = {d: i for i, d in enumerate(ids)}
        heads = {pos[h] for h in initial_heads}
    else:
        k = min(k_init, n)
        heads = {int(i) for i in rng.choice(n, size=k, replace=False)}

    iterations = 0
    while True:
        iterations += 1
        heads, owner, admission = _assign(ids, adj, dist, heads)
        groups = _groups(owner)

        new_heads = {}
        empty = []
        for h, members in groups.items():
            if len(members) == 1 and adj[h].any():
                empty.append(h)
            else:
                new_heads[h] = medoid(members)
        taken = set(heads) | set(new_heads.values())
        for h in empty:
            free = [i for i in range(n) if i not in taken]
            if free:
                choice = int(free[rng.integers(len(free))])
                new_heads[h] = choice
                taken.add(choice)
            else:
                new_heads[h] = h

        if head_stability(heads, new_heads.values()) or iterations >= max_iterations:
            break
        heads = set(new_heads.values())

    out = Clustering()
    for cid, h in enumerate(sorted(groups, key=lambda j: ids[j])):
        members = groups[h]
        out.append(ClusterAssignment(
            cluster_id=cid,
            head=ids[h],
            members=frozenset(ids[m] for m in members),
            admission={ids[m]: (admission[m][0], ids[admission[m][1]]) for m in members},
        ))
    out.iterations = iterations
    return out


def _graph_arrays(devices, graph):
    ordered = sorted(devices, key=lambda d: d.id)
    ids = [d.id for d in ordered]
    idx = [graph.index_of(i) for i in ids]
    adj = graph.adjacency[np.ix_(idx, idx)]
    return ordered, ids, adj


def dk_means(devices, graph, cfg: ClusteringConfig, seed, initial_heads=None) -> Clustering:
    """Geographic DK-means; ``seed`` may be an int or a ``numpy`` Generator."""
    ordered, ids, adj = _graph_arrays(devices, graph)
    pos = np.array([d.position for d in ordered])
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2))

    def medoid(members):
        centre = pos[members].mean(axis=0)
        d = np.sqrt(((pos[members] - centre) ** 2).sum(axis=1))
        return members[int(np.argmin(d))]

    rng = np.random.default_rng(seed)
    return _dk_means(ids, adj, dist, medoid, cfg.k_init, cfg.max_iterations, rng, initial_heads)


def dk_means_emd(devices, graph, cfg: ClusteringConfig, seed, initial_heads=None) -> Clustering:
    """DK-means with EMD between label distributions as the distance.

    Reachability is still geometric: only in-range devices are candidates.
    """
    ordered, ids, adj = _graph_arrays(devices, graph)
    dists = np.array([label_distribution(d.shard) for d in ordered])
    dist = emd_matrix(dists)

    def medoid(members):
        centre = dists[members].mean(axis=0)
        d = [emd(dists[m], centre) for m in members]
        return members[int(np.argmin(d))]

    rng = np.random.default_rng(seed)
    return _dk_means(ids, adj, dist, medoid, cfg.k_init, cfg.max_iterations, rng, initial_heads)


def cluster(devices, graph, cfg: ClusteringConfig, seed) -> Clustering:
    if cfg.criterion == EMD:
        return dk_means_emd(devices, graph, cfg, seed)
    return dk_means(devices, graph, cfg, seed)


def component_count(adjacency) -> int:
    """Connected components of an undirected adjacency matrix."""
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    count = 0
    for start in range(n):
        if seen[start]:
            continue
        count += 1
        stack = [start]
        seen[start] = True
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i] & ~seen):
                seen[j] = True
                stack.append(j)
    return count
