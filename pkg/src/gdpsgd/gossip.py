"""Bilayer 1-to-1 gossip rounds with cumulative FedAvg aggregation.

A round clusters the devices, trains locally, then runs ``intra_rounds``
gossip iterations restricted to same-cluster links followed by
``inter_rounds`` iterations on links that cross clusters.

In cumulative mode every device keeps a running ``(w_sum, n_sum)`` seeded
with its own model. Within an iteration matched partners swap their
*current* aggregate (``w_sum / n_sum`` tagged with ``n_sum`` samples), and
each folds the received vector in. Sending the running aggregate rather
than the original model lets information travel more than one hop per
phase; for two devices it still ends at the exact sample-weighted mean.
Fixed-alpha mode instead applies ``x_i <- a x_i + (1 - a) x_j`` at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import clustering as clust
from .errors import EmptyAccumulatorError, PairingViolation, RejectedInput, ZeroWeightError
from .model import ParamVector, TrainingConfig, train_local
from .sim import Channel, FieldConfig, TopologyGraph, snapshot_topology, step_mobility

CUMULATIVE_FEDAVG = "cumulative_fedavg"
FIXED_ALPHA = "fixed_alpha"

INTRA = "intra"
INTER = "inter"


@dataclass(frozen=True)
class GossipConfig:
    intra_rounds: int = 3
    inter_rounds: int = 2
    mixing_mode: str = CUMULATIVE_FEDAVG
    alpha: float = 0.5
    inter_heads_only: bool = False
    # move devices and re-snapshot the topology before every gossip iteration
    move_during_gossip: bool = False

    def __post_init__(self):
        if self.intra_rounds < 1 or self.inter_rounds < 1:
            raise RejectedInput("gossip round counts must be positive")
        if self.mixing_mode not in (CUMULATIVE_FEDAVG, FIXED_ALPHA):
            raise RejectedInput(f"unknown mixing mode {self.mixing_mode!r}")
        if self.mixing_mode == FIXED_ALPHA and not 0.0 < self.alpha < 1.0:
            raise RejectedInput("alpha must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class Accumulator:
    w_sum: np.ndarray | None = None
    n_sum: int = 0


def accumulate(acc: Accumulator, incoming: ParamVector) -> Accumulator:
    if incoming.sample_count <= 0:
        raise ZeroWeightError("cannot accumulate a model trained on zero samples")
    contribution = incoming.values * incoming.sample_count
    if acc.w_sum is None:
        return Accumulator(contribution, incoming.sample_count)
    if acc.w_sum.shape != contribution.shape:
        raise RejectedInput("vector length mismatch in accumulate")
    return Accumulator(acc.w_sum + contribution, acc.n_sum + incoming.sample_count)


def finalise(acc: Accumulator) -> ParamVector:
    if acc.n_sum == 0 or acc.w_sum is None:
        raise EmptyAccumulatorError("finalise called on an empty accumulator")
    return ParamVector(acc.w_sum / acc.n_sum, acc.n_sum)


def weighted_mean(models) -> ParamVector:
    """Sample-weighted mean, folded in the given order through the accumulator."""
    acc = Accumulator()
    for m in models:
        acc = accumulate(acc, m)
    return finalise(acc)


def mix_fixed_alpha(x_i, x_j, alpha: float):
    """``alpha * x_i + (1 - alpha) * x_j``; keeps ``x_i``'s sample count for ParamVectors."""
    if not 0.0 < alpha < 1.0:
        raise RejectedInput("alpha must lie strictly inside (0, 1)")
    if isinstance(x_i, ParamVector):
        other = x_j.values if isinstance(x_j, ParamVector) else np.asarray(x_j, dtype=np.float64)
        if other.shape != x_i.values.shape:
            raise RejectedInput("vector length mismatch in mix")
        return ParamVector(alpha * x_i.values + (1.0 - alpha) * other, x_i.sample_count)
    a = np.asarray(x_i, dtype=np.float64)
    b = np.asarray(x_j, dtype=np.float64)
    if a.shape != b.shape:
        raise RejectedInput("vector length mismatch in mix")
    return alpha * a + (1.0 - alpha) * b


def _eligible(layer, a, b, cluster_of, heads):
    if layer == INTRA:
        return cluster_of[a] == cluster_of[b]
    if cluster_of[a] == cluster_of[b]:
        return False
    return heads is None or (a in heads and b in heads)


def pair_devices(active, graph: TopologyGraph, layer: str, cluster_of: dict, contacted: dict,
                 rng: np.random.Generator, heads=None) -> list[tuple[int, int]]:
    """Random maximal matching on eligible topology edges.

    Devices propose in a seeded random order. Each unmatched proposer picks
    uniformly among its unmatched eligible neighbours, restricted to ones
    it has not contacted yet in this phase when any exist. ``heads``
    (inter layer only) limits both endpoints to cluster heads.
    Pairs come back as ``(low id, high id)`` sorted; ``contacted`` is updated.
    """
    if layer not in (INTRA, INTER):
        raise RejectedInput(f"unknown layer {layer!r}")
    active = sorted(active)
    active_set = set(active)
    matched = set()
    pairs = []
    for i in rng.permutation(len(active)):
        a = active[i]
        if a in matched:
            continue
        row = graph.adjacency[graph.index_of(a)]
        cands = [graph.ids[j] for j in np.flatnonzero(row)]
        cands = [b for b in cands if b in active_set and b not in matched
                 and _eligible(layer, a, b, cluster_of, heads)]
        if not cands:
            continue
        fresh = [b for b in cands if b not in contacted.get(a, ())]
        pool = fresh or cands
        b = pool[int(rng.integers(len(pool)))]
        matched.update((a, b))
        contacted.setdefault(a, set()).add(b)
        contacted.setdefault(b, set()).add(a)
        pairs.append((min(a, b), max(a, b)))
    return sorted(pairs)


def check_pairs(pairs, graph: TopologyGraph, layer: str, cluster_of: dict, heads=None):
    """Raise ``PairingViolation`` on overlap, a non-edge or a wrong-layer pair."""
    seen = set()
    for a, b in pairs:
        if a == b or a in seen or b in seen:
            raise PairingViolation(f"device appears twice in one iteration: {(a, b)}")
        seen.update((a, b))
        if not graph.has_edge(a, b):
            raise PairingViolation(f"pair {(a, b)} is not a topology edge")
        if not _eligible(layer, a, b, cluster_of, heads):
            raise PairingViolation(f"pair {(a, b)} is not eligible on the {layer} layer")


def consensus_distances(devices) -> dict:
    """Euclidean distance of each device's parameters from the unweighted mean."""
    ordered = sorted(devices, key=lambda d: d.id)
    X = np.array([d.params.values for d in ordered])
    mean = X.mean(axis=0)
    return {d.id: float(np.linalg.norm(x - mean)) for d, x in zip(ordered, X)}


@dataclass
class PhaseReport:
    layer: str
    pairings: list = field(default_factory=list)
    messages: int = 0
    # mean squared distance from the mean after each iteration
    consensus: list = field(default_factory=list)


def _mean_sq(vectors):
    X = np.array(vectors)
    return float(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean()) if len(X) > 1 else 0.0


def _run_phase(devices, clusters, graph, cfg: GossipConfig, rng, layer, iterations, mover=None,
               channel=None):
    ordered = sorted(devices, key=lambda d: d.id)
    by_id = {d.id: d for d in ordered}
    cluster_of = clusters.cluster_of() if hasattr(clusters, "cluster_of") else {
        m: c.cluster_id for c in clusters for m in c.members}
    heads = None
    if layer == INTER and cfg.inter_heads_only:
        heads = {c.head for c in clusters}
    channel = channel or Channel()
    cumulative = cfg.mixing_mode == CUMULATIVE_FEDAVG
    report = PhaseReport(layer)

    for d in ordered:
        d.contacted = set()
    contacted = {d.id: d.contacted for d in ordered}
    accs = {}
    if cumulative:
        for d in ordered:
            accs[d.id] = accumulate(Accumulator(), d.params) if d.params.sample_count > 0 else Accumulator()

    def current(d):
        acc = accs.get(d.id)
        if acc is not None and acc.n_sum > 0:
            return finalise(acc)
        return d.params

    for g in range(iterations):
        if mover is not None:
            graph = mover(g)
        pairs = pair_devices(by_id.keys(), graph, layer, cluster_of, contacted, rng, heads)
        check_pairs(pairs, graph, layer, cluster_of, heads)
        outgoing = {d: current(by_id[d]) if cumulative else by_id[d].params
                    for p in pairs for d in p}
        for a, b in pairs:
            channel.deliver(a, b, outgoing[a], graph)
            channel.deliver(b, a, outgoing[b], graph)
        for d in ordered:
            for _, payload in channel.receive(d.id):
                if cumulative:
                    if payload.sample_count > 0:
                        accs[d.id] = accumulate(accs[d.id], payload)
                else:
                    d.params = mix_fixed_alpha(d.params, payload, cfg.alpha)
        report.pairings.append(pairs)
        report.messages += 2 * len(pairs)
        report.consensus.append(_mean_sq([current(d).values if cumulative else d.params.values
                                          for d in ordered]))

    if cumulative:
        for d in ordered:
            d.params = current(d)
    return devices, report


def run_intra_phase(devices, clusters, graph, cfg: GossipConfig, seed, mover=None, channel=None):
    rng = np.random.default_rng(seed)
    return _run_phase(devices, clusters, graph, cfg, rng, INTRA, cfg.intra_rounds, mover, channel)


def run_inter_phase(devices, clusters, graph, cfg: GossipConfig, seed, mover=None, channel=None):
    rng = np.random.default_rng(seed)
    return _run_phase(devices, clusters, graph, cfg, rng, INTER, cfg.inter_rounds, mover, channel)


@dataclass
class RoundReport:
    round: int
    clusters: list
    intra: PhaseReport
    inter: PhaseReport
    consensus_distance: dict
    messages: int
    dk_iterations: int
    training_cost: int
    graph: TopologyGraph | None = field(default=None, repr=False)
    clustering: list | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "clusters": [{"cluster_id": c["cluster_id"], "head": c["head"], "members": c["members"]}
                         for c in self.clusters],
            "dk_iterations": self.dk_iterations,
            "pairings": {
                INTRA: [[list(p) for p in it] for it in self.intra.pairings],
                INTER: [[list(p) for p in it] for it in self.inter.pairings],
            },
            "consensus_distance": {str(k): v for k, v in sorted(self.consensus_distance.items())},
            "messages": self.messages,
            "training_cost": self.training_cost,
        }


def run_round(devices, field_cfg: FieldConfig, gossip_cfg: GossipConfig,
              clustering_cfg: clust.ClusteringConfig, seed, round_index: int = 0,
              training: TrainingConfig | None = None) -> tuple[list, RoundReport]:
    """Cluster, train locally, gossip intra then inter, then move the devices.

    ``seed`` (int or sequence) seeds four independent streams: clustering,
    intra pairing, inter pairing and mobility. Local training draws from
    each device's own generator.
    """
    training = training or TrainingConfig()
    s_cluster, s_intra, s_inter, s_move = np.random.SeedSequence(seed).spawn(4)
    move_rng = np.random.default_rng(s_move)
    ordered = sorted(devices, key=lambda d: d.id)

    graph = snapshot_topology(ordered)
    clusters = clust.cluster(ordered, graph, clustering_cfg, s_cluster)

    cost = 0
    for d in ordered:
        if training.reset_optimiser:
            d.opt = d.opt.reset()
        train_local(d, training.local_epochs, training.batch_size)
        cost = max(cost, len(d.shard) * training.local_epochs)

    mover = None
    total_iters = gossip_cfg.intra_rounds + gossip_cfg.inter_rounds
    if gossip_cfg.move_during_gossip and field_cfg.steps_per_round > 0 and len(ordered) > 1:
        dt = field_cfg.steps_per_round / total_iters

        def mover(_g):
            step_mobility(ordered, dt, move_rng, field_cfg.field_size, field_cfg.heading_noise)
            return snapshot_topology(ordered)

    _, intra = run_intra_phase(ordered, clusters, graph, gossip_cfg, s_intra, mover)
    inter_graph = snapshot_topology(ordered) if mover else graph
    _, inter = run_inter_phase(ordered, clusters, inter_graph, gossip_cfg, s_inter, mover)

    if not gossip_cfg.move_during_gossip:
        for _ in range(field_cfg.steps_per_round):
            step_mobility(ordered, 1.0, move_rng, field_cfg.field_size, field_cfg.heading_noise)

    report = RoundReport(
        round=round_index,
        clusters=[{"cluster_id": c.cluster_id, "head": c.head, "members": sorted(c.members)}
                  for c in clusters],
        intra=intra,
        inter=inter,
        consensus_distance=consensus_distances(ordered),
        messages=intra.messages + inter.messages,
        dk_iterations=clusters.iterations,
        training_cost=cost,
        graph=graph,
        clustering=clusters,
    )
    return devices, report
