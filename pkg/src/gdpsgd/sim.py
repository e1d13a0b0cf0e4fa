"""Mobile devices on a bounded square field, range-limited topology and message channel."""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import RangeViolation, RejectedInput
from .model import ModelShape, OptimiserState, ParamVector

HEADING_NOISE = 0.3  # rad per step


@dataclass(frozen=True)
class FieldConfig:
    field_size: float = 100.0
    device_count: int = 30
    comm_range: float = 60.0
    speed: float = 0.5
    seed: int = 0
    steps_per_round: int = 10
    heading_noise: float = HEADING_NOISE

    def __post_init__(self):
        if self.field_size <= 0 or self.device_count < 1 or self.comm_range <= 0:
            raise RejectedInput("field_size, device_count and comm_range must be positive")
        if self.speed < 0 or self.steps_per_round < 0 or self.heading_noise < 0:
            raise RejectedInput("speed, steps_per_round and heading_noise must be non-negative")


@dataclass
class DeviceState:
    id: int
    position: np.ndarray
    speed: float
    heading: float
    comm_range: float
    shard: Dataset
    params: ParamVector
    opt: OptimiserState
    shape: ModelShape
    rng: np.random.Generator
    contacted: set = field(default_factory=set)
    skipped_training: bool = False
    epoch_losses: list = field(default_factory=list)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)


@dataclass(eq=False)
class TopologyGraph:
    """Connectivity snapshot.

    ``adjacency[i, j]`` is True iff devices ``ids[i]`` and ``ids[j]`` are
    distinct and within range of each other. ``mixing`` is the lazy
    Metropolis matrix built on that adjacency.
    """

    ids: tuple
    adjacency: np.ndarray
    mixing: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self._index = {d: i for i, d in enumerate(self.ids)}

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def weights(self) -> np.ndarray:
        return self.adjacency.astype(np.float64)

    def index_of(self, device_id: int) -> int:
        return self._index[device_id]

    def has_edge(self, a: int, b: int) -> bool:
        return bool(self.adjacency[self._index[a], self._index[b]])

    def restrict(self, keep: np.ndarray) -> "TopologyGraph":
        """Same vertices, only the edges where ``keep`` is True."""
        adj = self.adjacency & np.asarray(keep, dtype=bool)
        return TopologyGraph(self.ids, adj, metropolis_weights(adj), self.positions)


def metropolis_weights(adjacency: np.ndarray) -> np.ndarray:
    """Lazy Metropolis: ``W_ij = 1 / (2 max(deg_i, deg_j))`` on edges, rows sum to one."""
    adj = np.asarray(adjacency, dtype=bool)
    deg = adj.sum(axis=1)
    denom = 2.0 * np.maximum(deg[:, None], deg[None, :])
    W = np.where(adj, 1.0 / np.where(denom > 0, denom, 1.0), 0.0)
    np.fill_diagonal(W, 0.0)
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


def random_positions(cfg: FieldConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, cfg.field_size, size=(cfg.device_count, 2))


def _fold(coord: float, size: float) -> tuple[float, bool]:
    """Reflect ``coord`` into ``[0, size]``; second value is True on an odd bounce count."""
    bounces = int(math.floor(coord / size))
    m = coord % (2.0 * size)
    if m > size:
        m = 2.0 * size - m
    return min(max(m, 0.0), size), bounces % 2 == 1


def step_mobility(devices, dt: float, rng: np.random.Generator, field_size: float = 100.0,
                  heading_noise: float = HEADING_NOISE):
    """Advance every device by ``speed * dt`` along a noisy heading, in id order.

    Walls reflect: the position is folded back inside and the matching
    heading component flips sign.
    """
    if dt <= 0:
        raise RejectedInput("dt must be positive")
    for dev in sorted(devices, key=lambda d: d.id):
        heading = dev.heading + rng.normal(0.0, heading_noise)
        if dev.speed == 0:
            dev.heading = heading
            continue
        step = dev.speed * dt
        x, flip_x = _fold(dev.position[0] + step * math.cos(heading), field_size)
        y, flip_y = _fold(dev.position[1] + step * math.sin(heading), field_size)
        if flip_x:
            heading = math.pi - heading
        if flip_y:
            heading = -heading
        dev.position = np.array([x, y])
        dev.heading = math.atan2(math.sin(heading), math.cos(heading))
    return devices


def snapshot_topology(devices) -> TopologyGraph:
    """Edges join distinct devices within ``min(r_i, r_j)`` of each other."""
    if not devices:
        raise RejectedInput("topology needs at least one device")
    ordered = sorted(devices, key=lambda d: d.id)
    pos = np.array([d.position for d in ordered])
    ranges = np.array([d.comm_range for d in ordered], dtype=np.float64)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    adj = dist <= np.minimum(ranges[:, None], ranges[None, :])
    np.fill_diagonal(adj, False)
    return TopologyGraph(tuple(d.id for d in ordered), adj, metropolis_weights(adj), pos)


def neighbours(device_id: int, graph: TopologyGraph) -> list[int]:
    row = graph.adjacency[graph.index_of(device_id)]
    return [graph.ids[j] for j in np.flatnonzero(row)]


class Delivery(NamedTuple):
    sender: int
    receiver: int
    seq: int


class Channel:
    """Reliable, per-pair ordered delivery within one simulation step."""

    def __init__(self):
        self._inbox = defaultdict(deque)
        self._seq = 0
        self.sent = 0

    def deliver(self, sender: int, receiver: int, payload: ParamVector, graph: TopologyGraph) -> Delivery:
        if sender == receiver or not graph.has_edge(sender, receiver):
            raise RangeViolation(f"device {receiver} is not within range of device {sender}")
        self._seq += 1
        self.sent += 1
        self._inbox[receiver].append((sender, payload.copy()))
        return Delivery(sender, receiver, self._seq)

    def receive(self, receiver: int) -> list:
        """Drain ``receiver``'s inbox as ``(sender, payload)`` in arrival order."""
        box = self._inbox.pop(receiver, deque())
        return list(box)

    def pending(self, receiver: int) -> int:
        return len(self._inbox.get(receiver, ()))


def topology_records(devices, clusters=None) -> list[dict]:
    """Per-device rows ``{id, x, y, cluster, head}`` for external visualisation."""
    owner = {}
    if clusters:
        for c in clusters:
            for m in c.members:
                owner[m] = c
    rows = []
    for d in sorted(devices, key=lambda d: d.id):
        c = owner.get(d.id)
        rows.append({
            "id": d.id,
            "x": float(d.position[0]),
            "y": float(d.position[1]),
            "cluster": None if c is None else c.cluster_id,
            "head": None if c is None else c.head,
        })
    return rows
