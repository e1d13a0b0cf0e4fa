import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gdpsgd.errors import RangeViolation, RejectedInput
from gdpsgd.model import ParamVector
from gdpsgd.sim import (Channel, FieldConfig, metropolis_weights, neighbours, random_positions,
                        snapshot_topology, step_mobility, topology_records)

from conftest import make_device


def field_devices(n, seed, comm_range=60.0, speed=0.5):
    cfg = FieldConfig(device_count=n, comm_range=comm_range, speed=speed, seed=seed)
    rng = np.random.default_rng(seed)
    pos = random_positions(cfg, rng)
    devs = [make_device(i, pos[i], comm_range=comm_range) for i in range(n)]
    for d in devs:
        d.speed = speed
        d.heading = float(rng.uniform(-math.pi, math.pi))
    return devs


def test_zero_speed_keeps_positions():
    devs = field_devices(5, 0, speed=0.0)
    before = [d.position.copy() for d in devs]
    step_mobility(devs, 1.0, np.random.default_rng(0))
    for d, p in zip(devs, before):
        np.testing.assert_array_equal(d.position, p)


def test_reflection_at_wall():
    dev = make_device(0, (99.8, 50.0))
    dev.speed, dev.heading = 1.0, 0.0
    step_mobility([dev], 1.0, np.random.default_rng(0), heading_noise=0.0)
    assert dev.position[0] == pytest.approx(99.2)
    assert dev.position[1] == pytest.approx(50.0)
    assert math.cos(dev.heading) == pytest.approx(-1.0)

    dev = make_device(1, (10.0, 0.2))
    dev.speed, dev.heading = 1.0, -math.pi / 2
    step_mobility([dev], 1.0, np.random.default_rng(0), heading_noise=0.0)
    assert dev.position[1] == pytest.approx(0.8)
    assert math.sin(dev.heading) == pytest.approx(1.0)


def test_positions_stay_in_field_over_1000_steps():
    devs = field_devices(30, 1, speed=0.5)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        step_mobility(devs, 1.0, rng)
        for d in devs:
            assert 0.0 <= d.position[0] <= 100.0 and 0.0 <= d.position[1] <= 100.0


@settings(max_examples=60, deadline=None)
@given(x=st.floats(0, 100), y=st.floats(0, 100), heading=st.floats(-4, 4),
       speed=st.floats(0, 100), seed=st.integers(0, 1000))
def test_reflection_never_leaves_field(x, y, heading, speed, seed):
    dev = make_device(0, (x, y))
    dev.speed, dev.heading = speed, heading
    step_mobility([dev], 1.0, np.random.default_rng(seed))
    assert 0.0 <= dev.position[0] <= 100.0 and 0.0 <= dev.position[1] <= 100.0


def test_mobility_rejects_bad_dt():
    with pytest.raises(RejectedInput):
        step_mobility([], 0.0, np.random.default_rng(0))


def test_mobility_deterministic():
    traj = []
    for _ in range(2):
        devs = field_devices(10, 5)
        rng = np.random.default_rng(5)
        for _ in range(50):
            step_mobility(devs, 1.0, rng)
        traj.append(np.array([d.position for d in devs]).tobytes())
    assert traj[0] == traj[1]


def test_two_devices_in_range():
    g = snapshot_topology([make_device(0, (0, 0)), make_device(1, (3, 4), comm_range=10)])
    np.testing.assert_allclose(g.mixing, [[0.5, 0.5], [0.5, 0.5]])
    assert g.adjacency[0, 1] and not g.adjacency[0, 0]


def test_range_boundary_is_inclusive():
    g = snapshot_topology([make_device(0, (0, 0), comm_range=5), make_device(1, (3, 4), comm_range=5)])
    assert g.has_edge(0, 1)


def test_disconnected_gives_identity():
    g = snapshot_topology([make_device(i, (30 * i, 0), comm_range=10) for i in range(4)])
    np.testing.assert_array_equal(g.mixing, np.eye(4))
    assert neighbours(2, g) == []


def test_random_placement_mixing_properties():
    devs = field_devices(10, 3, comm_range=60)
    g = snapshot_topology(devs)
    W = g.mixing
    np.testing.assert_array_equal(W, W.T)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(W >= 0) and np.all(W <= 1)
    assert np.all(W[g.adjacency] > 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**5), n=st.integers(1, 25), r=st.sampled_from([15.0, 30.0, 60.0]))
def test_snapshot_invariants(seed, n, r):
    g = snapshot_topology(field_devices(n, seed, comm_range=r))
    W = g.mixing
    assert np.array_equal(W, W.T)
    assert np.allclose(W.sum(axis=1), 1.0, atol=1e-9)
    off = ~np.eye(n, dtype=bool)
    assert np.array_equal((W > 0) & off, g.adjacency)
    for i in g.ids:
        for j in neighbours(i, g):
            assert i in neighbours(j, g)


def test_complete_placement_neighbours():
    devs = [make_device(i, (i, 0), comm_range=50) for i in range(6)]
    g = snapshot_topology(devs)
    for i in range(6):
        assert len(neighbours(i, g)) == 5


def test_metropolis_path_graph():
    adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
    W = metropolis_weights(adj)
    np.testing.assert_allclose(W, [[0.75, 0.25, 0], [0.25, 0.5, 0.25], [0, 0.25, 0.75]])


def test_channel_delivery():
    g = snapshot_topology([make_device(0, (0, 0)), make_device(1, (1, 0)), make_device(2, (50, 0))])
    ch = Channel()
    p = ParamVector([1.5, -2.0], 3)
    ch.deliver(0, 1, p, g)
    ch.deliver(0, 1, ParamVector([9.0, 9.0], 1), g)
    got = ch.receive(1)
    assert [s for s, _ in got] == [0, 0]
    assert got[0][1].values.tobytes() == p.values.tobytes() and got[0][1].sample_count == 3
    assert got[1][1].values[0] == 9.0
    with pytest.raises(RangeViolation):
        ch.deliver(0, 2, p, g)


def test_topology_records():
    devs = [make_device(0, (1, 2)), make_device(1, (3, 4))]
    rows = topology_records(devs)
    assert rows[0] == {"id": 0, "x": 1.0, "y": 2.0, "cluster": None, "head": None}
