import numpy as np
import pytest

from gdpsgd.data import Dataset
from gdpsgd.model import ModelShape, OptimiserState, ParamVector
from gdpsgd.sim import DeviceState


def central_difference(f, x, h=1e-5):
    """Independent numerical gradient of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def make_device(i, pos, shard=None, params=None, shape=None, comm_range=10.0, seed=0):
    shape = shape or ModelShape(2, 2)
    if shard is None:
        shard = Dataset(np.zeros((1, shape.input_dim)), np.zeros(1, dtype=np.int64), shape.num_classes)
    if params is None:
        params = ParamVector.zeros(shape)
    return DeviceState(
        id=i, position=np.asarray(pos, dtype=float), speed=0.0, heading=0.0,
        comm_range=comm_range, shard=shard, params=params, opt=OptimiserState(),
        shape=shape, rng=np.random.default_rng([seed, i]),
    )


@pytest.fixture
def device_factory():
    return make_device
