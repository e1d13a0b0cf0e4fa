"""Centralised FedAvg and local-only training for comparison with gossip DFL."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gossip import weighted_mean
from .metrics import CFL, LOCAL, MetricsRecord
from .model import ParamVector, TrainingConfig, evaluate, train_local


@dataclass
class CflState:
    global_params: ParamVector
    round: int = 0
    # post-training models of the last round, in device-id order
    local_models: list = field(default_factory=list)
    local_sizes: list = field(default_factory=list)


def cfl_round(state: CflState, devices, training: TrainingConfig | None = None) -> CflState:
    """Broadcast, train every device, then set the global model to the sample-weighted mean."""
    training = training or TrainingConfig()
    ordered = sorted(devices, key=lambda d: d.id)
    for d in ordered:
        d.params = ParamVector(state.global_params.values.copy(), len(d.shard))
        if training.reset_optimiser:
            d.opt = d.opt.reset()
        train_local(d, training.local_epochs, training.batch_size)
    trained = [d.params for d in ordered if d.params.sample_count > 0]
    new_global = weighted_mean(trained) if trained else state.global_params
    return CflState(
        global_params=new_global,
        round=state.round + 1,
        local_models=[d.params.copy() for d in ordered],
        local_sizes=[len(d.shard) for d in ordered],
    )


def device_weighted_accuracy(models, sizes, shape, test) -> float:
    """Accuracy of each model on ``test``, averaged with weights proportional to ``sizes``."""
    accs = np.array([evaluate(m, shape, test.features, test.labels).accuracy for m in models])
    w = np.asarray(sizes, dtype=np.float64)
    return float((accs * w).sum() / w.sum())


def cfl_evaluate(state: CflState, devices, test, shape=None, wall_step: int = 0) -> MetricsRecord:
    shape = shape or devices[0].shape
    res = evaluate(state.global_params, shape, test.features, test.labels)
    if state.local_models:
        weighted = device_weighted_accuracy(state.local_models, state.local_sizes, shape, test)
    else:
        weighted = res.accuracy
    return MetricsRecord(
        method=CFL, round=state.round, scope="all", wall_step=wall_step,
        mean_accuracy=res.accuracy, min_accuracy=res.accuracy, max_accuracy=res.accuracy,
        weighted_accuracy=weighted, macro_f1=res.macro_f1, loss=res.loss,
        messages=2 * len(devices) if state.round else 0,
    )


def local_only(devices, training: TrainingConfig, test, reference_device=None, round_index: int = 1) -> list[MetricsRecord]:
    """Train every device in isolation for one block of ``local_epochs``.

    ``reference_device`` (a device holding the full training set) is trained
    the same way and reported with scope ``"reference"``.
    """
    out = []
    for d in sorted(devices, key=lambda d: d.id):
        if training.reset_optimiser:
            d.opt = d.opt.reset()
        train_local(d, training.local_epochs, training.batch_size)
        res = evaluate(d.params, d.shape, test.features, test.labels)
        out.append(MetricsRecord(
            method=LOCAL, round=round_index, scope=f"device:{d.id}",
            wall_step=round_index * len(d.shard) * training.local_epochs,
            mean_accuracy=res.accuracy, min_accuracy=res.accuracy, max_accuracy=res.accuracy,
            weighted_accuracy=res.accuracy, macro_f1=res.macro_f1, loss=res.loss,
        ))
    if reference_device is not None:
        d = reference_device
        if training.reset_optimiser:
            d.opt = d.opt.reset()
        train_local(d, training.local_epochs, training.batch_size)
        res = evaluate(d.params, d.shape, test.features, test.labels)
        out.append(MetricsRecord(
            method=LOCAL, round=round_index, scope="reference",
            wall_step=round_index * len(d.shard) * training.local_epochs,
            mean_accuracy=res.accuracy, min_accuracy=res.accuracy, max_accuracy=res.accuracy,
            weighted_accuracy=res.accuracy, macro_f1=res.macro_f1, loss=res.loss,
        ))
    return out
