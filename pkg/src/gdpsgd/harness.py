"""Experiment configuration, seeded end-to-end runs, presets and run comparison."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import analysis
from .baselines import CflState, cfl_evaluate, cfl_round, local_only
from .clustering import ClusteringConfig, EMD
from .data import (DIRICHLET, IID, Dataset, PartitionSpec, generate_blobs, load_csv, partition,
                   train_test_split)
from .errors import ConfigError, RejectedInput
from .gossip import GossipConfig, run_round
from .metrics import CFL, DFL, FIELDS, LOCAL, MetricsRecord, write_csv
from .model import ModelShape, ParamVector, TrainingConfig, evaluate
from .sim import DeviceState, FieldConfig, metropolis_weights, random_positions, step_mobility, \
    snapshot_topology

METHODS = (DFL, CFL, LOCAL)

# seed-stream tags; every random draw in a run derives from (seed, tag, ...)
_DATA, _SPLIT, _INIT, _DEVICE, _ROUND, _PLACE, _MOVE = range(7)


@dataclass(frozen=True)
class DataConfig:
    class_count: int = 10
    per_class: int = 600
    input_dim: int = 16
    spread: float = 1.0
    center_scale: float = 1.0
    test_fraction: float = 0.2
    # optional CSV of feature columns followed by an integer label
    csv_path: str | None = None


@dataclass(frozen=True)
class CostConfig:
    """Simulated step costs used for ``wall_step``."""

    train_step_per_sample: int = 1
    gossip_iteration: int = 1
    cfl_overhead: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    partition: PartitionSpec = dataclasses.field(default_factory=PartitionSpec)
    gossip: GossipConfig = dataclasses.field(default_factory=GossipConfig)
    clustering: ClusteringConfig = dataclasses.field(default_factory=ClusteringConfig)
    model: ModelShape = dataclasses.field(default_factory=lambda: ModelShape(16, 10, 0))
    training: TrainingConfig = dataclasses.field(default_factory=TrainingConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    cost: CostConfig = dataclasses.field(default_factory=CostConfig)
    rounds: int = 20
    method: str = DFL
    seed: int = 0
    output: str | None = None

    def validate(self) -> "ExperimentConfig":
        problems = []
        if self.rounds < 1:
            problems.append("rounds must be >= 1")
        if self.method not in METHODS:
            problems.append(f"method must be one of {METHODS}")
        if self.partition.device_count != self.field.device_count:
            problems.append("partition.device_count must equal field.device_count")
        if self.clustering.k_init > self.field.device_count:
            problems.append("clustering.k_init exceeds the device count")
        if self.model.num_classes != self.data.class_count:
            problems.append("model.num_classes must equal data.class_count")
        if self.data.csv_path is None:
            if self.model.input_dim != self.data.input_dim:
                problems.append("model.input_dim must equal data.input_dim")
            train_per_class = self.data.per_class - round(self.data.test_fraction * self.data.per_class)
            if self.partition.mode == IID and self.field.device_count > train_per_class:
                problems.append(f"IID split needs at least {self.field.device_count} training samples per class")
        if problems:
            raise ConfigError("invalid experiment config: " + "; ".join(problems))
        return self

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(
            self, seed=seed,
            field=dataclasses.replace(self.field, seed=seed),
            partition=dataclasses.replace(self.partition, seed=seed),
        )


_SECTIONS = {
    "field": FieldConfig, "partition": PartitionSpec, "gossip": GossipConfig,
    "clustering": ClusteringConfig, "model": ModelShape, "training": TrainingConfig,
    "data": DataConfig, "cost": CostConfig,
}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc or {})
    base = ExperimentConfig()
    unknown = set(doc) - {f.name for f in dataclasses.fields(ExperimentConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = doc.pop(name, None)
        if section is None:
            continue
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        try:
            kwargs[name] = dataclasses.replace(getattr(base, name), **section)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    kwargs.update(doc)
    return dataclasses.replace(base, **kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# Desk-scale stand-ins for the image setup: overlapping 16-d blobs put the
# centralised plateau near 0.77, and the small shards need a larger step
# and batch than the image model did to move within 2 local epochs.
_BASE = ExperimentConfig(
    data=DataConfig(spread=1.5),
    training=TrainingConfig(learning_rate=0.02, batch_size=32),
)


def _variant(devices=30, comm_range=60.0, mode=IID, alpha=None, criterion="geographic"):
    return dataclasses.replace(
        _BASE,
        field=dataclasses.replace(_BASE.field, device_count=devices, comm_range=comm_range),
        partition=PartitionSpec(mode=mode, alpha=alpha, device_count=devices),
        clustering=dataclasses.replace(_BASE.clustering, criterion=criterion),
    )


PRESETS = {
    "iid-30": _variant(),
    "alpha-10": _variant(mode=DIRICHLET, alpha=10.0),
    "alpha-0.5": _variant(mode=DIRICHLET, alpha=0.5),
    "alpha-0.1": _variant(mode=DIRICHLET, alpha=0.1),
    "devices-60": _variant(devices=60),
    "devices-100": _variant(devices=100),
    "range-15": _variant(devices=60, comm_range=15.0),
    "range-30": _variant(devices=60, comm_range=30.0),
    "range-45": _variant(devices=60, comm_range=45.0),
    "range-60": _variant(devices=60, comm_range=60.0),
    "range-100": _variant(devices=60, comm_range=100.0),
    "emd-clustering": _variant(devices=60, mode=DIRICHLET, alpha=0.5, criterion=EMD),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}") from None


# ---------------------------------------------------------------- setup


def build_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.csv_path is not None:
        ds = load_csv(d.csv_path, d.class_count)
        if ds.input_dim != cfg.model.input_dim:
            raise ConfigError("CSV feature count does not match model.input_dim")
    else:
        ds = generate_blobs(d.class_count, d.per_class, d.input_dim, d.spread,
                            seed=[cfg.seed, _DATA], center_scale=d.center_scale)
    return train_test_split(ds, d.test_fraction, seed=[cfg.seed, _SPLIT])


def build_devices(cfg: ExperimentConfig, shards) -> list[DeviceState]:
    rng = np.random.default_rng([cfg.field.seed, _PLACE])
    pos = random_positions(cfg.field, rng)
    headings = rng.uniform(-math.pi, math.pi, size=len(shards))
    init = ParamVector.initial(cfg.model, np.random.default_rng([cfg.seed, _INIT]),
                               cfg.training.init_scale)
    return [
        DeviceState(
            id=i, position=pos[i], speed=cfg.field.speed, heading=float(headings[i]),
            comm_range=cfg.field.comm_range, shard=shard, params=init.copy(),
            opt=cfg.training.new_optimiser(), shape=cfg.model,
            rng=np.random.default_rng([cfg.seed, _DEVICE, i]),
        )
        for i, shard in enumerate(shards)
    ]


def _lambda2(W) -> float:
    if W.shape[0] < 2:
        return math.nan
    return analysis.spectral_report(W).lambda_2


def layer_lambda2(graph, clusters) -> tuple[float, float]:
    """Worst per-cluster lambda_2 of the intra layer, and lambda_2 of the inter layer."""
    cluster_of = clusters.cluster_of()
    cid = np.array([cluster_of[i] for i in graph.ids])
    same = cid[:, None] == cid[None, :]
    intra = math.nan
    for c in clusters:
        if len(c.members) < 2:
            continue
        idx = [graph.index_of(m) for m in sorted(c.members)]
        sub = graph.adjacency[np.ix_(idx, idx)]
        lam = _lambda2(metropolis_weights(sub))
        intra = lam if math.isnan(intra) else max(intra, lam)
    inter = _lambda2(graph.restrict(~same).mixing)
    return intra, inter


# ---------------------------------------------------------------- runs


@dataclass
class RunOutput:
    records: list
    rounds: list = field(default_factory=list)
    topology: list = field(default_factory=list)


def _device_record(method, rnd, wall, devices, test, shape):
    results = [evaluate(d.params, shape, test.features, test.labels) for d in devices]
    accs = np.array([r.accuracy for r in results])
    sizes = np.array([len(d.shard) for d in devices], dtype=np.float64)
    return MetricsRecord(
        method=method, round=rnd, scope="all", wall_step=wall,
        mean_accuracy=float(accs.mean()), min_accuracy=float(accs.min()),
        max_accuracy=float(accs.max()),
        weighted_accuracy=float((accs * sizes).sum() / sizes.sum()),
        macro_f1=float(np.mean([r.macro_f1 for r in results])),
        loss=float(np.mean([r.loss for r in results])),
        consensus_error=analysis.consensus_error(devices),
    )


def simulate(cfg: ExperimentConfig) -> RunOutput:
    """Run ``cfg`` in memory and return metrics plus per-round reports."""
    cfg.validate()
    train, test = build_data(cfg)
    spec = cfg.partition
    shards = partition(train, spec)
    devices = build_devices(cfg, shards)
    out = RunOutput(records=[])
    wall = 0

    if cfg.method == DFL:
        iters = cfg.gossip.intra_rounds + cfg.gossip.inter_rounds
        for rnd in range(1, cfg.rounds + 1):
            devices, rep = run_round(devices, cfg.field, cfg.gossip, cfg.clustering,
                                     seed=[cfg.seed, _ROUND, rnd], round_index=rnd,
                                     training=cfg.training)
            wall += rep.training_cost * cfg.cost.train_step_per_sample + iters * cfg.cost.gossip_iteration
            rec = _device_record(DFL, rnd, wall, devices, test, cfg.model)
            rec.cluster_count = len(rep.clusters)
            rec.messages = rep.messages
            rec.lambda2_intra, rec.lambda2_inter = layer_lambda2(rep.graph, rep.clustering)
            out.records.append(rec)
            out.rounds.append(rep.to_json())
            cluster_of = rep.clustering.cluster_of()
            head_of = {m: c.head for c in rep.clustering for m in c.members}
            out.topology.append({
                "round": rnd,
                "devices": [
                    {"id": i, "x": float(p[0]), "y": float(p[1]),
                     "cluster": cluster_of[i], "head": head_of[i]}
                    for i, p in zip(rep.graph.ids, rep.graph.positions)
                ],
            })

    elif cfg.method == CFL:
        state = CflState(global_params=devices[0].params.copy())
        move_rng = np.random.default_rng([cfg.field.seed, _MOVE])
        for rnd in range(1, cfg.rounds + 1):
            state = cfl_round(state, devices, cfg.training)
            cost = max(len(d.shard) for d in devices) * cfg.training.local_epochs
            wall += cost * cfg.cost.train_step_per_sample + cfg.cost.cfl_overhead
            out.records.append(cfl_evaluate(state, devices, test, cfg.model, wall_step=wall))
            # devices keep moving; topology does not matter to the server
            for _ in range(cfg.field.steps_per_round):
                step_mobility(devices, 1.0, move_rng, cfg.field.field_size, cfg.field.heading_noise)

    else:
        reference = DeviceState(
            id=-1, position=np.zeros(2), speed=0.0, heading=0.0, comm_range=cfg.field.comm_range,
            shard=train, params=devices[0].params.copy(), opt=cfg.training.new_optimiser(),
            shape=cfg.model, rng=np.random.default_rng([cfg.seed, _DEVICE, -1 % 2**32]),
        )
        for rnd in range(1, cfg.rounds + 1):
            out.records.extend(local_only(devices, cfg.training, test, reference, round_index=rnd))
    return out


def write_outputs(run: RunOutput, cfg: ExperimentConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(run.records, out_dir / "metrics.csv")
    (out_dir / "config.yaml").write_text(dump_config(cfg))
    if run.rounds:
        with open(out_dir / "rounds.jsonl", "w") as fh:
            for r in run.rounds:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        with open(out_dir / "topology.jsonl", "w") as fh:
            for t in run.topology:
                fh.write(json.dumps(t, sort_keys=True) + "\n")
    return out_dir


def run_experiment(cfg: ExperimentConfig) -> list[MetricsRecord]:
    """Run ``cfg``; when ``cfg.output`` is set, write CSV, JSON-lines reports and the config there."""
    run = simulate(cfg)
    if cfg.output:
        write_outputs(run, cfg, cfg.output)
    return run.records


# ---------------------------------------------------------------- comparison


def network_rows(records) -> list[MetricsRecord]:
    return [r for r in records if r.scope == "all"]


def plateau(records, last: int = 3) -> float:
    rows = network_rows(records)
    if not rows:
        raise RejectedInput("no network-wide records")
    return float(np.mean([r.mean_accuracy for r in rows[-last:]]))


def rounds_to_threshold(records, threshold: float):
    for r in network_rows(records):
        if r.mean_accuracy >= threshold:
            return r.round
    return None


def wall_to_threshold(records, threshold: float):
    for r in network_rows(records):
        if r.mean_accuracy >= threshold:
            return r.wall_step
    return None


def compare_runs(records_a, records_b, threshold: float | None = None) -> dict:
    """Per-round accuracy deltas (a - b) and time-to-threshold figures.

    The default threshold is 95% of the lower of the two plateaus.
    ``wall_ratio`` is ``wall_a / wall_b`` at the threshold, i.e. how many
    of b's rounds-worth of simulated time a needs.
    """
    for rec in list(records_a) + list(records_b):
        if not isinstance(rec, MetricsRecord) or tuple(f.name for f in dataclasses.fields(rec)) != FIELDS:
            raise RejectedInput("records do not share the metrics schema")
    a, b = network_rows(records_a), network_rows(records_b)
    if threshold is None:
        threshold = 0.95 * min(plateau(a), plateau(b))
    b_by_round = {r.round: r for r in b}
    deltas = [
        {"round": r.round,
         "accuracy_delta": r.mean_accuracy - b_by_round[r.round].mean_accuracy,
         "loss_delta": r.loss - b_by_round[r.round].loss,
         "f1_delta": r.macro_f1 - b_by_round[r.round].macro_f1}
        for r in a if r.round in b_by_round
    ]
    wa, wb = wall_to_threshold(a, threshold), wall_to_threshold(b, threshold)
    per_round_b = b[0].wall_step if b else None
    return {
        "threshold": threshold,
        "deltas": deltas,
        "rounds_to_threshold": (rounds_to_threshold(a, threshold), rounds_to_threshold(b, threshold)),
        "wall_to_threshold": (wa, wb),
        "wall_ratio": None if wa is None or not wb else wa / wb,
        # a's time-to-threshold expressed in b's per-round cost
        "b_equivalent_rounds": None if wa is None or not per_round_b else wa / per_round_b,
    }


def format_comparison(summary: dict) -> str:
    lines = [f"threshold {summary['threshold']:.4f}",
             "round  d_acc      d_f1       d_loss"]
    for d in summary["deltas"]:
        lines.append(f"{d['round']:>5}  {d['accuracy_delta']:+.4f}  {d['f1_delta']:+.4f}  {d['loss_delta']:+.4f}")
    ra, rb = summary["rounds_to_threshold"]
    wa, wb = summary["wall_to_threshold"]
    lines.append(f"rounds to threshold: a={ra} b={rb}")
    lines.append(f"wall_step to threshold: a={wa} b={wb} ratio={summary['wall_ratio']}")
    lines.append(f"a in b-equivalent rounds: {summary['b_equivalent_rounds']}")
    return "\n".join(lines)


# ---------------------------------------------------------------- spectra

SPECTRA_FIELDS = ("round", "n", "edges", "components", "lambda_2", "lambda_n", "rho_mixing",
                  "laplacian_lambda_2", "rho_laplacian", "disconnected", "cluster_count",
                  "lambda2_intra", "lambda2_inter", "t_ave_lower", "t_ave_upper")


def spectra(cfg: ExperimentConfig, epsilon: float = 1e-3) -> list[dict]:
    """Topology-only sweep: one spectral row per round of device movement."""
    from .clustering import cluster, component_count

    cfg.validate()
    placeholder = Dataset(np.zeros((0, cfg.model.input_dim)), np.zeros(0, dtype=np.int64),
                          cfg.model.num_classes)
    if cfg.clustering.criterion == EMD:
        train, _ = build_data(cfg)
        shards = partition(train, cfg.partition)
    else:
        shards = [placeholder] * cfg.field.device_count
    devices = build_devices(cfg, shards)
    move_rng = np.random.default_rng([cfg.field.seed, _MOVE])
    rows = []
    for rnd in range(1, cfg.rounds + 1):
        graph = snapshot_topology(devices)
        clusters = cluster(devices, graph, cfg.clustering, np.random.SeedSequence([cfg.seed, _ROUND, rnd]))
        rep = analysis.spectral_report(graph)
        intra, inter = layer_lambda2(graph, clusters)
        lo = hi = math.nan
        if 0.0 < rep.lambda_2 < 1.0 - 1e-12:
            lo, hi = analysis.averaging_time_bounds(epsilon, rep.lambda_2)
        rows.append({
            "round": rnd, "n": graph.n, "edges": int(graph.adjacency.sum() // 2),
            "components": component_count(graph.adjacency),
            "lambda_2": rep.lambda_2, "lambda_n": rep.lambda_n, "rho_mixing": rep.rho_mixing,
            "laplacian_lambda_2": rep.laplacian_lambda_2, "rho_laplacian": rep.rho_laplacian,
            "disconnected": rep.disconnected, "cluster_count": len(clusters),
            "lambda2_intra": intra, "lambda2_inter": inter,
            "t_ave_lower": lo, "t_ave_upper": hi,
        })
        for _ in range(cfg.field.steps_per_round):
            step_mobility(devices, 1.0, move_rng, cfg.field.field_size, cfg.field.heading_noise)
    return rows
