"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training-trend criteria (6 to 8) share one cache of runs, and every
pairing produced by those runs is re-checked for criterion 9.
"""

import dataclasses
import itertools
import time

import numpy as np
import pytest

from gdpsgd import harness
from gdpsgd.analysis import (averaging_time_bounds, empirical_averaging_time,
                             mixing_trace, spectral_report)
from gdpsgd.clustering import ClusteringConfig, component_count, dk_means
from gdpsgd.gossip import Accumulator, accumulate, finalise
from gdpsgd.metrics import CFL, DFL, to_csv
from gdpsgd.model import ModelShape, ParamVector, forward_loss
from gdpsgd.sim import metropolis_weights, snapshot_topology

from conftest import central_difference, make_device, relative_error

SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


_RUNS = {}


def run(name, seed, method=DFL):
    key = (name, seed, method)
    if key not in _RUNS:
        cfg = dataclasses.replace(harness.preset(name).with_seed(seed), method=method)
        _RUNS[key] = harness.simulate(cfg)
    return _RUNS[key]


def final_accuracy(out):
    return harness.network_rows(out.records)[-1].mean_accuracy


def rounds_to_95(out):
    recs = out.records
    return harness.rounds_to_threshold(recs, 0.95 * harness.plateau(recs))


# ------------------------------------------------------------------ 1

def test_criterion_1_cumulative_fedavg_oracle(report):
    start = time.perf_counter()
    worst = 0.0
    order_ok = True
    for s in range(1000):
        rng = np.random.default_rng([1, s])
        dim = int(rng.integers(1, 65))
        size = int(rng.integers(1, 33))
        vecs = rng.normal(0, 10, size=(size, dim))
        counts = rng.integers(1, 5000, size=size)
        direct = (counts[:, None] * vecs).sum(axis=0) / counts.sum()
        results = []
        for perm in (np.arange(size), rng.permutation(size), np.arange(size)[::-1]):
            acc = Accumulator()
            for i in perm:
                acc = accumulate(acc, ParamVector(vecs[i], int(counts[i])))
            results.append(finalise(acc).values)
        for r in results:
            err = np.max(np.abs(r - direct) / np.maximum(np.abs(direct), 1e-12))
            worst = max(worst, float(err))
        order_ok &= all(np.allclose(results[0], r, rtol=1e-9, atol=0) for r in results[1:])
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and order_ok and elapsed < 5.0
    report(1, ok, f"max rel err {worst:.2e}, order independent={order_ok}, {elapsed:.2f}s")


# ------------------------------------------------------------------ 2

def test_criterion_2_gradient_check(report):
    start = time.perf_counter()
    worst = {}
    for shape in (ModelShape(5, 4), ModelShape(5, 4, hidden_dim=6)):
        w = 0.0
        for s in range(100):
            rng = np.random.default_rng([2, shape.hidden_dim, s])
            params = ParamVector(rng.normal(0, 0.5, shape.param_count))
            X = rng.normal(size=(int(rng.integers(1, 9)), shape.input_dim))
            y = rng.integers(0, shape.num_classes, size=X.shape[0])
            _, grad = forward_loss(params, shape, X, y)
            num = central_difference(lambda v: forward_loss(ParamVector(v), shape, X, y)[0], params.values)
            w = max(w, float(relative_error(grad, num).max()))
        worst[shape.hidden_dim] = w
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 10.0
    report(2, ok, f"max rel err softmax {worst[0]:.2e}, mlp {worst[6]:.2e}, {elapsed:.2f}s")


# ------------------------------------------------------------------ 3

def test_criterion_3_spectral_fixtures(report):
    start = time.perf_counter()
    proj = spectral_report(np.full((6, 6), 1 / 6))
    ident = spectral_report(np.eye(5))
    A = np.zeros((4, 4), dtype=bool)
    for i in range(4):
        A[i, (i + 1) % 4] = A[(i + 1) % 4, i] = True
    W = metropolis_weights(A)
    # 4-cycle lazy Metropolis is 1/2 I + 1/4 A; its spectrum is {1, 1/2, 1/2, 0}
    assert np.allclose(W, 0.5 * np.eye(4) + 0.25 * A)
    cyc = spectral_report(W)
    elapsed = time.perf_counter() - start
    ok = (abs(proj.rho_mixing) <= 1e-9 and not proj.disconnected
          and abs(ident.rho_mixing - 1.0) <= 1e-9 and ident.disconnected
          and abs(cyc.lambda_2 - 0.5) <= 1e-9 and abs(cyc.rho_mixing - 0.25) <= 1e-9
          and elapsed < 1.0)
    report(3, ok, f"projector rho={proj.rho_mixing:.1e}, identity rho={ident.rho_mixing:.6f} "
                  f"flagged={ident.disconnected}, 4-cycle lambda2={cyc.lambda_2:.12f} "
                  f"rho={cyc.rho_mixing:.12f}")


# ------------------------------------------------------------------ 4

def connected_geometric(n, seed):
    rng = np.random.default_rng([4, n, seed])
    r = 0.5
    while True:
        pts = rng.uniform(0, 1, (n, 2))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        A = (d <= r) & ~np.eye(n, dtype=bool)
        if component_count(A) == 1:
            return A


def test_criterion_4_averaging_time_bounds(report):
    start = time.perf_counter()
    failures = []
    cases = 0
    for n in (8, 16, 32):
        for seed in range(5):
            W = metropolis_weights(connected_geometric(n, seed))
            lam2 = spectral_report(W).lambda_2
            lo, hi = averaging_time_bounds(1e-3, lam2)
            t = empirical_averaging_time(W, 1e-3, seed=[4, n, seed])
            cases += 1
            if not lo <= t <= 10 * hi:
                failures.append(f"n={n} seed={seed}: t={t} bounds=({lo:.2f}, {hi:.2f})")
            x0 = np.random.default_rng([40, n, seed]).normal(size=n)
            trace = mixing_trace(W, x0, 60)
            for a, b in zip(trace, trace[1:]):
                if b > lam2 ** 2 * a + 1e-12:
                    failures.append(f"n={n} seed={seed}: contraction {b} > {lam2 ** 2} * {a}")
                    break
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 30.0
    report(4, ok, f"{cases} graphs, {len(failures)} failures {failures[:3]}, {elapsed:.2f}s")


# ------------------------------------------------------------------ 5

def test_criterion_5_dk_means_invariants(report):
    start = time.perf_counter()
    problems = []
    for s in range(500):
        rng = np.random.default_rng([5, s])
        n = int(rng.integers(1, 101))
        r = float(rng.choice([15, 30, 60]))
        cfg = ClusteringConfig(k_init=int(rng.integers(1, 11)), max_iterations=int(rng.integers(1, 8)))
        devs = [make_device(i, p, comm_range=r) for i, p in enumerate(rng.uniform(0, 100, (n, 2)))]
        g = snapshot_topology(devs)
        out = dk_means(devs, g, cfg, seed=[5, s])
        members = [m for c in out for m in c.members]
        if sorted(members) != list(range(n)):
            problems.append((s, "partition"))
        if any(c.head not in c.members for c in out):
            problems.append((s, "head membership"))
        if not 1 <= out.iterations <= cfg.max_iterations:
            problems.append((s, "termination"))
        if len(out) < component_count(g.adjacency):
            problems.append((s, "component count"))
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 30.0
    report(5, ok, f"500 configurations, {len(problems)} violations {problems[:3]}, {elapsed:.2f}s")


# ------------------------------------------------------------------ 6

def test_criterion_6_dfl_matches_cfl_iid(report):
    lines, ok = [], True
    for seed in SEEDS:
        start = time.perf_counter()
        dfl = run("iid-30", seed)
        cfl = run("iid-30", seed, CFL)
        elapsed = time.perf_counter() - start
        cfl_rows = harness.network_rows(cfl.records)
        cfl_plateau = harness.plateau(cfl.records)
        dfl_final = final_accuracy(dfl)
        gap = abs(dfl_final - cfl_plateau)
        # CFL "plateaus within 3 rounds": round-3 accuracy within 1 point of its plateau
        settle = abs(cfl_rows[2].mean_accuracy - cfl_plateau)
        seed_ok = gap <= 0.02 and settle <= 0.01 and elapsed < 180
        ok &= seed_ok
        lines.append(f"seed {seed}: DFL {dfl_final:.4f} vs CFL plateau {cfl_plateau:.4f} "
                     f"(gap {gap:.4f}), CFL r3 off plateau {settle:.4f}, {elapsed:.1f}s")
    report(6, ok, "; ".join(lines))


# ------------------------------------------------------------------ 7

def test_criterion_7_non_iid_degradation(report):
    start = time.perf_counter()
    acc = {}
    for name in ("alpha-10", "alpha-0.5", "alpha-0.1"):
        acc[name] = [final_accuracy(run(name, s)) for s in SEEDS]
    elapsed = time.perf_counter() - start
    m = {k: float(np.mean(v)) for k, v in acc.items()}
    ok = (m["alpha-10"] >= m["alpha-0.5"] >= m["alpha-0.1"]
          and m["alpha-10"] - m["alpha-0.1"] >= 0.03 and elapsed < 600)
    per_seed = ", ".join(f"{k} {np.round(v, 4).tolist()}" for k, v in acc.items())
    report(7, ok, f"seed means a10 {m['alpha-10']:.4f} >= a0.5 {m['alpha-0.5']:.4f} >= "
                  f"a0.1 {m['alpha-0.1']:.4f}, drop {m['alpha-10'] - m['alpha-0.1']:.4f} "
                  f"({per_seed}), {elapsed:.1f}s")


# ------------------------------------------------------------------ 8

def test_criterion_8_range_trend(report):
    rounds = {name: [rounds_to_95(run(name, s)) for s in SEEDS]
              for name in ("range-15", "range-60", "range-100")}
    ok = True
    for i in range(len(SEEDS)):
        r15, r60, r100 = rounds["range-15"][i], rounds["range-60"][i], rounds["range-100"][i]
        ok = ok and None not in (r15, r60, r100) and r60 <= r15 and abs(r60 - r100) <= 1
    report(8, ok, f"rounds to 95% of plateau per seed: {rounds}")


# ------------------------------------------------------------------ 9

def test_criterion_9_no_pairing_violations(report):
    # every DFL run made so far already passed the inline check (a violation
    # raises inside the round); here the recorded pairings are re-validated
    # from the logged positions and clusters
    for name in ("iid-30", "alpha-0.1", "emd-clustering"):
        run(name, 0)
    violations, pairs_seen, runs = [], 0, 0
    for (name, seed, method), out in _RUNS.items():
        if method != DFL:
            continue
        runs += 1
        r = harness.preset(name).field.comm_range
        for rnd, topo in zip(out.rounds, out.topology):
            pos = {d["id"]: np.array([d["x"], d["y"]]) for d in topo["devices"]}
            cl = {d["id"]: d["cluster"] for d in topo["devices"]}
            for layer, iterations in rnd["pairings"].items():
                for it in iterations:
                    used = list(itertools.chain.from_iterable(it))
                    if len(used) != len(set(used)):
                        violations.append((name, seed, rnd["round"], layer, "overlap"))
                    for a, b in it:
                        pairs_seen += 1
                        if np.linalg.norm(pos[a] - pos[b]) > r:
                            violations.append((name, seed, rnd["round"], layer, "range", a, b))
                        same = cl[a] == cl[b]
                        if (layer == "intra") != same:
                            violations.append((name, seed, rnd["round"], layer, "eligibility", a, b))
    ok = not violations and pairs_seen > 0
    report(9, ok, f"{runs} DFL runs, {pairs_seen} pairs re-checked, {len(violations)} violations "
                  f"{violations[:3]}")


# ------------------------------------------------------------------ 10

def test_criterion_10_determinism(report):
    cfg = harness.preset("iid-30")
    a = to_csv(harness.simulate(cfg).records).encode()
    b = to_csv(harness.simulate(cfg).records).encode()
    report(10, a == b, f"iid-30 metrics CSV {len(a)} bytes, identical={a == b}")
