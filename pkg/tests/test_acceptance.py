"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line.

Criteria 6 and 7 train the default benchmark for five seeds and all six
assembling strategies (30 runs); expect several minutes on one CPU core.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from loga import tensor as T
from loga.assembler import assemble_batch, assemble_strategy, build_model, gcq_scores
from loga.config import STRATEGIES, DatasetConfig, ModelConfig, TrainConfig
from loga.datagen import Dataset, generate_dataset
from loga.encoder import Clip
from loga.harness.checkpoint import load_checkpoint, save_checkpoint
from loga.harness.experiments import score_separation
from loga.harness.gradcheck import GradcheckConfig, gradcheck
from loga.harness.metrics import evaluate_rankings
from loga.harness.training import describe_clips, evaluate, train
from loga.objectives import id_loss, triplet_loss
from loga.params import ParameterStore
from loga.tensor import BatchNormStats, Tensor

from conftest import ACCEPTANCE_LINES
from oracles import batchnorm_oracle, conv1d_oracle, matmul_oracle, ranking_oracle, softmax_oracle

SEEDS = range(5)


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_fidelity():
    t0 = time.perf_counter()
    worst, failures = 0.0, []
    for strategy in STRATEGIES:
        for mining in ("random", "batch_hard"):
            r = gradcheck(GradcheckConfig(strategy=strategy, mining=mining))
            worst = max(worst, max(r.errors.values()))
            failures += [f"{strategy}/{mining}:{g}" for g in r.failures]
    elapsed = time.perf_counter() - t0
    ok = not failures and worst < 1e-4 and elapsed < 120
    report(1, ok, f"max rel err {worst:.2e} (< 1e-4) over 6 strategies x 2 minings, {elapsed:.1f}s (< 120s) {failures}")


# ---------------------------------------------------------------- 2


def test_criterion_2_kernel_oracles():
    t0 = time.perf_counter()
    worst = {}
    for dtype, tol in ((np.float32, 1e-6), (np.float64, 1e-9)):
        rng = np.random.default_rng(0)
        errs = {"conv1d": 0.0, "softmax": 0.0, "matmul": 0.0, "batchnorm": 0.0}
        for _ in range(200):
            cin, cout, s, stride = (int(v) for v in rng.integers(1, 4, size=4))
            x = rng.uniform(-1, 1, (cin, int(rng.integers(s, s + 8)))).astype(dtype)
            k = rng.uniform(-1, 1, (cout, cin, s)).astype(dtype)
            errs["conv1d"] = max(errs["conv1d"], np.abs(T.conv1d(Tensor(x), Tensor(k), stride).data - conv1d_oracle(x, k, stride)).max())

            v = rng.uniform(-5, 5, int(rng.integers(1, 12))).astype(dtype)
            errs["softmax"] = max(errs["softmax"], np.abs(T.softmax(Tensor(v)).data - softmax_oracle(v)).max())

            n, kk, m = (int(v) for v in rng.integers(1, 6, size=3))
            a, b = rng.uniform(-1, 1, (n, kk)).astype(dtype), rng.uniform(-1, 1, (kk, m)).astype(dtype)
            errs["matmul"] = max(errs["matmul"], np.abs(T.matmul(Tensor(a), Tensor(b)).data - matmul_oracle(a, b)).max())

            n, c = int(rng.integers(2, 8)), int(rng.integers(1, 5))
            xb = rng.uniform(-1, 1, (n, c)).astype(dtype)
            g, bt = rng.uniform(0.5, 1.5, c).astype(dtype), rng.uniform(-0.5, 0.5, c).astype(dtype)
            stats = BatchNormStats(np.zeros(c, dtype), np.ones(c, dtype))
            got = T.batchnorm(Tensor(xb), Tensor(g), Tensor(bt), stats, "train", channel_axis=1).data
            errs["batchnorm"] = max(errs["batchnorm"], np.abs(got - batchnorm_oracle(xb, g, bt, 1e-5)).max())
        worst[np.dtype(dtype).name] = (errs, tol)
    elapsed = time.perf_counter() - t0
    ok = all(e < tol for errs, tol in worst.values() for e in errs.values()) and elapsed < 60
    detail = "; ".join(f"{d}: " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f" (tol {tol:.0e})" for d, (errs, tol) in worst.items())
    report(2, ok, f"200 instances per kernel and dtype, {detail}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 3


def test_criterion_3_score_invariants():
    cfg = ModelConfig(clip_len=10, height=32, width=16, feature_dim=64, part_size=10, num_classes=16)
    store = build_model(cfg, seed=1, dtype=np.float32)
    rng = np.random.default_rng(2)
    for head in "qkv":
        store.buffers[f"gcq.{head}.bn.running_mean"][...] = rng.normal(size=64) * 0.1
        store.buffers[f"gcq.{head}.bn.running_var"][...] = rng.uniform(0.5, 2.0, 64)
    clips = rng.random((1000, 10, 1, 32, 16)).astype(np.float32)
    out = assemble_batch(clips, store, cfg, "associative", "eval")
    sum_err = max(np.abs(out.w_local.data.sum(1) - 1).max(), np.abs(out.w_global.data.sum(1) - 1).max())
    E, p = out.features.data, out.p.data
    hull = bool(((p >= E.min(2) - 1e-6) & (p <= E.max(2) + 1e-6)).all())
    store64 = store.copy(np.float64)
    E64, p64 = E.astype(np.float64), p.astype(np.float64)
    perms = np.stack([rng.permutation(10) for _ in range(1000)])
    w = gcq_scores(Tensor(E64), Tensor(p64), store64, cfg, "eval").data
    wp = gcq_scores(Tensor(np.take_along_axis(E64, perms[:, None, :], 2)), Tensor(p64), store64, cfg, "eval").data
    equi = float(np.abs(wp - np.take_along_axis(w, perms, 1)).max())
    ok = sum_err < 1e-6 and hull and equi <= 1e-7
    report(3, ok, f"1000 clips: max |sum-1| {sum_err:.1e} (< 1e-6), convex hull {hull}, permutation err {equi:.1e} (<= 1e-7)")


# ---------------------------------------------------------------- 4


def test_criterion_4_residual_identity():
    cfg = ModelConfig()
    rng = np.random.default_rng(3)
    same = 0
    for seed in range(20):
        store = build_model(cfg, seed=seed)
        clip = Clip(rng.random((10, 1, 32, 16)).astype(np.float32), 0, 0)
        a = assemble_strategy(clip, store, cfg, "associative").x.data
        b = assemble_strategy(clip, store, cfg, "laq_only").x.data
        same += a.tobytes() == b.tobytes()
    report(4, same == 20, f"{same}/20 freshly initialised models give bit-identical associative and laq_only descriptors")


# ---------------------------------------------------------------- 5


def test_criterion_5_metric_oracles():
    exact = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        nq, ng = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        while True:
            q_ids, g_ids = rng.integers(0, 4, nq), rng.integers(0, 4, ng)
            q_cams, g_cams = rng.integers(0, 2, nq), rng.integers(0, 2, ng)
            if any(((g_ids == q_ids[i]) & (g_cams != q_cams[i])).any() for i in range(nq)):
                break
        sim = rng.integers(-3, 4, (nq, ng)) / 3.0  # coarse values force ties
        r = evaluate_rankings(sim, q_ids, g_ids, q_cams, g_cams, max_rank=16)
        cmc, mean_ap, _ = ranking_oracle(sim, q_ids, g_ids, q_cams, g_cams, 16)
        exact += r.cmc.tolist() == cmc and r.map == mean_ap
    hand = evaluate_rankings(np.array([[0.9, 0.5, 0.1]]), np.array([1]), np.array([1, 2, 1]), np.array([0]), np.array([1, 1, 1]))
    hand_ok = hand.map == 5 / 6
    report(5, exact == 50 and hand_ok, f"{exact}/50 random instances exactly equal the brute-force oracle; hand case AP={hand.map!r} (5/6: {hand_ok})")


# ---------------------------------------------------------------- 6 and 7


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    """Train every strategy on the default benchmark for each seed."""
    root = tmp_path_factory.mktemp("benchmark")
    runs = {}
    for seed in SEEDS:
        ds = Dataset.load(generate_dataset(DatasetConfig(seed=seed), root / f"seed{seed}"))
        for strategy in STRATEGIES:
            t0 = time.perf_counter()
            ckpt = train(TrainConfig(seed=seed, strategy=strategy), ds)
            elapsed = time.perf_counter() - t0
            sep = score_separation(ckpt, ds) if strategy == "associative" else None
            runs[seed, strategy] = (evaluate(ckpt, ds), elapsed, sep)
    return runs


@pytest.mark.slow
def test_criterion_6_noise_separation(benchmark):
    seps = [benchmark[s, "associative"][2] for s in SEEDS]
    n = sum(s.num_clips for s in seps)
    local = sum(s.local * s.num_clips for s in seps) / n
    glob = sum(s.global_ * s.num_clips for s in seps) / n
    slowest = max(benchmark[s, "associative"][1] for s in SEEDS)
    per_seed = ", ".join(f"{s.local:.2f}/{s.global_:.2f}" for s in seps)
    ok = local >= 0.9 and glob >= 0.9 and slowest < 900
    report(
        6,
        ok,
        f"{n} corrupted clips over 5 seeds: w_local lower in {local:.3f}, w_global lower in {glob:.3f} (need >= 0.9 each); "
        f"per seed local/global {per_seed}; slowest training {slowest:.0f}s (< 900s)",
    )


@pytest.mark.slow
def test_criterion_7_strategy_ordering(benchmark):
    mean_map = {st: float(np.mean([benchmark[s, st][0].map for s in SEEDS])) for st in STRATEGIES}
    best_other = max(v for k, v in mean_map.items() if k != "associative")
    ok = mean_map["associative"] >= best_other and mean_map["associative"] > mean_map["mean_pool"]
    table = ", ".join(f"{k} {100 * v:.1f}" for k, v in sorted(mean_map.items(), key=lambda kv: -kv[1]))
    margin = 100 * (mean_map["associative"] - best_other)
    report(7, ok, f"mean mAP over 5 seeds: {table}; margin over best alternative {margin:+.1f}")


# ---------------------------------------------------------------- 8


def test_criterion_8_determinism_and_persistence(tmp_path):
    a = generate_dataset(DatasetConfig(seed=0), tmp_path / "a")
    b = generate_dataset(DatasetConfig(seed=0), tmp_path / "b")
    same_bytes = all((a / p.name).read_bytes() == p.read_bytes() for p in b.iterdir()) and len(list(a.iterdir())) == len(list(b.iterdir()))
    ds = Dataset.load(a)
    cfg = TrainConfig(seed=0, epochs=2)
    r1, r2 = train(cfg, ds), train(cfg, ds)
    same_losses = [h["total"] for h in r1.history] == [h["total"] for h in r2.history]
    e1, e2 = evaluate(r1, ds), evaluate(r2, ds)
    same_eval = e1.map == e2.map and e1.cmc.tolist() == e2.cmc.tolist() and e1.average_precision == e2.average_precision
    save_checkpoint(r1, tmp_path / "m.ckpt")
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    clips = ds.frames[np.concatenate([ds.indices("query"), ds.indices("gallery")])]
    same_desc = describe_clips(r1, clips).x.data.tobytes() == describe_clips(loaded, clips).x.data.tobytes()
    ok = same_bytes and same_losses and same_eval and same_desc
    report(
        8,
        ok,
        f"dataset byte-identical {same_bytes}, losses identical {same_losses} ({len(r1.history)} steps), "
        f"EvalResult identical {same_eval}, reloaded descriptors bit-identical {same_desc}",
    )


# ---------------------------------------------------------------- 9


def test_criterion_9_loss_arithmetic():
    errs = []
    for C in (2, 10, 16, 625):
        store = ParameterStore(np.float64)
        store.add("classifier.weight", np.zeros((C, 8)))
        store.add("classifier.bias", np.zeros(C))
        errs.append(abs(id_loss(Tensor(np.ones(8)), 1, store).item() - math.log(C)))
    a = Tensor([0.0, 0.0], dtype=np.float64)

    def hinge(dp, dn):
        return triplet_loss(a, Tensor([dp, 0.0], dtype=np.float64), Tensor([0.0, dn], dtype=np.float64), 0.3).item()

    h1, h2 = hinge(0.2, 0.6), hinge(0.5, 0.3)
    ok = max(errs) < 1e-9 and abs(h1) < 1e-12 and abs(h2 - 0.5) < 1e-12
    report(9, ok, f"max |id_loss - ln C| {max(errs):.1e} (< 1e-9); hinge(0.2, 0.6) = {h1!r}, hinge(0.5, 0.3) = {h2!r}")
