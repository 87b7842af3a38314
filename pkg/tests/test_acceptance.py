"""Acceptance criteria 1-9, one test each.

Each test records a PASS/FAIL line which is printed at the end of the
session. Run directly with ``python tests/test_acceptance.py``.
"""

import math
import time
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest

from selexit import pipeline
from selexit.dc_data import ConfidenceProfile, label_hard
from selexit.dc_training import dc_loss_batch
from selexit.ec_training import ec_loss_batch
from selexit.gating import GoldOracle, Thresholds, evaluate, infer, speedup_ratio
from selexit.data import Dataset
from selexit.model import MultiExitModel
from selexit.theory import BoundSpec, lemma_bound, simulate_pipeline, theorem_bound

from oracles import binomial_se, brute_force_gate, brute_force_metrics, central_difference, relative_error

RESULTS = []
TOY_SEEDS = range(5)


def check(cid, ok, detail):
    line = f"criterion {cid}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------


def test_c1_bound_formula():
    lb, tb = lemma_bound(0.2, 0.1), theorem_bound(0.3, 0.1)
    reps = 1000
    t0 = time.perf_counter()
    for _ in range(reps):
        lemma_bound(0.2, 0.1)
        theorem_bound(0.3, 0.1)
    per_call = (time.perf_counter() - t0) / reps
    ok = 0.3076 <= lb <= 0.3078 and 0.2058 <= tb <= 0.2060 and per_call < 1e-3
    check(1, ok, f"lemma(0.2,0.1)={lb:.6f} theorem(0.3,0.1)={tb:.6f} time/pair={per_call * 1e6:.1f}us")


# 2 ---------------------------------------------------------------------------


def test_c2_monte_carlo():
    t0 = time.perf_counter()
    worst, fails = -math.inf, []
    for q in (0.1, 0.2, 0.3, 0.4):
        for g in (0.05, 0.1, 0.2):
            qd = 0.9 * lemma_bound(q, g)
            res = simulate_pipeline(BoundSpec.uniform(4, q, qd, g, a=0.9, b=0.6), 100_000, seed=0)
            margin = g + 3 * binomial_se(res.risk, int(res.covered.sum())) - res.risk
            worst = max(worst, res.risk - g)
            if not margin > 0:
                fails.append((q, g, res.risk))
    elapsed = time.perf_counter() - t0
    check(2, not fails and elapsed < 30,
          f"12 cells, max(risk - gamma)={worst:.4f}, failures={fails}, {elapsed:.2f}s")


# 3 ---------------------------------------------------------------------------


def test_c3_gradients():
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d, w, n, c = (int(v) for v in rng.integers([2, 3, 1, 2], [5, 6, 5, 4]))
        model = MultiExitModel.build(d, w, n, c, seed=seed, activation=("tanh", "relu")[seed % 2],
                                     shared_dc=seed % 3 == 0)
        for p in model.dc_params():
            p += 0.3 * rng.standard_normal(p.shape)
        X = rng.standard_normal((6, d))
        y = rng.integers(0, c, 6)
        z = np.array([0, 1, 0, 1, 1, 0])
        _, _, g_ec = ec_loss_batch(model, X, y)
        num_ec = central_difference(lambda: ec_loss_batch(model, X, y)[0], model.ec_params())
        _, _, g_dc = dc_loss_batch(model, X, z)
        num_dc = central_difference(lambda: dc_loss_batch(model, X, z)[0], model.dc_params())
        for a, b in zip(g_ec + g_dc, num_ec + num_dc):
            worst = max(worst, relative_error(a, b))
    check(3, worst < 1e-4, f"10 models, worst relative error {worst:.2e}")


# 4 ---------------------------------------------------------------------------


def _oracle_scores(ec_bias, dc_bias):
    e = np.exp(ec_bias - ec_bias.max(axis=1, keepdims=True))
    conf = (e / e.sum(axis=1, keepdims=True)).max(axis=1)
    hard = np.where(dc_bias >= 0, 1 / (1 + np.exp(-dc_bias)), np.exp(dc_bias) / (1 + np.exp(dc_bias)))
    return conf, hard


def test_c4_gate_equivalence():
    rng = np.random.default_rng(4)
    mismatches = 0
    sequences = 10_000
    for k in range(sequences):
        n = int(rng.integers(1, 7))
        c = int(rng.integers(2, 4))
        model = MultiExitModel.build(2, 3, n, c, seed=k)
        for layer in model.backbone + model.exit_heads + model.deferral_heads:
            layer.weights[...] = 0.0
            layer.bias[...] = 0.0
        ec_bias = rng.normal(0, 2, (n, c))
        dc_bias = rng.normal(0, 2, n)
        for i in range(n):
            model.exit_heads[i].bias[...] = ec_bias[i]
            model.deferral_heads[i].bias[...] = dc_bias[i]
        conf, hard = _oracle_scores(ec_bias, dc_bias)
        alpha, beta = rng.random(), rng.random()
        if k % 4 == 0:  # thresholds exactly on a realised score
            alpha = float(conf[rng.integers(n)])
        if k % 4 == 1:
            beta = float(hard[rng.integers(n)])
        trace = brute_force_gate(conf, hard, alpha, beta)
        _, out = infer(model, np.zeros(2), Thresholds(alpha, beta), GoldOracle([0]), 0)
        got = ["continue"] * (len(out.visited) - 1) + [out.decision.value]
        mismatches += got != trace
    check(4, mismatches == 0, f"{sequences} sequences, {mismatches} mismatching traces")


# 5 ---------------------------------------------------------------------------


def test_c5_metric_oracles():
    rng = np.random.default_rng(5)
    mismatches, out_of_range = 0, 0
    for k in range(100):
        n, c, d = int(rng.integers(1, 7)), int(rng.integers(2, 4)), 3
        model = MultiExitModel.build(d, 5, n, c, seed=k)
        for p in model.dc_params() + model.ec_params():
            p *= rng.uniform(0.5, 3)
        X = rng.standard_normal((int(rng.integers(1, 80)), d))
        y = rng.integers(0, c, len(X))
        th = Thresholds(rng.uniform(0.3, 1.0), rng.random())
        m = evaluate(model, Dataset(X, y, c), th)
        probs, conf, hard = model.scores(X)
        correct = probs.argmax(axis=2) == y[:, None]
        cov, risk, sp, hist = brute_force_metrics(conf, hard, correct, th.alpha, th.beta)
        mismatches += (m.coverage, m.risk, m.speedup, list(m.exit_hist)) != (cov, risk, sp, hist)
        out_of_range += not 1 <= m.speedup <= n
    worked = np.zeros(12)
    worked[3], worked[11] = 50, 50
    sp = speedup_ratio(worked)
    check(5, mismatches == 0 and out_of_range == 0 and sp == 1.5,
          f"100 traces, {mismatches} mismatches, {out_of_range} speedups outside [1, n], worked case {sp}")


# 6 ---------------------------------------------------------------------------


def _round_half_up(k, m):
    return int((Decimal(repr(k)) * m / 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def test_c6_labeling():
    rng = np.random.default_rng(6)
    bad = []
    for trial in range(300):
        m = int(rng.integers(1, 200))
        k = float(rng.choice([33, 50, 0.5, 99.5, 12.5, float(rng.uniform(0.01, 99.99))]))
        mu = np.round(rng.random(m), int(rng.integers(1, 4)))  # coarse values force ties
        ids = rng.permutation(m) + 1000
        profiles = [ConfidenceProfile(int(i), np.array([v]), float(v), 0.0) for i, v in zip(ids, mu)]
        labeled = label_hard(profiles, k)
        z = dict(zip(labeled.ids.tolist(), labeled.z.tolist()))
        hard = [(p.mu, p.sample_id) for p in profiles if z[p.sample_id] == 1]
        easy = [(p.mu, p.sample_id) for p in profiles if z[p.sample_id] == 0]
        if len(hard) != _round_half_up(k, m) or (hard and easy and max(hard) > min(easy)):
            bad.append((trial, m, k))
    default = label_hard.__defaults__[0]
    check(6, not bad and default == 33, f"300 profile sets, {len(bad)} violations, default K={default}")


# 7-9 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    runs = {}
    for seed in TOY_SEEDS:
        run = pipeline.Run(tmp_path_factory.mktemp(f"seed{seed}") / "run")
        run.root.mkdir(parents=True)
        t0 = time.perf_counter()
        pipeline.run_all(run, pipeline.default_config(), seed=seed)
        runs[seed] = (run, time.perf_counter() - t0)
    return runs


def _coverage_column(path):
    rows = path.read_text().splitlines()[1:]
    return [float(r.split(",")[1]) for r in rows]


def test_c7_end_to_end(toy_runs):
    per_seed, wins, ok_all = [], 0, True
    for seed, (run, elapsed) in toy_runs.items():
        r = run.read()["phases"]["infer"]["results"]
        t, s = r["test"], r["test_shifted"]
        curves_ok = all(
            all(b >= a for a, b in zip(cov, cov[1:]))
            for cov in (_coverage_column(run.path(f"reports/curve_{n}.csv")) for n in pipeline.EVAL_SETS)
        )
        matched = abs(s["baseline_matched_coverage"] - s["coverage"]) <= 0.02
        win = matched and s["risk"] <= s["baseline_matched_risk"]
        wins += win
        seed_ok = (t["risk"] < t["full_coverage_risk"] and t["coverage"] >= 0.7 and t["speedup"] >= 1.2
                   and curves_ok and elapsed < 300)
        ok_all &= seed_ok
        per_seed.append(
            f"seed {seed}: risk {t['risk']:.4f} < full {t['full_coverage_risk']:.4f}, "
            f"cov {t['coverage']:.3f}, speedup {t['speedup']:.2f}, shifted {s['risk']:.4f} vs "
            f"baseline {s['baseline_matched_risk']:.4f}, {elapsed:.1f}s"
        )
    check(7, ok_all and wins >= 4, f"shifted wins {wins}/5; " + "; ".join(per_seed))


def test_c8_beta_direction(toy_runs):
    bad = []
    for seed, (run, _) in toy_runs.items():
        manifest = run.read()
        model = MultiExitModel.load(run.path("model/model.json"))
        alpha = manifest["thresholds"]["alpha"]
        for name in pipeline.EVAL_SETS:
            ds = run.dataset(name, manifest)
            cov = [evaluate(model, ds, Thresholds(alpha, b)).coverage for b in (0.55, 0.65, 0.75)]
            if not cov[0] <= cov[1] <= cov[2]:
                bad.append((seed, name, cov))
    check(8, not bad, f"5 seeds x {len(pipeline.EVAL_SETS)} splits at tuned alpha, violations {bad}")


def test_c9_determinism(toy_runs, tmp_path):
    differing, compared = [], 0
    for seed, (run, _) in toy_runs.items():
        again = pipeline.Run(tmp_path / f"again{seed}")
        again.root.mkdir()
        pipeline.run_all(again, pipeline.load_config(run.path("manifest.json")))
        for p in sorted(run.root.rglob("*.csv")):
            rel = p.relative_to(run.root)
            compared += 1
            if not again.path(rel).exists() or again.path(rel).read_bytes() != p.read_bytes():
                differing.append(f"seed{seed}/{rel}")
    check(9, not differing and compared > 0, f"{compared} CSV artifacts re-run, differing: {differing}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
