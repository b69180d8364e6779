"""Acceptance criteria, one test per criterion.

Training runs are expensive (minutes per simulated seed, about an hour per
ML-100k seed), so each (experiment, seed) result is cached as JSON under
``runs/acceptance``. A cache entry is reused only when both the experiment's
config hash and a fingerprint of the library source match; otherwise the run
is redone through the same ``run_seed`` path the CLI uses.

Each test appends a PASS/FAIL/SKIP line to the terminal summary.
"""
import ast
import hashlib
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from nlogic.experiment import SWEEP_GRID, ExperimentConfig, run_seed
from nlogic.metrics import cluster_variables
from nlogic.rec_pipeline import load_ratings
from nlogic.regularizers import RegWeights
from nlogic.training import TrainConfig

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / "runs" / "acceptance"
ML100K = ROOT / "data" / "ml-100k" / "u.data"
AMAZON = Path(os.environ.get("NLOGIC_AMAZON", ROOT / "data" / "amazon" / "electronics_5core.csv"))
SEEDS = (0, 1, 2, 3, 4)
EXTENDED = os.environ.get("NLOGIC_EXTENDED") == "1"

pytestmark = pytest.mark.slow


def source_fingerprint() -> str:
    """Hash of the library's syntax trees with docstrings dropped, so comment edits keep the cache."""
    h = hashlib.sha256()
    for path in sorted((ROOT / "src" / "nlogic").glob("*.py")):
        if path.name == "cli.py":   # argument parsing only; runs go through nlogic.experiment
            continue
        tree = ast.parse(path.read_text())
        for node in ast.walk(tree):
            body = getattr(node, "body", None)
            if (isinstance(body, list) and body and isinstance(body[0], ast.Expr)
                    and isinstance(body[0].value, ast.Constant) and isinstance(body[0].value.value, str)):
                node.body = body[1:] or [ast.Pass()]
        h.update(path.name.encode())
        h.update(ast.dump(tree).encode())
    return h.hexdigest()[:16]


FINGERPRINT = source_fingerprint()


def cached_run(name: str, exp: ExperimentConfig, seed: int) -> dict:
    path = CACHE / name / f"seed-{seed}.json"
    key = {"config_hash": exp.hash(), "fingerprint": FINGERPRINT, "seed": seed}
    if path.exists():
        rec = json.loads(path.read_text())
        if all(rec.get(k) == v for k, v in key.items()):
            return rec
    t0 = time.time()
    run = run_seed(exp, seed, on_epoch=lambda st: print(
        f"  {name} seed {seed} epoch {st.epoch:3d} valid {st.metric['valid']:.4f}", flush=True))
    rec = dict(key, experiment=name, seconds=round(time.time() - t0, 1), metrics=run.metrics)
    rec["valid_curve"] = [r["metric"] for r in run.curves if r["split"] == "valid"]
    if run.truth is not None:
        rec["purity"] = cluster_variables(run.model.embeddings.data, run.truth).purity
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rec, indent=1))
    return rec


def runs(name: str, exp: ExperimentConfig) -> list[dict]:
    return [cached_run(name, exp, s) for s in SEEDS]


def mean(recs, key):
    return float(np.mean([r["metrics"][key] for r in recs]))


def stderr(recs, key):
    v = [r["metrics"][key] for r in recs]
    return float(np.std(v, ddof=1) / np.sqrt(len(v)))


def verdict(log, n, ok: bool, text: str):
    line = f"{'PASS' if ok else 'FAIL'} [{n}] {text}"
    log.append(line)
    print(line)
    assert ok, line


def skip(log, n, text: str):
    line = f"SKIP [{n}] {text}"
    log.append(line)
    pytest.skip(line)


def sim_exp(lambda_l: float) -> ExperimentConfig:
    tc = TrainConfig(reg_weights=RegWeights(lambda_l, 1e-4, 1e-5), seeds=SEEDS, eval_metric="accuracy")
    return ExperimentConfig(task="sim", train=tc, id=f"sim-l{lambda_l:g}")


def rec_exp(task: str, model: str, max_users) -> ExperimentConfig:
    metric = "auc" if task == "rec-preference" else "ndcg@10"
    tc = TrainConfig(reg_weights=RegWeights(1e-5, 1e-5, 1e-6), seeds=SEEDS, eval_metric=metric)
    return ExperimentConfig(task=task, model=model, data=str(ML100K), max_users=max_users,
                            train=tc, id=f"{task}-{model}-{max_users or 'all'}")


def sim_runs(lambda_l):
    return runs(f"sim-l{lambda_l:g}", sim_exp(lambda_l))


def rec_runs(task, model, max_users=200):
    exp = rec_exp(task, model, max_users)
    return runs(exp.id, exp)


needs_ml100k = pytest.mark.skipif(not ML100K.exists(), reason="run demos/fetch_ml100k.py first")


class TestSimulated:
    def test_1_small_setting(self, criterion_log):
        recs = sim_runs(1e-2)
        acc, err = mean(recs, "accuracy"), mean(recs, "rmse")
        verdict(criterion_log, 1, acc >= 0.93 and err <= 0.23,
                f"sim n=1000 m=5000: accuracy {acc:.4f}±{stderr(recs, 'accuracy'):.4f} (>= 0.93), "
                f"rmse {err:.4f}±{stderr(recs, 'rmse'):.4f} (<= 0.23), "
                f"{np.mean([r['seconds'] for r in recs]) / 60:.1f} min/seed")

    def test_2_ablation(self, criterion_log):
        full, ablated = mean(sim_runs(1e-2), "accuracy"), mean(sim_runs(0.0), "accuracy")
        verdict(criterion_log, 2, full - ablated >= 0.02,
                f"lambda_l=1e-2 accuracy {full:.4f} vs lambda_l=0 {ablated:.4f}, "
                f"gap {100 * (full - ablated):.2f} points (>= 2)")

    def test_3_sweep_shape(self, criterion_log):
        acc = {lam: mean(sim_runs(lam), "accuracy") for lam in SWEEP_GRID}
        interior = {lam: a for lam, a in acc.items() if lam not in (SWEEP_GRID[0], SWEEP_GRID[-1])}
        best = max(interior, key=interior.get)
        curve = ", ".join(f"{lam:g}:{a:.4f}" for lam, a in acc.items())
        verdict(criterion_log, 3, interior[best] > acc[SWEEP_GRID[0]] and interior[best] > acc[SWEEP_GRID[-1]],
                f"best interior lambda_l={best:g} ({interior[best]:.4f}) above both ends; curve {curve}")

    def test_4_clustering(self, criterion_log):
        recs = sim_runs(1e-2)
        pur = [r["purity"] for r in recs]
        verdict(criterion_log, 4, float(np.mean(pur)) >= 0.90,
                f"2-means purity {np.mean(pur):.4f} (>= 0.90), per seed {[round(p, 3) for p in pur]}")


@needs_ml100k
class TestMl100k:
    def test_5_preference_ci_tier(self, criterion_log):
        nln, mf = rec_runs("rec-preference", "nln"), rec_runs("rec-preference", "biasedmf")
        a, b = mean(nln, "auc"), mean(mf, "auc")
        verdict(criterion_log, 5, a >= 0.70 and a > b,
                f"ML-100k first 200 users: NLN AUC {a:.4f}±{stderr(nln, 'auc'):.4f} (>= 0.70) "
                f"vs BiasedMF {b:.4f}±{stderr(mf, 'auc'):.4f}")

    def test_5_preference_extended_tier(self, criterion_log):
        if not EXTENDED:
            skip(criterion_log, 5, "full ML-100k tier not run (set NLOGIC_EXTENDED=1)")
        nln, mf = rec_runs("rec-preference", "nln", None), rec_runs("rec-preference", "biasedmf", None)
        a, b = mean(nln, "auc"), mean(mf, "auc")
        verdict(criterion_log, 5, a >= 0.80 and a > b,
                f"full ML-100k: NLN AUC {a:.4f} (>= 0.80) vs BiasedMF {b:.4f}")

    def test_topk_training_improves(self, criterion_log):
        gains = []
        for r in rec_runs("rec-topk", "nln"):
            curve = r["valid_curve"]
            gains.append(max(curve[1:]) / curve[0] - 1.0)
        verdict(criterion_log, "6a", min(gains) >= 0.5,
                f"top-K NLN validation nDCG@10 gain over epoch 0: min {100 * min(gains):.0f}% (>= 50%)")

    def test_6_topk(self, criterion_log):
        nln, mf = rec_runs("rec-topk", "nln"), rec_runs("rec-topk", "biasedmf")
        a, b = mean(nln, "ndcg@10"), mean(mf, "ndcg@10")
        verdict(criterion_log, 6, a > b,
                f"ML-100k first 200 users top-K: NLN nDCG@10 {a:.4f}±{stderr(nln, 'ndcg@10'):.4f} "
                f"vs BiasedMF {b:.4f}±{stderr(mf, 'ndcg@10'):.4f}")


def test_6_amazon_loader(criterion_log):
    if not AMAZON.exists():
        skip(criterion_log, "6b", f"Amazon Electronics file absent ({AMAZON})")
    n = len(load_ratings(AMAZON, "amazon-csv"))
    verdict(criterion_log, "6b", n == 1_689_188, f"Amazon Electronics rows {n} (== 1689188)")


PROPERTY_SUITE = [
    "tests/test_autodiff.py::TestFiniteDifferenceSweep",
    "tests/test_autodiff.py::TestAffine",
    "tests/test_autodiff.py::TestElementwise",
    "tests/test_autodiff.py::TestCosine",
    "tests/test_nln_model.py::TestBuildBatch::test_full_forward_gradients",
    "tests/test_logic_ast.py::TestRender::test_round_trip_10k",
    "tests/test_logic_ast.py::TestEvalTruth::test_truth_table_oracle",
    "tests/test_logic_ast.py::TestShuffle::test_truth_invariant",
    "tests/test_regularizers.py::TestTermsFromBuiltGraphs::test_values_in_open_unit_interval",
    "tests/test_regularizers.py::TestClosedForms",
    "tests/test_rec_pipeline.py::TestSplit",
    "tests/test_rec_pipeline.py::TestExpressions::test_worked_example",
    "tests/test_rec_pipeline.py::TestSampling::test_leave_one_out",
    "tests/test_training.py::TestPointwise::test_determinism",
]


def test_7_property_suite(criterion_log):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_SUITE],
                          cwd=ROOT, capture_output=True, text=True)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    verdict(criterion_log, 7, proc.returncode == 0, f"property suite: {tail}")
