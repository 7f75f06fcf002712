"""Acceptance gate. One PASS/FAIL line per criterion is printed in the pytest summary.

Run alone with ``pytest tests/test_acceptance.py -v``; criteria 4-6 train
dozens of recurrent models and take tens of minutes on one CPU core.
"""

import json
import time

import numpy as np
import pytest

from deepchron.chronnectome import BoldTimeSeries, WindowSpec, compute_dfc, num_links, sliding_windows
from deepchron.cli import main, sha256_file
from deepchron.datagen import PRESETS, generate_corpus
from deepchron.evaluation import SubjectRecord, augment, make_folds, mann_whitney_auc, roc_curve, run_protocol, trapezoid_auc
from deepchron.gradcheck import gradcheck
from deepchron.methods import build_method
from deepchron.numerics import Rng
from deepchron.recurrent_nets import VARIANTS
from deepchron.training import TrainConfig

pytestmark = pytest.mark.acceptance

# Desk-scale schedule for the synthetic benchmarks: larger step, short budget.
BENCH_TRAIN = TrainConfig(lr0=0.01, max_epochs=10, patience_epochs=4)
BENCH_SEEDS = (0, 1, 2)
ABLATION_SEEDS = (0, 1, 2, 3, 4)

_datasets: dict = {}
_runs: dict = {}


def dataset(preset, seed):
    key = (preset, seed)
    if key not in _datasets:
        spec = PRESETS[preset](seed=seed)
        _datasets[key] = [SubjectRecord(s.subject_id, s.label, [compute_dfc(ts) for ts in s.scans], s.scans)
                          for s in generate_corpus(spec)]
    return _datasets[key]


def run(preset, method, seed):
    """Subject-level metrics for one method on one seeded corpus, cached across criteria."""
    key = (preset, method, seed)
    if key not in _runs:
        data = dataset(preset, seed)
        plan = make_folds({s.subject_id: s.label for s in data}, 5, seed=seed)
        t0 = time.perf_counter()
        report = run_protocol(data, build_method(method, BENCH_TRAIN), plan, seed=seed)
        _runs[key] = (report, time.perf_counter() - t0)
    return _runs[key]


def mean_auc(preset, method, seeds):
    return float(np.mean([run(preset, method, s)[0].mean["auc"] for s in seeds]))


def test_criterion_1_gradients(report_criterion):
    t0 = time.perf_counter()
    worst = {v: max(gradcheck(v, hidden=8, input_dim=12, seq_len=5, eps=1e-5).values()) for v in VARIANTS}
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-5 for e in worst.values()) and elapsed < 60
    detail = ", ".join(f"{v} {e:.1e}" for v, e in worst.items())
    assert report_criterion(1, ok, f"max rel grad error {detail} (< 1e-5); {elapsed:.1f}s (< 60s)")


def test_criterion_2_counts(report_criterion):
    d = num_links(116)
    t = len(sliding_windows(136, WindowSpec(30, 2)))
    ts = BoldTimeSeries("s", "s", Rng(0).normal(size=(4, 136)))
    t_real = compute_dfc(ts).num_windows
    crops = len(augment(compute_dfc(ts), 0, 30, 1))
    ok = (d, t, t_real, crops) == (6670, 54, 54, 25)
    assert report_criterion(2, ok, f"D={d} (6670), T={t}/{t_real} (54), crops={crops} (25)")


def test_criterion_3_auc_equivalence(report_criterion):
    rng = Rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = np.round(rng.uniform(size=n), int(rng.integers(1, 3)))  # coarse rounding forces ties
        worst = max(worst, abs(trapezoid_auc(roc_curve(scores, labels)) - mann_whitney_auc(scores, labels)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    assert report_criterion(3, ok, f"max |trapezoid - Mann-Whitney| = {worst:.1e} (<= 1e-12); {elapsed:.2f}s (< 10s)")


def test_criterion_4_order_coded(report_criterion):
    t0 = time.perf_counter()
    bil = mean_auc("order-coded", "full-bilstm", BENCH_SEEDS)
    status = mean_auc("order-coded", "dfc-status", BENCH_SEEDS)
    var = mean_auc("order-coded", "dfc-variability", BENCH_SEEDS)
    elapsed = sum(run("order-coded", m, s)[1] for m in ("full-bilstm", "dfc-status", "dfc-variability")
                  for s in BENCH_SEEDS)
    elapsed = max(elapsed, time.perf_counter() - t0)
    ok = bil >= 0.85 and 0.35 <= status <= 0.65 and 0.35 <= var <= 0.65 and elapsed < 900
    assert report_criterion(4, ok, f"order-coded AUC Full-BiLSTM {bil:.3f} (>= 0.85), dFC-status {status:.3f} "
                                   f"and dFC-variability {var:.3f} (in [0.35, 0.65]); {elapsed / 60:.1f} min (< 15)")


def test_criterion_5_occupancy_coded(report_criterion):
    t0 = time.perf_counter()
    status = mean_auc("occupancy-coded", "dfc-status", BENCH_SEEDS)
    bil = mean_auc("occupancy-coded", "full-bilstm", BENCH_SEEDS)
    elapsed = time.perf_counter() - t0
    ok = status >= 0.80 and bil >= 0.80 and elapsed < 900
    assert report_criterion(5, ok, f"occupancy-coded AUC dFC-status {status:.3f}, Full-BiLSTM {bil:.3f} "
                                   f"(both >= 0.80); {elapsed / 60:.1f} min (< 15)")


def test_criterion_6_ablation_ordering(report_criterion):
    full = mean_auc("order-coded", "full-bilstm", ABLATION_SEEDS)
    uni = mean_auc("order-coded", "full-lstm", ABLATION_SEEDS)
    last = mean_auc("order-coded", "bilstm-last", ABLATION_SEEDS)
    ok = full >= uni - 0.02 and full >= last - 0.02
    assert report_criterion(6, ok, f"mean AUC over 5 seeds Full-BiLSTM {full:.3f} vs Full-LSTM {uni:.3f} "
                                   f"and BiLSTM-Last {last:.3f} (margin 0.02)")


def test_criterion_7_leakage(report_criterion):
    rng = Rng(77)
    leaks = 0
    for i in range(100):
        n_pos, n_neg = int(rng.integers(5, 120)), int(rng.integers(5, 120))
        labels = {**{f"p{j}": 1 for j in range(n_pos)}, **{f"n{j}": 0 for j in range(n_neg)}}
        plan = make_folds(labels, 5, seed=i)
        leaks += len(plan.audit())
        tested = [s for f in plan.folds for s in f.test]
        leaks += len(tested) - len(set(tested))
    assert report_criterion(7, leaks == 0, f"{leaks} leaked subjects over 100 fold plans (0)")


def _compare(root, out):
    return main(["compare", "--manifest", str(root / "corpus" / "manifest.json"), "--out", str(out),
                 "--methods", "all", "--folds", "3", "--hidden", "6", "--epochs", "3", "--seed", "5",
                 "--no-figures"])


def test_criterion_8_determinism(tmp_path, report_criterion):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"preset": "order-coded", "num_rois": 6, "num_volumes": 100,
                                "subjects_per_class": 6}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "corpus"), "--seed", "5"]) == 0
    assert _compare(tmp_path, tmp_path / "a") == 0
    assert _compare(tmp_path, tmp_path / "b") == 0
    metric_files = sorted(p.name for p in (tmp_path / "a" / "metrics").glob("*.json"))
    same_metrics = all((tmp_path / "a" / "metrics" / n).read_bytes() == (tmp_path / "b" / "metrics" / n).read_bytes()
                       for n in metric_files)
    ckpts = sorted(p.name for p in (tmp_path / "a" / "checkpoints").glob("*.json"))
    same_ckpts = all(sha256_file(tmp_path / "a" / "checkpoints" / n) == sha256_file(tmp_path / "b" / "checkpoints" / n)
                     for n in ckpts)
    ok = same_metrics and same_ckpts and len(metric_files) == 7 and len(ckpts) == 12
    assert report_criterion(8, ok, f"{len(metric_files)} metrics JSON and {len(ckpts)} checkpoints "
                                   f"byte-identical across two compare runs")


def test_criterion_9_recipe_defaults(tmp_path, report_criterion):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"preset": "order-coded", "num_rois": 4, "num_volumes": 88,
                                "subjects_per_class": 6}))
    main(["synth", "--spec", str(spec), "--out", str(tmp_path / "corpus")])
    assert main(["train", "--manifest", str(tmp_path / "corpus" / "manifest.json"), "--out", str(tmp_path / "t")]) == 0
    echo = json.loads((tmp_path / "t" / "run_manifest.json").read_text())["config"]
    expected = "lr0=0.001, decay=1e-6, batch=32, max_epochs=200, patience=20, dropout=0.5, l1=0.0005, hidden=32"
    train = echo["train"]
    numeric = (train["lr0"], train["decay_rate"], train["batch_size"], train["max_epochs"],
               train["patience_epochs"], train["dropout_rate"], train["l1_coeff"], echo["hidden"])
    ok = echo["recipe"] == expected and numeric == (0.001, 1e-6, 32, 200, 20, 0.5, 0.0005, 32)
    assert report_criterion(9, ok, f"manifest echoes '{echo['recipe']}'")
