import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepchron.chronnectome import DFCSequence, InsufficientDataError
from deepchron.evaluation import (
    ConfigurationError,
    SubjectRecord,
    augment,
    confusion_metrics,
    make_folds,
    majority_vote,
    mann_whitney_auc,
    roc_auc,
    roc_curve,
    run_protocol,
    trapezoid_auc,
)
from deepchron.methods import CoinFlipMethod, OracleMethod
from deepchron.numerics import Rng


def fake_dfc(t_len, d=3, sid="s", seed=0):
    rows = Rng(seed).normal(size=(t_len, d))
    return DFCSequence(sid, sid + "_scan", rows, 3)


@pytest.mark.parametrize("t_len,count", [(54, 25), (30, 1), (32, 3)])
def test_augment_counts(t_len, count):
    crops = augment(fake_dfc(t_len), 1)
    assert len(crops) == count
    assert all(c.data.shape == (30, 3) and c.label == 1 for c in crops)


def test_augment_matches_enumeration():
    for t_len in range(30, 101):
        dfc = fake_dfc(t_len, seed=t_len)
        crops = augment(dfc, 0)
        expected = [dfc.rows[s:s + 30] for s in range(t_len) if s + 30 <= t_len]
        assert len(crops) == len(expected)
        for c, e in zip(crops, expected):
            np.testing.assert_array_equal(c.data, e)


def test_augment_too_short():
    with pytest.raises(InsufficientDataError):
        augment(fake_dfc(29), 0)


def labels_for(n_pos, n_neg):
    return {**{f"p{i:03d}": 1 for i in range(n_pos)}, **{f"n{i:03d}": 0 for i in range(n_neg)}}


def test_fold_sizes_and_partition():
    subjects = labels_for(25, 25)
    plan = make_folds(subjects, k=5, seed=0)
    tests = [f.test for f in plan.folds]
    assert sorted(itertools.chain(*tests)) == sorted(subjects)
    for f in plan.folds:
        assert sum(subjects[s] for s in f.test) == 5
        assert len(f.test) - sum(subjects[s] for s in f.test) == 5
        assert {subjects[s] for s in f.val} == {0, 1}
        assert len(f.train) + len(f.val) + len(f.test) == 50


def test_fold_leakage_audit_many_seeds():
    subjects = labels_for(23, 31)
    for seed in range(100):
        plan = make_folds(subjects, seed=seed)
        assert plan.audit() == []
        tests = list(itertools.chain(*(f.test for f in plan.folds)))
        assert len(tests) == len(set(tests)) == len(subjects)


def test_audit_detects_leak():
    plan = make_folds(labels_for(10, 10))
    plan.folds[2].val.append(plan.folds[2].test[0])
    assert plan.audit() == [(2, plan.folds[2].test[0])]


def test_folds_need_enough_subjects():
    with pytest.raises(ConfigurationError):
        make_folds(labels_for(4, 10), k=5)


def test_majority_vote_cases():
    assert majority_vote([[0.2, 0.8], [0.3, 0.7], [0.9, 0.1]]) == (1, pytest.approx(1.6 / 3))
    assert majority_vote([[0.9, 0.1], [0.8, 0.2], [0.4, 0.6]])[0] == 0
    # tie on votes: mean positive probability decides
    assert majority_vote([[0.1, 0.9], [0.6, 0.4]])[0] == 1
    assert majority_vote([[0.45, 0.55], [0.9, 0.1]])[0] == 0


def test_confusion_example():
    c = confusion_metrics([1, 1, 0, 0, 0, 0, 1], [1, 1, 1, 0, 0, 0, 0])
    assert (c.tp, c.fn, c.tn, c.fp) == (2, 1, 3, 1)
    assert c.acc == pytest.approx(5 / 7)
    assert c.sen == pytest.approx(2 / 3)
    assert c.spe == pytest.approx(3 / 4)
    assert c.f1 == pytest.approx(2 / 3)
    assert c.undefined == ()


def test_confusion_undefined_ratios_are_flagged():
    c = confusion_metrics([0, 0], [0, 0])
    assert c.sen == 0.0 and "sen" in c.undefined


def test_auc_examples():
    assert mann_whitney_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert mann_whitney_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert mann_whitney_auc([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0]) == 0.5
    scores, labels = [0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0]
    brute = np.mean([float(p > n) + 0.5 * float(p == n)
                     for p in (0.9, 0.4) for n in (0.6, 0.2)])
    assert brute == 0.75
    assert mann_whitney_auc(scores, labels) == 0.75


def test_roc_curve_shape():
    pts = roc_curve([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0])
    assert pts[0] == (0.0, 0.0, float("inf"))
    assert pts[-1][:2] == (1.0, 1.0)
    assert trapezoid_auc(pts) == pytest.approx(0.75)


def test_auc_equivalence_on_random_tied_sets():
    rng = Rng(11)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 6, size=n) / 5.0  # heavy ties
        auc, pts = roc_auc(scores, labels)
        assert abs(trapezoid_auc(pts) - auc) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_monotone_invariance(seed):
    rng = Rng(seed)
    scores = rng.normal(size=20)
    labels = np.tile([0, 1], 10)
    base = mann_whitney_auc(scores, labels)
    assert mann_whitney_auc(np.exp(scores) * 3 + 1, labels) == base
    assert mann_whitney_auc(-scores, labels) == pytest.approx(1 - base)


def test_auc_needs_both_classes():
    with pytest.raises(ConfigurationError):
        mann_whitney_auc([0.1, 0.2], [1, 1])


def toy_dataset(n_per_class):
    return [SubjectRecord(f"s{lab}{i:03d}", lab, [fake_dfc(31, sid=f"s{lab}{i:03d}", seed=i)])
            for lab in (0, 1) for i in range(n_per_class)]


def test_protocol_with_oracle_is_perfect():
    data = toy_dataset(10)
    plan = make_folds({s.subject_id: s.label for s in data}, seed=0)
    report = run_protocol(data, OracleMethod(), plan)
    for name in ("acc", "sen", "spe", "f1", "auc"):
        assert report.mean[name] == 1.0
        assert report.std[name] == 0.0
    assert len(report.predictions) == 20


def test_protocol_with_coin_flip_is_chance():
    data = toy_dataset(100)
    labels = {s.subject_id: s.label for s in data}
    aucs = [run_protocol(data, CoinFlipMethod(seed), make_folds(labels, seed=seed)).mean["auc"]
            for seed in range(20)]
    assert abs(np.mean(aucs) - 0.5) < 0.1


def test_protocol_is_deterministic():
    data = toy_dataset(10)
    plan = make_folds({s.subject_id: s.label for s in data}, seed=3)
    a = run_protocol(data, CoinFlipMethod(5), plan).dumps()
    b = run_protocol(data, CoinFlipMethod(5), plan).dumps()
    assert a == b
