import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepchron.chronnectome import (
    BoldTimeSeries,
    InsufficientDataError,
    WindowSpec,
    compute_dfc,
    num_links,
    read_dfc_csv,
    read_scan_csv,
    sliding_windows,
    static_fc,
    unvectorize_upper,
    vectorize_upper,
    window_fc,
    write_dfc_csv,
    write_scan_csv,
)
from deepchron.numerics import Rng, pearson


def enumerate_starts(n, length, stride):
    starts, s = [], 0
    while s + length <= n:
        starts.append(s)
        s += stride
    return starts


def pairwise_oracle(signals):
    m = signals.shape[0]
    out = np.eye(m)
    for i in range(m):
        for j in range(m):
            if i != j:
                out[i, j] = pearson(signals[i], signals[j])
    return out


def make_ts(m, n, seed=0):
    return BoldTimeSeries("s1", "s1_0", Rng(seed).normal(size=(m, n)))


def test_window_counts():
    assert len(sliding_windows(136, WindowSpec(30, 2))) == 54
    assert sliding_windows(30, WindowSpec(30, 1)) == [(0, 30)]
    assert [w[0] for w in sliding_windows(10, WindowSpec(4, 3))] == [0, 3, 6]


def test_window_count_formula_vs_enumeration():
    for n in range(1, 201):
        for length in range(1, n + 1, 7):
            for stride in range(1, 11):
                got = [w[0] for w in sliding_windows(n, WindowSpec(length, stride))]
                assert got == enumerate_starts(n, length, stride)


def test_window_too_long():
    with pytest.raises(InsufficientDataError):
        sliding_windows(20, WindowSpec(30, 2))


def test_window_fc_examples():
    s = Rng(1).normal(size=12)
    same = BoldTimeSeries("a", "a", np.vstack([s, s, s]))
    np.testing.assert_allclose(window_fc(same, (0, 12)).values, np.ones((3, 3)), atol=1e-12)
    anti = BoldTimeSeries("a", "a", np.vstack([s, -s]))
    assert window_fc(anti, (0, 12)).values[0, 1] == pytest.approx(-1.0, abs=1e-12)
    ts = make_ts(3, 5, seed=4)
    np.testing.assert_allclose(window_fc(ts, (0, 5)).values, pairwise_oracle(ts.signals), atol=1e-12)


def test_window_fc_invariants():
    fc = window_fc(make_ts(6, 40), (3, 33)).values
    np.testing.assert_allclose(fc, fc.T, atol=1e-12)
    assert np.all(np.diag(fc) == 1.0)
    assert np.all(np.abs(fc) <= 1.0)


def test_constant_roi_is_flagged():
    sig = Rng(2).normal(size=(3, 20))
    sig[1, :10] = 4.0
    ts = BoldTimeSeries("a", "a", sig)
    fc = window_fc(ts, (0, 10))
    assert fc.degenerate_rois == (1,)
    assert fc.values[1, 0] == 0.0 and fc.values[1, 2] == 0.0 and fc.values[1, 1] == 1.0
    dfc = compute_dfc(ts, WindowSpec(10, 10))
    assert dfc.degenerate == [(0, 1)]
    assert np.all(np.isfinite(dfc.rows))


def test_vectorize_order_and_lengths():
    assert num_links(116) == 6670
    assert vectorize_upper(np.eye(116)).size == 6670
    fc = np.array([[1, .5], [.5, 1]])
    np.testing.assert_array_equal(vectorize_upper(fc), [0.5])
    m = np.arange(16, dtype=float).reshape(4, 4)
    # entries (1,2),(1,3),(1,4),(2,3),(2,4),(3,4) in 1-based indexing
    np.testing.assert_array_equal(vectorize_upper(m), [1, 2, 3, 6, 7, 11])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 1000))
def test_vectorize_roundtrip(m, seed):
    fc = window_fc(make_ts(m, 25, seed), (0, 25)).values
    np.testing.assert_array_equal(unvectorize_upper(vectorize_upper(fc), m), fc)


def test_compute_dfc_reference_shape():
    dfc = compute_dfc(make_ts(116, 136), WindowSpec(30, 2))
    assert dfc.rows.shape == (54, 6670)
    assert np.all(np.abs(dfc.rows) <= 1.0)


def test_compute_dfc_rows_match_per_window_oracle():
    ts = make_ts(5, 23, seed=9)
    dfc = compute_dfc(ts, WindowSpec(8, 3))
    for t, (a, b) in enumerate(sliding_windows(23, WindowSpec(8, 3))):
        oracle = pairwise_oracle(ts.signals[:, a:b])
        np.testing.assert_allclose(dfc.rows[t], oracle[np.triu_indices(5, 1)], atol=1e-12)


def test_full_length_window_equals_static_fc():
    ts = make_ts(5, 40, seed=3)
    for stride in (1, 4):
        dfc = compute_dfc(ts, WindowSpec(40, stride))
        assert dfc.num_windows == 1
        np.testing.assert_array_equal(dfc.rows[0], static_fc(ts))
    np.testing.assert_allclose(static_fc(ts), pairwise_oracle(ts.signals)[np.triu_indices(5, 1)],
                               atol=1e-12)


def test_compute_dfc_deterministic():
    ts = make_ts(8, 60)
    assert compute_dfc(ts).rows.tobytes() == compute_dfc(ts).rows.tobytes()


def test_csv_roundtrip(tmp_path):
    ts = make_ts(4, 35)
    write_scan_csv(tmp_path / "scan.csv", ts)
    assert (tmp_path / "scan.csv").read_text().splitlines()[0] == "roi_0,roi_1,roi_2,roi_3"
    back = read_scan_csv(tmp_path / "scan.csv")
    np.testing.assert_array_equal(back.signals, ts.signals)
    dfc = compute_dfc(ts, WindowSpec(30, 2))
    write_dfc_csv(tmp_path / "dfc.csv", dfc)
    header = (tmp_path / "dfc.csv").read_text().splitlines()[0]
    assert header == "w," + ",".join(f"link_{d}" for d in range(6))
    again = read_dfc_csv(tmp_path / "dfc.csv")
    np.testing.assert_array_equal(again.rows, dfc.rows)
    assert again.num_rois == 4


def test_bad_scan_header(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n3,4\n")
    with pytest.raises(ValueError):
        read_scan_csv(tmp_path / "x.csv")
