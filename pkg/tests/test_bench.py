import numpy as np
import pytest

from driftlab.bench import (
    ClusteredReference,
    DetectorConfig,
    EvalConfig,
    SyntheticSpec,
    categorize,
    generate,
    run_benchmark,
    run_detector,
)
from driftlab.energy import drift_degree


# -- generator -----------------------------------------------------------------


def test_no_drift_stream_is_stationary():
    spec = SyntheticSpec(total_points=20_000, n_drifts=0, seed=1)
    dataset, truth = generate(spec)
    assert truth == []
    mean = dataset.rows.mean(axis=0)
    tol = 3.0 / np.sqrt(dataset.n)
    assert np.all(np.abs(mean - np.asarray(spec.base_mean)) < tol * 3)


def test_change_points_partition_evenly():
    spec = SyntheticSpec(total_points=50_000, n_drifts=99, seed=0)
    _, truth = generate(spec)
    assert len(truth) == 99
    gaps = np.diff(truth)
    assert np.all(gaps == spec.segment_length())
    assert truth[0] == spec.segment_length() + 1


def test_same_seed_is_bitwise_identical():
    spec = SyntheticSpec(total_points=5_000, n_drifts=4, seed=7)
    a, _ = generate(spec)
    b, _ = generate(spec)
    assert np.array_equal(a.rows, b.rows)
    c, _ = generate(SyntheticSpec(total_points=5_000, n_drifts=4, seed=8))
    assert not np.array_equal(a.rows, c.rows)


def test_mean_shift_moves_segment_means():
    spec = SyntheticSpec(total_points=9_000, n_drifts=2, magnitude=4.0, seed=3)
    dataset, truth = generate(spec)
    seg = spec.segment_length()
    m0 = dataset.rows[:seg].mean(axis=0)
    m1 = dataset.rows[seg : 2 * seg].mean(axis=0)
    m2 = dataset.rows[2 * seg :].mean(axis=0)
    assert np.linalg.norm(m1 - m0) == pytest.approx(4.0, abs=0.3)
    assert np.linalg.norm(m2 - m1) == pytest.approx(4.0, abs=0.3)


def test_variance_shift_toggles_spread():
    spec = SyntheticSpec(
        total_points=30_000, n_drifts=2, drift_kind="variance",
        magnitude=3.0, seed=4,
    )
    dataset, _ = generate(spec)
    seg = spec.segment_length()
    s0 = dataset.rows[:seg].std()
    s1 = dataset.rows[seg : 2 * seg].std()
    s2 = dataset.rows[2 * seg :].std()
    assert s1 / s0 == pytest.approx(3.0, rel=0.1)
    assert s2 / s0 == pytest.approx(1.0, rel=0.1)


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        SyntheticSpec(drift_kind="label")
    with pytest.raises(ValueError):
        SyntheticSpec(total_points=10, n_drifts=99)


# -- categorizer boundary suite --------------------------------------------------


def counts(report):
    return (report.detected, report.late, report.missed, report.false_alarms)


def test_detected_when_delay_below_w():
    assert counts(categorize([105], [100], w=10)) == (1, 0, 0, 0)


def test_late_when_delay_equals_w_exactly():
    assert counts(categorize([110], [100], w=10)) == (0, 1, 0, 0)


def test_late_when_delay_exceeds_w_before_next_drift():
    report = categorize([115], [100, 200], w=10)
    assert counts(report) == (0, 1, 1, 0)
    assert report.per_drift[0].category == "late"
    assert report.per_drift[1].category == "missed"


def test_missed_when_no_report_in_interval():
    assert counts(categorize([], [100], w=10)) == (0, 0, 1, 0)


def test_duplicate_report_counts_false():
    assert counts(categorize([105, 150], [100, 200], w=10)) == (1, 0, 1, 1)


def test_report_before_first_drift_is_false():
    assert counts(categorize([50, 105], [100], w=10)) == (1, 0, 0, 1)


def test_report_at_drift_tick_is_instant_detection():
    assert counts(categorize([100], [100], w=10)) == (1, 0, 0, 0)


def test_report_at_next_drift_tick_belongs_to_next_interval():
    report = categorize([200], [100, 200], w=10)
    assert report.per_drift[0].category == "missed"
    assert report.per_drift[1].category == "detected"
    assert report.per_drift[1].report_tick == 200


def test_category_totals_partition_the_drifts():
    rng = np.random.default_rng(0)
    for _ in range(50):
        truths = np.unique(rng.integers(10, 10_000, size=rng.integers(1, 20)))
        reports = np.unique(rng.integers(0, 11_000, size=rng.integers(0, 40)))
        report = categorize(reports, truths, w=rng.integers(1, 500))
        assert report.detected + report.late + report.missed == len(truths)
        assert report.false_alarms >= 0


# -- fixed split of late/missed example from test above fixed -------------------


def test_late_runs_up_to_next_drift_only():
    # delay >= w but before the next drift: late; after it: next interval's
    report = categorize([250], [100, 200], w=10)
    assert report.per_drift[0].category == "missed"
    assert report.per_drift[1].category == "late"


# -- clustered reference equals the energy module ---------------------------------


def test_clustered_reference_matches_drift_degree():
    rng = np.random.default_rng(5)
    training = np.vstack(
        [rng.normal(size=(150, 2)), rng.normal(size=(150, 2)) + [7, 0]]
    )
    tlabels = np.array([0] * 150 + [1] * 150)
    window = np.vstack([rng.normal(size=(40, 2)), rng.normal(size=(20, 2)) + [7, 0]])
    wlabels = np.array([0] * 40 + [1] * 20)
    ref = ClusteredReference({0: training[:150], 1: training[150:]})
    got = ref.drift(window, wlabels)
    want = drift_degree(window, wlabels, training, tlabels)
    assert got.overall == pytest.approx(want.overall, abs=1e-12)
    for cid in (0, 1):
        assert got.per_cluster[cid][0] == pytest.approx(want.per_cluster[cid][0])
        assert got.per_cluster[cid][1] == pytest.approx(
            want.per_cluster[cid][1], abs=1e-12
        )


def test_window_cluster_without_reference_scores_one():
    ref = ClusteredReference({0: np.zeros((10, 2))})
    out = ref.drift(np.full((5, 2), 30.0), np.array([9] * 5))
    assert out.per_cluster[9] == (1.0, 1.0)


# -- detector and benchmark -------------------------------------------------------


def small_spec(**kw):
    kw.setdefault("total_points", 30_000)
    kw.setdefault("n_drifts", 5)
    kw.setdefault("magnitude", 3.0)
    kw.setdefault("seed", 11)
    return SyntheticSpec(**kw)


def small_detector(**kw):
    kw.setdefault("window", 300)
    kw.setdefault("stride", 60)
    kw.setdefault("train_size", 1000)
    kw.setdefault("alert_threshold", 0.2)
    return DetectorConfig(**kw)


def test_detector_finds_mean_shifts():
    spec, det = small_spec(), small_detector()
    dataset, truth = generate(spec)
    out = run_detector(dataset.rows, det)
    report = categorize(out.alert_ticks, truth, w=det.window)
    assert report.detected >= 4
    assert report.false_alarms <= 1


def test_unreachable_threshold_misses_everything():
    spec = small_spec(total_points=12_000, n_drifts=3)
    det = small_detector(alert_threshold=1.5)
    report = run_benchmark(spec, det, EvalConfig(w=det.window), runs=1)
    assert report.detected == 0
    assert report.missed == 3
    assert report.false_alarms == 0


def test_benchmark_averaging_identical_runs():
    spec = small_spec(total_points=12_000, n_drifts=3)
    det = small_detector()
    single = run_benchmark(spec, det, EvalConfig(w=det.window), runs=1)
    # two runs use different seeds; to check pure averaging, rerun the same
    # single-run config and compare
    again = run_benchmark(spec, det, EvalConfig(w=det.window), runs=1)
    assert counts(single) == counts(again)
    assert single.runs_averaged == 1


def test_benchmark_deterministic_under_seeds():
    spec = small_spec(total_points=12_000, n_drifts=3)
    det = small_detector()
    a = run_benchmark(spec, det, EvalConfig(w=det.window), runs=2)
    b = run_benchmark(spec, det, EvalConfig(w=det.window), runs=2)
    assert counts(a) == counts(b)
