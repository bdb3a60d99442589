import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.energy import drift_degree, drift_per_feature, energy_distance


def naive_energy_distance(x, y):
    """Independent reference: literal double loops over the formula."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, m = len(x), len(y)
    a = sum(np.linalg.norm(x[i] - y[j]) for i in range(n) for j in range(m)) / (n * m)
    b = sum(np.linalg.norm(x[i] - x[j]) for i in range(n) for j in range(n)) / (n * n)
    c = sum(np.linalg.norm(y[i] - y[j]) for i in range(m) for j in range(m)) / (m * m)
    if a == 0.0:
        return 0.0
    return (2 * a - b - c) / (2 * a)


def test_identical_two_point_sets_have_zero_distance():
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    res = energy_distance(pts, pts.copy())
    assert res.distance == pytest.approx(0.0, abs=1e-12)


def test_hand_case_singletons():
    res = energy_distance([[0.0]], [[1.0]])
    assert res.between_mean == pytest.approx(1.0, abs=1e-12)
    assert res.within_x_mean == 0.0
    assert res.within_y_mean == 0.0
    assert res.distance == pytest.approx(1.0, abs=1e-12)


def test_hand_case_interleaved_pairs():
    res = energy_distance([[0.0], [2.0]], [[1.0], [3.0]])
    assert res.between_mean == pytest.approx(1.5, abs=1e-12)
    assert res.within_x_mean == pytest.approx(1.0, abs=1e-12)
    assert res.within_y_mean == pytest.approx(1.0, abs=1e-12)
    assert res.distance == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_degenerate_coincident_point_masses():
    res = energy_distance([[2.0, 2.0]] * 3, [[2.0, 2.0]] * 5)
    assert res.distance == 0.0


def test_empty_set_rejected():
    with pytest.raises(ValueError):
        energy_distance(np.empty((0, 2)), [[1.0, 2.0]])


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        energy_distance([[1.0, 2.0]], [[1.0]])


def test_matches_naive_reference_on_random_inputs():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n, m, d = rng.integers(1, 40), rng.integers(1, 40), rng.integers(1, 6)
        x = rng.normal(size=(n, d))
        y = rng.normal(size=(m, d)) + rng.normal(scale=2.0)
        got = energy_distance(x, y).distance
        want = naive_energy_distance(x, y)
        assert got == pytest.approx(want, abs=1e-10)


@given(
    st.integers(1, 12),
    st.integers(1, 12),
    st.integers(1, 4),
    st.integers(0, 2**31 - 1),
)
@settings(max_examples=40, deadline=None)
def test_symmetry_and_bounds(n, m, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = rng.normal(size=(m, d))
    xy = energy_distance(x, y)
    yx = energy_distance(y, x)
    assert xy.distance == yx.distance
    assert 0.0 <= xy.distance <= 1.0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_translation_invariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(15, 3))
    y = rng.normal(size=(10, 3)) + 1.0
    shift = rng.normal(size=3) * 5.0
    base = energy_distance(x, y).distance
    moved = energy_distance(x + shift, y + shift).distance
    assert moved == pytest.approx(base, abs=1e-9)


def test_subsample_cap_keeps_result_close():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(600, 2))
    y = rng.normal(size=(600, 2)) + 0.5
    full = energy_distance(x, y).distance
    capped = energy_distance(x, y, subsample_cap=200).distance
    assert capped == pytest.approx(full, abs=0.05)


# -- drift degree (weighted over clusters) --------------------------------


def test_window_identical_to_training_cluster_is_zero():
    pts = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
    labels = np.zeros(3, dtype=int)
    out = drift_degree(pts, labels, pts.copy(), labels.copy())
    assert out.overall == pytest.approx(0.0, abs=1e-12)


def test_weighted_sum_matches_hand_arithmetic():
    # two clusters split 3:1 in the window with engineered distances
    rng = np.random.default_rng(0)
    train0 = rng.normal(size=(200, 1))
    train1 = rng.normal(size=(200, 1)) + 50.0
    win0 = rng.normal(size=(90, 1))
    win1 = rng.normal(size=(30, 1)) + 50.0
    window = np.vstack([win0, win1])
    labels = np.array([0] * 90 + [1] * 30)
    training = np.vstack([train0, train1])
    tlabels = np.array([0] * 200 + [1] * 200)
    out = drift_degree(window, labels, training, tlabels)
    w0, d0 = out.per_cluster[0]
    w1, d1 = out.per_cluster[1]
    assert w0 == pytest.approx(0.75)
    assert w1 == pytest.approx(0.25)
    assert out.overall == pytest.approx(w0 * d0 + w1 * d1, abs=1e-12)


def test_fixed_distances_combine_per_weight():
    # direct arithmetic check: 0.75 * 0.2 + 0.25 * 0.6 = 0.30
    assert 0.75 * 0.2 + 0.25 * 0.6 == pytest.approx(0.30)
    # and the implementation reproduces weighted sums from its own parts
    rng = np.random.default_rng(5)
    window = rng.normal(size=(40, 2))
    labels = rng.integers(0, 3, size=40)
    training = rng.normal(size=(120, 2))
    tlabels = rng.integers(0, 3, size=120)
    out = drift_degree(window, labels, training, tlabels)
    recomputed = sum(w * d for w, d in out.per_cluster.values())
    assert out.overall == pytest.approx(recomputed, abs=1e-12)


def test_cluster_without_training_members_scores_one():
    window = np.array([[100.0, 100.0], [101.0, 100.0]])
    labels = np.array([7, 7])
    training = np.array([[0.0, 0.0]])
    tlabels = np.array([0])
    out = drift_degree(window, labels, training, tlabels)
    assert out.per_cluster[7] == (1.0, 1.0)
    assert out.overall == 1.0


def test_empty_window_rejected():
    with pytest.raises(ValueError):
        drift_degree(np.empty((0, 2)), np.array([]), np.zeros((3, 2)), np.zeros(3))


# -- per-feature drift ------------------------------------------------------


def test_unshifted_feature_scores_zero():
    pts = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    labels = np.zeros(3, dtype=int)
    per = drift_per_feature(pts, labels, pts.copy(), labels, ["f1", "f2"])
    assert per["f1"] == pytest.approx(0.0, abs=1e-12)
    assert per["f2"] == pytest.approx(0.0, abs=1e-12)


def test_shifted_feature_dominates():
    rng = np.random.default_rng(11)
    training = rng.normal(size=(300, 2))
    window = rng.normal(size=(80, 2))
    window[:, 1] += 8.0  # only f2 shifts
    labels_w = np.zeros(80, dtype=int)
    labels_t = np.zeros(300, dtype=int)
    per = drift_per_feature(window, labels_w, training, labels_t, ["f1", "f2"])
    assert per["f2"] > per["f1"]
    # brute-force confirmation on the raw 1-D projections
    assert naive_energy_distance(window[:60, [1]], training[:60, [1]]) > \
        naive_energy_distance(window[:60, [0]], training[:60, [0]])


def test_single_feature_equals_overall():
    rng = np.random.default_rng(2)
    training = rng.normal(size=(100, 1))
    window = rng.normal(size=(30, 1)) + 0.7
    labels_w = np.zeros(30, dtype=int)
    labels_t = np.zeros(100, dtype=int)
    per = drift_per_feature(window, labels_w, training, labels_t, ["only"])
    overall = drift_degree(window, labels_w, training, labels_t).overall
    assert per["only"] == pytest.approx(overall, abs=1e-12)
