"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with `pytest -s tests/test_acceptance.py` to see them).
"""

import json
import time
from contextlib import contextmanager

import numpy as np
import pytest
from fastapi.testclient import TestClient

from driftlab.bench import DetectorConfig, EvalConfig, SyntheticSpec, categorize, run_benchmark
from driftlab.density import DensityGrid, density_diff, halo_smooth, rasterize
from driftlab.energy import drift_degree, energy_distance
from driftlab.ensemble import (
    EnsembleModel,
    dwm_update,
    predict,
    train_learner,
)
from driftlab.gmm import classify, offline_fit, online_assign
from driftlab.projection import (
    ProjectionConfig,
    ProjectionObjective,
    shrink_factors,
    solve,
)
from driftlab.service import create_app

from test_projection import (
    numeric_gradient,
    random_problem,
    warm_restart_pair,
    median_displacement,
)


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


# -- 1. energy-distance oracle equivalence -----------------------------------


def reference_energy(x, y):
    """Independent double-loop reference, no shared code with the module."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    n, m = len(x), len(y)
    a = b = c = 0.0
    for i in range(n):
        a += np.sqrt(((x[i] - y) ** 2).sum(axis=1)).sum()
    for i in range(n):
        b += np.sqrt(((x[i] - x) ** 2).sum(axis=1)).sum()
    for j in range(m):
        c += np.sqrt(((y[j] - y) ** 2).sum(axis=1)).sum()
    a /= n * m
    b /= n * n
    c /= m * m
    return 0.0 if a == 0 else (2 * a - b - c) / (2 * a)


def test_energy_oracle_equivalence():
    with criterion("energy-oracle-equivalence"):
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(1, 201))
            m = int(rng.integers(1, 201))
            d = int(rng.integers(1, 9))
            x = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0)
            y = rng.normal(size=(m, d)) + rng.normal(scale=2.0, size=d)
            got = energy_distance(x, y).distance
            want = reference_energy(x, y)
            worst = max(worst, abs(got - want))
        elapsed = time.perf_counter() - start
        assert worst <= 1e-10, f"max abs diff {worst}"
        assert elapsed < 5.0, f"took {elapsed:.2f}s"
        assert abs(energy_distance([[0.0]], [[1.0]]).distance - 1.0) <= 1e-12
        assert abs(energy_distance([[0.0], [2.0]], [[1.0], [3.0]]).distance - 1 / 3) <= 1e-12


# -- 2. weighted-drift consistency ----------------------------------------------


def test_weighted_drift_consistency():
    with criterion("weighted-drift-consistency"):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            k = int(rng.integers(1, 5))
            d = int(rng.integers(1, 4))
            window = rng.normal(size=(int(rng.integers(2, 30)), d))
            wlabels = rng.integers(0, k, size=len(window))
            training = rng.normal(size=(int(rng.integers(2, 60)), d))
            tlabels = rng.integers(0, k, size=len(training))
            out = drift_degree(window, wlabels, training, tlabels)
            recomputed = sum(w * dist for w, dist in out.per_cluster.values())
            assert abs(out.overall - recomputed) <= 1e-9
            total_weight = sum(w for w, _ in out.per_cluster.values())
            assert abs(total_weight - 1.0) <= 1e-9
        # empty-training-cluster rule is exactly 1
        out = drift_degree(
            np.ones((4, 2)), np.full(4, 9), np.zeros((3, 2)), np.zeros(3)
        )
        assert out.per_cluster[9][1] == 1.0
        assert out.overall == 1.0


# -- 3 & 4. scaled Table-1 protocol ------------------------------------------------


def run_table1(kind: str, magnitude: float, threshold: float):
    spec = SyntheticSpec(
        total_points=495_000, n_drifts=99, drift_kind=kind,
        magnitude=magnitude, seed=1000,
    )
    detector = DetectorConfig(
        window=500, stride=100, train_size=2000, alert_threshold=threshold
    )
    start = time.perf_counter()
    report = run_benchmark(spec, detector, EvalConfig(w=500), runs=10, workers=2)
    wall = time.perf_counter() - start
    per_run = wall * 2 / 10  # two workers share the wall clock
    return report, per_run


def test_table1_mean_shift():
    with criterion("table1-D1-mean-shift"):
        report, per_run = run_table1("mean", magnitude=3.0, threshold=0.2)
        print(
            f"  D1: detected {report.detected:.1f} late {report.late:.1f} "
            f"missed {report.missed:.1f} false {report.false_alarms:.1f} "
            f"(~{per_run:.0f}s/run)"
        )
        assert report.detected >= 90
        assert report.false_alarms <= 5
        assert report.missed <= 3
        assert per_run <= 120


def test_table1_variance_shift():
    with criterion("table1-D2-variance-shift"):
        report, per_run = run_table1("variance", magnitude=3.0, threshold=0.06)
        print(
            f"  D2: detected {report.detected:.1f} late {report.late:.1f} "
            f"missed {report.missed:.1f} false {report.false_alarms:.1f} "
            f"(~{per_run:.0f}s/run)"
        )
        assert report.detected >= 65
        assert per_run <= 120


# -- 5. BIC model selection ---------------------------------------------------------


def test_bic_selects_two_components():
    with criterion("bic-model-selection"):
        hits = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            direction = rng.normal(size=2)
            direction /= np.linalg.norm(direction)
            a = rng.normal(size=(150, 2))
            b = rng.normal(size=(150, 2)) + 6.5 * direction  # >= 6 sigma apart
            state = offline_fit(np.vstack([a, b]), (1, 5), seed=seed)
            hits += len(state.components) == 2
        assert hits >= 48, f"k=2 selected in only {hits}/50 runs"  # >= 95%


# -- 6. incremental moment correctness ---------------------------------------------


def test_incremental_moments():
    with criterion("incremental-moments"):
        rng = np.random.default_rng(3)
        seed_pts = rng.normal(size=(4, 3))
        state = offline_fit(seed_pts, (1, 1))
        comp = state.components[0]
        stream = rng.normal(loc=1.0, scale=1.5, size=(1000, 3))
        for i, x in enumerate(stream):
            comp.add_sample(x, 100 + i)
        pool = np.vstack([seed_pts, stream])
        assert np.abs(comp.mean - pool.mean(axis=0)).max() <= 1e-8
        assert np.abs(
            comp.m2 / comp.member_count - np.cov(pool.T, bias=True)
        ).max() <= 1e-8


# -- 7. online assignment ------------------------------------------------------------


def test_online_assignment():
    with criterion("online-assignment"):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(400, 2))
        b = rng.normal(size=(400, 2)) + [12.0, 0.0]
        state = offline_fit(np.vstack([a, b]), (1, 4), buffer_threshold=10, seed=2)
        comp = state.components[0]
        draws = rng.multivariate_normal(comp.mean, comp.covariance, size=10_000)
        decisions = [classify(state, x) for x in draws]
        firm_rate = float(np.mean([firm for _, firm in decisions]))
        # the constructed region admits assign_confidence of its own draws
        sigma = np.sqrt(0.95 * 0.05 / 10_000)
        assert abs(firm_rate - 0.95) <= 4 * sigma + 0.005, firm_rate
        to_generator = float(
            np.mean([cid == comp.id for cid, firm in decisions if firm])
        )
        assert to_generator >= 0.99
        # a far cluster of buffer_threshold samples -> exactly one event
        far = rng.normal(size=(10, 2)) * 0.3 + [300.0, -50.0]
        events = [
            online_assign(state, x, 50_000 + i, tick=9).event
            for i, x in enumerate(far)
        ]
        fired = [e for e in events if e is not None]
        assert len(fired) == 1
        assert len(fired[0].component_ids) >= 1


# -- 8. projection gradient and bounds ----------------------------------------------


def test_projection_gradient_objective_bounds():
    with criterion("projection-gradient-check"):
        for seed in range(3):
            problem = random_problem(seed=seed, n=14, m=6)
            objective = ProjectionObjective(problem, ProjectionConfig(perplexity=8.0))
            assert objective.phi > 0 and objective.psi > 0
            y = np.random.default_rng(seed + 50).normal(size=(20, 2))
            _, analytic = objective.value_and_grad(y)
            numeric = numeric_gradient(lambda yy: objective.value(yy), y)
            rel = np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-8)
            assert rel <= 1e-4, f"gradient mismatch {rel}"
        # objective trace non-increasing after exaggeration
        problem = random_problem(seed=9, n=30, m=10)
        cfg = ProjectionConfig(perplexity=10.0, max_iterations=180)
        sol = solve(problem, cfg)
        tail = np.asarray(sol.objective_trace[cfg.exaggeration_iters + 1 :])
        assert np.all(np.diff(tail) <= 1e-9)
        # shrink bounds for random covariances
        rng = np.random.default_rng(12)
        alpha, beta = 0.8, 0.7
        for _ in range(100):
            covs = {}
            for cid in range(int(rng.integers(1, 5))):
                m = rng.normal(size=(3, 3))
                covs[cid] = m @ m.T + np.eye(3) * 1e-6
            factors = shrink_factors(covs, alpha, beta, 1e-6)
            for v in factors.values():
                assert alpha * (1 - beta) - 1e-12 <= v <= alpha + 1e-12


# -- 9. projection stability ----------------------------------------------------------


def test_projection_stability():
    with criterion("projection-stability"):
        sol0a, sol1a, anchor_idx = warm_restart_pair(seed=11, n=200, constrained=True)
        sol0b, sol1b, _ = warm_restart_pair(seed=11, n=200, constrained=False)
        anchored = median_displacement(sol0a, sol1a, anchor_idx)
        baseline = median_displacement(sol0b, sol1b, anchor_idx)
        print(f"  anchored {anchored:.3f} vs unconstrained {baseline:.3f}")
        assert anchored <= 0.5 * baseline


# -- 10. density pipeline --------------------------------------------------------------


def test_density_pipeline():
    with criterion("density-pipeline"):
        rng = np.random.default_rng(4)
        extent = (0.0, 1.0, 0.0, 1.0)
        for n in (1, 7, 100):
            grid = rasterize(rng.uniform(size=(n, 2)), extent, (8, 8))
            assert grid.values.sum() == pytest.approx(1.0, abs=1e-12)
        impulse = np.zeros((9, 9))
        impulse[4, 4] = 1.0
        smoothed = halo_smooth(DensityGrid((9, 9), extent, impulse, 1))
        assert smoothed.values[4, 4] == pytest.approx(0.7, abs=1e-12)
        neighbors = smoothed.values[2:7, 2:7].copy()
        neighbors[2, 2] = 0.0
        assert np.allclose(
            neighbors[neighbors > 0], 0.0125, atol=1e-12
        ) and (neighbors > 0).sum() == 24
        a = rasterize(rng.uniform(size=(30, 2)), extent, (6, 6))
        b = rasterize(rng.uniform(size=(40, 2)), extent, (6, 6))
        assert np.all(density_diff(a, b).values == -density_diff(b, a).values)


# -- 11. DWM adaptation ------------------------------------------------------------------


def abrupt_drift_fixture(seed=0):
    """Class boundary rotates 90 degrees at the drift point."""
    rng = np.random.default_rng(seed)
    pre_x = rng.normal(size=(400, 2))
    pre_y = (pre_x[:, 0] > 0).astype(int)
    post_x = rng.normal(size=(400, 2))
    post_y = (post_x[:, 1] > 0).astype(int)
    test_x = rng.normal(size=(2000, 2))
    test_y = (test_x[:, 1] > 0).astype(int)
    return pre_x, pre_y, post_x, post_y, test_x, test_y


def accuracy(ensemble, learners, x, y):
    pred, _, _ = predict(ensemble, learners, x)
    return float((pred == y).mean())


def test_dwm_adaptation():
    with criterion("dwm-adaptation"):
        pre_x, pre_y, post_x, post_y, test_x, test_y = abrupt_drift_fixture(seed=3)
        old = train_learner(0, pre_x, pre_y, list(range(400)), [0] * 400)
        frozen = EnsembleModel(members=[(0, 1.0)])
        learners = {0: old}
        new = train_learner(1, post_x[:300], post_y[:300], list(range(300)), [0] * 300)
        learners[1] = new
        adapted = EnsembleModel(members=[(0, 0.5), (1, 0.5)], beta_w=0.5)
        adapted = dwm_update(adapted, learners, post_x[300:], post_y[300:])
        frozen_acc = accuracy(frozen, {0: old}, test_x, test_y)
        adapted_acc = accuracy(adapted, learners, test_x, test_y)
        print(f"  frozen {frozen_acc:.3f} -> adapted {adapted_acc:.3f}")
        assert adapted_acc - frozen_acc >= 0.10
        # wrong-prediction decay 0.5^3 = 0.125 exactly
        x3 = np.zeros((3, 2))
        y3 = np.ones(3, dtype=int)
        always0 = train_learner(7, np.zeros((3, 2)), np.zeros(3, dtype=int), [0, 1, 2], [0, 0, 0])
        always1 = train_learner(8, np.zeros((3, 2)), np.ones(3, dtype=int), [0, 1, 2], [0, 0, 0])
        ens = EnsembleModel(members=[(7, 0.5), (8, 0.5)], beta_w=0.5, prune_threshold=0.0)
        updated = dwm_update(ens, {7: always0, 8: always1}, x3, y3)
        w = dict(updated.members)
        raw_wrong = 0.5 * 0.5**3
        assert raw_wrong == 0.0625 and 0.5**3 == 0.125
        assert w[7] == pytest.approx(raw_wrong / (raw_wrong + 0.5), abs=1e-15)


# -- 12. evaluation categorizer -----------------------------------------------------------


def test_categorizer_boundaries():
    with criterion("categorizer-boundaries"):
        def counts(rep):
            return (rep.detected, rep.late, rep.missed, rep.false_alarms)

        assert counts(categorize([105], [100], w=10)) == (1, 0, 0, 0)
        assert counts(categorize([110], [100], w=10)) == (0, 1, 0, 0)  # dt == w -> late
        assert counts(categorize([105, 150], [100, 200], w=10)) == (1, 0, 1, 1)
        assert counts(categorize([50], [100], w=10)) == (0, 0, 1, 1)  # pre-first -> false
        rep = categorize([200], [100, 200], w=10)
        assert rep.per_drift[0].category == "missed"
        assert rep.per_drift[1].category == "detected"  # next-interval rule
        assert counts(categorize([], [100, 200], w=10)) == (0, 0, 2, 0)
        assert counts(categorize([100], [100], w=10)) == (1, 0, 0, 0)  # dt == 0


# -- 13. service round trip ----------------------------------------------------------------


def test_service_round_trip(tmp_path):
    with criterion("service-round-trip"):
        app = create_app(data_dir=str(tmp_path))
        with TestClient(app) as client:
            rng = np.random.default_rng(0)
            lines = ["t,f1,f2"]
            for i in range(100):
                lines.append(f"{1 + i // 3},{rng.normal()},{rng.normal()}")
            res = client.post(
                "/v1/sessions",
                json={
                    "csv": "\n".join(lines),
                    "schema": {"timestamp": "t"},
                    "config": {"window_length": 10, "gmm_k_range": [1, 3]},
                },
            )
            assert res.status_code == 201
            sid = res.json()["session_id"]
            last = res.json()
            # stream 100 ticks
            for tick in range(35, 135):
                rows = [{"tick": tick, "values": [float(rng.normal()), float(rng.normal())]}]
                r = client.post(f"/v1/sessions/{sid}/stream", json={"rows": rows})
                assert r.status_code == 200
            drift_before = client.get(f"/v1/sessions/{sid}/drift").json()["points"]
            assert len(drift_before) == 100
            comps_before = client.get(f"/v1/sessions/{sid}").json()["components"]
            saved = client.post(f"/v1/sessions/{sid}/save").json()
            first_doc = open(saved["path"], encoding="utf-8").read()
            assert client.post(
                "/v1/sessions/restore", json={"session_id": sid}
            ).status_code == 200
            drift_after = client.get(f"/v1/sessions/{sid}/drift").json()["points"]
            comps_after = client.get(f"/v1/sessions/{sid}").json()["components"]
            assert json.dumps(drift_before) == json.dumps(drift_after)
            assert json.dumps(comps_before) == json.dumps(comps_after)
            second_doc = open(
                client.post(f"/v1/sessions/{sid}/save").json()["path"],
                encoding="utf-8",
            ).read()
            assert first_doc == second_doc
