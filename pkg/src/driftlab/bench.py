"""Synthetic drift streams and the detection-evaluation harness.

Streams are 2-D Gaussian draws whose generating mean (D1) or spread (D2)
steps at evenly spaced change points. The detector keeps a clustered
reference set, scores each sliding window with the cluster-weighted energy
drift, alerts on upward threshold crossings (with a one-window refractory
period), and refits its reference from the active window after each alert.
Every true drift is then categorized as detected / late / missed against
the first report in its interval; surplus reports are false alarms.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .core import Dataset
from .energy import DriftBreakdown, _subsample
from .gmm import GmmState, offline_fit


@dataclass(frozen=True)
class SyntheticSpec:
    total_points: int = 495_000
    n_drifts: int = 99
    drift_kind: str = "mean"  # "mean" | "variance"
    dimension: int = 2
    base_mean: tuple[float, ...] = (0.0, 0.0)
    base_std: float = 1.0
    magnitude: float = 3.0  # mean-shift length in stds, or the spread factor
    seed: int = 0

    def __post_init__(self):
        if self.drift_kind not in ("mean", "variance"):
            raise ValueError("drift_kind must be 'mean' or 'variance'")
        if self.magnitude <= 0:
            raise ValueError("magnitude must be positive")
        if self.n_drifts < 0 or self.total_points < self.n_drifts + 1:
            raise ValueError("need at least one point per segment")

    def segment_length(self) -> int:
        return self.total_points // (self.n_drifts + 1)

    def truth_ticks(self) -> list[int]:
        length = self.segment_length()
        return [i * length + 1 for i in range(1, self.n_drifts + 1)]


def generate(spec: SyntheticSpec) -> tuple[Dataset, list[int]]:
    """Draw the stream (one sample per tick, ticks 1..N) and return it with
    the ground-truth drift ticks (each the first tick of a new segment)."""
    rng = np.random.default_rng(spec.seed)
    n, d = spec.total_points, spec.dimension
    length = spec.segment_length()
    rows = np.empty((n, d))
    mean = np.asarray(spec.base_mean, dtype=float)
    if mean.shape != (d,):
        mean = np.full(d, float(spec.base_mean[0]) if spec.base_mean else 0.0)
    std = spec.base_std
    start = 0
    for seg in range(spec.n_drifts + 1):
        stop = n if seg == spec.n_drifts else (seg + 1) * length
        if seg > 0:
            if spec.drift_kind == "mean":
                direction = rng.normal(size=d)
                direction /= np.linalg.norm(direction)
                mean = mean + spec.magnitude * spec.base_std * direction
            else:
                std = spec.base_std * (spec.magnitude if seg % 2 == 1 else 1.0)
        rows[start:stop] = mean + std * rng.normal(size=(stop - start, d))
        start = stop
    dataset = Dataset(
        feature_names=[f"f{i + 1}" for i in range(d)],
        rows=rows,
        timestamps=np.arange(1, n + 1, dtype=np.int64),
        ids=np.arange(n, dtype=np.int64),
    )
    return dataset, spec.truth_ticks()


# -- detector -----------------------------------------------------------------


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 500  # sliding window, ticks (= samples here)
    stride: int = 100  # evaluate the drift every this many ticks
    train_size: int = 2000  # reference samples for the offline fit
    alert_threshold: float = 0.2
    k_range: tuple[int, int] = (1, 2)
    reference_cap: int = 600  # per-cluster reference subsample for the energy step
    seed: int = 0


class ClusteredReference:
    """Per-cluster reference rows with cached within-set distance means, so
    repeated window scoring only pays for the cross and window terms."""

    def __init__(self, by_cluster: dict[int, np.ndarray], cap: int = 0):
        self.refs = {
            cid: _subsample(np.asarray(rows, dtype=float), cap)
            for cid, rows in by_cluster.items()
            if len(rows)
        }
        self.within = {
            cid: float(cdist(r, r).mean()) for cid, r in self.refs.items()
        }

    @classmethod
    def from_state(cls, state: GmmState, rows: np.ndarray, ids: np.ndarray, cap: int):
        pos = {int(v): k for k, v in enumerate(ids)}
        split = {
            c.id: rows[[pos[i] for i in sorted(c.member_ids)]]
            for c in state.components
            if c.member_ids
        }
        return cls(split, cap)

    def drift(self, window: np.ndarray, labels: np.ndarray) -> DriftBreakdown:
        total = window.shape[0]
        per_cluster: dict[int, tuple[float, float]] = {}
        overall = 0.0
        for cid in np.unique(labels):
            members = window[labels == cid]
            weight = members.shape[0] / total
            ref = self.refs.get(int(cid))
            if ref is None:
                dist = 1.0
            else:
                a = float(cdist(members, ref).mean())
                b = float(cdist(members, members).mean())
                c = self.within[int(cid)]
                dist = 0.0 if a == 0.0 else (2.0 * a - (b + c)) / (2.0 * a)
                dist = min(1.0, max(0.0, dist))
            per_cluster[int(cid)] = (weight, dist)
            overall += weight * dist
        return DriftBreakdown(overall=overall, per_cluster=per_cluster)


@dataclass
class DetectorRun:
    alert_ticks: list[int]
    trace: list[tuple[int, float]]  # (tick, drift degree)


def run_detector(rows: np.ndarray, cfg: DetectorConfig) -> DetectorRun:
    """Stream the rows through the drift detector; alerts are upward
    threshold crossings, after which the reference refits from the window."""
    n = rows.shape[0]
    train = min(cfg.train_size, n)
    ids = np.arange(train)
    state = offline_fit(rows[:train], cfg.k_range, seed=cfg.seed)
    reference = ClusteredReference.from_state(
        state, rows[:train], ids, cfg.reference_cap
    )
    alerts: list[int] = []
    trace: list[tuple[int, float]] = []
    above = False
    refractory_until = 0
    rebuild_at: int | None = None
    start = max(train, cfg.window)
    for t in range(start, n + 1, cfg.stride):
        window = rows[t - cfg.window : t]
        if rebuild_at is not None and t >= rebuild_at:
            # one window after the alert the window is purely post-drift;
            # refit the reference on it so no stale cluster lingers
            state = offline_fit(window, cfg.k_range, seed=cfg.seed + len(alerts))
            reference = ClusteredReference.from_state(
                state, window, np.arange(window.shape[0]), cfg.reference_cap
            )
            rebuild_at = None
            above = False
        labels = state.label_matrix(window)
        value = reference.drift(window, labels).overall
        trace.append((t, value))
        crossed_up = value >= cfg.alert_threshold and not above
        above = value >= cfg.alert_threshold
        if rebuild_at is None and crossed_up and t >= refractory_until:
            alerts.append(t)
            refractory_until = t + cfg.window
            rebuild_at = t + cfg.window
    return DetectorRun(alert_ticks=alerts, trace=trace)


# -- categorization ---------------------------------------------------------------


@dataclass
class DriftRecord:
    truth_tick: int
    report_tick: int | None
    category: str  # detected | late | missed


@dataclass
class EvalReport:
    detected: float
    late: float
    missed: float
    false_alarms: float
    n_drifts: int
    runs_averaged: int = 1
    per_drift: list[DriftRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "detected": self.detected,
            "late": self.late,
            "missed": self.missed,
            "false": self.false_alarms,
            "n_drifts": self.n_drifts,
            "runs_averaged": self.runs_averaged,
            "per_drift": [asdict(r) for r in self.per_drift],
        }


def categorize(report_ticks, truth_ticks, w: int) -> EvalReport:
    """Match each true drift (at tick t, interval [t, next_drift)) to the
    first report inside its interval: detected when the delay is below w,
    late otherwise, missed without any report. Every surplus report in an
    interval and every report before the first drift is one false alarm."""
    reports = sorted(int(r) for r in report_ticks)
    truths = sorted(int(t) for t in truth_ticks)
    false_alarms = sum(1 for r in reports if truths and r < truths[0])
    records: list[DriftRecord] = []
    detected = late = missed = 0
    if not truths:
        return EvalReport(0, 0, 0, len(reports), 0)
    for i, t in enumerate(truths):
        upper = truths[i + 1] if i + 1 < len(truths) else np.inf
        inside = [r for r in reports if t <= r < upper]
        if not inside:
            records.append(DriftRecord(t, None, "missed"))
            missed += 1
            continue
        first, extras = inside[0], inside[1:]
        false_alarms += len(extras)
        delta = first - t
        if delta < w:
            records.append(DriftRecord(t, first, "detected"))
            detected += 1
        else:
            records.append(DriftRecord(t, first, "late"))
            late += 1
    return EvalReport(
        detected=detected,
        late=late,
        missed=missed,
        false_alarms=false_alarms,
        n_drifts=len(truths),
        per_drift=records,
    )


@dataclass(frozen=True)
class EvalConfig:
    w: int  # detection window for the delay rule
    alert_threshold: float | None = None  # overrides the detector's threshold

    def __post_init__(self):
        if self.w <= 0:
            raise ValueError("w must be positive")


def _single_run(spec: SyntheticSpec, detector: DetectorConfig, w: int) -> EvalReport:
    dataset, truth = generate(spec)
    outcome = run_detector(dataset.rows, detector)
    return categorize(outcome.alert_ticks, truth, w)


def run_benchmark(
    spec: SyntheticSpec,
    detector: DetectorConfig,
    eval_cfg: EvalConfig,
    runs: int = 1,
    workers: int = 1,
) -> EvalReport:
    """Average the categorized results of `runs` seeded generate+detect
    rounds (run r uses spec.seed + r and detector.seed + r). Runs are
    independent and can execute on worker processes."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    threshold = (
        eval_cfg.alert_threshold
        if eval_cfg.alert_threshold is not None
        else detector.alert_threshold
    )
    configs = []
    for r in range(runs):
        run_spec = SyntheticSpec(**{**asdict(spec), "seed": spec.seed + r})
        det_cfg = DetectorConfig(
            **{
                **asdict(detector),
                "seed": detector.seed + r,
                "alert_threshold": threshold,
            }
        )
        configs.append((run_spec, det_cfg))
    if workers > 1 and runs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, runs)) as pool:
            reports = list(
                pool.map(_single_run, *zip(*configs), [eval_cfg.w] * runs)
            )
    else:
        reports = [_single_run(s, d, eval_cfg.w) for s, d in configs]
    totals = np.zeros(4)
    for report in reports:
        totals += [report.detected, report.late, report.missed, report.false_alarms]
    mean = totals / runs
    return EvalReport(
        detected=float(mean[0]),
        late=float(mean[1]),
        missed=float(mean[2]),
        false_alarms=float(mean[3]),
        n_drifts=reports[-1].n_drifts,
        runs_averaged=runs,
        per_drift=reports[-1].per_drift,
    )


# -- JSON config loading for the CLI ------------------------------------------------


def spec_from_json(text: str) -> SyntheticSpec:
    d = json.loads(text)
    if "base_mean" in d:
        d["base_mean"] = tuple(d["base_mean"])
    return SyntheticSpec(**d)


def detector_from_json(text: str) -> DetectorConfig:
    d = json.loads(text)
    if "k_range" in d:
        d["k_range"] = tuple(d["k_range"])
    return DetectorConfig(**d)
