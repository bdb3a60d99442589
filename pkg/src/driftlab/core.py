"""Dataset model, sliding window, and the stream session tying the
detection, projection, density, and ensemble pieces together.

A session owns one growing dataset: the initial upload is the training set
the mixture model is fitted on; streamed rows are appended tick by tick,
each tick producing one drift point. All mutation goes through the session
(single writer); persistence is one canonical JSON document.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import density as density_mod
from . import ensemble as ens_mod
from . import gmm as gmm_mod
from . import projection as proj_mod
from .energy import drift_degree, drift_per_feature

SESSION_SCHEMA = "driftlab/session/v1"


class SchemaError(ValueError):
    pass


class CsvParseError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class OutOfOrderError(ValueError):
    pass


# -- dataset -------------------------------------------------------------------


@dataclass
class Dataset:
    feature_names: list[str]
    rows: np.ndarray  # (n, d) float64
    timestamps: np.ndarray  # (n,) int64, non-decreasing
    ids: np.ndarray  # (n,) int64, unique
    labels: list[int | None] | None = None

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.rows.size == 0:
            self.rows = self.rows.reshape(0, len(self.feature_names))
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n = self.rows.shape[0]
        if not (len(self.timestamps) == len(self.ids) == n):
            raise ValueError("rows, timestamps and ids must have equal length")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels must be absent or match the row count")
        if self.rows.shape[1] != len(self.feature_names):
            raise ValueError("row dimension must match feature_names")
        if n and not np.all(np.isfinite(self.rows)):
            raise ValueError("feature values must be finite")
        if n and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")
        if len(np.unique(self.ids)) != n:
            raise ValueError("ids must be unique")
        self._index = {int(i): k for k, i in enumerate(self.ids)}

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return len(self.feature_names)

    def last_tick(self) -> int:
        return int(self.timestamps[-1]) if self.n else 0

    def index_of(self, sample_id: int) -> int:
        try:
            return self._index[int(sample_id)]
        except KeyError:
            raise KeyError(f"unknown sample id {sample_id}") from None

    def has_id(self, sample_id: int) -> bool:
        return int(sample_id) in self._index

    def rows_for(self, ids) -> np.ndarray:
        idx = [self.index_of(i) for i in ids]
        return self.rows[idx]

    def labels_for(self, ids) -> list[int | None]:
        if self.labels is None:
            return [None] * len(list(ids))
        return [self.labels[self.index_of(i)] for i in ids]

    def ids_in_range(self, low_exclusive: int, high_inclusive: int) -> list[int]:
        mask = (self.timestamps > low_exclusive) & (self.timestamps <= high_inclusive)
        return [int(i) for i in self.ids[mask]]

    def append(self, ticks, rows, labels=None) -> list[int]:
        """Append rows (already tick-sorted); returns the new ids."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        ticks = np.asarray(ticks, dtype=np.int64)
        if rows.shape[0] == 0:
            return []
        if rows.shape[1] != self.d:
            raise ValueError("appended rows have wrong dimension")
        if not np.all(np.isfinite(rows)):
            raise ValueError("appended rows contain non-finite values")
        start = int(self.ids.max()) + 1 if self.n else 0
        new_ids = list(range(start, start + rows.shape[0]))
        self.rows = np.vstack([self.rows, rows])
        self.timestamps = np.concatenate([self.timestamps, ticks])
        self.ids = np.concatenate([self.ids, np.asarray(new_ids, dtype=np.int64)])
        if self.labels is not None:
            extra = list(labels) if labels is not None else [None] * len(new_ids)
            self.labels = self.labels + extra
        elif labels is not None and any(l is not None for l in labels):
            self.labels = [None] * (self.n - len(new_ids)) + list(labels)
        for k, i in enumerate(new_ids, start=self.n - len(new_ids)):
            self._index[int(i)] = k
        return new_ids

    def to_csv(self, timestamp_name: str = "tick", label_name: str = "label") -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        header = [timestamp_name, *self.feature_names]
        labeled = self.labels is not None
        if labeled:
            header.append(label_name)
        writer.writerow(header)
        for k in range(self.n):
            row = [int(self.timestamps[k])] + [repr(float(v)) for v in self.rows[k]]
            if labeled:
                lab = self.labels[k]
                row.append("" if lab is None else int(lab))
            writer.writerow(row)
        return out.getvalue()


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV columns to roles; features default to every other column."""

    timestamp: str
    label: str | None = None
    features: list[str] | None = None
    timestamp_parser: Callable[[str], int] = int


def ingest_csv(text: str, schema: ColumnSchema) -> Dataset:
    """Parse an RFC-4180 CSV with a header row into a Dataset, stably
    sorted by timestamp."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("CSV is empty; a header row is required") from None
    header = [h.strip() for h in header]
    if schema.timestamp not in header:
        raise SchemaError(f"missing timestamp column {schema.timestamp!r}")
    if schema.label is not None and schema.label not in header:
        raise SchemaError(f"missing label column {schema.label!r}")
    if schema.features is not None:
        missing = [f for f in schema.features if f not in header]
        if missing:
            raise SchemaError(f"missing feature columns: {missing}")
        feature_names = list(schema.features)
    else:
        feature_names = [
            h for h in header if h != schema.timestamp and h != schema.label
        ]
    if not feature_names:
        raise SchemaError("no feature columns left after assigning roles")
    t_col = header.index(schema.timestamp)
    l_col = header.index(schema.label) if schema.label is not None else None
    f_cols = [header.index(f) for f in feature_names]

    ticks: list[int] = []
    rows: list[list[float]] = []
    labels: list[int | None] = []
    for r, cells in enumerate(reader, start=1):
        if not cells or all(c.strip() == "" for c in cells):
            continue
        if len(cells) != len(header):
            raise CsvParseError(
                f"row {r}: expected {len(header)} cells, got {len(cells)}", row=r
            )
        try:
            tick = schema.timestamp_parser(cells[t_col].strip())
        except Exception:
            raise CsvParseError(
                f"row {r}: cannot parse timestamp {cells[t_col]!r}",
                row=r,
                column=schema.timestamp,
            ) from None
        vec = []
        for name, c in zip(feature_names, f_cols):
            raw = cells[c].strip()
            try:
                v = float(raw)
            except ValueError:
                raise CsvParseError(
                    f"row {r}, column {name!r}: non-numeric value {raw!r}",
                    row=r,
                    column=name,
                ) from None
            if not math.isfinite(v):
                raise CsvParseError(
                    f"row {r}, column {name!r}: non-finite value {raw!r}",
                    row=r,
                    column=name,
                )
            vec.append(v)
        lab: int | None = None
        if l_col is not None:
            raw = cells[l_col].strip()
            if raw != "":
                try:
                    lab = int(raw)
                except ValueError:
                    raise CsvParseError(
                        f"row {r}, column {schema.label!r}: non-integer label {raw!r}",
                        row=r,
                        column=schema.label,
                    ) from None
        ticks.append(tick)
        rows.append(vec)
        labels.append(lab)
    if not rows:
        raise SchemaError("CSV contains no data rows")
    order = np.argsort(np.asarray(ticks), kind="stable")
    rows_arr = np.asarray(rows, dtype=float)[order]
    ticks_arr = np.asarray(ticks, dtype=np.int64)[order]
    labels_sorted = [labels[i] for i in order]
    has_labels = schema.label is not None
    return Dataset(
        feature_names=feature_names,
        rows=rows_arr,
        timestamps=ticks_arr,
        ids=np.arange(len(rows), dtype=np.int64),
        labels=labels_sorted if has_labels else None,
    )


# -- window and drift points ----------------------------------------------------


@dataclass
class SlidingWindow:
    length: int
    end_tick: int

    def member_ids(self, dataset: Dataset) -> list[int]:
        return dataset.ids_in_range(self.end_tick - self.length, self.end_tick)

    def previous_member_ids(self, dataset: Dataset) -> list[int]:
        low = self.end_tick - 2 * self.length
        return dataset.ids_in_range(low, self.end_tick - self.length)


@dataclass(frozen=True)
class DriftPoint:
    tick: int
    overall: float
    per_feature: dict[str, float]
    per_cluster: dict[int, tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "tick": self.tick,
            "overall": self.overall,
            "per_feature": dict(self.per_feature),
            "per_cluster": {str(c): list(v) for c, v in self.per_cluster.items()},
        }


# -- configuration ---------------------------------------------------------------


@dataclass
class SessionConfig:
    window_length: int = 50
    drift_alert_threshold: float = 0.15
    gmm_assign_confidence: float = 0.95
    new_component_buffer_threshold: int | str = "auto"
    gmm_k_range: tuple[int, int] = (1, 8)
    gmm_seed: int = 0
    energy_subsample_cap: int = 2000
    density_resolution: tuple[int, int] = density_mod.DEFAULT_RESOLUTION
    projection: proj_mod.ProjectionConfig = field(
        default_factory=proj_mod.ProjectionConfig
    )
    ensemble_beta_w: float = 0.5
    ensemble_prune_threshold: float = 0.01
    ensemble_update_period: int = 1

    def __post_init__(self):
        if self.window_length < 1:
            raise ValueError("window_length must be at least 1")
        if not (0.0 < self.gmm_assign_confidence < 1.0):
            raise ValueError("gmm_assign_confidence must lie in (0, 1)")
        if self.drift_alert_threshold < 0:
            raise ValueError("drift_alert_threshold must be nonnegative")
        if self.new_component_buffer_threshold != "auto":
            if int(self.new_component_buffer_threshold) < 1:
                raise ValueError("buffer threshold must be at least 1")
        if not (0.0 < self.ensemble_beta_w < 1.0):
            raise ValueError("ensemble_beta_w must lie in (0, 1)")
        lo, hi = self.gmm_k_range
        if not (1 <= lo <= hi):
            raise ValueError("invalid gmm_k_range")

    def to_dict(self) -> dict:
        d = {
            "window_length": self.window_length,
            "drift_alert_threshold": self.drift_alert_threshold,
            "gmm_assign_confidence": self.gmm_assign_confidence,
            "new_component_buffer_threshold": self.new_component_buffer_threshold,
            "gmm_k_range": list(self.gmm_k_range),
            "gmm_seed": self.gmm_seed,
            "energy_subsample_cap": self.energy_subsample_cap,
            "density_resolution": list(self.density_resolution),
            "ensemble_beta_w": self.ensemble_beta_w,
            "ensemble_prune_threshold": self.ensemble_prune_threshold,
            "ensemble_update_period": self.ensemble_update_period,
            "projection": {
                k: getattr(self.projection, k)
                for k in (
                    "alpha", "beta", "epsilon", "lam", "phi", "anchor_cap",
                    "perplexity", "max_iterations", "learning_rate", "momentum",
                    "early_exaggeration", "exaggeration_iters", "convergence_tol",
                    "seed",
                )
            },
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        d = dict(d)
        proj = d.pop("projection", {})
        kwargs = {}
        for key in (
            "window_length", "drift_alert_threshold", "gmm_assign_confidence",
            "new_component_buffer_threshold", "gmm_seed", "energy_subsample_cap",
            "ensemble_beta_w", "ensemble_prune_threshold", "ensemble_update_period",
        ):
            if key in d:
                kwargs[key] = d[key]
        if "gmm_k_range" in d:
            kwargs["gmm_k_range"] = tuple(d["gmm_k_range"])
        if "density_resolution" in d:
            kwargs["density_resolution"] = tuple(d["density_resolution"])
        kwargs["projection"] = proj_mod.ProjectionConfig(**proj)
        return cls(**kwargs)


# -- session ---------------------------------------------------------------------


@dataclass
class SessionProjection:
    solution: proj_mod.ProjectionSolution
    ids: list[int]
    labels: list[int]


@dataclass
class StreamSession:
    dataset: Dataset
    training_ids: set[int]
    window: SlidingWindow
    gmm: gmm_mod.GmmState
    config: SessionConfig
    drift_series: list[DriftPoint] = field(default_factory=list)
    projection: SessionProjection | None = None
    projection_stale: bool = True
    learners: dict[int, ens_mod.BaseLearner] = field(default_factory=dict)
    next_learner_id: int = 0
    ensemble: ens_mod.EnsembleModel | None = None
    previous_ensemble: ens_mod.EnsembleModel | None = None
    samples_of_interest: dict[str, list[int]] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)

    _assignments: dict[int, int] = field(default_factory=dict, repr=False)
    _training_split: dict[int, np.ndarray] | None = field(default=None, repr=False)

    # -- construction ---------------------------------------------------------

    @classmethod
    def create(cls, dataset: Dataset, config: SessionConfig) -> "StreamSession":
        state = gmm_mod.offline_fit(
            dataset.rows,
            config.gmm_k_range,
            sample_ids=[int(i) for i in dataset.ids],
            assign_confidence=config.gmm_assign_confidence,
            buffer_threshold=config.new_component_buffer_threshold,
            seed=config.gmm_seed,
            tick=dataset.last_tick(),
        )
        session = cls(
            dataset=dataset,
            training_ids={int(i) for i in dataset.ids},
            window=SlidingWindow(config.window_length, dataset.last_tick()),
            gmm=state,
            config=config,
        )
        session._rebuild_assignments()
        return session

    # -- assignment bookkeeping -------------------------------------------------

    def _rebuild_assignments(self) -> None:
        lookup: dict[int, int] = {}
        for comp in self.gmm.components:
            for sid in comp.member_ids:
                lookup[sid] = comp.id
        for p in self.gmm.pending:
            lookup[p.sample_id] = p.provisional_component
        self._assignments = lookup
        self._training_split = None

    def assignment_of(self, sample_id: int) -> int | None:
        return self._assignments.get(int(sample_id))

    def _training_by_cluster(self) -> dict[int, np.ndarray]:
        if self._training_split is None:
            split: dict[int, list[int]] = {}
            for sid in self.training_ids:
                cid = self._assignments.get(sid)
                if cid is not None:
                    split.setdefault(cid, []).append(sid)
            self._training_split = {
                cid: self.dataset.rows_for(sorted(ids)) for cid, ids in split.items()
            }
        return self._training_split

    # -- streaming ---------------------------------------------------------------

    def advance(self, ticks, rows, labels=None) -> list[DriftPoint]:
        """Append a fragment of stream rows and emit one drift point per
        distinct tick. Fragment ticks must not precede the window end."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        ticks = np.asarray(ticks, dtype=np.int64)
        if rows.shape[0] == 0:
            return []
        if rows.shape[0] != len(ticks):
            raise ValueError("ticks and rows must have equal length")
        if np.any(np.diff(ticks) < 0):
            raise OutOfOrderError("fragment ticks must be sorted")
        if int(ticks[0]) < self.window.end_tick:
            raise OutOfOrderError(
                f"fragment starts at tick {int(ticks[0])} before window end "
                f"{self.window.end_tick}"
            )
        emitted_ticks = {p.tick for p in self.drift_series}
        if any(int(t) in emitted_ticks for t in np.unique(ticks)):
            raise OutOfOrderError("fragment revisits a tick already evaluated")

        appended: list[DriftPoint] = []
        for tick in [int(t) for t in np.unique(ticks)]:
            mask = ticks == tick
            batch = rows[mask]
            batch_labels = (
                [labels[i] for i in np.flatnonzero(mask)] if labels is not None else None
            )
            new_ids = self.dataset.append([tick] * batch.shape[0], batch, batch_labels)
            for sid, vec in zip(new_ids, batch):
                outcome = gmm_mod.online_assign(self.gmm, vec, sid, tick=tick)
                if outcome.event is not None:
                    self.events.append(
                        {
                            "tick": outcome.event.tick,
                            "component_ids": list(outcome.event.component_ids),
                        }
                    )
                    self._rebuild_assignments()
                else:
                    self._assignments[sid] = outcome.component_id
            self.window.end_tick = tick
            point = self._drift_point(tick)
            if point is not None:
                self.drift_series.append(point)
                appended.append(point)
        self.projection_stale = True
        return appended

    def _drift_point(self, tick: int) -> DriftPoint | None:
        member_ids = self.window.member_ids(self.dataset)
        member_ids = [i for i in member_ids if i not in self.training_ids]
        if not member_ids:
            return None
        window_rows = self.dataset.rows_for(member_ids)
        window_labels = np.asarray(
            [self._assignments[i] for i in member_ids], dtype=int
        )
        split = self._training_by_cluster()
        cap = self.config.energy_subsample_cap
        breakdown = drift_degree(
            window_rows, window_labels, None, None,
            subsample_cap=cap, training_by_cluster=split,
        )
        per_feature: dict[str, float] = {}
        for j, name in enumerate(self.dataset.feature_names):
            split_1d = {cid: arr[:, [j]] for cid, arr in split.items()}
            per_feature[name] = drift_degree(
                window_rows[:, [j]], window_labels, None, None,
                subsample_cap=cap, training_by_cluster=split_1d,
            ).overall
        return DriftPoint(
            tick=tick,
            overall=breakdown.overall,
            per_feature=per_feature,
            per_cluster=breakdown.per_cluster,
        )

    # -- analyst actions -----------------------------------------------------------

    def merge_components(self, component_ids) -> int:
        merged = gmm_mod.merge_components(self.gmm, set(component_ids))
        self._rebuild_assignments()
        self.projection_stale = True
        return merged.id

    def add_learner(self, sample_ids, hyperparams=None, tick=None) -> ens_mod.BaseLearner:
        sample_ids = [int(i) for i in sample_ids]
        if not sample_ids:
            raise ValueError("learner needs a non-empty training subset")
        for sid in sample_ids:
            if not self.dataset.has_id(sid):
                raise KeyError(f"unknown sample id {sid}")
        labels = self.dataset.labels_for(sample_ids)
        if any(l is None for l in labels):
            raise ValueError("all learner training samples must be labeled")
        x = self.dataset.rows_for(sample_ids)
        learner = ens_mod.train_learner(
            self.next_learner_id,
            x,
            np.asarray(labels, dtype=int),
            sample_ids,
            [self._assignments.get(sid) for sid in sample_ids],
            created_tick=tick if tick is not None else self.dataset.last_tick(),
            hyperparams=hyperparams,
        )
        self.learners[learner.id] = learner
        self.next_learner_id += 1
        return learner

    def set_ensemble(self, member_ids, weights=None) -> None:
        member_ids = [int(i) for i in member_ids]
        if not member_ids:
            raise ValueError("ensemble needs at least one member")
        for lid in member_ids:
            if lid not in self.learners:
                raise KeyError(f"unknown learner id {lid}")
        if weights is None:
            weights = [1.0 / len(member_ids)] * len(member_ids)
        if len(weights) != len(member_ids):
            raise ValueError("weights must match member ids")
        if self.ensemble is not None:
            self.previous_ensemble = self.ensemble
        self.ensemble = ens_mod.EnsembleModel(
            members=list(zip(member_ids, [float(w) for w in weights])),
            beta_w=self.config.ensemble_beta_w,
            prune_threshold=self.config.ensemble_prune_threshold,
            update_period=self.config.ensemble_update_period,
        )
        self.ensemble.normalize()

    def labeled_subset(self, sample_ids) -> tuple[np.ndarray, np.ndarray]:
        sample_ids = [int(i) for i in sample_ids]
        labels = self.dataset.labels_for(sample_ids)
        if not sample_ids or any(l is None for l in labels):
            raise ValueError("need a non-empty, fully labeled sample set")
        return self.dataset.rows_for(sample_ids), np.asarray(labels, dtype=int)

    def update_ensemble(self, sample_ids) -> None:
        if self.ensemble is None:
            raise ValueError("no ensemble configured")
        x, y = self.labeled_subset(sample_ids)
        self.previous_ensemble = self.ensemble
        self.ensemble = ens_mod.dwm_update(self.ensemble, self.learners, x, y)

    # -- projections -----------------------------------------------------------------

    def refresh_projection(self) -> SessionProjection:
        ids_prev: list[int] = self.projection.ids if self.projection else []
        prev_known = [i for i in ids_prev if self.dataset.has_id(i)]
        known = set(prev_known)
        new_ids = [int(i) for i in self.dataset.ids if int(i) not in known]
        order = prev_known + new_ids
        x = self.dataset.rows_for(order)
        labels = np.asarray(
            [self._assignments.get(i, -1) for i in order], dtype=int
        )
        covs = {c.id: c.covariance for c in self.gmm.components}
        cfg = self.config.projection
        shrink = proj_mod.shrink_factors(covs, cfg.alpha, cfg.beta, cfg.epsilon)

        previous_coords = None
        center_ids: list[int] = []
        center_high = center_prev = center_w = None
        anchor_idx = anchor_prev = None
        if self.projection is not None and prev_known:
            coord_by_id = {
                i: self.projection.solution.coords[k]
                for k, i in enumerate(self.projection.ids)
            }
            previous_coords = np.asarray([coord_by_id[i] for i in prev_known])
            highs, prevs, ws = [], [], []
            n = len(prev_known)
            for comp in self.gmm.components:
                members = [
                    k for k, i in enumerate(prev_known) if i in comp.member_ids
                ]
                if not members:
                    continue
                center_ids.append(comp.id)
                highs.append(comp.mean)
                prevs.append(previous_coords[members].mean(axis=0))
                ws.append(np.sqrt(comp.member_count))
            if center_ids:
                center_high = np.asarray(highs)
                center_prev = np.asarray(prevs)
                center_w = np.asarray(ws)
            anchor_idx = proj_mod.select_anchors(x[:n], cfg.anchor_cap)
            anchor_prev = previous_coords[anchor_idx]

        problem = proj_mod.ProjectionProblem(
            high_dim=x,
            component_labels=labels,
            shrink=shrink,
            n_original=len(prev_known),
            center_ids=center_ids,
            center_high=center_high,
            center_prev_2d=center_prev,
            center_weights=center_w,
            anchor_indices=anchor_idx,
            anchor_prev_2d=anchor_prev,
            previous_coords=previous_coords,
        )
        solution = proj_mod.solve(problem, cfg, tick=self.dataset.last_tick())
        self.projection = SessionProjection(
            solution=solution, ids=order, labels=[int(l) for l in labels]
        )
        self.projection_stale = False
        return self.projection

    def coords_for(self, sample_ids) -> np.ndarray:
        if self.projection is None:
            raise ValueError("no projection has been solved yet")
        coord_by_id = {
            i: self.projection.solution.coords[k]
            for k, i in enumerate(self.projection.ids)
        }
        missing = [i for i in sample_ids if int(i) not in coord_by_id]
        if missing:
            raise KeyError(f"samples not in the current projection: {missing[:5]}")
        return np.asarray([coord_by_id[int(i)] for i in sample_ids])

    def density_diff_between(self, newer_ids, older_ids, **metadata):
        return density_mod.compare_batches(
            self.coords_for(newer_ids),
            self.coords_for(older_ids),
            self.config.density_resolution,
            **metadata,
        )

    # -- integrity ---------------------------------------------------------------

    def check_integrity(self) -> None:
        for sid in self.training_ids:
            self.dataset.index_of(sid)
        for learner in self.learners.values():
            for sid in learner.training_ids:
                self.dataset.index_of(sid)
        for ids in self.samples_of_interest.values():
            for sid in ids:
                self.dataset.index_of(sid)
        for sid in self.window.member_ids(self.dataset):
            self.dataset.index_of(sid)
        ticks = [p.tick for p in self.drift_series]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise AssertionError("drift series ticks must strictly increase")


# -- persistence ---------------------------------------------------------------


def _component_to_dict(c: gmm_mod.GaussianComponent) -> dict:
    return {
        "id": c.id,
        "mean": [float(v) for v in c.mean],
        "m2": [float(v) for v in c.m2.ravel()],  # row-major
        "member_count": c.member_count,
        "member_ids": sorted(int(i) for i in c.member_ids),
        "created_tick": c.created_tick,
        "cov_floor": c.cov_floor,
    }


def _component_from_dict(d: dict, dim: int) -> gmm_mod.GaussianComponent:
    return gmm_mod.GaussianComponent(
        id=int(d["id"]),
        mean=np.asarray(d["mean"], dtype=float),
        m2=np.asarray(d["m2"], dtype=float).reshape(dim, dim),
        member_count=int(d["member_count"]),
        member_ids={int(i) for i in d["member_ids"]},
        created_tick=int(d["created_tick"]),
        cov_floor=float(d["cov_floor"]),
    )


def _ensemble_to_dict(e: ens_mod.EnsembleModel | None) -> dict | None:
    if e is None:
        return None
    return {
        "members": [[int(lid), float(w)] for lid, w in e.members],
        "beta_w": e.beta_w,
        "prune_threshold": e.prune_threshold,
        "update_period": e.update_period,
    }


def _ensemble_from_dict(d: dict | None) -> ens_mod.EnsembleModel | None:
    if d is None:
        return None
    return ens_mod.EnsembleModel(
        members=[(int(lid), float(w)) for lid, w in d["members"]],
        beta_w=float(d["beta_w"]),
        prune_threshold=float(d["prune_threshold"]),
        update_period=int(d["update_period"]),
    )


def session_to_dict(session: StreamSession) -> dict:
    ds = session.dataset
    gmm = session.gmm
    return {
        "schema": SESSION_SCHEMA,
        "dataset": {
            "feature_names": list(ds.feature_names),
            "rows": [[float(v) for v in row] for row in ds.rows],
            "timestamps": [int(t) for t in ds.timestamps],
            "ids": [int(i) for i in ds.ids],
            "labels": list(ds.labels) if ds.labels is not None else None,
        },
        "training_ids": sorted(session.training_ids),
        "window": {"length": session.window.length, "end_tick": session.window.end_tick},
        "config": session.config.to_dict(),
        "gmm": {
            "components": [_component_to_dict(c) for c in gmm.components],
            "pending": [
                {
                    "sample_id": int(p.sample_id),
                    "vector": [float(v) for v in p.vector],
                    "provisional_component": int(p.provisional_component),
                }
                for p in gmm.pending
            ],
            "assign_confidence": gmm.assign_confidence,
            "buffer_threshold": gmm.buffer_threshold,
            "cov_floor": gmm.cov_floor,
            "next_component_id": gmm.next_component_id,
            "fit_seed": gmm.fit_seed,
        },
        "drift_series": [p.to_dict() for p in session.drift_series],
        "learners": [
            {
                "id": l.id,
                "training_ids": [int(i) for i in l.training_ids],
                "component_histogram": {
                    str(c): float(v) for c, v in l.component_histogram.items()
                },
                "created_tick": l.created_tick,
                "model": {
                    "classes": [int(c) for c in l.model.classes],
                    "weights": [[float(v) for v in row] for row in l.model.weights],
                    "bias": [float(v) for v in l.model.bias],
                    "feature_mean": [float(v) for v in l.model.feature_mean],
                    "feature_scale": [float(v) for v in l.model.feature_scale],
                },
            }
            for l in sorted(session.learners.values(), key=lambda l: l.id)
        ],
        "next_learner_id": session.next_learner_id,
        "ensemble": _ensemble_to_dict(session.ensemble),
        "previous_ensemble": _ensemble_to_dict(session.previous_ensemble),
        "samples_of_interest": {
            name: [int(i) for i in ids]
            for name, ids in sorted(session.samples_of_interest.items())
        },
        "events": list(session.events),
        "projection": None
        if session.projection is None
        else {
            "tick": session.projection.solution.tick,
            "ids": [int(i) for i in session.projection.ids],
            "labels": [int(l) for l in session.projection.labels],
            "coords": [
                [float(a), float(b)] for a, b in session.projection.solution.coords
            ],
            "objective_trace": [
                float(v) for v in session.projection.solution.objective_trace
            ],
        },
        "projection_stale": session.projection_stale,
    }


def session_from_dict(doc: dict) -> StreamSession:
    if doc.get("schema") != SESSION_SCHEMA:
        raise ValueError(f"unsupported session schema {doc.get('schema')!r}")
    dd = doc["dataset"]
    dataset = Dataset(
        feature_names=list(dd["feature_names"]),
        rows=np.asarray(dd["rows"], dtype=float).reshape(-1, len(dd["feature_names"])),
        timestamps=np.asarray(dd["timestamps"], dtype=np.int64),
        ids=np.asarray(dd["ids"], dtype=np.int64),
        labels=list(dd["labels"]) if dd.get("labels") is not None else None,
    )
    dim = dataset.d
    gd = doc["gmm"]
    gmm = gmm_mod.GmmState(
        components=[_component_from_dict(c, dim) for c in gd["components"]],
        assign_confidence=float(gd["assign_confidence"]),
        buffer_threshold=gd["buffer_threshold"],
        cov_floor=float(gd["cov_floor"]),
        pending=[
            gmm_mod.PendingSample(
                sample_id=int(p["sample_id"]),
                vector=np.asarray(p["vector"], dtype=float),
                provisional_component=int(p["provisional_component"]),
            )
            for p in gd["pending"]
        ],
        next_component_id=int(gd["next_component_id"]),
        fit_seed=int(gd["fit_seed"]),
    )
    config = SessionConfig.from_dict(doc["config"])
    session = StreamSession(
        dataset=dataset,
        training_ids={int(i) for i in doc["training_ids"]},
        window=SlidingWindow(
            length=int(doc["window"]["length"]),
            end_tick=int(doc["window"]["end_tick"]),
        ),
        gmm=gmm,
        config=config,
        drift_series=[
            DriftPoint(
                tick=int(p["tick"]),
                overall=float(p["overall"]),
                per_feature={k: float(v) for k, v in p["per_feature"].items()},
                per_cluster={
                    int(c): (float(v[0]), float(v[1]))
                    for c, v in p["per_cluster"].items()
                },
            )
            for p in doc["drift_series"]
        ],
        next_learner_id=int(doc["next_learner_id"]),
        ensemble=_ensemble_from_dict(doc.get("ensemble")),
        previous_ensemble=_ensemble_from_dict(doc.get("previous_ensemble")),
        samples_of_interest={
            name: [int(i) for i in ids]
            for name, ids in doc.get("samples_of_interest", {}).items()
        },
        events=list(doc.get("events", [])),
        projection_stale=bool(doc.get("projection_stale", True)),
    )
    for ld in doc["learners"]:
        model = ens_mod.LogisticModel(
            classes=np.asarray(ld["model"]["classes"], dtype=int),
            weights=np.asarray(ld["model"]["weights"], dtype=float),
            bias=np.asarray(ld["model"]["bias"], dtype=float),
            feature_mean=np.asarray(ld["model"]["feature_mean"], dtype=float),
            feature_scale=np.asarray(ld["model"]["feature_scale"], dtype=float),
        )
        learner = ens_mod.BaseLearner(
            id=int(ld["id"]),
            training_ids=[int(i) for i in ld["training_ids"]],
            component_histogram={
                int(c): float(v) for c, v in ld["component_histogram"].items()
            },
            model=model,
            created_tick=int(ld["created_tick"]),
        )
        session.learners[learner.id] = learner
    pd = doc.get("projection")
    if pd is not None:
        session.projection = SessionProjection(
            solution=proj_mod.ProjectionSolution(
                coords=np.asarray(pd["coords"], dtype=float),
                objective_trace=[float(v) for v in pd["objective_trace"]],
                tick=int(pd["tick"]),
            ),
            ids=[int(i) for i in pd["ids"]],
            labels=[int(l) for l in pd["labels"]],
        )
    session._rebuild_assignments()
    return session


def session_to_json(session: StreamSession) -> str:
    return json.dumps(session_to_dict(session), sort_keys=True, separators=(",", ":"))


def session_from_json(text: str) -> StreamSession:
    return session_from_dict(json.loads(text))
