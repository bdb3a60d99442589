"""Base learners and the dynamically-weighted-majority ensemble.

Base learners are multinomial logistic regressions trained on analyst-chosen
subsets of the labeled history. The ensemble combines their class
probabilities with weights that decay multiplicatively whenever a member
predicts a labeled sample wrongly; members whose normalized weight falls
below a prune threshold are dropped (never the last one).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_L2 = 1e-3
DEFAULT_EPOCHS = 500
DEFAULT_STEP = 0.1
DEFAULT_BETA_W = 0.5
DEFAULT_PRUNE = 0.01


@dataclass
class LogisticModel:
    """Multinomial logistic regression over standardized features."""

    classes: np.ndarray  # sorted class labels
    weights: np.ndarray  # (n_classes, d)
    bias: np.ndarray  # (n_classes,)
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = (x - self.feature_mean) / self.feature_scale
        logits = z @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        return expl / expl.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes[self.probabilities(x).argmax(axis=1)]


@dataclass
class BaseLearner:
    id: int
    training_ids: list[int]
    component_histogram: dict[int, float]
    model: LogisticModel
    created_tick: int

    def class_probabilities(self, x: np.ndarray, classes: np.ndarray) -> np.ndarray:
        """Probabilities aligned to a shared class vocabulary."""
        own = self.model.probabilities(x)
        out = np.zeros((own.shape[0], len(classes)))
        for j, cls in enumerate(self.model.classes):
            k = int(np.searchsorted(classes, cls))
            out[:, k] = own[:, j]
        return out


@dataclass
class EnsembleModel:
    members: list[tuple[int, float]] = field(default_factory=list)  # (learner id, weight)
    beta_w: float = DEFAULT_BETA_W
    prune_threshold: float = DEFAULT_PRUNE
    update_period: int = 1

    def normalized(self) -> list[tuple[int, float]]:
        total = sum(w for _, w in self.members)
        if total <= 0:
            n = len(self.members)
            return [(lid, 1.0 / n) for lid, _ in self.members]
        return [(lid, w / total) for lid, w in self.members]

    def normalize(self) -> None:
        self.members = self.normalized()


def fit_logistic(
    x: np.ndarray,
    y: np.ndarray,
    *,
    l2: float = DEFAULT_L2,
    epochs: int = DEFAULT_EPOCHS,
    step: float = DEFAULT_STEP,
) -> LogisticModel:
    """Full-batch gradient descent on the softmax cross-entropy with an L2
    penalty; the step size decays over epochs. Falls back to a constant
    predictor when only one class is present."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y)
    classes = np.unique(y)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    n, d = x.shape
    if len(classes) == 1:
        return LogisticModel(
            classes=classes,
            weights=np.zeros((1, d)),
            bias=np.zeros(1),
            feature_mean=mean,
            feature_scale=scale,
        )
    z = (x - mean) / scale
    k = len(classes)
    onehot = (y[:, None] == classes[None, :]).astype(float)
    w = np.zeros((k, d))
    b = np.zeros(k)
    for epoch in range(epochs):
        logits = z @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        probs = expl / expl.sum(axis=1, keepdims=True)
        err = probs - onehot
        grad_w = err.T @ z / n + l2 * w
        grad_b = err.mean(axis=0)
        lr = step / (1.0 + 0.01 * epoch)
        w -= lr * grad_w
        b -= lr * grad_b
    return LogisticModel(
        classes=classes,
        weights=w,
        bias=b,
        feature_mean=mean,
        feature_scale=scale,
    )


def component_histogram(assignments: list[int | None]) -> dict[int, float]:
    """Fractions of training samples per assigned component (unassigned
    samples are skipped)."""
    counts: dict[int, int] = {}
    for cid in assignments:
        if cid is None:
            continue
        counts[cid] = counts.get(cid, 0) + 1
    total = sum(counts.values())
    if total == 0:
        return {}
    return {cid: c / total for cid, c in sorted(counts.items())}


def train_learner(
    learner_id: int,
    x: np.ndarray,
    y: np.ndarray,
    training_ids: list[int],
    assignments: list[int | None],
    *,
    created_tick: int = 0,
    hyperparams: dict | None = None,
) -> BaseLearner:
    hp = hyperparams or {}
    model = fit_logistic(
        x,
        y,
        l2=hp.get("l2", DEFAULT_L2),
        epochs=hp.get("epochs", DEFAULT_EPOCHS),
        step=hp.get("step", DEFAULT_STEP),
    )
    return BaseLearner(
        id=learner_id,
        training_ids=list(training_ids),
        component_histogram=component_histogram(assignments),
        model=model,
        created_tick=created_tick,
    )


def _shared_classes(learners: list[BaseLearner]) -> np.ndarray:
    return np.unique(np.concatenate([l.model.classes for l in learners]))


def _resolve(ensemble: EnsembleModel, learners: dict[int, BaseLearner]):
    members = [(learners[lid], w) for lid, w in ensemble.normalized()]
    if not members:
        raise ValueError("ensemble has no members")
    return members


def predict(
    ensemble: EnsembleModel, learners: dict[int, BaseLearner], x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, dict[int, np.ndarray]]:
    """Weighted-probability vote.

    Returns (classes, confidences, per-learner predicted classes). The
    winning class maximizes the weight-normalized probability sum; ties
    break toward the smallest class label.
    """
    members = _resolve(ensemble, learners)
    classes = _shared_classes([l for l, _ in members])
    x = np.atleast_2d(np.asarray(x, dtype=float))
    combined = np.zeros((x.shape[0], len(classes)))
    votes: dict[int, np.ndarray] = {}
    for learner, weight in members:
        probs = learner.class_probabilities(x, classes)
        combined += weight * probs
        votes[learner.id] = classes[probs.argmax(axis=1)]
    # argmax on the reversed axis would break ties high; np.argmax already
    # returns the first (smallest-class) maximum
    idx = combined.argmax(axis=1)
    return classes[idx], combined[np.arange(len(idx)), idx], votes


def dwm_update(
    ensemble: EnsembleModel,
    learners: dict[int, BaseLearner],
    x: np.ndarray,
    y: np.ndarray,
) -> EnsembleModel:
    """Down-weight members that mispredict each labeled sample, then
    renormalize and prune low-weight members (keeping at least one)."""
    members = _resolve(ensemble, learners)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y)
    raw = {lid: w for lid, w in ensemble.members}
    for learner, _ in members:
        pred = learner.model.predict(x)
        wrong = int((pred != y).sum())
        if wrong:
            raw[learner.id] = raw[learner.id] * ensemble.beta_w**wrong
    total = sum(raw.values())
    if total <= 0:
        normalized = {lid: 1.0 / len(raw) for lid in raw}
    else:
        normalized = {lid: w / total for lid, w in raw.items()}
    kept = {lid: w for lid, w in normalized.items() if w >= ensemble.prune_threshold}
    if not kept:
        best = max(normalized, key=normalized.get)
        kept = {best: normalized[best]}
    total = sum(kept.values())
    return EnsembleModel(
        members=[(lid, w / total) for lid, w in kept.items()],
        beta_w=ensemble.beta_w,
        prune_threshold=ensemble.prune_threshold,
        update_period=ensemble.update_period,
    )


def model_distribution(
    ensemble: EnsembleModel, learners: dict[int, BaseLearner], x: np.ndarray
) -> dict[int, float]:
    """Per-learner importance over a sample set: the learner's ensemble
    weight summed over the samples where it agrees with the ensemble's
    prediction, normalized to 1."""
    members = _resolve(ensemble, learners)
    classes, _, votes = predict(ensemble, learners, x)
    scores: dict[int, float] = {}
    for learner, weight in members:
        agrees = (votes[learner.id] == classes).sum()
        scores[learner.id] = weight * float(agrees)
    total = sum(scores.values())
    if total == 0:
        return {lid: 1.0 / len(scores) for lid in scores}
    return {lid: s / total for lid, s in scores.items()}


@dataclass(frozen=True)
class BinStats:
    bin_low: float
    bin_high: float
    true_positive: int
    false_positive: int
    false_negative: int


@dataclass(frozen=True)
class PerformanceSummary:
    per_class: dict[int, list[BinStats]]
    accuracy: float
    sample_count: int
    comparison: "PerformanceSummary | None" = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "sample_count": self.sample_count,
            "per_class": {
                str(cls): [
                    {
                        "bin": [b.bin_low, b.bin_high],
                        "tp": b.true_positive,
                        "fp": b.false_positive,
                        "fn": b.false_negative,
                    }
                    for b in bins
                ]
                for cls, bins in self.per_class.items()
            },
            "comparison": self.comparison.to_dict() if self.comparison else None,
        }


def _bin_index(confidence: float, n_bins: int) -> int:
    # right-closed bins: (i/n, (i+1)/n], except the first which includes 0
    idx = int(np.ceil(confidence * n_bins)) - 1
    return min(max(idx, 0), n_bins - 1)


def performance_summary(
    ensemble: EnsembleModel,
    learners: dict[int, BaseLearner],
    x: np.ndarray,
    y: np.ndarray,
    n_bins: int = 10,
) -> PerformanceSummary:
    """Squares-style per-class stacked-bar statistics by confidence bin.

    TP: true class c predicted c; FP: predicted c but true class differs;
    FN: true class c predicted otherwise, binned by the winning confidence.
    """
    y = np.asarray(y)
    pred, conf, _ = predict(ensemble, learners, x)
    classes = np.unique(np.concatenate([np.unique(y), np.unique(pred)]))
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    stats = {
        int(cls): [
            [0, 0, 0] for _ in range(n_bins)
        ]
        for cls in classes
    }
    for truth, p, c in zip(y, pred, conf):
        b = _bin_index(float(c), n_bins)
        if p == truth:
            stats[int(truth)][b][0] += 1
        else:
            stats[int(p)][b][1] += 1
            stats[int(truth)][b][2] += 1
    per_class = {
        cls: [
            BinStats(float(edges[i]), float(edges[i + 1]), *counts)
            for i, counts in enumerate(rows)
        ]
        for cls, rows in stats.items()
    }
    accuracy = float((pred == y).mean()) if len(y) else 0.0
    return PerformanceSummary(
        per_class=per_class, accuracy=accuracy, sample_count=len(y)
    )
