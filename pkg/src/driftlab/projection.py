"""Mixture-aware constrained 2-D projection.

A t-SNE variant with three ingredients: (1) within-component distances are
contracted by per-component shrink factors derived from component entropy,
(2) a center-shape KL term keeps each original sample's affinity to the
component centers consistent with the previous layout, (3) a position KL
term pins a blue-noise subset of original samples near their previous
coordinates. The combined objective

    lam * KL(P||Q) + phi * KL(Pc||Qc) + (1 - lam - phi) * KL(Ps||Qs)

is minimized by momentum gradient descent with backtracking, so accepted
steps never increase the objective once early exaggeration ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

MACHINE_TINY = 1e-300


@dataclass(frozen=True)
class ProjectionConfig:
    alpha: float = 1.0  # maximum shrink factor, (0, 1]
    beta: float = 0.5  # dispersion weighting, [0, 1)
    epsilon: float = 1e-6  # entropy floor
    lam: float = 0.6  # weight of the pairwise KL term
    phi: float = 0.2  # weight of the center-shape term
    anchor_cap: int = 500
    perplexity: float = 30.0
    max_iterations: int = 350
    learning_rate: float = 10.0
    momentum: float = 0.8
    early_exaggeration: float = 4.0
    exaggeration_iters: int = 50
    convergence_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("beta must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lam < 0 or self.phi < 0 or self.lam + self.phi > 1.0 + 1e-12:
            raise ValueError("need lam, phi >= 0 with lam + phi <= 1")


def component_entropy(cov: np.ndarray, epsilon: float) -> float:
    """Differential entropy of a Gaussian with the given covariance,
    floored at epsilon."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        logdet = -np.inf
    h = 0.5 * logdet + 0.5 * d * (1.0 + np.log(2.0 * np.pi))
    return float(max(h, epsilon))


def shrink_factors(
    covariances: dict[int, np.ndarray],
    alpha: float,
    beta: float,
    epsilon: float,
) -> dict[int, float]:
    """Per-component shrink: the most dispersed component gets
    alpha * (1 - beta); tight components approach alpha."""
    if not covariances:
        raise ValueError("need at least one component")
    entropies = {
        cid: component_entropy(cov, epsilon) for cid, cov in covariances.items()
    }
    h_max = max(entropies.values())
    return {
        cid: alpha * (1.0 - beta * h / h_max) for cid, h in entropies.items()
    }


def constrained_distance(
    x_i: np.ndarray,
    x_j: np.ndarray,
    label_i: int,
    label_j: int,
    shrink: dict[int, float],
) -> float:
    """Euclidean distance, contracted when both samples share a component."""
    base = float(np.linalg.norm(np.asarray(x_i, float) - np.asarray(x_j, float)))
    if label_i == label_j and label_i in shrink:
        return shrink[label_i] * base
    return base


def constrained_distance_matrix(
    x: np.ndarray, labels: np.ndarray, shrink: dict[int, float]
) -> np.ndarray:
    dist = cdist(x, x)
    labels = np.asarray(labels)
    for cid, a in shrink.items():
        mask = labels == cid
        if mask.any():
            dist[np.ix_(mask, mask)] *= a
    return dist


def center_distance_matrix(
    x: np.ndarray,
    labels: np.ndarray,
    centers: np.ndarray,
    center_ids: list[int],
    shrink: dict[int, float],
) -> np.ndarray:
    """Constrained distances from each sample to each component center
    (a center belongs to its own component)."""
    dist = cdist(x, centers)
    labels = np.asarray(labels)
    for k, cid in enumerate(center_ids):
        mask = labels == cid
        if mask.any() and cid in shrink:
            dist[mask, k] *= shrink[cid]
    return dist


def select_anchors(x: np.ndarray, cap: int) -> np.ndarray:
    """Spatially even subset via farthest-point sampling (all points when
    the set fits under the cap)."""
    n = x.shape[0]
    if n <= cap:
        return np.arange(n)
    center = x.mean(axis=0)
    first = int(np.argmax(((x - center) ** 2).sum(axis=1)))
    chosen = [first]
    d2 = ((x - x[first]) ** 2).sum(axis=1)
    for _ in range(cap - 1):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return np.array(sorted(chosen))


def _calibrate_row(d2_row: np.ndarray, target_entropy: float) -> tuple[float, np.ndarray]:
    """Binary search the Gaussian precision for one sample so the
    conditional distribution hits the target entropy (log perplexity)."""
    beta = 1.0
    beta_min, beta_max = -np.inf, np.inf
    probs = None
    for _ in range(64):
        w = np.exp(-d2_row * beta)
        total = w.sum()
        if total <= 0:
            h = 0.0
            probs = np.zeros_like(w)
        else:
            probs = w / total
            nz = probs > 0
            h = float(-(probs[nz] * np.log(probs[nz])).sum())
        diff = h - target_entropy
        if abs(diff) < 1e-7:
            break
        if diff > 0:
            beta_min = beta
            beta = beta * 2.0 if beta_max == np.inf else 0.5 * (beta + beta_max)
        else:
            beta_max = beta
            beta = beta * 0.5 if beta_min == -np.inf else 0.5 * (beta + beta_min)
    return beta, probs


def perplexity_affinities(dist: np.ndarray, perplexity: float):
    """Symmetric joint affinities P and the per-sample precisions used."""
    n = dist.shape[0]
    eff_perp = max(2.0, min(perplexity, (n - 1.0)))
    target = np.log(eff_perp)
    cond = np.zeros((n, n))
    betas = np.empty(n)
    d2 = dist**2
    idx = np.arange(n)
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, probs = _calibrate_row(row, target)
        betas[i] = beta
        cond[i, np.delete(idx, i)] = probs
    p = (cond + cond.T) / (2.0 * n)
    return p, betas


@dataclass
class ProjectionProblem:
    """Inputs for one projection solve.

    The first n_original rows of high_dim are samples carried over from the
    previous solve; the rest are new. Center constraints and anchors only
    act when previous coordinates exist.
    """

    high_dim: np.ndarray
    component_labels: np.ndarray
    shrink: dict[int, float]
    n_original: int
    center_ids: list[int] = field(default_factory=list)
    center_high: np.ndarray | None = None  # (k, d)
    center_prev_2d: np.ndarray | None = None  # (k, 2)
    center_weights: np.ndarray | None = None  # sqrt(|C_k|)
    anchor_indices: np.ndarray | None = None  # indices into originals
    anchor_prev_2d: np.ndarray | None = None
    previous_coords: np.ndarray | None = None  # (n_original, 2)


@dataclass
class ProjectionSolution:
    coords: np.ndarray
    objective_trace: list[float]
    tick: int = 0


class ProjectionObjective:
    """Precomputed distributions and the value/gradient of the combined
    objective as a function of the 2-D coordinates."""

    def __init__(self, problem: ProjectionProblem, config: ProjectionConfig):
        self.cfg = config
        x = np.asarray(problem.high_dim, dtype=float)
        labels = np.asarray(problem.component_labels)
        self.n_total = x.shape[0]
        self.n_original = problem.n_original

        dist = constrained_distance_matrix(x, labels, problem.shrink)
        self.p, self._betas = perplexity_affinities(dist, config.perplexity)

        constraints_on = (
            problem.previous_coords is not None
            and problem.center_prev_2d is not None
            and len(problem.center_ids) > 0
        )
        anchors_on = (
            problem.previous_coords is not None
            and problem.anchor_indices is not None
            and len(problem.anchor_indices) > 0
        )
        # without history the pairwise term carries everything
        if constraints_on or anchors_on:
            self.lam = config.lam
            self.phi = config.phi if constraints_on else 0.0
            self.psi = (1.0 - config.lam - config.phi) if anchors_on else 0.0
            rescale = self.lam + self.phi + self.psi
            self.lam, self.phi, self.psi = (
                self.lam / rescale,
                self.phi / rescale,
                self.psi / rescale,
            )
        else:
            self.lam, self.phi, self.psi = 1.0, 0.0, 0.0

        self.center_prev = None
        self.p_c = None
        if self.phi > 0:
            centers = np.asarray(problem.center_high, dtype=float)
            cdists = center_distance_matrix(
                x[: self.n_original],
                labels[: self.n_original],
                centers,
                problem.center_ids,
                problem.shrink,
            )
            sigma2 = 1.0 / (2.0 * self._betas[: self.n_original])
            kernel = np.exp(-(cdists**2) / (2.0 * sigma2[:, None]))
            weighted = kernel * np.asarray(problem.center_weights, dtype=float)
            total = weighted.sum()
            self.p_c = weighted / total if total > 0 else weighted
            self.center_prev = np.asarray(problem.center_prev_2d, dtype=float)

        self.anchor_prev = None
        self.p_s = None
        self.anchor_idx = None
        if self.psi > 0:
            self.anchor_idx = np.asarray(problem.anchor_indices, dtype=int)
            n_prime = len(self.anchor_idx)
            p_s = np.zeros((self.n_original, n_prime))
            p_s[self.anchor_idx, np.arange(n_prime)] = 1.0
            self.p_s = p_s / p_s.sum()
            self.anchor_prev = np.asarray(problem.anchor_prev_2d, dtype=float)

    # -- pairwise t-SNE term ------------------------------------------------

    def _pairwise(self, y: np.ndarray, exaggeration: float):
        d2 = ((y[:, None, :] - y[None, :, :]) ** 2).sum(-1)
        e = 1.0 / (1.0 + d2)
        np.fill_diagonal(e, 0.0)
        z = e.sum()
        q = e / z
        p = self.p
        mask = p > 0
        plogp = float((p[mask] * np.log(p[mask])).sum())
        ploge = float((p[mask] * np.log(e[mask] + MACHINE_TINY)).sum())
        value = exaggeration * (plogp - ploge) + np.log(z)
        grad_coeff = 4.0 * (exaggeration * p - q) * e
        grad = (grad_coeff.sum(axis=1)[:, None] * y) - grad_coeff @ y
        return value, grad

    # -- fixed-target Student-t terms ----------------------------------------

    def _fixed_target_term(self, y_rows: np.ndarray, p: np.ndarray, targets: np.ndarray):
        diff = y_rows[:, None, :] - targets[None, :, :]
        e = 1.0 / (1.0 + (diff**2).sum(-1))
        z = e.sum()
        q = e / z
        mask = p > 0
        value = float((p[mask] * np.log(p[mask] / q[mask])).sum())
        grad = (2.0 * ((p - q) * e))[:, :, None] * diff
        return value, grad.sum(axis=1)

    def value_and_grad(self, y: np.ndarray, exaggeration: float = 1.0):
        value, grad = self._pairwise(y, exaggeration)
        value *= self.lam
        grad = self.lam * grad
        if self.phi > 0:
            v, g = self._fixed_target_term(
                y[: self.n_original], self.p_c, self.center_prev
            )
            value += self.phi * v
            grad[: self.n_original] += self.phi * g
        if self.psi > 0:
            v, g = self._fixed_target_term(
                y[: self.n_original], self.p_s, self.anchor_prev
            )
            value += self.psi * v
            grad[: self.n_original] += self.psi * g
        return value, grad

    def value(self, y: np.ndarray, exaggeration: float = 1.0) -> float:
        return self.value_and_grad(y, exaggeration)[0]


def _pca_init(x: np.ndarray, scale: float = 1e-2) -> np.ndarray:
    centered = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    # deterministic sign: largest-magnitude loading positive
    for r in range(comps.shape[0]):
        j = int(np.argmax(np.abs(comps[r])))
        if comps[r, j] < 0:
            comps[r] = -comps[r]
    coords = centered @ comps.T
    if coords.shape[1] < 2:
        coords = np.column_stack([coords, np.zeros(len(coords))])
    std = coords.std()
    if std > 0:
        coords = coords * (scale / std)
    return coords


def _initial_coords(problem: ProjectionProblem, config: ProjectionConfig) -> np.ndarray:
    n, m = problem.n_original, problem.high_dim.shape[0] - problem.n_original
    if problem.previous_coords is None:
        return _pca_init(problem.high_dim)
    rng = np.random.default_rng(config.seed)
    coords = np.empty((n + m, 2))
    coords[:n] = problem.previous_coords
    if m:
        labels = np.asarray(problem.component_labels)
        fallback = problem.previous_coords.mean(axis=0)
        for i in range(n, n + m):
            mask = labels[:n] == labels[i]
            center = problem.previous_coords[mask].mean(axis=0) if mask.any() else fallback
            coords[i] = center + rng.normal(scale=1e-3, size=2)
    return coords


def solve(problem: ProjectionProblem, config: ProjectionConfig, tick: int = 0) -> ProjectionSolution:
    """Minimize the combined objective from a warm or PCA start.

    Momentum steps are accepted only when they do not increase the current
    objective; otherwise the step halves (dropping momentum) up to 20 times.
    """
    if problem.high_dim.shape[0] < 2:
        raise ValueError("need at least two samples to project")
    objective = ProjectionObjective(problem, config)
    y = _initial_coords(problem, config)
    velocity = np.zeros_like(y)
    eta = config.learning_rate
    eta_cap = config.learning_rate * 20.0
    trace: list[float] = []
    stall = 0
    for it in range(config.max_iterations):
        ex = config.early_exaggeration if it < config.exaggeration_iters else 1.0
        f, g = objective.value_and_grad(y, ex)
        if not np.all(np.isfinite(g)):
            ok = False
            for _ in range(20):
                eta *= 0.5
                y_try = y - eta * np.nan_to_num(g)
                if np.isfinite(objective.value(y_try, ex)):
                    y, velocity, ok = y_try, np.zeros_like(y), True
                    break
            if not ok:
                raise FloatingPointError("projection gradient stayed non-finite")
            trace.append(objective.value(y, ex))
            continue
        step = config.momentum * velocity - eta * g
        y_new = y + step
        f_new = objective.value(y_new, ex)
        if np.isfinite(f_new) and f_new <= f + 1e-12:
            velocity = step
            eta = min(eta * 1.05, eta_cap)
        else:
            accepted = False
            e = eta
            for _ in range(20):
                e *= 0.5
                y_try = y - e * g
                f_try = objective.value(y_try, ex)
                if np.isfinite(f_try) and f_try <= f + 1e-12:
                    y_new, f_new = y_try, f_try
                    velocity = -e * g
                    eta = e
                    accepted = True
                    break
            if not accepted:
                y_new, f_new = y, f
                velocity = np.zeros_like(y)
        if it >= config.exaggeration_iters and trace:
            if abs(trace[-1] - f_new) < config.convergence_tol * max(1.0, abs(f_new)):
                stall += 1
            else:
                stall = 0
        y = y_new
        trace.append(float(f_new))
        if stall >= 10:
            break
    return ProjectionSolution(coords=y, objective_trace=trace, tick=tick)
