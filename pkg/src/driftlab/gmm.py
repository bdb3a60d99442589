"""Incremental Gaussian mixture model.

The reference (training) set is clustered offline with EM, picking the
component count by BIC. Streamed samples are then assigned online: a sample
inside the confidence ellipsoid of an existing component joins it firmly and
updates that component's moments; anything else is assigned provisionally to
the densest component and buffered. Once the buffer reaches its threshold, a
fresh mixture is fitted on the buffered samples and appended as new
components. Analysts can merge components, after which provisional samples
are re-evaluated against the new component set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.stats import chi2

EM_RESTARTS = 5
EM_MAX_ITER = 300
EM_REL_TOL = 1e-6
BUFFER_FIT_K_RANGE = (1, 3)
FLOOR_SCALE = 1e-6
ABS_FLOOR = 1e-9


class GmmFitError(RuntimeError):
    """EM failed to produce a usable fit for every candidate k."""


@dataclass
class GaussianComponent:
    """One mixture component with exact streaming-moment bookkeeping.

    mean and m2 are the running first moment and centered second-moment
    matrix of the member set; covariance = m2 / count with an eigenvalue
    floor applied when the raw matrix is (near-)singular.
    """

    id: int
    mean: np.ndarray
    m2: np.ndarray
    member_count: int
    member_ids: set[int]
    created_tick: int
    cov_floor: float

    _chol: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def covariance(self) -> np.ndarray:
        d = self.mean.shape[0]
        if self.member_count <= 0:
            return np.eye(d) * self.cov_floor
        cov = self.m2 / self.member_count
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov).min() < self.cov_floor:
            cov = cov + np.eye(d) * self.cov_floor
        return cov

    def _cholesky(self):
        if self._chol is None:
            cov = self.covariance
            chol = np.linalg.cholesky(cov)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            self._chol = (chol, logdet)
        return self._chol

    def mahalanobis_sq(self, x: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distance of one sample or a sample matrix."""
        chol, _ = self._cholesky()
        diff = np.atleast_2d(x) - self.mean
        z = solve_triangular(chol, diff.T, lower=True, check_finite=False)
        out = (z * z).sum(axis=0)
        return out if np.ndim(x) == 2 else float(out[0])

    def log_density(self, x: np.ndarray) -> np.ndarray:
        chol, logdet = self._cholesky()
        d = self.mean.shape[0]
        diff = np.atleast_2d(x) - self.mean
        z = solve_triangular(chol, diff.T, lower=True, check_finite=False)
        maha = (z * z).sum(axis=0)
        out = -0.5 * (d * np.log(2 * np.pi) + logdet + maha)
        return out if np.ndim(x) == 2 else float(out[0])

    def add_sample(self, x: np.ndarray, sample_id: int) -> None:
        """Exact single-sample moment update (Welford generalization)."""
        x = np.asarray(x, dtype=float)
        n1 = self.member_count + 1
        delta = x - self.mean
        self.mean = self.mean + delta / n1
        delta2 = x - self.mean
        self.m2 = self.m2 + np.outer(delta, delta2)
        self.member_count = n1
        self.member_ids.add(sample_id)
        self._chol = None


@dataclass
class NewComponentsCreated:
    tick: int
    component_ids: list[int]


@dataclass
class AssignmentOutcome:
    component_id: int
    firm: bool
    event: NewComponentsCreated | None = None


@dataclass
class PendingSample:
    sample_id: int
    vector: np.ndarray
    provisional_component: int


@dataclass
class GmmState:
    components: list[GaussianComponent]
    assign_confidence: float
    buffer_threshold: int | str  # explicit int or "auto"
    cov_floor: float
    pending: list[PendingSample] = field(default_factory=list)
    next_component_id: int = 0
    fit_seed: int = 0

    def component(self, cid: int) -> GaussianComponent:
        for c in self.components:
            if c.id == cid:
                return c
        raise KeyError(f"unknown component id {cid}")

    def resolved_buffer_threshold(self) -> int:
        if self.buffer_threshold != "auto":
            return int(self.buffer_threshold)
        if not self.components:
            return 1
        mean_size = np.mean([c.member_count for c in self.components])
        return max(1, int(mean_size // 2))

    def chi2_quantile(self) -> float:
        d = self.components[0].mean.shape[0]
        return float(chi2.ppf(self.assign_confidence, df=d))

    def provisional_assignments(self) -> dict[int, int]:
        return {p.sample_id: p.provisional_component for p in self.pending}

    def assignment_of(self, sample_id: int) -> int | None:
        for c in self.components:
            if sample_id in c.member_ids:
                return c.id
        for p in self.pending:
            if p.sample_id == sample_id:
                return p.provisional_component
        return None

    def label_matrix(self, x: np.ndarray) -> np.ndarray:
        """Argmax-density component labels for a sample matrix (read-only)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dens = np.stack([c.log_density(x) for c in self.components])
        idx = dens.argmax(axis=0)
        ids = np.array([c.id for c in self.components])
        return ids[idx]


# -- EM fitting ---------------------------------------------------------------


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [((x - c) ** 2).sum(axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(n)])
            continue
        probs = d2 / total
        centers.append(x[rng.choice(n, p=probs)])
    return np.array(centers)


def _gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    c, _ = cho_factor(cov, lower=True, check_finite=False)
    logdet = 2.0 * np.log(np.diag(c)).sum()
    z = solve_triangular(c, (x - mean).T, lower=True, check_finite=False)
    maha = (z * z).sum(axis=0)
    return -0.5 * (d * np.log(2 * np.pi) + logdet + maha)


def _batched_log_prob(x, means, covs):
    """Log densities of every sample under every component, (n, k)."""
    k, d = means.shape
    sign, logdets = np.linalg.slogdet(covs)
    if np.any(sign <= 0):
        raise np.linalg.LinAlgError("covariance not positive definite")
    inv = np.linalg.inv(covs)
    diff = x[:, None, :] - means[None, :, :]  # (n, k, d)
    maha = np.einsum("nkd,kde,nke->nk", diff, inv, diff)
    return -0.5 * (d * np.log(2 * np.pi) + logdets[None, :] + maha)


def _em_single(x: np.ndarray, k: int, floor: float, rng: np.random.Generator):
    """One EM run; returns (log_likelihood, weights, means, covs) or None."""
    n, d = x.shape
    if k == 1:
        # closed form: the MLE is the sample mean and covariance
        mean = x.mean(axis=0)
        centered = x - mean
        cov = centered.T @ centered / n + np.eye(d) * floor
        ll = float(_gaussian_logpdf(x, mean, cov).sum())
        return ll, np.ones(1), mean[None, :], cov[None, :, :], np.zeros((n, 1))
    means = _kmeanspp_init(x, k, rng)
    base_cov = np.cov(x.T, bias=True).reshape(d, d) + np.eye(d) * floor
    covs = np.repeat(base_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)
    eye_floor = np.eye(d) * floor
    prev_ll = -np.inf
    log_resp = None
    for _ in range(EM_MAX_ITER):
        try:
            log_prob = _batched_log_prob(x, means, covs)
        except np.linalg.LinAlgError:
            covs = covs + eye_floor * max(1.0, 1e-2 / max(floor, 1e-300))
            log_prob = _batched_log_prob(x, means, covs)
        log_weighted = log_prob + np.log(weights)
        log_norm = np.logaddexp.reduce(log_weighted, axis=1)
        ll = float(log_norm.sum())
        log_resp = log_weighted - log_norm[:, None]
        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= EM_REL_TOL * abs(prev_ll):
            prev_ll = ll
            break
        prev_ll = ll
        # M-step; the unconditional jitter keeps covariances factorable
        # without an eigendecomposition in the hot loop
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        diff = x[:, None, :] - means[None, :, :]
        covs = np.einsum("nk,nkd,nke->kde", resp, diff, diff) / nk[:, None, None]
        covs = 0.5 * (covs + covs.transpose(0, 2, 1)) + eye_floor
    if not np.isfinite(prev_ll):
        return None
    return prev_ll, weights, means, covs, log_resp


def _fit_em_bic(x: np.ndarray, k_range: tuple[int, int], floor: float, seed: int):
    """Fit EM for each k in range, return the BIC-minimizing solution."""
    n, d = x.shape
    k_lo, k_hi = k_range
    k_hi = min(k_hi, n)
    best = None
    for k in range(k_lo, k_hi + 1):
        run_best = None
        restarts = 1 if k == 1 else EM_RESTARTS  # k=1 is deterministic
        for r in range(restarts):
            rng = np.random.default_rng(seed + 7919 * k + r)
            out = _em_single(x, k, floor, rng)
            if out is None:
                continue
            if run_best is None or out[0] > run_best[0]:
                run_best = out
        if run_best is None:
            continue
        ll = run_best[0]
        p = (k - 1) + k * d + k * d * (d + 1) // 2
        bic = p * np.log(n) - 2.0 * ll
        if best is None or bic < best[0]:
            best = (bic, k, run_best)
    if best is None:
        raise GmmFitError("EM failed for every candidate component count")
    return best


def offline_fit(
    x: np.ndarray,
    k_range: tuple[int, int] = (1, 20),
    *,
    sample_ids: list[int] | None = None,
    assign_confidence: float = 0.95,
    buffer_threshold: int | str = "auto",
    seed: int = 0,
    tick: int = 0,
) -> GmmState:
    """Cluster a training matrix, selecting the component count by BIC.

    Components carry hard (argmax-responsibility) member sets; their means
    and covariances are the exact moments of those member sets so later
    single-sample updates stay consistent with batch recomputation.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if n < max(1, k_range[0]):
        raise ValueError("not enough samples for the requested component range")
    if sample_ids is None:
        sample_ids = list(range(n))
    mean_var = float(np.var(x, axis=0).mean())
    floor = FLOOR_SCALE * mean_var if mean_var > 0 else ABS_FLOOR

    _, k, (ll, weights, means, covs, log_resp) = _fit_em_bic(x, k_range, floor, seed)
    hard = np.asarray(log_resp).argmax(axis=1)

    components: list[GaussianComponent] = []
    next_id = 0
    for j in range(k):
        members = np.flatnonzero(hard == j)
        if members.size == 0:
            # degenerate empty component after hard assignment: keep the EM
            # parameters so the forced-k contract still returns k components
            comp = GaussianComponent(
                id=next_id,
                mean=means[j].copy(),
                m2=covs[j] * 1.0,
                member_count=0,
                member_ids=set(),
                created_tick=tick,
                cov_floor=floor,
            )
        else:
            pts = x[members]
            mu = pts.mean(axis=0)
            centered = pts - mu
            comp = GaussianComponent(
                id=next_id,
                mean=mu,
                m2=centered.T @ centered,
                member_count=members.size,
                member_ids={sample_ids[i] for i in members},
                created_tick=tick,
                cov_floor=floor,
            )
        components.append(comp)
        next_id += 1
    return GmmState(
        components=components,
        assign_confidence=assign_confidence,
        buffer_threshold=buffer_threshold,
        cov_floor=floor,
        next_component_id=next_id,
        fit_seed=seed,
    )


# -- online step --------------------------------------------------------------


def _best_component(state: GmmState, x: np.ndarray):
    """(eligible best, overall best) component by density for one sample."""
    quant = state.chi2_quantile()
    best_all, best_all_density = None, -np.inf
    best_ok, best_ok_density = None, -np.inf
    for comp in state.components:
        dens = comp.log_density(x)
        if dens > best_all_density:
            best_all, best_all_density = comp, dens
        if comp.mahalanobis_sq(x) <= quant and dens > best_ok_density:
            best_ok, best_ok_density = comp, dens
    return best_ok, best_all


def classify(state: GmmState, sample: np.ndarray) -> tuple[int, bool]:
    """Read-only assignment decision: (component id, would be firm).

    The same rule online_assign applies, without mutating the state.
    """
    x = np.asarray(sample, dtype=float)
    best_ok, best_all = _best_component(state, x)
    if best_ok is not None:
        return best_ok.id, True
    return best_all.id, False


def _fit_buffer(state: GmmState, tick: int) -> NewComponentsCreated:
    """Fit a fresh mixture on the pending buffer and append its components."""
    vectors = np.array([p.vector for p in state.pending])
    ids = [p.sample_id for p in state.pending]
    k_hi = min(BUFFER_FIT_K_RANGE[1], len(ids))
    sub = offline_fit(
        vectors,
        (BUFFER_FIT_K_RANGE[0], k_hi),
        sample_ids=ids,
        assign_confidence=state.assign_confidence,
        seed=state.fit_seed + 1,
        tick=tick,
    )
    new_ids = []
    for comp in sub.components:
        if comp.member_count == 0:
            continue
        comp.id = state.next_component_id
        comp.created_tick = tick
        comp.cov_floor = max(comp.cov_floor, state.cov_floor)
        comp._chol = None
        state.components.append(comp)
        new_ids.append(comp.id)
        state.next_component_id += 1
    state.pending.clear()
    return NewComponentsCreated(tick=tick, component_ids=new_ids)


def online_assign(
    state: GmmState, sample: np.ndarray, sample_id: int, tick: int = 0
) -> AssignmentOutcome:
    """Assign one streamed sample, updating the mixture in place.

    Firm assignment requires the sample to sit inside the confidence
    ellipsoid (squared Mahalanobis below the chi-square quantile) of some
    component; otherwise the sample is buffered with a provisional label and
    a full buffer triggers creation of new components.
    """
    if not state.components:
        raise ValueError("online_assign requires at least one component")
    x = np.asarray(sample, dtype=float)
    best_ok, best_all = _best_component(state, x)
    if best_ok is not None:
        best_ok.add_sample(x, sample_id)
        return AssignmentOutcome(component_id=best_ok.id, firm=True)
    state.pending.append(
        PendingSample(sample_id=sample_id, vector=x, provisional_component=best_all.id)
    )
    event = None
    if len(state.pending) >= state.resolved_buffer_threshold():
        event = _fit_buffer(state, tick)
    return AssignmentOutcome(
        component_id=state.pending[-1].provisional_component if event is None
        else state.assignment_of(sample_id),
        firm=event is not None,
        event=event,
    )


def _reassign_pending(state: GmmState) -> None:
    """One assignment pass over the buffer without letting it grow."""
    still_pending: list[PendingSample] = []
    for p in state.pending:
        best_ok, best_all = _best_component(state, p.vector)
        if best_ok is not None:
            best_ok.add_sample(p.vector, p.sample_id)
        else:
            p.provisional_component = best_all.id
            still_pending.append(p)
    state.pending = still_pending


def merge_components(state: GmmState, ids: set[int]) -> GaussianComponent:
    """Merge the given components into one with pooled member moments.

    Merging a set that already collapsed to a single component is a no-op;
    afterwards provisional samples are re-evaluated against the new set.
    """
    unique = sorted(set(int(i) for i in ids))
    comps = [state.component(i) for i in unique]
    if len(comps) == 1:
        return comps[0]

    total = sum(c.member_count for c in comps)
    if total == 0:
        raise ValueError("cannot merge components with no members")
    mean = sum(c.member_count * c.mean for c in comps) / total
    d = mean.shape[0]
    m2 = np.zeros((d, d))
    for c in comps:
        diff = c.mean - mean
        m2 += c.m2 + c.member_count * np.outer(diff, diff)
    merged = GaussianComponent(
        id=state.next_component_id,
        mean=mean,
        m2=m2,
        member_count=total,
        member_ids=set().union(*(c.member_ids for c in comps)),
        created_tick=min(c.created_tick for c in comps),
        cov_floor=max(c.cov_floor for c in comps),
    )
    state.next_component_id += 1
    state.components = [c for c in state.components if c.id not in set(unique)]
    state.components.append(merged)
    for p in state.pending:
        if p.provisional_component in unique:
            p.provisional_component = merged.id
    _reassign_pending(state)
    return merged
