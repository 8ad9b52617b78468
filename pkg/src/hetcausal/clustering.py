"""Clustering of 1-d latent parameters with an uncertain number of components.

Deterministic chains run k-means for every k in ``K - delta .. K + delta`` and
score each labelling with the marginal log-likelihood; the chain with the
highest score wins. A stochastic Gibbs variant samples centres, labels and the
component count. Labels are 0-based throughout.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    ClusteringFailure,
    DegenerateData,
    GibbsFailure,
    InvalidParameter,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ClusterConfig:
    k_center: int = 3
    k_delta: int = 2
    kappa_log: float = None  # None: k * n / 4 per chain
    max_sweeps: int = 100
    n_init: int = 10
    seed: int = 0
    fixed_k: int = None

    def __post_init__(self):
        if self.k_center < 1:
            raise InvalidParameter("k_center must be >= 1")
        if self.k_delta < 0 or self.k_center - self.k_delta < 1:
            raise InvalidParameter(
                f"need k_delta >= 0 and k_center - k_delta >= 1, got K={self.k_center}, delta={self.k_delta}"
            )
        if self.kappa_log is not None and self.kappa_log < 0:
            raise InvalidParameter("kappa_log must be >= 0")
        if self.max_sweeps < 1 or self.n_init < 1:
            raise InvalidParameter("max_sweeps and n_init must be >= 1")
        if self.fixed_k is not None and self.fixed_k < 1:
            raise InvalidParameter("fixed_k must be >= 1")

    @property
    def k_range(self):
        return range(self.k_center - self.k_delta, self.k_center + self.k_delta + 1)


@dataclass(frozen=True)
class ClusterModel:
    labels: np.ndarray
    k: int
    centers: np.ndarray
    sigma2: float
    tau2: float
    score: float
    per_k_scores: dict = field(default_factory=dict)

    @property
    def sizes(self):
        return np.bincount(self.labels, minlength=self.k)


def default_kappa_log(k, n):
    return k * n / 4.0


def _check_labels(labels, k=None):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise InvalidParameter("labels must be a 1-d integer array")
    k = int(labels.max()) + 1 if k is None else k
    counts = np.bincount(labels, minlength=k)
    if labels.min() < 0 or counts.shape[0] != k or np.any(counts == 0):
        raise InvalidParameter("every cluster 0..k-1 must be nonempty")
    return labels, k, counts


def _assign(theta, centers):
    # argmin picks the smallest index on ties
    return np.argmin(np.abs(theta[:, None] - centers[None, :]), axis=1)


def _sse(theta, labels, centers):
    return float(np.sum((theta - centers[labels]) ** 2))


def kmeans_1d(theta, k, init_centers, max_sweeps=100):
    """Lloyd iterations on 1-d data; returns ``(labels, centers)``.

    An empty cluster takes over the point farthest from its current centre.
    """
    theta = np.asarray(theta, dtype=float)
    centers = np.array(init_centers, dtype=float)
    if centers.shape != (k,):
        raise InvalidParameter(f"need {k} initial centres, got {centers.shape}")
    if np.unique(theta).size < k:
        raise InvalidParameter(f"k={k} exceeds the number of distinct values")
    if np.unique(centers).size < k:
        raise InvalidParameter("initial centres must be distinct")

    labels = _assign(theta, centers)
    for _ in range(max_sweeps):
        labels = _repair_empty(theta, labels, centers, k)
        centers = np.bincount(labels, weights=theta, minlength=k) / np.bincount(labels, minlength=k)
        new = _assign(theta, centers)
        new = _repair_empty(theta, new, centers, k)
        if np.array_equal(new, labels):
            break
        labels = new
    centers = np.bincount(labels, weights=theta, minlength=k) / np.bincount(labels, minlength=k)
    return labels, centers


def _repair_empty(theta, labels, centers, k):
    labels = labels.copy()
    while True:
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return labels
        dist = np.abs(theta - centers[labels])
        # only donate from clusters that keep at least one point
        dist[counts[labels] <= 1] = -np.inf
        i = int(np.argmax(dist))
        labels[i] = empty[0]
        centers[empty[0]] = theta[i]


def kmeanspp_centers(theta, k, rng):
    """Seeded k-means++ spread over the distinct values of theta."""
    vals = np.unique(theta)
    centers = [vals[rng.integers(vals.size)]]
    for _ in range(1, k):
        d2 = np.min((vals[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total == 0:
            break
        centers.append(vals[rng.choice(vals.size, p=d2 / total)])
    return np.sort(np.array(centers))


def within_variance(theta, labels):
    theta = np.asarray(theta, dtype=float)
    labels, k, counts = _check_labels(labels)
    means = np.bincount(labels, weights=theta, minlength=k) / counts
    s2 = float(np.sum((theta - means[labels]) ** 2)) / theta.shape[0]
    if s2 == 0.0:
        raise DegenerateData("all clusters are constant: within-cluster variance is zero")
    return s2


def variance_ratio(theta, labels, sigma2):
    if not sigma2 > 0:
        raise InvalidParameter("sigma2 must be positive")
    theta = np.asarray(theta, dtype=float)
    labels, k, counts = _check_labels(labels)
    if k == 1:
        # the lone cluster mean is the grand mean; avoid roundoff residue
        return 0.0
    means = np.bincount(labels, weights=theta, minlength=k) / counts
    return float(np.sum((means - theta.mean()) ** 2)) / (k * sigma2)


def _log1p_scaled(log_a):
    """log(exp(log_a) + 1) without overflow; log_a may be -inf."""
    return np.logaddexp(log_a, 0.0)


def marginal_log_likelihood(labels, theta, k=None, kappa_log=None):
    theta = np.asarray(theta, dtype=float)
    labels, k, counts = _check_labels(labels, k)
    n = theta.shape[0]
    if kappa_log is None:
        kappa_log = default_kappa_log(k, n)
    s2 = within_variance(theta, labels)
    t2 = variance_ratio(theta, labels, s2)
    means = np.bincount(labels, weights=theta, minlength=k) / counts
    sse = float(np.sum((theta - means[labels]) ** 2))
    with np.errstate(divide="ignore"):
        log_a = kappa_log + np.log(t2) + np.log(counts)
    penalty = 0.5 * float(np.sum(_log1p_scaled(log_a)))
    return -0.5 * n * (LOG_2PI + np.log(s2)) - sse / (2.0 * s2) - penalty


def _best_kmeans(theta, k, config, rng):
    if k == 1:
        labels = np.zeros(theta.shape[0], dtype=int)
        return labels, np.array([theta.mean()])
    best = None
    for _ in range(config.n_init):
        init = kmeanspp_centers(theta, k, rng)
        if init.size < k:
            continue
        labels, centers = kmeans_1d(theta, k, init, config.max_sweeps)
        sse = _sse(theta, labels, centers)
        if best is None or sse < best[0]:
            best = (sse, labels, centers)
    if best is None:
        raise DegenerateData(f"cannot seed {k} distinct centres")
    return best[1], best[2]


def fit_clusters(theta, config=None):
    """Run one k-means chain per candidate k and keep the best-scoring labelling."""
    config = config or ClusterConfig()
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    ks = [config.fixed_k] if config.fixed_k is not None else list(config.k_range)
    if n < max(ks):
        raise InvalidParameter(f"need n >= {max(ks)} observations, got {n}")
    rng = np.random.default_rng(config.seed)

    per_k = {}
    fits = {}
    for k in ks:
        kappa_log = config.kappa_log if config.kappa_log is not None else default_kappa_log(k, n)
        try:
            labels, centers = _best_kmeans(theta, k, config, rng)
            s2 = within_variance(theta, labels)
            t2 = variance_ratio(theta, labels, s2)
            score = marginal_log_likelihood(labels, theta, k, kappa_log)
        except (DegenerateData, InvalidParameter):
            per_k[k] = float("-inf")
            continue
        per_k[k] = score
        fits[k] = (labels, centers, s2, t2, score)
    if not fits:
        raise ClusteringFailure("every clustering chain was degenerate")
    k_hat = max(fits, key=lambda k: (fits[k][4], -k))
    labels, centers, s2, t2, score = fits[k_hat]
    return ClusterModel(labels, k_hat, centers, s2, t2, score, per_k)


# -- Gibbs variant -----------------------------------------------------------
#
# Each candidate k runs its own chain of centre and label draws with sigma^2
# and tau^2 held at the values of the deterministic chain for that k. With
# those fixed, the chain leaves p(z | theta, k) invariant over all labellings
# in {0..k-1}^n (empty clusters allowed). The component count is drawn from
# p(k | theta), proportional to Z_k = sum_z exp(score(z, k)), where Z_k is
# accumulated over the distinct partitions the chain for k has visited.


def gibbs_sample_centers(theta, labels, sigma2, tau2, kappa_log, rng, k=None):
    """Draw every centre from its Gaussian full conditional.

    Empty clusters draw from the zero-mean prior; ``tau2 = 0`` is the
    point-mass limit at zero.
    """
    if not (sigma2 > 0 and tau2 >= 0):
        raise InvalidParameter("need sigma2 > 0 and tau2 >= 0")
    theta = np.asarray(theta, dtype=float)
    labels = np.asarray(labels)
    k = int(labels.max()) + 1 if k is None else int(k)
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidParameter(f"labels must lie in 0..{k - 1}")
    if tau2 == 0:
        return np.zeros(k)
    counts = np.bincount(labels, minlength=k)
    sums = np.bincount(labels, weights=theta, minlength=k)
    prec = counts + np.exp(-kappa_log - np.log(tau2))  # n_c + 1 / (kappa tau^2)
    return sums / prec + np.sqrt(sigma2 / prec) * rng.standard_normal(k)


def _categorical(logp, rng):
    """One draw per row of a (rows, k) array of unnormalized log-probabilities."""
    logp = np.atleast_2d(logp)
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    cdf = np.cumsum(p, axis=1)
    u = rng.random((logp.shape[0], 1)) * cdf[:, -1:]
    return np.minimum((cdf < u).sum(axis=1), logp.shape[1] - 1)


def gibbs_sample_labels(theta, centers, sigma2, rng):
    if not sigma2 > 0:
        raise InvalidParameter("sigma2 must be positive")
    theta = np.asarray(theta, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if centers.size == 1:
        return np.zeros(theta.shape[0], dtype=int)
    logp = -((theta[:, None] - centers[None, :]) ** 2) / (2.0 * sigma2)
    return _categorical(logp, rng)


def fixed_variance_score(labels, theta, k, sigma2, tau2, kappa_log):
    """The marginal log-likelihood with sigma^2 and tau^2 given; empty clusters allowed."""
    theta = np.asarray(theta, dtype=float)
    labels = np.asarray(labels)
    n = theta.shape[0]
    counts = np.bincount(labels, minlength=k)
    means = np.bincount(labels, weights=theta, minlength=k) / np.maximum(counts, 1)
    sse = float(np.sum((theta - means[labels]) ** 2))
    with np.errstate(divide="ignore"):
        log_a = kappa_log + np.log(tau2) + np.log(counts)
    penalty = 0.5 * float(np.sum(_log1p_scaled(log_a)))
    return -0.5 * n * (LOG_2PI + np.log(sigma2)) - sse / (2.0 * sigma2) - penalty


def _log_falling(k, m):
    # log of k (k-1) ... (k-m+1): labellings of an m-block partition with k labels
    return float(np.sum(np.log(np.arange(k - m + 1, k + 1))))


def _score_or_neginf(theta, labels, k, kappa_log):
    try:
        return marginal_log_likelihood(labels, theta, k, kappa_log)
    except (DegenerateData, InvalidParameter):
        return float("-inf")


def gibbs_sample_k(theta, labels_per_k, kappa_log, rng):
    """Draw k with probability proportional to exp(score of its labelling).

    ``kappa_log=None`` uses the k * n / 4 default for each k.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    scores = {
        k: _score_or_neginf(theta, z, k, default_kappa_log(k, n) if kappa_log is None else kappa_log)
        for k, z in labels_per_k.items()
    }
    return sample_k_from_evidence(scores, rng)


def sample_k_from_evidence(log_evidence, rng):
    """Draw k with probability proportional to exp(log_evidence[k])."""
    ks = sorted(log_evidence)
    v = np.array([log_evidence[k] for k in ks])
    if not np.any(np.isfinite(v)):
        raise GibbsFailure("no candidate k has finite evidence")
    return ks[int(_categorical(v, rng)[0])]


@dataclass(frozen=True)
class GibbsSample:
    labels: np.ndarray
    k: int
    score: float


@dataclass
class GibbsRun:
    samples: list
    rejected: int
    attempted: int
    log_evidence: dict = field(default_factory=dict)
    chain_params: dict = field(default_factory=dict)

    def k_frequencies(self):
        ks, counts = np.unique([s.k for s in self.samples], return_counts=True)
        return {int(k): c / len(self.samples) for k, c in zip(ks, counts)}

    def partition_frequencies(self):
        keys = [canonical_partition(s.labels) for s in self.samples]
        uniq, counts = np.unique(np.array(keys), axis=0, return_counts=True)
        return {tuple(int(v) for v in u): c / len(keys) for u, c in zip(uniq, counts)}

    def best(self):
        return max(self.samples, key=lambda s: s.score)


def canonical_partition(labels):
    """Relabel so clusters are numbered in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    remap = np.empty(first.size, dtype=int)
    remap[np.argsort(first)] = np.arange(first.size)
    return remap[inv]


class _Chain:
    """Centre/label sampler for one k with sigma^2 and tau^2 held fixed."""

    def __init__(self, theta, labels, k, sigma2, tau2, kappa_log):
        self.theta, self.k = theta, k
        self.sigma2, self.tau2, self.kappa_log = sigma2, tau2, kappa_log
        self.labels = labels
        self.seen = {}
        self.log_z = -np.inf
        self.score = self._record()

    def _record(self):
        part = canonical_partition(self.labels)
        key = part.tobytes()
        score = self.seen.get(key)
        if score is None:
            score = fixed_variance_score(part, self.theta, self.k, self.sigma2, self.tau2, self.kappa_log)
            self.seen[key] = score
            m = int(part.max()) + 1
            self.log_z = np.logaddexp(self.log_z, score + _log_falling(self.k, m))
        return score

    def sweep(self, rng):
        if self.k > 1:
            centers = gibbs_sample_centers(self.theta, self.labels, self.sigma2, self.tau2,
                                           self.kappa_log, rng, self.k)
            self.labels = gibbs_sample_labels(self.theta, centers, self.sigma2, rng)
            self.score = self._record()


def gibbs_run(theta, config, n_sweeps, burn_in, rng):
    """Sample labellings and the component count.

    Every candidate k keeps a chain whose sigma^2 and tau^2 come from the
    deterministic k-means chain for that k; candidates whose deterministic
    fit is degenerate are skipped and counted in ``rejected``.
    """
    if not n_sweeps > burn_in >= 0:
        raise InvalidParameter("need n_sweeps > burn_in >= 0")
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    ks = [config.fixed_k] if config.fixed_k is not None else list(config.k_range)
    # scores and labels are translation invariant; centring keeps the
    # zero-mean centre prior neutral
    centred = theta - theta.mean()

    chains = {}
    rejected = 0
    for k in ks:
        kappa_log = config.kappa_log if config.kappa_log is not None else default_kappa_log(k, n)
        try:
            labels, _ = _best_kmeans(theta, k, config, rng)
            s2 = within_variance(theta, labels)
            t2 = variance_ratio(theta, labels, s2)
        except (DegenerateData, InvalidParameter):
            rejected += 1
            continue
        chains[k] = _Chain(centred, labels, k, s2, t2, kappa_log)
    if rejected > 0.5 * len(ks) or not chains:
        raise GibbsFailure(f"{rejected} of {len(ks)} chains degenerate")

    samples = []
    for sweep in range(n_sweeps):
        for chain in chains.values():
            chain.sweep(rng)
        if sweep >= burn_in:
            k = sample_k_from_evidence({k: c.log_z for k, c in chains.items()}, rng)
            c = chains[k]
            samples.append(GibbsSample(c.labels.copy(), k, c.score))
    return GibbsRun(
        samples, rejected, len(ks),
        log_evidence={k: float(c.log_z) for k, c in chains.items()},
        chain_params={k: (c.sigma2, c.tau2, c.kappa_log) for k, c in chains.items()},
    )
