"""Adaptive GP limit-state surrogates, n-ball probing, failure-mode classification and GMM densities."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import gp_surrogate
from .errors import DomainError, SamplingError
from .shear_rha import FailureMode, enumerate_failure_modes

log = logging.getLogger(__name__)

ALPHA_STOP = 2.0


def predict_all(models, U):
    """Stacked (n, N) predictive means and standard deviations."""
    dims = {m.dim for m in models}
    if len(dims) != 1:
        raise DomainError("surrogates must share the input dimension")
    mus, sds = [], []
    for m in models:
        mu, var = m.predict(U)
        mus.append(mu)
        sds.append(np.sqrt(var))
    return np.column_stack(mus), np.column_stack(sds)


def learning_criterion(models, U):
    """alpha(u') = |mu_ct| / sigma_ct, ct being the component with the smallest |mu|.

    Returns ``(alpha, ct)`` with ``ct`` zero-based; alpha is +inf where the
    selected component has zero predictive spread.
    """
    mu, sd = predict_all(models, np.atleast_2d(U))
    return _criterion(mu, sd)


def _criterion(mu, sd):
    ct = np.argmin(np.abs(mu), axis=1)
    rows = np.arange(mu.shape[0])
    m = np.abs(mu[rows, ct])
    s = sd[rows, ct]
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(s > 0, m / np.where(s > 0, s, 1.0), np.inf)
    return alpha, ct


@dataclass
class ActiveLearningResult:
    models: list
    labeled: list                 # pool indices in labeling order
    g: np.ndarray                 # (len(labeled), N) limit-state values
    log: list = field(default_factory=list)
    converged: bool = False
    n_initial: int = 0

    @property
    def n_added(self):
        return len(self.labeled) - self.n_initial

    def write_log(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "pool_index", "alpha", "ct", "point"])
            for row in self.log:
                w.writerow([row["iteration"], row["pool_index"], repr(row["alpha"]), row["ct"] + 1,
                            " ".join(repr(float(x)) for x in row["point"])])


def _fit_all(U, G, thetas, optimize, n_starts, seed, mean):
    models = []
    for j in range(G.shape[1]):
        theta0 = None if thetas is None else thetas[j]
        models.append(gp_surrogate.fit(U, G[:, j], n_starts=n_starts, seed=seed + j,
                                       theta0=theta0, optimize=optimize, mean=mean))
    return models


def run_active_learning(pool_u, labeler, initial_count, budget, seed=0, reopt_every=10,
                        n_starts=4, initial=None, mean="zero"):
    """Grow GP training sets one point at a time until min alpha over the unlabeled pool exceeds 2.

    ``labeler(i)`` returns the limit-state vector of pool point ``i``. The first
    ``initial_count`` labels come from a seeded permutation unless ``initial``
    lists them. Hyperparameters are fully re-optimized (warm started) every
    ``reopt_every`` additions; in between, the GPs are refitted with the
    current hyperparameters on the enlarged data.
    """
    U = np.atleast_2d(np.asarray(pool_u, dtype=float))
    n = U.shape[0]
    if not 2 <= initial_count < n:
        raise DomainError(f"initial count {initial_count} must be in [2, pool size {n})")
    if budget < 0:
        raise DomainError("budget must be non-negative")
    rng = np.random.default_rng(seed)
    labeled = list(initial) if initial is not None else sorted(rng.permutation(n)[:initial_count].tolist())
    if len(labeled) != initial_count or len(set(labeled)) != initial_count:
        raise DomainError("initial indices must be unique and match initial_count")
    G = np.array([np.asarray(labeler(i), dtype=float) for i in labeled])
    models = _fit_all(U[labeled], G, None, True, n_starts, seed, mean)
    thetas = [m.theta for m in models]
    result = ActiveLearningResult(models, labeled, G, n_initial=initial_count)
    mask = np.ones(n, dtype=bool)
    mask[labeled] = False
    it = 0
    while True:
        free = np.flatnonzero(mask)
        if free.size == 0:
            result.converged = True
            break
        alpha, ct = learning_criterion(models, U[free])
        k = int(np.argmin(alpha))
        if alpha[k] > ALPHA_STOP:
            result.converged = True
            break
        if it >= budget:
            break
        idx = int(free[k])
        it += 1
        result.log.append({"iteration": it, "pool_index": idx, "alpha": float(alpha[k]),
                           "ct": int(ct[k]), "point": U[idx].copy()})
        labeled.append(idx)
        mask[idx] = False
        G = np.vstack((G, np.asarray(labeler(idx), dtype=float)))
        reopt = it % reopt_every == 0
        models = _fit_all(U[labeled], G, thetas, reopt, 1 if reopt else 0, seed + it, mean)
        if reopt:
            thetas = [m.theta for m in models]
    result.models = models
    result.labeled = labeled
    result.g = G
    log.info("active learning: %d added, converged=%s", result.n_added, result.converged)
    return result


@dataclass
class BallSampleSet:
    dim: int
    radius: float
    samples: np.ndarray


def n_ball_sample(n_dim, radius, count, seed) -> BallSampleSet:
    """Uniform points in the n-ball: Gaussian direction, radius R * U**(1/n)."""
    if n_dim < 1:
        raise DomainError("dimension must be at least 1")
    if not radius > 0:
        raise DomainError("radius must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, n_dim))
    norms = np.linalg.norm(z, axis=1)
    norms[norms == 0] = 1.0
    r = radius * rng.random(count) ** (1.0 / n_dim)
    return BallSampleSet(n_dim, float(radius), z / norms[:, None] * r[:, None])


def predicted_bits(models, U):
    """(n, N) 0/1 failure indicators from the sign of the surrogate means."""
    mu, _ = predict_all(models, U)
    return (mu <= 0).astype(np.int8)


def classify_modes(ball: BallSampleSet, models, min_support=1):
    """Map each non-safe predicted mode to its ball samples, dropping modes below ``min_support``."""
    bits = predicted_bits(models, ball.samples)
    out = {}
    for mode in enumerate_failure_modes(bits.shape[1]):
        sel = np.all(bits == np.array(mode.bits, dtype=np.int8), axis=1)
        cnt = int(np.count_nonzero(sel))
        if cnt and cnt >= min_support:
            out[mode] = ball.samples[sel]
        elif cnt:
            log.info("mode %s dropped: %d samples < min support %d", mode.label, cnt, min_support)
    return out


@dataclass
class ModeDensity:
    mode: FailureMode
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    support: int = 0
    loglik: float = float("nan")

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def logpdf(self, X):
        return _mixture_logpdf(np.atleast_2d(X), self.weights, self.means, self.covariances)

    def sample(self, count, rng):
        comp = rng.choice(self.n_components, size=count, p=self.weights)
        out = np.empty((count, self.dim))
        z = rng.standard_normal((count, self.dim))
        for k in range(self.n_components):
            sel = comp == k
            L = np.linalg.cholesky(self.covariances[k])
            out[sel] = self.means[k] + z[sel] @ L.T
        return out

    def to_dict(self):
        return {
            "mode": self.mode.label,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "support": self.support,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(FailureMode.from_label(d["mode"]), np.array(d["weights"]), np.array(d["means"]),
                   np.array(d["covariances"]), int(d.get("support", 0)))


def save_densities(densities, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([d.to_dict() for d in densities], fh, indent=1)
        fh.write("\n")


def load_densities(path):
    with open(path, encoding="utf-8") as fh:
        return [ModeDensity.from_dict(d) for d in json.load(fh)]


def _component_logpdf(X, mean, cov):
    L = np.linalg.cholesky(cov)
    diff = np.linalg.solve(L, (X - mean).T)
    maha = np.sum(diff * diff, axis=0)
    return -0.5 * maha - np.sum(np.log(np.diag(L))) - 0.5 * X.shape[1] * math.log(2 * math.pi)


def _mixture_logpdf(X, weights, means, covs):
    comp = np.column_stack([math.log(w) + _component_logpdf(X, m, c) for w, m, c in zip(weights, means, covs)])
    return logsumexp(comp, axis=1)


def _em(X, n_m, rng, tol, max_iter):
    n, d = X.shape
    means = X[rng.choice(n, size=n_m, replace=False)].copy()
    base = np.cov(X.T).reshape(d, d)
    ridge = 1e-6 * max(float(np.trace(base)), 1e-12) / d
    covs = np.array([base + ridge * np.eye(d) for _ in range(n_m)])
    weights = np.full(n_m, 1.0 / n_m)
    prev = -np.inf
    ll = -np.inf
    for _ in range(max_iter):
        comp = np.column_stack([math.log(w) + _component_logpdf(X, m, c) for w, m, c in zip(weights, means, covs)])
        norm = logsumexp(comp, axis=1)
        ll = float(np.sum(norm))
        resp = np.exp(comp - norm[:, None])
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / nk.sum()
        means = (resp.T @ X) / nk[:, None]
        for k in range(n_m):
            diff = X - means[k]
            c = (resp[:, k, None] * diff).T @ diff / nk[k]
            c = 0.5 * (c + c.T)
            covs[k] = c + 1e-6 * max(float(np.trace(c)), 1e-12) / d * np.eye(d)
        if ll - prev < tol:
            break
        prev = ll
    weights = weights / weights.sum()
    return weights, means, covs, ll


def fit_gmm(samples, n_m, seed, restarts=5, tol=1e-8, max_iter=500, mode=None) -> ModeDensity:
    """EM fit of an ``n_m``-component mixture; best log-likelihood over seeded restarts."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = X.shape
    if n_m < 1:
        raise DomainError("number of mixture components must be positive")
    if n < 2:
        raise SamplingError("at least two samples are needed to fit a density")
    if n < n_m * (d + 1):
        warnings.warn(f"{n} samples too few for {n_m} components in {d}-D; using a single Gaussian",
                      RuntimeWarning, stacklevel=2)
        n_m = 1
    best = None
    for r in range(restarts if n_m > 1 else 1):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        fitres = _em(X, n_m, rng, tol, max_iter)
        if best is None or fitres[3] > best[3]:
            best = fitres
    w, m, c, ll = best
    if mode is None:
        mode = FailureMode(())
    return ModeDensity(mode, w, m, c, support=n, loglik=ll)


def sample_mode_density(density: ModeDensity, models, count, seed, batch=None):
    """Draw from the mixture and keep samples whose surrogate-predicted mode matches.

    Returns ``(accepted, acceptance_rate)``. Draws stop once ``count`` samples
    are accepted or ``100 * count`` have been drawn; an acceptance rate under 1%
    raises ``SamplingError``.
    """
    if count == 0:
        return np.empty((0, density.dim)), 1.0
    rng = np.random.default_rng(seed)
    cap = 100 * count
    batch = batch or max(4 * count, 256)
    target = np.array(density.mode.bits, dtype=np.int8)
    kept = []
    n_kept = 0
    drawn = 0
    while n_kept < count and drawn < cap:
        m = min(batch, cap - drawn)
        X = density.sample(m, rng)
        drawn += m
        ok = np.all(predicted_bits(models, X) == target, axis=1)
        kept.append(X[ok])
        n_kept += int(ok.sum())
    acc = np.vstack(kept)
    rate = acc.shape[0] / drawn
    if rate < 0.01:
        raise SamplingError(f"mode {density.mode.label}: acceptance rate {rate:.4f} below 1%")
    return acc[:count], rate
