"""Gaussian-process regression with a squared-exponential ARD kernel."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import ConditioningError, DomainError

LOG_2PI = math.log(2 * math.pi)
JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)


def _sqdist_per_dim(a, b):
    # (d, n, m) squared coordinate differences
    return (a.T[:, :, None] - b.T[:, None, :]) ** 2


def se_kernel(a, b, signal_var, lengthscales):
    a = np.atleast_2d(a) / lengthscales
    b = np.atleast_2d(b) / lengthscales
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return signal_var * np.exp(-0.5 * np.maximum(d2, 0.0))


def _cholesky(k):
    scale = max(float(np.mean(np.diag(k))), 1e-300)
    for jit in JITTERS:
        try:
            return np.linalg.cholesky(k + (jit * scale) * np.eye(k.shape[0])), jit
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError("kernel matrix not positive definite after maximum jitter")


@dataclass
class GPModel:
    """Trained GP: data, log-hyperparameters and the cached factorization.

    ``theta`` holds ``[log signal_var, log lengthscale_1..d, log noise_var]`` in
    standardized-target units. ``beta`` (intercept then slopes, standardized
    units) is an optional linear trend; ``None`` means a zero mean.
    """

    X: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0
    info: dict = field(default_factory=dict)
    beta: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.X.shape[0] < 2:
            raise DomainError("GP needs at least two training points")
        if self.theta.shape != (self.X.shape[1] + 2,):
            raise DomainError("theta length must be input dimension + 2")
        if self.beta is not None:
            self.beta = np.asarray(self.beta, dtype=float)
            if self.beta.shape != (self.X.shape[1] + 1,):
                raise DomainError("trend coefficients must be input dimension + 1")
        self._factorize()

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def signal_var(self):
        return float(math.exp(self.theta[0]))

    @property
    def lengthscales(self):
        return np.exp(self.theta[1:-1])

    @property
    def noise_var(self):
        return float(math.exp(self.theta[-1]))

    def trend(self, X):
        if self.beta is None:
            return np.zeros(X.shape[0])
        return self.beta[0] + X @ self.beta[1:]

    @property
    def ys(self):
        return (self.y - self.y_mean) / self.y_std - self.trend(self.X)

    def _factorize(self):
        k = se_kernel(self.X, self.X, self.signal_var, self.lengthscales)
        k[np.diag_indices_from(k)] += self.noise_var
        self.L, self.jitter = _cholesky(k)
        self.alpha = cho_solve((self.L, True), self.ys)

    def log_marginal_likelihood(self):
        n = self.X.shape[0]
        return float(-0.5 * self.ys @ self.alpha - np.sum(np.log(np.diag(self.L))) - 0.5 * n * LOG_2PI)

    def predict(self, Xs, chunk=4096):
        """Predictive mean and latent variance, de-standardized."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[1] != self.dim:
            raise DomainError(f"expected {self.dim} input columns, got {Xs.shape[1]}")
        mu = np.empty(Xs.shape[0])
        var = np.empty(Xs.shape[0])
        for s in range(0, Xs.shape[0], chunk):
            ks = se_kernel(Xs[s:s + chunk], self.X, self.signal_var, self.lengthscales)
            mu[s:s + chunk] = ks @ self.alpha + self.trend(Xs[s:s + chunk])
            v = solve_triangular(self.L, ks.T, lower=True)
            var[s:s + chunk] = self.signal_var - np.sum(v * v, axis=0)
        mu = mu * self.y_std + self.y_mean
        var = np.maximum(var, 0.0) * self.y_std ** 2
        return mu, var

    def to_dict(self):
        return {
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "theta": self.theta.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "beta": None if self.beta is None else self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        beta = d.get("beta")
        return cls(np.array(d["X"]), np.array(d["y"]), np.array(d["theta"]), d["y_mean"], d["y_std"],
                   beta=None if beta is None else np.array(beta))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def neg_log_likelihood(theta, X, ys, sqd=None, grad=True):
    """Negative log marginal likelihood and its gradient in log-parameters."""
    n, d = X.shape
    sf2 = math.exp(theta[0])
    ell = np.exp(theta[1:-1])
    sn2 = math.exp(theta[-1])
    if sqd is None:
        sqd = _sqdist_per_dim(X, X)
    scaled = sqd / (ell ** 2)[:, None, None]
    e = np.exp(-0.5 * np.sum(scaled, axis=0))
    k = sf2 * e
    k[np.diag_indices(n)] += sn2
    try:
        L = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        return (1e25, np.zeros_like(theta)) if grad else 1e25
    alpha = cho_solve((L, True), ys)
    nll = 0.5 * ys @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * LOG_2PI
    if not grad:
        return float(nll)
    kinv = cho_solve((L, True), np.eye(n))
    w = kinv - np.outer(alpha, alpha)
    ke = sf2 * e
    g = np.empty_like(theta)
    g[0] = 0.5 * np.sum(w * ke)
    wk = w * ke
    g[1:-1] = 0.5 * np.einsum("ij,lij->l", wk, scaled)
    g[-1] = 0.5 * sn2 * np.trace(w)
    return float(nll), g


def _bounds(X, noise_floor):
    spread = np.maximum(np.std(X, axis=0), 1e-6)
    lo = [math.log(1e-4)] + list(np.log(1e-2 * spread)) + [math.log(noise_floor)]
    hi = [math.log(1e4)] + list(np.log(1e3 * spread)) + [math.log(1.0)]
    return list(zip(lo, hi))


def fit(X, y, n_starts=8, max_iter=500, seed=0, theta0=None, noise_floor=1e-10,
        optimize=True, standardize=True, mean="zero") -> GPModel:
    """Maximize the log marginal likelihood over multi-start log-uniform draws.

    ``theta0`` is added as an extra start (warm start); with ``optimize=False``
    it is used as is. The returned model's likelihood is never below that of any
    start point; ``info["start_lml"]`` and ``info["lml"]`` record both.

    ``mean="linear"`` first removes an ordinary least-squares linear trend and
    models the residual with the GP, which keeps extrapolation on the trend
    instead of reverting to the sample mean.
    """
    if mean not in ("zero", "linear"):
        raise DomainError(f"unknown mean function {mean!r}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise DomainError("X and y row counts differ")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise DomainError("training data must be finite")
    y_mean = float(np.mean(y)) if standardize else 0.0
    y_std = float(np.std(y)) if standardize else 1.0
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    d = X.shape[1]
    beta = None
    if mean == "linear":
        H = np.column_stack((np.ones(X.shape[0]), X))
        beta = np.linalg.lstsq(H, ys, rcond=None)[0]
        ys = ys - H @ beta
    if not optimize:
        if theta0 is None:
            raise DomainError("fixed-hyperparameter fit needs theta0")
        return GPModel(X, y, np.asarray(theta0, dtype=float), y_mean, y_std, {"optimized": False}, beta)

    bounds = _bounds(X, noise_floor)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(seed)
    spread = np.maximum(np.std(X, axis=0), 1e-6)
    starts = []
    if theta0 is not None:
        starts.append(np.clip(np.asarray(theta0, dtype=float), lo, hi))
    for _ in range(n_starts):
        t = np.empty(d + 2)
        t[0] = rng.uniform(math.log(0.1), math.log(10.0))
        t[1:-1] = np.log(spread) + rng.uniform(math.log(0.3), math.log(10.0), size=d)
        t[-1] = rng.uniform(math.log(1e-6), math.log(1e-1))
        starts.append(np.clip(t, lo, hi))

    sqd = _sqdist_per_dim(X, X)
    best = None
    start_lml = []
    for t0 in starts:
        f0 = neg_log_likelihood(t0, X, ys, sqd, grad=False)
        start_lml.append(-f0)
        res = minimize(neg_log_likelihood, t0, args=(X, ys, sqd), jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": max_iter})
        cand, fval = (res.x, float(res.fun)) if res.fun <= f0 else (t0, f0)
        if best is None or fval < best[1]:
            best = (cand, fval)
    model = GPModel(X, y, best[0], y_mean, y_std, beta=beta)
    model.info = {"optimized": True, "lml": -best[1], "start_lml": start_lml}
    return model


def r_squared(predicted, actual):
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or actual.shape[0] < 2:
        raise DomainError("r_squared needs equal-length vectors of length >= 2")
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0:
        raise DomainError("R^2 undefined for constant observations")
    return 1.0 - float(np.sum((actual - predicted) ** 2)) / ss_tot
