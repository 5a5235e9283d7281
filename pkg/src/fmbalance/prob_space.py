"""Marginal and Gaussian-copula transforms between physical and standard-normal space."""

from __future__ import annotations

import json
import math
import warnings

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri

from .errors import DomainError

U_CLAMP = 8.0
TAIL_KNOTS = 5


def lognormal_params(mean, cov):
    """Moment-matched (lambda, zeta) of a lognormal with given mean and CoV."""
    if not mean > 0:
        raise DomainError(f"lognormal mean must be positive, got {mean}")
    if cov < 0:
        raise DomainError("coefficient of variation must be non-negative")
    zeta = math.sqrt(math.log1p(cov * cov))
    return math.log(mean) - 0.5 * zeta * zeta, zeta


class EmpiricalMarginal:
    """Empirical CDF with plotting positions i/(n+1), mapped straight to normal quantiles.

    Between knots the map is piecewise linear in (value, z); beyond the sample
    range it is extended linearly with the chord slope over the outermost
    ``TAIL_KNOTS`` knots, and clamped at ``|z| = 8``. Strictly positive samples
    are handled in log space so the inverse never leaves the positive axis.
    """

    def __init__(self, values, log=None):
        x = np.sort(np.asarray(values, dtype=float))
        if x.shape[0] < 10:
            raise DomainError("empirical marginal needs at least 10 samples")
        if not np.all(np.isfinite(x)):
            raise DomainError("empirical samples must be finite")
        self.values = x
        self.log = bool(np.all(x > 0)) if log is None else bool(log)
        if self.log and np.any(x <= 0):
            raise DomainError("log-scale marginal needs positive samples")
        n = x.shape[0]
        s = np.log(x) if self.log else x
        uniq, inv = np.unique(s, return_inverse=True)
        ranks = np.arange(1, n + 1, dtype=float)
        pos = np.bincount(inv, weights=ranks) / np.bincount(inv)
        self._s = uniq
        self._z = ndtri(pos / (n + 1))
        if uniq.shape[0] == 1:
            self._s = np.array([uniq[0] - 0.5, uniq[0] + 0.5])
            self._z = np.array([0.0, 0.0])
        k = min(TAIL_KNOTS, self._s.shape[0] - 1)
        self._lo_slope = (self._z[k] - self._z[0]) / (self._s[k] - self._s[0])
        self._hi_slope = (self._z[-1] - self._z[-1 - k]) / (self._s[-1] - self._s[-1 - k])

    @property
    def n(self):
        return self.values.shape[0]

    def _fwd(self, x):
        s = np.log(x) if self.log else x
        z = np.interp(s, self._s, self._z)
        lo = s < self._s[0]
        hi = s > self._s[-1]
        z = np.where(lo, self._z[0] + self._lo_slope * (s - self._s[0]), z)
        z = np.where(hi, self._z[-1] + self._hi_slope * (s - self._s[-1]), z)
        return z

    def to_normal(self, x):
        x = np.asarray(x, dtype=float)
        if self.log:
            x = np.maximum(x, np.finfo(float).tiny)
        z = self._fwd(x)
        clamped = np.abs(z) > U_CLAMP
        return np.clip(z, -U_CLAMP, U_CLAMP), int(np.count_nonzero(clamped))

    def from_normal(self, z):
        z = np.clip(np.asarray(z, dtype=float), -U_CLAMP, U_CLAMP)
        s = np.interp(z, self._z, self._s)
        lo = z < self._z[0]
        hi = z > self._z[-1]
        if self._lo_slope > 0:
            s = np.where(lo, self._s[0] + (z - self._z[0]) / self._lo_slope, s)
        if self._hi_slope > 0:
            s = np.where(hi, self._s[-1] + (z - self._z[-1]) / self._hi_slope, s)
        return np.exp(s) if self.log else s

    def cdf(self, x):
        return ndtr(self.to_normal(x)[0])

    def to_dict(self):
        return {"kind": "empirical", "values": self.values.tolist(), "log": self.log}


class LognormalMarginal:
    def __init__(self, mean, cov):
        self.mean = float(mean)
        self.cov = float(cov)
        self.lam, self.zeta = lognormal_params(mean, cov)

    def to_normal(self, x):
        x = np.asarray(x, dtype=float)
        if self.zeta == 0:
            return np.zeros_like(x), 0
        if np.any(x <= 0):
            raise DomainError("lognormal value outside support")
        return (np.log(x) - self.lam) / self.zeta, 0

    def from_normal(self, z):
        return np.exp(self.lam + self.zeta * np.asarray(z, dtype=float))

    def to_dict(self):
        return {"kind": "lognormal", "mean": self.mean, "cov": self.cov}


class NormalMarginal:
    def to_normal(self, x):
        return np.asarray(x, dtype=float), 0

    def from_normal(self, z):
        return np.asarray(z, dtype=float)

    def to_dict(self):
        return {"kind": "normal"}


def marginal_from_dict(d):
    kind = d["kind"]
    if kind == "empirical":
        return EmpiricalMarginal(d["values"], log=d.get("log"))
    if kind == "lognormal":
        return LognormalMarginal(d["mean"], d["cov"])
    if kind == "normal":
        return NormalMarginal()
    raise DomainError(f"unknown marginal kind {kind!r}")


def nearest_correlation(r, jitter=1e-8):
    """Eigenvalue-clipped projection of ``r`` onto PD correlation matrices."""
    r = 0.5 * (np.asarray(r, dtype=float) + np.asarray(r, dtype=float).T)
    w, v = np.linalg.eigh(r)
    if w.min() >= jitter:
        return r
    w = np.maximum(w, jitter)
    out = (v * w) @ v.T
    d = np.sqrt(np.diag(out))
    out = out / np.outer(d, d)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return out


def fit_copula_correlation(samples):
    """Gaussian-copula correlation from Spearman's rho, rho_g = 2 sin(pi rho_s / 6)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 30:
        raise DomainError("need a 2-D sample matrix with at least 30 rows")
    d = x.shape[1]
    live = np.array([np.ptp(x[:, j]) > 0 for j in range(d)])
    r = np.eye(d)
    idx = np.flatnonzero(live)
    if idx.size >= 2:
        rho_s = stats.spearmanr(x[:, idx]).statistic
        if idx.size == 2:
            # scipy returns a scalar for two columns
            rho_s = np.array([[1.0, rho_s], [rho_s, 1.0]])
        sub = 2.0 * np.sin(np.pi * rho_s / 6.0)
        np.fill_diagonal(sub, 1.0)
        r[np.ix_(idx, idx)] = sub
    return nearest_correlation(r)


class JointTransform:
    """x' -> u' via per-coordinate normal scores then decorrelation by the copula factor."""

    def __init__(self, marginals, correlation=None, names=None):
        self.marginals = list(marginals)
        d = len(self.marginals)
        r = np.eye(d) if correlation is None else np.asarray(correlation, dtype=float)
        if r.shape != (d, d):
            raise DomainError("correlation shape does not match the marginals")
        if not np.allclose(r, r.T, atol=1e-12) or not np.allclose(np.diag(r), 1.0, atol=1e-12):
            raise DomainError("correlation must be symmetric with unit diagonal")
        try:
            self.chol = np.linalg.cholesky(r)
        except np.linalg.LinAlgError:
            raise DomainError("correlation matrix is not positive definite") from None
        self.correlation = r
        self.names = list(names) if names is not None else [f"x{i}" for i in range(d)]
        self.n_clamped = 0

    @property
    def dim(self):
        return len(self.marginals)

    def to_standard_normal(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise DomainError(f"expected {self.dim} columns, got {x.shape[1]}")
        z = np.empty_like(x)
        clamped = 0
        for j, marg in enumerate(self.marginals):
            z[:, j], c = marg.to_normal(x[:, j])
            clamped += c
        if clamped:
            self.n_clamped += clamped
            warnings.warn(f"{clamped} value(s) clamped to |u| = {U_CLAMP}", RuntimeWarning, stacklevel=2)
        from scipy.linalg import solve_triangular
        u = solve_triangular(self.chol, z.T, lower=True).T
        return u[0] if single else u

    def from_standard_normal(self, u):
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        u = np.atleast_2d(u)
        if u.shape[1] != self.dim:
            raise DomainError(f"expected {self.dim} columns, got {u.shape[1]}")
        z = u @ self.chol.T
        x = np.empty_like(z)
        for j, marg in enumerate(self.marginals):
            x[:, j] = marg.from_normal(z[:, j])
        return x[0] if single else x

    def to_dict(self):
        return {
            "names": self.names,
            "marginals": [m.to_dict() for m in self.marginals],
            "correlation": self.correlation.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls([marginal_from_dict(m) for m in d["marginals"]], d["correlation"], d.get("names"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_transform(gmf_samples, gmf_names, building, use_copula=True):
    """Joint transform over [critical GMFs, xi, m, u_k].

    GMFs take empirical marginals (optionally correlated through a fitted
    Gaussian copula); structural parameters are independent of each other and
    of the GMFs.
    """
    gmf_samples = np.asarray(gmf_samples, dtype=float)
    k = gmf_samples.shape[1]
    marginals = [EmpiricalMarginal(gmf_samples[:, j]) for j in range(k)]
    marginals += [
        LognormalMarginal(building.damping_mean, building.damping_cov),
        LognormalMarginal(building.mass_mean, building.mass_cov),
        NormalMarginal(),
    ]
    r = np.eye(k + 3)
    if use_copula:
        r[:k, :k] = fit_copula_correlation(gmf_samples)
    return JointTransform(marginals, r, list(gmf_names) + ["xi", "m", "u_k"])
