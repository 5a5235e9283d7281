"""Scaling-factor reconstruction of ground motions from target features, and the balanced dataset."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import gm_synth, mode_density, shear_rha
from .errors import DomainError, SamplingError
from .gmf_extract import FEATURE_DEGREE, FEATURE_NAMES

log = logging.getLogger(__name__)

MAX_SCALE = 7.0
GRID_POINTS = 64
GRID_FLOOR = 1e-3
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class FeatureStandardizer:
    """Log-space z-scores of selected features, fitted on a unit-scale record pool."""

    names: tuple
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_pool(cls, pool_features, names):
        names = tuple(names)
        logs = np.log(_positive(np.asarray(pool_features, dtype=float)))
        sd = logs.std(axis=0)
        sd[sd == 0] = 1.0
        return cls(names, logs.mean(axis=0), sd)

    @property
    def degree(self):
        return np.array([FEATURE_DEGREE[n] for n in self.names], dtype=float)

    def transform(self, x):
        return (np.log(_positive(np.asarray(x, dtype=float))) - self.mean) / self.std

    def to_dict(self):
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), np.array(d["mean"]), np.array(d["std"]))


def _positive(x):
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise DomainError("reconstruction features must be positive and finite")
    return x


def feature_mismatch(record_features, gamma, target, standardizer: FeatureStandardizer):
    """RMSE between the record's features scaled by ``gamma`` and the target, in z-units.

    Scaled features follow from homogeneity, so in log space a scale factor
    shifts each coordinate by ``degree * log(gamma) / std``.
    """
    if not np.all(np.asarray(gamma) > 0):
        raise DomainError("scale factor must be positive")
    r = standardizer.transform(record_features)
    t = standardizer.transform(target)
    shift = np.multiply.outer(np.log(gamma), standardizer.degree / standardizer.std)
    return np.sqrt(np.mean((r + shift - t) ** 2, axis=-1))


def _optimize_many(Z, t, slope, max_scale):
    """Vectorized grid + golden-section search over records (rows of Z)."""
    lg = np.log(np.geomspace(GRID_FLOOR * max_scale, max_scale, GRID_POINTS))

    def err(rows, logg):
        return np.sqrt(np.mean((Z[rows] + logg[..., None] * slope - t) ** 2, axis=-1))

    rows = np.arange(Z.shape[0])
    grid_err = np.sqrt(np.mean((Z[:, None, :] + lg[None, :, None] * slope - t) ** 2, axis=-1))
    i = np.argmin(grid_err, axis=1)
    lo = lg[np.maximum(i - 1, 0)]
    hi = lg[np.minimum(i + 1, GRID_POINTS - 1)]
    # golden section on log(gamma) until the bracket is narrower than 1e-4 in gamma
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1 = err(rows, x1)
    f2 = err(rows, x2)
    while np.any(np.exp(hi) - np.exp(lo) >= 1e-4):
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        nx1 = hi - GOLDEN * (hi - lo)
        nx2 = lo + GOLDEN * (hi - lo)
        x2n = np.where(left, x1, nx2)
        x1n = np.where(left, nx1, x2)
        f2 = np.where(left, f1, err(rows, x2n))
        f1 = np.where(left, err(rows, x1n), f1)
        x1, x2 = x1n, x2n
    best = 0.5 * (lo + hi)
    fbest = err(rows, best)
    # the squared error is quadratic in log(gamma); take the exact minimizer if it is better
    ss = float(np.sum(slope * slope))
    if ss > 0:
        exact = np.clip(-((Z - t) @ slope) / ss, lg[0], lg[-1])
        fe = err(rows, exact)
        take = fe < fbest
        best = np.where(take, exact, best)
        fbest = np.where(take, fe, fbest)
    return np.exp(best), fbest


def optimize_scale(record_features, target, standardizer: FeatureStandardizer, max_scale=MAX_SCALE):
    """Minimizing scale factor in (0, max_scale] and its mismatch."""
    g, e = _optimize_many(np.atleast_2d(standardizer.transform(record_features)),
                          standardizer.transform(target), standardizer.degree / standardizer.std, max_scale)
    return float(g[0]), float(e[0])


@dataclass
class ReconstructionResult:
    target: np.ndarray
    index: int
    gamma: float
    epsilon: float
    features: np.ndarray          # recomputed from the scaled record when available
    boundary: bool = False


def reconstruct_best(target, pool_features, standardizer: FeatureStandardizer, pool_records=None,
                     t1=None, max_scale=MAX_SCALE) -> ReconstructionResult:
    """Best (record, scale) over the pool; ties go to the smaller index.

    ``pool_features`` holds the standardizer's features for each unit-scale
    record. With ``pool_records`` and ``t1`` the chosen record is scaled and its
    features recomputed from the time series.
    """
    F = np.atleast_2d(np.asarray(pool_features, dtype=float))
    if F.shape[0] == 0:
        raise DomainError("reconstruction pool is empty")
    target = np.asarray(target, dtype=float)
    gam, eps = _optimize_many(standardizer.transform(F), standardizer.transform(target),
                              standardizer.degree / standardizer.std, max_scale)
    j = int(np.argmin(eps))
    g = float(gam[j])
    feats = F[j] * g ** standardizer.degree
    if pool_records is not None and t1 is not None:
        from .gmf_extract import extract_features
        full = extract_features(gm_synth.scale(pool_records[j], g), t1)
        feats = np.array([full[n] for n in standardizer.names])
    boundary = g >= max_scale * (1 - 1e-9) or g <= GRID_FLOOR * max_scale * (1 + 1e-9)
    return ReconstructionResult(target, j, g, float(eps[j]), feats, bool(boundary))


@dataclass
class BalancedRow:
    target_mode: str
    record_id: str
    gamma: float
    params: shear_rha.StructuralParams
    gmf: np.ndarray
    idr: np.ndarray
    pfa: np.ndarray
    realized_mode: str
    epsilon: float = float("nan")
    boundary: bool = False


@dataclass
class BalancedDataset:
    gmf_names: tuple
    n_stories: int
    rows: list = field(default_factory=list)
    quota: dict = field(default_factory=dict)
    shortfall: dict = field(default_factory=dict)

    def realized_counts(self):
        return Counter(r.realized_mode for r in self.rows)

    def header(self):
        n = self.n_stories
        return (["target_mode", "record_id", "gamma", "xi", "m", "u_k", *self.gmf_names]
                + [f"idr_{i + 1}" for i in range(n)] + [f"pfa_{i + 1}" for i in range(n)] + ["realized_mode"])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for r in self.rows:
                w.writerow([r.target_mode, r.record_id, repr(float(r.gamma)), repr(r.params.xi), repr(r.params.m),
                            repr(r.params.u_k), *(repr(float(x)) for x in r.gmf),
                            *(repr(float(x)) for x in r.idr), *(repr(float(x)) for x in r.pfa), r.realized_mode])

    def summary(self):
        counts = self.realized_counts()
        per_mode = {}
        for mode in sorted({r.target_mode for r in self.rows} | set(self.quota)):
            sub = [r for r in self.rows if r.target_mode == mode]
            eps = [r.epsilon for r in sub if not math.isnan(r.epsilon)]
            per_mode[mode] = {
                "quota": self.quota.get(mode),
                "targeted": len(sub),
                "realized": counts.get(mode, 0),
                "mean_epsilon": float(np.mean(eps)) if eps else None,
                "boundary_gamma_fraction": float(np.mean([r.boundary for r in sub])) if eps else None,
                "shortfall": self.shortfall.get(mode, 0),
            }
        return {"n_rows": len(self.rows), "modes": per_mode,
                "realized_counts": dict(sorted(counts.items()))}

    def write_summary(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=1)
            fh.write("\n")


def read_balanced_csv(path):
    """Column dict (strings for id and mode columns) of a balanced or MCS-shaped CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        out[name] = col if name in ("record_id", "target_mode", "realized_mode", "mode_bits") else \
            np.array([float(x) for x in col])
    return out


def assemble_balanced_dataset(densities, per_mode, models, transform, pool_records, pool_features,
                              gmf_names, building: shear_rha.ShearBuildingConfig, safe_rows=(), seed=0,
                              max_scale=MAX_SCALE):
    """Sample each mode density, reconstruct motions, run the RHA and record the realized modes.

    ``pool_features`` are the unit-scale features (columns ``gmf_names``) of
    ``pool_records``. ``safe_rows`` (already-computed ``BalancedRow`` objects
    from the MCS) are appended unchanged. A mode whose sampling fails keeps the
    rows it produced and reports the shortfall.
    """
    if not densities and per_mode:
        raise DomainError("no mode densities to sample")
    k = len(gmf_names)
    standardizer = FeatureStandardizer.from_pool(pool_features, gmf_names)
    ds = BalancedDataset(tuple(gmf_names), building.n_stories)
    for di, dens in enumerate(densities):
        label = dens.mode.label
        ds.quota[label] = per_mode
        try:
            U, _ = mode_density.sample_mode_density(dens, models, per_mode, seed=[seed, di])
        except SamplingError as exc:
            log.warning("%s", exc)
            U = np.empty((0, transform.dim))
        ds.shortfall[label] = per_mode - U.shape[0]
        if U.shape[0] == 0:
            continue
        X = transform.from_standard_normal(U)
        for x in X:
            rec = reconstruct_best(x[:k], pool_features, standardizer, max_scale=max_scale)
            params = shear_rha.StructuralParams(float(x[k]), float(x[k + 1]), float(x[k + 2]))
            src = pool_records[rec.index]
            scaled = gm_synth.scale(src, rec.gamma)
            edp = shear_rha.nonlinear_rha(building, params, scaled)
            bits = shear_rha.failure_bits(shear_rha.limit_states(edp, building.idr_threshold))
            ds.rows.append(BalancedRow(label, src.id, rec.gamma, params, rec.features, edp.peak_idr,
                                       edp.peak_abs_floor_accel, "".join(map(str, bits)),
                                       rec.epsilon, rec.boundary))
    ds.quota[shear_rha.safe_label(building.n_stories)] = len(safe_rows)
    ds.rows.extend(safe_rows)
    return ds
