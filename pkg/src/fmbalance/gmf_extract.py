"""Linear-oscillator response spectra and the ground-motion feature catalog."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError
from .gm_synth import AccelTimeSeries, baseline_correct

G = 9.81

FEATURE_NAMES = (
    "PGA", "PGV", "PGD",
    "Sa_T1", "Sv_T1", "Sd_T1",
    "Sa_geo", "Sv_geo", "Sd_geo",
    "Sa_eff", "Sv_eff", "Sd_eff",
    "PGV_PGA", "spectral_shape", "I_A", "D5_95",
)

# Degree of homogeneity under record scaling a -> gamma * a.
FEATURE_DEGREE = {name: 1 for name in FEATURE_NAMES}
FEATURE_DEGREE.update({"PGV_PGA": 0, "D5_95": 0, "I_A": 2})

FEATURE_UNITS = {
    "PGA": "m/s2", "PGV": "m/s", "PGD": "m",
    "Sa_T1": "m/s2", "Sv_T1": "m/s", "Sd_T1": "m",
    "Sa_geo": "m/s2", "Sv_geo": "m/s", "Sd_geo": "m",
    # integrals over period in seconds
    "Sa_eff": "m/s", "Sv_eff": "m", "Sd_eff": "m*s",
    "PGV_PGA": "s", "spectral_shape": "m/s2", "I_A": "m/s", "D5_95": "s",
}

PERIOD_GRID = np.geomspace(0.1, 2.5, 49)
STEPS_PER_PERIOD = 20


@dataclass
class SpectrumTriple:
    periods: np.ndarray
    sa: np.ndarray
    sv: np.ndarray
    sd: np.ndarray


def response_spectrum(series: AccelTimeSeries, periods, damping=0.05) -> SpectrumTriple:
    """Peak displacement spectrum and the pseudo-velocity/acceleration derived from it."""
    periods = np.atleast_1d(np.asarray(periods, dtype=float))
    if np.any(periods <= 0):
        raise DomainError("oscillator periods must be positive")
    if not 0 < damping < 1:
        raise DomainError("damping ratio must lie in (0, 1)")
    sd = _kernels.sdof_peak_displacement(series.a, float(series.dt), periods, float(damping), STEPS_PER_PERIOD)
    w = 2 * np.pi / periods
    return SpectrumTriple(periods, sd * w * w, sd * w, sd)


@dataclass(eq=False)
class GMFVector:
    """The 16 features in ``FEATURE_NAMES`` order."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(FEATURE_NAMES),):
            raise DomainError(f"expected {len(FEATURE_NAMES)} features, got {self.values.shape}")

    def __getitem__(self, name):
        return float(self.values[FEATURE_NAMES.index(name)])

    def as_dict(self):
        return dict(zip(FEATURE_NAMES, self.values.tolist()))

    def select(self, names):
        return np.array([self[n] for n in names])

    def scaled(self, gamma):
        """Features of the record scaled by ``gamma``, from homogeneity."""
        deg = np.array([FEATURE_DEGREE[n] for n in FEATURE_NAMES])
        return GMFVector(self.values * gamma ** deg)


def _geomean(x):
    if np.any(x <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(x))))


def _significant_duration(a, dt, lo=0.05, hi=0.95):
    cum = np.concatenate(([0.0], np.cumsum(0.5 * dt * (a[1:] ** 2 + a[:-1] ** 2))))
    total = cum[-1]
    if total <= 0:
        return 0.0
    frac = cum / total

    def crossing(level):
        i = int(np.searchsorted(frac, level, side="left"))
        if i == 0:
            return 0.0
        f0, f1 = frac[i - 1], frac[i]
        return dt * (i - 1 + (level - f0) / (f1 - f0))

    return crossing(hi) - crossing(lo)


def extract_features(series: AccelTimeSeries, t1: float, damping=0.05, periods=PERIOD_GRID) -> GMFVector:
    if len(series) < 2:
        raise DomainError("record shorter than two samples")
    if not t1 > 0:
        raise DomainError("fundamental period must be positive")
    a = series.a
    dt = series.dt
    corrected = baseline_correct(series).a
    vel = np.concatenate(([0.0], np.cumsum(0.5 * dt * (corrected[1:] + corrected[:-1]))))
    disp = np.concatenate(([0.0], np.cumsum(0.5 * dt * (vel[1:] + vel[:-1]))))
    pga = float(np.max(np.abs(a)))
    pgv = float(np.max(np.abs(vel)))
    pgd = float(np.max(np.abs(disp)))

    spec = response_spectrum(series, np.concatenate((periods, [t1, 2 * t1])), damping)
    n = len(periods)
    sa, sv, sd = spec.sa[:n], spec.sv[:n], spec.sd[:n]
    sa_t1, sv_t1, sd_t1 = spec.sa[n], spec.sv[n], spec.sd[n]
    sa_2t1 = spec.sa[n + 1]

    ia = np.pi / (2 * G) * float(np.trapezoid(a * a, dx=dt))
    values = [
        pga, pgv, pgd,
        sa_t1, sv_t1, sd_t1,
        _geomean(sa), _geomean(sv), _geomean(sd),
        float(np.trapezoid(sa, periods)), float(np.trapezoid(sv, periods)), float(np.trapezoid(sd, periods)),
        pgv / pga if pga > 0 else 0.0,
        float(np.sqrt(sa_t1 * sa_2t1)),
        ia,
        _significant_duration(a, dt),
    ]
    return GMFVector(np.array(values))


def extract_batch(records, t1, damping=0.05):
    """Feature matrix, one row per record."""
    return np.array([extract_features(r, t1, damping).values for r in records]).reshape(-1, len(FEATURE_NAMES))


def write_features_csv(path, record_ids, features):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", *FEATURE_NAMES])
        for rid, row in zip(record_ids, features):
            w.writerow([rid, *(repr(float(x)) for x in row)])


def read_features_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if tuple(header[1:]) != FEATURE_NAMES:
        raise DomainError(f"{path}: unexpected feature columns")
    ids = [r[0] for r in rows[1:]]
    feats = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).reshape(-1, len(FEATURE_NAMES))
    return ids, feats
