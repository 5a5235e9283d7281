"""Ground acceleration records: generation, I/O, baseline correction, scaling, selection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DataError, DomainError


@dataclass(eq=False)
class AccelTimeSeries:
    """Uniformly sampled ground acceleration (m/s^2)."""

    dt: float
    a: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.a = np.ascontiguousarray(self.a, dtype=float)
        if self.a.ndim != 1:
            raise DomainError("acceleration must be one-dimensional")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.a.shape[0] < 2:
            raise DomainError("a record needs at least two samples")
        if not np.all(np.isfinite(self.a)):
            raise DomainError(f"record {self.id!r} has non-finite samples")

    def __len__(self):
        return self.a.shape[0]

    @property
    def duration(self):
        return self.dt * (len(self) - 1)

    @property
    def time(self):
        return np.arange(len(self)) * self.dt

    @property
    def pga(self):
        return float(np.max(np.abs(self.a)))


@dataclass
class TargetSpectrum:
    periods: np.ndarray
    median_sa: np.ndarray
    log_std: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.periods = np.asarray(self.periods, dtype=float)
        self.median_sa = np.asarray(self.median_sa, dtype=float)
        self.log_std = np.asarray(self.log_std, dtype=float)
        n = self.periods.shape[0]
        if self.median_sa.shape[0] != n or self.log_std.shape[0] != n:
            raise DomainError("target spectrum arrays must have equal length")
        if n == 0 or np.any(self.periods <= 0) or np.any(np.diff(self.periods) <= 0):
            raise DomainError("target periods must be positive and strictly increasing")
        if np.any(self.median_sa <= 0):
            raise DomainError("target median Sa must be positive")


@dataclass
class SynthModelParams:
    """Filtered-noise model with an amplitude envelope and a frequency envelope.

    The filter corner frequency drifts linearly in time,
    ``f(t) = corner_freq + freq_slope * (t - duration / 2)``, floored at
    ``min_freq``. The amplitude envelope is gamma shaped with its peak (value 1)
    at ``peak_time``. The ``*_log_std`` fields add record-to-record variability:
    each record draws its own intensity, corner frequency and peak time from
    lognormals centred on the configured values.
    """

    corner_freq: float = 1.0
    filter_damping: float = 0.6
    freq_slope: float = -0.05
    min_freq: float = 0.3
    peak_time: float = 4.0
    envelope_shape: float = 3.0
    duration: float = 20.0
    dt: float = 0.01
    intensity: float = 0.65
    intensity_log_std: float = 0.4
    corner_freq_log_std: float = 0.6
    peak_time_log_std: float = 0.3

    def validate(self):
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive")
        if not self.dt > 0 or self.dt >= self.duration:
            raise ConfigurationError("dt must be positive and shorter than the duration")
        if not self.corner_freq > 0 or not self.min_freq > 0:
            raise ConfigurationError("corner frequency must be positive")
        if not 0 < self.filter_damping < 1:
            raise ConfigurationError("filter damping must lie in (0, 1)")
        if not 0 < self.peak_time < self.duration:
            raise ConfigurationError("envelope peak time must fall inside the record")
        if not self.envelope_shape > 1:
            raise ConfigurationError("envelope shape must exceed 1 (degenerate envelope)")
        if self.intensity < 0:
            raise ConfigurationError("intensity must be non-negative")
        for name in ("intensity_log_std", "corner_freq_log_std", "peak_time_log_std"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")


def amplitude_envelope(t, peak_time, shape):
    """Gamma-shaped envelope normalized to 1 at ``peak_time``."""
    r = np.asarray(t, dtype=float) / peak_time
    with np.errstate(divide="ignore"):
        logq = (shape - 1.0) * (np.log(r) - r + 1.0)
    return np.where(r > 0, np.exp(logq), 0.0)


def record_rng(seed, index):
    """Independent generator per (seed, record index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _synthesize_one(params, seed, index, baseline=True):
    rng = record_rng(seed, index)
    # fixed draw order keeps streams stable when log-stds are zero
    z = rng.standard_normal(3)
    n = int(round(params.duration / params.dt)) + 1
    noise = rng.standard_normal(n)
    intensity = params.intensity * math.exp(params.intensity_log_std * z[0])
    fc = params.corner_freq * math.exp(params.corner_freq_log_std * z[1])
    tp = params.peak_time * math.exp(params.peak_time_log_std * z[2])
    tp = min(max(tp, 2 * params.dt), 0.9 * params.duration)
    t = np.arange(n) * params.dt
    freq = np.maximum(fc + params.freq_slope * (t - 0.5 * params.duration), params.min_freq)
    y = _kernels.filtered_noise(noise, params.dt, 2 * np.pi * freq, params.filter_damping)
    a = intensity * amplitude_envelope(t, tp, params.envelope_shape) * y
    rec = AccelTimeSeries(params.dt, a, f"syn{seed}_{index:05d}")
    return baseline_correct(rec) if baseline else rec


def generate_synthetic(params: SynthModelParams, count: int, seed: int, start: int = 0, baseline=True):
    """Generate ``count`` synthetic records, baseline corrected unless ``baseline=False``.

    Record ``i`` draws from its own stream seeded by ``(seed, start + i)``, so a
    batch can be produced in pieces (or in parallel) with identical results.
    """
    params.validate()
    if count < 1:
        raise DomainError("count must be at least 1")
    return [_synthesize_one(params, seed, start + i, baseline) for i in range(count)]


def _integrals(a, dt):
    vel = np.concatenate(([0.0], np.cumsum(0.5 * dt * (a[1:] + a[:-1]))))
    disp = np.concatenate(([0.0], np.cumsum(0.5 * dt * (vel[1:] + vel[:-1]))))
    return vel, disp


def baseline_correct(series: AccelTimeSeries) -> AccelTimeSeries:
    """Remove a quadratic velocity trend so the record ends at rest.

    The trend ``b1*t + b2*t**2`` (acceleration correction ``b1 + 2*b2*t``) is
    solved from the discrete trapezoidal end conditions, so residual velocity
    and displacement vanish to round-off.
    """
    a = series.a
    dt = series.dt
    t = np.arange(a.shape[0]) * dt
    v_end, d_end = (x[-1] for x in _integrals(a, dt))
    basis = (np.ones_like(t), 2.0 * t)
    cols = [[x[-1] for x in _integrals(b, dt)] for b in basis]
    mat = np.array(cols).T
    scale = max(abs(v_end), abs(d_end))
    if scale == 0.0:
        return AccelTimeSeries(dt, a.copy(), series.id)
    b = np.linalg.solve(mat, [v_end, d_end])
    corrected = a - b[0] * basis[0] - b[1] * basis[1]
    return AccelTimeSeries(dt, corrected, series.id)


def residuals(series: AccelTimeSeries):
    """(residual velocity, residual displacement) by trapezoidal integration."""
    vel, disp = _integrals(series.a, series.dt)
    return float(vel[-1]), float(disp[-1])


def scale(series: AccelTimeSeries, gamma: float, new_id=None) -> AccelTimeSeries:
    if not gamma > 0:
        raise DomainError(f"scale factor must be positive, got {gamma}")
    return AccelTimeSeries(series.dt, series.a * gamma, series.id if new_id is None else new_id)


def select_spectrum_compatible(pool, target: TargetSpectrum, n: int, damping=0.05, max_scale=7.0,
                               dispersion=False):
    """Rank records by log-spectral misfit to the target median after amplitude scaling.

    Each record gets the least-squares scale in log space (the mean log ratio of
    target to record spectrum), clipped to ``(0, max_scale]``. Returns ``n``
    pairs ``(index into pool, scale)`` ordered by mean squared log misfit, ties
    broken by record id.

    With ``dispersion=True`` the selected records are spread back around the
    median: the record ranked ``r`` (of ``n``) by its unscaled spectral level
    gets an extra factor ``exp(sigma * Phi^-1((r - 0.5) / n))``, with ``sigma``
    the mean target log standard deviation. Scaling every record onto the median
    would otherwise remove the record-to-record intensity spread.
    """
    from scipy.special import ndtri

    from .gmf_extract import response_spectrum

    if not pool:
        raise DomainError("record pool is empty")
    if not 1 <= n <= len(pool):
        raise DomainError(f"cannot select {n} records from a pool of {len(pool)}")
    log_target = np.log(target.median_sa)
    scored = []
    for idx, rec in enumerate(pool):
        sa = response_spectrum(rec, target.periods, damping).sa
        if np.any(sa <= 0):
            scored.append((math.inf, rec.id, idx, max_scale, -math.inf))
            continue
        lsa = np.log(sa)
        log_s = float(np.mean(log_target - lsa))
        s = min(math.exp(log_s), max_scale)
        err = float(np.mean((lsa + math.log(s) - log_target) ** 2))
        scored.append((err, rec.id, idx, s, -log_s))
    scored.sort(key=lambda r: (r[0], r[1]))
    chosen = scored[:n]
    if not dispersion:
        return [(idx, s) for _, _, idx, s, _ in chosen]
    sigma = float(np.mean(target.log_std))
    order = sorted(range(n), key=lambda i: (chosen[i][4], chosen[i][1]))
    factor = np.empty(n)
    for rank, i in enumerate(order, 1):
        factor[i] = math.exp(sigma * float(ndtri((rank - 0.5) / n)))
    return [(idx, float(min(s * f, max_scale))) for (_, _, idx, s, _), f in zip(chosen, factor)]


def spectral_misfit(record, target, scale_factor=1.0, damping=0.05):
    """Mean squared log-spectral misfit of a scaled record to the target median."""
    from .gmf_extract import response_spectrum

    sa = response_spectrum(record, target.periods, damping).sa * scale_factor
    return float(np.mean((np.log(sa) - np.log(target.median_sa)) ** 2))


# --- file formats -----------------------------------------------------------

def write_record(series: AccelTimeSeries, path):
    lines = [f"dt={series.dt!r}", f"# id={series.id}"]
    lines += [repr(float(x)) for x in series.a]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_record(path, record_id=None) -> AccelTimeSeries:
    path = Path(path)
    dt = None
    values = []
    rid = record_id
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if rid is None and line[1:].strip().startswith("id="):
                rid = line[1:].strip()[3:].strip()
            continue
        if dt is None:
            if not line.startswith("dt="):
                raise DataError(f"{path}:{lineno}: expected 'dt=<seconds>' header")
            try:
                dt = float(line[3:])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad dt value {line[3:]!r}") from None
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad sample {line!r}") from None
    if dt is None:
        raise DataError(f"{path}: missing dt header")
    return AccelTimeSeries(dt, np.array(values), rid if rid is not None else path.stem)


def read_target_spectrum(path) -> TargetSpectrum:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    header = [h.strip() for h in rows[0]]
    if header != ["period_s", "median_sa", "log_std"]:
        raise DataError(f"{path}: header must be period_s,median_sa,log_std (got {header})")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return TargetSpectrum(data[:, 0], data[:, 1], data[:, 2])


def write_target_spectrum(target: TargetSpectrum, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period_s", "median_sa", "log_std"])
        for row in zip(target.periods, target.median_sa, target.log_std):
            w.writerow([repr(float(x)) for x in row])


def ensemble_spectrum(params: SynthModelParams, count, seed, periods, damping=0.05) -> TargetSpectrum:
    """Median and log standard deviation of Sa over ``count`` synthetic records."""
    from .gmf_extract import response_spectrum

    recs = generate_synthetic(params, count, seed)
    lsa = np.log(np.array([response_spectrum(r, periods, damping).sa for r in recs]))
    return TargetSpectrum(periods, np.exp(np.median(lsa, axis=0)), lsa.std(axis=0, ddof=1),
                          {"count": count, "seed": seed})
