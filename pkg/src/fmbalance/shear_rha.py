"""Nonlinear response history of an N-story bilinear shear building."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, IntegrationError
from .gm_synth import AccelTimeSeries
from .prob_space import lognormal_params


@dataclass
class ShearBuildingConfig:
    """Deterministic building definition plus the distributions of its random parameters.

    Stiffness is given per story in kN/m; the realized story stiffness is
    ``nominal * exp(stiffness_log_std * u_k)`` with one shared ``u_k``.
    """

    nominal_stiffness: tuple = (25000.0, 20000.0, 15000.0)
    stiffness_log_std: float = 0.25
    mass_mean: float = 90000.0
    mass_cov: float = 0.25
    damping_mean: float = 0.03
    damping_cov: float = 0.25
    yield_disp: float = 0.010
    hardening_ratio: float = 0.045
    idr_threshold: float = 0.017
    story_height: float = 3.0
    # integration controls
    steps_per_period: float = 40.0
    max_halvings: int = 5

    def __post_init__(self):
        self.nominal_stiffness = tuple(float(k) for k in self.nominal_stiffness)
        self.validate()

    @property
    def n_stories(self):
        return len(self.nominal_stiffness)

    def validate(self):
        if self.n_stories < 1 or any(k <= 0 for k in self.nominal_stiffness):
            raise ConfigurationError("story stiffnesses must be positive")
        for name in ("stiffness_log_std", "mass_cov", "damping_cov"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        for name in ("mass_mean", "damping_mean", "yield_disp", "story_height", "steps_per_period"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 <= self.hardening_ratio < 1:
            raise ConfigurationError("hardening ratio must lie in [0, 1)")
        if not 0 < self.idr_threshold < 1:
            raise ConfigurationError("IDR threshold must lie in (0, 1)")
        if not 0 < self.damping_mean < 1:
            raise ConfigurationError("mean damping ratio must lie in (0, 1)")


@dataclass
class StructuralParams:
    xi: float
    m: float
    u_k: float

    def as_array(self):
        return np.array([self.xi, self.m, self.u_k])


@dataclass
class EDPResult:
    peak_idr: np.ndarray
    peak_abs_floor_accel: np.ndarray
    history: dict | None = field(default=None, repr=False)


@dataclass(frozen=True)
class FailureMode:
    bits: tuple

    @property
    def label(self):
        return "".join(str(b) for b in self.bits)

    @property
    def failed(self):
        return tuple(i + 1 for i, b in enumerate(self.bits) if b)

    @classmethod
    def from_label(cls, label):
        return cls(tuple(int(c) for c in label))


def safe_label(n_stories):
    return "0" * n_stories


def sample_structural_params(config: ShearBuildingConfig, seed) -> StructuralParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal(3)
    lam_x, zeta_x = lognormal_params(config.damping_mean, config.damping_cov)
    lam_m, zeta_m = lognormal_params(config.mass_mean, config.mass_cov)
    return StructuralParams(
        xi=float(math.exp(lam_x + zeta_x * z[0])),
        m=float(math.exp(lam_m + zeta_m * z[1])),
        u_k=float(z[2]),
    )


def story_stiffness(config, params):
    """Realized story stiffnesses in N/m."""
    return np.array(config.nominal_stiffness) * 1e3 * math.exp(config.stiffness_log_std * params.u_k)


def modal_frequencies(config, params):
    """Elastic circular frequencies, ascending."""
    k = story_stiffness(config, params)
    n = len(k)
    kmat = np.zeros((n, n))
    for i in range(n):
        kmat[i, i] = k[i] + (k[i + 1] if i + 1 < n else 0.0)
        if i + 1 < n:
            kmat[i, i + 1] = kmat[i + 1, i] = -k[i + 1]
    lam = np.linalg.eigvalsh(kmat / params.m)
    return np.sqrt(lam)


def fundamental_period(config, params=None):
    if params is None:
        params = StructuralParams(config.damping_mean, config.mass_mean, 0.0)
    return float(2 * np.pi / modal_frequencies(config, params)[0])


def rayleigh_coefficients(omegas, xi):
    """Mass/stiffness coefficients giving ratio ``xi`` at the first two modes."""
    w1 = omegas[0]
    w2 = omegas[1] if len(omegas) > 1 else omegas[0]
    return 2 * xi * w1 * w2 / (w1 + w2), 2 * xi / (w1 + w2)


def nonlinear_rha(config: ShearBuildingConfig, params: StructuralParams, series: AccelTimeSeries,
                  keep_history=False) -> EDPResult:
    """Peak story drift ratios and absolute floor accelerations.

    Newmark constant-average-acceleration with Newton iterations on the
    bilinear kinematic-hardening story springs; a record step that fails to
    converge is retried with up to ``config.max_halvings`` successive halvings.
    """
    n = config.n_stories
    k0 = story_stiffness(config, params)
    m = np.full(n, float(params.m))
    fy = config.yield_disp * k0
    omegas = modal_frequencies(config, params)
    a0, a1 = rayleigh_coefficients(omegas, params.xi)
    t_min = 2 * np.pi / omegas[-1]
    max_step = t_min / config.steps_per_period
    tol = 1e-9 * float(np.max(fy))
    status, u, v, acc, fs = _kernels.shear_building_response(
        series.a, float(series.dt), m, k0, fy, float(config.hardening_ratio),
        float(a0), float(a1), float(max_step), int(config.max_halvings), tol)
    if status != 0:
        raise IntegrationError(
            f"record {series.id!r}: no convergence at step {status} after "
            f"{config.max_halvings} halvings", record_id=series.id)
    drift = np.diff(np.concatenate((np.zeros((u.shape[0], 1)), u), axis=1), axis=1)
    idr = np.max(np.abs(drift), axis=0) / config.story_height
    pfa = np.max(np.abs(acc + series.a[:, None]), axis=0)
    hist = None
    if keep_history:
        hist = dict(u=u, v=v, acc=acc, story_force=fs, drift=drift, mass=m, k0=k0, a0=a0, a1=a1)
    return EDPResult(idr, pfa, hist)


def limit_states(edp: EDPResult, threshold) -> np.ndarray:
    if not threshold > 0:
        raise ConfigurationError("threshold must be positive")
    return threshold - np.asarray(edp.peak_idr, dtype=float)


def failure_bits(g):
    return tuple(int(x <= 0) for x in np.asarray(g, dtype=float))


def encode_failure_mode(g):
    """Failure mode for limit-state values ``g``; ``None`` when every component survives."""
    bits = failure_bits(g)
    return FailureMode(bits) if any(bits) else None


def enumerate_failure_modes(n_components):
    """All 2**n - 1 non-safe modes, ordered by number of failures then story order.

    For three components this yields 100, 010, 001, 110, 101, 011, 111
    (mode indices 1..7).
    """
    modes = []
    for size in range(1, n_components + 1):
        for combo in itertools.combinations(range(n_components), size):
            modes.append(FailureMode(tuple(int(i in combo) for i in range(n_components))))
    return modes


def mode_index(mode: FailureMode):
    return enumerate_failure_modes(len(mode.bits)).index(mode) + 1


# --- MCS batch CSV ----------------------------------------------------------

def mcs_header(n_stories):
    return (["record_id", "scale", "xi", "m", "u_k"]
            + [f"idr_{i + 1}" for i in range(n_stories)]
            + [f"pfa_{i + 1}" for i in range(n_stories)]
            + ["mode_bits"])


def mcs_row(record_id, scale_factor, params, edp, threshold):
    bits = failure_bits(limit_states(edp, threshold))
    return ([record_id, repr(float(scale_factor)), repr(params.xi), repr(params.m), repr(params.u_k)]
            + [repr(float(x)) for x in edp.peak_idr]
            + [repr(float(x)) for x in edp.peak_abs_floor_accel]
            + ["".join(map(str, bits))])


def write_mcs_csv(path, rows, n_stories):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(mcs_header(n_stories))
        w.writerows(rows)


def read_mcs_csv(path):
    """Return a dict of column arrays (strings for id and mode columns)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        if name in ("record_id", "mode_bits"):
            out[name] = col
        else:
            out[name] = np.array([float(x) for x in col])
    return out
