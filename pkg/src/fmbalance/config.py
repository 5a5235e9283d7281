"""INI configuration for the pipeline."""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError
from .gm_synth import SynthModelParams
from .shear_rha import ShearBuildingConfig

DEFAULT_CRITICAL = ("spectral_shape", "PGV", "PGD", "Sd_eff", "Sv_eff", "Sd_T1", "Sa_eff", "Sa_geo")


def data_path(name):
    return Path(str(resources.files("fmbalance") / "data" / name))


@dataclass
class GroundMotionSection:
    pool_size: int = 400
    n_records: int = 300
    target_spectrum: str = "target_spectrum_desk.csv"
    dispersion: bool = True
    max_scale: float = 7.0


@dataclass
class SelectionSection:
    enabled: bool = True
    train_sizes: tuple = (100, 150)
    sizes: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    budget: int = 200
    top_k: int = 8
    delta_threshold: float = 0.001
    n_starts: int = 2
    # downstream features: "selected" uses the aggregated result, anything else is a name list
    critical_features: tuple = DEFAULT_CRITICAL
    use_selected: bool = False


@dataclass
class ModesSection:
    initial: int = 100
    budget: int = 150
    reopt_every: int = 10
    n_starts: int = 4
    radius: float = 5.0
    n_ball: int = 100_000
    n_mixture: int = 3
    min_support: int = 20
    copula: bool = True
    limit_state: str = "log"
    gp_mean: str = "zero"
    # extra unlabeled candidates: "scaled" draws pool records at log-uniform scales in
    # [pool_scale_min, pool_scale_max]; "ball" reconstructs n-ball samples from the pool
    pool_extra: int = 500
    pool_source: str = "scaled"
    pool_scale_min: float = 0.5
    pool_scale_max: float = 3.0


@dataclass
class ReconstructSection:
    per_mode: int = 100
    n_safe: int = 100
    max_scale: float = 7.0


@dataclass
class DNNSection:
    epochs: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    hidden_balanced: tuple = (32, 16, 8)
    hidden_imbalanced: tuple = (16, 8, 4)
    split_seed: int = 0


@dataclass
class PipelineConfig:
    seed: int = 2024
    out: str = "fmbalance_out"
    jobs: int = 1
    gm_synth: SynthModelParams = field(default_factory=SynthModelParams)
    ground_motion: GroundMotionSection = field(default_factory=GroundMotionSection)
    building: ShearBuildingConfig = field(default_factory=ShearBuildingConfig)
    mcs_simulations: int = 300
    selection: SelectionSection = field(default_factory=SelectionSection)
    modes: ModesSection = field(default_factory=ModesSection)
    reconstruct: ReconstructSection = field(default_factory=ReconstructSection)
    dnn: DNNSection = field(default_factory=DNNSection)
    base_dir: Path = field(default_factory=Path.cwd)

    def resolve(self, name):
        """A referenced file: absolute, relative to the config file, or shipped data."""
        p = Path(name)
        if p.is_absolute():
            return p
        if (self.base_dir / p).exists():
            return self.base_dir / p
        shipped = data_path(name)
        if shipped.exists():
            return shipped
        raise ConfigurationError(f"referenced file {name!r} not found")

    def validate(self):
        self.gm_synth.validate()
        self.building.validate()
        gm = self.ground_motion
        if gm.n_records < 0 or gm.pool_size < 1 or gm.n_records > gm.pool_size:
            raise ConfigurationError("need 0 <= n_records <= pool_size")
        if self.mcs_simulations < 0 or self.mcs_simulations > gm.n_records:
            raise ConfigurationError("mcs simulations cannot exceed the selected records")
        if self.modes.limit_state not in ("log", "linear"):
            raise ConfigurationError("limit_state must be 'log' or 'linear'")
        if self.modes.gp_mean not in ("zero", "linear"):
            raise ConfigurationError("gp_mean must be 'zero' or 'linear'")
        m = self.modes
        if m.pool_source not in ("scaled", "ball"):
            raise ConfigurationError("pool_source must be 'scaled' or 'ball'")
        if m.pool_extra < 0 or not 0 < m.pool_scale_min <= m.pool_scale_max <= 7.0:
            raise ConfigurationError("need pool_extra >= 0 and 0 < pool_scale_min <= pool_scale_max <= 7")
        if not 0 < self.ground_motion.max_scale <= 7.0 or not 0 < self.reconstruct.max_scale <= 7.0:
            raise ConfigurationError("scale factor cap must lie in (0, 7]")
        self.resolve(gm.target_spectrum)


_SECTIONS = {
    "gm_synth": "gm_synth",
    "ground_motion": "ground_motion",
    "building": "building",
    "selection": "selection",
    "modes": "modes",
    "reconstruct": "reconstruct",
    "dnn": "dnn",
}


def _line_of(text, section, key):
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            cur = m.group(1).strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return 0


def _convert(raw, default, where):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], (int, float)):
                kind = type(default[0])
                return tuple(kind(x) for x in items)
            return tuple(items)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"{where}: cannot parse {raw!r}") from None


def _apply(obj, items, text, section, path):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, raw in items:
        where = f"{path}:{_line_of(text, section, key)}"
        if key not in fields:
            raise ConfigurationError(f"{where}: unknown key {key!r} in [{section}]")
        setattr(obj, key, _convert(raw, getattr(obj, key), where))


def load_config(path) -> PipelineConfig:
    """Read an INI file; unknown keys and malformed values are errors with line numbers."""
    p = Path(path)
    if not p.exists():
        shipped = data_path(p.name)
        if p.parent == Path(".") and shipped.exists():
            p = shipped
        else:
            raise ConfigurationError(f"config file {path} not found")
    text = p.read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(p))
    except configparser.Error as exc:
        raise ConfigurationError(f"{p}: {exc}") from None
    cfg = PipelineConfig(base_dir=p.parent.resolve())
    for section in cp.sections():
        items = list(cp.items(section))
        if section == "run":
            for key, _ in items:
                if key not in ("seed", "out", "jobs"):
                    raise ConfigurationError(f"{p}:{_line_of(text, section, key)}: unknown key {key!r} in [run]")
            _apply(cfg, items, text, section, p)
        elif section == "mcs":
            for key, raw in items:
                where = f"{p}:{_line_of(text, section, key)}"
                if key != "simulations":
                    raise ConfigurationError(f"{where}: unknown key {key!r} in [mcs]")
                cfg.mcs_simulations = _convert(raw, 0, where)
        elif section in _SECTIONS:
            _apply(getattr(cfg, _SECTIONS[section]), items, text, section, p)
        else:
            raise ConfigurationError(f"{p}:{_line_of_section(text, section)}: unknown section [{section}]")
    cfg.building.nominal_stiffness = tuple(float(k) for k in cfg.building.nominal_stiffness)
    cfg.validate()
    return cfg


def _line_of_section(text, section):
    for i, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return i
    return 0
