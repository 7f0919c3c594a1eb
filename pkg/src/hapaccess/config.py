"""Scenario configuration: a flat, typed ``key = value`` text format.

Blank lines and ``#`` comments are ignored. Every key is optional; missing
keys take the defaults below (the desk-scale scenario). See
``docs/config-schema.md`` in the repository for the key reference.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .airframe import FrameConfig
from .detector import DetectorConfig
from .errors import ConfigError
from .topology import hex_ring_counts

SCHEMA_VERSION = 1
MODES = ("edge", "cloud", "cellular")
SWEEPABLE = ("t_p", "n_co", "snr_db", "n_active")
# accepted spellings of the sweepable axes
AXIS_ALIASES = {"t_p": "t_p", "tp": "t_p", "n_co": "n_co", "nco": "n_co",
                "snr_db": "snr_db", "snr": "snr_db", "k_a": "n_active", "n_active": "n_active"}
PRESETS = ("desk", "fig5")


@dataclass(frozen=True)
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    # topology
    n_haps: int = 7
    hap_spacing_m: float | None = None       # None: sqrt(3) * footprint_radius_m
    altitude_m: float = 20_000.0
    footprint_radius_m: float = 50_000.0
    edge_anchors: tuple[int, ...] | None = None   # None: every HAP hosts a server
    center_fraction: float = 0.5
    # devices and channels
    n_devices: int = 200
    n_active: int = 10
    n_antennas: int = 8
    n_paths: int = 3
    rician_kappa_db: float = 10.0
    # frame
    n_cp: int = 128
    p_dft: int = 128
    n_dft: int = 4096
    bandwidth_hz: float = 10e6
    carrier_freq_hz: float = 2e9
    t_p: int = 40
    p_pilot: int = 4
    shared_pilots: bool = False
    snr_db: float = 10.0
    # processing
    mode: str = "edge"
    n_co: int = 3
    algorithm: str = "amp-em"
    activity_threshold: float = 0.5
    reliability_threshold: float = 0.9
    max_sic_rounds: int = 4
    inner_iterations: int = 50
    damping: float = 0.7
    angular_keep_ratio: float = 0.15
    enable_angular_refine: bool = True
    enable_sic: bool = True
    tolerance: float = 1e-6
    somp_plateau: float = 2.0
    # run control
    trials: int = 50
    master_seed: int = 20210601
    workers: int = 1

    def __post_init__(self):
        validate(self)

    @property
    def spacing_m(self) -> float:
        if self.hap_spacing_m is None:
            return math.sqrt(3) * self.footprint_radius_m
        return self.hap_spacing_m

    @property
    def kappa(self) -> float:
        return 10 ** (self.rician_kappa_db / 10)

    @property
    def effective_n_co(self) -> int:
        return {"edge": self.n_co, "cloud": self.n_haps, "cellular": 1}[self.mode]

    def frame(self) -> FrameConfig:
        return FrameConfig(self.n_cp, self.p_dft, self.n_dft, self.bandwidth_hz, self.t_p,
                           self.p_pilot, self.carrier_freq_hz)

    def detector(self) -> DetectorConfig:
        return DetectorConfig(self.algorithm, self.activity_threshold, self.reliability_threshold,
                              self.max_sic_rounds, self.inner_iterations, self.damping,
                              self.angular_keep_ratio, self.enable_angular_refine,
                              self.enable_sic, self.tolerance, self.somp_plateau)

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def digest(self) -> str:
        """Hash of every output-relevant key (``workers`` excluded)."""
        text = "\n".join(line for line in to_text(self).splitlines()
                         if not line.startswith(("workers", "#")))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}
_INT = {"schema_version", "n_haps", "n_devices", "n_active", "n_antennas", "n_paths", "n_cp",
        "p_dft", "n_dft", "t_p", "p_pilot", "n_co", "max_sic_rounds", "inner_iterations",
        "trials", "master_seed", "workers"}
_BOOL = {"shared_pilots", "enable_angular_refine", "enable_sic"}
_STR = {"mode", "algorithm"}


def validate(cfg: ScenarioConfig) -> None:
    """Range checks for every owning module; raises :class:`ConfigError`."""
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {cfg.schema_version} is not supported "
                          f"(expected {SCHEMA_VERSION})")
    if cfg.n_haps not in hex_ring_counts(20):
        valid = hex_ring_counts(20)
        nearest = min(valid, key=lambda v: (abs(v - cfg.n_haps), v))
        raise ConfigError(f"n_haps={cfg.n_haps} is not a hexagonal layout; "
                          f"nearest valid count is {nearest}")
    if cfg.n_devices < 0:
        raise ConfigError(f"n_devices must be >= 0, got {cfg.n_devices}")
    if not 0 <= cfg.n_active <= cfg.n_devices:
        raise ConfigError(f"n_active={cfg.n_active} must not exceed n_devices={cfg.n_devices}")
    if cfg.n_antennas < 1:
        raise ConfigError(f"n_antennas must be >= 1, got {cfg.n_antennas}")
    if not 1 <= cfg.n_co <= cfg.n_haps:
        raise ConfigError(f"n_co={cfg.n_co} must lie in [1, n_haps={cfg.n_haps}]")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode={cfg.mode!r} must be one of {', '.join(MODES)}")
    if cfg.n_paths < 1:
        raise ConfigError(f"n_paths must be >= 1, got {cfg.n_paths}")
    for name in ("altitude_m", "footprint_radius_m", "bandwidth_hz", "carrier_freq_hz"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be > 0, got {getattr(cfg, name)}")
    if cfg.hap_spacing_m is not None and cfg.hap_spacing_m <= 0:
        raise ConfigError(f"hap_spacing_m must be > 0, got {cfg.hap_spacing_m}")
    if cfg.edge_anchors is not None:
        if not cfg.edge_anchors:
            raise ConfigError("edge_anchors must name at least one HAP")
        bad = [a for a in cfg.edge_anchors if not 0 <= a < cfg.n_haps]
        if bad:
            raise ConfigError(f"edge_anchors {bad} out of range for n_haps={cfg.n_haps}")
    if not 0 < cfg.center_fraction < 1:
        raise ConfigError(f"center_fraction must lie in (0, 1), got {cfg.center_fraction}")
    if cfg.t_p < 1:
        raise ConfigError(f"t_p must be >= 1, got {cfg.t_p}")
    if cfg.trials < 1:
        raise ConfigError(f"trials must be >= 1, got {cfg.trials}")
    if not 0 <= cfg.master_seed < 2 ** 64:
        raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {cfg.master_seed}")
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    cfg.frame()
    cfg.detector()


def _format(name: str, value) -> str:
    if name == "hap_spacing_m" and value is None:
        return "auto"
    if name == "edge_anchors":
        return "all" if value is None else ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name: str, raw: str):
    if name == "hap_spacing_m":
        return None if raw.lower() == "auto" else float(raw)
    if name == "edge_anchors":
        if raw.lower() == "all":
            return None
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    if name in _BOOL:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if name in _INT:
        value = float(raw) if any(c in raw for c in ".eE") and not raw.isdigit() else int(raw)
        if value != int(value):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(value)
    if name in _STR:
        return raw
    return float(raw)


def parse_text(text: str, source: str = "<config>") -> tuple[ScenarioConfig, set[str]]:
    """Parse config text; returns the config and the set of explicitly given keys."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} "
                              f"(first set on line {lines[key]})")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        lines[key] = lineno
    try:
        cfg = ScenarioConfig(**values)
    except ConfigError as exc:
        msg = str(exc)
        where = [f"line {lines[k]}" for k in sorted(lines, key=lines.get)
                 if k in msg.replace("=", " ").replace(",", " ").split()]
        raise ConfigError(f"{source}: {msg}" + (f" ({', '.join(where)})" if where else "")) from None
    return cfg, set(values)


def load_scenario(path: str | Path) -> tuple[ScenarioConfig, set[str]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, str(path))


def load_preset(name: str) -> tuple[ScenarioConfig, set[str]]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    text = resources.files("hapaccess.presets").joinpath(f"{name}.cfg").read_text()
    return parse_text(text, f"preset:{name}")


def to_text(cfg: ScenarioConfig, explicit: set[str] | None = None) -> str:
    """Effective-config echo; keys not in ``explicit`` are marked as defaults."""
    out = []
    for name in _FIELDS:
        line = f"{name} = {_format(name, getattr(cfg, name))}"
        if explicit is not None and name not in explicit:
            line += "  # default"
        out.append(line)
    return "\n".join(out) + "\n"
