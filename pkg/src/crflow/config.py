"""Run configuration: a strict TOML subset with dotted sections.

Every key is checked against the dataclass fields below; unknown keys, wrong
types and rule violations raise :class:`ConfigError` with the offending key
and, when it can be located, the line number.

Minimal AH example::

    family = "AH_BALL"
    m = 3

    [grid]
    s_max = 8.0
    n_points = 401

    [time]
    t_end = 0.05
"""
from __future__ import annotations

import math
import re
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

import tomli_w

from crflow.errors import ConfigError
from crflow.flow import Mode
from crflow.geometry.grid import Family
from crflow.geometry.profiles import PROFILE_IDS


@dataclass(frozen=True)
class GridConfig:
    n_points: int
    s_max: float | None = None
    L: float | None = None
    radius: float = 1.0


@dataclass(frozen=True)
class TimeConfig:
    t_end: float
    cfl_sigma: float = 0.2
    snapshot_interval: float | None = None


@dataclass(frozen=True)
class PerturbationConfig:
    amplitude: float = 0.0
    profile: str = "random"
    decay: float = 2.0
    seed: int = 0


@dataclass(frozen=True)
class ToleranceConfig:
    elliptic: float = 1e-10
    newton: float = 1e-10
    drift_band: float = 1e-4
    band_width: float = 1.0


@dataclass(frozen=True)
class DiagnosticsConfig:
    alpha: float = 0.1
    k_tilde: float | None = None
    decay_window: tuple | None = None


@dataclass(frozen=True)
class LadderConfig:
    n_points: tuple = ()


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "crflow_out"
    formats: tuple = ("json", "csv")
    check: bool = False


@dataclass(frozen=True)
class FlowConfig:
    family: Family
    m: int
    grid: GridConfig
    time: TimeConfig
    kappa: int = 1
    c: float | None = None
    allow_positive_c: bool = False
    mode: Mode = Mode.CRF
    normalize: bool = True
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    ladder: LadderConfig = field(default_factory=LadderConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def seed(self) -> int:
        return self.perturbation.seed

    def with_points(self, n_points: int) -> "FlowConfig":
        """Same scenario on a grid with ``n_points`` nodes."""
        return replace(self, grid=replace(self.grid, n_points=int(n_points)))


_SECTIONS = {
    "grid": GridConfig, "time": TimeConfig, "perturbation": PerturbationConfig,
    "tolerances": ToleranceConfig, "diagnostics": DiagnosticsConfig,
    "ladder": LadderConfig, "output": OutputConfig,
}
_TOP_KEYS = {"family", "m", "kappa", "c", "allow_positive_c", "mode", "normalize"}
_FORMATS = ("json", "csv")


def _line_of(text: str, key: str, section: str | None) -> int | None:
    """1-based line of ``key`` (inside ``[section]`` when given), if found."""
    current = None
    pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    dotted = re.compile(r"^\s*" + re.escape(f"{section}.{key}") + r"\s*=") if section else None
    for i, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"^\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            continue
        if section is None and current is None and pat.match(line):
            return i
        if section is not None and ((current == section and pat.match(line))
                                    or (current is None and dotted.match(line))):
            return i
    return None


def _fail(msg: str, text: str, key: str | None = None, section: str | None = None):
    line = _line_of(text, key, section) if key else None
    where = f" (line {line})" if line else ""
    raise ConfigError(msg + where)


def _coerce(value, name: str, kind, text: str, section: str | None):
    """Check a scalar against the expected kind ('int', 'float', 'bool', 'str')."""
    label = f"{section}.{name}" if section else name
    ok = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "float": isinstance(value, (int, float)) and not isinstance(value, bool),
        "bool": isinstance(value, bool),
        "str": isinstance(value, str),
    }[kind]
    if not ok:
        _fail(f"key {label!r} expects a {kind}, got {value!r}", text, name, section)
    if kind == "float":
        value = float(value)
        if not math.isfinite(value):
            _fail(f"key {label!r} must be finite", text, name, section)
    return value


_KINDS = {
    "grid": {"n_points": "int", "s_max": "float", "L": "float", "radius": "float"},
    "time": {"t_end": "float", "cfl_sigma": "float", "snapshot_interval": "float"},
    "perturbation": {"amplitude": "float", "profile": "str", "decay": "float", "seed": "int"},
    "tolerances": {"elliptic": "float", "newton": "float", "drift_band": "float",
                   "band_width": "float"},
    "diagnostics": {"alpha": "float", "k_tilde": "float", "decay_window": "list"},
    "ladder": {"n_points": "list"},
    "output": {"directory": "str", "formats": "list", "check": "bool"},
}


def _section(raw: dict, name: str, text: str):
    cls = _SECTIONS[name]
    data = raw.get(name, {})
    if not isinstance(data, dict):
        _fail(f"{name!r} must be a section", text, name, None)
    allowed = {f.name for f in fields(cls)}
    for key in data:
        if key not in allowed:
            _fail(f"unknown key {key!r} in section [{name}]; allowed: {sorted(allowed)}",
                  text, key, name)
    out = {}
    for key, value in data.items():
        kind = _KINDS[name][key]
        if kind == "list":
            if not isinstance(value, list):
                _fail(f"key '{name}.{key}' expects a list", text, key, name)
            out[key] = tuple(value)
        else:
            out[key] = _coerce(value, key, kind, text, name)
    try:
        return cls(**out)
    except TypeError:
        missing = [f.name for f in fields(cls) if f.name not in out
                   and f.default is MISSING and f.default_factory is MISSING]
        _fail(f"section [{name}] is missing required keys {missing}", text)


def parse_config(text: str) -> FlowConfig:
    """Parse and validate configuration text; defaults are resolved here."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    for key in raw:
        if key not in _TOP_KEYS and key not in _SECTIONS:
            _fail(f"unknown key {key!r}; allowed top-level keys: {sorted(_TOP_KEYS)} "
                  f"and sections {sorted(_SECTIONS)}", text, key, None)
    for req in ("family", "m", "grid", "time"):
        if req not in raw:
            raise ConfigError(f"missing required key {req!r}")
    try:
        family = Family(raw["family"])
    except ValueError:
        _fail(f"family must be one of {[f.value for f in Family]}", text, "family", None)
    try:
        mode = Mode(raw.get("mode", "CRF"))
    except ValueError:
        _fail(f"mode must be one of {[md.value for md in Mode]}", text, "mode", None)
    m = _coerce(raw["m"], "m", "int", text, None)
    kappa = _coerce(raw.get("kappa", 1), "kappa", "int", text, None)
    c = raw.get("c")
    c = None if c is None else _coerce(c, "c", "float", text, None)
    allow_pos = _coerce(raw.get("allow_positive_c", False), "allow_positive_c", "bool", text, None)
    normalize = raw.get("normalize")
    normalize = None if normalize is None else _coerce(normalize, "normalize", "bool", text, None)

    sections = {}
    for name in _SECTIONS:
        if name in ("grid", "time") or name in raw:
            sections[name] = _section(raw, name, text)
    cfg = FlowConfig(family=family, m=m, kappa=kappa, c=c, allow_positive_c=allow_pos, mode=mode,
                     normalize=(family is Family.AH_BALL) if normalize is None else normalize,
                     **sections)
    validate(cfg, normalize_given=normalize is not None)
    return cfg


def validate(cfg: FlowConfig, normalize_given: bool = True) -> None:
    """Enforce the cross-field rules; each error names the rule it breaks."""
    if cfg.m < 2:
        raise ConfigError(f"rule 'fiber dimension': m must be >= 2, got {cfg.m}")
    if cfg.kappa not in (0, 1):
        raise ConfigError(f"rule 'fiber curvature': kappa must be 0 or 1, got {cfg.kappa}")
    g = cfg.grid
    if g.n_points < 5:
        raise ConfigError("rule 'grid size': grid.n_points must be >= 5")
    if cfg.family is Family.AH_BALL:
        if cfg.kappa != 1:
            raise ConfigError("rule 'AH fiber': AH_BALL needs kappa = 1")
        if g.s_max is None or g.s_max <= 0:
            raise ConfigError("rule 'AH extent': AH_BALL needs grid.s_max > 0")
        if g.L is not None:
            raise ConfigError("rule 'AH extent': grid.L applies to CLOSED only")
        if cfg.c is not None:
            raise ConfigError("rule 'AH constant': c applies to CLOSED only")
    else:
        if g.s_max is not None:
            raise ConfigError("rule 'closed extent': CLOSED uses grid.L, not grid.s_max")
        if g.L is not None and g.L <= 0:
            raise ConfigError("rule 'closed extent': grid.L must be positive")
        if cfg.c is None:
            raise ConfigError("rule 'closed constant': CLOSED needs the flow constant c")
        if cfg.c >= 0 and not cfg.allow_positive_c:
            raise ConfigError(
                f"rule 'spectral collision': CLOSED requires c < 0 (got c = {cfg.c}); a "
                "non-negative c can sit on the Laplace spectrum of the pressure operator. "
                "Set allow_positive_c = true to run with the near-singular check instead")
        if cfg.normalize and normalize_given:
            raise ConfigError("rule 'normalization': conformal normalization is AH_BALL only")
    if g.radius <= 0:
        raise ConfigError("rule 'grid radius': grid.radius must be positive")
    t = cfg.time
    if t.t_end <= 0:
        raise ConfigError("rule 'time': time.t_end must be positive")
    if t.cfl_sigma <= 0:
        raise ConfigError("rule 'time': time.cfl_sigma must be positive")
    if t.snapshot_interval is not None and t.snapshot_interval <= 0:
        raise ConfigError("rule 'time': time.snapshot_interval must be positive")
    p = cfg.perturbation
    if p.profile not in PROFILE_IDS:
        raise ConfigError(f"rule 'perturbation profile': choose from {list(PROFILE_IDS)}")
    if p.decay <= 0:
        raise ConfigError("rule 'perturbation decay': decay must be positive")
    tol = cfg.tolerances
    for name in ("elliptic", "newton", "drift_band", "band_width"):
        if getattr(tol, name) <= 0:
            raise ConfigError(f"rule 'tolerances': tolerances.{name} must be positive")
    d = cfg.diagnostics
    if d.alpha <= 0:
        raise ConfigError("rule 'diagnostics': diagnostics.alpha must be positive")
    if d.decay_window is not None:
        if len(d.decay_window) != 2 or not d.decay_window[0] < d.decay_window[1]:
            raise ConfigError("rule 'decay window': diagnostics.decay_window must be [lo, hi], lo < hi")
    for n in cfg.ladder.n_points:
        if not isinstance(n, int) or isinstance(n, bool) or n < 5:
            raise ConfigError("rule 'ladder': ladder.n_points entries must be integers >= 5")
    for fmt in cfg.output.formats:
        if fmt not in _FORMATS:
            raise ConfigError(f"rule 'output formats': unknown format {fmt!r}; choose from {_FORMATS}")


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, (Family, Mode)):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    return value


def config_to_dict(cfg: FlowConfig) -> dict:
    """Plain-data view (``None`` entries dropped), as written in every artifact."""
    return _plain(asdict(cfg))


def echo_config(cfg: FlowConfig) -> str:
    """TOML text that re-parses to an equal config."""
    data = config_to_dict(cfg)
    top = {k: v for k, v in data.items() if not isinstance(v, dict)}
    sections = {k: v for k, v in data.items() if isinstance(v, dict)}
    return tomli_w.dumps({**top, **sections})


def load_config(path) -> FlowConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
