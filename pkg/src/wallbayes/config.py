"""Run configuration and its flat dotted-key file format.

A config file is TOML restricted to ``key = value`` lines with dotted keys::

    mode = "both_fluxes"
    ensemble_size = 200
    prior.kappa.nu = 1.05
    synth.rel_error = 0.0
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .assimilation import MODES
from .errors import ConfigError, InvalidArgumentError
from .priors import PriorConfig
from .synthetic import AirTemperature, TruthSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DAY = 86400.0


@dataclass(frozen=True)
class RunConfig:
    mode: str = "both_fluxes"
    mesh_exponent: int = 5
    ensemble_size: int = 200
    j_thresh: Optional[float] = None
    batch_size: int = 30
    assimilation_span_days: float = 3.0
    prediction_span_days: float = 3.0
    dt: float = 300.0
    alpha_field: float = 0.05
    alpha_table: float = 0.01
    alpha_predict: float = 0.05
    seed: int = 42
    workers: int = 1
    max_iterations: int = 50
    wall_length: float = 0.31
    rel_error: float = 0.05
    prior: PriorConfig = field(default_factory=PriorConfig.synthetic)
    synth: TruthSpec = field(default_factory=TruthSpec.default)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}", key="mode")
        checks = [
            ("ensemble_size", int(self.ensemble_size) == self.ensemble_size and self.ensemble_size >= 2),
            ("mesh_exponent", int(self.mesh_exponent) == self.mesh_exponent and 0 <= self.mesh_exponent <= 14),
            ("batch_size", int(self.batch_size) == self.batch_size and self.batch_size >= 1),
            ("dt", self.dt > 0),
            ("assimilation_span_days", self.assimilation_span_days >= 0),
            ("prediction_span_days", self.prediction_span_days >= 0),
            ("workers", int(self.workers) == self.workers and self.workers >= 1),
            ("max_iterations", self.max_iterations >= 1),
            ("wall_length", self.wall_length > 0),
            ("rel_error", self.rel_error > 0),
        ]
        for name in ("alpha_field", "alpha_table", "alpha_predict"):
            checks.append((name, 0 < getattr(self, name) < 1))
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value {getattr(self, key)!r}", key=key)
        jt = self.effective_j_thresh
        if not 1 < jt < self.ensemble_size:
            raise ConfigError(f"j_thresh must lie in (1, {self.ensemble_size}), got {jt}", key="j_thresh")

    @property
    def effective_j_thresh(self) -> float:
        return self.ensemble_size / 3.0 if self.j_thresh is None else float(self.j_thresh)

    @property
    def n_elements(self) -> int:
        return 2 ** int(self.mesh_exponent)

    @property
    def assimilation_span(self) -> float:
        return self.assimilation_span_days * DAY

    @property
    def prediction_span(self) -> float:
        return self.prediction_span_days * DAY

    def with_updates(self, **kw) -> "RunConfig":
        return replace(self, **kw)


_TOP = {f.name for f in fields(RunConfig)} - {"prior", "synth"}
_FIELD_PRIORS = ("kappa", "c", "t0")
_SCALAR_PRIORS = ("r_i", "r_e")


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _key_lines(text: str) -> dict:
    lines = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        head = raw.split("=", 1)[0].strip()
        if head and not head.startswith("#") and "=" in raw:
            lines.setdefault(head.replace(" ", ""), n)
    return lines


def _apply_prior(prior: PriorConfig, updates: dict) -> PriorConfig:
    parts = {}
    for name in _FIELD_PRIORS + _SCALAR_PRIORS:
        spec = getattr(prior, name)
        kw = updates.get(name)
        if kw:
            spec = replace(spec, **kw)
        parts[name] = spec
    return PriorConfig(**parts)


def _apply_synth(spec: TruthSpec, updates: dict) -> TruthSpec:
    kw = {}
    for key, value in updates.items():
        if key in ("internal_air", "external_air"):
            air = getattr(spec, key)
            sub = dict(value)
            if "harmonics" in sub:
                sub["harmonics"] = tuple(tuple(float(v) for v in h) for h in sub["harmonics"])
            kw[key] = replace(air, **sub)
        elif key == "layers":
            kw[key] = TruthSpec.from_dict({**spec.to_dict(), "layers": value}).layers
        else:
            kw[key] = value
    return replace(spec, **kw)


def config_from_mapping(values: dict, base: Optional[RunConfig] = None, lines: Optional[dict] = None) -> RunConfig:
    """Build a :class:`RunConfig` from flat dotted keys layered on ``base``."""
    base = RunConfig() if base is None else base
    lines = lines or {}
    top, prior_up, synth_up = {}, {}, {}
    for key, value in values.items():
        parts = key.split(".")
        line = lines.get(key)
        if len(parts) == 1 and parts[0] in _TOP:
            top[parts[0]] = value
        elif parts[0] == "prior" and len(parts) == 3 and parts[1] in _FIELD_PRIORS + _SCALAR_PRIORS:
            allowed = {"nu", "ell", "sigma", "omega"} if parts[1] in _FIELD_PRIORS else {"omega", "sigma"}
            if parts[2] not in allowed:
                raise ConfigError("unknown prior parameter", key=key, line=line)
            prior_up.setdefault(parts[1], {})[parts[2]] = value
        elif parts[0] == "prior" and len(parts) == 2 and parts[1] == "preset":
            if value not in ("synthetic", "bsria"):
                raise ConfigError("prior.preset must be 'synthetic' or 'bsria'", key=key, line=line)
            top["prior"] = getattr(PriorConfig, value)()
        elif parts[0] == "synth" and len(parts) >= 2:
            name = parts[1]
            if name in ("internal_air", "external_air"):
                if len(parts) != 3 or parts[2] not in {f.name for f in fields(AirTemperature)}:
                    raise ConfigError("unknown air temperature parameter", key=key, line=line)
                synth_up.setdefault(name, {})[parts[2]] = value
            elif len(parts) == 2 and name in {f.name for f in fields(TruthSpec)}:
                synth_up[name] = value
            else:
                raise ConfigError("unknown key", key=key, line=line)
        else:
            raise ConfigError("unknown key", key=key, line=line)
    try:
        prior = _apply_prior(top.pop("prior", base.prior), prior_up)
        synth = _apply_synth(base.synth, synth_up)
        return replace(base, prior=prior, synth=synth, **top)
    except ConfigError:
        raise
    except (InvalidArgumentError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed config: {exc}", line=line) from exc
    return config_from_mapping(_flatten(tree), base, _key_lines(text))


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        return parse_config(text, base)
    except ConfigError as exc:
        exc.path = str(path)
        raise
