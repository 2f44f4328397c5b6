"""Run configuration: a typed tree serialized as flat dotted key=value text.

The text form is canonical (fixed key order, shortest round-trip floats), so
serialize/parse is an exact round trip and the SHA-256 of the text doubles as
the config hash embedded in run ids.  Optional sections (time_window,
freq_filter) serialize as the single line "<section> = none" when absent.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from .datasets import DatasetSpec
from .diffusion import ArchSpec, NoiseSchedule, make_schedule
from .objectives import PreferenceConfig, SissConfig
from .selective import TimeWindowConfig
from .spectral import FrequencyFilterConfig

OBJECTIVE_KINDS = ("ga", "erasediff", "siss", "dpo", "kto")


@dataclass(frozen=True)
class ArchConfig:
    hidden: tuple[int, ...] = (64, 64)
    emb_dim: int = 16
    activation: str = "tanh"


@dataclass(frozen=True)
class ScheduleConfig:
    # T = 200 desk default with beta_end scaled so alpha_bar[T-1] stays near
    # zero (the 1000-step convention uses beta_end = 0.02)
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.1
    kind: str = "linear"


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "ga"
    retain_weight: float = 1.0          # forget+retain composition weight
    retain_t_max_frac: float = 1.0      # retain term draws t below this fraction
    retain_anchors: int = 0             # 0 = no anchor term, else K fixed points
    retain_anchor_gap: float = 0.13     # anchors keep this distance from forget
    anchor_weight: float = 0.0          # weight of the anchor stabilizer term
    anchor_mode: str = "preserve"       # preserve (match base) | descend (fit noise)
    anchor_t_max_frac: float = 0.25     # anchor term draws t below this fraction
    erasediff_beta_retain: float = 1.0
    siss_lambda: float = 0.5
    siss_beta: float = 0.0
    siss_importance_sampling: bool = True
    pref_beta: float = 2.0
    kto_w_desirable: float = 1.0
    kto_w_undesirable: float = 1.0


@dataclass(frozen=True)
class TimeWindowSpec:
    """Window bounds as fractions of T so configs transfer across T."""

    k: float = 0.0
    t1_frac: float = 0.25
    t2_frac: float = 0.75

    def concrete(self, T: int) -> TimeWindowConfig:
        return TimeWindowConfig(k=self.k, t1=int(round(self.t1_frac * T)),
                                t2=int(round(self.t2_frac * T)), T=T)


@dataclass(frozen=True)
class FreqFilterSpec:
    r_t: float = 0.15
    s: float = 0.0
    filter_target: bool = False
    apply_to: str = "forget-only"

    def concrete(self) -> FrequencyFilterConfig:
        return FrequencyFilterConfig(r_t=self.r_t, s=self.s,
                                     filter_target=self.filter_target)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    steps: int = 4000
    batch_size: int = 256
    plateau_window: int = 1000
    plateau_tol: float = 3e-4


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    steps: int = 150
    batch_size: int = 64
    clip_norm: float = 1.0


@dataclass(frozen=True)
class EvalConfig:
    t_start_fracs: tuple[float, ...] = (0.25, 0.5)
    cadence: int = 50
    n_sample: int = 1000
    hit_radius: float = 0.1
    coverage_radius: float = 0.1
    psd_bins: int = 9
    embedding: str = "flatten-cosine"
    n_retain_eval: int = 6
    grad_norm_draws: int = 8


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec = DatasetSpec()
    arch: ArchConfig = ArchConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    objective: ObjectiveConfig = ObjectiveConfig()
    time_window: TimeWindowSpec | None = TimeWindowSpec()
    freq_filter: FreqFilterSpec | None = None
    train: TrainConfig = TrainConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    eval: EvalConfig = EvalConfig()
    seed: int = 0


_SECTIONS: dict[str, type | None] = {
    "dataset": DatasetSpec,
    "arch": ArchConfig,
    "schedule": ScheduleConfig,
    "objective": ObjectiveConfig,
    "time_window": TimeWindowSpec,
    "freq_filter": FreqFilterSpec,
    "train": TrainConfig,
    "optimizer": OptimizerConfig,
    "eval": EvalConfig,
}
_OPTIONAL_SECTIONS = ("time_window", "freq_filter")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_format_value(x) for x in v)
    return str(v)


def _parse_scalar(text: str, typ):
    if typ is bool:
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    return typ(text)


def _parse_value(text: str, typ):
    origin = getattr(typ, "__origin__", None)
    if origin is tuple:
        elem = typ.__args__[0]
        text = text.strip()
        if not text:
            return ()
        return tuple(_parse_scalar(part.strip(), elem) for part in text.split(","))
    return _parse_scalar(text.strip(), typ)


def serialize(cfg: RunConfig) -> str:
    lines = []
    for section, cls in _SECTIONS.items():
        value = getattr(cfg, section)
        if value is None:
            lines.append(f"{section} = none")
            continue
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = "
                         f"{_format_value(getattr(value, f.name))}")
    lines.append(f"seed = {cfg.seed}")
    return "\n".join(lines) + "\n"


def _field_types(cls) -> dict[str, type]:
    resolved = {}
    for f in fields(cls):
        t = f.type
        if isinstance(t, str):
            t = eval(t, {"tuple": tuple, "int": int, "float": float,
                         "str": str, "bool": bool})
        resolved[f.name] = t
    return resolved


def parse(text: str) -> RunConfig:
    """Parse config text; unknown keys are an error, missing keys default."""
    staged: dict[str, dict] = {name: {} for name in _SECTIONS}
    none_sections: set[str] = set()
    seed = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "seed":
            seed = int(value)
            continue
        if key in _OPTIONAL_SECTIONS:
            if value != "none":
                raise ValueError(f"line {lineno}: section key {key!r} only "
                                 f"accepts 'none'")
            none_sections.add(key)
            continue
        if "." not in key:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ValueError(f"line {lineno}: unknown section {section!r}")
        types = _field_types(_SECTIONS[section])
        if name not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        staged[section][name] = _parse_value(value, types[name])
    kwargs = {}
    for section, cls in _SECTIONS.items():
        if section in none_sections:
            kwargs[section] = None
        elif staged[section] or section not in _OPTIONAL_SECTIONS:
            kwargs[section] = cls(**staged[section])
        else:
            kwargs[section] = RunConfig.__dataclass_fields__[section].default
    if seed is not None:
        kwargs["seed"] = seed
    return RunConfig(**kwargs)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply repeatable key=value overrides on top of a config."""
    text = serialize(cfg)
    lines = {line.split(" = ")[0]: line for line in text.splitlines() if line}
    for ov in overrides:
        if "=" not in ov:
            raise ValueError(f"override must be key=value, got {ov!r}")
        key, value = (part.strip() for part in ov.split("=", 1))
        if key in _OPTIONAL_SECTIONS:
            if value != "none":
                raise ValueError(f"override {key!r} only accepts 'none'")
            # disable the section: drop any of its subkey lines
            for stale in [k for k in lines if k.startswith(key + ".")]:
                del lines[stale]
        elif "." in key:
            # enabling an optional section via subkeys drops its 'none' line
            lines.pop(key.split(".", 1)[0], None)
        lines[key] = f"{key} = {value}"
    return parse("\n".join(lines.values()) + "\n")


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode("utf-8")).hexdigest()


def run_id(cfg: RunConfig) -> str:
    return f"{config_hash(cfg)[:8]}-s{cfg.seed}"


# --- conversions into runtime objects -------------------------------------------

def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    return make_schedule(cfg.schedule.T, cfg.schedule.beta_start,
                         cfg.schedule.beta_end, cfg.schedule.kind)


def build_arch(cfg: RunConfig, data_dim: int) -> ArchSpec:
    return ArchSpec(data_dim=data_dim, hidden=cfg.arch.hidden,
                    emb_dim=cfg.arch.emb_dim, activation=cfg.arch.activation)


def build_time_window(cfg: RunConfig) -> TimeWindowConfig | None:
    if cfg.time_window is None:
        return None
    return cfg.time_window.concrete(cfg.schedule.T)


def build_freq_filter(cfg: RunConfig) -> FrequencyFilterConfig | None:
    if cfg.freq_filter is None:
        return None
    return cfg.freq_filter.concrete()


def build_siss_config(cfg: RunConfig) -> SissConfig:
    o = cfg.objective
    return SissConfig(lam=o.siss_lambda, beta_siss=o.siss_beta,
                      importance_sampling=o.siss_importance_sampling)


def build_preference_config(cfg: RunConfig, reference) -> PreferenceConfig:
    o = cfg.objective
    return PreferenceConfig(beta_pref=o.pref_beta, reference=reference,
                            kto_weights=(o.kto_w_desirable, o.kto_w_undesirable))
