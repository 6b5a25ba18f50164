"""Run configuration: presets, a flat ``key = value`` file format, overrides.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Top-level keys are the dataset and ablation settings; stage settings use a
dotted prefix (``calibration.``, ``warmup.``, ``grpo.``, ``judge.``). Stage
seeds are not configurable on their own: every stage uses the run seed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import InvalidConfig
from .grpo import PAPER_GRPO, TOY_GRPO, GrpoConfig
from .rewards import REWARD_MODES, JudgeConfig
from .sft import PAPER_SFT, PAPER_WARMUP, TOY_SFT, TOY_WARMUP, SftConfig

JUDGE_URL_ENV = "CALREASON_JUDGE_URL"
PRESETS = ("toy", "paper")

_TOP_KEYS = (
    "n", "seed", "noise_level", "init_scale", "reward_mode",
    "skip_calibration", "skip_grpo", "freeze_condition_columns", "ablations",
)
# per-section fields that are either derived or not text-representable
_SKIP = {
    "calibration": {"seed", "freeze_condition_columns"},
    "warmup": {"seed", "iterations", "freeze_condition_columns"},
    "grpo": {"seed", "reward_mode"},
    "judge": {"prompt_template"},
}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    n: int = 2000
    seed: int = 1
    noise_level: float = 0.15
    init_scale: float = 0.1
    reward_mode: str = "acc_sem"
    skip_calibration: bool = False
    skip_grpo: bool = False
    freeze_condition_columns: bool = False
    ablations: bool = False
    calibration: SftConfig = TOY_SFT
    warmup: SftConfig = TOY_WARMUP
    grpo: GrpoConfig = TOY_GRPO
    judge: JudgeConfig = field(default_factory=JudgeConfig)

    def validate(self):
        if self.n < 20:
            raise InvalidConfig("n must be >= 20")
        if self.noise_level < 0 or self.init_scale < 0:
            raise InvalidConfig("noise_level and init_scale must be >= 0")
        if self.reward_mode not in REWARD_MODES:
            raise InvalidConfig(f"reward_mode must be one of {REWARD_MODES}")
        if self.skip_calibration and self.skip_grpo:
            raise InvalidConfig("skip_calibration and skip_grpo together leave nothing to train")
        self.calibration_config().validate()
        self.warmup.validate()
        self.grpo_config().validate()
        if self.reward_mode == "judge":
            self.judge.validate()

    def calibration_config(self) -> SftConfig:
        return replace(self.calibration, seed=self.seed,
                       freeze_condition_columns=self.freeze_condition_columns)

    def grpo_config(self) -> GrpoConfig:
        return replace(self.grpo, seed=self.seed, reward_mode=self.reward_mode)


def preset(name: str) -> RunConfig:
    if name == "toy":
        return RunConfig()
    if name == "paper":
        return RunConfig(calibration=PAPER_SFT, warmup=PAPER_WARMUP, grpo=PAPER_GRPO)
    raise InvalidConfig(f"unknown preset {name!r}; choose from {PRESETS}")


def _sections(cfg: RunConfig):
    return {"calibration": cfg.calibration, "warmup": cfg.warmup, "grpo": cfg.grpo, "judge": cfg.judge}


def to_flat(cfg: RunConfig) -> dict:
    flat = {k: getattr(cfg, k) for k in _TOP_KEYS}
    for sec, obj in _sections(cfg).items():
        for f in fields(obj):
            if f.name not in _SKIP[sec]:
                flat[f"{sec}.{f.name}"] = getattr(obj, f.name)
    return flat


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in to_flat(cfg).items())


def _coerce(key, raw: str, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        kind = "boolean" if isinstance(current, bool) else type(current).__name__
        raise InvalidConfig(f"{key}: expected {kind}, got {raw!r}") from None
    return raw or None


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply (key, raw-string) pairs in order; later pairs win."""
    flat = to_flat(cfg)
    top, secs = {}, {s: {} for s in _SKIP}
    for key, raw in pairs:
        if key not in flat:
            raise InvalidConfig(f"unknown config key {key!r}")
        value = _coerce(key, raw, flat[key])
        if "." in key:
            sec, name = key.split(".", 1)
            secs[sec][name] = value
        else:
            top[key] = value
    sections = {s: replace(obj, **secs[s]) for s, obj in _sections(cfg).items()}
    return replace(cfg, **top, **sections)


def parse_pairs(text: str):
    """(line number, key, raw value) for every non-blank line."""
    pairs = []
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidConfig(f"line {i}: expected 'key = value', got {line!r}")
        pairs.append((i, key.strip(), value.strip()))
    return pairs


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs = parse_pairs(text)
    # a preset line selects the base before other keys are applied
    preset_name = next((v for _, k, v in pairs if k == "preset"), None)
    if base is None:
        base = preset(preset_name) if preset_name else RunConfig()
    cfg = base
    for i, k, v in pairs:
        if k == "preset":
            continue
        try:
            cfg = apply_overrides(cfg, [(k, v)])
        except InvalidConfig as e:
            raise InvalidConfig(f"line {i}: {e}") from None
    return cfg


def load(path, base: RunConfig | None = None) -> RunConfig:
    return loads(Path(path).read_text(encoding="utf-8"), base)


def with_env(cfg: RunConfig, environ=os.environ) -> RunConfig:
    """Fill the judge endpoint from the environment when the config leaves it unset."""
    url = environ.get(JUDGE_URL_ENV)
    if url and not cfg.judge.endpoint_url:
        return replace(cfg, judge=replace(cfg.judge, endpoint_url=url))
    return cfg
