"""Stage runners and the end-to-end calibration -> warm-up -> GRPO -> eval chain.

Everything a run produces lives under one output directory::

    data/         train.jsonl, test.jsonl, meta.json
    checkpoints/  <stage>.ckpt
    logs/         <stage>.csv
    reports/      <name>.json + <name>.csv, comparison.json
"""
from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import config as config_mod
from .config import RunConfig
from .errors import CalreasonError
from .evaluate import MetricsReport, compare_reports, evaluate_checkpoint, write_report
from .grpo import train_grpo, write_grpo_log
from .policy import init_params, load_params, save_params
from .rewards import RewardEngine
from .sft import one_epoch, train_sft, write_sft_log
from .synthdata import generate_dataset, read_dataset, write_dataset

log = logging.getLogger(__name__)


class StageError(CalreasonError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class MissingInput(StageError):
    pass


@dataclass(frozen=True)
class Layout:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def data(self) -> Path:
        return self.root / "data"

    def checkpoint(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.ckpt"

    def log(self, name: str) -> Path:
        return self.root / "logs" / f"{name}.csv"

    def report(self, name: str) -> Path:
        return self.root / "reports" / f"{name}.json"

    def resolve(self, path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.root / path

    def ensure(self):
        for sub in ("data", "checkpoints", "logs", "reports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)


@contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (CalreasonError, OSError, ValueError) as e:
        raise StageError(name, f"{type(e).__name__}: {e}") from e
    log.info("stage %s done in %.1fs", name, time.perf_counter() - t0)


def require(path: Path, stage_name: str) -> Path:
    if not path.exists():
        raise MissingInput(stage_name, f"missing input {path}")
    return path


# -- single stages -------------------------------------------------------------

def gen_data(cfg: RunConfig, layout: Layout):
    with stage("gen-data"):
        layout.ensure()
        split = generate_dataset(cfg.n, cfg.seed, cfg.noise_level)
        write_dataset(layout.data, split)
    return split


def load_data(layout: Layout, stage_name: str):
    require(layout.data / "train.jsonl", stage_name)
    with stage(stage_name):
        return read_dataset(layout.data)


def load_checkpoint(path: Path, stage_name: str):
    require(path, stage_name)
    with stage(stage_name):
        return load_params(path)


def calibrate(cfg: RunConfig, layout: Layout, split, init=None, name: str = "calibration", freeze=None):
    scfg = cfg.calibration_config()
    if freeze is not None:
        scfg = replace(scfg, freeze_condition_columns=freeze)
    with stage(name):
        layout.ensure()
        params = init if init is not None else init_params(cfg.seed, cfg.init_scale)
        params, rows = train_sft(params, split.train, "calibration", scfg)
        save_params(layout.checkpoint(name), params, tag=name)
        write_sft_log(layout.log(name), rows)
    return params


def warmup(cfg: RunConfig, layout: Layout, split, init, name: str = "warmup"):
    scfg = one_epoch(replace(cfg.warmup, seed=cfg.seed), len(split.train))
    with stage(name):
        layout.ensure()
        params, rows = train_sft(init, split.train, "full", scfg)
        save_params(layout.checkpoint(name), params, tag=name)
        write_sft_log(layout.log(name), rows)
    return params


def reason(cfg: RunConfig, layout: Layout, split, init, name: str = "grpo"):
    with stage(name):
        layout.ensure()
        engine = RewardEngine(cfg.reward_mode, cfg.judge)
        params, rows = train_grpo(init, split.train, engine, cfg.grpo_config())
        save_params(layout.checkpoint(name), params, tag=name)
        write_grpo_log(layout.log(name), rows)
    return params


def evaluate(layout: Layout, split, params, name: str) -> MetricsReport:
    with stage(f"eval:{name}"):
        layout.ensure()
        report = evaluate_checkpoint(params, split.test)
        write_report(layout.report(name), report)
    return report


# -- full chain ----------------------------------------------------------------

@dataclass
class PipelineResult:
    final: str
    reports: dict = field(default_factory=dict)
    comparison: dict = field(default_factory=dict)


def run_pipeline(cfg: RunConfig, out_dir) -> PipelineResult:
    """Run every enabled stage, write all artifacts, return the reports by name."""
    try:
        cfg.validate()
    except CalreasonError as e:
        raise StageError("config", str(e)) from e
    layout = Layout(out_dir)
    layout.ensure()
    (layout.root / "run.cfg").write_text(config_mod.dumps(cfg))
    split = gen_data(cfg, layout)
    reports = {}

    if cfg.skip_calibration:
        start = init_params(cfg.seed, cfg.init_scale)
    else:
        start = calibrate(cfg, layout, split)
        reports["calibration"] = evaluate(layout, split, start, "calibration")
    final = "calibration"
    if not cfg.skip_grpo:
        warm = warmup(cfg, layout, split, start)
        reports["warmup"] = evaluate(layout, split, warm, "warmup")
        tuned = reason(cfg, layout, split, warm)
        reports["grpo"] = evaluate(layout, split, tuned, "grpo")
        final = "grpo"

    if cfg.ablations:
        reports.update(_ablations(cfg, layout, split, reports))

    pairs = {f"{name}_vs_{final}": compare_reports(rep, reports[final])
             for name, rep in reports.items() if name != final}
    if "frozen_encoder" in reports and "calibration" in reports:
        pairs["frozen_encoder_vs_calibration"] = compare_reports(reports["frozen_encoder"], reports["calibration"])
    comparison = {"final": final, "pairs": pairs}
    layout.report("comparison").write_text(json.dumps(comparison, indent=2) + "\n")
    return PipelineResult(final, reports, comparison)


def _ablations(cfg: RunConfig, layout: Layout, split, reports) -> dict:
    out = {}
    if "calibration" in reports:
        out["calibration_only"] = reports["calibration"]
        write_report(layout.report("calibration_only"), reports["calibration"])
    else:
        cal = calibrate(cfg, layout, split, name="calibration_only")
        out["calibration_only"] = evaluate(layout, split, cal, "calibration_only")

    warm = warmup(cfg, layout, split, init_params(cfg.seed, cfg.init_scale), name="reasoning_only_warmup")
    tuned = reason(cfg, layout, split, warm, name="reasoning_only")
    out["reasoning_only"] = evaluate(layout, split, tuned, "reasoning_only")

    # the encoder ablation flips whatever the main run used
    name = "learned_encoder" if cfg.freeze_condition_columns else "frozen_encoder"
    other = calibrate(cfg, layout, split, name=name, freeze=not cfg.freeze_condition_columns)
    out[name] = evaluate(layout, split, other, name)
    return out
