"""Supervised calibration / warm-up: teacher-forced cross-entropy with Adam."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidConfig
from .grammar import render_reference_texts, tokenize
from .optim import Adam
from .policy import PolicyParams, backward_batch, forward_batch, teacher_forced

log = logging.getLogger(__name__)

TARGET_KINDS = ("calibration", "full")
VAL_EVERY_NTH = 10  # every 10th training record is held out for early stopping


@dataclass(frozen=True)
class SftConfig:
    iterations: int = 10_000
    batch_size: int = 8
    learning_rate: float = 3e-3
    early_stopping_patience: int = 5
    validation_every: int = 200
    freeze_condition_columns: bool = False
    seed: int = 0

    def validate(self):
        if self.iterations < 0:
            raise InvalidConfig("iterations must be >= 0")
        if self.batch_size < 1 or self.validation_every < 1:
            raise InvalidConfig("batch_size and validation_every must be positive")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.early_stopping_patience < 1:
            raise InvalidConfig("early_stopping_patience must be >= 1")


PAPER_SFT = SftConfig(iterations=10_000, batch_size=8, learning_rate=1.5e-5)
TOY_SFT = SftConfig(iterations=4000, batch_size=8, learning_rate=3e-3)
# warm-up runs a single epoch, so its iteration count is derived from the data
PAPER_WARMUP = SftConfig(batch_size=8, learning_rate=1.5e-5)
TOY_WARMUP = SftConfig(batch_size=8, learning_rate=3e-2)


@dataclass(frozen=True)
class SftLogRow:
    iteration: int
    train_loss: float
    val_loss: float


def sft_loss_and_grad(params: PolicyParams, batch) -> tuple[float, PolicyParams]:
    """Mean negative sequence log-likelihood over ``batch`` of (condition, tokens)."""
    if not batch:
        raise ValueError("empty batch")
    conds, seqs = zip(*batch)
    tf = teacher_forced(params.config, conds, seqs)
    Hid, logp = forward_batch(params, tf)
    rows = np.arange(len(tf.targets))
    B = len(batch)
    loss = -logp[rows, tf.targets].sum() / B
    dZ = np.exp(logp)
    dZ[rows, tf.targets] -= 1.0
    dZ /= B
    return float(loss), backward_batch(params, tf, Hid, dZ)


def sft_loss(params: PolicyParams, batch) -> float:
    conds, seqs = zip(*batch)
    tf = teacher_forced(params.config, conds, seqs)
    _, logp = forward_batch(params, tf)
    return float(-logp[np.arange(len(tf.targets)), tf.targets].sum() / len(batch))


def build_targets(records, target_kind: str):
    if target_kind not in TARGET_KINDS:
        raise InvalidConfig(f"target_kind must be one of {TARGET_KINDS}")
    idx = 0 if target_kind == "calibration" else 1
    return [(r.features, np.asarray(tokenize(render_reference_texts(r)[idx]))) for r in records]


def split_holdout(records):
    fit = [r for i, r in enumerate(records) if i % VAL_EVERY_NTH != VAL_EVERY_NTH - 1]
    val = [r for i, r in enumerate(records) if i % VAL_EVERY_NTH == VAL_EVERY_NTH - 1]
    return fit, val


def one_epoch(cfg: SftConfig, n_records: int) -> SftConfig:
    """Config for exactly one pass over the fitting part of ``n_records``."""
    n_fit = len(split_holdout(range(n_records))[0])
    return replace(cfg, iterations=math.ceil(n_fit / cfg.batch_size))


def train_sft(params: PolicyParams, dataset, target_kind: str, cfg: SftConfig):
    """Train on rendered targets; returns (best-validation params, log rows).

    ``params`` is not modified.
    """
    cfg.validate()
    records = list(dataset)
    if not records:
        raise InvalidConfig("dataset is empty")
    if target_kind not in TARGET_KINDS:
        raise InvalidConfig(f"target_kind must be one of {TARGET_KINDS}")
    params = params.copy()
    if cfg.iterations == 0:
        return params, []

    fit_records, val_records = split_holdout(records)
    if not val_records:
        val_records = fit_records
    fit = build_targets(fit_records, target_kind)
    val = build_targets(val_records, target_kind)
    frozen = params.condition_mask() if cfg.freeze_condition_columns else None
    opt = Adam(params, cfg.learning_rate, frozen=frozen)

    rows = []
    best_val = sft_loss(params, val)
    best = params.copy()
    rows.append(SftLogRow(0, sft_loss(params, fit[: cfg.batch_size]), best_val))
    bad_checks = 0
    running = []
    order = np.empty(0, dtype=np.int64)
    cursor = 0
    epoch = 0
    for it in range(1, cfg.iterations + 1):
        if cursor >= len(order):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(fit))
            epoch += 1
            cursor = 0
        batch = [fit[j] for j in order[cursor : cursor + cfg.batch_size]]
        cursor += cfg.batch_size
        loss, grad = sft_loss_and_grad(params, batch)
        running.append(loss)
        opt.step(params, grad)

        if it % cfg.validation_every == 0 or it == cfg.iterations:
            val_loss = sft_loss(params, val)
            rows.append(SftLogRow(it, float(np.mean(running)), val_loss))
            running = []
            log.debug("sft it=%d train=%.4f val=%.4f", it, rows[-1].train_loss, val_loss)
            if val_loss < best_val:
                best_val = val_loss
                best = params.copy()
                bad_checks = 0
            else:
                bad_checks += 1
                if bad_checks >= cfg.early_stopping_patience:
                    log.info("early stop at iteration %d (best val %.4f)", it, best_val)
                    break
    return best, rows


def write_sft_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "train_loss", "val_loss"])
        for r in rows:
            w.writerow([r.iteration, repr(r.train_loss), repr(r.val_loss)])
