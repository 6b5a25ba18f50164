"""Group-relative policy optimization with an exact KL penalty to a frozen reference."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import GroupTooSmall, InvalidConfig
from .grammar import detokenize
from .optim import Adam
from .policy import (
    PolicyParams,
    backward_batch,
    forward_batch,
    per_sequence,
    sample_sequence,
    teacher_forced,
)
from .rewards import REWARD_MODES

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 4
    batch_size: int = 4
    iterations: int = 200
    learning_rate: float = 1e-3
    kl_coefficient: float = 0.04
    temperature: float = 1.0
    std_epsilon: float = 1e-8
    reward_mode: str = "acc_sem"
    seed: int = 0

    def validate(self):
        if self.group_size < 2:
            raise InvalidConfig("group_size must be >= 2")
        if self.batch_size < 1 or self.iterations < 0:
            raise InvalidConfig("batch_size must be positive and iterations >= 0")
        if not self.learning_rate > 0 or not self.temperature > 0:
            raise InvalidConfig("learning_rate and temperature must be positive")
        if self.kl_coefficient < 0:
            raise InvalidConfig("kl_coefficient must be >= 0")
        if self.reward_mode not in REWARD_MODES:
            raise InvalidConfig(f"reward_mode must be one of {REWARD_MODES}")


PAPER_GRPO = GrpoConfig(learning_rate=5e-6)
TOY_GRPO = GrpoConfig(learning_rate=1e-3)


@dataclass
class GroupRollout:
    condition: np.ndarray
    record_id: int
    rollouts: list
    breakdowns: list
    advantages: np.ndarray


@dataclass(frozen=True)
class GrpoLogRow:
    iteration: int
    mean_reward: float
    mean_abs_advantage: float
    mean_kl: float
    loss: float


def normalize_advantages(rewards, eps: float = 1e-8) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall(f"group of {r.size} responses; need at least 2")
    mean = r.mean()
    std = np.sqrt(np.mean((r - mean) ** 2))
    if std < eps:
        return np.zeros_like(r)
    return (r - mean) / std


def _kl_rows(logp, logq):
    """Row-wise KL(q || p) from log-probability matrices."""
    return np.sum(np.exp(logq) * (logq - logp), axis=1)


def sequence_kl(params: PolicyParams, ref_params: PolicyParams, condition, seq) -> float:
    """Sum over decoding positions of KL(p_ref || p_theta) over the full vocabulary."""
    tf = teacher_forced(params.config, [np.asarray(condition, dtype=np.float64)], [seq])
    _, logp = forward_batch(params, tf)
    _, logq = forward_batch(ref_params, tf)
    return float(_kl_rows(logp, logq).sum())


def grpo_loss_and_grad(params: PolicyParams, ref_params: PolicyParams, groups, kl_coefficient: float):
    """Loss ``-mean_i[A_i log p(y_i)] + lambda * mean_i KL_i`` and its exact gradient.

    Returns (loss, grad, mean sequence KL).
    """
    conds, seqs, adv = [], [], []
    for g in groups:
        for ro, a in zip(g.rollouts, g.advantages):
            conds.append(g.condition)
            seqs.append(ro.tokens)
            adv.append(a)
    N = len(seqs)
    adv = np.asarray(adv, dtype=np.float64)
    tf = teacher_forced(params.config, conds, seqs)
    Hid, logp = forward_batch(params, tf)
    _, logq = forward_batch(ref_params, tf)
    rows = np.arange(len(tf.targets))
    seq_logp = per_sequence(tf, logp[rows, tf.targets])
    seq_kl = per_sequence(tf, _kl_rows(logp, logq))
    loss = -np.sum(adv * seq_logp) / N + kl_coefficient * np.sum(seq_kl) / N

    p = np.exp(logp)
    row_adv = adv[tf.segment][:, None]
    # policy term: -(A/N)(onehot - p); KL term: (lambda/N)(p - q)
    onehot_minus_p = -p
    onehot_minus_p[rows, tf.targets] += 1.0
    dZ = -(row_adv / N) * onehot_minus_p
    if kl_coefficient:
        dZ += (kl_coefficient / N) * (p - np.exp(logq))
    grad = backward_batch(params, tf, Hid, dZ)
    return float(loss), grad, float(seq_kl.mean())


def collect_group(params, record, engine, cfg: GrpoConfig, iteration: int, slot: int) -> GroupRollout:
    rollouts = [
        sample_sequence(params, record.features, cfg.temperature,
                        np.random.default_rng([cfg.seed, iteration, slot, m]))
        for m in range(cfg.group_size)
    ]
    texts = [detokenize(ro.tokens) for ro in rollouts]
    breakdowns = engine(texts, record)
    adv = normalize_advantages([b.total for b in breakdowns], cfg.std_epsilon)
    return GroupRollout(record.features, record.id, rollouts, breakdowns, adv)


def train_grpo(params: PolicyParams, dataset, engine, cfg: GrpoConfig, observer=None):
    """Run GRPO from ``params`` (kept as the frozen reference). Returns (params, log rows).

    ``observer(iteration, groups)`` is called once per iteration if given.
    """
    cfg.validate()
    records = list(dataset)
    if not records:
        raise InvalidConfig("dataset is empty")
    ref_params = params.copy()
    params = params.copy()
    if cfg.iterations == 0:
        return params, []
    opt = Adam(params, cfg.learning_rate)
    batch = min(cfg.batch_size, len(records))
    rows = []
    for it in range(cfg.iterations):
        picks = np.random.default_rng([cfg.seed, it]).choice(len(records), size=batch, replace=False)
        groups = [collect_group(params, records[j], engine, cfg, it, slot) for slot, j in enumerate(picks)]
        if observer is not None:
            observer(it, groups)
        loss, grad, mean_kl = grpo_loss_and_grad(params, ref_params, groups, cfg.kl_coefficient)
        opt.step(params, grad)
        rewards = [b.total for g in groups for b in g.breakdowns]
        adv = np.concatenate([g.advantages for g in groups])
        rows.append(GrpoLogRow(it, float(np.mean(rewards)), float(np.mean(np.abs(adv))), mean_kl, loss))
        if it % 50 == 0:
            log.debug("grpo it=%d reward=%.3f kl=%.4f", it, rows[-1].mean_reward, mean_kl)
    return params, rows


def write_grpo_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_reward", "mean_abs_advantage", "mean_kl", "loss"])
        for r in rows:
            w.writerow([r.iteration, repr(r.mean_reward), repr(r.mean_abs_advantage), repr(r.mean_kl), repr(r.loss)])
