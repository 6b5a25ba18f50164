"""First-order conditional autoregressive policy.

Each step sees ``x = [condition ; one_hot(prev_token) ; binary(position)]``
and produces ``softmax(W2 tanh(W1 x + b1) + b2)``. Everything is float64 and
every gradient is analytic.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import ShapeMismatch, VersionMismatch
from .grammar import BOS, EOS, MAX_SEQ_LEN, PAD, VOCAB_SIZE

FORMAT_VERSION = 1
GREEDY_TEMPERATURE = 1e-6


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int = VOCAB_SIZE
    condition_dim: int = 24
    hidden_dim: int = 64
    max_len: int = MAX_SEQ_LEN
    position_dim: int = 8

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_len > 2 ** self.position_dim:
            raise ValueError("position_dim too small for max_len")

    @property
    def input_dim(self):
        return self.condition_dim + self.vocab_size + self.position_dim

    @property
    def n_params(self):
        H, V = self.hidden_dim, self.vocab_size
        return H * self.input_dim + H + V * H + V


DEFAULT_CONFIG = PolicyConfig()


@dataclass(eq=False)
class PolicyParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    config: PolicyConfig = DEFAULT_CONFIG

    NAMES = ("W1", "b1", "W2", "b2")

    def arrays(self):
        return (self.W1, self.b1, self.W2, self.b2)

    def copy(self):
        return PolicyParams(*(a.copy() for a in self.arrays()), config=self.config)

    def zeros_like(self):
        return PolicyParams(*(np.zeros_like(a) for a in self.arrays()), config=self.config)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def equals(self, other):
        return self.config == other.config and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    def condition_mask(self):
        """Per-array boolean masks marking the condition-input columns of W1."""
        masks = [np.zeros(a.shape, dtype=bool) for a in self.arrays()]
        masks[0][:, : self.config.condition_dim] = True
        return masks


@dataclass
class Rollout:
    tokens: np.ndarray
    step_logprobs: np.ndarray
    sequence_logprob: float


def init_params(seed: int, scale: float, config: PolicyConfig = DEFAULT_CONFIG) -> PolicyParams:
    if scale < 0:
        raise ValueError("scale must be >= 0")
    rng = np.random.default_rng(seed)
    H, V = config.hidden_dim, config.vocab_size
    shapes = ((H, config.input_dim), (H,), (V, H), (V,))
    arrays = [rng.uniform(-scale, scale, size=s) if scale > 0 else np.zeros(s) for s in shapes]
    return PolicyParams(*arrays, config=config)


def position_bits(config: PolicyConfig = DEFAULT_CONFIG) -> np.ndarray:
    pos = np.arange(config.max_len)[:, None]
    return ((pos >> np.arange(config.position_dim)[None, :]) & 1).astype(np.float64)


_POS_CACHE = {}


def _pos_bits(config):
    bits = _POS_CACHE.get(config)
    if bits is None:
        bits = _POS_CACHE[config] = position_bits(config)
    return bits


def step_input(config, condition, prev_token, position) -> np.ndarray:
    x = np.zeros(config.input_dim)
    C, V = config.condition_dim, config.vocab_size
    x[:C] = condition
    x[C + prev_token] = 1.0
    x[C + V :] = _pos_bits(config)[position]
    return x


def forward_step(params: PolicyParams, condition, prev_token: int, position: int) -> np.ndarray:
    cfg = params.config
    if not 0 <= position < cfg.max_len:
        raise ValueError(f"position {position} outside [0, {cfg.max_len})")
    x = step_input(cfg, np.asarray(condition, dtype=np.float64), prev_token, position)
    h = np.tanh(params.W1 @ x + params.b1)
    z = params.W2 @ h + params.b2
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def trim(seq) -> np.ndarray:
    """Sequence up to and including the first EOS; rejects a missing BOS."""
    seq = np.asarray(seq, dtype=np.int64)
    if len(seq) == 0 or seq[0] != BOS:
        raise ValueError("sequence must start with BOS")
    hits = np.flatnonzero(seq == EOS)
    if len(hits):
        seq = seq[: hits[0] + 1]
    return seq


# -- batched teacher forcing -------------------------------------------------

@dataclass
class TeacherForced:
    """Stacked per-position inputs for a list of (condition, sequence) pairs."""

    X: np.ndarray        # (N, input_dim)
    targets: np.ndarray  # (N,)
    segment: np.ndarray  # (N,) index of the source sequence
    n_seqs: int


def teacher_forced(config: PolicyConfig, conditions, seqs) -> TeacherForced:
    C, V = config.condition_dim, config.vocab_size
    bits = _pos_bits(config)
    trimmed = [trim(s) for s in seqs]
    lengths = [len(s) - 1 for s in trimmed]
    N = sum(lengths)
    X = np.zeros((N, config.input_dim))
    targets = np.empty(N, dtype=np.int64)
    segment = np.empty(N, dtype=np.int64)
    row = 0
    for i, (cond, s, T) in enumerate(zip(conditions, trimmed, lengths)):
        if len(s) > config.max_len:
            raise ValueError(f"sequence of length {len(s)} exceeds max_len {config.max_len}")
        sl = slice(row, row + T)
        X[sl, :C] = cond
        X[np.arange(row, row + T), C + s[:-1]] = 1.0
        X[sl, C + V :] = bits[:T]
        targets[sl] = s[1:]
        segment[sl] = i
        row += T
    return TeacherForced(X, targets, segment, len(trimmed))


def forward_batch(params: PolicyParams, tf: TeacherForced):
    """Returns (hidden activations, log-softmax matrix)."""
    Hid = np.tanh(tf.X @ params.W1.T + params.b1)
    Z = Hid @ params.W2.T + params.b2
    Z = Z - Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    return Hid, logp


def backward_batch(params: PolicyParams, tf: TeacherForced, Hid, dZ) -> PolicyParams:
    """Gradient of a scalar whose derivative w.r.t. the logits is ``dZ``."""
    dW2 = dZ.T @ Hid
    db2 = dZ.sum(axis=0)
    dA = (dZ @ params.W2) * (1.0 - Hid * Hid)
    dW1 = dA.T @ tf.X
    db1 = dA.sum(axis=0)
    return PolicyParams(dW1, db1, dW2, db2, config=params.config)


def per_sequence(tf: TeacherForced, values) -> np.ndarray:
    return np.bincount(tf.segment, weights=values, minlength=tf.n_seqs)


def sequence_logprob(params: PolicyParams, condition, seq) -> float:
    tf = teacher_forced(params.config, [np.asarray(condition, dtype=np.float64)], [seq])
    _, logp = forward_batch(params, tf)
    return float(logp[np.arange(len(tf.targets)), tf.targets].sum())


def logprob_grad(params: PolicyParams, condition, seq) -> PolicyParams:
    tf = teacher_forced(params.config, [np.asarray(condition, dtype=np.float64)], [seq])
    Hid, logp = forward_batch(params, tf)
    # d/dz log softmax(z)[y] = onehot(y) - p
    dZ = -np.exp(logp)
    dZ[np.arange(len(tf.targets)), tf.targets] += 1.0
    return backward_batch(params, tf, Hid, dZ)


# -- sampling ----------------------------------------------------------------

def sample_sequence(params: PolicyParams, condition, temperature: float, rng: np.random.Generator) -> Rollout:
    """Ancestral sampling; ``temperature < 1e-6`` means argmax decoding.

    Always consumes ``max_len - 1`` uniforms from ``rng`` so stream positions
    do not depend on the sampled length.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    cfg = params.config
    uniforms = rng.random(cfg.max_len - 1)
    greedy = temperature < GREEDY_TEMPERATURE
    tokens, logps = kernels.sample_tokens(
        params.W1, params.b1, params.W2, params.b2,
        np.ascontiguousarray(condition, dtype=np.float64), uniforms,
        float(temperature), greedy, cfg.max_len, BOS, EOS, _pos_bits(cfg),
    )
    return Rollout(tokens, logps, float(logps.sum()))


def greedy_decode(params: PolicyParams, condition) -> Rollout:
    return sample_sequence(params, condition, GREEDY_TEMPERATURE / 2, np.random.default_rng(0))


# -- checkpoints -------------------------------------------------------------

def save_params(path, params: PolicyParams, tag: str = ""):
    doc = {
        "format_version": FORMAT_VERSION,
        "config": asdict(params.config),
        "tag": tag,
        "arrays": {name: [float(v) for v in a.ravel()] for name, a in zip(PolicyParams.NAMES, params.arrays())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_params(path, config: PolicyConfig = DEFAULT_CONFIG, with_tag: bool = False):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {doc.get('format_version')!r}, expected {FORMAT_VERSION}")
    file_cfg = PolicyConfig(**doc["config"])
    if file_cfg != config:
        raise ShapeMismatch(f"checkpoint config {file_cfg} does not match runtime {config}")
    template = init_params(0, 0.0, config)
    arrays = []
    for name, ref in zip(PolicyParams.NAMES, template.arrays()):
        flat = np.asarray(doc["arrays"][name], dtype=np.float64)
        if flat.size != ref.size:
            raise ShapeMismatch(f"{name}: {flat.size} values, expected {ref.size}")
        arrays.append(flat.reshape(ref.shape))
    params = PolicyParams(*arrays, config=config)
    if with_tag:
        return params, doc.get("tag", "")
    return params


__all__ = [
    "DEFAULT_CONFIG", "PAD", "PolicyConfig", "PolicyParams", "Rollout", "backward_batch",
    "forward_batch", "forward_step", "greedy_decode", "init_params", "load_params",
    "logprob_grad", "per_sequence", "position_bits", "sample_sequence", "save_params",
    "sequence_logprob", "teacher_forced", "trim",
]
