"""Verifiable rewards for generated assessments.

Three reward engines share one return type:

* ``acc_sem``  exact-match score accuracy per dimension plus description
  similarity per artifact kind (total in [0, 9]);
* ``judge``    per-label judge scores, either from a deterministic mock or an
  HTTP text model (total in [0, 9]);
* ``unified``  a response-level baseline with four coarse components
  (total in [0, 4]).
"""
from __future__ import annotations

import json
import logging
import math
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import InvalidConfig, JudgeResponseMalformed, JudgeUnavailable
from .grammar import (
    ARTIFACT_KINDS,
    DIMENSIONS,
    lex,
    parse_partial,
    render_reference_texts,
)
from .metrics import interval_iou

log = logging.getLogger(__name__)

EMBEDDING_DIM = 256
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

REWARD_MODES = ("acc_sem", "judge", "unified")
JUDGE_LABELS = DIMENSIONS + tuple(f"{k}_artifacts" for k in ARTIFACT_KINDS)
UNIFIED_LABELS = ("accuracy", "relevance", "detail", "helpfulness")


@dataclass
class RewardBreakdown:
    mode: str
    score_rewards: dict = field(default_factory=dict)
    artifact_rewards: dict = field(default_factory=dict)
    judge_rewards: dict | None = None
    total: float = 0.0

    def to_dict(self):
        return {
            "mode": self.mode,
            "score_rewards": dict(self.score_rewards),
            "artifact_rewards": dict(self.artifact_rewards),
            "judge_rewards": None if self.judge_rewards is None else dict(self.judge_rewards),
            "total": self.total,
        }


# -- embedding ---------------------------------------------------------------

def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def trigrams(text: str) -> list[str]:
    t = normalize_text(text)
    return [t[i : i + 3] for i in range(len(t) - 2)]


class HashedTrigramEmbedder:
    """Character trigrams hashed (FNV-1a 64) into ``dim`` buckets, L2-normalized."""

    def __init__(self, dim: int = EMBEDDING_DIM):
        self.dim = dim
        self._cache = lru_cache(maxsize=65536)(self._embed)

    def _embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for gram in trigrams(text):
            v[fnv1a_64(gram.encode("utf-8")) % self.dim] += 1.0
        norm = np.linalg.norm(v)
        if norm > 0:
            v /= norm
        v.flags.writeable = False
        return v

    def __call__(self, text: str) -> np.ndarray:
        return self._cache(text)


DEFAULT_EMBEDDER = HashedTrigramEmbedder()


def embed_text(text: str) -> np.ndarray:
    return DEFAULT_EMBEDDER(text)


def semantic_reward(pred_text: str, ref_text: str, embedder=None) -> float:
    """Cosine similarity mapped to [0, 1]; a zero embedding counts as cosine 0."""
    embedder = embedder or DEFAULT_EMBEDDER
    a = embedder(pred_text)
    b = embedder(ref_text)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.5
    cos = float(a @ b) / (na * nb)
    return min(1.0, max(0.0, (cos + 1.0) / 2.0))


# -- matching ----------------------------------------------------------------

def match_artifacts(pred, ref) -> list[tuple[int, int]]:
    """Greedy per-kind matching by descending IoU; zero-overlap pairs never match.

    Ties go to the earlier reference start, then the earlier prediction start,
    then to pairs whose descriptions agree exactly.
    """
    cands = []
    for pi, p in enumerate(pred):
        for ri, r in enumerate(ref):
            if p.kind != r.kind:
                continue
            iou = interval_iou(p, r)
            if iou > 0:
                cands.append((-iou, r.start, p.start, p.description != r.description, ri, pi))
    cands.sort()
    used_p, used_r = set(), set()
    pairs = []
    for *_, ri, pi in cands:
        if pi in used_p or ri in used_r:
            continue
        used_p.add(pi)
        used_r.add(ri)
        pairs.append((pi, ri))
    return pairs


def _kind_rewards(pred, ref, pair_value):
    """Mean over reference artifacts of ``pair_value`` (0 when unmatched), per kind."""
    matched = {ri: pi for pi, ri in match_artifacts(pred, ref)}
    out = {}
    for kind in ARTIFACT_KINDS:
        refs = [i for i, r in enumerate(ref) if r.kind == kind]
        if not refs:
            out[kind] = 1.0 if not any(p.kind == kind for p in pred) else 0.0
            continue
        vals = [pair_value(pred[matched[i]], ref[i]) if i in matched else 0.0 for i in refs]
        out[kind] = float(sum(vals) / len(vals))
    return out


# -- reward functions --------------------------------------------------------

def accuracy_reward(pred_scores: dict, ref_scores: dict) -> dict:
    return {d: 1.0 if d in pred_scores and pred_scores[d] == ref_scores[d] else 0.0 for d in DIMENSIONS}


def total_reward_acc_sem(pred_text, ref, embedder=None) -> RewardBreakdown:
    part = parse_partial(pred_text)
    scores = accuracy_reward(part.scores, ref.scores)
    arts = _kind_rewards(
        part.artifacts, list(ref.artifacts),
        lambda p, r: semantic_reward(p.description, r.description, embedder),
    )
    total = sum(scores.values()) + sum(arts.values())
    return RewardBreakdown("acc_sem", scores, arts, None, total)


def mock_judge_labels(pred_text, ref, embedder=None) -> dict:
    part = parse_partial(pred_text)
    labels = {
        d: 1.0 - abs(part.scores[d] - ref.scores[d]) / 4.0 if d in part.scores else 0.0
        for d in DIMENSIONS
    }
    arts = _kind_rewards(
        part.artifacts, list(ref.artifacts),
        lambda p, r: interval_iou(p, r) * semantic_reward(p.description, r.description, embedder),
    )
    labels.update({f"{k}_artifacts": v for k, v in arts.items()})
    return labels


def _judge_breakdown(labels) -> RewardBreakdown:
    labels = {k: float(labels[k]) for k in JUDGE_LABELS}
    return RewardBreakdown(
        "judge",
        {d: labels[d] for d in DIMENSIONS},
        {k: labels[f"{k}_artifacts"] for k in ARTIFACT_KINDS},
        labels,
        sum(labels.values()),
    )


def unified_reward(pred_text, ref, embedder=None) -> RewardBreakdown:
    part = parse_partial(pred_text)
    full = render_reference_texts(ref)[1]
    n_ref = len(lex(full))
    comps = {
        "accuracy": 1.0 if part.scores.get("overall") == ref.scores["overall"] else 0.0,
        "relevance": semantic_reward(pred_text, full, embedder),
        "detail": min(1.0, len(lex(pred_text)) / n_ref) if n_ref else 0.0,
        "helpfulness": 1.0 if part.complete else 0.0,
    }
    return RewardBreakdown("unified", {}, {}, comps, sum(comps.values()))


# -- judge -------------------------------------------------------------------

@lru_cache(maxsize=1)
def default_prompt_template() -> str:
    return resources.files("calreason").joinpath("assets/judge_prompt.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class JudgeConfig:
    mode: str = "mock"
    endpoint_url: str | None = None
    prompt_template: str | None = None
    timeout: float = 30.0
    retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    fallback_to_mock: bool = True

    def validate(self):
        if self.mode not in ("mock", "http"):
            raise InvalidConfig(f"judge mode must be mock or http, got {self.mode!r}")
        if self.mode == "http" and not self.endpoint_url:
            raise InvalidConfig("http judge mode requires endpoint_url")
        if self.retries < 0 or self.max_in_flight < 1:
            raise InvalidConfig("retries must be >= 0 and max_in_flight >= 1")


def render_judge_prompt(pred_text, ref, template=None) -> str:
    template = template or default_prompt_template()
    ref_scores = " ".join(f"{d}={ref.scores[d]}" for d in DIMENSIONS)
    if ref.artifacts:
        ref_arts = "\n".join(f"- {a.kind} {a.start:.1f}..{a.end:.1f}: {a.description}" for a in ref.artifacts)
    else:
        ref_arts = "(none)"
    return template.format(generation=pred_text, reference_scores=ref_scores, reference_artifacts=ref_arts)


def parse_judge_response(text: str) -> dict:
    labels = {}
    for line in text.splitlines():
        name, sep, value = line.partition(":")
        name = name.strip().lower()
        if not sep or name not in JUDGE_LABELS:
            continue
        try:
            v = float(value.strip())
        except ValueError:
            raise JudgeResponseMalformed(f"non-numeric score for {name}: {value.strip()!r}") from None
        if not math.isfinite(v):
            raise JudgeResponseMalformed(f"non-finite score for {name}")
        labels[name] = min(1.0, max(0.0, v))
    missing = [k for k in JUDGE_LABELS if k not in labels]
    if missing:
        raise JudgeResponseMalformed(f"judge response missing labels: {', '.join(missing)}")
    return labels


class JudgeClient:
    """Scores generations through a judge; HTTP mode retries, then falls back to the mock."""

    def __init__(self, cfg: JudgeConfig = JudgeConfig(), embedder=None, sleep=time.sleep):
        cfg.validate()
        self.cfg = cfg
        self.embedder = embedder
        self._sleep = sleep
        self.fallbacks = 0

    def _post(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt}).encode("utf-8")
        req = urllib.request.Request(
            self.cfg.endpoint_url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        with urllib.request.urlopen(req, timeout=self.cfg.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise JudgeResponseMalformed("response body must be an object with a string 'text'")
        return payload["text"]

    def _http_labels(self, pred_text, ref) -> dict:
        prompt = render_judge_prompt(pred_text, ref, self.cfg.prompt_template)
        last = None
        for attempt in range(self.cfg.retries + 1):
            if attempt:
                self._sleep(self.cfg.backoff_base * 2 ** (attempt - 1))
            try:
                return parse_judge_response(self._post(prompt))
            except (urllib.error.URLError, OSError, json.JSONDecodeError, JudgeResponseMalformed) as e:
                last = e
                log.debug("judge attempt %d failed: %s", attempt + 1, e)
        if self.cfg.fallback_to_mock:
            self.fallbacks += 1
            log.warning("judge unavailable after %d attempts (%s); using mock scores", self.cfg.retries + 1, last)
            return mock_judge_labels(pred_text, ref, self.embedder)
        if isinstance(last, JudgeResponseMalformed):
            raise last
        raise JudgeUnavailable(f"judge failed after {self.cfg.retries + 1} attempts: {last}")

    def labels(self, pred_text, ref) -> dict:
        if self.cfg.mode == "mock":
            return mock_judge_labels(pred_text, ref, self.embedder)
        return self._http_labels(pred_text, ref)

    def score_many(self, texts, ref) -> list[dict]:
        if self.cfg.mode == "mock" or len(texts) <= 1:
            return [self.labels(t, ref) for t in texts]
        with ThreadPoolExecutor(max_workers=self.cfg.max_in_flight) as pool:
            return list(pool.map(lambda t: self.labels(t, ref), texts))


def judge_reward(pred_text, ref, cfg: JudgeConfig = JudgeConfig(), client: JudgeClient | None = None) -> RewardBreakdown:
    client = client or JudgeClient(cfg)
    return _judge_breakdown(client.labels(pred_text, ref))


class RewardEngine:
    """Scores a group of generated texts against one reference record."""

    def __init__(self, mode: str = "acc_sem", judge: JudgeConfig = JudgeConfig(), embedder=None):
        if mode not in REWARD_MODES:
            raise InvalidConfig(f"reward mode must be one of {REWARD_MODES}, got {mode!r}")
        self.mode = mode
        self.embedder = embedder
        self.judge = JudgeClient(judge, embedder) if mode == "judge" else None

    def __call__(self, texts, ref) -> list[RewardBreakdown]:
        if self.mode == "acc_sem":
            return [total_reward_acc_sem(t, ref, self.embedder) for t in texts]
        if self.mode == "unified":
            return [unified_reward(t, ref, self.embedder) for t in texts]
        return [_judge_breakdown(lab) for lab in self.judge.score_many(texts, ref)]

    def score(self, text, ref) -> RewardBreakdown:
        return self([text], ref)[0]
