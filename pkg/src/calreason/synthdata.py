"""Synthetic assessment corpus with a learnable features -> assessment map."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, SchemaError
from .grammar import (
    ARTIFACT_KINDS,
    DESCRIPTOR_PHRASES,
    DIMENSIONS,
    ArtifactSpan,
    render_summary,
)

N_FEATURES = 24
SLOT_WIDTH = 9
MAX_RECORD_ARTIFACTS = 2
TRAIN_FRACTION = 0.85
DEFAULT_NOISE_LEVEL = 0.15

# which score drives which artifact kind, in priority order
_ARTIFACT_DRIVERS = (("noise", "noise"), ("distortion", "distortion"), ("continuity", "pause"))
_BASE_DIMENSIONS = DIMENSIONS[:5]


@dataclass(frozen=True)
class AssessmentRecord:
    id: int
    features: np.ndarray
    scores: dict
    artifacts: tuple
    long_form: str

    def __eq__(self, other):
        if not isinstance(other, AssessmentRecord):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.features, other.features)
            and self.scores == other.scores
            and self.artifacts == other.artifacts
            and self.long_form == other.long_form
        )

    __hash__ = None


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    test: list
    seed: int
    n: int
    noise_level: float


def overall_from(scores) -> int:
    mean = sum(scores[d] for d in _BASE_DIMENSIONS) / 5.0
    # half-up, not banker's rounding
    return int(min(5, max(1, math.floor(mean + 0.5))))


def encode_features(scores, artifacts) -> np.ndarray:
    x = np.zeros(N_FEATURES)
    for i, d in enumerate(DIMENSIONS):
        x[i] = scores[d] / 5.0
    for slot, span in enumerate(artifacts):
        off = len(DIMENSIONS) + slot * SLOT_WIDTH
        x[off + ARTIFACT_KINDS.index(span.kind)] = 1.0
        x[off + 3 + DESCRIPTOR_PHRASES[span.kind].index(span.description)] = 1.0
        x[off + 7] = span.start / 10.0
        x[off + 8] = span.end / 10.0
    return x


def _make_record(rid, seed, noise_level):
    rng = np.random.default_rng([seed, rid])
    scores = {d: int(rng.integers(1, 6)) for d in _BASE_DIMENSIONS}
    scores["overall"] = overall_from(scores)
    artifacts = []
    for dim, kind in _ARTIFACT_DRIVERS:
        p = (5 - scores[dim]) / 4.0
        # one draw per driver keeps the stream layout fixed
        u = rng.random()
        if u < p and len(artifacts) < MAX_RECORD_ARTIFACTS:
            phrases = DESCRIPTOR_PHRASES[kind]
            desc = phrases[int(rng.integers(len(phrases)))]
            start = 0.5 * int(rng.integers(0, 17))
            length = 0.5 * int(rng.integers(1, 5))
            artifacts.append(ArtifactSpan(kind, start, start + length, desc))
    # slots follow the order the artifacts appear in the text
    artifacts = tuple(sorted(artifacts, key=lambda s: (s.start, s.end, ARTIFACT_KINDS.index(s.kind))))
    features = encode_features(scores, artifacts)
    if noise_level > 0:
        features = features + rng.normal(0.0, noise_level, size=N_FEATURES)
    return AssessmentRecord(rid, features, scores, artifacts, render_summary(scores, artifacts))


def validate_record(r: AssessmentRecord):
    if r.features.shape != (N_FEATURES,) or not np.all(np.isfinite(r.features)):
        raise SchemaError(f"record {r.id}: features must be {N_FEATURES} finite values")
    if set(r.scores) != set(DIMENSIONS):
        raise SchemaError(f"record {r.id}: scores must cover {DIMENSIONS}")
    for d, s in r.scores.items():
        if isinstance(s, bool) or not isinstance(s, int) or not 1 <= s <= 5:
            raise SchemaError(f"record {r.id}: score {d}={s!r} outside [1, 5]")
    if r.scores["overall"] != overall_from(r.scores):
        raise SchemaError(f"record {r.id}: overall is not the rounded mean of the other scores")
    if len(r.artifacts) > MAX_RECORD_ARTIFACTS:
        raise SchemaError(f"record {r.id}: more than {MAX_RECORD_ARTIFACTS} artifacts")
    for span in r.artifacts:
        try:
            span.validate()
        except ValueError as e:
            raise SchemaError(f"record {r.id}: {e}") from None
    if r.long_form != render_summary(r.scores, r.artifacts):
        raise SchemaError(f"record {r.id}: long_form does not match its scores/artifacts")


def generate_dataset(n: int, seed: int, noise_level: float = DEFAULT_NOISE_LEVEL) -> DatasetSplit:
    if n < 20:
        raise InvalidArgument(f"n must be >= 20, got {n}")
    if not noise_level >= 0:
        raise InvalidArgument(f"noise_level must be >= 0, got {noise_level}")
    records = [_make_record(i, seed, noise_level) for i in range(n)]
    for r in records:
        validate_record(r)
    n_train = int(math.floor(TRAIN_FRACTION * n + 0.5))
    perm = np.random.default_rng([seed, n, 0x5EED]).permutation(n)
    train = [records[i] for i in sorted(perm[:n_train])]
    test = [records[i] for i in sorted(perm[n_train:])]
    return DatasetSplit(train, test, seed, n, float(noise_level))


# -- persistence ---------------------------------------------------------------

def record_to_json(r: AssessmentRecord) -> dict:
    return {
        "id": r.id,
        "features": [float(x) for x in r.features],
        "scores": {d: r.scores[d] for d in DIMENSIONS},
        "artifacts": [
            {"kind": s.kind, "start": s.start, "end": s.end, "description": s.description}
            for s in r.artifacts
        ],
        "long_form": r.long_form,
    }


def record_from_json(obj, line_no=None) -> AssessmentRecord:
    rid = obj.get("id") if isinstance(obj, dict) else None
    try:
        artifacts = tuple(
            ArtifactSpan(a["kind"], float(a["start"]), float(a["end"]), a["description"])
            for a in obj["artifacts"]
        )
        r = AssessmentRecord(
            int(obj["id"]),
            np.asarray(obj["features"], dtype=np.float64),
            {d: obj["scores"][d] for d in obj["scores"]},
            artifacts,
            obj["long_form"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"record {rid}: malformed field ({e})", line_no) from None
    try:
        validate_record(r)
    except SchemaError as e:
        raise SchemaError(str(e), line_no) from None
    return r


def write_records(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r)) + "\n")


def read_records(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON ({e.msg})", line_no) from None
            records.append(record_from_json(obj, line_no))
    if not records:
        raise SchemaError(f"{path}: no records")
    return records


def write_dataset(path, split: DatasetSplit):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_records(path / "train.jsonl", split.train)
    write_records(path / "test.jsonl", split.test)
    meta = {"n": split.n, "seed": split.seed, "noise_level": split.noise_level}
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def read_dataset(path) -> DatasetSplit:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"meta.json: invalid JSON ({e.msg})") from None
    train = read_records(path / "train.jsonl")
    test = read_records(path / "test.jsonl")
    ids = {r.id for r in train}
    if ids & {r.id for r in test}:
        raise SchemaError("train and test ids overlap")
    return DatasetSplit(train, test, int(meta["seed"]), int(meta["n"]), float(meta["noise_level"]))
