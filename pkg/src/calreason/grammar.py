"""Canonical assessment text format, token vocabulary, parser and serializer.

The format is line oriented::

    scores: naturalness=4 noise=3 distortion=5 effort=4 continuity=4 overall=4
    artifacts:
    - noise @ 1.5..3.0 : hissing background static
    summary: speech is good with noise

Scores are integers in [1, 5]; artifact times live on a 0.5 s grid over a
10 s recording.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

from .errors import (
    InvariantViolation,
    OutOfRange,
    ParseError,
    SequenceTooLong,
    UnknownTokenId,
)

DIMENSIONS = ("naturalness", "noise", "distortion", "effort", "continuity", "overall")
ARTIFACT_KINDS = ("noise", "distortion", "pause")

DESCRIPTOR_PHRASES = {
    "noise": (
        "hissing background static",
        "humming electrical buzz",
        "crowd babble chatter",
        "wind rumble roar",
    ),
    "distortion": (
        "harsh clipping peaks",
        "metallic robotic timbre",
        "muffled dull lowpass",
        "choppy dropout glitches",
    ),
    "pause": ("long unnatural pause", "abrupt silent gap"),
}

# indexed by overall score - 1
QUALITY_WORDS = ("poor", "rough", "acceptable", "good", "natural and clean")

RECORDING_SECONDS = 10.0
TIME_STEP = 0.5
N_TIME_BUCKETS = 21
MAX_ARTIFACTS = 4
MAX_SEQ_LEN = 64
VOCAB_SIZE = 128

PAD, BOS, EOS, UNK = 0, 1, 2, 3
NEWLINE = "\n"

_STRUCTURAL = ("scores:", "artifacts:", "summary:", NEWLINE, "-", "@", "..", ":", "=")
_DIGITS = ("1", "2", "3", "4", "5")
_SUMMARY_WORDS = (
    "speech", "is", "poor", "rough", "acceptable", "good", "natural", "and",
    "clean", "with", "no", "artifacts",
)
_EXTRA_WORDS = ("mostly", "clear", "slight", "mild", "severe", "heavy", "minor")
# lexemes rendered without surrounding spaces by detokenize
_GLUE = frozenset({"=", "..", NEWLINE})


def _lexicon():
    words = []
    for phrases in DESCRIPTOR_PHRASES.values():
        for phrase in phrases:
            for w in phrase.split():
                if w not in words and w not in ARTIFACT_KINDS:
                    words.append(w)
    for w in _SUMMARY_WORDS + _EXTRA_WORDS:
        if w not in words:
            words.append(w)
    return tuple(words)


LEXICON = _lexicon()
assert len(LEXICON) == 48


def bucket_name(index: int) -> str:
    return f"t{index:02d}"


def bucket_lexeme(index: int) -> str:
    return f"{index * TIME_STEP:.1f}"


@dataclass(frozen=True)
class TokenVocabulary:
    id_to_lexeme: tuple
    lexeme_to_id: dict = field(compare=False, repr=False)

    def __len__(self):
        return len(self.id_to_lexeme)

    def lookup(self, lexeme: str) -> int:
        """Id for a lexeme or time-bucket name (``t03``); UNK when absent."""
        tid = self.lexeme_to_id.get(lexeme)
        if tid is None:
            return UNK
        return tid

    def lexeme(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.id_to_lexeme):
            raise UnknownTokenId(f"token id {token_id} outside [0, {len(self.id_to_lexeme)})")
        return self.id_to_lexeme[token_id]

    def __contains__(self, lexeme):
        return lexeme in self.lexeme_to_id


@lru_cache(maxsize=1)
def build_vocabulary() -> TokenVocabulary:
    lexemes = ["<pad>", "<bos>", "<eos>", "<unk>"]
    lexemes.extend(_STRUCTURAL)
    for group in (DIMENSIONS, _DIGITS, ARTIFACT_KINDS):
        lexemes.extend(w for w in group if w not in lexemes)
    lexemes.extend(bucket_lexeme(k) for k in range(N_TIME_BUCKETS))
    lexemes.extend(LEXICON)
    assert len(set(lexemes)) == len(lexemes)
    k = 0
    while len(lexemes) < VOCAB_SIZE:
        lexemes.append(f"<unused{k}>")
        k += 1
    table = {lex: i for i, lex in enumerate(lexemes)}
    for b in range(N_TIME_BUCKETS):
        table[bucket_name(b)] = table[bucket_lexeme(b)]
    return TokenVocabulary(tuple(lexemes), table)


# -- time grid ---------------------------------------------------------------

def quantize_time(t: float) -> str:
    """Nearest 0.5 s bucket name; ties round up."""
    if not (0.0 <= t <= RECORDING_SECONDS):
        raise OutOfRange(f"time {t!r} outside [0, {RECORDING_SECONDS}]")
    return bucket_name(int(math.floor(t / TIME_STEP + 0.5)))


def dequantize_time(bucket: str) -> float:
    m = re.fullmatch(r"t(\d\d)", bucket)
    if m is None or int(m.group(1)) >= N_TIME_BUCKETS:
        raise OutOfRange(f"not a time bucket: {bucket!r}")
    return int(m.group(1)) * TIME_STEP


def snap_time(t: float) -> float:
    return dequantize_time(quantize_time(t))


# -- tokens ------------------------------------------------------------------

_KV = re.compile(r"([^=\s]+)=(\S*)")
_SPAN = re.compile(r"(\S+?)\.\.(\S+)")


def _lex_chunk(chunk, vocab):
    if chunk in vocab:
        return [chunk]
    m = _KV.fullmatch(chunk)
    if m:
        out = [m.group(1), "="]
        if m.group(2):
            out.append(m.group(2))
        return out
    m = _SPAN.fullmatch(chunk)
    if m:
        return [m.group(1), "..", m.group(2)]
    return [chunk]


def lex(text: str) -> list[str]:
    """Split text into lexemes; newlines become their own lexeme."""
    vocab = build_vocabulary()
    out = []
    for i, line in enumerate(text.split(NEWLINE)):
        if i:
            out.append(NEWLINE)
        for chunk in line.split():
            out.extend(_lex_chunk(chunk, vocab))
    return out


def tokenize(text: str) -> list[int]:
    vocab = build_vocabulary()
    ids = [BOS] + [vocab.lookup(x) for x in lex(text)] + [EOS]
    if len(ids) > MAX_SEQ_LEN:
        raise SequenceTooLong(f"{len(ids)} tokens > {MAX_SEQ_LEN}")
    return ids


def detokenize(seq) -> str:
    vocab = build_vocabulary()
    parts = []
    glue = True
    for tid in seq:
        tid = int(tid)
        lexeme = vocab.lexeme(tid)
        if tid in (PAD, BOS, EOS):
            continue
        if lexeme in _GLUE:
            parts.append(lexeme)
            glue = True
        else:
            if not glue:
                parts.append(" ")
            parts.append(lexeme)
            glue = False
    return "".join(parts)


# -- structured assessments --------------------------------------------------

def _span_key(span):
    return (span.start, span.end, ARTIFACT_KINDS.index(span.kind) if span.kind in ARTIFACT_KINDS else 99,
            span.description)


@dataclass(frozen=True)
class ArtifactSpan:
    kind: str
    start: float
    end: float
    description: str

    def validate(self):
        if self.kind not in ARTIFACT_KINDS:
            raise InvariantViolation(f"unknown artifact kind {self.kind!r}")
        for t in (self.start, self.end):
            if not (0.0 <= t <= RECORDING_SECONDS) or snap_time(t) != t:
                raise InvariantViolation(f"time {t!r} is not on the 0.5 s grid in [0, 10]")
        if not self.start < self.end:
            raise InvariantViolation(f"empty interval [{self.start}, {self.end}]")
        d = self.description
        if not d or d != " ".join(d.split()):
            raise InvariantViolation(f"description {d!r} must be non-empty single-spaced text")


@dataclass(frozen=True)
class StructuredAssessment:
    scores: dict
    artifacts: tuple = ()
    summary: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scores", dict(self.scores))
        object.__setattr__(self, "artifacts", tuple(sorted(self.artifacts, key=_span_key)))

    def validate(self):
        if set(self.scores) != set(DIMENSIONS):
            raise InvariantViolation(f"scores must cover exactly {DIMENSIONS}, got {sorted(self.scores)}")
        for dim, s in self.scores.items():
            if isinstance(s, bool) or not isinstance(s, int) or not 1 <= s <= 5:
                raise InvariantViolation(f"score {dim}={s!r} outside [1, 5]")
        if len(self.artifacts) > MAX_ARTIFACTS:
            raise InvariantViolation(f"{len(self.artifacts)} artifacts > {MAX_ARTIFACTS}")
        for span in self.artifacts:
            span.validate()
        if NEWLINE in self.summary or self.summary != " ".join(self.summary.split()):
            raise InvariantViolation("summary must be single-spaced text on one line")


@dataclass
class PartialAssessment:
    """Whatever a lenient parse could recover from arbitrary text."""

    scores: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    summary: str | None = None
    sections: set = field(default_factory=set)
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def complete(self):
        return not self.errors

    def to_assessment(self):
        return StructuredAssessment(dict(self.scores), tuple(self.artifacts), self.summary or "")


_SECTION_ORDER = ("scores", "artifacts", "summary")
_ENTRY = re.compile(r"([^=\s]+)=(\S*)")
_ARTIFACT = re.compile(r"-\s+(\S+)\s+@\s+(\S+?)\.\.(\S+)\s+:\s+(.*)")
_INT = re.compile(r"[0-9]+")


def _parse_time(raw):
    t = float(raw)
    if not math.isfinite(t) or not 0.0 <= t <= RECORDING_SECONDS:
        raise OutOfRange(raw)
    return snap_time(t)


def parse_partial(text) -> PartialAssessment:
    """Lenient parse that never raises; see :func:`parse_assessment`."""
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    elif not isinstance(text, str):
        text = str(text)
    out = PartialAssessment()

    def err(line_no, line, msg):
        out.errors.append((line_no, line, msg))

    last_section = -1
    for line_no, raw in enumerate(text.split(NEWLINE), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("scores:"):
            section = 0
        elif line.startswith("artifacts:"):
            section = 1
        elif line.startswith("summary:"):
            section = 2
        elif line.startswith("-"):
            section = None
        else:
            err(line_no, raw, "unexpected line")
            continue

        if section is not None:
            name = _SECTION_ORDER[section]
            if name in out.sections:
                err(line_no, raw, f"duplicate {name} section")
            elif section < last_section:
                err(line_no, raw, f"{name} section out of order")
            out.sections.add(name)
            last_section = max(last_section, section)

        if section == 0:
            for entry in line[len("scores:"):].split():
                m = _ENTRY.fullmatch(entry)
                if m is None:
                    err(line_no, raw, f"malformed score entry {entry!r}")
                    continue
                dim, value = m.groups()
                if dim not in DIMENSIONS:
                    err(line_no, raw, f"unknown dimension {dim!r}")
                    continue
                if not _INT.fullmatch(value) or not 1 <= int(value) <= 5:
                    out.scores.pop(dim, None)
                    err(line_no, raw, f"{dim} value {value!r} out of range [1, 5]")
                    continue
                if dim in out.scores:
                    out.warnings.append(f"duplicate dimension {dim}; last occurrence wins")
                out.scores[dim] = int(value)
        elif section == 1:
            if line[len("artifacts:"):].strip():
                err(line_no, raw, "trailing text after artifacts:")
        elif section == 2:
            out.summary = " ".join(line[len("summary:"):].split())
        else:
            if "artifacts" not in out.sections or "summary" in out.sections:
                err(line_no, raw, "artifact line outside the artifacts section")
                continue
            m = _ARTIFACT.fullmatch(line)
            if m is None:
                err(line_no, raw, "malformed artifact line")
                continue
            kind, a, b, desc = m.groups()
            desc = " ".join(desc.split())
            if kind not in ARTIFACT_KINDS:
                err(line_no, raw, f"unknown artifact kind {kind!r}")
                continue
            try:
                start, end = _parse_time(a), _parse_time(b)
            except ValueError:
                err(line_no, raw, "artifact time outside [0, 10]")
                continue
            if not start < end:
                err(line_no, raw, "artifact interval is empty")
                continue
            if not desc:
                err(line_no, raw, "artifact description is empty")
                continue
            if len(out.artifacts) >= MAX_ARTIFACTS:
                err(line_no, raw, f"more than {MAX_ARTIFACTS} artifacts")
                continue
            out.artifacts.append(ArtifactSpan(kind, start, end, desc))

    out.artifacts.sort(key=_span_key)
    missing = [d for d in DIMENSIONS if d not in out.scores]
    if missing and "scores" in out.sections:
        err(None, None, f"missing dimensions: {' '.join(missing)}")
    for name in _SECTION_ORDER:
        if name not in out.sections:
            err(None, None, f"missing {name} section")
    out.errors.sort(key=lambda e: (e[0] is None, e[0] or 0))
    return out


def parse_assessment(text) -> StructuredAssessment:
    """Parse canonical assessment text.

    Raises ParseError on the first problem; the error carries the partial
    parse (scores that did parse, well-formed artifact lines, summary).
    """
    partial = parse_partial(text)
    if partial.errors:
        line_no, line, msg = partial.errors[0]
        raise ParseError(msg, line_no, line, partial)
    for w in partial.warnings:
        warnings.warn(w, stacklevel=2)
    return partial.to_assessment()


def _fmt_time(t):
    return f"{t:.1f}"


def serialize_assessment(a: StructuredAssessment) -> str:
    a.validate()
    lines = ["scores: " + " ".join(f"{d}={a.scores[d]}" for d in DIMENSIONS), "artifacts:"]
    for span in a.artifacts:
        lines.append(f"- {span.kind} @ {_fmt_time(span.start)}..{_fmt_time(span.end)} : {span.description}")
    lines.append(f"summary: {a.summary}" if a.summary else "summary:")
    return NEWLINE.join(lines)


def render_summary(scores, artifacts) -> str:
    quality = QUALITY_WORDS[scores["overall"] - 1]
    kinds = [k for k in ARTIFACT_KINDS if any(s.kind == k for s in artifacts)]
    clause = " and ".join(kinds) if kinds else "no artifacts"
    return f"speech is {quality} with {clause}"


def reference_assessment(record) -> StructuredAssessment:
    return StructuredAssessment(record.scores, tuple(record.artifacts),
                                render_summary(record.scores, record.artifacts))


def scores_line(scores) -> str:
    return "scores: " + " ".join(f"{d}={scores[d]}" for d in DIMENSIONS)


def render_reference_texts(record) -> tuple[str, str]:
    """(calibration target, full target) for anything with ``scores`` and ``artifacts``."""
    return scores_line(record.scores), serialize_assessment(reference_assessment(record))
