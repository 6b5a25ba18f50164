"""Test-set evaluation: PCC per dimension, artifact F1 / IoU / similarity, ROUGE-L."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyTestSet
from .grammar import ARTIFACT_KINDS, DIMENSIONS, detokenize, parse_partial
from .metrics import detection_f1, interval_iou, pcc, rouge_l
from .policy import greedy_decode, sample_sequence
from .rewards import match_artifacts, semantic_reward

SIM_METHOD = "hashed-trigram-cosine"


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class MetricsReport:
    pcc: dict = field(default_factory=dict)   # dimension -> value or None
    f1: dict = field(default_factory=dict)    # kind -> value
    iou: dict = field(default_factory=dict)   # kind -> mean IoU over matched pairs, or None
    sim: dict = field(default_factory=dict)   # kind -> mean description similarity, or None
    rouge_l: float = 0.0
    n_records: int = 0
    n_parse_failures: int = 0

    @property
    def avg_pcc(self):
        return _mean(self.pcc[d] for d in DIMENSIONS)

    @property
    def mean_iou(self):
        return _mean(self.iou[k] for k in ARTIFACT_KINDS)

    def to_json(self) -> dict:
        return {
            "pcc": {**{d: self.pcc[d] for d in DIMENSIONS}, "avg": self.avg_pcc},
            "f1": {k: self.f1[k] for k in ARTIFACT_KINDS},
            "iou": {**{k: self.iou[k] for k in ARTIFACT_KINDS}, "mean": self.mean_iou},
            "sim": {k: self.sim[k] for k in ARTIFACT_KINDS},
            "sim_method": SIM_METHOD,
            "rouge_l": self.rouge_l,
            "n_records": self.n_records,
            "n_parse_failures": self.n_parse_failures,
        }

    @classmethod
    def from_json(cls, doc) -> "MetricsReport":
        return cls(
            pcc={d: doc["pcc"][d] for d in DIMENSIONS},
            f1={k: doc["f1"][k] for k in ARTIFACT_KINDS},
            iou={k: doc["iou"][k] for k in ARTIFACT_KINDS},
            sim={k: doc["sim"][k] for k in ARTIFACT_KINDS},
            rouge_l=doc["rouge_l"],
            n_records=doc["n_records"],
            n_parse_failures=doc["n_parse_failures"],
        )

    def flat(self) -> dict:
        """Flat metric columns: correlations first, then artifact and text metrics."""
        row = {f"pcc_{d}": self.pcc[d] for d in DIMENSIONS}
        row["pcc_avg"] = self.avg_pcc
        for k in ARTIFACT_KINDS:
            row[f"f1_{k}"] = self.f1[k]
            row[f"sim_{k}"] = self.sim[k]
            row[f"iou_{k}"] = self.iou[k]
        row["iou_mean"] = self.mean_iou
        row["rouge_l"] = self.rouge_l
        row["n_records"] = self.n_records
        row["n_parse_failures"] = self.n_parse_failures
        return row


def evaluate_texts(texts, records, embedder=None) -> MetricsReport:
    """Score generated assessment texts against their reference records."""
    records = list(records)
    if not records:
        raise EmptyTestSet("no test records")
    if len(texts) != len(records):
        raise ValueError(f"{len(texts)} generations for {len(records)} records")
    pairs = {d: ([], []) for d in DIMENSIONS}
    pred_arts, ref_arts = [], []
    ious = {k: [] for k in ARTIFACT_KINDS}
    sims = {k: [] for k in ARTIFACT_KINDS}
    rouge = []
    failures = 0
    for text, rec in zip(texts, records):
        part = parse_partial(text)
        failures += not part.complete
        for d, s in part.scores.items():
            pairs[d][0].append(s)
            pairs[d][1].append(rec.scores[d])
        pred_arts.append(part.artifacts)
        ref_arts.append(list(rec.artifacts))
        for pi, ri in match_artifacts(part.artifacts, rec.artifacts):
            p, r = part.artifacts[pi], rec.artifacts[ri]
            ious[r.kind].append(interval_iou(p, r))
            sims[r.kind].append(semantic_reward(p.description, r.description, embedder))
        rouge.append(rouge_l(part.summary or "", rec.long_form))
    return MetricsReport(
        pcc={d: pcc(*pairs[d]) for d in DIMENSIONS},
        f1={k: detection_f1(pred_arts, ref_arts, k)[2] for k in ARTIFACT_KINDS},
        iou={k: float(np.mean(ious[k])) if ious[k] else None for k in ARTIFACT_KINDS},
        sim={k: float(np.mean(sims[k])) if sims[k] else None for k in ARTIFACT_KINDS},
        rouge_l=float(np.mean(rouge)),
        n_records=len(records),
        n_parse_failures=failures,
    )


def generate_texts(params, records, decoding: str = "greedy", seed: int = 0) -> list[str]:
    if decoding == "greedy":
        return [detokenize(greedy_decode(params, r.features).tokens) for r in records]
    if decoding == "sampled":
        return [
            detokenize(sample_sequence(params, r.features, 1.0, np.random.default_rng([seed, r.id])).tokens)
            for r in records
        ]
    raise ValueError(f"decoding must be greedy or sampled, got {decoding!r}")


def evaluate_checkpoint(params, test_set, decoding: str = "greedy", seed: int = 0, embedder=None) -> MetricsReport:
    records = list(test_set)
    if not records:
        raise EmptyTestSet("no test records")
    return evaluate_texts(generate_texts(params, records, decoding, seed), records, embedder)


# -- report files ------------------------------------------------------------

def _fmt(v):
    return "" if v is None else repr(v)


def write_report(path, report: MetricsReport):
    """Writes ``<path>`` as JSON and a sibling ``.csv`` with one flat row."""
    path = Path(path)
    path.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    row = report.flat()
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(row))
        w.writerow([_fmt(v) for v in row.values()])


def read_report(path) -> MetricsReport:
    return MetricsReport.from_json(json.loads(Path(path).read_text()))


def compare_reports(a: MetricsReport, b: MetricsReport) -> dict:
    """Per-metric signed deltas (b - a) and which side dominates.

    ``dominant`` is "a" or "b" when one side is >= on every defined metric and
    strictly better on at least one, "tie" when all deltas are zero, else "mixed".
    """
    fa, fb = a.flat(), b.flat()
    rows = {}
    for key in fa:
        if key.startswith("n_"):
            continue
        va, vb = fa[key], fb[key]
        delta = None if va is None or vb is None else vb - va
        rows[key] = {"a": va, "b": vb, "delta": delta}
    deltas = [r["delta"] for r in rows.values() if r["delta"] is not None and not math.isnan(r["delta"])]
    if all(d == 0 for d in deltas):
        dominant = "tie"
    elif all(d >= 0 for d in deltas):
        dominant = "b"
    elif all(d <= 0 for d in deltas):
        dominant = "a"
    else:
        dominant = "mixed"
    return {"metrics": rows, "dominant": dominant}
