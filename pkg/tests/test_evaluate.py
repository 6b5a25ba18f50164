import csv
import json
from dataclasses import replace

import pytest

from calreason.errors import EmptyTestSet
from calreason.evaluate import (
    MetricsReport,
    compare_reports,
    evaluate_checkpoint,
    evaluate_texts,
    generate_texts,
    read_report,
    write_report,
)
from calreason.grammar import ARTIFACT_KINDS, DIMENSIONS, render_reference_texts
from calreason.policy import init_params
from calreason.synthdata import generate_dataset


def oracle_texts(records):
    return [render_reference_texts(r)[1] for r in records]


def test_oracle_generator_hits_ceiling(small_split):
    recs = small_split.train
    rep = evaluate_texts(oracle_texts(recs), recs)
    assert all(rep.pcc[d] == pytest.approx(1.0) for d in DIMENSIONS)
    assert all(rep.f1[k] == 1.0 for k in ARTIFACT_KINDS)
    assert rep.mean_iou == 1.0 and rep.rouge_l == 1.0
    assert all(rep.sim[k] == pytest.approx(1.0) for k in ARTIFACT_KINDS)
    assert rep.n_parse_failures == 0 and rep.n_records == len(recs)


def test_constant_generator_leaves_pcc_undefined(small_split):
    recs = small_split.test
    text = oracle_texts(recs[:1])[0]
    rep = evaluate_texts([text] * len(recs), recs)
    assert all(rep.pcc[d] is None for d in DIMENSIONS)
    assert rep.avg_pcc is None


def test_null_model_is_in_band():
    test = generate_dataset(2000, 1).test
    assert len(test) == 300
    rep = evaluate_checkpoint(init_params(0, 0.0), test)
    # an unparseable generator leaves every correlation undefined, which counts as in band
    assert rep.avg_pcc is None or -0.2 <= rep.avg_pcc <= 0.2
    sampled = evaluate_checkpoint(init_params(0, 0.0), test, decoding="sampled", seed=1)
    assert sampled.avg_pcc is None or -0.2 <= sampled.avg_pcc <= 0.2


def test_parse_failures_are_counted(small_split):
    recs = small_split.test[:5]
    texts = oracle_texts(recs)
    texts[2] = "scores: naturalness=3"
    rep = evaluate_texts(texts, recs)
    assert rep.n_parse_failures == 1


def test_empty_test_set():
    with pytest.raises(EmptyTestSet):
        evaluate_checkpoint(init_params(0, 0.0), [])
    with pytest.raises(EmptyTestSet):
        evaluate_texts([], [])


def test_generation_modes(small_split, random_params):
    recs = small_split.test[:3]
    assert generate_texts(random_params, recs) == generate_texts(random_params, recs)
    assert generate_texts(random_params, recs, "sampled", 4) == generate_texts(random_params, recs, "sampled", 4)
    with pytest.raises(ValueError):
        generate_texts(random_params, recs, "beam")


def test_report_roundtrip(tmp_path, small_split):
    recs = small_split.test
    texts = oracle_texts(recs)
    texts[::3] = [""] * len(texts[::3])
    rep = evaluate_texts(texts, recs)
    path = tmp_path / "r.json"
    write_report(path, rep)
    assert read_report(path) == rep
    doc = json.loads(path.read_text())
    assert doc["pcc"]["avg"] == rep.avg_pcc and doc["iou"]["mean"] == rep.mean_iou
    with open(tmp_path / "r.csv") as fh:
        header, row = list(csv.reader(fh))
    assert header[:7] == [f"pcc_{d}" for d in DIMENSIONS] + ["pcc_avg"]
    assert len(header) == len(row)


def test_compare_self_is_tie(small_split):
    rep = evaluate_texts(oracle_texts(small_split.test), small_split.test)
    cmp = compare_reports(rep, rep)
    assert cmp["dominant"] == "tie"
    assert all(r["delta"] in (0, None) for r in cmp["metrics"].values())


def hand_report(pcc, iou, rouge):
    return MetricsReport(
        pcc={d: pcc for d in DIMENSIONS}, f1={k: 0.5 for k in ARTIFACT_KINDS},
        iou={k: iou for k in ARTIFACT_KINDS}, sim={k: 0.5 for k in ARTIFACT_KINDS},
        rouge_l=rouge, n_records=10, n_parse_failures=0,
    )


def test_compare_signed_deltas():
    a, b = hand_report(0.5, 0.25, 0.5), hand_report(0.75, 0.5, 0.5)
    cmp = compare_reports(a, b)
    assert cmp["metrics"]["pcc_avg"]["delta"] == 0.25
    assert cmp["metrics"]["iou_mean"]["delta"] == 0.25
    assert cmp["metrics"]["rouge_l"]["delta"] == 0.0
    assert cmp["dominant"] == "b"
    assert compare_reports(b, a)["dominant"] == "a"
    assert compare_reports(a, replace(b, rouge_l=0.25))["dominant"] == "mixed"
