import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from assg.corpus import FeatureSequence, Segment, VideoRecord
from assg.evaluator import Detection, EvaluationError, average_precision, evaluate

from .oracles import ap_oracle

# float summation order differs between the two AP routes
AP_TOL = 1e-12


def video(vid, gts, n=40):
    fs = FeatureSequence(np.zeros((n, 2)))
    return VideoRecord(vid, {"rgb": fs, "flow": fs}, tuple(sorted({g.cls for g in gts})), list(gts), "test")


def test_ap_hand_cases():
    assert average_precision([("v", 3, 7, 0.9)], [("v", 3, 7)], 0.5) == 1.0
    assert average_precision([("v", 20, 25, 0.9), ("v", 3, 7, 0.8)], [("v", 3, 7)], 0.5) == 0.5
    assert average_precision([], [("v", 3, 7)], 0.5) == 0.0


def test_ap_requires_ground_truth():
    with pytest.raises(EvaluationError):
        average_precision([("v", 0, 1, 1.0)], [], 0.5)


def test_ap_other_video_never_matches():
    assert average_precision([("w", 3, 7, 0.9)], [("v", 3, 7)], 0.1) == 0.0


def test_ap_each_ground_truth_matched_once():
    preds = [("v", 3, 7, 0.9), ("v", 3, 7, 0.8)]
    assert average_precision(preds, [("v", 3, 7)], 0.5) == 1.0
    assert average_precision(preds, [("v", 3, 7), ("v", 30, 35)], 0.5) == 0.5


@st.composite
def ap_case(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    vids = ["a", "b"]
    n_gt = draw(st.integers(1, 4))
    gts = []
    for _ in range(n_gt):
        s = int(rng.integers(0, 20))
        gts.append((vids[rng.integers(0, 2)], s, s + int(rng.integers(0, 6))))
    preds = []
    for _ in range(draw(st.integers(0, 10))):
        if gts and rng.uniform() < 0.6:
            v, s, e = gts[rng.integers(0, len(gts))]
            s, e = max(0, s + int(rng.integers(-2, 3))), e + int(rng.integers(-2, 3))
            e = max(s, e)
        else:
            v, s = vids[rng.integers(0, 2)], int(rng.integers(0, 24))
            e = s + int(rng.integers(0, 6))
        preds.append((v, s, e, float(np.round(rng.uniform(), draw(st.sampled_from([1, 3]))))))
    return preds, gts


@settings(max_examples=200, deadline=None)
@given(ap_case(), st.sampled_from([0.1, 0.3, 0.5, 0.7]))
def test_ap_matches_oracle(case, thr):
    preds, gts = case
    assert abs(average_precision(preds, gts, thr) - ap_oracle(preds, gts, thr)) < AP_TOL


@settings(max_examples=100, deadline=None)
@given(ap_case())
def test_ap_invariant_to_monotone_rescale(case):
    preds, gts = case
    warped = [(v, s, e, np.exp(3 * x) + 7) for v, s, e, x in preds]
    for thr in (0.1, 0.5):
        assert average_precision(preds, gts, thr) == average_precision(warped, gts, thr)


@settings(max_examples=200, deadline=None)
@given(ap_case())
def test_evaluate_matches_oracle_and_bounds(case):
    preds, gts = case
    videos = [video("a", [Segment(1, s, e) for v, s, e in gts if v == "a"]),
              video("b", [Segment(1, s, e) for v, s, e in gts if v == "b"])]
    dets = [Detection(v, 1, s, e, x) for v, s, e, x in preds]
    report = evaluate(dets, videos)
    for t in report.thresholds:
        assert abs(report.map[t] - ap_oracle(preds, gts, t)) < AP_TOL
        assert 0 <= report.map[t] <= 1
    assert abs(report.ave_map - np.mean([report.map[t] for t in report.thresholds])) < 1e-15


def test_oracle_detections_score_one():
    videos = [video("a", [Segment(1, 2, 5), Segment(2, 10, 14)]), video("b", [Segment(2, 0, 3)])]
    dets = [Detection(v.id, g.cls, g.start, g.end, 1.0) for v in videos for g in v.ground_truth]
    report = evaluate(dets, videos)
    assert all(m == 1.0 for m in report.map.values()) and report.ave_map == 1.0


def test_empty_detections_score_zero():
    report = evaluate([], [video("a", [Segment(1, 2, 5)])])
    assert report.ave_map == 0.0


def test_two_video_fixture():
    # class 1: one hit in a, one false alarm in b ranked first, one GT in b never found
    videos = [video("a", [Segment(1, 10, 19)]), video("b", [Segment(1, 0, 9)])]
    dets = [Detection("b", 1, 25, 30, 0.9), Detection("a", 1, 10, 19, 0.8)]
    report = evaluate(dets, videos, [0.5])
    # precision 1/2 at the single hit, recall step 1/2
    assert abs(report.map[0.5] - 0.25) < 1e-15
    assert abs(report.map[0.5] - ap_oracle([("b", 25, 30, 0.9), ("a", 10, 19, 0.8)],
                                           [("a", 10, 19), ("b", 0, 9)], 0.5)) < AP_TOL


def test_classes_without_ground_truth_excluded():
    videos = [video("a", [Segment(1, 2, 5)])]
    dets = [Detection("a", 1, 2, 5, 0.9), Detection("a", 3, 10, 12, 0.99)]
    report = evaluate(dets, videos)
    assert list(report.ap[0.1]) == [1] and report.ave_map == 1.0


def test_unknown_video_rejected():
    with pytest.raises(EvaluationError, match="zz"):
        evaluate([Detection("zz", 1, 0, 1, 0.5)], [video("a", [Segment(1, 2, 5)])])


@settings(max_examples=300, deadline=None)
@given(ap_case())
def test_ap_non_increasing_in_threshold(case):
    preds, gts = case
    aps = [average_precision(preds, gts, t) for t in (0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9)]
    assert all(b <= a + 1e-12 for a, b in zip(aps, aps[1:]))


def test_report_serialization():
    videos = [video("a", [Segment(1, 2, 5)])]
    report = evaluate([Detection("a", 1, 2, 5, 0.9)], videos, [0.1, 0.5])
    doc = json.loads(report.dumps())
    assert doc["ave_map"] == 1.0 and doc["map"] == {"0.1": 1.0, "0.5": 1.0}
    lines = report.to_csv().splitlines()
    assert lines[0] == "threshold,class,ap" and "threshold,map" in lines and lines[-2] == "ave_map"


def test_detection_json_round_trip():
    d = Detection("v", 2, 3, 9, 0.25)
    assert Detection.from_json(json.loads(json.dumps(d.to_json()))) == d
