import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from assg.detector import (
    DetectConfig, Proposal, detect_video, fuse_heatmaps, generate_proposals, nms, runs_above, score_proposal,
    temporal_iou,
)

from .oracles import iou_oracle, nms_oracle


def runs_oracle(row, th):
    out, start = [], None
    for t, v in enumerate(list(row) + [-1.0]):
        if v >= th and start is None:
            start = t
        elif v < th and start is not None:
            out.append((start, t - 1))
            start = None
    return out


def test_fusion_endpoints_exact():
    rng = np.random.default_rng(0)
    a, b = rng.dirichlet(np.ones(3), size=7).T, rng.dirichlet(np.ones(3), size=7).T
    assert fuse_heatmaps(a, b, 1.0).tobytes() == a.tobytes()
    assert fuse_heatmaps(a, b, 0.0).tobytes() == b.tobytes()


def test_fusion_hand_value():
    assert abs(fuse_heatmaps(np.array([[0.5]]), np.array([[1.0]]), 0.3)[0, 0] - 0.85) < 1e-15


def test_fusion_shape_mismatch():
    with pytest.raises(ValueError):
        fuse_heatmaps(np.zeros((2, 3)), np.zeros((2, 4)), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_fusion_keeps_columns_normalized(seed, lam):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(4), size=9).T, rng.dirichlet(np.ones(4), size=9).T
    assert np.all(np.abs(fuse_heatmaps(a, b, lam).sum(axis=0) - 1) < 1e-9)


def test_proposals_empty_and_hand_case():
    fused = np.vstack([np.zeros(5), [0.1, 0.6, 0.7, 0.6, 0.1], np.full(5, 0.05)])
    props = generate_proposals(fused, DetectConfig(thresholds=[0.5]))
    assert props == [Proposal(1, 1, 3)]


def test_proposals_plateau_split():
    row = np.array([0.0, 0.6, 0.4, 0.4, 0.6, 0.0])
    fused = np.vstack([1 - row, row])
    spans = {(p.start, p.end) for p in generate_proposals(fused, DetectConfig(thresholds=[0.3, 0.5]))}
    assert spans == {(1, 4), (1, 1), (4, 4)}


def test_proposals_deduplicated_and_min_length():
    row = np.array([0.0, 0.95, 0.95, 0.0, 0.95])
    fused = np.vstack([1 - row, row])
    props = generate_proposals(fused, DetectConfig())
    assert sorted((p.start, p.end) for p in props) == [(1, 2), (4, 4)]
    props = generate_proposals(fused, DetectConfig(min_length=2))
    assert [(p.start, p.end) for p in props] == [(1, 2)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 0.99))
def test_runs_match_oracle(row, th):
    assert runs_above(np.array(row), th) == runs_oracle(row, th)


@pytest.mark.parametrize("values, expected", [([0.42], 0.42), ([0.8, 0.8, 0.8], 0.8), ([0.9, 0.7], 0.8)])
def test_score_cases(values, expected):
    fused = np.vstack([np.zeros(len(values)), values])
    assert abs(score_proposal(fused, Proposal(1, 0, len(values) - 1)) - expected) < 1e-15


@pytest.mark.parametrize("a, b, expected", [((2, 5), (4, 9), 0.25), ((3, 3), (3, 3), 1.0), ((0, 2), (3, 6), 0.0)])
def test_iou_cases(a, b, expected):
    assert temporal_iou(a, b) == expected


@settings(max_examples=200, deadline=None)
@given(st.tuples(st.integers(0, 20), st.integers(0, 8)), st.tuples(st.integers(0, 20), st.integers(0, 8)))
def test_iou_matches_set_oracle(a, b):
    a, b = (a[0], a[0] + a[1]), (b[0], b[0] + b[1])
    assert abs(temporal_iou(a, b) - iou_oracle(a, b)) < 1e-15
    assert temporal_iou(a, b) == temporal_iou(b, a)
    assert (temporal_iou(a, b) == 1.0) == (a == b)


def test_nms_cases():
    assert nms([Proposal(1, 0, 3, 0.2)]) == [Proposal(1, 0, 3, 0.2)]
    props = [Proposal(1, 0, 10, 0.9), Proposal(1, 2, 12, 0.8), Proposal(1, 20, 30, 0.7)]
    assert nms(props, 0.5) == [props[0], props[2]]
    twin = [Proposal(1, 4, 8, 0.5), Proposal(2, 4, 8, 0.5)]
    assert nms(twin, 0.5) == twin


def test_nms_tie_order():
    props = [Proposal(1, 2, 6, 0.5), Proposal(1, 1, 6, 0.5), Proposal(1, 1, 5, 0.5)]
    assert nms(props, 0.5) == [Proposal(1, 1, 5, 0.5)]


@st.composite
def proposal_sets(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    n = draw(st.integers(0, 50))
    starts = rng.integers(0, 40, n)
    lens = rng.integers(0, 12, n)
    # coarse scores so ties are common
    scores = np.round(rng.uniform(size=n), draw(st.sampled_from([1, 2, 6])))
    classes = rng.integers(1, 4, n)
    return [Proposal(int(c), int(s), int(s + l), float(v)) for c, s, l, v in zip(classes, starts, lens, scores)]


@settings(max_examples=500, deadline=None)
@given(proposal_sets(), st.sampled_from([0.1, 0.3, 0.5, 0.7, 1.0]))
def test_nms_matches_oracle(props, thr):
    kept = nms(props, thr)
    expected = nms_oracle([(p.cls, p.start, p.end, p.score) for p in props], thr)
    assert [(p.cls, p.start, p.end, p.score) for p in kept] == expected
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            if a.cls == b.cls:
                assert temporal_iou((a.start, a.end), (b.start, b.end)) < thr


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_detect_scores_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    H = rng.dirichlet(np.full(4, 0.3), size=25).T
    for p in detect_video(H, DetectConfig()):
        assert 0 <= p.score <= 1 and 0 <= p.start <= p.end < 25 and 1 <= p.cls <= 3


@pytest.mark.parametrize("bad", [dict(fusion_ratio=1.5), dict(thresholds=[]), dict(thresholds=[1.0]), dict(min_length=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        DetectConfig(**bad).validate()
