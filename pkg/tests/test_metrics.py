import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tv3s.metrics import (UndefinedMetricWarning, confusion_matrix, format_report, miou, mvc, mvc_report,
                          pixel_accuracy, vc_n)


def brute_miou(truths, preds, C):
    ious = []
    for c in range(C):
        inter = union = 0
        for m, p in zip(truths, preds):
            for a, b in zip(np.ravel(m), np.ravel(p)):
                inter += a == c and b == c
                union += a == c or b == c
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious)


def brute_vc(masks, preds, n, strict=True):
    H, W = masks[0].shape
    ratios = []
    for i in range(len(masks) - n + 1):
        num = den = 0
        for y in range(H):
            for x in range(W):
                truth = {int(masks[j][y, x]) for j in range(i, i + n)}
                pred = {int(preds[j][y, x]) for j in range(i, i + n)}
                if len(truth) != 1:
                    continue
                den += 1
                if len(pred) == 1 and (not strict or pred == truth):
                    num += 1
        if den:
            ratios.append(num / den)
    return sum(ratios) / len(ratios)


tiny_video = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(2, 3),
                       st.integers(0, 2**31))


def draw(spec):
    H, W, T, C, seed = spec
    r = np.random.default_rng(seed)
    masks = [r.integers(0, C, (H, W)) for _ in range(T)]
    # correlated predictions so both agreeing and disagreeing pixels occur
    preds = [np.where(r.random((H, W)) < 0.7, m, r.integers(0, C, (H, W))) for m in masks]
    return masks, preds, C


class TestIoU:
    def test_perfect(self):
        m = np.array([[0, 1], [1, 0]])
        assert miou(confusion_matrix(m, m, 2)) == 1.0

    def test_all_wrong(self):
        assert miou(confusion_matrix(np.zeros((2, 2), int), np.ones((2, 2), int), 2)) == 0.0

    def test_hand_example(self):
        conf = confusion_matrix(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 2)
        assert miou(conf) == pytest.approx(7 / 12)

    def test_ignore_label_dropped(self):
        conf = confusion_matrix(np.array([0, 255]), np.array([0, 1]), 2)
        assert conf.sum() == 1 and pixel_accuracy(conf) == 1.0

    def test_empty_is_undefined(self):
        with pytest.warns(UndefinedMetricWarning):
            assert np.isnan(miou(np.zeros((2, 2))))

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ValueError):
            confusion_matrix(np.array([0, 3]), np.array([0, 0]), 2)

    @settings(max_examples=40, deadline=None)
    @given(tiny_video)
    def test_matches_brute_force(self, spec):
        masks, preds, C = draw(spec)
        conf = sum(confusion_matrix(m, p, C) for m, p in zip(masks, preds))
        assert miou(conf) == pytest.approx(brute_miou(masks, preds, C), abs=1e-12)


class TestConsistency:
    def test_hand_example(self):
        masks = [np.zeros((2, 1), int)] * 3
        preds = [np.array([[0], [0]]), np.array([[0], [1]]), np.array([[0], [0]])]
        assert vc_n(masks, preds, 2) == 0.5

    def test_static_perfect(self):
        m = [np.array([[0, 1], [2, 1]])] * 6
        assert vc_n(m, m, 4) == 1.0

    def test_single_frame_windows_are_accuracy(self, rng):
        masks = [rng.integers(0, 3, (3, 3)) for _ in range(4)]
        preds = [rng.integers(0, 3, (3, 3)) for _ in range(4)]
        expect = np.mean([(m == p).mean() for m, p in zip(masks, preds)])
        assert vc_n(masks, preds, 1) == pytest.approx(expect)

    def test_lenient_ignores_label_match(self):
        masks = [np.zeros((1, 2), int)] * 2
        preds = [np.ones((1, 2), int)] * 2
        assert vc_n(masks, preds, 2, strict=True) == 0.0
        assert vc_n(masks, preds, 2, strict=False) == 1.0

    def test_window_without_consistent_truth_skipped(self):
        masks = [np.array([[0]]), np.array([[1]]), np.array([[1]])]
        preds = [np.array([[1]])] * 3
        assert vc_n(masks, preds, 2) == 1.0

    def test_short_video(self):
        with pytest.raises(ValueError, match="fewer than"):
            vc_n([np.zeros((1, 1))], [np.zeros((1, 1))], 2)

    def test_mean_over_videos(self):
        same = [np.zeros((2, 1), int)] * 3
        half = [np.array([[0], [0]]), np.array([[0], [1]]), np.array([[0], [0]])]
        assert mvc([(same, same)], 2) == 1.0
        assert mvc([(same, same), (same, half)], 2) == 0.75

    def test_short_videos_counted_as_skipped(self):
        a = [np.zeros((1, 1), int)] * 3
        rep = mvc_report([(a, a), (a[:1], a[:1])], 2)
        assert (rep.value, rep.videos, rep.skipped) == (1.0, 1, 1)
        assert format_report("mvc2", rep.value, rep.videos, rep.skipped) == \
            "metric=mvc2 value=1.000000 videos=1 skipped=1"

    @settings(max_examples=40, deadline=None)
    @given(tiny_video, st.integers(1, 5), st.booleans())
    def test_matches_brute_force(self, spec, n, strict):
        masks, preds, _ = draw(spec)
        if len(masks) < n:
            return
        try:
            expect = brute_vc(masks, preds, n, strict)
        except ZeroDivisionError:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UndefinedMetricWarning)
                assert np.isnan(vc_n(masks, preds, n, strict))
            return
        assert vc_n(masks, preds, n, strict) == pytest.approx(expect, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(tiny_video, st.integers(1, 3))
    def test_bounded(self, spec, n):
        masks, preds, _ = draw(spec)
        if len(masks) < n:
            return
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UndefinedMetricWarning)
            v = vc_n(masks, preds, n)
        assert np.isnan(v) or 0.0 <= v <= 1.0
