import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msodnet.datakit import write_image
from msodnet.datakit.netpbm import from_unit
from msodnet.metrics import (PRCurve, evaluate_dataset, evaluate_pairs, f_measure, mae, max_f, pr_curve,
                             read_metrics_csv, s_measure, write_report)

# ---- brute-force oracles, one pixel and one threshold at a time


def brute_curve(pred, gt):
    H, W = pred.shape
    q = [[min(255, max(0, math.floor(pred[i, j] * 255))) for j in range(W)] for i in range(H)]
    n_pos = sum(1 for i in range(H) for j in range(W) if gt[i, j])
    P, R = [], []
    for t in range(256):
        tp = fp = 0
        for i in range(H):
            for j in range(W):
                if q[i][j] > t:
                    if gt[i, j]:
                        tp += 1
                    else:
                        fp += 1
        P.append(tp / (tp + fp) if tp + fp else 1.0)
        R.append(tp / n_pos if n_pos else 1.0)
    return P, R


def brute_max_f(P, R, b2=0.3):
    best = 0.0
    for p, r in zip(P, R):
        f = (1 + b2) * p * r / (b2 * p + r) if (b2 * p + r) > 0 else 0.0
        best = max(best, f)
    return best


def brute_mae(pred, gt):
    # exact rational sum of the per-pixel errors, rounded once
    total = Fraction(0)
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            total += Fraction(abs(float(pred[i, j]) - float(gt[i, j])))
    return float(total) / pred.size


# ---- an independent transcription of the structure measure reference code

EPS = 2.220446049250313e-16


def _mean(v):
    return sum(v) / len(v)


def _obj(vals):
    if not vals:
        return 0.0
    x = _mean(vals)
    sd = math.sqrt(sum((v - x) ** 2 for v in vals) / (len(vals) - 1)) if len(vals) > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sd + EPS)


def _ssim_ref(p, g):
    n = len(p)
    if n == 0:
        return 0.0
    x, y = _mean(p), _mean(g)
    sx = sum((a - x) ** 2 for a in p) / (n - 1 + EPS)
    sy = sum((b - y) ** 2 for b in g) / (n - 1 + EPS)
    sxy = sum((a - x) * (b - y) for a, b in zip(p, g)) / (n - 1 + EPS)
    al = 4 * x * y * sxy
    be = (x * x + y * y) * (sx + sy)
    if al != 0:
        return al / (be + EPS)
    return 1.0 if be == 0 else 0.0


def s_reference(pred, gt, alpha=0.5):
    H, W = gt.shape
    g = [[1.0 if gt[i, j] else 0.0 for j in range(W)] for i in range(H)]
    y = sum(map(sum, g)) / (H * W)
    pm = sum(pred[i, j] for i in range(H) for j in range(W)) / (H * W)
    if y == 0:
        return 1.0 - pm
    if y == 1:
        return pm
    fg = [pred[i, j] for i in range(H) for j in range(W) if g[i][j]]
    bg = [1.0 - pred[i, j] for i in range(H) for j in range(W) if not g[i][j]]
    s_o = y * _obj(fg) + (1 - y) * _obj(bg)
    total = sum(map(sum, g))
    X = math.floor(sum(g[i][j] * (j + 1) for i in range(H) for j in range(W)) / total + 0.5)
    Y = math.floor(sum(g[i][j] * (i + 1) for i in range(H) for j in range(W)) / total + 0.5)
    w1 = X * Y / (H * W)
    w2 = (W - X) * Y / (H * W)
    w3 = X * (H - Y) / (H * W)
    w4 = 1.0 - w1 - w2 - w3
    s_r = 0.0
    for w, rows, cols in ((w1, range(0, Y), range(0, X)), (w2, range(0, Y), range(X, W)),
                          (w3, range(Y, H), range(0, X)), (w4, range(Y, H), range(X, W))):
        p = [pred[i, j] for i in rows for j in cols]
        q = [g[i][j] for i in rows for j in cols]
        s_r += w * _ssim_ref(p, q)
    return max(alpha * s_o + (1 - alpha) * s_r, 0.0)


def random_pair(seed, size=8):
    rng = np.random.default_rng(seed)
    pred = rng.random((size, size))
    if seed % 3 == 0:
        pred = np.round(pred * 255) / 255  # exercise exact quantisation levels
    gt = rng.random((size, size)) > rng.uniform(0.2, 0.8)
    return pred, gt


class TestPRCurve:
    @pytest.mark.parametrize("seed", range(100))
    def test_brute_force(self, seed):
        pred, gt = random_pair(seed)
        c = pr_curve(pred, gt)
        P, R = brute_curve(pred, gt)
        assert c.precision.tolist() == P
        assert c.recall.tolist() == R
        assert max_f(c) == brute_max_f(P, R)
        assert mae(pred, gt) == brute_mae(pred, gt.astype(float))

    def test_binary_prediction_equal_to_gt(self):
        gt = np.zeros((6, 6), bool)
        gt[1:4, 2:5] = True
        c = pr_curve(gt.astype(float), gt)
        assert np.all(c.precision[:255] == 1) and np.all(c.recall[:255] == 1)
        assert max_f(c) == 1.0

    def test_constant_half(self):
        gt = np.zeros((4, 4), bool)
        gt[:2] = True
        c = pr_curve(np.full((4, 4), 0.5), gt)
        assert np.all(c.precision[:127] == 0.5) and np.all(c.recall[:127] == 1)
        assert np.all(c.precision[128:] == 1) and np.all(c.recall[128:] == 0)

    def test_empty_gt_flagged(self):
        c = pr_curve(np.random.default_rng(0).random((4, 4)), np.zeros((4, 4)))
        assert c.empty_gt
        assert np.all(c.recall == 1)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            pr_curve(np.zeros((4, 4)), np.zeros((4, 5)))
        with pytest.raises(ValueError):
            mae(np.zeros((4, 4)), np.zeros((5, 4)))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (6, 6), elements=st.floats(0, 1)), arrays(bool, (6, 6)))
    def test_recall_monotone_and_counts_consistent(self, pred, gt):
        c = pr_curve(pred, gt)
        assert np.all(np.diff(c.recall) <= 0)
        assert np.all((c.precision >= 0) & (c.precision <= 1))
        fn = c.n_pos - c.tp
        assert np.all(c.tp + fn == gt.sum())

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (6, 6), elements=st.floats(0, 1)), arrays(bool, (6, 6)))
    def test_max_f_invariant_under_order_preserving_requantisation(self, pred, gt):
        levels = np.floor(pred * 255)
        # any strictly increasing map of the 8-bit levels that keeps each level's bin
        squashed = (levels + np.sqrt(levels / 255) * 0.99) / 255
        assert max_f(pr_curve(squashed, gt)) == max_f(pr_curve(pred, gt))


class TestFMeasure:
    def test_equal_precision_recall(self):
        for x in (0.1, 0.5, 0.9, 1.0):
            assert f_measure(x, x) == pytest.approx(x, abs=1e-15)

    def test_zero_zero(self):
        assert f_measure(0.0, 0.0) == 0.0

    def test_only_half(self):
        c = PRCurve.from_counts(np.full(256, 1), np.full(256, 1), 2)
        assert max_f(c) == pytest.approx(0.5)


class TestMAE:
    def test_identical(self):
        gt = np.eye(4)
        assert mae(gt, gt) == 0.0

    def test_opposite(self):
        assert mae(np.ones((3, 3)), np.zeros((3, 3))) == 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_loop_oracle_5x5(self, seed):
        rng = np.random.default_rng(seed)
        pred, gt = rng.random((5, 5)), (rng.random((5, 5)) > 0.5).astype(float)
        assert mae(pred, gt) == brute_mae(pred, gt)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)), arrays(bool, (5, 5)))
    def test_complement_symmetry(self, pred, gt):
        g = gt.astype(float)
        assert mae(pred, g) == pytest.approx(mae(1 - pred, 1 - g), abs=1e-15)


class TestSMeasure:
    @pytest.mark.parametrize("seed", range(40))
    def test_matches_reference_transcription(self, seed):
        pred, gt = random_pair(seed, size=9)
        assert s_measure(pred, gt) == pytest.approx(s_reference(pred, gt), abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_perfect_prediction(self, seed):
        _, gt = random_pair(seed)
        assert s_measure(gt.astype(float), gt) == pytest.approx(1.0, abs=1e-6)
        assert s_reference(gt.astype(float), gt) == pytest.approx(1.0, abs=1e-6)

    def test_half_rounding_of_centroid(self):
        gt = np.zeros((6, 6), bool)
        gt[2, 1:3] = True  # mean column 1.5 -> 1-based 2.5 splits after column 3
        pred = np.random.default_rng(3).random((6, 6))
        assert s_measure(pred, gt) == pytest.approx(s_reference(pred, gt), abs=1e-12)

    def test_all_background(self):
        gt = np.zeros((4, 4))
        assert s_measure(np.zeros((4, 4)), gt) == 1.0
        assert s_measure(np.ones((4, 4)), gt) == 0.0
        assert s_measure(np.full((4, 4), 0.25), gt) == 0.75

    def test_all_foreground(self):
        gt = np.ones((4, 4))
        assert s_measure(np.full((4, 4), 0.25), gt) == 0.25

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (7, 7), elements=st.floats(0, 1)), arrays(bool, (7, 7)))
    def test_in_unit_interval(self, pred, gt):
        assert 0.0 <= s_measure(pred, gt) <= 1.0


class TestDataset:
    def _write(self, d, name, arr):
        d.mkdir(exist_ok=True)
        write_image(d / f"{name}.pgm", arr)

    def test_single_image_aggregate(self):
        pred, gt = random_pair(4)
        rep = evaluate_pairs([("a", pred, gt)])
        m = rep.images[0]
        assert (rep.max_f, rep.mae, rep.s) == (m.max_f, m.mae, m.s)

    def test_mean_of_mae(self):
        rep = evaluate_pairs([("a", np.zeros((2, 2)), np.zeros((2, 2))), ("b", np.ones((2, 2)), np.zeros((2, 2)))])
        assert rep.mae == 0.5

    def test_ten_pairs_on_disk_vs_oracle(self, tmp_path):
        expected = {}
        for k in range(10):
            pred, gt = random_pair(100 + k)
            p8 = from_unit(pred)
            self._write(tmp_path / "pred", f"img{k}", p8)
            self._write(tmp_path / "gt", f"img{k}", (gt * 255).astype(np.uint8))
            P, R = brute_curve(p8 / 255.0, gt)
            expected[f"img{k}"] = (brute_max_f(P, R), brute_mae(p8 / 255.0, gt.astype(float)),
                                   s_reference(p8 / 255.0, gt))
        self._write(tmp_path / "pred", "stray", np.zeros((8, 8), np.uint8))
        rep = evaluate_dataset(tmp_path / "pred", tmp_path / "gt")
        assert [m.image for m in rep.images] == sorted(expected)
        assert rep.unmatched == ["stray"]
        for m in rep.images:
            f, a, s = expected[m.image]
            assert m.max_f == f
            assert m.mae == a
            assert m.s == pytest.approx(s, abs=1e-12)

    def test_pooled_counts(self):
        a, b = random_pair(1), random_pair(2)
        rep = evaluate_pairs([("a", *a), ("b", *b)])
        ca, cb = pr_curve(*a), pr_curve(*b)
        np.testing.assert_array_equal(rep.pooled_curve.tp, ca.tp + cb.tp)
        np.testing.assert_array_equal(rep.mean_curve[0], (ca.precision + cb.precision) / 2)

    def test_report_files_reparse(self, tmp_path):
        rep = evaluate_pairs([(f"i{k}", *random_pair(k)) for k in range(4)])
        write_report(rep, tmp_path)
        rows = read_metrics_csv(tmp_path / "metrics.csv")
        assert [(r.image, r.max_f, r.mae, r.s) for r in rows] == [(m.image, m.max_f, m.mae, m.s) for m in rep.images]
        lines = (tmp_path / "pr_pooled.csv").read_text().splitlines()
        assert lines[0] == "threshold,precision,recall" and len(lines) == 257
        assert "pooled-count maxF" in (tmp_path / "summary.txt").read_text()
