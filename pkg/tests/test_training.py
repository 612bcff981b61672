import numpy as np
import pytest

from msodnet import checkpoint
from msodnet import tensor as T
from msodnet.datakit import SceneSpec, sobel_edges, synth_scene
from msodnet.layers import map_tensors, named_tensors
from msodnet.model import ModelConfig, init_params, total_loss
from msodnet.optim import Adam, StepDecay
from msodnet.tensor import Tensor
from msodnet.training import (DivergenceError, TrainConfig, loss_reduction, read_loss_log, smoothed, train,
                              write_loss_log)

TINY = ModelConfig(widths=(2, 2, 3, 3, 4, 4))


def sample(seed, size=32, n=3):
    img, mask = synth_scene(SceneSpec(size=(size, size), n_objects=n, radius=(3, 5)), seed)
    return img / 255.0, mask.astype(float), sobel_edges(mask).astype(float)


def loss_value(s, params, cfg=TINY):
    return total_loss(*s, params, cfg)[0].item()


class TestSchedule:
    def test_step_decay(self):
        s = StepDecay(1e-3, 10, 0.1)
        assert [s(i) for i in (0, 9, 10, 50)] == [1e-3, 1e-3, pytest.approx(1e-4), pytest.approx(1e-4)]

    def test_default_decay_at_three_quarters(self):
        assert TrainConfig(steps=300).resolved_decay_step() == 225
        assert TrainConfig(steps=300, decay_step=5).resolved_decay_step() == 5

    def test_history_records_schedule(self):
        r = train([sample(0)], TINY, TrainConfig(steps=8, lr=1e-3, decay_step=6))
        assert [h[2] for h in r.history] == [1e-3] * 6 + [pytest.approx(1e-4)] * 2
        assert [h[0] for h in r.history] == list(range(8))


class TestAdam:
    def test_matches_scalar_loop(self):
        # a hand-unrolled Adam on one scalar
        p = [Tensor(np.array([0.5]))]
        opt = Adam(StepDecay(0.1))
        gs = [0.3, -0.2, 0.7]
        m = v = 0.0
        w = 0.5
        for t, g in enumerate(gs, start=1):
            p = opt.step(p, {"0": np.array([g])})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            assert p[0].data[0] == pytest.approx(w, rel=1e-14)

    def test_missing_gradient_counts_as_zero(self):
        out = Adam(StepDecay(0.1)).step([Tensor(np.ones(2))], {})
        assert np.array_equal(out[0].data, np.ones(2))


class TestTrain:
    def test_lr_zero_keeps_parameters_bit_exact(self):
        cfg = TrainConfig(steps=3, lr=0.0, seed=4)
        r = train([sample(1), sample(2)], TINY, cfg)
        assert checkpoint.encode_params(r.params) == checkpoint.encode_params(init_params(TINY, 4))

    def test_deterministic(self):
        data = [sample(1), sample(2)]
        a = train(data, TINY, TrainConfig(steps=4, seed=3))
        b = train(data, TINY, TrainConfig(steps=4, seed=3))
        assert checkpoint.encode_params(a.params) == checkpoint.encode_params(b.params)
        assert a.history == b.history

    def test_batch_gradients_are_summed_in_order(self):
        data = [sample(1), sample(2)]
        r = train(data, TINY, TrainConfig(steps=1, batch_size=2, seed=0))
        p0 = init_params(TINY, 0)
        order = np.random.default_rng(0).permutation(2)
        grads = {}
        for i in order:
            named = dict(named_tensors(p0))
            for t in named.values():
                t.grad = None
            with T.Tape() as tape:
                loss = total_loss(*data[i], p0, TINY)[0]
            tape.backward(loss)
            for k, t in named.items():
                if t.grad is not None:
                    grads[k] = grads[k] + t.grad if k in grads else t.grad
        expected = Adam(StepDecay(1e-3)).step(p0, grads)
        assert checkpoint.encode_params(r.params) == checkpoint.encode_params(expected)
        mean = np.mean([loss_value(data[i], p0) for i in order])
        assert r.history[0][1] == pytest.approx(mean, rel=1e-14)

    def test_one_small_step_descends(self):
        wins = 0
        for k in range(100):
            s = sample(1000 + k)
            p0 = init_params(TINY, k)
            before = loss_value(s, p0)
            r = train([s], TINY, TrainConfig(steps=1, lr=1e-4, seed=k), params=p0)
            wins += loss_value(s, r.params) < before
        assert wins >= 95, wins

    def test_nan_aborts_naming_the_op(self):
        img, mask, edge = sample(0)
        img = img.copy()
        img[3, 3, 0] = np.nan
        with pytest.raises(DivergenceError, match=r"non-finite loss at step 0; first non-finite tensor: output of 'conv2d'"):
            train([(img, mask, edge)], TINY, TrainConfig(steps=2))

    def test_nan_parameter_is_reported(self):
        p = map_tensors(init_params(TINY, 0), lambda n, t: Tensor(np.full(t.shape, np.nan)) if n == "fin_convs.4.b" else t)
        with pytest.raises(DivergenceError, match="first non-finite"):
            train([sample(0)], TINY, TrainConfig(steps=1), params=p)

    def test_empty_data(self):
        with pytest.raises(ValueError):
            train([], TINY, TrainConfig(steps=1))


class TestLossLog:
    def test_round_trip(self, tmp_path):
        hist = [(0, 1.25, 1e-3), (1, 0.1 + 0.2, 1e-4)]
        write_loss_log(tmp_path / "l.tsv", hist)
        assert read_loss_log(tmp_path / "l.tsv") == hist
        assert (tmp_path / "l.tsv").read_text().splitlines()[0] == "0\t1.25\t0.001"

    def test_smoothing(self):
        x = np.arange(1.0, 6.0)
        assert smoothed(x, 2).tolist() == [1.0, 1.5, 2.5, 3.5, 4.5]
        assert loss_reduction(np.ones(50)) == 1.0
        assert loss_reduction(np.r_[np.full(20, 2.0), np.full(30, 0.5)]) == 0.25
