"""Central finite-difference checks of tape gradients.

Every registered case builds random inputs in [-1, 1] and a scalar-valued
function of them. The tape gradient of each input element is compared with
``(f(x + h) - f(x - h)) / 2h``; the relative error is
``|a - n| / max(|a|, |n|, 1e-8)``.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .datakit.edges import sobel_edges
from .fusion import ERMParams, StageFusionParams, channel_attention, edge_loss, erm_forward, ffg_fuse, unify
from .layers import Conv, Dense, map_tensors, named_tensors
from .model import ModelConfig, init_params, loss_contributions, saliency_loss
from .nlgm import DSNLBParams, channel_nonlocal, dsnlb, spatial_nonlocal
from .tensor import Tensor

H_STEP = 1e-5
RTOL = 1e-3
FLOOR = 1e-8
MAX_HALVINGS = 20
E2E_SIZE = 32
E2E_WIDTHS = (2, 2, 2, 2, 2, 2)


@dataclass
class GradResult:
    name: str
    max_rel_err: float
    n_checked: int
    passed: bool
    worst_at: str = ""
    analytic: float = 0.0
    numeric: float = 0.0
    n_reduced: int = 0


def rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)


def _parts(out) -> list:
    return list(out) if isinstance(out, (list, tuple)) else [out]


def _total(parts: list) -> Tensor:
    total = T.sum(parts[0])
    for p in parts[1:]:
        total = T.add(total, T.sum(p))
    return total


def _difference(plus: list, minus: list) -> float:
    # subtract element by element before summing: rounding the grand total
    # would otherwise swamp small derivatives
    return math.fsum(float(v) for a, b in zip(plus, minus) for v in (a.data - b.data).reshape(-1))


def _pattern(records) -> list:
    """Which piece of each piecewise op was taken: ReLU signs and max-pool winners."""
    out = []
    for rec in records:
        if rec.name == "relu":
            out.append(rec.inputs[0].data > 0)
        elif rec.name == "maxpool2d":
            x = rec.inputs[0].data
            C, H, W = x.shape
            k = H // rec.output.shape[1]
            blocks = x.reshape(C, H // k, k, W // k, k).transpose(0, 1, 3, 2, 4)
            out.append(blocks.reshape(C, H // k, W // k, k * k).argmax(axis=-1))
    return out


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _evaluate(fn: Callable, args: list) -> tuple:
    with T.Tape() as tape:
        parts = _parts(fn(*[Tensor(a, requires_grad=True) for a in args]))
    return parts, _pattern(tape.records)


def check_function(name: str, fn: Callable, arrays: list, h: float = H_STEP, rtol: float = RTOL,
                   labels: list | None = None) -> GradResult:
    """Compare tape and finite-difference gradients of ``fn(*tensors)`` w.r.t. every input.

    ``fn`` returns a tensor, or a list of tensors, whose grand total is the
    scalar being differentiated. ``labels`` names the inputs in the report.

    When a perturbation of ``h`` moves some ReLU or max-pool onto a different
    piece than at the unperturbed point, the difference straddles a kink and
    says nothing about the derivative there; the step for that element is
    halved until both evaluations stay on the original pieces
    (``GradResult.n_reduced`` counts these).
    """
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        out = _total(_parts(fn(*leaves)))
    base = _pattern(tape.records)
    tape.backward(out)
    worst, n, reduced = 0.0, 0, 0
    where, worst_a, worst_n = "", 0.0, 0.0
    for k, a in enumerate(arrays):
        analytic = leaves[k].grad if leaves[k].grad is not None else np.zeros(a.shape)
        numeric = np.zeros(a.shape)
        flat = np.array(a, dtype=np.float64).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            step = h
            for attempt in range(MAX_HALVINGS + 1):
                evals = []
                for delta in (step, -step):
                    flat[j] = orig + delta
                    evals.append(_evaluate(fn, [flat.reshape(a.shape) if i == k else arrays[i]
                                                for i in range(len(arrays))]))
                if all(_same_pattern(pat, base) for _, pat in evals) or attempt == MAX_HALVINGS:
                    break
                step /= 2
            flat[j] = orig
            reduced += step != h
            numeric.reshape(-1)[j] = _difference(evals[0][0], evals[1][0]) / (2 * step)
        err = rel_error(analytic, numeric).reshape(-1)
        if err.size and err.max() > worst:
            j = int(err.argmax())
            worst = float(err[j])
            where = f"{labels[k] if labels else k}[{j}]"
            worst_a, worst_n = float(analytic.reshape(-1)[j]), float(numeric.reshape(-1)[j])
        n += a.size
    return GradResult(name, worst, n, worst < rtol, where, worst_a, worst_n, reduced)


# ---------------------------------------------------------------- registry


def _u(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _project(out: Tensor, seed: int = 99) -> Tensor:
    # fixed random weighting, so every output element matters; the oracle sums it
    r = np.random.default_rng(seed).uniform(-1.0, 1.0, size=out.shape)
    return T.mul(out, Tensor(r))


def _conv(w, b) -> Conv:
    return Conv(w, b)


def _dsnlb_from(ts) -> DSNLBParams:
    return DSNLBParams(*(Conv(ts[i], ts[i + 1]) for i in range(0, 8, 2)))


def _dsnlb_arrays(rng, c):
    out = []
    for _ in range(4):
        out += [_u(rng, c, c, 1, 1), _u(rng, c)]
    return out


def _case_matmul(rng):
    return [_u(rng, 3, 4), _u(rng, 4, 2)], lambda a, b: _project(T.matmul(a, b))


def _case_softmax0(rng):
    return [_u(rng, 4, 5)], lambda x: _project(T.softmax(x, axis=0))


def _case_softmax1(rng):
    return [_u(rng, 4, 5)], lambda x: _project(T.softmax(x, axis=1))


def _case_conv_same(rng):
    return [_u(rng, 2, 5, 5), _u(rng, 3, 2, 3, 3), _u(rng, 3)], lambda x, w, b: _project(T.conv2d(x, w, b))


def _case_conv_valid_stride(rng):
    return [_u(rng, 2, 7, 7), _u(rng, 2, 2, 3, 3), _u(rng, 2)], lambda x, w, b: _project(
        T.conv2d(x, w, b, stride=2, padding="valid"))


def _case_conv_1x1(rng):
    return [_u(rng, 3, 4, 4), _u(rng, 2, 3, 1, 1), _u(rng, 2)], lambda x, w, b: _project(T.conv2d(x, w, b))


def _case_relu(rng):
    x = _u(rng, 3, 4)
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    return [x], lambda t: _project(T.relu(t))


def _case_sigmoid(rng):
    return [_u(rng, 3, 4)], lambda t: _project(T.sigmoid(t))


def _case_upsample(rng):
    return [_u(rng, 2, 3, 4)], lambda t: _project(T.upsample_bilinear(t, (5, 7)))


def _case_downsample(rng):
    return [_u(rng, 2, 6, 5)], lambda t: _project(T.upsample_bilinear(t, (3, 2)))


def _case_gap(rng):
    return [_u(rng, 3, 4, 4)], lambda t: _project(T.global_avg_pool(t))


def _case_fc(rng):
    return [_u(rng, 5), _u(rng, 3, 5), _u(rng, 3)], lambda x, w, b: _project(T.fully_connected(x, w, b))


def _case_concat(rng):
    return [_u(rng, 1, 3, 3), _u(rng, 2, 3, 3)], lambda a, b: _project(T.concat([a, b]))


def _case_add(rng):
    return [_u(rng, 2, 3), _u(rng, 2, 3)], lambda a, b: _project(T.add(a, b))


def _case_sub(rng):
    return [_u(rng, 2, 3), _u(rng, 2, 3)], lambda a, b: _project(T.sub(a, b))


def _case_mul(rng):
    return [_u(rng, 2, 3), _u(rng, 2, 3)], lambda a, b: _project(T.mul(a, b))


def _case_scale(rng):
    return [_u(rng, 2, 3)], lambda a: _project(T.scale(a, -1.7))


def _case_channel_scale(rng):
    return [_u(rng, 3, 2, 2), _u(rng, 3)], lambda x, g: _project(T.channel_scale(x, g))


def _case_transpose(rng):
    return [_u(rng, 2, 3)], lambda a: _project(T.transpose(a))


def _case_reshape(rng):
    return [_u(rng, 2, 6)], lambda a: _project(T.reshape(a, (3, 4)))


def _case_maxpool(rng):
    return [_u(rng, 2, 4, 4)], lambda a: _project(T.maxpool2d(a, 2))


def _case_sum(rng):
    return [_u(rng, 3, 3)], lambda a: T.scale(T.sum(T.mul(a, a)), 0.5)


def _case_mean(rng):
    return [_u(rng, 3, 3)], lambda a: T.mean(T.mul(a, a))


def _case_bce(rng):
    t = (rng.uniform(size=(4, 4)) > 0.5).astype(float)
    w = rng.uniform(size=(4, 4))
    return [_u(rng, 4, 4) * 3], lambda z: T.bce_with_logits(z, t, w)


def _case_spatial_nonlocal(rng):
    return [_u(rng, 2, 3, 3)] + _dsnlb_arrays(rng, 2), lambda a, *ts: _project(spatial_nonlocal(a, _dsnlb_from(ts)))


def _case_channel_nonlocal(rng):
    return [_u(rng, 3, 2, 2)], lambda a: _project(channel_nonlocal(a))


def _case_dsnlb(rng):
    return [_u(rng, 2, 2, 3)] + _dsnlb_arrays(rng, 2), lambda a, *ts: _project(dsnlb(a, _dsnlb_from(ts)))


def _case_edge_loss(rng):
    gt = (rng.uniform(size=(6, 6)) > 0.7).astype(float)
    return [_u(rng, 2, 3, 3), _u(rng, 1, 2, 1, 1), _u(rng, 1)], lambda e, w, b: edge_loss(e, Conv(w, b), gt)


def _case_saliency_loss(rng):
    gt = (rng.uniform(size=(6, 6)) > 0.5).astype(float)
    return [_u(rng, 1, 3, 3)], lambda z: saliency_loss(z, gt)


def _case_unify(rng):
    return [_u(rng, 3, 2, 2), _u(rng, 2, 3, 1, 1), _u(rng, 2)], lambda x, w, b: _project(
        unify(x, Tensor(np.zeros((2, 4, 4))), Conv(w, b)))


def _case_channel_attention(rng):
    return [_u(rng, 4, 3, 3), _u(rng, 2, 4), _u(rng, 2), _u(rng, 4, 2), _u(rng, 4)], lambda x, w1, b1, w2, b2: _project(
        channel_attention(x, Dense(w1, b1), Dense(w2, b2)))


def _case_ffg(rng):
    arrays = [_u(rng, 2, 3, 3) for _ in range(4)] + [_u(rng, 1, 6), _u(rng, 1), _u(rng, 6, 1), _u(rng, 6)]

    def fn(s, n, f, e, w1, b1, w2, b2):
        p = StageFusionParams(unify_f=None, fc1=Dense(w1, b1), fc2=Dense(w2, b2))
        return _project(ffg_fuse(s, n, f, e, p))

    return arrays, fn


def _case_erm(rng):
    s2, s5 = _u(rng, 2, 4, 4), _u(rng, 3, 2, 2)
    arrays = [s2, s5, _u(rng, 2, 5, 3, 3), _u(rng, 2)]
    for _ in range(5):
        arrays += [_u(rng, 2, 2, 3, 3), _u(rng, 2) + 0.3]

    def fn(a2, a5, mw, mb, *erb):
        p = ERMParams(Conv(mw, mb), [Conv(erb[i], erb[i + 1]) for i in range(0, 10, 2)], [])
        return _project(erm_forward(a2, a5, p)[-1])

    return arrays, fn


OPS: dict = {
    "matmul": _case_matmul,
    "softmax[axis=0]": _case_softmax0,
    "softmax[axis=1]": _case_softmax1,
    "conv2d[3x3,same]": _case_conv_same,
    "conv2d[3x3,valid,stride2]": _case_conv_valid_stride,
    "conv2d[1x1]": _case_conv_1x1,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "upsample_bilinear[up]": _case_upsample,
    "upsample_bilinear[down]": _case_downsample,
    "global_avg_pool": _case_gap,
    "fully_connected": _case_fc,
    "concat": _case_concat,
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "scale": _case_scale,
    "channel_scale": _case_channel_scale,
    "transpose": _case_transpose,
    "reshape": _case_reshape,
    "maxpool2d": _case_maxpool,
    "sum": _case_sum,
    "mean": _case_mean,
    "bce_with_logits": _case_bce,
    "spatial_nonlocal": _case_spatial_nonlocal,
    "channel_nonlocal": _case_channel_nonlocal,
    "dsnlb": _case_dsnlb,
    "erm_forward": _case_erm,
    "edge_loss": _case_edge_loss,
    "saliency_loss": _case_saliency_loss,
    "unify": _case_unify,
    "channel_attention": _case_channel_attention,
    "ffg_fuse": _case_ffg,
}


def check_end_to_end(seed: int, size: int = E2E_SIZE, widths=E2E_WIDTHS, h: float = H_STEP,
                     rtol: float = RTOL) -> GradResult:
    """Finite-difference check of every parameter of a full toy model under total_loss."""
    config = ModelConfig(widths=widths)
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    # non-zero biases so no branch starts exactly at a ReLU kink
    params = map_tensors(params, lambda name, t: Tensor(
        t.data + (rng.uniform(0.01, 0.1, t.shape) if name.endswith(".b") else 0.0), requires_grad=True))
    image = rng.uniform(0.0, 1.0, size=(3, size, size))
    mask = np.zeros((size, size))
    mask[size // 4 : size // 2, size // 4 : 3 * size // 4] = 1
    mask[3 * size // 4 :, : size // 3] = 1
    edge = sobel_edges(mask).astype(float)
    names = [n for n, _ in named_tensors(params)]
    arrays = [t.data for _, t in named_tensors(params)]

    def fn(*ts):
        lookup = dict(zip(names, ts))
        p = map_tensors(params, lambda name, _: lookup[name])
        return loss_contributions(image, mask, edge, p, config)

    return check_function(f"total_loss[end-to-end, seed={seed}]", fn, arrays, h, rtol, labels=names)


def run_suite(seed: int = 0, end_to_end: bool = True, ops: dict | None = None) -> list:
    results = []
    for name, build in (ops if ops is not None else OPS).items():
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        arrays, fn = build(rng)
        results.append(check_function(name, fn, arrays))
    if end_to_end:
        results.append(check_end_to_end(seed))
    return results


def format_results(results: list) -> str:
    lines = [f"{'check':<40} {'elements':>8} {'max rel err':>12} {'short h':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<40} {r.n_checked:>8} {r.max_rel_err:>12.3e} {r.n_reduced:>7}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
