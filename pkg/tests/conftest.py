import numpy as np
import pytest

from msodnet import tensor as T
from msodnet.tensor import Tensor


def numeric_grad(f, x, h=1e-5):
    """Central differences of the scalar function ``f`` (numpy in, float out)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        g.reshape(-1)[i] = (fp - fm) / (2 * h)
    return g


def tape_grad(fn, *arrays):
    """Gradients of ``sum(fn(*tensors))`` with respect to every input array."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        out = T.sum(fn(*leaves))
    tape.backward(out)
    return [leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def conv_loops(x, w, b, stride=1, pad=0):
    """Direct nested-loop cross-correlation."""
    C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                acc = b[o]
                for c in range(C):
                    for u in range(k):
                        for v in range(k):
                            acc += w[o, c, u, v] * xp[c, i * stride + u, j * stride + v]
                out[o, i, j] = acc
    return out


def bilinear_loops(x, size):
    """Corner-aligned bilinear resize, one output sample at a time."""
    C, H, W = x.shape
    Ho, Wo = size
    out = np.zeros((C, Ho, Wo))
    for i in range(Ho):
        fy = i * (H - 1) / (Ho - 1) if Ho > 1 else 0.0
        y0 = min(int(np.floor(fy)), H - 1)
        y1 = min(y0 + 1, H - 1)
        ty = fy - y0
        for j in range(Wo):
            fx = j * (W - 1) / (Wo - 1) if Wo > 1 else 0.0
            x0 = min(int(np.floor(fx)), W - 1)
            x1 = min(x0 + 1, W - 1)
            tx = fx - x0
            for c in range(C):
                top = x[c, y0, x0] * (1 - tx) + x[c, y0, x1] * tx
                bot = x[c, y1, x0] * (1 - tx) + x[c, y1, x1] * tx
                out[c, i, j] = top * (1 - ty) + bot * ty
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---- acceptance reporting: one line per criterion in the terminal summary

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """``criterion(label, passed, detail)`` records a verdict and returns ``passed``."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(label: str, passed: bool, detail: str = "") -> bool:
        lines.append(f"{'PASS' if passed else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
