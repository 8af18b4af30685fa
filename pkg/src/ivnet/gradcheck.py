"""Central finite-difference verification of every differentiable op.

Each check builds a small random 64-bit problem, projects the op output to
a scalar with a fixed random weighting, and compares the tape gradient of
every input against (f(x+h) - f(x-h)) / 2h elementwise.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .model import ConvLSTMCell, ConvLSTMState, convlstm_step
from .rng import Rng
from .tensor import Tensor, backward, no_grad

H = 1e-5

# tolerance tiers: smooth elementwise / scalar ops vs compound kernels
TOL_SMOOTH = 1e-6
TOL_COMPOUND = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-4)
    return float((diff / denom).max())


def check_gradients(build, inputs: dict[str, np.ndarray], h: float = H) -> float:
    """Max relative error over all inputs of the scalar function ``build``.

    ``build`` maps {name: Tensor} to a scalar Tensor and is re-evaluated for
    every perturbed element, so it must be deterministic.
    """
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
    loss = build(tensors)
    backward(loss)

    def evaluate(arrs: dict[str, np.ndarray]) -> float:
        with no_grad():
            out = build({k: Tensor(v) for k, v in arrs.items()})
        return float(out.data)

    worst = 0.0
    for key, base in inputs.items():
        analytic = tensors[key].grad
        assert analytic is not None, f"no gradient reached input {key!r}"
        numeric = np.zeros_like(base)
        flat = numeric.ravel()
        work = {k: v.copy() for k, v in inputs.items()}
        wflat = work[key].ravel()
        for i in range(wflat.size):
            orig = wflat[i]
            wflat[i] = orig + h
            fp = evaluate(work)
            wflat[i] = orig - h
            fm = evaluate(work)
            wflat[i] = orig
            flat[i] = (fp - fm) / (2.0 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _proj(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum_all(T.hadamard(out, Tensor(weights)))


def _u(rng: Rng, shape):
    return rng.uniform(-1.0, 1.0, shape, dtype=np.float64)


# ---------------------------------------------------------------------------
# individual checks; each takes an Rng and returns a max relative error


def check_add(rng: Rng) -> float:
    r = _u(rng, (3, 4))
    return check_gradients(
        lambda t: _proj(T.add(t["a"], t["b"]), r),
        {"a": _u(rng, (3, 4)), "b": _u(rng, (3, 4))})


def check_hadamard(rng: Rng) -> float:
    r = _u(rng, (3, 4))
    return check_gradients(
        lambda t: _proj(T.hadamard(t["a"], t["b"]), r),
        {"a": _u(rng, (3, 4)), "b": _u(rng, (3, 4))})


def check_sigmoid(rng: Rng) -> float:
    r = _u(rng, (4, 5))
    return check_gradients(
        lambda t: _proj(T.sigmoid(t["x"]), r), {"x": 3.0 * _u(rng, (4, 5))})


def check_tanh(rng: Rng) -> float:
    r = _u(rng, (4, 5))
    return check_gradients(
        lambda t: _proj(T.tanh(t["x"]), r), {"x": 3.0 * _u(rng, (4, 5))})


def check_concat(rng: Rng) -> float:
    r = _u(rng, (5, 3))
    return check_gradients(
        lambda t: _proj(T.concat([t["a"], t["b"]], axis=0), r),
        {"a": _u(rng, (2, 3)), "b": _u(rng, (3, 3))})


def check_stack(rng: Rng) -> float:
    r = _u(rng, (2, 3, 4))
    return check_gradients(
        lambda t: _proj(T.stack([t["a"], t["b"]], axis=0), r),
        {"a": _u(rng, (3, 4)), "b": _u(rng, (3, 4))})


def check_global_avg_pool(rng: Rng) -> float:
    r = _u(rng, (3,))
    return check_gradients(
        lambda t: _proj(T.global_avg_pool(t["x"]), r), {"x": _u(rng, (3, 4, 5))})


def check_softmax_cross_entropy(rng: Rng) -> float:
    label = int(rng.integers(0, 7))
    return check_gradients(
        lambda t: T.softmax_cross_entropy(t["z"], label), {"z": 2.0 * _u(rng, (7,))})


def check_conv2d(rng: Rng) -> float:
    r = _u(rng, (3, 3, 3))
    return check_gradients(
        lambda t: _proj(T.conv2d(t["x"], t["w"], t["b"], stride=2, padding=1), r),
        {"x": _u(rng, (2, 5, 5)), "w": _u(rng, (3, 2, 3, 3)), "b": _u(rng, (3,))})


def check_conv3d(rng: Rng) -> float:
    r = _u(rng, (2, 2, 4, 4))
    return check_gradients(
        lambda t: _proj(T.conv3d(t["x"], t["w"], t["b"], spatial_padding=1), r),
        {"x": _u(rng, (2, 3, 4, 4)), "w": _u(rng, (2, 2, 2, 3, 3)), "b": _u(rng, (2,))})


def check_max_pool2d(rng: Rng) -> float:
    r = _u(rng, (2, 2, 2))
    # resample until window maxima are separated by >> h, so the central
    # difference never straddles an argmax flip
    while True:
        x = _u(rng, (2, 5, 5))
        gaps = np.diff(np.sort(x.reshape(2, -1), axis=1), axis=1)
        if gaps.min() > 1e-3:
            break
    return check_gradients(lambda t: _proj(T.max_pool2d(t["x"], 3, 2), r), {"x": x})


def check_lrn(rng: Rng) -> float:
    r = _u(rng, (6, 3, 3))
    return check_gradients(
        lambda t: _proj(T.lrn(t["x"], n=5, k=2.0, alpha=1e-2, beta=0.75), r),
        {"x": _u(rng, (6, 3, 3))})


def check_pad2d(rng: Rng) -> float:
    r = _u(rng, (2, 6, 7))
    return check_gradients(
        lambda t: _proj(T.pad2d(t["x"], 1, 2, 1, 3), r), {"x": _u(rng, (2, 3, 3))})


def check_composite(rng: Rng) -> float:
    # conv2d -> sigmoid -> global average pool chain
    r = _u(rng, (3,))
    return check_gradients(
        lambda t: _proj(T.global_avg_pool(T.sigmoid(
            T.conv2d(t["x"], t["w"], t["b"], stride=1, padding=1))), r),
        {"x": _u(rng, (2, 4, 4)), "w": _u(rng, (3, 2, 3, 3)), "b": _u(rng, (3,))})


def check_convlstm_step(rng: Rng) -> float:
    c_in, c_h, k, hw = 2, 2, 3, 3
    names = {}
    for gate in ("i", "f", "g", "o"):
        names[f"convlstm.{gate}.wx"] = _u(rng, (c_h, c_in, k, k))
        names[f"convlstm.{gate}.wh"] = _u(rng, (c_h, c_h, k, k))
        names[f"convlstm.{gate}.bias"] = _u(rng, (c_h,))
    inputs = dict(names)
    inputs["x"] = _u(rng, (c_in, hw, hw))
    inputs["h0"] = _u(rng, (c_h, hw, hw))
    inputs["c0"] = _u(rng, (c_h, hw, hw))
    rh = _u(rng, (c_h, hw, hw))
    rc = _u(rng, (c_h, hw, hw))

    def build(t):
        cell = ConvLSTMCell({k2: t[k2] for k2 in names}, c_in, c_h, k)
        state = convlstm_step(cell, t["x"], ConvLSTMState(h=t["h0"], c=t["c0"]))
        return T.add(_proj(state.h, rh), _proj(state.c, rc))

    return check_gradients(build, inputs)


CHECKS = {
    "add": (check_add, TOL_SMOOTH),
    "hadamard": (check_hadamard, TOL_SMOOTH),
    "sigmoid": (check_sigmoid, TOL_SMOOTH),
    "tanh": (check_tanh, TOL_SMOOTH),
    "concat": (check_concat, TOL_SMOOTH),
    "stack": (check_stack, TOL_SMOOTH),
    "pad2d": (check_pad2d, TOL_SMOOTH),
    "global_avg_pool": (check_global_avg_pool, TOL_SMOOTH),
    "softmax_cross_entropy": (check_softmax_cross_entropy, TOL_SMOOTH),
    "conv2d": (check_conv2d, TOL_COMPOUND),
    "conv3d": (check_conv3d, TOL_COMPOUND),
    "max_pool2d": (check_max_pool2d, TOL_COMPOUND),
    "lrn": (check_lrn, TOL_COMPOUND),
    "composite": (check_composite, TOL_COMPOUND),
    "convlstm_step": (check_convlstm_step, TOL_COMPOUND),
}


def run_check(name: str, seed: int = 0, trials: int = 20):
    """(max relative error over trials, tolerance, passed)."""
    fn, tol = CHECKS[name]
    master = Rng(seed)
    worst = 0.0
    for t in range(trials):
        worst = max(worst, fn(master.split(t + 1)))
    return worst, tol, worst <= tol


def run_all(seed: int = 0, trials: int = 20):
    return {name: run_check(name, seed, trials) for name in CHECKS}
