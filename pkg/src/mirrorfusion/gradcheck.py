"""Central finite-difference verification for every differentiable op.

The autodiff gradient under test runs at the requested precision; the
finite-difference oracle always evaluates the loss in float64 so the check
measures the gradient's error, not the oracle's.  Step sizes follow the
engine contract: 1e-3 when checking the float32 path, 1e-5 for float64.
"""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

STEP_32 = 1e-3
STEP_64 = 1e-5
TOL_32 = 1e-3
TOL_64 = 1e-6


def relative_error(ad: np.ndarray, fd: np.ndarray) -> float:
    ad = np.asarray(ad, dtype=np.float64).reshape(-1)
    fd = np.asarray(fd, dtype=np.float64).reshape(-1)
    scale = max(np.abs(ad).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-12)
    return float(np.abs(ad - fd).max(initial=0.0) / scale)


def check_gradients(build: Callable[[list[Tensor]], Tensor],
                    masters: list[np.ndarray], dtype) -> float:
    """Return the max relative error between autodiff and FD grads.

    ``build`` maps input tensors to a scalar loss; ``masters`` are float32
    arrays (exactly representable in both precisions).
    """
    dtype = np.dtype(dtype).type
    step = STEP_32 if dtype == np.float32 else STEP_64

    with T.precision(dtype):
        inputs = [Tensor(m.astype(dtype), requires_grad=True) for m in masters]
        loss = build(inputs)
        if loss.size != 1:
            raise ValueError("gradcheck build() must return a scalar")
        loss.backward()
        grads = [np.zeros_like(m, dtype=np.float64) if t.grad is None
                 else t.grad.astype(np.float64) for t, m in zip(inputs, masters)]

    def loss64(arrays):
        with T.precision(np.float64), T.no_grad():
            return build([Tensor(a) for a in arrays]).item()

    worst = 0.0
    base = [m.astype(np.float64) for m in masters]
    for i, m in enumerate(base):
        fd = np.zeros_like(m)
        flat = m.reshape(-1)
        fd_flat = fd.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss64(base)
            flat[j] = orig - step
            down = loss64(base)
            flat[j] = orig
            fd_flat[j] = (up - down) / (2.0 * step)
        worst = max(worst, relative_error(grads[i], fd))
    return worst


# -- builders for the op suite ------------------------------------------------

def _r(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


def _weighted(out: Tensor, rng) -> Tensor:
    w = np.asarray(rng.standard_normal(out.shape), dtype=out.data.dtype)
    return T.tsum(out * Tensor(w))


def _op_cases(seed: int) -> dict[str, tuple]:
    """name -> (masters, build) pairs; inputs nudged off non-smooth points."""
    rng = np.random.default_rng(seed)
    cases: dict[str, tuple] = {}

    a, b = _r(rng, 2, 3, 4), _r(rng, 2, 3, 4)
    cases["add"] = ([a, b], lambda ts: _weighted(ts[0] + ts[1], np.random.default_rng(seed)))
    cases["sub"] = ([a, b], lambda ts: _weighted(ts[0] - ts[1], np.random.default_rng(seed)))
    cases["mul"] = ([a, b], lambda ts: _weighted(ts[0] * ts[1], np.random.default_rng(seed)))

    bc = _r(rng, 2, 1, 4)
    cases["mul_broadcast"] = ([a, bc], lambda ts: _weighted(ts[0] * ts[1],
                                                            np.random.default_rng(seed)))
    sc = _r(rng)  # rank-0 scalar operand
    cases["mul_scalar"] = ([a, sc], lambda ts: _weighted(ts[0] * ts[1],
                                                         np.random.default_rng(seed)))

    cases["sigmoid"] = ([a], lambda ts: _weighted(T.sigmoid(ts[0]), np.random.default_rng(seed)))
    off = a + np.sign(a) * 0.05 + (a == 0) * 0.1  # keep away from the relu kink
    cases["relu"] = ([off.astype(np.float32)],
                     lambda ts: _weighted(T.relu(ts[0]), np.random.default_rng(seed)))
    cases["exp"] = ([(0.3 * a).astype(np.float32)],
                    lambda ts: _weighted(T.exp(ts[0]), np.random.default_rng(seed)))
    pos = (np.abs(a) + 0.5).astype(np.float32)
    cases["log"] = ([pos], lambda ts: _weighted(T.log(ts[0]), np.random.default_rng(seed)))
    far = np.where(np.abs(np.abs(a) - 1.0) < 0.05, a * 1.2, a).astype(np.float32)
    cases["clamp"] = ([far], lambda ts: _weighted(T.clamp(ts[0], -1.0, 1.0),
                                                  np.random.default_rng(seed)))

    m1, m2 = _r(rng, 4, 5), _r(rng, 5, 3)
    cases["matmul"] = ([m1, m2], lambda ts: _weighted(T.matmul(ts[0], ts[1]),
                                                      np.random.default_rng(seed)))

    sx = _r(rng, 3, 6)
    cases["softmax"] = ([sx], lambda ts: _weighted(T.softmax(ts[0], axis=1),
                                                   np.random.default_rng(seed)))

    cases["reshape"] = ([a], lambda ts: _weighted(ts[0].reshape(4, 6),
                                                  np.random.default_rng(seed)))
    cases["concat"] = ([a, b], lambda ts: _weighted(T.concat([ts[0], ts[1]], axis=0),
                                                    np.random.default_rng(seed)))
    cases["slice"] = ([a], lambda ts: _weighted(T.slice_axis(ts[0], 1, 1, 3),
                                                np.random.default_rng(seed)))

    gx = _r(rng, 3, 5)
    gidx = np.random.default_rng(seed + 1).integers(0, 5, size=(4, 3))  # has duplicates
    cases["gather"] = ([gx], lambda ts: _weighted(T.gather(ts[0], 1, gidx),
                                                  np.random.default_rng(seed)))

    cases["sum_axis"] = ([a], lambda ts: _weighted(ts[0].sum(axis=1),
                                                   np.random.default_rng(seed)))
    cases["mean_all"] = ([a], lambda ts: ts[0].mean())
    cases["global_avg_pool"] = ([a], lambda ts: _weighted(T.global_avg_pool(ts[0]),
                                                          np.random.default_rng(seed)))
    cases["upsample_bilinear"] = ([a], lambda ts: _weighted(
        T.upsample_bilinear(ts[0], 7, 9), np.random.default_rng(seed)))

    cx = _r(rng, 2, 6, 5)
    cw = (_r(rng, 3, 2, 3, 3) * 0.5).astype(np.float32)
    cb = _r(rng, 3)
    cases["conv2d"] = ([cx, cw, cb], lambda ts: _weighted(
        T.conv2d(ts[0], ts[1], ts[2], stride=1, padding=1), np.random.default_rng(seed)))
    cases["conv2d_strided_dilated"] = ([cx, cw, cb], lambda ts: _weighted(
        T.conv2d(ts[0], ts[1], ts[2], stride=2, padding=2, dilation=2),
        np.random.default_rng(seed)))

    # composite: conv -> sigmoid -> mean on a 2x4x4 input
    ex = _r(rng, 2, 4, 4)
    ew = (_r(rng, 2, 2, 3, 3) * 0.5).astype(np.float32)
    eb = _r(rng, 2)
    cases["conv_sigmoid_mean"] = ([ex, ew, eb], lambda ts: T.sigmoid(
        T.conv2d(ts[0], ts[1], ts[2], padding=1)).mean())

    return cases


def run_op_suite(dtype, seeds: int = 20, report: Callable[[str], None] = None) -> bool:
    """Check every engine op across `seeds` random draws; True when all pass."""
    tol = TOL_32 if np.dtype(dtype).type == np.float32 else TOL_64
    ok = True
    names = sorted(_op_cases(0).keys())
    for name in names:
        worst = 0.0
        for s in range(seeds):
            masters, build = _op_cases(1000 + s)[name]
            worst = max(worst, check_gradients(build, masters, dtype))
        passed = worst <= tol
        ok = ok and passed
        if report:
            report(f"  {name:<24} max rel err {worst:.3e}  "
                   f"{'ok' if passed else 'FAIL'} (tol {tol:g})")
    return ok


def run_model_check(dtype, probes: int = 20, seed: int = 7,
                    report: Callable[[str], None] = None) -> bool:
    """FD-check the full network's training loss on a 3x32x32 triple (width 8)."""
    from .config import EncoderConfig, TrainConfig
    from .losses import total_loss
    from .network import MirrorDetectionNet

    tol = TOL_32 if np.dtype(dtype).type == np.float32 else TOL_64
    step = STEP_32 if np.dtype(dtype).type == np.float32 else STEP_64
    cfg = TrainConfig(image_size=32, encoder=EncoderConfig(base_channels=8))
    rng = np.random.default_rng(seed)
    frames = [rng.random((3, 32, 32)).astype(np.float32) for _ in range(3)]
    masks = [(rng.random((1, 32, 32)) > 0.5).astype(np.float32) for _ in range(3)]

    def compute_loss(net) -> Tensor:
        preds = net.forward(Tensor(frames[0]), Tensor(frames[1]), Tensor(frames[2]))
        return total_loss(preds, masks)

    with T.precision(dtype):
        net = MirrorDetectionNet(cfg, np.random.default_rng(cfg.seed))
        loss = compute_loss(net)
        loss.backward()
        named = dict(net.named_parameters())
        names = sorted(named.keys())
        prng = np.random.default_rng(seed + 1)
        picks = []
        for _ in range(probes):
            nm = names[prng.integers(len(names))]
            picks.append((nm, int(prng.integers(named[nm].size))))
        ad = np.array([named[nm].grad.reshape(-1)[j] if named[nm].grad is not None else 0.0
                       for nm, j in picks], dtype=np.float64)

    fd = np.zeros(len(picks))
    with T.precision(np.float64), T.no_grad():
        net64 = MirrorDetectionNet(cfg, np.random.default_rng(cfg.seed))
        params64 = dict(net64.named_parameters())
        for i, (nm, j) in enumerate(picks):
            flat = params64[nm].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + step
            up = compute_loss(net64).item()
            flat[j] = orig - step
            down = compute_loss(net64).item()
            flat[j] = orig
            fd[i] = (up - down) / (2.0 * step)

    err = relative_error(ad, fd)
    passed = err <= tol
    if report:
        report(f"  full model ({np.dtype(dtype).name})  rel err {err:.3e}  "
               f"{'ok' if passed else 'FAIL'} (tol {tol:g})")
    return passed


def run_full_suite(report: Callable[[str], None] = print, seeds: int = 20) -> bool:
    """The gradient acceptance gate: all ops + the full model, both precisions."""
    t0 = time.time()
    ok = True
    for dtype in (np.float32, np.float64):
        if report:
            report(f"gradient checks, {np.dtype(dtype).name} "
                   f"(step {STEP_32 if dtype == np.float32 else STEP_64:g}):")
        ok = run_op_suite(dtype, seeds=seeds, report=report) and ok
        ok = run_model_check(dtype, report=report) and ok
    if report:
        report(f"gradient suite {'PASSED' if ok else 'FAILED'} in {time.time() - t0:.1f}s")
    return ok
