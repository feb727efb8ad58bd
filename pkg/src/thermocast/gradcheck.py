"""Central finite-difference checks of every differentiable op and model forward.

Relative error per element is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
The floor keeps round-off in near-zero gradients from counting as failures;
losses in the suite are weighted sums of order one, so ``floor=1e-4`` leaves
a real error of 1e-8 detectable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .data import WindowBatch
from .models import ModelConfig, build_forecaster
from .tensor import Tensor

EPS = 1e-6
TOLERANCE = 1e-4
FLOOR = 1e-4


def numerical_gradient(fn: Callable[[], float], x: Tensor, eps: float = EPS) -> np.ndarray:
    """d fn / d x by central differences, perturbing ``x.data`` in place."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@dataclass
class CheckResult:
    name: str
    worst_error: float
    worst_at: str
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.worst_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<24} worst rel err {self.worst_error:.3e} at {self.worst_at} ({self.seconds:.2f}s)"


def check_gradients(
    name: str, loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor], eps: float = EPS, tolerance: float = TOLERANCE
) -> CheckResult:
    """Compare backward() against central differences for every tensor in ``tensors``."""
    start = time.perf_counter()
    for t in tensors.values():
        t.requires_grad = True
        t.grad = None
    T.backward(loss_fn())
    worst, where = 0.0, "-"
    with T.no_grad():
        for tname, t in tensors.items():
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            numeric = numerical_gradient(lambda: loss_fn().item(), t, eps)
            err = relative_error(analytic, numeric)
            i = int(np.argmax(err)) if err.size else 0
            if err.size and err.reshape(-1)[i] > worst:
                worst, where = float(err.reshape(-1)[i]), f"{tname}[{i}]"
    return CheckResult(name, worst, where, time.perf_counter() - start, tolerance)


# ------------------------------------------------------------------- suite


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return T.reduce_sum(out * Tensor(w))


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.uniform(-2, 2, shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


def _op_cases(rng: np.random.Generator):
    u = lambda *s: Tensor(rng.uniform(-2, 2, s))  # noqa: E731
    cases = []

    def binary(kind, b_shape=(3, 4)):
        a, b = u(3, 4), u(*b_shape)
        if kind == "div":
            b = Tensor(rng.uniform(0.5, 2, b_shape) * rng.choice([-1, 1], b_shape))
        w = rng.normal(size=(3, 4))
        return kind, (lambda: _weighted(T.elementwise(kind, a, b), w)), {"a": a, "b": b}

    for kind in ("add", "sub", "mul", "div"):
        cases.append(binary(kind))
    cases.append(("mul_broadcast",) + binary("mul", (4,))[1:])

    for kind in ("sigmoid", "tanh", "relu", "abs"):
        a = Tensor(_away_from_zero(rng, (3, 4)))
        w = rng.normal(size=(3, 4))
        cases.append((kind, (lambda a=a, w=w, kind=kind: _weighted(T.elementwise(kind, a), w)), {"a": a}))

    a, b, w = u(3, 3), u(3, 3), rng.normal(size=(3, 3))
    cases.append(("matmul", lambda: _weighted(T.matmul(a, b), w), {"a": a, "b": b}))
    a2, b2, w2 = u(2, 3, 4, 5), u(2, 3, 5, 2), rng.normal(size=(2, 3, 4, 2))
    cases.append(("matmul_batched", lambda: _weighted(T.matmul(a2, b2), w2), {"a": a2, "b": b2}))
    a3, b3, w3 = u(2, 4, 5), u(5, 3), rng.normal(size=(2, 4, 3))
    cases.append(("matmul_shared", lambda: _weighted(T.matmul(a3, b3), w3), {"a": a3, "b": b3}))

    s, ws = u(2, 3, 5), rng.normal(size=(2, 3, 5))
    cases.append(("softmax", lambda: _weighted(T.softmax(s, -1), ws), {"a": s}))
    cases.append(("softmax_axis1", lambda: _weighted(T.softmax(s, 1), ws), {"a": s}))

    c1, c2, wc = u(2, 3), u(2, 2), rng.normal(size=(2, 5))
    cases.append(("concat", lambda: _weighted(T.concat([c1, c2], axis=1), wc), {"a": c1, "b": c2}))
    sp, wsp = u(4, 6), rng.normal(size=(4, 3))
    cases.append(("split", lambda: _weighted(T.split(sp, 2, axis=1)[1] * T.split(sp, 2, axis=1)[0], wsp), {"a": sp}))
    sl, wsl = u(5, 3), rng.normal(size=(2, 3))
    cases.append(("slice", lambda: _weighted(T.slice_axis(sl, 1, 3, 0), wsl), {"a": sl}))
    fl, wfl = u(2, 3, 4), rng.normal(size=(2, 12))
    cases.append(("flatten", lambda: _weighted(T.flatten(fl, 1), wfl), {"a": fl}))
    tr, wtr = u(2, 3, 4), rng.normal(size=(2, 4, 3))
    cases.append(("transpose_last_two", lambda: _weighted(T.transpose_last_two(tr), wtr), {"a": tr}))

    r, wr = u(3, 4), rng.normal(size=4)
    cases.append(("sum", lambda: _weighted(T.reduce_sum(r, 0), wr), {"a": r}))
    cases.append(("mean", lambda: _weighted(T.reduce_mean(r, 0), wr), {"a": r}))
    wn = rng.normal(size=(3, 1))
    cases.append(("l2norm", lambda: _weighted(T.l2norm(r, -1, keepdims=True), wn), {"a": r}))

    table, wt = u(5, 3), rng.normal(size=(4, 3))
    ids = np.array([0, 3, 3, 1])
    cases.append(("take_rows", lambda: _weighted(T.take_rows(table, ids), wt), {"table": table}))
    return cases


def _block_cases(rng: np.random.Generator):
    cases = []
    x = Tensor(rng.uniform(-2, 2, (2, 5, 8)))
    w = rng.normal(size=(2, 5, 8))

    rot = nn.RotaryEncoder(8)
    rx = Tensor(rng.uniform(-2, 2, (2, 2, 5, 8)))
    wrx = rng.normal(size=(2, 2, 5, 8))
    cases.append(("rope", lambda: _weighted(rot.apply(rx, 3), wrx), {"x": rx}))

    lin = nn.Linear(8, 4, rng)
    wl = rng.normal(size=(2, 5, 4))
    cases.append(("linear", lambda: _weighted(lin(x), wl), {"x": x, **dict(lin.named_parameters())}))

    norm = nn.ScaleNorm(8)
    cases.append(("scalenorm", lambda: _weighted(norm(x), w), {"x": x, **dict(norm.named_parameters())}))

    glu = nn.GluFeedForward(8, 16, rng)
    cases.append(("glu_feedforward", lambda: _weighted(glu(x), w), {"x": x, **dict(glu.named_parameters())}))

    attn = nn.MultiHeadAttention(8, 2, rng)
    kv = Tensor(rng.uniform(-2, 2, (2, 7, 8)))
    cases.append(
        ("attention", lambda: _weighted(attn(x, kv, 7, 0), w), {"q_src": x, "kv_src": kv, **dict(attn.named_parameters())})
    )

    enc = [nn.EncoderBlock(8, 2, 16, rng) for _ in range(2)]
    dec = [nn.DecoderBlock(8, 2, 16, rng) for _ in range(2)]

    def stack():
        h = kv
        for blk in enc:
            h = blk(h)
        z = x
        for blk in dec:
            z = blk(z, h, offset=7)
        return _weighted(z, w)

    params = {"x": x, "kv": kv}
    for i, blk in enumerate(enc + dec):
        params.update({f"block{i}.{k}": v for k, v in blk.named_parameters()})
    cases.append(("encoder_decoder_stack", stack, params))

    layer = nn.LstmLayer(3, 4, rng)
    lx = Tensor(rng.uniform(-2, 2, (2, 5, 3)))
    h0, c0 = Tensor(rng.uniform(-1, 1, (2, 4))), Tensor(rng.uniform(-1, 1, (2, 4)))
    wlx = rng.normal(size=(2, 5, 2, 4))
    cases.append(
        (
            "lstm_sequence",
            lambda: _weighted(layer(lx, h0, c0), wlx),
            {"x": lx, "h0": h0, "c0": c0, **dict(layer.named_parameters())},
        )
    )
    lstack = nn.LstmStack(3, 4, 2, rng)
    wls = rng.normal(size=(2, 5, 4))

    def lstm_stack_loss():
        out, final = lstack(lx)
        return _weighted(out, wls) + T.reduce_sum(final[0][1])

    cases.append(("lstm_stack", lstm_stack_loss, {"x": lx, **dict(lstack.named_parameters())}))
    return cases


def reduced_batch(rng: np.random.Generator, k: int = 12, n: int = 4, past: int = 6, future: int = 3, rooms: int = 3, size: int = 2):
    return WindowBatch(
        past=rng.uniform(0, 1, (size, k, past)),
        future=rng.uniform(0, 1, (size, n, future)),
        target=rng.uniform(0, 1, (size, n)),
        room_id=rng.integers(0, rooms, size),
        last_value=rng.uniform(0, 1, size),
    )


def reduced_config(kind: str, **kw) -> ModelConfig:
    base = dict(
        kind=kind, past_channels=6, future_channels=3, num_rooms=3, k=12, n=4, d_model=8, heads=2,
        encoder_blocks=2, decoder_blocks=2, ff_width=16, lstm_layers=2, lstm_units=8, head_hidden=16,
        use_room_embedding=(kind == "transformer"),
    )
    base.update(kw)
    return ModelConfig(**base)


def _model_cases(rng: np.random.Generator):
    cases = []
    batch = reduced_batch(rng)
    w = rng.normal(size=(2, 4))
    for kind in ("transformer", "lstm"):
        model = build_forecaster(reduced_config(kind), rng)
        cases.append((f"{kind}_forecaster", lambda m=model: _weighted(m.forecast(batch), w), dict(model.named_parameters())))
    return cases


def gradcheck_suite(seed: int = 0) -> list[tuple[str, Callable[[], Tensor], dict[str, Tensor]]]:
    rng = np.random.default_rng(seed)
    return _op_cases(rng) + _block_cases(rng) + _model_cases(rng)


def run_gradcheck(seed: int = 0, fault: str | None = None, only: list[str] | None = None) -> list[CheckResult]:
    """Run every check; ``fault`` corrupts one op's backward to prove checks bite."""
    results = []
    for name, loss_fn, tensors in gradcheck_suite(seed):
        if only and name not in only:
            continue
        if fault:
            with T.inject_gradient_fault(fault):
                results.append(check_gradients(name, loss_fn, tensors))
        else:
            results.append(check_gradients(name, loss_fn, tensors))
    return results
