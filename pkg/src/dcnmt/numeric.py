"""Dense float64 tensor operations with explicit backward passes.

Everything operates on plain 2-D numpy arrays (row-major, float64);
sequences are Python lists of 2-D arrays, so nothing in the package
needs tensors of rank above two.  Reverse-mode differentiation is
realized as hand-written per-operation backward functions composed over
caches recorded during the forward pass, and ``grad_check`` verifies any
composite loss against central finite differences.

Randomness comes from numpy's PCG64 generator: the same seed yields the
same draw sequence on every platform.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "make_rng",
    "matmul",
    "softmax",
    "sigmoid",
    "Parameter",
    "LstmCell",
    "init_lstm_cell",
    "lstm_step",
    "dropout",
    "run_lstm_stack",
    "grad_check",
    "zero_grads",
    "global_grad_norm",
    "clip_grads",
    "sgd_step",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A forward or backward pass produced a non-finite value."""


def make_rng(seed, *stream):
    """Seeded PCG64 generator.

    Identical ``(seed, *stream)`` arguments give bit-identical draw
    sequences across platforms.  Extra ``stream`` integers derive
    independent substreams (e.g. one per training epoch).
    """
    entropy = [int(seed)] + [int(s) for s in stream]
    if any(e < 0 for e in entropy):
        raise ValueError("rng seed components must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _as_matrix(x, name="operand"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    """Matrix product with an explicit inner-dimension check."""
    a = _as_matrix(a, "left operand")
    b = _as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b


def softmax(v):
    """Row-wise softmax with max-subtraction for overflow safety."""
    a = np.asarray(v, dtype=np.float64)
    if a.size == 0:
        raise ValueError("softmax of an empty input")
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Parameter:
    """A named trainable tensor together with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ShapeError(f"parameter '{name}' must be 2-D, got {self.value.shape}")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def zero_grads(params):
    for p in params:
        p.grad[...] = 0.0


def global_grad_norm(params):
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_grads(params, max_norm):
    """Scale all gradients so the global norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    params = list(params)
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


def sgd_step(params, lr):
    for p in params:
        p.value -= lr * p.grad


class LstmCell:
    """One LSTM layer's weights; gate blocks ordered [input, forget, output, candidate].

    ``W`` maps the input (input_dim x 4*hidden), ``U`` the previous hidden
    state (hidden x 4*hidden) and ``b`` is the bias (1 x 4*hidden).  The
    gate order is part of the serialized format and never changes.
    """

    __slots__ = ("W", "U", "b")

    def __init__(self, W, U, b):
        self.W = W
        self.U = U
        self.b = b
        h = self.hidden_dim
        if W.value.shape[1] != 4 * h or U.value.shape != (h, 4 * h) or b.value.shape != (1, 4 * h):
            raise ShapeError(
                f"inconsistent LSTM cell shapes W={W.value.shape} U={U.value.shape} b={b.value.shape}"
            )

    @property
    def input_dim(self):
        return self.W.value.shape[0]

    @property
    def hidden_dim(self):
        return self.U.value.shape[0]

    def parameters(self):
        return [self.W, self.U, self.b]


def init_lstm_cell(rng, name, input_dim, hidden_dim, init_scale=0.1, forget_bias=1.0):
    """Uniform(-init_scale, init_scale) weights; forget-gate bias set to ``forget_bias``."""
    W = Parameter(f"{name}.W", rng.uniform(-init_scale, init_scale, (input_dim, 4 * hidden_dim)))
    U = Parameter(f"{name}.U", rng.uniform(-init_scale, init_scale, (hidden_dim, 4 * hidden_dim)))
    b = np.zeros((1, 4 * hidden_dim))
    b[0, hidden_dim : 2 * hidden_dim] = forget_bias
    return LstmCell(W, U, Parameter(f"{name}.b", b))


def _lstm_forward(cell, x, h, c):
    H = cell.hidden_dim
    z = x @ cell.W.value + h @ cell.U.value + cell.b.value
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    o = sigmoid(z[:, 2 * H : 3 * H])
    g = np.tanh(z[:, 3 * H :])
    c2 = f * c + i * g
    tc2 = np.tanh(c2)
    h2 = o * tc2
    return h2, c2, (x, h, c, i, f, o, g, tc2)


def _lstm_backward(cell, dh2, dc2, cache):
    """Accumulates weight gradients on the cell; returns (dx, dh, dc)."""
    x, h, c, i, f, o, g, tc2 = cache
    do = dh2 * tc2
    dc_total = dc2 + dh2 * o * (1.0 - tc2 * tc2)
    di = dc_total * g
    dg = dc_total * i
    df = dc_total * c
    dc = dc_total * f
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)],
        axis=1,
    )
    cell.W.grad += x.T @ dz
    cell.U.grad += h.T @ dz
    cell.b.grad += dz.sum(axis=0, keepdims=True)
    return dz @ cell.W.value.T, dz @ cell.U.value.T, dc


def lstm_step(cell, x, h, c):
    """Single LSTM transition: returns (h', c').

    i, f, o are sigmoid gates, g the tanh candidate; c' = f*c + i*g and
    h' = o*tanh(c').  Inputs are (B, input_dim) / (B, hidden_dim) rows.
    """
    x = _as_matrix(x, "x")
    h = _as_matrix(h, "h")
    c = _as_matrix(c, "c")
    H = cell.hidden_dim
    if x.shape[1] != cell.input_dim or h.shape[1] != H or c.shape[1] != H:
        raise ShapeError(
            f"lstm_step: x{x.shape} h{h.shape} c{c.shape} do not fit cell "
            f"(input_dim={cell.input_dim}, hidden_dim={H})"
        )
    h2, c2, _ = _lstm_forward(cell, x, h, c)
    return h2, c2


def _dropout_forward(x, p, rng):
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep, keep


def dropout(x, p, rng=None, training=True):
    """Inverted dropout: zero entries with probability ``p``, scale survivors by 1/(1-p).

    Identity when ``training`` is false or ``p`` is zero.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = np.asarray(x, dtype=np.float64)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    y, _ = _dropout_forward(x, p, rng)
    return y


def _stack_forward(cells, inputs, dropout_p, rng, training, reverse=False):
    """Run a stacked LSTM over a sequence of (B, d) inputs.

    Dropout is applied to a layer's outputs before they feed the next
    layer (never after the top layer).  With ``reverse`` the sequence is
    processed right-to-left but outputs are returned in input order.

    Returns (outputs, finals, cache) where ``outputs`` is the top layer's
    per-position hidden states and ``finals`` is [(h, c)] per layer at the
    last processed position.
    """
    if not inputs:
        raise ValueError("empty input sequence")
    seq = list(reversed(inputs)) if reverse else list(inputs)
    B = seq[0].shape[0]
    n = len(cells)
    layer_caches = []
    finals = []
    cur = seq
    for li, cell in enumerate(cells):
        H = cell.hidden_dim
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        outs = []
        steps = []
        for x in cur:
            h, c, sc = _lstm_forward(cell, x, h, c)
            outs.append(h)
            steps.append(sc)
        finals.append((h, c))
        if li < n - 1 and training and dropout_p > 0.0:
            masks = []
            nxt = []
            for o in outs:
                y, m = _dropout_forward(o, dropout_p, rng)
                nxt.append(y)
                masks.append(m)
        else:
            masks = None
            nxt = outs
        layer_caches.append((steps, masks))
        cur = nxt
    outputs = list(reversed(cur)) if reverse else list(cur)
    cache = (cells, layer_caches, reverse)
    return outputs, finals, cache


def run_lstm_stack(cells, inputs, dropout_p=0.0, rng=None, training=False, reverse=False):
    """Forward-only stacked LSTM run; see ``_stack_forward``."""
    outputs, finals, _ = _stack_forward(cells, inputs, dropout_p, rng, training, reverse)
    return outputs, finals


def _stack_backward(cache, d_outputs, d_finals=None):
    """Backward through ``_stack_forward``.

    ``d_outputs`` are gradients w.r.t. the top layer's outputs in input
    order; ``d_finals`` optionally adds per-layer gradients on the final
    (h, c) states.  Weight gradients accumulate on the cells; returns
    gradients w.r.t. the stack inputs, in input order.
    """
    cells, layer_caches, reverse = cache
    n = len(cells)
    d_above = None
    d_top = list(reversed(d_outputs)) if reverse else list(d_outputs)
    for li in reversed(range(n)):
        steps, masks = layer_caches[li]
        T = len(steps)
        if li == n - 1:
            d_outs = [d.copy() for d in d_top]
        else:
            if masks is not None:
                d_outs = [d * m for d, m in zip(d_above, masks)]
            else:
                d_outs = [d.copy() for d in d_above]
        B, H = steps[0][3].shape[0], cells[li].hidden_dim
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        if d_finals is not None:
            dfh, dfc = d_finals
            d_outs[T - 1] = d_outs[T - 1] + dfh[li]
            dc_next = dc_next + dfc[li]
        dxs = [None] * T
        for t in reversed(range(T)):
            dh = d_outs[t] + dh_next
            dx, dh_next, dc_next = _lstm_backward(cells[li], dh, dc_next, steps[t])
            dxs[t] = dx
        d_above = dxs
    return list(reversed(d_above)) if reverse else d_above


def grad_check(loss_fn, params, eps=1e-5):
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn()`` must return the scalar loss and, via its backward pass,
    leave analytic gradients accumulated on ``params``; it must be
    deterministic across calls (disable dropout).  For every entry the
    analytic value a is compared against n = (f(t+eps) - f(t-eps)) / (2*eps)
    using |a - n| / max(|a|, |n|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    zero_grads(params)
    base = float(loss_fn())
    if not np.isfinite(base):
        raise NumericError(f"loss is non-finite: {base}")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = float(loss_fn())
            flat[idx] = orig - eps
            f_minus = float(loss_fn())
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(
                    f"loss is non-finite near parameter '{p.name}' entry {idx}"
                )
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = gflat[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    zero_grads(params)
    return worst
