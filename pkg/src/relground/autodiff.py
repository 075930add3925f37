"""Minimal dense-tensor engine with reverse-mode differentiation.

Everything is float64 and CPU-bound on purpose: the models served by this
package are small enough that reproducibility and finite-difference
verification matter more than throughput.  All tensors are 2-D; vectors are
carried as single-row matrices so every op has one layout to reason about.
"""

import numpy as np

__all__ = [
    "Tensor", "constant", "affine", "matmul", "add", "mul", "scale_rows",
    "concat_cols", "concat_rows", "slice_cols", "select_rows", "tile_rows",
    "reshape", "tanh", "relu", "sigmoid", "activate", "softmax_rows",
    "softmax", "pool_regions", "mean_rows", "dropout", "cross_entropy_rows",
    "backward", "ParameterStore", "lstm_step", "AdamState", "adam_step",
    "grad_check",
]


class ShapeMismatch(ValueError):
    pass


class Tensor:
    """A node on the computation tape: a float64 matrix plus its backward rule."""

    __slots__ = ("data", "grad", "_backward", "_parents")

    def __init__(self, data, parents=()):
        self.data = data
        self.grad = None
        self._backward = None
        self._parents = parents

    @property
    def shape(self):
        return self.data.shape

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def constant(array):
    """Wrap a numpy array (or nested lists) as a leaf tensor."""
    a = np.ascontiguousarray(array, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeMismatch(f"tensors are 2-D, got shape {a.shape}")
    return Tensor(a)


def _check_2d(*ts):
    for t in ts:
        if t.data.ndim != 2:
            raise ShapeMismatch(f"expected 2-D tensor, got shape {t.data.shape}")


def affine(x, W, b):
    """y = x @ W + b with b broadcast over rows."""
    _check_2d(x, W, b)
    if x.data.shape[1] != W.data.shape[0]:
        raise ShapeMismatch(
            f"affine inner dims disagree: x {x.data.shape} vs W {W.data.shape}")
    if b.data.shape != (1, W.data.shape[1]):
        raise ShapeMismatch(
            f"affine bias shape {b.data.shape} does not match W {W.data.shape}")
    out = Tensor(x.data @ W.data + b.data, (x, W, b))

    def back(g):
        x.add_grad(g @ W.data.T)
        W.add_grad(x.data.T @ g)
        b.add_grad(g.sum(axis=0, keepdims=True))
    out._backward = back
    return out


def matmul(a, b):
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(
            f"matmul inner dims disagree: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def back(g):
        a.add_grad(g @ b.data.T)
        b.add_grad(a.data.T @ g)
    out._backward = back
    return out


def add(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, (a, b))

    def back(g):
        a.add_grad(g)
        b.add_grad(g)
    out._backward = back
    return out


def mul(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, (a, b))

    def back(g):
        a.add_grad(g * b.data)
        b.add_grad(g * a.data)
    out._backward = back
    return out


def scale_rows(x, v):
    """Multiply row i of x by scalar v[0, i]; v is a single-row vector."""
    n = x.data.shape[0]
    if v.data.shape != (1, n):
        raise ShapeMismatch(f"scale_rows needs v of shape (1, {n}), got {v.data.shape}")
    col = v.data.reshape(n, 1)
    out = Tensor(x.data * col, (x, v))

    def back(g):
        x.add_grad(g * col)
        v.add_grad((g * x.data).sum(axis=1).reshape(1, n))
    out._backward = back
    return out


def concat_cols(a, b):
    if a.data.shape[0] != b.data.shape[0]:
        raise ShapeMismatch(
            f"concat_cols row counts differ: {a.data.shape} vs {b.data.shape}")
    na = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1), (a, b))

    def back(g):
        a.add_grad(g[:, :na])
        b.add_grad(g[:, na:])
    out._backward = back
    return out


def concat_rows(tensors):
    tensors = list(tensors)
    widths = {t.data.shape[1] for t in tensors}
    if len(widths) != 1:
        raise ShapeMismatch(f"concat_rows column counts differ: {sorted(widths)}")
    splits = np.cumsum([t.data.shape[0] for t in tensors])[:-1]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors))

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=0)):
            t.add_grad(piece)
    out._backward = back
    return out


def slice_cols(x, start, stop):
    out = Tensor(x.data[:, start:stop], (x,))

    def back(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x.add_grad(full)
    out._backward = back
    return out


def select_rows(x, indices):
    """Gather rows by a fixed integer index list (duplicates allowed)."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(x.data[idx], (x,))

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x.add_grad(full)
    out._backward = back
    return out


def tile_rows(x, n):
    """Repeat a single-row tensor n times."""
    if x.data.shape[0] != 1:
        raise ShapeMismatch(f"tile_rows needs a single row, got {x.data.shape}")
    out = Tensor(np.repeat(x.data, n, axis=0), (x,))

    def back(g):
        x.add_grad(g.sum(axis=0, keepdims=True))
    out._backward = back
    return out


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape), (x,))

    def back(g):
        x.add_grad(g.reshape(x.data.shape))
    out._backward = back
    return out


def tanh(x):
    y = np.tanh(x.data)
    out = Tensor(y, (x,))

    def back(g):
        x.add_grad(g * (1.0 - y * y))
    out._backward = back
    return out


def relu(x):
    y = np.maximum(x.data, 0.0)
    out = Tensor(y, (x,))

    def back(g):
        x.add_grad(g * (x.data > 0.0))
    out._backward = back
    return out


def sigmoid(x):
    # Branch on sign so neither exp can overflow.
    pos = x.data >= 0.0
    z = np.exp(np.where(pos, -x.data, x.data))
    y = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))
    out = Tensor(y, (x,))

    def back(g):
        x.add_grad(g * y * (1.0 - y))
    out._backward = back
    return out


_ACTIVATIONS = {"tanh": tanh, "relu": relu, "sigmoid": sigmoid}


def activate(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax_rows(x):
    """Row-wise softmax with max subtraction for stability."""
    if x.data.shape[1] < 1:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, (x,))

    def back(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        x.add_grad((g - dot) * y)
    out._backward = back
    return out


def softmax(x):
    """Softmax of a single-row vector."""
    if x.data.shape[0] != 1:
        raise ShapeMismatch(f"softmax expects a single row, got {x.data.shape}")
    return softmax_rows(x)


def pool_regions(weights, feats, per_row):
    """Weighted sum of region features, one pooled row per frame.

    weights: (n, m) attention rows; feats: (n*m, d) stacked region features.
    Row i of the result is sum_j weights[i, j] * feats[i * m + j].
    """
    n, m = weights.data.shape
    if m != per_row or feats.data.shape[0] != n * m:
        raise ShapeMismatch(
            f"pool_regions got weights {weights.data.shape}, feats "
            f"{feats.data.shape}, per_row {per_row}")
    d = feats.data.shape[1]
    cube = feats.data.reshape(n, m, d)
    out = Tensor(np.einsum("nm,nmd->nd", weights.data, cube), (weights, feats))

    def back(g):
        weights.add_grad(np.einsum("nd,nmd->nm", g, cube))
        feats.add_grad((weights.data[:, :, None] * g[:, None, :]).reshape(n * m, d))
    out._backward = back
    return out


def mean_rows(x):
    n = x.data.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True), (x,))

    def back(g):
        x.add_grad(np.repeat(g / n, n, axis=0))
    out._backward = back
    return out


def dropout(x, rate, rng):
    """Inverted dropout with a mask drawn from rng; identity when rate == 0."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep, (x,))

    def back(g):
        x.add_grad(g * keep)
    out._backward = back
    return out


def cross_entropy_rows(logits, targets):
    """Mean negative log-likelihood of targets[i] under softmax(logits[i])."""
    t = np.asarray(targets, dtype=np.intp)
    n = logits.data.shape[0]
    if t.shape != (n,):
        raise ShapeMismatch(f"need {n} targets, got shape {t.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), t].mean()
    out = Tensor(np.array([[loss]]), (logits,))

    def back(g):
        scale = g[0, 0] / n
        grad = np.exp(logp)
        grad[np.arange(n), t] -= 1.0
        logits.add_grad(grad * scale)
    out._backward = back
    return out


def _topo_order(root):
    # Iterative DFS; recursion would overflow on long LSTM chains.
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Reverse-mode sweep seeding d(loss)/d(loss) = 1; loss must be 1x1."""
    if loss.data.shape != (1, 1):
        raise ShapeMismatch(f"backward needs a scalar loss, got {loss.data.shape}")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


class ParameterStore:
    """Named trainable leaves with seeded fan-in initialization.

    Iteration order is registration order, which keeps optimizer sweeps,
    checkpoints and gradient checks deterministic.
    """

    def __init__(self):
        self._params = {}

    def create(self, name, shape, rng=None, fan_in=None, bias_fill=None):
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        shape = tuple(shape)
        if bias_fill is not None:
            data = np.full(shape, float(bias_fill))
        elif rng is None:
            data = np.zeros(shape)
        else:
            fan = fan_in if fan_in is not None else shape[0]
            bound = 1.0 / np.sqrt(fan)
            data = rng.uniform(-bound, bound, size=shape)
        t = Tensor(np.ascontiguousarray(data, dtype=np.float64))
        self._params[name] = t
        return t

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grad_norm(self):
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        return np.sqrt(total)

    def clip_grad_norm(self, max_norm):
        norm = self.grad_norm()
        if norm > max_norm > 0.0:
            scale = max_norm / norm
            for t in self._params.values():
                if t.grad is not None:
                    t.grad *= scale
        return norm

    def state_arrays(self):
        return {name: t.data for name, t in self._params.items()}

    def load_arrays(self, arrays, strict=True):
        for name, value in arrays.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unknown parameter {name!r} in checkpoint")
                continue
            t = self._params[name]
            if t.data.shape != value.shape:
                raise ShapeMismatch(
                    f"parameter {name!r}: stored shape {value.shape} vs "
                    f"model shape {t.data.shape}")
            t.data = np.ascontiguousarray(value, dtype=np.float64)
        missing = set(self._params) - set(arrays)
        if strict and missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)}")


# Gate layout inside the fused LSTM weight matrices: columns are
# [input, forget, candidate, output], each a hidden-size block.

def lstm_gate_bias(hidden, forget_fill=1.0):
    """Initial fused-gate bias: zeros with the forget block offset."""
    b = np.zeros((1, 4 * hidden))
    b[0, hidden:2 * hidden] = forget_fill
    return b


def lstm_step(x, h, c, Wx, Wh, b):
    """One step of a standard gated cell; returns (h', c')."""
    k = h.data.shape[1]
    if Wx.data.shape != (x.data.shape[1], 4 * k) or Wh.data.shape != (k, 4 * k):
        raise ShapeMismatch(
            f"lstm_step weights {Wx.data.shape}/{Wh.data.shape} do not match "
            f"input {x.data.shape}/hidden {h.data.shape}")
    z = add(affine(x, Wx, b), matmul(h, Wh))
    i = sigmoid(slice_cols(z, 0, k))
    f = sigmoid(slice_cols(z, k, 2 * k))
    g = tanh(slice_cols(z, 2 * k, 3 * k))
    o = sigmoid(slice_cols(z, 3 * k, 4 * k))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(store, state):
    """Bias-corrected Adam update over every parameter carrying a gradient."""
    for name, t in store.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, t in store.items():
        g = t.grad
        if g is None:
            g = np.zeros_like(t.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data = t.data - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


WIDE_STEP = 1e-2  # step for the higher-order refinement pass


def grad_check(loss_fn, store, eps=1e-5):
    """Compare analytic gradients against central finite differences.

    loss_fn builds a fresh tape and returns the scalar loss tensor.  Returns
    the maximum relative error over every coordinate of every parameter,
    with denominator max(|analytic|, |numeric|, 1e-8).

    A single second-order difference at step eps cannot certify coordinates
    whose gradient sits below the cancellation floor ulp(loss)/(2 eps):
    against the 1e-8 denominator floor the rounding noise alone reads as a
    large relative error.  Those coordinates are re-measured with a
    fourth-order difference at a much wider step, which squeezes the noise
    below the floor but is wrong across relu kinks — so each coordinate is
    judged by the better of the two estimates.  A genuinely wrong gradient
    disagrees with both.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    first = loss_fn().item()
    second = loss_fn().item()
    if first != second:
        raise RuntimeError(
            f"loss is not deterministic: {first!r} != {second!r}")

    store.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in store.items()}

    def probe(flat, idx, step):
        keep = flat[idx]
        flat[idx] = keep + step
        value = loss_fn().item()
        flat[idx] = keep
        return value

    worst = 0.0
    for name, t in store.items():
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            a = a_flat[idx]
            numeric = (probe(flat, idx, eps)
                       - probe(flat, idx, -eps)) / (2.0 * eps)
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > 1e-6:
                h = WIDE_STEP
                wide = (probe(flat, idx, -2 * h) - 8 * probe(flat, idx, -h)
                        + 8 * probe(flat, idx, h)
                        - probe(flat, idx, 2 * h)) / (12.0 * h)
                rel = min(rel, abs(a - wide) / max(abs(a), abs(wide), 1e-8))
            worst = max(worst, rel)
    return worst
