"""Minimal dense-tensor kernel with explicit gradient transforms.

This is not a general autodiff engine: it provides exactly the
differentiable operations the extraction pipeline needs. Each operation
returns a `Tensor` that remembers its inputs and a backward closure;
`backward()` runs the closures in reverse topological order and
accumulates gradients into `Parameter.grad` (and into intermediate
`Tensor.grad` slots for composition).

Every gradient transform here is checked against central finite
differences in the test suite (`grad_check`).
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError, NumericError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Diagnostics: number of empty pooling segments seen by piecewise_max_pool.
_empty_segments = 0


def empty_segment_count() -> int:
    return _empty_segments


def reset_empty_segment_count() -> None:
    global _empty_segments
    _empty_segments = 0


class Tensor:
    """Dense array plus reverse-mode bookkeeping.

    `data` is a numpy array (float32 or float64); `grad` is filled in
    lazily during the backward pass. Leaf tensors have no parents.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter:
    """Trainable array with paired gradient storage and Adam moments."""

    __slots__ = ("name", "value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, value, name: str = ""):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class RngState:
    """Seeded PCG64 stream; identical seed gives an identical stream.

    `split(*keys)` derives an independent child stream from the parent
    seed and the given keys (hashed with BLAKE2b), so per-bag streams do
    not depend on generation order.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def split(self, *keys) -> "RngState":
        material = ":".join([str(self.seed)] + [str(k) for k in keys])
        digest = hashlib.blake2b(material.encode("utf-8"), digest_size=8).digest()
        return RngState(int.from_bytes(digest, "little"))

    def get_state(self) -> dict:
        st = self.generator.bit_generator.state
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "state": str(st["state"]["state"]),
            "inc": str(st["state"]["inc"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, d: dict) -> "RngState":
        rng = cls(int(d["seed"]))
        rng.generator.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(d["state"]), "inc": int(d["inc"])},
            "has_uint32": int(d["has_uint32"]),
            "uinteger": int(d["uinteger"]),
        }
        return rng


def _acc(t: Tensor, g) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def tensor(data, dtype=None) -> Tensor:
    """Leaf tensor (no gradient flows past it)."""
    return Tensor(np.asarray(data, dtype=dtype))


def param_tensor(p: Parameter) -> Tensor:
    """View a Parameter as a leaf tensor that accumulates into p.grad."""
    out = Tensor(p.value)

    def bw(g):
        p.grad += g

    out._backward = bw
    return out


def backward(root: Tensor) -> None:
    """Reverse-mode pass from a scalar root."""
    if root.data.size != 1:
        raise ConfigError(f"backward root must be scalar, got shape {root.data.shape}")
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Forward operations


def linear(x: Tensor, W: Parameter, b: Parameter) -> Tensor:
    """y = W x + b for a vector x."""
    if x.data.ndim != 1 or W.value.ndim != 2 or W.value.shape[1] != x.data.shape[0]:
        raise ConfigError(f"linear: W shape {W.value.shape} incompatible with x shape {x.data.shape}")
    if b.value.shape != (W.value.shape[0],):
        raise ConfigError(f"linear: b shape {b.value.shape} incompatible with W shape {W.value.shape}")
    out = Tensor(W.value @ x.data + b.value, parents=(x,))

    def bw(g):
        W.grad += np.outer(g, x.data)
        b.grad += g
        _acc(x, W.value.T @ g)

    out._backward = bw
    return out


def linear_rows(X: Tensor, W: Parameter, b: Parameter) -> Tensor:
    """Row-batched affine map: [B, n_in] -> [B, n_out]."""
    if X.data.ndim != 2 or W.value.shape[1] != X.data.shape[1]:
        raise ConfigError(f"linear_rows: W shape {W.value.shape} incompatible with X shape {X.data.shape}")
    out = Tensor(X.data @ W.value.T + b.value, parents=(X,))

    def bw(g):
        W.grad += g.T @ X.data
        b.grad += g.sum(axis=0)
        _acc(X, g @ W.value)

    out._backward = bw
    return out


def conv1d(inp: Tensor, filters: Parameter) -> Tensor:
    """Valid 1-D convolution over token rows, stride 1.

    inp is [n, d]; filters is [K, l*d] with the window size l inferred
    from the filter width. Output is [K, n-l+1] where column i is the
    filter response on rows i..i+l-1.
    """
    n, d = inp.data.shape
    K, ld = filters.value.shape
    l = ld // d
    if l * d != ld or l < 1:
        raise ConfigError(f"conv1d: filter width {ld} is not a multiple of input depth {d}")
    if n < l:
        raise ConfigError(f"conv1d: input length {n} < window {l} (padding must prevent this)")
    m = n - l + 1
    X = np.empty((ld, m), dtype=inp.data.dtype)
    for k in range(l):
        X[k * d:(k + 1) * d, :] = inp.data[k:k + m].T
    out = Tensor(filters.value @ X, parents=(inp,))

    def bw(g):
        filters.grad += g @ X.T
        dX = filters.value.T @ g
        dinp = np.zeros_like(inp.data)
        v = dX.reshape(l, d, m)
        for k in range(l):
            dinp[k:k + m] += v[k].T
        _acc(inp, dinp)

    out._backward = bw
    return out


def max_pool(conv_out: Tensor) -> Tensor:
    """Row-wise max over columns; gradient routes to the first argmax."""
    c = conv_out.data
    if c.ndim != 2 or c.shape[1] < 1:
        raise ConfigError(f"max_pool: need a [K, m>=1] input, got {c.shape}")
    idx = np.argmax(c, axis=1)
    out = Tensor(c[np.arange(c.shape[0]), idx], parents=(conv_out,))

    def bw(g):
        dc = np.zeros_like(c)
        dc[np.arange(c.shape[0]), idx] = g
        _acc(conv_out, dc)

    out._backward = bw
    return out


def piecewise_max_pool(conv_out: Tensor, p1: int, p2: int) -> Tensor:
    """Per-segment row maxima over columns [0:p1-1], [p1:p2], [p2+1:m-1].

    Output is the concatenation of the three K-vectors in segment order
    (length 3K). An empty segment contributes zeros and bumps the
    module-level diagnostics counter.
    """
    global _empty_segments
    c = conv_out.data
    K, m = c.shape
    if not (0 <= p1 <= p2 <= m - 1):
        raise ConfigError(f"piecewise_max_pool: boundaries ({p1}, {p2}) out of range for {m} columns")
    bounds = [(0, p1), (p1, p2 + 1), (p2 + 1, m)]
    pieces = []
    argmaxes = []
    for lo, hi in bounds:
        if hi <= lo:
            _empty_segments += 1
            pieces.append(np.zeros(K, dtype=c.dtype))
            argmaxes.append(None)
        else:
            seg = c[:, lo:hi]
            idx = np.argmax(seg, axis=1) + lo
            pieces.append(c[np.arange(K), idx])
            argmaxes.append(idx)
    out = Tensor(np.concatenate(pieces), parents=(conv_out,))

    def bw(g):
        dc = np.zeros_like(c)
        for s, idx in enumerate(argmaxes):
            if idx is not None:
                dc[np.arange(K), idx] += g[s * K:(s + 1) * K]
        _acc(conv_out, dc)

    out._backward = bw
    return out


def tanh_act(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, parents=(x,))

    def bw(g):
        _acc(x, g * (1.0 - t * t))

    out._backward = bw
    return out


def log_softmax(scores: Tensor) -> Tensor:
    """Numerically stable log-softmax of a vector (max subtraction)."""
    s = scores.data
    if s.ndim != 1 or s.shape[0] < 1:
        raise ConfigError(f"log_softmax: need a non-empty vector, got shape {s.shape}")
    z = s - s.max()
    lse = np.log(np.sum(np.exp(z)))
    out = Tensor(z - lse, parents=(scores,))

    def bw(g):
        _acc(scores, g - np.exp(out.data) * g.sum())

    out._backward = bw
    return out


def log_softmax_np(s: np.ndarray) -> np.ndarray:
    """Detached (no-tape) log-softmax for inference paths."""
    z = s - s.max()
    return z - np.log(np.sum(np.exp(z)))


def dropout(x: Tensor, rate: float, rng: RngState, training: bool) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale survivors."""
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.generator.random(x.data.shape) >= rate
    mask = keep.astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * mask, parents=(x,))

    def bw(g):
        _acc(x, g * mask)

    out._backward = bw
    return out


def lookup(table: Parameter, ids) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.value.shape[0]):
        raise ConfigError(f"lookup: id out of range for table {table.value.shape}")
    out = Tensor(table.value[ids], parents=())

    def bw(g):
        np.add.at(table.grad, ids, g)

    out._backward = bw
    return out


def hconcat(parts) -> Tensor:
    """Concatenate [n, d_i] blocks along columns."""
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), parents=tuple(parts))
    widths = [p.data.shape[1] for p in parts]

    def bw(g):
        off = 0
        for p, w in zip(parts, widths):
            _acc(p, g[:, off:off + w])
            off += w

    out._backward = bw
    return out


def concat(parts) -> Tensor:
    """Concatenate vectors."""
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts]), parents=tuple(parts))
    sizes = [p.data.shape[0] for p in parts]

    def bw(g):
        off = 0
        for p, n in zip(parts, sizes):
            _acc(p, g[off:off + n])
            off += n

    out._backward = bw
    return out


def mean_vectors(vs, dim: int, dtype=np.float64) -> Tensor:
    """Arithmetic mean of same-length vectors; empty input gives zeros."""
    vs = list(vs)
    if not vs:
        return Tensor(np.zeros(dim, dtype=dtype))
    k = len(vs)
    out = Tensor(sum(v.data for v in vs) / k, parents=tuple(vs))

    def bw(g):
        share = g / k
        for v in vs:
            _acc(v, share)

    out._backward = bw
    return out


def pick(x: Tensor, idx: int) -> Tensor:
    """Select one entry of a vector as a scalar."""
    out = Tensor(np.asarray(x.data[idx]), parents=(x,))

    def bw(g):
        d = np.zeros_like(x.data)
        d[idx] = g
        _acc(x, d)

    out._backward = bw
    return out


def vsum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()), parents=(x,))

    def bw(g):
        _acc(x, np.full_like(x.data, g))

    out._backward = bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ConfigError(f"add: shape {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, parents=(a, b))

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    out._backward = bw
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c, parents=(x,))

    def bw(g):
        _acc(x, g * c)

    out._backward = bw
    return out


def sum_tensors(ts) -> Tensor:
    """Sum of same-shape tensors as a single node (used for batch losses)."""
    ts = list(ts)
    if not ts:
        raise ConfigError("sum_tensors: empty input")
    out = Tensor(sum(t.data for t in ts), parents=tuple(ts))

    def bw(g):
        for t in ts:
            _acc(t, g)

    out._backward = bw
    return out


def log1m_exp(logp: Tensor, floor: float = 1e-7) -> Tensor:
    """log(1 - exp(logp)) for a scalar log-probability.

    The probability is clamped to 1 - floor before the log, so the
    result is bounded below by log(floor); the gradient is zero in the
    clamped region.
    """
    p = float(np.exp(logp.data))
    if p > 1.0 - floor:
        out = Tensor(np.asarray(np.log(floor), dtype=logp.data.dtype), parents=(logp,))
        factor = 0.0
    else:
        out = Tensor(np.asarray(np.log1p(-p), dtype=logp.data.dtype), parents=(logp,))
        factor = -p / (1.0 - p)

    def bw(g):
        _acc(logp, g * factor)

    out._backward = bw
    return out


def picked_mse(q: Tensor, actions, targets) -> Tensor:
    """Mean squared error between q[i, actions[i]] and targets[i]."""
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=q.data.dtype)
    B = actions.shape[0]
    rows = np.arange(B)
    diff = q.data[rows, actions] - targets
    out = Tensor(np.asarray(np.mean(diff * diff)), parents=(q,))

    def bw(g):
        dq = np.zeros_like(q.data)
        dq[rows, actions] = 2.0 * diff * g / B
        _acc(q, dq)

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# Optimizer and gradient checking


def adam_step(param: Parameter, lr: float, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> None:
    """One Adam update with bias correction; clears the gradient."""
    param.step_count += 1
    t = param.step_count
    g = param.grad
    param.adam_m *= beta1
    param.adam_m += (1.0 - beta1) * g
    param.adam_v *= beta2
    param.adam_v += (1.0 - beta2) * g * g
    m_hat = param.adam_m / (1.0 - beta1 ** t)
    v_hat = param.adam_v / (1.0 - beta2 ** t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    param.zero_grad()


def grad_check(fn, params, epsilon: float = 1e-5, max_coords: int = 64,
               rng: RngState | None = None) -> float:
    """Compare analytic gradients of a scalar function against central
    finite differences; returns the worst relative error.

    `fn` must be deterministic (no live dropout) and rebuild its tape on
    every call. Large parameters are spot-checked on a seeded subset of
    coordinates.
    """
    rng = rng or RngState(0)
    for p in params:
        p.zero_grad()
    root = fn()
    if not np.isfinite(root.data).all():
        raise NumericError("grad_check: non-finite loss")
    backward(root)
    analytic = {id(p): p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        size = p.value.size
        if size <= max_coords:
            flat_idx = np.arange(size)
        else:
            flat_idx = rng.generator.choice(size, size=max_coords, replace=False)
        flat = p.value.reshape(-1)
        for fi in flat_idx:
            orig = flat[fi]
            flat[fi] = orig + epsilon
            f_plus = float(fn().data)
            flat[fi] = orig - epsilon
            f_minus = float(fn().data)
            flat[fi] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic[id(p)].reshape(-1)[fi]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, rel)
    for p in params:
        p.zero_grad()
    return worst
