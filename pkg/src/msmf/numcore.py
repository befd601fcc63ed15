"""Dense float64 tensor core with tape-based reverse-mode differentiation.

Every layer downstream (encoders, fusion, gating, prediction heads, losses)
is composed from the primitives in this module, each of which carries a
hand-derived backward rule.  A computation graph is built per forward pass
and discarded after ``backward``; trainable parameters are leaf ``Variable``
objects that persist across steps and accumulate into ``grad``.

Conventions:
  * all tensors are float64 ndarrays; matrices are ``[rows, cols]`` and time
    series are ``[T, d]``;
  * ``matmul`` and ``affine`` accept a 1-D left operand as a row vector;
  * no broadcasting beyond the bias form of ``add``/``affine``;
  * reductions support ``axis=None`` (scalar) and ``axis=0`` only.

Determinism: identical seeds and inputs give bit-identical outputs; all
randomness flows through ``Rng``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    NumericError,
)

Tensor = np.ndarray


def as_tensor(data) -> Tensor:
    """Coerce to a float64 ndarray (no copy if already conforming)."""
    return np.asarray(data, dtype=np.float64)


class Rng:
    """Deterministic random source: same seed, same draws, any platform.

    Thin wrapper over numpy's PCG64 generator.  ``derive`` produces an
    independent child stream from ``(seed, key)`` so per-row or per-stage
    randomness stays reproducible regardless of evaluation order.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, key) -> "Rng":
        """Child stream keyed by an int or a short label string."""
        if isinstance(key, str):
            key = int.from_bytes(key.encode("utf-8"), "little")
        child = np.random.SeedSequence((self.seed, int(key))).generate_state(1)[0]
        return Rng(int(child))

    def normal(self, shape=None, scale: float = 1.0) -> Tensor:
        return self._gen.normal(0.0, scale, size=shape)

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> Tensor:
        return self._gen.uniform(low, high, size=shape)

    def bernoulli(self, p, shape=None) -> Tensor:
        """0/1 floats; entry i is 1 with probability p (or p[i])."""
        return (self._gen.random(size=shape) < p).astype(np.float64)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)


class Variable:
    """Node in a tape-style computation graph.

    ``value`` is the forward result; ``grad`` accumulates reverse-mode
    contributions (two uses of the same Variable sum their gradients).
    Leaves built with ``requires_grad=True`` are the trainable parameters;
    interior nodes carry a backward closure and parent links and are
    garbage-collected with the graph.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.value = as_tensor(value)
        self.grad: Tensor | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != ():
            raise ContractError(f"item(): expected scalar, got shape {self.value.shape}")
        return float(self.value)

    def _accumulate(self, g: Tensor) -> None:
        if self.grad is None:
            self.grad = np.array(g)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Variable):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        tag = self.name or ("param" if self.requires_grad and not self._parents else "node")
        return f"Variable({tag}, shape={self.value.shape})"


def constant(value, name: str | None = None) -> Variable:
    return Variable(value, requires_grad=False, name=name)


def param(value, name: str | None = None) -> Variable:
    return Variable(value, requires_grad=True, name=name)


def _wrap(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def _node(value: Tensor, parents: tuple, backward: Callable) -> Variable:
    # Graph pruning: constant subtrees carry no closure and no parents.
    if any(p.requires_grad for p in parents):
        return Variable(value, requires_grad=True, _parents=parents, _backward=backward)
    return Variable(value)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Variable:
    """Elementwise sum; also accepts a 1-D bias over the last axis of a 2-D a."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        def bw(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)
        return _node(av + bv, (a, b), bw)
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        def bw(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0))
        return _node(av + bv, (a, b), bw)
    raise DimensionError(f"add: incompatible shapes {av.shape} and {bv.shape}")


def sub(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"sub: incompatible shapes {a.value.shape} and {b.value.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)
    return _node(a.value - b.value, (a, b), bw)


def mul(a, b) -> Variable:
    """Elementwise (Hadamard) product of same-shaped tensors."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise DimensionError(f"mul: incompatible shapes {av.shape} and {bv.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * bv)
        if b.requires_grad:
            b._accumulate(g * av)
    return _node(av * bv, (a, b), bw)


def scale(x, c: float) -> Variable:
    """Multiply by a python float constant."""
    x = _wrap(x)
    c = float(c)

    def bw(g):
        x._accumulate(g * c)
    return _node(x.value * c, (x,), bw)


def square(x) -> Variable:
    x = _wrap(x)

    def bw(g):
        x._accumulate(g * (2.0 * x.value))
    return _node(x.value * x.value, (x,), bw)


def log(x) -> Variable:
    """Natural log; defined for strictly positive entries only."""
    x = _wrap(x)
    if np.any(x.value <= 0.0):
        raise NumericError("log: input has non-positive entries")
    out = np.log(x.value)

    def bw(g):
        x._accumulate(g / x.value)
    return _node(out, (x,), bw)


def relu(x) -> Variable:
    """max(0, x); the backward rule uses subgradient 0 at exactly 0."""
    x = _wrap(x)
    out = np.maximum(x.value, 0.0)

    def bw(g):
        x._accumulate(g * (x.value > 0.0))
    return _node(out, (x,), bw)


def softmax(x) -> Variable:
    """Softmax over the last axis, computed with max-subtraction.

    Backward: dx = p * (g - sum(g * p, last axis)).
    """
    x = _wrap(x)
    v = x.value
    if v.ndim == 0 or v.shape[-1] == 0:
        raise DimensionError("softmax: empty last dimension")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        x._accumulate(p * (g - dot))
    return _node(p, (x,), bw)


def matmul(a, b) -> Variable:
    """Matrix product; a may be 1-D (treated as a row vector), b must be 2-D."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    out = av @ bv

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ bv.T)
        if b.requires_grad:
            b._accumulate(np.outer(av, g) if av.ndim == 1 else av.T @ g)
    return _node(out, (a, b), bw)


def affine(x, w, b) -> Variable:
    """Fused x @ w + b; same contract as matmul plus a 1-D bias."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    xv, wv, bv = x.value, w.value, b.value
    if wv.ndim != 2 or xv.ndim not in (1, 2) or xv.shape[-1] != wv.shape[0]:
        raise DimensionError(f"affine: incompatible shapes {xv.shape} and {wv.shape}")
    if bv.shape != (wv.shape[1],):
        raise DimensionError(f"affine: bias shape {bv.shape} does not match output dim {wv.shape[1]}")
    out = xv @ wv + bv

    def bw(g):
        if x.requires_grad:
            x._accumulate(g @ wv.T)
        if w.requires_grad:
            w._accumulate(np.outer(xv, g) if xv.ndim == 1 else xv.T @ g)
        if b.requires_grad:
            b._accumulate(g if xv.ndim == 1 else g.sum(axis=0))
    return _node(out, (x, w, b), bw)


def temporal_conv(x, kernel, bias) -> Variable:
    """Same-padded 1-D convolution over time.

    x is [T, d_in], kernel is [w, d_in, d_out] with odd w, bias is [d_out];
    the input is zero-padded by (w-1)/2 rows on each temporal edge so the
    output is [T, d_out].
    """
    x, kernel, bias = _wrap(x), _wrap(kernel), _wrap(bias)
    xv, kv, bv = x.value, kernel.value, bias.value
    if kv.ndim != 3:
        raise DimensionError(f"temporal_conv: kernel must be [w, d_in, d_out], got {kv.shape}")
    w = kv.shape[0]
    if w % 2 == 0:
        raise ConfigurationError(f"temporal_conv: window must be odd, got {w}")
    if xv.ndim != 2 or xv.shape[1] != kv.shape[1]:
        raise DimensionError(f"temporal_conv: input {xv.shape} does not match kernel {kv.shape}")
    if bv.shape != (kv.shape[2],):
        raise DimensionError(f"temporal_conv: bias shape {bv.shape} does not match d_out {kv.shape[2]}")
    T = xv.shape[0]
    pad = (w - 1) // 2
    xp = np.zeros((T + 2 * pad, xv.shape[1]))
    xp[pad:pad + T] = xv
    out = np.tile(bv, (T, 1))
    for j in range(w):
        out += xp[j:j + T] @ kv[j]

    def bw(g):
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if kernel.requires_grad:
            gk = np.empty_like(kv)
            for j in range(w):
                gk[j] = xp[j:j + T].T @ g
            kernel._accumulate(gk)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(w):
                gxp[j:j + T] += g @ kv[j].T
            x._accumulate(gxp[pad:pad + T])
    return _node(out, (x, kernel, bias), bw)


def temporal_pool(x, window: int) -> Variable:
    """Non-overlapping mean pooling over time: [T, d] -> [ceil(T/window), d].

    A trailing partial window is averaged over its actual length.
    """
    x = _wrap(x)
    if int(window) != window or window <= 0:
        raise ConfigurationError(f"temporal_pool: window must be a positive integer, got {window}")
    window = int(window)
    xv = x.value
    if xv.ndim != 2:
        raise DimensionError(f"temporal_pool: expected [T, d], got {xv.shape}")
    T = xv.shape[0]
    P = -(-T // window)
    out = np.empty((P, xv.shape[1]))
    for p in range(P):
        out[p] = xv[p * window:min((p + 1) * window, T)].mean(axis=0)

    def bw(g):
        gx = np.empty_like(xv)
        for p in range(P):
            lo, hi = p * window, min((p + 1) * window, T)
            gx[lo:hi] = g[p] / (hi - lo)
        x._accumulate(gx)
    return _node(out, (x,), bw)


def mean(x, axis: int | None = None) -> Variable:
    """Mean over all entries (axis=None, scalar output) or over axis 0."""
    x = _wrap(x)
    xv = x.value
    if axis is None:
        n = xv.size

        def bw(g):
            x._accumulate(np.full_like(xv, g / n))
        return _node(xv.mean(), (x,), bw)
    if axis != 0:
        raise DimensionError(f"mean: only axis=None or axis=0 supported, got {axis}")
    n = xv.shape[0]

    def bw(g):
        x._accumulate(np.repeat(g[None, :] / n, n, axis=0) if xv.ndim == 2
                      else np.full_like(xv, g / n))
    return _node(xv.mean(axis=0), (x,), bw)


def reduce_sum(x, axis: int | None = None) -> Variable:
    """Sum over all entries (axis=None, scalar output) or over axis 0."""
    x = _wrap(x)
    xv = x.value
    if axis is None:
        def bw(g):
            x._accumulate(np.full_like(xv, g))
        return _node(xv.sum(), (x,), bw)
    if axis != 0:
        raise DimensionError(f"reduce_sum: only axis=None or axis=0 supported, got {axis}")
    n = xv.shape[0]

    def bw(g):
        x._accumulate(np.repeat(g[None, :], n, axis=0) if xv.ndim == 2
                      else np.full_like(xv, g))
    return _node(xv.sum(axis=0), (x,), bw)


def concat(xs: Sequence, axis: int = 0) -> Variable:
    """Concatenate along axis 0; inputs must share ndim and trailing dims."""
    if axis != 0:
        raise DimensionError(f"concat: only axis=0 supported, got {axis}")
    vs = [_wrap(v) for v in xs]
    if not vs:
        raise DimensionError("concat: empty input list")
    ndim = vs[0].value.ndim
    for v in vs:
        if v.value.ndim != ndim or v.value.shape[1:] != vs[0].value.shape[1:]:
            raise DimensionError(
                f"concat: incompatible shapes {[tuple(v.value.shape) for v in vs]}")
    sizes = [v.value.shape[0] for v in vs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for v, lo, hi in zip(vs, offsets[:-1], offsets[1:]):
            if v.requires_grad:
                v._accumulate(g[lo:hi])
    return _node(np.concatenate([v.value for v in vs], axis=0), tuple(vs), bw)


def narrow(x, start: int, stop: int, axis: int = 0) -> Variable:
    """Contiguous slice [start:stop) along axis 0."""
    if axis != 0:
        raise DimensionError(f"narrow: only axis=0 supported, got {axis}")
    x = _wrap(x)
    n = x.value.shape[0]
    if not (0 <= start < stop <= n):
        raise DimensionError(f"narrow: range [{start}, {stop}) invalid for length {n}")

    def bw(g):
        gx = np.zeros_like(x.value)
        gx[start:stop] = g
        x._accumulate(gx)
    return _node(x.value[start:stop].copy(), (x,), bw)


def reshape(x, shape) -> Variable:
    x = _wrap(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.value.size:
        raise DimensionError(f"reshape: cannot view size {x.value.size} as {shape}")

    def bw(g):
        x._accumulate(g.reshape(x.value.shape))
    return _node(x.value.reshape(shape), (x,), bw)


# ---------------------------------------------------------------------------
# reverse-mode driver
# ---------------------------------------------------------------------------

def backward(loss: Variable) -> None:
    """Accumulate d(loss)/d(leaf) into .grad for every reachable leaf.

    The loss must be scalar.  Iterative DFS (graphs can exceed the
    recursion limit); reverse post-order is a topological order, so each
    node's grad is complete before its backward closure runs.
    """
    if loss.value.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    topo: list[Variable] = []
    seen: set[int] = set()
    stack: list[tuple[Variable, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    loss._accumulate(np.ones(()))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params: Iterable[Variable]) -> None:
    for p in params:
        p.grad = None


def gradient(loss: Variable, params: Sequence[Variable]) -> dict[Variable, Tensor]:
    """Reverse-mode gradients of a scalar loss for the given parameters.

    Parameters not on a path to the loss receive zero gradients.
    """
    params = list(params)
    zero_grad(params)
    backward(loss)
    return {p: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
            for p in params}


def check_gradients(loss_fn: Callable[[Sequence[Variable]], Variable],
                    params: Sequence[Variable],
                    eps: float = 1e-5,
                    tol: float | None = None) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``loss_fn`` must be a pure deterministic function of the parameter
    values (seed any internal randomness) that rebuilds its graph on every
    call.  Returns the max over coordinates of
    |a - n| / max(1e-8, |a| + |n|); if ``tol`` is given, raises
    NumericError when the result exceeds it.
    """
    params = list(params)
    loss = loss_fn(params)
    if loss.value.shape != ():
        raise ContractError(f"check_gradients: loss has shape {loss.value.shape}")
    grads = gradient(loss, params)
    worst = 0.0
    worst_at = ""
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        gflat = grads[p].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = float(loss_fn(params).value)
            flat[i] = orig - eps
            lm = float(loss_fn(params).value)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(
                    f"check_gradients: non-finite loss at param {p.name or pi} coord {i}")
            numeric = (lp - lm) / (2.0 * eps)
            analytic = gflat[i]
            rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            if rel > worst:
                worst = rel
                worst_at = f"param {p.name or pi} coord {i}"
    if tol is not None and worst > tol:
        raise NumericError(
            f"gradient check failed: max relative error {worst:.3e} at {worst_at} (tol {tol:.1e})")
    return worst
