"""Minimal reverse-mode differentiation over scalars and dense arrays.

Just enough machinery to backpropagate the training loss of the hyperbolic
head (linear maps, exponential map, Lorentzian centroid, hyperplane logit,
sigmoid/BCE) into its parameters. Values are numpy float64 arrays of any
shape; batches ride along leading axes.

Usage pattern: one `Tape` per training step. Leaves enter via `tape.constant`
or `tape.param`; every operation eagerly computes its value and records a
vector-Jacobian closure per parent. `tape.backward(loss)` accumulates
gradients in reverse insertion order (which is a reverse topological order,
since nodes are recorded at construction). Calling backward twice without
`reset_gradients` is an error, as is a non-scalar loss.

Two conventions shared with the rest of the package:
  - sign factors (from |.| and the logit's sign) use the subgradient 0 at 0;
  - norms that the formulas take through |.| are guarded as sqrt(|x| + 1e-12)
    so their gradients stay finite at 0.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import AutodiffError, DimensionError
from .geometry import sinhc as _sinhc_value

NORM_EPS = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One value on the tape, with parents and their local vector-Jacobians."""

    __slots__ = ("tape", "value", "grad", "parents", "index")

    def __init__(self, tape: "Tape", value: np.ndarray, parents):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = parents  # list of (Node, vjp callable)
        self.index = len(tape._nodes)
        tape._nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    # small operator sugar so model code stays readable
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


class Tape:
    """Recording of one forward pass; owns nodes and runs the backward sweep."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._params: dict[int, Node] = {}
        self._backward_done = False

    def constant(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64), [])

    def param(self, value) -> Node:
        """A leaf whose gradient is reported by `backward` (keyed by node index)."""
        node = Node(self, np.array(value, dtype=np.float64), [])
        self._params[node.index] = node
        return node

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Accumulate d loss / d node for every node; return parameter gradients.

        The returned mapping is keyed by parameter node index. Raises for a
        non-scalar loss or when called twice without `reset_gradients`.
        """
        if loss.tape is not self:
            raise AutodiffError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise AutodiffError(f"loss must be scalar, got shape {loss.value.shape}")
        if self._backward_done:
            raise AutodiffError("backward already ran on this tape; call reset_gradients first")
        self._backward_done = True
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self._nodes):
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                g = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    parent.grad += g
        return {
            idx: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for idx, p in self._params.items()
        }

    def reset_gradients(self) -> None:
        for node in self._nodes:
            node.grad = None
        self._backward_done = False


def _lift(tape: Tape, x) -> Node:
    if isinstance(x, Node):
        if x.tape is not tape:
            raise AutodiffError("operands recorded on different tapes")
        return x
    return tape.constant(x)


def _binary_tape(a, b) -> Tape:
    if isinstance(a, Node):
        return a.tape
    if isinstance(b, Node):
        return b.tape
    raise AutodiffError("at least one operand must be a tape node")


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    t = _binary_tape(a, b)
    a, b = _lift(t, a), _lift(t, b)
    val = a.value + b.value
    return Node(t, val, [
        (a, lambda g, sa=a.value.shape: _unbroadcast(g, sa)),
        (b, lambda g, sb=b.value.shape: _unbroadcast(g, sb)),
    ])


def sub(a, b) -> Node:
    t = _binary_tape(a, b)
    a, b = _lift(t, a), _lift(t, b)
    val = a.value - b.value
    return Node(t, val, [
        (a, lambda g, sa=a.value.shape: _unbroadcast(g, sa)),
        (b, lambda g, sb=b.value.shape: _unbroadcast(-g, sb)),
    ])


def neg(a: Node) -> Node:
    return Node(a.tape, -a.value, [(a, lambda g: -g)])


def mul(a, b) -> Node:
    t = _binary_tape(a, b)
    a, b = _lift(t, a), _lift(t, b)
    val = a.value * b.value
    return Node(t, val, [
        (a, lambda g, bv=b.value, sa=a.value.shape: _unbroadcast(g * bv, sa)),
        (b, lambda g, av=a.value, sb=b.value.shape: _unbroadcast(g * av, sb)),
    ])


def div(a, b) -> Node:
    t = _binary_tape(a, b)
    a, b = _lift(t, a), _lift(t, b)
    val = a.value / b.value
    return Node(t, val, [
        (a, lambda g, bv=b.value, sa=a.value.shape: _unbroadcast(g / bv, sa)),
        (b, lambda g, av=a.value, bv=b.value, sb=b.value.shape: _unbroadcast(-g * av / (bv * bv), sb)),
    ])


def scale(a: Node, s: float) -> Node:
    """Multiply by a python scalar (not differentiated through s)."""
    return Node(a.tape, a.value * s, [(a, lambda g: g * s)])


def square(a: Node) -> Node:
    return Node(a.tape, a.value * a.value, [(a, lambda g, av=a.value: 2.0 * av * g)])


def exp(a: Node) -> Node:
    val = np.exp(a.value)
    return Node(a.tape, val, [(a, lambda g, v=val: g * v)])


def log(a: Node) -> Node:
    return Node(a.tape, np.log(a.value), [(a, lambda g, av=a.value: g / av)])


def sqrt(a: Node) -> Node:
    val = np.sqrt(a.value)
    return Node(a.tape, val, [(a, lambda g, v=val: g / (2.0 * v))])


def cosh(a: Node) -> Node:
    return Node(a.tape, np.cosh(a.value), [(a, lambda g, av=a.value: g * np.sinh(av))])


def sinh(a: Node) -> Node:
    return Node(a.tape, np.sinh(a.value), [(a, lambda g, av=a.value: g * np.cosh(av))])


def asinh(a: Node) -> Node:
    return Node(a.tape, np.arcsinh(a.value), [
        (a, lambda g, av=a.value: g / np.sqrt(1.0 + av * av)),
    ])


def sinhc(a: Node) -> Node:
    """sinh(x)/x with the same Taylor branch as the geometry module.

    d/dx sinh(x)/x = (x cosh x - sinh x) / x^2, with series x/3 + x^3/30 near 0.
    """
    val = np.asarray(_sinhc_value(a.value))

    def vjp(g, av=a.value):
        small = np.abs(av) < 1e-4
        safe = np.where(small, 1.0, av)
        deriv = np.where(
            small,
            av / 3.0 + av**3 / 30.0,
            (safe * np.cosh(safe) - np.sinh(safe)) / (safe * safe),
        )
        return g * deriv

    return Node(a.tape, val, [(a, vjp)])


def abs_sqrt(a: Node) -> Node:
    """Guarded norm sqrt(|x| + 1e-12); gradient sign(x) / (2 f), zero at x = 0."""
    val = np.sqrt(np.abs(a.value) + NORM_EPS)
    return Node(a.tape, val, [
        (a, lambda g, av=a.value, v=val: g * np.sign(av) / (2.0 * v)),
    ])


def sigmoid(a: Node) -> Node:
    """Numerically stable logistic function."""
    x = a.value
    pos = x >= 0
    e = np.exp(-np.abs(x))
    val = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    return Node(a.tape, val, [(a, lambda g, v=val: g * v * (1.0 - v))])


def softplus(a: Node) -> Node:
    """log(1 + exp(x)) in the overflow-free form max(x, 0) + log1p(exp(-|x|))."""
    x = a.value
    val = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def vjp(g, xv=x):
        pos = xv >= 0
        e = np.exp(-np.abs(xv))
        s = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
        return g * s

    return Node(a.tape, val, [(a, vjp)])


def sum_(a: Node, axis: int | None = None) -> Node:
    val = a.value.sum(axis=axis)

    def vjp(g, shape=a.value.shape, ax=axis):
        if ax is None:
            return np.broadcast_to(g, shape).astype(np.float64)
        return np.broadcast_to(np.expand_dims(g, ax), shape).astype(np.float64)

    return Node(a.tape, np.asarray(val, dtype=np.float64), [(a, vjp)])


def mean(a: Node, axis: int | None = None) -> Node:
    n = a.value.size if axis is None else a.value.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def dot(a, b) -> Node:
    t = _binary_tape(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if a.value.ndim != 1 or b.value.ndim != 1 or a.value.shape != b.value.shape:
        raise DimensionError(f"dot expects equal-length vectors, got {a.value.shape} and {b.value.shape}")
    val = np.asarray(a.value @ b.value)
    return Node(t, val, [
        (a, lambda g, bv=b.value: g * bv),
        (b, lambda g, av=a.value: g * av),
    ])


def matvec(m: Node, v) -> Node:
    t = m.tape if isinstance(m, Node) else _binary_tape(m, v)
    m, v = _lift(t, m), _lift(t, v)
    if m.value.ndim != 2 or v.value.ndim != 1 or m.value.shape[1] != v.value.shape[0]:
        raise DimensionError(f"matvec shape mismatch: {m.value.shape} @ {v.value.shape}")
    val = m.value @ v.value
    return Node(t, val, [
        (m, lambda g, vv=v.value: np.outer(g, vv)),
        (v, lambda g, mv=m.value: mv.T @ g),
    ])


def matmul(a, b) -> Node:
    t = _binary_tape(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    val = a.value @ b.value
    return Node(t, val, [
        (a, lambda g, bv=b.value: g @ bv.T),
        (b, lambda g, av=a.value: av.T @ g),
    ])


def transpose(a: Node) -> Node:
    return Node(a.tape, a.value.T, [(a, lambda g: g.T)])


def concat(parts: Sequence[Node], axis: int = -1) -> Node:
    if not parts:
        raise DimensionError("concat needs at least one part")
    t = parts[0].tape
    parts = [_lift(t, p) for p in parts]
    val = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            return g[tuple(sl)]

        return vjp

    return Node(t, val, [(p, make_vjp(i)) for i, p in enumerate(parts)])


def take_cols(a: Node, lo: int, hi: int) -> Node:
    """Slice [lo, hi) along the last axis; gradient zero-embeds."""
    val = a.value[..., lo:hi]

    def vjp(g, shape=a.value.shape):
        out = np.zeros(shape, dtype=np.float64)
        out[..., lo:hi] = g
        return out

    return Node(a.tape, val, [(a, vjp)])


def scale_rows(x: Node, s) -> Node:
    """x[..., :] * s[..., None] for per-row scalars s."""
    t = x.tape
    s = _lift(t, s)
    if s.value.shape != x.value.shape[:-1]:
        raise DimensionError(f"scale_rows mismatch: {x.value.shape} rows vs {s.value.shape} scales")
    val = x.value * s.value[..., None]
    return Node(t, val, [
        (x, lambda g, sv=s.value: g * sv[..., None]),
        (s, lambda g, xv=x.value: np.sum(g * xv, axis=-1)),
    ])


def lorentz_inner(a, b) -> Node:
    """<a, b>_L along the last axis; broadcasts like numpy."""
    t = _binary_tape(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if a.value.shape[-1] != b.value.shape[-1] or a.value.shape[-1] < 2:
        raise DimensionError(f"lorentz_inner mismatch: {a.value.shape} vs {b.value.shape}")
    metric = np.ones(a.value.shape[-1])
    metric[0] = -1.0
    val = np.sum(a.value[..., 1:] * b.value[..., 1:], axis=-1) - a.value[..., 0] * b.value[..., 0]
    return Node(t, np.asarray(val), [
        (a, lambda g, bv=b.value, sa=a.value.shape: _unbroadcast(g[..., None] * (metric * bv), sa)),
        (b, lambda g, av=a.value, sb=b.value.shape: _unbroadcast(g[..., None] * (metric * av), sb)),
    ])


# ---------------------------------------------------------------------------
# composite geometry ops (built from the primitives above)
# ---------------------------------------------------------------------------


def expmap_origin(v: Node, c: Node) -> Node:
    """Batched exponential map at the origin: v [..., n] -> [..., n+1].

    The tangent norm is guarded (sqrt(sum v^2 + eps)) so the gradient at the
    zero vector stays finite; the value shift is ~5e-13 at unit scale.
    """
    sqrt_c = sqrt(c)
    r = abs_sqrt(sum_(square(v), axis=-1))
    arg = mul(r, sqrt_c)
    z0 = div(cosh(arg), sqrt_c)
    zs = scale_rows(v, sinhc(arg))
    return concat([unsqueeze_last(z0), zs], axis=-1)


def unsqueeze_last(a: Node) -> Node:
    val = a.value[..., None]
    return Node(a.tape, val, [(a, lambda g: g[..., 0])])


def hyperbolic_linear(z: Node, weight: Node, c: Node) -> Node:
    """Space-part matrix map with exact time recomputation.

    z [..., n+1] on the c-hyperboloid, weight [m, n] -> [..., m+1] with
    y_vec = z_vec W^T and y0 = sqrt(||y_vec||^2 + 1/c).
    """
    zs = take_cols(z, 1, z.value.shape[-1])
    if zs.value.ndim == 1:
        ys = matvec(weight, zs)
    else:
        ys = matmul(zs, transpose(weight))
    y0 = sqrt(add(sum_(square(ys), axis=-1), div_const(1.0, c)))
    return concat([unsqueeze_last(y0), ys], axis=-1)


def div_const(a: float, b: Node) -> Node:
    """a / b for python-scalar a."""
    return Node(b.tape, a / b.value, [
        (b, lambda g, bv=b.value: -g * a / (bv * bv)),
    ])


def poincare_norm(z: Node, c: Node) -> Node:
    """Confidence weight: Euclidean norm of the Poincare-ball image of z."""
    denom = add(mul(take_cols(z, 0, 1), sqrt(c)), 1.0)
    p = div(take_cols(z, 1, z.value.shape[-1]), denom)
    return abs_sqrt(sum_(square(p), axis=-1))


def lorentzian_centroid(points: Sequence[Node], weights: Sequence[Node], c: Node) -> Node:
    """Weighted Lorentzian centroid across levels.

    points: list of [..., n+1] nodes; weights: list of [...] nodes. Normalizes
    z' = sum w_l p_l back onto the hyperboloid via z' / (sqrt(c) ||z'||_L),
    differentiating straight through the normalization.
    """
    if len(points) != len(weights) or not points:
        raise DimensionError("need one weight per centroid input")
    zp = scale_rows(points[0], weights[0])
    for p, w in zip(points[1:], weights[1:]):
        zp = add(zp, scale_rows(p, w))
    q = lorentz_inner(zp, zp)
    nrm = abs_sqrt(q)  # |<z',z'>_L| guarded
    inv = div_const(1.0, mul(nrm, sqrt(c)))
    return scale_rows(zp, inv)


def hyperplane_logit(z: Node, w: Node, c: Node) -> Node:
    """Smooth form (||w||_L / sqrt(c)) asinh(sqrt(c) <w,z>_L / ||w||_L).

    Identical to sign(<w,z>_L) ||w||_L d(z, H_w) because asinh is odd; the sign
    is thereby treated as locally constant, matching the subgradient convention.
    """
    sqrt_c = sqrt(c)
    wn = abs_sqrt(lorentz_inner(w, w))
    ratio = div(lorentz_inner(z, w), wn)
    return div(mul(wn, asinh(mul(ratio, sqrt_c))), sqrt_c)


def bce_with_logits(logits: Node, labels: np.ndarray) -> Node:
    """Class-balanced BCE for p = 1/(1 + exp(logit)).

    -log p = softplus(logit) and -log(1-p) = softplus(-logit), averaged
    separately over the anomalous (label 1) and normal (label 0) subsets; an
    absent class contributes zero.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.value.shape:
        raise DimensionError(f"labels shape {labels.shape} != logits shape {logits.value.shape}")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    t = logits.tape
    pos_avg = np.where(labels == 1, 1.0 / max(n_pos, 1), 0.0)
    neg_avg = np.where(labels == 0, 1.0 / max(n_neg, 1), 0.0)
    term_pos = dot(softplus(logits), t.constant(pos_avg))
    term_neg = dot(softplus(neg(logits)), t.constant(neg_avg))
    return add(term_pos, term_neg)


# ---------------------------------------------------------------------------
# string-keyed dispatch
# ---------------------------------------------------------------------------

OPS = {
    "add": add,
    "sub": sub,
    "neg": neg,
    "mul": mul,
    "div": div,
    "scale": scale,
    "square": square,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "cosh": cosh,
    "sinh": sinh,
    "asinh": asinh,
    "sinhc": sinhc,
    "abs_sqrt": abs_sqrt,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "sum": sum_,
    "mean": mean,
    "dot": dot,
    "matvec": matvec,
    "matmul": matmul,
    "transpose": transpose,
    "concat": concat,
    "take_cols": take_cols,
    "scale_rows": scale_rows,
    "lorentz_inner": lorentz_inner,
    "expmap_origin": expmap_origin,
    "hyperbolic_linear": hyperbolic_linear,
    "poincare_norm": poincare_norm,
    "lorentzian_centroid": lorentzian_centroid,
    "hyperplane_logit": hyperplane_logit,
}


def record(op_kind: str, *inputs, **kwargs) -> Node:
    """Record one operation by name; inputs must already be on a tape."""
    if op_kind not in OPS:
        raise AutodiffError(f"unknown op kind '{op_kind}'; known: {sorted(OPS)}")
    return OPS[op_kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# finite differences (the independent gradient oracle)
# ---------------------------------------------------------------------------


def finite_difference(f: Callable[[Sequence[np.ndarray]], float], params: Sequence[np.ndarray], h: float = 1e-5):
    """Central finite-difference gradients of a scalar function of arrays."""
    grads = []
    params = [np.array(p, dtype=np.float64) for p in params]
    for k, p in enumerate(params):
        gp = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = gp.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(params)
            flat[i] = orig - h
            fm = f(params)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(gp)
    return grads
