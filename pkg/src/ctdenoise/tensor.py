"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a per-forward tape: each op links its output tensor to its
parents together with a backward rule. Backward rules are themselves
written in terms of these primitive ops, so running them with grad
tracking enabled (``create_graph=True``) yields gradients that are graph
nodes — which is how second-order terms such as the critic's gradient
penalty get their parameter gradients.

Conventions:
  * everything is float64;
  * image tensors are [batch, channels, height, width];
  * cross-correlation (no kernel flip) for conv2d;
  * |x| has subgradient 0 at x = 0.
"""

import itertools
from contextlib import contextmanager

import numpy as np

from . import conv_kernels as ck
from .errors import ConfigError, UnsupportedOpError

_node_ids = itertools.count(1)
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable taping inside the block (used for plain first-order backward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A node in the computation tape. Leaf if it has no backward rule."""

    __slots__ = ("data", "requires_grad", "node_id", "_parents", "_rule", "_op")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self._parents = ()
        self._rule = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A grad-barrier leaf sharing this tensor's values."""
        return Tensor(self.data, requires_grad=False)

    def sum(self, axes=None, keepdims=False):
        return sum_(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return mean_(self, axes, keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    # arithmetic sugar
    def __add__(self, other):
        return add_const(self, other) if np.isscalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_const(self, -other) if np.isscalar(other) else add(self, neg(other))

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        return scale(self, other) if np.isscalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, grad={self.requires_grad})"


def _make(data, parents, rule, op):
    """Internal op constructor: tapes the node when tracking is active."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._rule = rule
        out._op = op
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    """A non-differentiable tensor (e.g. a mask captured during forward)."""
    return Tensor(data, requires_grad=False)


# ---------------------------------------------------------------------------
# elementwise primitives

def _sum_to_shape(g, shape):
    """Reduce a broadcast gradient back to `shape` (differentiable)."""
    if g.shape == tuple(shape):
        return g
    extra = len(g.shape) - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    out = sum_(g, axes, keepdims=True)
    return reshape(out, shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def rule(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return _make(data, (a, b), rule, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def rule(g):
        return _sum_to_shape(mul(g, b), a.shape), _sum_to_shape(mul(g, a), b.shape)

    return _make(data, (a, b), rule, "mul")


def sub(a, b):
    return add(a, neg(b))


def neg(a):
    return scale(a, -1.0)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)

    def rule(g):
        return (scale(g, c),)

    return _make(a.data * c, (a,), rule, "scale")


def add_const(a, c):
    a = as_tensor(a)

    def rule(g):
        return (g,)

    return _make(a.data + float(c), (a,), rule, "add_const")


def abs_(a):
    a = as_tensor(a)
    sign = constant(np.sign(a.data))  # 0 at 0: subgradient choice

    def rule(g):
        return (mul(g, sign),)

    return _make(np.abs(a.data), (a,), rule, "abs")


def pow_const(a, p):
    a = as_tensor(a)
    p = float(p)

    def rule(g):
        return (scale(mul(g, pow_const(a, p - 1.0)), p),)

    return _make(a.data ** p, (a,), rule, "pow")


def sqrt(a):
    return pow_const(a, 0.5)


# ---------------------------------------------------------------------------
# shape / reduction primitives

def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    old = a.shape

    def rule(g):
        return (reshape(g, old),)

    return _make(a.data.reshape(shape), (a,), rule, "reshape")


def transpose2d(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ConfigError(f"transpose2d expects a matrix, got shape {a.shape}")

    def rule(g):
        return (transpose2d(g),)

    return _make(np.ascontiguousarray(a.data.T), (a,), rule, "transpose2d")


def sum_(a, axes=None, keepdims=False):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))
    elif np.isscalar(axes):
        axes = (int(axes),)
    else:
        axes = tuple(int(ax) for ax in axes)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
    old = a.shape

    def rule(g):
        gk = g if keepdims or not kept else reshape(g, kept)
        return (broadcast_to(gk, old),)

    data = a.data.sum(axis=axes, keepdims=keepdims)
    return _make(data, (a,), rule, "sum")


def mean_(a, axes=None, keepdims=False):
    a = as_tensor(a)
    if axes is None:
        count = a.size
    else:
        ax = (axes,) if np.isscalar(axes) else axes
        count = int(np.prod([a.shape[i] for i in ax]))
    return scale(sum_(a, axes, keepdims), 1.0 / count)


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    old = a.shape

    def rule(g):
        return (_sum_to_shape(g, old),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), rule, "broadcast")


def l2_norm_per_sample(a, eps=1e-24):
    """sqrt of the sum of squares over all non-batch axes -> shape [B].

    A vanishing epsilon under the root keeps the gradient finite at the
    origin (norms >= 1e-4 are unaffected at double precision).
    """
    a = as_tensor(a)
    axes = tuple(range(1, a.data.ndim))
    return sqrt(add_const(sum_(mul(a, a), axes), eps))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ConfigError(f"matmul expects matrices, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def rule(g):
        return matmul(g, transpose2d(b)), matmul(transpose2d(a), g)

    return _make(a.data @ b.data, (a, b), rule, "matmul")


# ---------------------------------------------------------------------------
# channel ops

def concat_channels(parts):
    parts = [as_tensor(p) for p in parts]
    if len(parts) == 0:
        raise ConfigError("concat_channels needs at least one input")
    first = parts[0]
    for p in parts[1:]:
        if (p.shape[0],) + p.shape[2:] != (first.shape[0],) + first.shape[2:]:
            raise ConfigError(
                f"concat_channels spatial/batch mismatch: {first.shape} vs {p.shape}"
            )
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def rule(g):
        return tuple(
            slice_channels(g, int(bounds[i]), int(bounds[i + 1]))
            for i in range(len(parts))
        )

    data = np.concatenate([p.data for p in parts], axis=1)
    return _make(data, tuple(parts), rule, "concat")


def slice_channels(a, lo, hi):
    a = as_tensor(a)
    total = a.shape[1]
    if not (0 <= lo < hi <= total):
        raise ConfigError(f"channel slice [{lo}:{hi}] out of range for {total} channels")

    def rule(g):
        return (embed_channels(g, total, lo),)

    data = np.ascontiguousarray(a.data[:, lo:hi])
    return _make(data, (a,), rule, "slice_channels")


def embed_channels(a, total, lo):
    """Zero-embed channels [lo:lo+C] into a `total`-channel tensor."""
    a = as_tensor(a)
    c = a.shape[1]

    def rule(g):
        return (slice_channels(g, lo, lo + c),)

    data = np.zeros((a.shape[0], total) + a.shape[2:])
    data[:, lo : lo + c] = a.data
    return _make(data, (a,), rule, "embed_channels")


# ---------------------------------------------------------------------------
# activations

def prelu(x, slopes):
    """Parametric ReLU with one learnable slope per channel (axis 1)."""
    x, slopes = as_tensor(x), as_tensor(slopes)
    if slopes.data.ndim != 1 or slopes.shape[0] != x.shape[1]:
        raise ConfigError(
            f"prelu slopes shape {slopes.shape} does not match channels {x.shape[1]}"
        )
    a_col = (1, x.shape[1]) + (1,) * (x.data.ndim - 2)
    pos = x.data > 0
    data = np.where(pos, x.data, slopes.data.reshape(a_col) * x.data)

    def rule(g):
        posmask = constant(pos.astype(np.float64))
        negmask = constant(1.0 - posmask.data)
        a_b = reshape(slopes, a_col)
        gx = add(mul(g, posmask), mul(mul(g, negmask), a_b))
        axes = (0,) + tuple(range(2, x.data.ndim))
        ga = sum_(mul(mul(g, x), negmask), axes)
        return gx, ga

    return _make(data, (x, slopes), rule, "prelu")


def leaky_relu(x, alpha=0.2):
    x = as_tensor(x)
    alpha = float(alpha)
    mask = constant(np.where(x.data > 0, 1.0, alpha))

    def rule(g):
        return (mul(g, mask),)

    return _make(x.data * mask.data, (x,), rule, "leaky_relu")


# ---------------------------------------------------------------------------
# convolution (cross-correlation) trio

def _check_image(t, what):
    if t.data.ndim != 4:
        raise ConfigError(f"{what} must be 4-D [B,C,H,W], got shape {t.shape}")


def conv2d(x, w, bias=None, stride=1, padding="same"):
    """Cross-correlate x[B,Cin,H,W] with w[Cout,Cin,k,k], plus optional bias[Cout]."""
    x, w = as_tensor(x), as_tensor(w)
    _check_image(x, "conv2d input")
    if w.data.ndim != 4:
        raise ConfigError(f"conv2d kernel must be 4-D [Cout,Cin,k,k], got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ConfigError(
            f"conv2d channel mismatch: input has Cin={x.shape[1]}, kernel expects {w.shape[1]}"
        )
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    in_hw = x.shape[2:]
    k = w.shape[2]

    if bias is None:
        def rule(g):
            return (
                conv2d_input_grad(g, w, in_hw, stride, padding),
                conv2d_weight_grad(x, g, k, stride, padding),
            )

        data = ck.conv2d_forward(x.data, w.data, stride, padding)
        return _make(data, (x, w), rule, "conv2d")

    bias = as_tensor(bias)
    if bias.data.ndim != 1 or bias.shape[0] != w.shape[0]:
        raise ConfigError(
            f"conv2d bias shape {bias.shape} does not match Cout={w.shape[0]}"
        )

    def rule(g):
        return (
            conv2d_input_grad(g, w, in_hw, stride, padding),
            conv2d_weight_grad(x, g, k, stride, padding),
            sum_(g, (0, 2, 3)),
        )

    data = ck.conv2d_forward(x.data, w.data, stride, padding, bias.data)
    return _make(data, (x, w, bias), rule, "conv2d")


def conv2d_input_grad(g, w, in_hw, stride=1, padding="same"):
    """Adjoint of conv2d w.r.t. its input; itself differentiable."""
    g, w = as_tensor(g), as_tensor(w)
    in_hw = tuple(in_hw)
    k = w.shape[2]

    def rule(u):
        return (
            conv2d(u, w, None, stride, padding),
            conv2d_weight_grad(u, g, k, stride, padding),
        )

    data = ck.conv2d_input_grad(g.data, w.data, in_hw, stride, padding)
    return _make(data, (g, w), rule, "conv2d_input_grad")


def conv2d_weight_grad(x, g, k, stride=1, padding="same"):
    """Adjoint of conv2d w.r.t. its kernel; itself differentiable."""
    x, g = as_tensor(x), as_tensor(g)
    in_hw = x.shape[2:]

    def rule(v):
        return (
            conv2d_input_grad(g, v, in_hw, stride, padding),
            conv2d(x, v, None, stride, padding),
        )

    data = ck.conv2d_weight_grad(x.data, g.data, k, stride, padding)
    return _make(data, (x, g), rule, "conv2d_weight_grad")


# ---------------------------------------------------------------------------
# backward pass

def _toposort(root):
    """Iterative DFS postorder over the reachable grad-requiring subgraph."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))
    return order


def grad(loss, wrt, create_graph=False):
    """Gradients of a scalar loss w.r.t. each tensor in `wrt`.

    Accumulates over all paths; tensors with no path to the loss get zero
    gradients. With ``create_graph=True`` the returned gradients are graph
    nodes and can be differentiated again.
    """
    loss = as_tensor(loss)
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ConfigError(f"loss must be scalar, got shape {loss.shape}")
    single = isinstance(wrt, Tensor)
    targets = [wrt] if single else list(wrt)

    order = _toposort(loss)
    grads = {loss.node_id: Tensor(np.ones_like(loss.data))}
    kept = {t.node_id for t in targets}

    def run():
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None or node._rule is None:
                if g is not None and node.node_id in kept:
                    grads[node.node_id] = g
                continue
            if create_graph and node._op in _NON_DIFFERENTIABLE_BACKWARD:
                raise UnsupportedOpError(
                    f"op '{node._op}' has no differentiable backward; "
                    "second-order gradients are unavailable through it"
                )
            parent_grads = node._rule(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(p.node_id)
                grads[p.node_id] = pg if prev is None else add(prev, pg)
            if node.node_id in kept:
                grads[node.node_id] = g

    if create_graph:
        run()
    else:
        with no_grad():
            run()

    out = [grads.get(t.node_id) or Tensor(np.zeros_like(t.data)) for t in targets]
    return out[0] if single else out


def backward(loss, params):
    """First-order gradients as a {name: Tensor} map for a parameter dict."""
    names = list(params)
    gs = grad(loss, [params[n] for n in names], create_graph=False)
    return dict(zip(names, gs))


def gradient_as_graph(scalar, wrt):
    """The gradient of `scalar` w.r.t. `wrt` as a differentiable graph node."""
    return grad(scalar, wrt, create_graph=True)


# ops whose backward cannot be taped; none of the built-ins qualify, but the
# registry lets extensions (and tests) declare such ops honestly
_NON_DIFFERENTIABLE_BACKWARD = set()
