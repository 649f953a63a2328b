"""float64 tensors with tape-based reverse-mode automatic differentiation.

Every value the network computes flows through the Tensor class defined here.
Storage is row-major numpy float64 throughout: the project trades speed for
verifiability (gradient checks against central finite differences are part of
the test suite). Each differentiable op records a backward closure on a
dynamic tape, so graph shape is free to vary between steps (the number of
regions per image does).

Broadcasting in elementwise ops follows numpy's right-aligned rules, e.g.
adding a (C,) bias to an (H, W, C) map; gradients are reduced back to the
operand shapes.
"""

from __future__ import annotations

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    """Dense n-dimensional float64 array with optional gradient tracking.

    ``grad`` is allocated lazily by ``backward`` and accumulates across calls
    until ``zero_grad`` is invoked, which is what makes summed multi-task
    losses behave naturally.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        """Copy of this tensor cut loose from the tape."""
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, -1.0)

    def __sub__(self, other):
        return add(self, multiply(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), multiply(self, -1.0))

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return multiply(self, 1.0 / float(scalar))

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def max(self, axis=None):
        return max(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents, backward_fn) -> Tensor:
    """Wrap ``data`` in a Tensor, recording the op when the tape is live.

    ``backward_fn(grad)`` must return an iterable of (parent, parent_grad)
    pairs; only parents with requires_grad receive contributions.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate grad with d(loss)/d(tensor) for every reachable tensor.

    The loss must be scalar (a single stored value). Gradients accumulate
    across repeated calls until explicitly zeroed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    # Iterative post-order DFS: parents appear before their consumers.
    topo = []
    seen = {id(loss)}
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, False))

    work = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = work.pop(id(node), None)
        if g is None:
            continue  # unreachable via differentiable paths
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad += g
        if node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in work:
                work[key] = work[key] + pg
            else:
                work[key] = pg


# ---------------------------------------------------------------------------
# elementwise ops and reductions
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def back(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _node(out, (a, b), back)


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def back(g):
        return ((a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape)))

    return _node(out, (a, b), back)


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0.0
    return _node(np.where(mask, t.data, 0.0), (t,), lambda g: ((t, g * mask),))


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _node(y, (t,), lambda g: ((t, g * y * (1.0 - y)),))


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    return _node(y, (t,), lambda g: ((t, g * (1.0 - y * y)),))


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0.0):
        raise ValueError("log requires strictly positive input values")
    return _node(np.log(t.data), (t,), lambda g: ((t, g / t.data),))


def exp(t: Tensor) -> Tensor:
    y = np.exp(t.data)
    return _node(y, (t,), lambda g: ((t, g * y),))


def softmax(t: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = t.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((t, y * (g - dot)),)

    return _node(y, (t,), back)


def sum(t: Tensor, axis=None) -> Tensor:  # noqa: A001 - spec-mandated name
    out = t.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return ((t, np.broadcast_to(g, t.data.shape).copy()),)
        ge = np.expand_dims(g, axis)
        return ((t, np.broadcast_to(ge, t.data.shape).copy()),)

    return _node(out, (t,), back)


def mean(t: Tensor, axis=None) -> Tensor:
    n = t.data.size if axis is None else t.data.shape[axis]
    return multiply(sum(t, axis), 1.0 / n)


def max(t: Tensor, axis=None) -> Tensor:  # noqa: A001 - spec-mandated name
    """Max reduction; ties route the gradient to the first occurrence."""
    if axis is None:
        idx = int(np.argmax(t.data))
        out = t.data.reshape(-1)[idx]

        def back(g):
            z = np.zeros_like(t.data)
            z.reshape(-1)[idx] = g
            return ((t, z),)

        return _node(out, (t,), back)

    idx = np.argmax(t.data, axis=axis)
    out = np.take_along_axis(t.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        z = np.zeros_like(t.data)
        np.put_along_axis(z, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return ((t, z),)

    return _node(out, (t,), back)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(t: Tensor, shape) -> Tensor:
    orig = t.data.shape
    return _node(t.data.reshape(shape), (t,), lambda g: ((t, g.reshape(orig)),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        pairs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            pairs.append((t, g[tuple(sl)]))
        return pairs

    return _node(out, tuple(tensors), back)


def zero_pad(t: Tensor, pad) -> Tensor:
    """Constant zero padding; ``pad`` is a per-axis (before, after) sequence."""
    out = np.pad(t.data, pad)
    sl = tuple(slice(b, b + s) for (b, _), s in zip(pad, t.data.shape))
    return _node(out, (t,), lambda g: ((t, g[sl]),))


def gather_rows(t: Tensor, idx) -> Tensor:
    """Select rows along axis 0; backward scatter-adds (repeats accumulate)."""
    idx = np.asarray(idx, dtype=np.intp)
    out = t.data[idx]

    def back(g):
        z = np.zeros_like(t.data)
        np.add.at(z, idx, g)
        return ((t, z),)

    return _node(out, (t,), back)


def upsample2x(t: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of an (H, W, C) map."""
    h, w, c = t.data.shape
    out = np.repeat(np.repeat(t.data, 2, axis=0), 2, axis=1)

    def back(g):
        return ((t, g.reshape(h, 2, w, 2, c).sum(axis=(1, 3))),)

    return _node(out, (t,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out = a.data @ b.data

    def back(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _node(out, (a, b), back)


# ---------------------------------------------------------------------------
# convolution and sampling
# ---------------------------------------------------------------------------

def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """2-D convolution (cross-correlation) over an (H, W, C_in) tensor.

    ``kernel`` has shape (kh, kw, C_in, C_out). Output spatial extents are
    floor((in + 2*pad - k)/stride) + 1. Forward lowers to a single GEMM via
    patch extraction; the patch matrix is cached for the backward pass.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects input (H, W, C_in) and kernel (kh, kw, C_in, C_out)")
    h, w, cin = x.data.shape
    kh, kw, kcin, cout = kernel.data.shape
    if cin != kcin:
        raise ValueError(f"conv2d channel mismatch: input has {cin} channels, kernel expects {kcin}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ValueError("conv2d stride must be positive and padding non-negative")
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d kernel ({kh}x{kw}) exceeds padded input ({hp}x{wp})")

    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(oh, ow, kh, kw, cin), strides=(s0 * sh, s1 * sw, s0, s1, s2))
    col = windows.reshape(oh * ow, kh * kw * cin)  # materializes a copy
    k2 = kernel.data.reshape(kh * kw * cin, cout)
    out = (col @ k2).reshape(oh, ow, cout)

    def back(g):
        g2 = g.reshape(oh * ow, cout)
        dk = (col.T @ g2).reshape(kernel.data.shape)
        dcol = (g2 @ k2.T).reshape(oh, ow, kh, kw, cin)
        dxp = np.zeros((hp, wp, cin))
        for i in range(kh):
            for j in range(kw):
                dxp[i:i + sh * oh:sh, j:j + sw * ow:sw] += dcol[:, :, i, j, :]
        dx = dxp[ph:ph + h, pw:pw + w] if (ph or pw) else dxp
        return ((x, dx), (kernel, dk))

    return _node(out, (x, kernel), back)


def bilinear_sample(fmap: Tensor, points) -> Tensor:
    """Bilinear interpolation of an (H, W, C) map at float (y, x) points.

    Out-of-range coordinates clamp to the border. Returns (len(points), C);
    an empty point list yields an empty result. Differentiable with respect
    to the map values (the sample locations are treated as constants).
    """
    fmap = as_tensor(fmap)
    h, w, c = fmap.data.shape
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        return _node(np.zeros((0, c)), (fmap,), lambda g: ((fmap, np.zeros_like(fmap.data)),))

    y = np.clip(pts[:, 0], 0.0, h - 1.0)
    x = np.clip(pts[:, 1], 0.0, w - 1.0)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2 if h > 1 else 0)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2 if w > 1 else 0)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0)[:, None]
    fx = (x - x0)[:, None]

    m = fmap.data
    out = ((1 - fy) * (1 - fx) * m[y0, x0] + (1 - fy) * fx * m[y0, x1]
           + fy * (1 - fx) * m[y1, x0] + fy * fx * m[y1, x1])

    def back(g):
        dm = np.zeros_like(m)
        np.add.at(dm, (y0, x0), g * (1 - fy) * (1 - fx))
        np.add.at(dm, (y0, x1), g * (1 - fy) * fx)
        np.add.at(dm, (y1, x0), g * fy * (1 - fx))
        np.add.at(dm, (y1, x1), g * fy * fx)
        return ((fmap, dm),)

    return _node(out, (fmap,), back)


# ---------------------------------------------------------------------------
# loss primitives
# ---------------------------------------------------------------------------

def smooth_l1(pred: Tensor, target) -> Tensor:
    """Elementwise smooth-L1 (Huber at delta=1) against a constant target."""
    tgt = np.asarray(target, dtype=np.float64)
    d = pred.data - tgt
    absd = np.abs(d)
    out = np.where(absd < 1.0, 0.5 * d * d, absd - 0.5)

    def back(g):
        return ((pred, g * np.clip(d, -1.0, 1.0)),)

    return _node(out, (pred,), back)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy on raw logits (numerically stable)."""
    z = np.asarray(targets, dtype=np.float64)
    x = logits.data
    out = np.maximum(x, 0.0) - x * z + np.log1p(np.exp(-np.abs(x)))

    def back(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return ((logits, g * (s - z)),)

    return _node(out, (logits,), back)


def binary_cross_entropy(p: Tensor, targets, eps: float = 1e-7) -> Tensor:
    """Elementwise BCE on probabilities already in (0, 1), clamped to (eps, 1-eps)."""
    z = np.asarray(targets, dtype=np.float64)
    pc = np.clip(p.data, eps, 1.0 - eps)
    out = -(z * np.log(pc) + (1.0 - z) * np.log(1.0 - pc))

    def back(g):
        inside = (p.data > eps) & (p.data < 1.0 - eps)
        return ((p, g * inside * (pc - z) / (pc * (1.0 - pc))),)

    return _node(out, (p,), back)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row cross-entropy of (N, K) logits against integer labels (N,)."""
    y = np.asarray(labels, dtype=np.intp)
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    logp = x - lse
    rows = np.arange(x.shape[0])
    out = -logp[rows, y]

    def back(g):
        soft = np.exp(logp)
        soft[rows, y] -= 1.0
        return ((logits, soft * g[:, None]),)

    return _node(out, (logits,), back)


# ---------------------------------------------------------------------------
# parameters and the optimizer
# ---------------------------------------------------------------------------

class Parameter:
    """Named trainable tensor plus its momentum buffer."""

    __slots__ = ("name", "tensor", "velocity")

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.tensor = Tensor(values, requires_grad=True)
        self.velocity = np.zeros_like(self.tensor.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.data.shape})"


class ParamStore:
    """Creates and holds uniquely named parameters in a deterministic order."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Parameter] = {}

    def new(self, name: str, shape, init: str = "he", std: float | None = None) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            values = np.zeros(shape)
        elif init == "he":
            fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
            values = self.rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        elif init == "normal":
            values = self.rng.normal(0.0, std, shape)
        else:
            raise ValueError(f"unknown init kind: {init}")
        p = Parameter(name, values)
        self.params[name] = p
        return p

    def ordered(self) -> list[Parameter]:
        return list(self.params.values())


def sgd_momentum_step(params, lr: float, momentum: float) -> None:
    """velocity <- momentum * velocity - lr * grad; value <- value + velocity."""
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"parameter {p.name} has no gradient; run backward first")
        p.velocity *= momentum
        p.velocity -= lr * p.tensor.grad
        p.tensor.data += p.velocity


def zero_grads(params) -> None:
    for p in params:
        p.tensor.grad = None
