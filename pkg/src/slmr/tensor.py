"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a tensor that tracks gradients records a ``Function``
node on the output. Calling :meth:`Tensor.backward` on a scalar walks those
nodes in reverse topological order, so each node's backward rule runs once.

Convolution and the GRU recurrence are registered as fused primitives with
hand-written backward passes; everything else is composed from the
elementwise, reduction and shape operations below.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / oracle code)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Function:
    """A recorded operation: parents plus a rule mapping output grad to parent grads."""

    __slots__ = ("parents", "saved")

    def __init__(self, *parents: "Tensor"):
        self.parents = parents
        self.saved: tuple = ()

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs) -> "Tensor":
        tensors = tuple(as_tensor(t) for t in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        track = _GRAD_ENABLED and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=track, _creator=fn if track else None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_creator", "name")
    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _creator: Optional[Function] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._creator = _creator
        self.name = name

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method aliases -----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    # -- differentiation ----------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)


def _raise_item(shape):
    raise ValueError(f"item() requires a single-element tensor, got shape {list(shape)}")


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data: ArrayLike, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...], opname: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ValueError(
            f"{opname}: shapes {list(a)} and {list(b)} are not broadcast-compatible"
        ) from None


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise binary operations
# ---------------------------------------------------------------------------

class _Add(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape, "add")
        self.saved = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        sa, sb = self.saved
        return unbroadcast(g, sa), unbroadcast(g, sb)


class _Sub(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape, "sub")
        self.saved = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        sa, sb = self.saved
        return unbroadcast(g, sa), unbroadcast(-g, sb)


class _Mul(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape, "mul")
        self.saved = (a, b)
        return a * b

    def backward(self, g):
        a, b = self.saved
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


class _Div(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape, "div")
        self.saved = (a, b)
        return a / b

    def backward(self, g):
        a, b = self.saved
        return unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)


_BINARY = {"add": _Add, "sub": _Sub, "mul": _Mul, "div": _Div}


def elementwise(op: str, a: ArrayLike, b: ArrayLike) -> Tensor:
    """Apply ``add``/``sub``/``mul``/``div`` with numpy broadcasting."""
    try:
        cls = _BINARY[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_BINARY)}") from None
    return cls.apply(a, b)


def add(a, b):
    return _Add.apply(a, b)


def sub(a, b):
    return _Sub.apply(a, b)


def mul(a, b):
    return _Mul.apply(a, b)


def div(a, b):
    return _Div.apply(a, b)


# ---------------------------------------------------------------------------
# unary maps
# ---------------------------------------------------------------------------

class _Power(Function):
    def forward(self, a, exponent):
        self.saved = (a, exponent)
        return a ** exponent

    def backward(self, g):
        a, p = self.saved
        return (g * p * a ** (p - 1),)


class _Sqrt(Function):
    def forward(self, a):
        if np.any(a < 0):
            raise ValueError("sqrt of negative value")
        out = np.sqrt(a)
        self.saved = (out,)
        return out

    def backward(self, g):
        (out,) = self.saved
        # subgradient 0 at the origin keeps RMSE losses finite on exact fits
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)


class _Relu(Function):
    def forward(self, a):
        self.saved = (a > 0,)
        return np.where(a > 0, a, 0.0)

    def backward(self, g):
        return (g * self.saved[0],)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * a))


class _Sigmoid(Function):
    def forward(self, a):
        out = _sigmoid(a)
        self.saved = (out,)
        return out

    def backward(self, g):
        (s,) = self.saved
        return (g * s * (1.0 - s),)


class _Tanh(Function):
    def forward(self, a):
        out = np.tanh(a)
        self.saved = (out,)
        return out

    def backward(self, g):
        (t,) = self.saved
        return (g * (1.0 - t * t),)


def power(a, exponent: float):
    return _Power.apply(a, exponent=float(exponent))


def square(a):
    return mul(a, a)


def sqrt(a):
    return _Sqrt.apply(a)


def relu(a):
    return _Relu.apply(a)


def sigmoid(a):
    return _Sigmoid.apply(a)


def tanh(a):
    return _Tanh.apply(a)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _normalize_axis(axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} is out of range for tensor with {ndim} dims")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


class _Reduce(Function):
    def forward(self, a, op, axis, keepdims):
        axes = _normalize_axis(axis, a.ndim)
        if op == "sum":
            out = a.sum(axis=axes, keepdims=keepdims)
        else:
            out = a.mean(axis=axes, keepdims=keepdims)
        count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
        self.saved = (a.shape, axes, keepdims, op, count)
        return out

    def backward(self, g):
        shape, axes, keepdims, op, count = self.saved
        if not keepdims:
            g = np.expand_dims(g, axes if axes is not None else tuple(range(len(shape))))
        g = np.broadcast_to(g, shape)
        if op == "mean":
            g = g / count
        return (np.array(g),)


def reduce(op: str, a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axis`` (all axes when ``None``)."""
    if op not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {op!r}; expected 'sum' or 'mean'")
    return _Reduce.apply(a, op=op, axis=axis, keepdims=keepdims)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    return reduce("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    return reduce("mean", a, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# shape operations
# ---------------------------------------------------------------------------

class _Reshape(Function):
    def forward(self, a, shape):
        self.saved = (a.shape,)
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.saved[0]),)


class _Transpose(Function):
    def forward(self, a, axes):
        axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
        self.saved = (np.argsort(axes),)
        return np.transpose(a, axes)

    def backward(self, g):
        return (np.transpose(g, self.saved[0]),)


class _GetItem(Function):
    def forward(self, a, index):
        self.saved = (a.shape, index)
        return np.array(a[index])

    def backward(self, g):
        shape, index = self.saved
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)


class _Concat(Function):
    def forward(self, *arrays, axis):
        self.saved = (axis, [a.shape[axis] for a in arrays])
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        axis, sizes = self.saved
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, cuts, axis=axis))


class _Stack(Function):
    def forward(self, *arrays, axis):
        self.saved = (axis, len(arrays))
        return np.stack(arrays, axis=axis)

    def backward(self, g):
        axis, n = self.saved
        return tuple(np.take(g, i, axis=axis) for i in range(n))


def reshape(a, shape):
    return _Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None):
    return _Transpose.apply(a, axes=axes)


def getitem(a, index):
    return _GetItem.apply(a, index=index)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return _Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return _Stack.apply(*tensors, axis=axis)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

class _MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim != 2:
            raise ValueError(
                f"matmul expects a[..., m, k] @ b[k, n], got {list(a.shape)} and {list(b.shape)}"
            )
        if a.shape[-1] != b.shape[0]:
            raise ValueError(
                f"matmul inner dimensions differ: {list(a.shape)} @ {list(b.shape)}"
            )
        self.saved = (a, b)
        return a @ b

    def backward(self, g):
        a, b = self.saved
        da = g @ b.T
        db = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return da, db


def matmul(a, b):
    """``a[..., m, k] @ b[k, n]``; leading dims of ``a`` act as a batch."""
    return _MatMul.apply(a, b)


# ---------------------------------------------------------------------------
# fused primitives: dilated same-padded conv1d and the GRU recurrence
# ---------------------------------------------------------------------------

def _conv_columns(xp: np.ndarray, k: int, dilation: int, t: int) -> np.ndarray:
    # (B, Cin, k, T): tap j sees xp[..., j*d : j*d + T]
    return np.stack([xp[:, :, j * dilation: j * dilation + t] for j in range(k)], axis=2)


class _Conv1d(Function):
    def forward(self, x, w, b, dilation):
        if x.ndim != 3:
            raise ValueError(f"conv1d expects x[B, Cin, T], got shape {list(x.shape)}")
        cout, cin, k = w.shape
        if x.shape[1] != cin:
            raise ValueError(f"conv1d: input has {x.shape[1]} channels, weights expect {cin}")
        if k % 2 == 0:
            raise ValueError(f"conv1d: kernel size must be odd for same padding, got {k}")
        if b.shape != (cout,):
            raise ValueError(f"conv1d: bias shape {list(b.shape)} != [{cout}]")
        bsz, _, t = x.shape
        pad = (k - 1) * dilation // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        cols = _conv_columns(xp, k, dilation, t).reshape(bsz, cin * k, t)
        w2 = w.reshape(cout, cin * k)
        self.saved = (cols, w2, x.shape, w.shape, dilation, pad)
        return np.matmul(w2, cols) + b[None, :, None]

    def backward(self, g):
        cols, w2, xshape, wshape, dilation, pad = self.saved
        bsz, cin, t = xshape
        cout, _, k = wshape
        db = g.sum(axis=(0, 2))
        dw = np.einsum("bot,bct->oc", g, cols, optimize=True).reshape(wshape)
        dcols = np.matmul(w2.T, g).reshape(bsz, cin, k, t)
        dxp = np.zeros((bsz, cin, t + 2 * pad))
        for j in range(k):
            dxp[:, :, j * dilation: j * dilation + t] += dcols[:, :, j]
        dx = dxp[:, :, pad: pad + t]
        return np.ascontiguousarray(dx), dw, db


def conv1d_raw(x, weight, bias, dilation: int = 1) -> Tensor:
    """Same-padded dilated 1-D convolution, ``x[B, Cin, T] -> [B, Cout, T]``."""
    if int(dilation) < 1:
        raise ValueError(f"conv1d: dilation must be >= 1, got {dilation}")
    return _Conv1d.apply(x, weight, bias, dilation=int(dilation))


class _GRU(Function):
    """Whole-sequence GRU with gate blocks ordered [update, reset, candidate].

    h_t = (1 - z) * h_{t-1} + z * tanh(x W_n + (r * h_{t-1}) U_n + b_n)
    """

    def forward(self, x, w, u, b, h0):
        bsz, t, d = x.shape
        h = u.shape[0]
        if w.shape != (d, 3 * h):
            raise ValueError(f"gru: input size {d} does not match weights {list(w.shape)}")
        if h0.shape != (bsz, h):
            raise ValueError(f"gru: h0 shape {list(h0.shape)} != [{bsz}, {h}]")
        # time-major buffers keep every per-step slice contiguous
        xt = np.ascontiguousarray(x.transpose(1, 0, 2))
        xw = (xt.reshape(-1, d) @ w + b).reshape(t, bsz, 3 * h)
        u_zr, u_n = u[:, : 2 * h], u[:, 2 * h:]
        hs = np.empty((t + 1, bsz, h))
        hs[0] = h0
        zr = np.empty((t, bsz, 2 * h))
        n = np.empty((t, bsz, h))
        rh = np.empty((t, bsz, h))
        for step in range(t):
            hp = hs[step]
            zr[step] = _sigmoid(xw[step, :, : 2 * h] + hp @ u_zr)
            z = zr[step, :, :h]
            np.multiply(zr[step, :, h:], hp, out=rh[step])
            n[step] = np.tanh(xw[step, :, 2 * h:] + rh[step] @ u_n)
            hs[step + 1] = hp + z * (n[step] - hp)
        self.saved = (xt, w, u, hs, zr, n, rh)
        return np.ascontiguousarray(hs[1:].transpose(1, 0, 2))

    def backward(self, g):
        xt, w, u, hs, zr, n_all, rh = self.saved
        t, bsz, d = xt.shape
        h = u.shape[0]
        gt = np.ascontiguousarray(g.transpose(1, 0, 2))
        u_zr_t = np.ascontiguousarray(u[:, : 2 * h].T)
        u_n_t = np.ascontiguousarray(u[:, 2 * h:].T)
        da = np.empty((t, bsz, 3 * h))
        dh = np.zeros((bsz, h))
        for step in reversed(range(t)):
            dh += gt[step]
            hp = hs[step]
            z = zr[step, :, :h]
            r = zr[step, :, h:]
            n = n_all[step]
            dzh = dh * z
            dan = dzh * (1.0 - n * n)
            drh = dan @ u_n_t
            da_step = da[step]
            da_step[:, :h] = dh * (n - hp) * z * (1.0 - z)
            da_step[:, h: 2 * h] = drh * hp * r * (1.0 - r)
            da_step[:, 2 * h:] = dan
            dh = dh - dzh + drh * r + da_step[:, : 2 * h] @ u_zr_t
        # weight grads as single large products over (time, batch)
        du = np.empty_like(u)
        du[:, : 2 * h] = hs[:-1].reshape(-1, h).T @ da[:, :, : 2 * h].reshape(-1, 2 * h)
        du[:, 2 * h:] = rh.reshape(-1, h).T @ da[:, :, 2 * h:].reshape(-1, h)
        da2 = da.reshape(-1, 3 * h)
        dw = xt.reshape(-1, d).T @ da2
        db = da2.sum(axis=0)
        dx = (da2 @ w.T).reshape(t, bsz, d).transpose(1, 0, 2)
        return np.ascontiguousarray(dx), dw, du, db, dh


def gru_raw(x, w, u, b, h0) -> Tensor:
    """Run a GRU over ``x[B, T, D]`` and return all hidden states ``[B, T, H]``."""
    return _GRU.apply(x, w, u, b, h0)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        if node._creator is not None:
            for p in node._creator.parents:
                if p.requires_grad and id(p) not in seen:
                    stack_.append((p, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-tracked leaf."""
    if not loss.requires_grad:
        raise ValueError("backward() called on a tensor that does not track gradients")
    if grad is None:
        if loss.size != 1:
            raise ValueError(
                f"backward() needs a scalar loss, got shape {list(loss.shape)}"
            )
        grad = np.ones(loss.shape)
    grads = {id(loss): np.asarray(grad, dtype=np.float64)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._creator is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._creator.backward(g)
        for parent, pg in zip(node._creator.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def numerical_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value near element {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return out


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Union[Tensor, np.ndarray],
    eps: float = 1e-5,
    others: Iterable[Tensor] = (),
) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a tensor to a scalar tensor. Tensors in ``others`` are checked
    as well (their gradients are taken with respect to the same ``f``).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = x if isinstance(x, Tensor) else Tensor(x)
    x.requires_grad = True
    targets = [x, *others]
    for t in targets:
        t.requires_grad = True
        t.grad = None
    out = f(x)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("function output is not finite")
    out.backward()
    worst = 0.0
    for t in targets:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)

        def scalar(arr, t=t):
            saved = t.data
            t.data = arr
            try:
                with no_grad():
                    return float(f(x).data)
            finally:
                t.data = saved

        numeric = numerical_grad(scalar, t.data.copy(), eps)
        rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(numeric))
        # elements with both gradients ~0 carry no signal
        rel = np.where(np.abs(analytic - numeric) < 1e-10, 0.0, rel)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst
