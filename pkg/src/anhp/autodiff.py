"""Minimal tape-based reverse-mode automatic differentiation over numpy arrays.

Every primitive is registered in :data:`PRIMITIVES` with a forward rule and a
vector-Jacobian product.  Operations are recorded on the active :class:`Tape`
whenever at least one input requires a gradient; with no active tape the same
code runs as plain float64 numpy with no bookkeeping.

Shapes are explicit: elementwise binary primitives accept operands of equal
shape, or one operand of shape ``()``.  Anything else must go through
:func:`expand` first.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "Primitive", "PRIMITIVES",
    "as_tensor", "evaluate", "backpropagate", "finite_difference_check", "FDReport",
    "add", "sub", "mul", "div", "neg", "matmul", "tanh", "exp", "log", "sin", "cos",
    "sqrt", "relu", "softplus", "sum", "concat", "stack", "reshape", "transpose",
    "expand", "take", "scatter",
]

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("anhp_tape", default=None)


class ShapeError(ValueError):
    """Raised when a primitive receives operands with incompatible extents."""

    def __init__(self, primitive: str, shapes: Sequence[tuple], detail: str = ""):
        self.primitive = primitive
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{primitive}: incompatible shapes {', '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    __slots__ = ("value", "requires_grad", "name", "node")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class Node:
    index: int
    primitive: "Primitive"
    inputs: tuple
    output: Tensor
    attrs: dict


class Tape:
    """Append-only record of primitive applications.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded when any input requires a gradient.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._params: dict[int, Tensor] = {}
        self._token = None

    @property
    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def _record(self, primitive: "Primitive", inputs: tuple, output: Tensor, attrs: dict) -> None:
        for t in inputs:
            if not t.requires_grad:
                continue
            if t.node is None:
                self._params.setdefault(id(t), t)
            elif t.node.index >= len(self.nodes) or self.nodes[t.node.index] is not t.node:
                raise ValueError(f"{primitive.name}: input was recorded on a different tape")
        node = Node(len(self.nodes), primitive, inputs, output, attrs)
        output.node = node
        self.nodes.append(node)

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded output from the current leaf values."""
        fresh: dict[int, np.ndarray] = {}
        outs = []
        for node in self.nodes:
            vals = [fresh.get(id(t), t.value) if t.node is not None else t.value for t in node.inputs]
            v = node.primitive.forward(*vals, **node.attrs)
            fresh[id(node.output)] = v
            outs.append(v)
        return outs

    def verify_replay(self) -> bool:
        return all(np.array_equal(v, n.output.value) for v, n in zip(self.replay(), self.nodes))


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable
    backward: Callable
    check: Callable | None = None


PRIMITIVES: dict[str, Primitive] = {}


def _register(name, forward, backward, check=None):
    PRIMITIVES[name] = Primitive(name, forward, backward, check)


def _apply(name: str, *inputs, **attrs) -> Tensor:
    prim = PRIMITIVES[name]
    tensors = tuple(as_tensor(x) for x in inputs)
    if prim.check is not None:
        prim.check(*[t.shape for t in tensors], **attrs)
    out = Tensor(prim.forward(*[t.value for t in tensors], **attrs))
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        tape._record(prim, tensors, out, attrs)
    return out


# -- shape checks ------------------------------------------------------------

def _binary_check(name):
    def check(sa, sb):
        if sa != sb and sa != () and sb != ():
            raise ShapeError(name, (sa, sb), "operands must match or one must be scalar")
    return check


def _unreduce(g, shape):
    # gradient w.r.t. a scalar operand that was implicitly broadcast
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def _matmul_check(sa, sb):
    if len(sa) not in (1, 2) or len(sb) not in (1, 2):
        raise ShapeError("matmul", (sa, sb), "only 1-D and 2-D operands")
    if sa[-1] != sb[0]:
        raise ShapeError("matmul", (sa, sb), f"inner extents {sa[-1]} != {sb[0]}")


def _softplus_check(sx, st):
    if st != sx and st != ():
        raise ShapeError("softplus", (sx, st), "temperature must match input or be scalar")


def _concat_check(*shapes, axis=0):
    if not shapes:
        raise ShapeError("concat", (), "nothing to concatenate")
    ref = shapes[0]
    for s in shapes:
        if len(s) != len(ref) or len(s) == 0:
            raise ShapeError("concat", shapes, "ranks differ or scalar operand")
        if any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != axis % len(ref)):
            raise ShapeError("concat", shapes, f"extents differ off axis {axis}")


def _stack_check(*shapes, axis=0):
    if not shapes or any(s != shapes[0] for s in shapes):
        raise ShapeError("stack", shapes, "all operands must share one shape")


def _reshape_check(sx, shape):
    if int(np.prod(sx, dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
        raise ShapeError("reshape", (sx, tuple(shape)))


def _transpose_check(sx):
    if len(sx) != 2:
        raise ShapeError("transpose", (sx,), "expects a matrix")


def _expand_check(sx, shape):
    try:
        np.broadcast_shapes(sx, tuple(shape))
    except ValueError:
        raise ShapeError("expand", (sx, tuple(shape))) from None
    if np.broadcast_shapes(sx, tuple(shape)) != tuple(shape):
        raise ShapeError("expand", (sx, tuple(shape)), "target must dominate source")


def _take_check(sx, idx, axis=0):
    if len(sx) == 0:
        raise ShapeError("take", (sx,), "cannot index a scalar")


def _scatter_check(sx, idx, n):
    if len(sx) == 0 or len(idx) != sx[0]:
        raise ShapeError("scatter", (sx, (len(idx),)), "one index per leading row")


# -- forward / backward rules -------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus_fwd(x, tau):
    z = x / tau
    return tau * (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))))


def _softplus_bwd(g, out, x, tau):
    z = x / tau
    s = _sigmoid(z)
    gtau = g * (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - z * s)
    return g * s, _unreduce(gtau, np.shape(tau))


def _matmul_bwd(g, out, a, b):
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 2:
        return np.outer(g, b), a.T @ g
    if b.ndim == 2:
        return b @ g, np.outer(a, g)
    return g * b, g * a


def _sum_fwd(x, axis=None):
    return np.sum(x, axis=axis)


def _sum_bwd(g, out, x, axis=None):
    if axis is None:
        return (np.full(x.shape, float(g)),)
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)


def _concat_bwd(g, out, *xs, axis=0):
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _stack_bwd(g, out, *xs, axis=0):
    return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))


def _expand_bwd(g, out, x, shape):
    lead = g.ndim - x.ndim
    g = g.sum(axis=tuple(range(lead))) if lead else g
    keep = tuple(i for i, n in enumerate(x.shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return (g.reshape(x.shape),)


def _take_bwd(g, out, x, idx, axis=0):
    gx = np.zeros_like(x)
    np.add.at(gx, (slice(None),) * axis + (np.asarray(idx),), g)
    return (gx,)


def _scatter_fwd(x, idx, n):
    out = np.zeros((n,) + x.shape[1:])
    out[np.asarray(idx, dtype=np.intp)] = x
    return out


_register("add", lambda a, b: a + b,
          lambda g, o, a, b: (_unreduce(g, a.shape), _unreduce(g, b.shape)), _binary_check("add"))
_register("sub", lambda a, b: a - b,
          lambda g, o, a, b: (_unreduce(g, a.shape), _unreduce(-g, b.shape)), _binary_check("sub"))
_register("mul", lambda a, b: a * b,
          lambda g, o, a, b: (_unreduce(g * b, a.shape), _unreduce(g * a, b.shape)), _binary_check("mul"))
_register("div", lambda a, b: a / b,
          lambda g, o, a, b: (_unreduce(g / b, a.shape), _unreduce(-g * a / (b * b), b.shape)),
          _binary_check("div"))
_register("neg", lambda x: -x, lambda g, o, x: (-g,))
_register("matmul", lambda a, b: a @ b, _matmul_bwd, _matmul_check)
_register("tanh", np.tanh, lambda g, o, x: (g * (1.0 - o * o),))
_register("exp", np.exp, lambda g, o, x: (g * o,))
_register("log", np.log, lambda g, o, x: (g / x,))
_register("sin", np.sin, lambda g, o, x: (g * np.cos(x),))
_register("cos", np.cos, lambda g, o, x: (-g * np.sin(x),))
_register("sqrt", np.sqrt, lambda g, o, x: (g / (2.0 * o),))
_register("relu", lambda x: np.maximum(x, 0.0), lambda g, o, x: (g * (x > 0),))
_register("softplus", _softplus_fwd, _softplus_bwd, _softplus_check)
_register("sum", _sum_fwd, _sum_bwd)
_register("concat", lambda *xs, axis=0: np.concatenate(xs, axis=axis), _concat_bwd, _concat_check)
_register("stack", lambda *xs, axis=0: np.stack(xs, axis=axis), _stack_bwd, _stack_check)
_register("reshape", lambda x, shape: np.reshape(x, shape),
          lambda g, o, x, shape: (g.reshape(x.shape),), _reshape_check)
_register("transpose", lambda x: x.T, lambda g, o, x: (g.T,), _transpose_check)
_register("expand", lambda x, shape: np.broadcast_to(x, tuple(shape)).copy(), _expand_bwd, _expand_check)
_register("take", lambda x, idx, axis=0: np.take(x, np.asarray(idx, dtype=np.intp), axis=axis),
          _take_bwd, _take_check)
_register("scatter", _scatter_fwd,
          lambda g, o, x, idx, n: (g[np.asarray(idx, dtype=np.intp)],), _scatter_check)


# -- public op wrappers ------------------------------------------------------

def add(a, b): return _apply("add", a, b)
def sub(a, b): return _apply("sub", a, b)
def mul(a, b): return _apply("mul", a, b)
def div(a, b): return _apply("div", a, b)
def neg(x): return _apply("neg", x)
def matmul(a, b): return _apply("matmul", a, b)
def tanh(x): return _apply("tanh", x)
def exp(x): return _apply("exp", x)
def log(x): return _apply("log", x)
def sin(x): return _apply("sin", x)
def cos(x): return _apply("cos", x)
def sqrt(x): return _apply("sqrt", x)
def relu(x): return _apply("relu", x)


def softplus(x, tau=1.0) -> Tensor:
    """``tau * log(1 + exp(x / tau))``, evaluated without overflow."""
    return _apply("softplus", x, tau)


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    return _apply("sum", x, axis=axis)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    return _apply("concat", *xs, axis=axis)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    return _apply("stack", *xs, axis=axis)


def reshape(x, shape) -> Tensor:
    return _apply("reshape", x, shape=tuple(shape))


def transpose(x) -> Tensor:
    return _apply("transpose", x)


def expand(x, shape) -> Tensor:
    """Explicit broadcast of ``x`` to ``shape`` (numpy broadcasting rules)."""
    return _apply("expand", x, shape=tuple(shape))


def take(x, idx, axis: int = 0) -> Tensor:
    return _apply("take", x, idx=tuple(int(i) for i in idx), axis=axis)


def scatter(x, idx, n: int) -> Tensor:
    """Rows of ``x`` placed at positions ``idx`` of an ``n``-row zero array."""
    return _apply("scatter", x, idx=tuple(int(i) for i in idx), n=int(n))


# -- driving the tape --------------------------------------------------------

def evaluate(graph: Callable[..., Tensor], *inputs, tape: Tape | None = None) -> tuple[Tensor, Tape]:
    """Run ``graph(*inputs)`` on a tape.

    Inputs that are not already tensors become trainable leaves, so every
    primitive that touches them is recorded.
    """
    tape = Tape() if tape is None else tape
    tensors = [x if isinstance(x, Tensor) else Tensor(x, requires_grad=True) for x in inputs]
    with tape:
        out = graph(*tensors)
    return out, tape


def backpropagate(tape: Tape, output: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    """Gradients of the scalar ``output`` with respect to trainable leaves.

    Returns a dict keyed by the parameter tensors themselves.  Parameters that
    ``output`` does not depend on get zero arrays.
    """
    if output.shape != ():
        raise ValueError(f"backpropagate needs a scalar output, got shape {output.shape}")
    if output.node is not None and (output.node.index >= len(tape.nodes)
                                    or tape.nodes[output.node.index] is not output.node):
        raise ValueError("output was not recorded on this tape")
    params = tape.parameters if params is None else list(params)
    grads: dict[int, np.ndarray] = {id(output): np.ones(())}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.primitive.backward(g, node.output.value, *[t.value for t in node.inputs], **node.attrs)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.array(gi, dtype=np.float64, copy=True)
    return {p: grads.get(id(p), np.zeros(p.shape)).reshape(p.shape) for p in params}


@dataclass
class FDReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    n_coordinates: int
    worst: tuple | None = None  # (param index, flat coordinate, analytic, numeric)
    failures: list = field(default_factory=list)


def finite_difference_check(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
                            tolerance: float = 1e-4, floor: float = 1e-6) -> FDReport:
    """Compare reverse-mode gradients of ``fn()`` with central differences.

    ``fn`` takes no arguments and must rebuild its graph from the current
    values of ``params`` on every call.  The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    with Tape() as tape:
        out = fn()
    analytic = backpropagate(tape, out, params)
    worst, max_err, failures, count = None, 0.0, [], 0
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        a_flat = analytic[p].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = fn().item()
            flat[j] = orig - step
            fm = fn().item()
            flat[j] = orig
            num = (fp - fm) / (2.0 * step)
            a = a_flat[j]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            count += 1
            if worst is None or err > max_err:
                max_err = err
                worst = (pi, j, float(a), float(num))
            if err > tolerance:
                failures.append((pi, j, float(a), float(num)))
    return FDReport(float(max_err), tolerance, bool(max_err <= tolerance), count, worst, failures)
