"""Rank-4 tensors with a define-by-run reverse-mode tape."""

import itertools

import numpy as np

_seq = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class TapeNode:
    """One recorded op: its inputs and a closure mapping output grad to input grads."""

    __slots__ = ("op", "inputs", "backward_fn", "seq")

    def __init__(self, op, inputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = next(_seq)

    def __repr__(self):
        return f"TapeNode({self.op}, seq={self.seq})"


class Tensor:
    """Dense (batch, channel, height, width) array with an optional gradient slot.

    Data is float32 unless float64 is passed explicitly (used by the
    gradient checkers). Arrays with fewer than four dims are promoted by
    prepending unit axes.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "_injected")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            # only an explicit float64 array keeps double precision
            is_double = isinstance(data, np.ndarray) and data.dtype == np.float64
            dtype = np.float64 if is_double else np.float32
        arr = np.asarray(data)
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.ndim > 4:
            raise ShapeError(f"tensor must be rank 4, got shape {arr.shape}")
        if arr.ndim < 4:
            arr = arr.reshape((1,) * (4 - arr.ndim) + arr.shape)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self._injected = None

    @classmethod
    def zeros(cls, shape, requires_grad=False, dtype=np.float32):
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.scalar_add(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.scalar_add(self, -float(other))

    def __rsub__(self, other):
        from . import ops

        return ops.scalar_add(ops.scalar_mul(self, -1.0), float(other))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            raise TypeError("only scalar multiplication is supported")
        return ops.scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scalar_mul(self, -1.0)


def record(op, out_data, inputs, backward_fn):
    """Wrap ``out_data`` in a Tensor, taping it if any input needs grad.

    ``backward_fn(grad_out)`` must return one array (or None) per input.
    """
    out = Tensor(out_data, dtype=out_data.dtype)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(inputs), backward_fn)
    return out


def inject_gradient(output, grad):
    """Queue an external gradient at ``output``; the next backward through it applies it."""
    grad = np.asarray(grad, dtype=output.dtype)
    if grad.size != output.size:
        raise ShapeError(f"injected gradient has {grad.size} elements, output has {output.size}")
    if not output.requires_grad:
        raise ContractError("inject_gradient target is not on the tape")
    grad = grad.reshape(output.shape)
    output._injected = grad.copy() if output._injected is None else output._injected + grad


def _topo_order(root):
    seen = set()
    ordered = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        ordered.append(t)
        if t.node is not None:
            stack.extend(x for x in t.node.inputs if x.requires_grad)
    ordered.sort(key=lambda t: -1 if t.node is None else t.node.seq, reverse=True)
    return ordered


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every taped tensor reachable from ``loss``.

    ``loss`` must be a scalar unless a gradient was injected at it. Any
    gradients injected at tensors inside the graph are added on the way.
    """
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor that is not on the tape")
    if loss._injected is None and loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads = {}
    if loss.size == 1 and loss._injected is None:
        grads[id(loss)] = np.ones_like(loss.data)

    for t in _topo_order(loss):
        g = grads.pop(id(t), None)
        if t._injected is not None:
            g = t._injected if g is None else g + t._injected
            t._injected = None
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
        if t.node is None:
            continue
        for inp, gi in zip(t.node.inputs, t.node.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(id(inp))
            grads[id(inp)] = gi if prev is None else prev + gi
