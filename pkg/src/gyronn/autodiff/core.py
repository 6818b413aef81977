"""Define-by-run reverse-mode differentiation over batched numpy arrays.

A :class:`Tensor` wraps a float64 array and remembers the operation that
produced it.  Plain ndarrays are treated as constants, so every function in
:mod:`gyronn.autodiff.functions` accepts either kind of input and only builds
graph nodes when at least one argument is a Tensor.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..exceptions import UnsupportedOpError

__all__ = ["Tensor", "Tape", "grad", "backward", "is_tensor", "value_of",
           "as_tensor", "record", "register_op", "ORACLE_ONLY_OPS"]


class Tensor:
    """Array node of a computation graph.

    Parameters
    ----------
    value : array_like
        Forward value, stored as a float64 array.
    op : str, default="leaf"
        Tag of the operation that produced the node.
    parents : tuple, default=()
        Inputs of the operation (Tensors or constant arrays).
    vjp : callable or None
        Maps the output cotangent to a tuple of input cotangents, one entry
        per parent (entries of constant parents are ignored).
    """

    __array_ufunc__ = None  # make numpy defer to the reflected operators
    __slots__ = ("value", "op", "parents", "vjp", "grad", "__weakref__")

    def __init__(self, value, op: str = "leaf", parents: tuple = (),
                 vjp: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    # basic attributes
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def mT(self):
        from . import functions as F
        return F.mT(self)

    @property
    def is_leaf(self):
        return self.op == "leaf"

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    def numpy(self):
        return self.value

    # operators
    def __add__(self, other):
        from . import functions as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functions as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functions as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functions as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functions as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functions as F
        return F.div(other, self)

    def __neg__(self):
        from . import functions as F
        return F.neg(self)

    def __matmul__(self, other):
        from . import functions as F
        return F.matmul(self, other)

    def __rmatmul__(self, other):
        from . import functions as F
        return F.matmul(other, self)

    def __pow__(self, k):
        from . import functions as F
        return F.power(self, k)

    def __getitem__(self, idx):
        from . import functions as F
        return F.getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import functions as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functions as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value_of(x) -> np.ndarray:
    """Return the numeric value of a Tensor or array-like."""
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Topologically ordered view of the graph reachable from a loss.

    Built on demand at backward time; nothing is cached between forward
    passes.

    Parameters
    ----------
    loss : Tensor
        Scalar output node.
    """

    def __init__(self, loss: Tensor):
        if not isinstance(loss, Tensor):
            raise TypeError("loss must be a Tensor")
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        self.loss = loss
        self.nodes = self._toposort(loss)

    @staticmethod
    def _toposort(root: Tensor) -> list:
        order, seen = [], {id(root)}
        stack = [(root, iter(root.parents))]
        while stack:
            node, it = stack[-1]
            for parent in it:
                if isinstance(parent, Tensor) and id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append((parent, iter(parent.parents)))
                    break
            else:
                stack.pop()
                order.append(node)
        return order  # parents before children

    def backward(self) -> dict:
        """Propagate cotangents from the loss.

        Returns
        -------
        grads : dict
            Maps ``id(node)`` to the accumulated cotangent array.
        """
        grads = {id(self.loss): np.ones_like(self.loss.value)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node.vjp is None:
                continue
            contribs = node.vjp(g)
            for parent, c in zip(node.parents, contribs):
                if not isinstance(parent, Tensor) or c is None:
                    continue
                c = np.asarray(c, dtype=np.float64)
                if c.shape != parent.shape:
                    c = np.broadcast_to(c, parent.shape) if c.ndim == 0 else c.reshape(parent.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + c
                else:
                    grads[key] = c
        return grads


def grad(loss: Tensor, leaves: Sequence[Tensor]) -> list:
    """Gradients of a scalar loss with respect to the given leaves.

    Leaves that the loss does not depend on receive zero arrays.
    """
    grads = Tape(loss).backward()
    out = []
    for leaf in leaves:
        g = grads.get(id(leaf))
        out.append(np.zeros_like(leaf.value) if g is None else np.array(g))
    return out


def backward(loss: Tensor) -> None:
    """Store gradients in ``.grad`` of every leaf reachable from ``loss``."""
    tape = Tape(loss)
    grads = tape.backward()
    for node in tape.nodes:
        if node.is_leaf:
            node.grad = np.array(grads.get(id(node), np.zeros_like(node.value)))


# op registry used by :func:`record`
_REGISTRY: dict = {}
ORACLE_ONLY_OPS = frozenset({"mat_log_orthogonal", "gr_log_projector_direct"})


def register_op(name: str, fn: Callable) -> None:
    _REGISTRY[name] = fn


def record(op: str, *inputs: Iterable, **kwargs):
    """Apply a registered differentiable primitive to Tensor inputs.

    Raises
    ------
    UnsupportedOpError
        If ``op`` is an oracle-only routine or is not registered.
    """
    if op in ORACLE_ONLY_OPS:
        raise UnsupportedOpError(f"{op!r} is an oracle-only routine and has no adjoint")
    fn = _REGISTRY.get(op)
    if fn is None:
        raise UnsupportedOpError(f"no differentiable primitive named {op!r}")
    return fn(*[as_tensor(x) if not isinstance(x, (list, tuple)) else [as_tensor(y) for y in x]
                for x in inputs], **kwargs)
