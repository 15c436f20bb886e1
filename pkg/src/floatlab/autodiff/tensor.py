"""Reverse-mode automatic differentiation on dense numpy arrays.

Deliberately minimal: exactly the operators the lab's networks need, no
general broadcasting, no views across devices.  Graphs are built dynamically;
``Tensor.backward`` walks the tape once and accumulates gradients into every
node that requires them.  All math stays in the array's own dtype, so a model
built in float64 gives float64 gradients (used by the gradient-check suite).
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError


class Tensor:
    """One node of the computation graph.

    ``data`` is a dense numpy array (lists are coerced to float32).  ``grad``
    is populated lazily during :meth:`backward` and has the same shape as
    ``data``.  ``requires_grad`` is propagated through operators: a result
    requires grad iff one of its parents does.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        if isinstance(data, np.ndarray):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        """Add ``g`` into this node's gradient buffer (no-op if grad not required)."""
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if node._parents == () and node.grad is not None:
                if not np.isfinite(node.grad).all():
                    raise NumericError("non-finite gradient reached a leaf tensor")

    # Only the arithmetic the training loop needs: same-shape addition and
    # scaling by a python float (loss weighting).
    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            return NotImplemented
        if self.data.shape != other.data.shape:
            raise DimensionError(f"add shape mismatch: {self.data.shape} vs {other.data.shape}")
        out = Tensor(
            self.data + other.data,
            requires_grad=self.requires_grad or other.requires_grad,
            _parents=(self, other),
        )

        def _bwd(g):
            self.accumulate(g)
            other.accumulate(g)

        out._backward = _bwd
        return out

    def __mul__(self, c: float) -> "Tensor":
        if isinstance(c, Tensor):
            return NotImplemented
        c = float(c)
        out = Tensor(self.data * c, requires_grad=self.requires_grad, _parents=(self,))

        def _bwd(g):
            self.accumulate(g * c)

        out._backward = _bwd
        return out

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with a persistent momentum buffer.

    ``role`` tags what the parameter is, which the optimizer and the
    checkpoint format use: one of conv_weight, fc_weight, fc_bias, bn_gamma,
    bn_beta, alpha_scale.
    """

    ROLES = ("conv_weight", "fc_weight", "fc_bias", "bn_gamma", "bn_beta", "alpha_scale")

    __slots__ = ("momentum", "role")

    def __init__(self, value: np.ndarray, role: str):
        if role not in self.ROLES:
            raise ValueError(f"unknown parameter role {role!r}")
        super().__init__(np.asarray(value), requires_grad=True)
        self.momentum = np.zeros_like(self.data)
        self.role = role
