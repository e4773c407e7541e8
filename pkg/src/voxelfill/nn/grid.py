"""Dense grids with reverse-mode gradients.

A Grid wraps an ndarray plus the bookkeeping for reverse-mode
differentiation: ops build a fresh graph on every forward pass, and
``backward`` walks it once in reverse topological order. Gradients
accumulate into leaf grids until explicitly cleared, so repeated backward
calls sum their contributions.
"""

import contextlib

import numpy as np

from ..errors import NonScalarLoss

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used by samplers/eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Grid:
    """An n-rank tensor node (rank 1-5: batch, channel, spatial axes)."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    # -- inspection ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Grid{tag}(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    # -- graph --------------------------------------------------------------

    def detach(self) -> "Grid":
        """Same data, cut loose from the graph."""
        return Grid(self.data, requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def _wants_grad(self) -> bool:
        # propagate through nodes that either are trainable leaves or have
        # a recorded backward step
        return self.requires_grad or self._backward is not None

    def accumulate(self, delta: np.ndarray):
        if not self._wants_grad():
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta


def make_node(data: np.ndarray, parents, backward) -> Grid:
    """Create an op result, recording the graph only when it matters."""
    out = Grid(data)
    if _grad_enabled and any(p._wants_grad() for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def backward(loss: Grid) -> None:
    """Populate grads of every reachable leaf with d(loss)/d(leaf)."""
    if loss.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")

    # iterative topological sort; graphs can be deep (long conv stacks)
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    # intermediates restart from zero each pass; leaves keep accumulating
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
