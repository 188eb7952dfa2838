"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations record onto an explicit :class:`Tape` while one is active
(``with Tape() as t``).  Recording order is creation order, which is a
topological order by construction, so ``backward`` simply walks the node
list in reverse and visits every node at most once.

Two backward flavours exist:

* ``Tape.backward`` / ``Tape.grad`` accumulate raw numpy gradients (the
  fast path used by the optimizer).
* ``Tape.grad_tensors`` rebuilds the vector-Jacobian products out of
  recorded tensor operations, so the returned gradients are themselves
  differentiable.  Only the ops a discriminator uses provide this; it
  exists for the gradient-norm regularizer.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class TensorError(ValueError):
    """Shape or precondition violation in a tensor op."""


class NonFiniteError(ArithmeticError):
    """An operation produced (or received) NaN/Inf."""


class TapeError(RuntimeError):
    """Backward requested without the required recording."""


_tls = threading.local()

# Finite-checking of every op output. Always verifiable, costs a memory
# scan per op; the training loop may switch it off for throughput while
# still checking losses (see TrainConfig.fast_math).
_strict_finite = True


def set_strict_finite(flag: bool) -> bool:
    global _strict_finite
    old = _strict_finite
    _strict_finite = bool(flag)
    return old


def strict_finite_enabled() -> bool:
    return _strict_finite


def _stack() -> list:
    s = getattr(_tls, "stack", None)
    if s is None:
        s = []
        _tls.stack = s
    return s


def current_tape() -> "Tape | None":
    s = _stack()
    return s[-1] if s else None


class Tensor:
    """A float64 n-d array with an optional gradient buffer.

    ``node_id`` is the index of the op that created this tensor within
    its tape, or -1 for leaves (parameters and inputs).
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{req})"

    # Arithmetic sugar; the real work lives in ops.py to avoid an import
    # cycle, so these are bound late by ops.py.
    def __add__(self, other):
        return _binding["add"](self, other)

    def __sub__(self, other):
        return _binding["sub"](self, other)

    def __mul__(self, other):
        return _binding["mul"](self, other)

    def __rmul__(self, other):
        return _binding["mul"](self, other)

    def __neg__(self):
        return _binding["mul"](self, -1.0)


_binding: dict[str, Callable] = {}


class Node:
    __slots__ = ("op", "inputs", "out", "bwd", "vjp", "needs")

    def __init__(self, op, inputs, out, bwd, vjp):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.bwd = bwd
        self.vjp = vjp
        # Which input gradients backward must actually produce; frozen at
        # record time so requires_grad toggles act per recorded op.
        self.needs = tuple(t.requires_grad for t in inputs)


class Tape:
    """Ordered op recording. Single-threaded; nest with ``with``."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self
        return False

    def record(self, op: str, inputs: Sequence[Tensor], out: Tensor,
               bwd: Callable, vjp: Callable | None = None):
        out.node_id = len(self.nodes)
        self.nodes.append(Node(op, tuple(inputs), out, bwd, vjp))

    # -- plain numpy backward ------------------------------------------------

    def _walk(self, out: Tensor, want: set[int] | None):
        """Reverse walk; returns {id(tensor): grad ndarray}.

        Entries for intermediate tensors are popped as they are consumed
        (each node visited exactly once); leaves and explicitly wanted
        tensors survive to the end.
        """
        if out.data.size != 1:
            raise TapeError("backward requires a scalar output")
        grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
        keep: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            if want is not None and id(node.out) in want:
                keep[id(node.out)] = g
            gs = node.bwd(g, node.needs)
            for t, gi, needed in zip(node.inputs, gs, node.needs):
                if gi is None or not needed:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
        grads.update(keep)
        return grads

    def backward(self, out: Tensor):
        """Accumulate d(out)/d(leaf) into every reachable leaf's ``.grad``."""
        refs = {}
        for node in self.nodes:
            for t, needed in zip(node.inputs, node.needs):
                if needed and t.node_id == -1:
                    refs[id(t)] = t
        grads = self._walk(out, None)
        for tid, g in grads.items():
            t = refs.get(tid)
            if t is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g

    def grad(self, out: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """d(out)/d(source) as raw arrays, without touching ``.grad``."""
        want = {id(s) for s in sources}
        grads = self._walk(out, want)
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]

    # -- differentiable backward ----------------------------------------------

    def grad_tensors(self, out: Tensor, sources: Sequence[Tensor]) -> list[Tensor]:
        """Like ``grad`` but the results are Tensors built from recorded
        ops, so a later ``backward`` differentiates through them."""
        if current_tape() is not self:
            raise TapeError("grad_tensors must run with its tape active")
        if out.data.size != 1:
            raise TapeError("grad_tensors requires a scalar output")
        add = _binding["add"]
        snapshot = list(self.nodes)
        grads: dict[int, Tensor] = {id(out): Tensor(np.ones_like(out.data))}
        keep: dict[int, Tensor] = {}
        want = {id(s) for s in sources}
        for node in reversed(snapshot):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            if id(node.out) in want:
                keep[id(node.out)] = g
            if node.vjp is None:
                raise TapeError(
                    f"op '{node.op}' has no differentiable backward")
            gs = node.vjp(g)
            for t, gi in zip(node.inputs, gs):
                if gi is None or not t.requires_grad:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else add(prev, gi)
        grads.update(keep)
        out_list = []
        for s in sources:
            g = grads.get(id(s))
            out_list.append(g if g is not None else Tensor(np.zeros_like(s.data)))
        return out_list


def check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")


def apply_op(op: str, out_data: np.ndarray, inputs: Sequence[Tensor],
             bwd: Callable, vjp: Callable | None = None) -> Tensor:
    """Wrap an op result, recording it when a tape is active and any
    input participates in differentiation."""
    if _strict_finite:
        check_finite(out_data, op)
    out = Tensor(out_data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, bwd, vjp)
    return out
