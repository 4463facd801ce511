"""Dense tensors with reverse-mode differentiation over an explicit tape.

A `Tape` is an ordered record of executed differentiable operations. Ops
append entries in execution order, which is automatically a topological
order, so the backward pass is a single reverse sweep that visits each
recorded node exactly once. Gradients are accumulated in that fixed order,
making repeated backward passes over the same tape bitwise identical.

Precision policy: float32 for training, float64 for gradient checks. The
dtype of operands is preserved by every op.
"""

import numpy as np

# When True, every op output is checked for NaN/Inf (slow; used in tests).
DEBUG_CHECKS = False

_TAPE_STACK = []


def set_debug_checks(enabled):
    global DEBUG_CHECKS
    DEBUG_CHECKS = bool(enabled)


class Tensor:
    """N-dimensional value, optionally tracked for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    # Arithmetic sugar; the real implementations live in ops.py and are
    # attached at package import time to avoid a circular import.
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(self, other)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(self, other)

    def __neg__(self):
        return _ops().scale(self, -1.0)


def _ops():
    from . import ops

    return ops


class Tape:
    """Ordered record of differentiable ops; context manager activates it."""

    def __init__(self):
        self._entries = []
        self._tracked = set()

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._entries)

    def watch(self, tensor):
        self._tracked.add(id(tensor))

    def tracks(self, tensor):
        return tensor.requires_grad or id(tensor) in self._tracked

    def record(self, output, inputs, backward_fn):
        """Append one op. backward_fn(grad_out) -> per-input grads (or None)."""
        self._entries.append((output, tuple(inputs), backward_fn))
        self._tracked.add(id(output))

    def gradients(self, loss):
        """Reverse sweep from a scalar loss; returns {tensor: grad array}.

        Pure: does not touch Tensor.grad, so repeated calls over the same
        tape are independent and bitwise identical.
        """
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads = {}
        grads[id(loss)] = np.ones_like(loss.data)
        leaves = {}
        for output, inputs, backward_fn in reversed(self._entries):
            gout = grads.pop(id(output), None)
            if gout is None:
                continue
            gins = backward_fn(gout)
            for tensor, g in zip(inputs, gins):
                if g is None or not self.tracks(tensor):
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                if tensor.requires_grad:
                    leaves[key] = tensor
        return {leaves[key]: grads[key] for key in grads if key in leaves}

    def backward(self, loss):
        """Like gradients() but accumulates into each leaf's .grad."""
        grads = self.gradients(loss)
        for tensor, g in grads.items():
            tensor.grad = g if tensor.grad is None else tensor.grad + g
        return grads


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss, tape):
    """Module-level spelling of tape.backward(loss)."""
    return tape.backward(loss)
