"""Minimal reverse-mode automatic differentiation on numpy arrays.

Implements exactly the operations the spotting network needs. A Tensor wraps a
float64 ndarray; backward() walks the graph in reverse topological order and
accumulates gradients into every reachable node, so losses can seed gradients
on several outputs at once.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # ---- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(out.grad, other.shape))

        out._backward = backward
        return out

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward():
            self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = backward
        return out

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data / other.data, parents=(self, other))

        def backward():
            self._accumulate(_unbroadcast(out.grad / other.data, self.shape))
            other._accumulate(
                _unbroadcast(-out.grad * self.data / other.data**2, other.shape)
            )

        out._backward = backward
        return out

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __radd__(self, other):
        return self + other

    def __rmul__(self, other):
        return self * other

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    # ---- shape ------------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))

        def backward():
            self._accumulate(out.grad.reshape(self.shape))

        out._backward = backward
        return out

    def mean(self, axis: int, keepdims: bool = True):
        out = Tensor(self.data.mean(axis=axis, keepdims=keepdims), parents=(self,))
        n = self.data.shape[axis]

        def backward():
            grad = out.grad
            if not keepdims:
                grad = np.expand_dims(grad, axis)
            self._accumulate(np.broadcast_to(grad / n, self.shape))

        out._backward = backward
        return out

    def sum_last(self):
        out = Tensor(self.data.sum(axis=-1), parents=(self,))

        def backward():
            self._accumulate(np.broadcast_to(out.grad[..., None], self.shape))

        out._backward = backward
        return out

    # ---- nonlinearities ---------------------------------------------------

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), parents=(self,))

        def backward():
            self._accumulate(out.grad * (self.data > 0.0))

        out._backward = backward
        return out

    def sigmoid(self):
        x = self.data
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor(y, parents=(self,))

        def backward():
            self._accumulate(out.grad * y * (1.0 - y))

        out._backward = backward
        return out

    def sqrt_or_zero(self):
        """Square root whose derivative is defined as 0 at exactly 0."""
        y = np.sqrt(self.data)
        out = Tensor(y, parents=(self,))

        def backward():
            self._accumulate(out.grad * np.where(y > 0.0, 0.5 / np.where(y > 0.0, y, 1.0), 0.0))

        out._backward = backward
        return out

    def softmax_last(self):
        z = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        out = Tensor(y, parents=(self,))

        def backward():
            g = out.grad
            self._accumulate((g - (g * y).sum(axis=-1, keepdims=True)) * y)

        out._backward = backward
        return out

    def backward(self, grad: np.ndarray | None = None) -> None:
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        backward_multi([(self, seed)])


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """x (..., F) @ w (F, O) -> (..., O)."""
    lead = x.data.shape[:-1]
    x2d = x.data.reshape(-1, x.data.shape[-1])
    out = Tensor((x2d @ w.data).reshape(*lead, w.data.shape[1]), parents=(x, w))

    def backward():
        g2d = out.grad.reshape(-1, w.data.shape[1])
        x._accumulate((g2d @ w.data.T).reshape(x.shape))
        w._accumulate(x2d.T @ g2d)

    out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return matmul(x, w) + b


def concat_last(tensors: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=-1), parents=tuple(tensors))
    sizes = [t.data.shape[-1] for t in tensors]

    def backward():
        offset = 0
        for t, size in zip(tensors, sizes):
            t._accumulate(out.grad[..., offset : offset + size])
            offset += size

    out._backward = backward
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Temporal convolution, stride 1, zero padded to the input length.

    x is (B, L, C_in), w is (K, C_in, C_out), b is (C_out,). Computed as one
    batched matmul per kernel tap on contiguous time slices, which beats an
    im2col buffer at these shapes.
    """
    batch, length, c_in = x.data.shape
    k, _, c_out = w.data.shape
    pad_left, pad_right = (k - 1) // 2, k // 2
    xp = np.pad(x.data, ((0, 0), (pad_left, pad_right), (0, 0)))
    out_data = np.broadcast_to(b.data, (batch, length, c_out)).copy()
    for j in range(k):
        out_data += xp[:, j : j + length, :] @ w.data[j]
    out = Tensor(out_data, parents=(x, w, b))

    def backward():
        g = out.grad
        dw = np.empty_like(w.data)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dw[j] = np.tensordot(xp[:, j : j + length, :], g, axes=([0, 1], [0, 1]))
            dxp[:, j : j + length, :] += g @ w.data[j].T
        w._accumulate(dw)
        b._accumulate(g.sum(axis=(0, 1)))
        x._accumulate(dxp[:, pad_left : pad_left + length, :])

    out._backward = backward
    return out


def pooled_length(length: int, width: int = 3, stride: int = 2) -> int:
    return max(1, (length - width) // stride + 1)


def maxpool1d(x: Tensor, width: int = 3, stride: int = 2) -> Tensor:
    """Temporal max pooling; short inputs pool whatever frames exist."""
    batch, length, channels = x.data.shape
    out_len = pooled_length(length, width, stride)
    needed = stride * (out_len - 1) + width
    if needed > length:
        xp = np.pad(x.data, ((0, 0), (0, needed - length), (0, 0)), constant_values=-np.inf)
    else:
        xp = x.data[:, :needed, :]
    win = np.lib.stride_tricks.sliding_window_view(xp, width, axis=1)[:, ::stride]
    arg = win.argmax(axis=-1)  # (B, out_len, C)
    out = Tensor(np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], parents=(x,))

    def backward():
        dx = np.zeros_like(x.data)
        b_idx, o_idx, c_idx = np.indices(arg.shape)
        pos = o_idx * stride + arg
        np.add.at(dx, (b_idx, pos, c_idx), out.grad)
        x._accumulate(dx)

    out._backward = backward
    return out


def backward_multi(seeds: list[tuple[Tensor, np.ndarray]]) -> None:
    """Backpropagate from several output tensors with given output gradients."""
    topo: list[Tensor] = []
    visited: set[int] = set()
    # Iterative DFS; graphs can be deeper than the recursion limit.
    work: list[tuple[Tensor, bool]] = [(t, False) for t, _ in seeds]
    while work:
        node, processed = work.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        work.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                work.append((parent, False))
    for node in topo:
        node.grad = None
    for tensor, grad in seeds:
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != tensor.data.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != tensor {tensor.data.shape}")
        tensor._accumulate(grad)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()
