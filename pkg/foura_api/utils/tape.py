"""
Reverse-mode differentiation over a Wengert list of matrix primitives.

Every primitive appends a node (op name, input indices, cached value, and the
vector-Jacobian product) to the tape and returns the node's index. ``backward``
walks the list in reverse and accumulates adjoints.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import NonDifferentiable, ShapeError
from .foura_schema import Axis

# fault injection factor for the matmul adjoint (used to prove the checker can fail)
CORRUPTION = 1.0 + 1e-3
ENTROPY_CLIP = 1e-12


@dataclass
class Node:
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
    name: Optional[str] = None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # sum an adjoint back down to the shape of a broadcast operand
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """
    A single-threaded recording of one forward pass.
    """

    def __init__(self, corrupt: bool = False):
        self.nodes: List[Node] = []
        self.corrupt = corrupt

    def _push(self, op, inputs, value, vjp=None, name=None) -> int:
        self.nodes.append(Node(op=op, inputs=tuple(inputs), value=value, vjp=vjp, name=name))
        return len(self.nodes) - 1

    def value(self, ix: int) -> np.ndarray:
        return self.nodes[ix].value

    def __len__(self):
        return len(self.nodes)

    # Leaves

    def leaf(self, value, name: str = None) -> int:
        return self._push('leaf', (), np.asarray(value, dtype=np.float64), name=name)

    # Primitives

    def matmul(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        if va.shape[-1] != vb.shape[0]:
            raise ShapeError(f"matmul shapes {va.shape} and {vb.shape} do not align")
        factor = CORRUPTION if self.corrupt else 1.0
        return self._push('matmul', (a, b), va @ vb,
                          lambda g: (factor * (g @ vb.T), factor * (va.T @ g)))

    def transpose(self, a: int) -> int:
        return self._push('transpose', (a,), self.value(a).T, lambda g: (g.T,))

    def add(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        return self._push('add', (a, b), va + vb,
                          lambda g: (_unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)))

    def mul(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        return self._push('mul', (a, b), va * vb,
                          lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)))

    def scale(self, a: int, c: float) -> int:
        return self._push('scale', (a,), c * self.value(a), lambda g: (c * g,))

    def tanh(self, a: int) -> int:
        out = np.tanh(self.value(a))
        return self._push('tanh', (a,), out, lambda g: (g * (1.0 - out * out),))

    def sigmoid(self, a: int) -> int:
        x = self.value(a)
        out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self._push('sigmoid', (a,), out, lambda g: (g * out * (1.0 - out),))

    def threshold(self, a: int, tau: float, straight_through: bool = True) -> int:
        """
        Hard mask (a > tau). The adjoint passes straight through when allowed.
        """
        out = (self.value(a) > tau).astype(np.float64)

        def vjp(g):
            if not straight_through:
                raise NonDifferentiable("no gradient through a hard threshold")
            return (g,)

        return self._push('threshold', (a,), out, vjp)

    def mean_pool(self, a: int) -> int:
        """Mean over tokens (rows) -> 1 x cols."""
        x = self.value(a)
        rows = x.shape[0]
        return self._push('mean-pool', (a,), x.mean(axis=0, keepdims=True),
                          lambda g: (np.repeat(g, rows, axis=0) / rows,))

    def transform_forward(self, a: int, kernel: np.ndarray, axis: Axis) -> int:
        """
        One part of F(z): rows of z transformed for the embedding axis (z @ K^T),
        columns for the token axis (K @ z).
        """
        x = self.value(a)
        if axis == Axis.embedding:
            return self._push('transform-forward', (a,), x @ kernel.T, lambda g: (g @ kernel,))
        return self._push('transform-forward', (a,), kernel @ x, lambda g: (kernel.T @ g,))

    def transform_inverse(self, re: int, im: Optional[int], kernel_re: np.ndarray,
                          kernel_im: np.ndarray, axis: Axis) -> int:
        """
        Real part of the unitary inverse: x = K_re^T X_re + K_im^T X_im per signal.
        """
        xr = self.value(re)
        xi = self.value(im) if im is not None else None
        if axis == Axis.embedding:
            out = xr @ kernel_re
            if xi is not None:
                out = out + xi @ kernel_im
            vjp = lambda g: (g @ kernel_re.T, g @ kernel_im.T if xi is not None else None)
        else:
            out = kernel_re.T @ xr
            if xi is not None:
                out = out + kernel_im.T @ xi
            vjp = lambda g: (kernel_re @ g, kernel_im @ g if xi is not None else None)
        inputs = (re, im) if im is not None else (re,)
        return self._push('transform-inverse', inputs, out, vjp)

    def mse_loss(self, pred: int, target: np.ndarray, reduction: str = 'mean') -> int:
        """
        reduction='mean': mean squared error; 'half_sum': 0.5 * squared Frobenius norm.
        """
        diff = self.value(pred) - target
        if reduction == 'mean':
            n = diff.size
            return self._push('mse-loss', (pred,), np.float64(np.sum(diff * diff) / n),
                              lambda g: (g * 2.0 * diff / n,))
        if reduction == 'half_sum':
            return self._push('mse-loss', (pred,), np.float64(0.5 * np.sum(diff * diff)),
                              lambda g: (g * diff,))
        raise ValueError(f"unknown reduction {reduction}")

    def entropy_penalty(self, a: int) -> int:
        """Sum of binary entropies of mask entries (0 ln 0 = 0)."""
        m = self.value(a)
        inner = m[(m > 0.0) & (m < 1.0)]
        value = -np.sum(inner * np.log(inner) + (1.0 - inner) * np.log1p(-inner))
        clipped = np.clip(m, ENTROPY_CLIP, 1.0 - ENTROPY_CLIP)
        return self._push('entropy-penalty', (a,), np.float64(value),
                          lambda g: (g * (np.log1p(-clipped) - np.log(clipped)),))

    def mask_mass(self, a: int) -> int:
        m = self.value(a)
        return self._push('mask-mass', (a,), np.float64(np.sum(m)), lambda g: (g * np.ones_like(m),))

    # Reverse sweep

    def backward(self, output: int, wrt: Sequence[int] = None) -> Dict[int, np.ndarray]:
        """
        Adjoints of the scalar node ``output`` with respect to every node it depends on
        (or only the listed ones).
        """
        if self.value(output).size != 1:
            raise ShapeError("backward needs a scalar output")
        adjoints: Dict[int, np.ndarray] = {output: np.ones_like(self.value(output))}

        for ix in range(output, -1, -1):
            node = self.nodes[ix]
            if ix not in adjoints or node.vjp is None:
                continue
            for parent, grad in zip(node.inputs, node.vjp(adjoints[ix])):
                if grad is None:
                    continue
                if parent in adjoints:
                    adjoints[parent] = adjoints[parent] + grad
                else:
                    adjoints[parent] = grad

        if wrt is None:
            return adjoints
        return {ix: adjoints.get(ix, np.zeros_like(self.value(ix))) for ix in wrt}
