"""Minimal reverse-mode autodiff over float64 arrays.

Operations are recorded on a :class:`Graph` (a tape). Every op appends one
node holding its inputs, its output and a closure that maps the output
gradient to input gradients. ``backward`` walks the tape in exact reverse
construction order.

Image ops accept ``C x H x W`` tensors or batched ``N x C x H x W`` tensors;
the channel axis is always ``-3``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "grad_check",
    "GradCheckReport",
    "conv2d_reference",
]


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    saved: dict = field(default_factory=dict)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, k*k*C) patches of the zero-padded input.

    Column order is (u, v, c); kernels must be laid out to match, see
    :func:`_kernel_matrix`.
    """
    n, c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c))
    xp[:, p:p + h, p:p + w, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((n, h, w, k, k, c))
    for u in range(k):
        for v in range(k):
            cols[:, :, :, u, v, :] = xp[:, u:u + h, v:v + w, :]
    return cols.reshape(n * h * w, k * k * c)


def _kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    """(O, C, k, k) -> (O, k*k*C), matching :func:`_im2col` columns."""
    o = kernel.shape[0]
    return kernel.transpose(0, 2, 3, 1).reshape(o, -1)


def _conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None,
          cols: np.ndarray | None = None) -> np.ndarray:
    n, _, h, w = x.shape
    o, c, k, _ = kernel.shape
    if cols is None:
        cols = x.transpose(0, 2, 3, 1).reshape(-1, c) if k == 1 else _im2col(x, k)
    out = cols @ _kernel_matrix(kernel).T
    out = np.ascontiguousarray(out.reshape(n, h, w, o).transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def conv2d_reference(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Nested-loop same-size convolution, for testing only."""
    c, h, w = x.shape
    o, _, k, _ = kernel.shape
    p = (k - 1) // 2
    out = np.zeros((o, h, w))
    for oo in range(o):
        for i in range(h):
            for j in range(w):
                acc = bias[oo]
                for cc in range(c):
                    for u in range(k):
                        for v in range(k):
                            ii, jj = i + u - p, j + v - p
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += x[cc, ii, jj] * kernel[oo, cc, u, v]
                out[oo, i, j] = acc
    return out


def _as_batched(a: np.ndarray) -> tuple[np.ndarray, bool]:
    if a.ndim == 3:
        return a[None], True
    if a.ndim == 4:
        return a, False
    raise ValueError(f"expected a C x H x W or N x C x H x W tensor, got shape {a.shape}")


class Graph:
    """Tape of operations.

    With ``record=False`` the graph only computes forward values, which is what
    read-only inference (parameter sweeps) wants.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _emit(self, op, inputs, data, bw, **saved) -> Tensor:
        needs = self.record and any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=needs)
        if self.record:
            self.nodes.append(_Node(op, tuple(inputs), out, bw if needs else None, saved))
        return out

    # -- convolution -----------------------------------------------------

    def conv2d(self, x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
        """Same-size, stride-1 convolution with zero padding."""
        if kernel.data.ndim != 4 or kernel.shape[2] != kernel.shape[3] or kernel.shape[2] % 2 == 0:
            raise ValueError(f"kernel must be O x C x K x K with odd K, got {kernel.shape}")
        xb, squeeze = _as_batched(x.data)
        if xb.shape[1] != kernel.shape[1]:
            raise ValueError(
                f"conv2d channel mismatch: input shape {x.shape} has {xb.shape[1]} channels "
                f"but kernel shape {kernel.shape} expects {kernel.shape[1]}"
            )
        if bias.shape != (kernel.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match kernel shape {kernel.shape}")
        k = kernel.shape[2]
        c = xb.shape[1]
        cols = xb.transpose(0, 2, 3, 1).reshape(-1, c) if k == 1 else _im2col(xb, k)
        out = _conv(xb, kernel.data, bias.data, cols)
        if not (self.record and kernel.requires_grad):
            cols = None

        def bw(g):
            gb = g[None] if squeeze else g
            o = kernel.shape[0]
            g_bias = gb.sum(axis=(0, 2, 3))
            g_kernel = None
            if cols is not None:
                gmat = gb.transpose(0, 2, 3, 1).reshape(-1, o)
                g_kernel = (gmat.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
            g_x = None
            if x.requires_grad:
                flipped = np.ascontiguousarray(kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                g_x = _conv(gb, flipped, None)
                if squeeze:
                    g_x = g_x[0]
            return g_x, g_kernel, g_bias

        return self._emit("conv2d", (x, kernel, bias), out[0] if squeeze else out, bw)

    # -- elementwise -----------------------------------------------------

    def relu(self, x: Tensor) -> Tensor:
        mask = x.data > 0
        return self._emit("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,),
                          pre=x.data)

    def sigmoid(self, x: Tensor) -> Tensor:
        s = np.empty_like(x.data)
        pos = x.data >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
        e = np.exp(x.data[~pos])
        s[~pos] = e / (1.0 + e)
        return self._emit("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ValueError(f"add requires equal shapes, got {a.shape} and {b.shape}")
        return self._emit("add", (a, b), a.data + b.data, lambda g: (g, g))

    def scale(self, x: Tensor, factor: float) -> Tensor:
        f = float(factor)
        return self._emit("scale", (x,), x.data * f, lambda g: (g * f,))

    def channel_scale(self, x: Tensor, first_n: int, factor: float) -> Tensor:
        """Multiply channels ``[0, first_n)`` by ``factor``; the rest pass through untouched."""
        c = x.shape[-3]
        if not 0 < first_n < c:
            raise ValueError(f"first_n must satisfy 0 < first_n < {c}, got {first_n}")
        f = float(factor)
        out = x.data.copy()
        out[..., :first_n, :, :] *= f

        def bw(g):
            gx = g.copy()
            gx[..., :first_n, :, :] *= f
            return (gx,)

        return self._emit("channel_scale", (x,), out, bw)

    # -- shape -----------------------------------------------------------

    def concat_channels(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != b.data.ndim or a.shape[-2:] != b.shape[-2:] or a.shape[:-3] != b.shape[:-3]:
            raise ValueError(f"concat requires matching batch/H/W, got {a.shape} and {b.shape}")
        ca = a.shape[-3]
        out = np.concatenate([a.data, b.data], axis=-3)
        return self._emit("concat", (a, b), out,
                          lambda g: (g[..., :ca, :, :], g[..., ca:, :, :]))

    def maxpool2x2(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2x2 requires even H and W, got {x.shape}")
        lead = x.shape[:-2]
        blocks = x.data.reshape(*lead, h // 2, 2, w // 2, 2).swapaxes(-3, -2)
        blocks = blocks.reshape(*lead, h // 2, w // 2, 4)
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

        def bw(g):
            gb = np.zeros(blocks.shape)
            np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
            gb = gb.reshape(*lead, h // 2, w // 2, 2, 2).swapaxes(-3, -2)
            return (gb.reshape(*lead, h, w),)

        return self._emit("maxpool2x2", (x,), out, bw)

    def upsample2x2(self, x: Tensor) -> Tensor:
        out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
        lead = x.shape[:-2]
        h, w = x.shape[-2:]

        def bw(g):
            return (g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1)),)

        return self._emit("upsample2x2", (x,), out, bw)

    # -- reductions and losses ------------------------------------------

    def sum(self, x: Tensor) -> Tensor:
        shape = x.shape
        return self._emit("sum", (x,), np.array(x.data.sum()),
                          lambda g: (np.broadcast_to(g, shape),), terms=x.data.reshape(-1))

    def mean(self, x: Tensor) -> Tensor:
        shape, n = x.shape, x.data.size
        return self._emit("mean", (x,), np.array(x.data.mean()),
                          lambda g: (np.broadcast_to(g / n, shape),), terms=x.data.reshape(-1) / n)

    def bce(self, pred: Tensor, target: np.ndarray, eps: float = 1e-7) -> Tensor:
        """Mean binary cross-entropy; ``pred`` is clamped to ``[eps, 1-eps]`` before the logs."""
        t = np.asarray(target, dtype=np.float64)
        if t.shape != pred.shape:
            raise ValueError(f"bce shape mismatch: pred {pred.shape} vs label {t.shape}")
        p = np.clip(pred.data, eps, 1.0 - eps)
        inside = (pred.data >= eps) & (pred.data <= 1.0 - eps)
        terms = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
        loss = terms.mean()
        n = p.size

        def bw(g):
            d = (-t / p + (1.0 - t) / (1.0 - p)) / n
            return (g * d * inside,)

        return self._emit("bce", (pred,), np.array(loss), bw, terms=terms.reshape(-1) / n)

    def weighted_sum(self, a: Tensor, b: Tensor, wa: float, wb: float) -> Tensor:
        """``wa * a + wb * b`` with constant weights."""
        wa, wb = float(wa), float(wb)
        return self._emit("weighted_sum", (a, b), wa * a.data + wb * b.data,
                          lambda g: (g * wa, g * wb), weights=(wa, wb))

    # -- reverse pass ----------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad tensor.

        Gradients are *added* to existing buffers; use :func:`backward` to zero
        them first.
        """
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.record:
            raise RuntimeError("graph was built with record=False")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None or node.backward is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # leftover entries are leaves (parameters / inputs)
        leaves = {}
        for node in self.nodes:
            for inp in node.inputs:
                leaves[id(inp)] = inp
        for key, g in grads.items():
            t = leaves.get(key)
            if t is not None and t.requires_grad:
                t._accumulate(g)

    def relu_inputs(self) -> list[np.ndarray]:
        return [n.saved["pre"] for n in self.nodes if n.op == "relu"]

    def loss_terms(self, loss: Tensor) -> np.ndarray:
        """Flat summands whose exact sum is ``loss`` (up to rounding).

        Falls back to the scalar itself for ops that do not expose terms.
        """
        producer = {id(n.output): n for n in self.nodes}
        node = producer.get(id(loss))
        if node is None:
            return loss.data.reshape(-1)
        if "terms" in node.saved:
            return node.saved["terms"]
        if node.op == "weighted_sum" and loss.data.size == 1:
            wa, wb = node.saved["weights"]
            a, b = node.inputs
            return np.concatenate([wa * self.loss_terms(a), wb * self.loss_terms(b)])
        return loss.data.reshape(-1)


def backward(graph: Graph, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Zero the gradients of ``params`` and run the reverse pass."""
    for p in params:
        p.zero_grad()
    graph.backward(loss)


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    tolerance: float
    worst: tuple[int, int] | None = None  # (param index, flat element index)

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    build: Callable[[Graph], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    The difference ``L(x+h) - L(x-h)`` is taken summand by summand and summed
    with ``math.fsum``; differencing the two rounded scalar losses instead
    leaves ~1e-11 of cancellation noise, which swamps gradients near 1e-8.

    ``build`` records a scalar loss on the graph it is given, reading the
    current values of ``params``. An element whose +h/-h evaluations put some
    ReLU input on different sides of zero (or exactly on it) is counted as
    skipped: the subgradient there is ambiguous.
    """
    g = Graph()
    loss = build(g)
    backward(g, loss, params)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst, worst_at, checked, skipped = 0.0, None, 0, 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            gp = Graph()
            tp = gp.loss_terms(build(gp))
            flat[j] = orig - h
            gm = Graph()
            tm = gm.loss_terms(build(gm))
            flat[j] = orig
            crossed = any(
                ((a > 0) != (b > 0)).any() or ((a < 0) != (b < 0)).any()
                for a, b in zip(gp.relu_inputs(), gm.relu_inputs())
            )
            if crossed:
                skipped += 1
                continue
            num = math.fsum(tp - tm) / (2 * h)
            a = analytic[pi].reshape(-1)[j]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            checked += 1
            if rel > worst:
                worst, worst_at = rel, (pi, j)
    return GradCheckReport(worst, checked, skipped, tolerance, worst_at)
