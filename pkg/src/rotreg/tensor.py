"""Minimal reverse-mode differentiable computation core on float64 numpy.

Forward passes record a graph of `Tensor` nodes; `backward` walks it in
reverse topological order and accumulates exact gradients into the leaves.
Interior nodes release their buffers as soon as they have been processed,
which keeps peak memory close to the forward-activation footprint.

Also hosts batch normalization state and the Adam optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    Leaves (no parents) keep their accumulated `grad` after backward;
    interior nodes are freed during the sweep.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray):
        # freshly-owned arrays are adopted outright; views and borrowed
        # buffers are copied so a later += cannot corrupt their owner.
        # Backward closures must never hand one array object to two parents.
        g = np.asarray(g, dtype=np.float64)
        if self.grad is None:
            self.grad = g if g.base is None and g.flags.owndata else g.copy()
        else:
            self.grad += g

    def backward(self, seed: Optional[np.ndarray] = None):
        """Accumulate gradients of this node into every reachable leaf.

        `seed` is the upstream gradient; omitted it defaults to ones, which
        is the usual choice for a scalar loss.
        """
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        if seed is None:
            seed = np.ones_like(self.data)
        else:
            # keep the adopted root gradient clear of caller memory
            seed = np.array(seed, dtype=np.float64)
        self.accumulate(seed)

        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            # free interior buffers; leaves keep grad, the root keeps data
            if node._parents:
                node._backward = None
                node._parents = ()
                node.grad = None
                if node is not self:
                    node.data = None


def _require(cond: bool, message: str):
    if not cond:
        raise ValueError(message)


def linear_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for a 2-d batch of row vectors."""
    _require(x.data.ndim == 2 and w.data.ndim == 2, "linear_forward expects 2-d inputs")
    _require(x.data.shape[1] == w.data.shape[0], "linear_forward: inner extents differ")
    _require(b.data.shape == (w.data.shape[1],), "linear_forward: bias extent differs")
    xd, wd = x.data, w.data
    y = xd @ wd
    y += b.data
    out = Tensor(y, parents=(x, w, b))

    def backward(g):
        x.accumulate(g @ wd.T)
        w.accumulate(xd.T @ g)
        b.accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    out = Tensor(np.where(mask, x.data, 0.0), parents=(x,))

    def backward(g):
        x.accumulate(np.where(mask, g, 0.0))

    out._backward = backward
    return out


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def backward(g):
        g = g.reshape(old)
        if x.grad is None:
            # the view covers the child's whole (now released) gradient
            # buffer, so it can be taken over without a copy
            x.grad = g
        else:
            x.grad += g

    out._backward = backward
    return out


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.shape == b.data.shape, "subtract: shapes differ")
    out = Tensor(a.data - b.data, parents=(a, b))

    def backward(g):
        a.accumulate(g)
        b.accumulate(-g)

    out._backward = backward
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the trailing (channel) axis."""
    _require(a.data.shape[:-1] == b.data.shape[:-1], "concat_channels: leading shapes differ")
    ca = a.data.shape[-1]
    out = Tensor(np.concatenate([a.data, b.data], axis=-1), parents=(a, b))

    def backward(g):
        # the two slices partition the released child gradient, so each
        # side may be taken over as a view when nothing is there yet
        ga, gb = g[..., :ca], g[..., ca:]
        if a.grad is None:
            a.grad = ga
        else:
            a.grad += ga
        if b.grad is None:
            b.grad = gb
        else:
            b.grad += gb

    out._backward = backward
    return out


def max_pool_points(x: Tensor) -> Tensor:
    """Per-channel maximum over the points axis of a B x N x C tensor.

    Ties route the gradient to the lowest point index.
    """
    _require(x.data.ndim == 3, "max_pool_points expects B x N x C")
    _require(x.data.shape[1] >= 1, "max_pool_points: empty points axis")
    idx = np.argmax(x.data, axis=1)  # first occurrence wins ties
    shape = x.data.shape
    out_data = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :]
    out = Tensor(out_data, parents=(x,))

    def backward(g):
        gx = np.zeros(shape)
        bb = np.arange(shape[0])[:, None]
        cc = np.arange(shape[2])[None, :]
        gx[bb, idx, cc] = g
        x.accumulate(gx)

    out._backward = backward
    return out


def gather_points(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather neighbour rows: out[b, i, j, :] = x[b, idx[b, i, j], :]."""
    _require(x.data.ndim == 3, "gather_points expects B x N x C")
    _require(idx.ndim == 3 and idx.shape[0] == x.data.shape[0], "gather_points: bad index shape")
    bb = np.arange(x.data.shape[0])[:, None, None]
    shape = x.data.shape
    out = Tensor(x.data[bb, idx], parents=(x,))

    def backward(g):
        gx = np.zeros(shape)
        np.add.at(gx, (bb, idx), g)
        x.accumulate(gx)

    out._backward = backward
    return out


def expand_neighbors(x: Tensor, k: int) -> Tensor:
    """Tile each point feature across a new neighbour axis of width k."""
    _require(x.data.ndim == 3, "expand_neighbors expects B x N x C")
    out = Tensor(np.broadcast_to(x.data[:, :, None, :], x.data.shape[:2] + (k,) + x.data.shape[2:]).copy(), parents=(x,))

    def backward(g):
        x.accumulate(g.sum(axis=2))

    out._backward = backward
    return out


def edge_features(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[b, i, j] = [x[b, i], x[b, idx[b, i, j]] - x[b, i]].

    Single-pass build of the edge tensor; equivalent to the
    gather/tile/subtract/concat chain but without the intermediate
    copies, which dominate the cost at edge-conv sizes.
    """
    _require(x.data.ndim == 3, "edge_features expects B x N x C")
    _require(idx.ndim == 3 and idx.shape[:2] == x.data.shape[:2], "edge_features: bad index shape")
    b, n, c = x.data.shape
    k = idx.shape[2]
    bb = np.arange(b)[:, None, None]
    out_data = np.empty((b, n, k, 2 * c))
    out_data[..., :c] = x.data[:, :, None, :]
    out_data[..., c:] = x.data[bb, idx]
    out_data[..., c:] -= out_data[..., :c]
    out = Tensor(out_data, parents=(x,))

    def backward(g):
        gn = g[..., c:]
        gx = g[..., :c].sum(axis=2)
        gx -= gn.sum(axis=2)
        np.add.at(gx, (bb, idx), gn)
        x.accumulate(gx)

    out._backward = backward
    return out


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics.

    `momentum` is the fraction of the fresh batch statistic blended into the
    running value on each training-mode call.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"


def init_batchnorm(channels: int) -> BatchNormState:
    return BatchNormState(
        gamma=Tensor(np.ones(channels)),
        beta=Tensor(np.zeros(channels)),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
    )


def batchnorm_forward(x: Tensor, s: BatchNormState) -> Tensor:
    """Normalize over every axis except the trailing channel axis.

    Train mode uses batch statistics (biased variance) and updates the
    running values; eval mode uses the stored running statistics.
    """
    _require(x.data.ndim >= 2, "batchnorm_forward expects channels-last input")
    _require(x.data.shape[-1] == s.gamma.data.shape[0], "batchnorm_forward: channel extent differs")
    axes = tuple(range(x.data.ndim - 1))
    rows = int(np.prod(x.data.shape[:-1]))

    if s.mode == "train":
        _require(rows >= 2, "batchnorm_forward: train mode needs at least 2 rows per channel")
        mean = x.data.mean(axis=axes)
        xhat = x.data - mean
        var = _channel_dot(xhat, xhat) / rows  # biased, matching inference
        s.running_mean += s.momentum * (mean - s.running_mean)
        s.running_var += s.momentum * (var - s.running_var)
    else:
        var = s.running_var
        xhat = x.data - s.running_mean

    inv_std = 1.0 / np.sqrt(var + s.eps)
    xhat *= inv_std
    out_data = xhat * s.gamma.data
    out_data += s.beta.data
    out = Tensor(out_data, parents=(x, s.gamma, s.beta))
    train = s.mode == "train"

    def backward(g):
        s.gamma.accumulate(_channel_dot(g, xhat))
        s.beta.accumulate(g.sum(axis=axes))
        gx = g * s.gamma.data
        if train:
            # batch statistics depend on x, so the normalization itself
            # carries gradient
            m = float(rows)
            sum_g = gx.sum(axis=axes)
            sum_gx = _channel_dot(gx, xhat)
            gx -= sum_g / m
            gx -= xhat * (sum_gx / m)
        gx *= inv_std
        x.accumulate(gx)

    out._backward = backward
    return out


def _channel_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-channel dot product over all leading axes, without a temporary."""
    lead = "abcdef"[: a.ndim - 1]
    return np.einsum(f"{lead}z,{lead}z->z", a, b)


def shared_mlp_forward(x: Tensor, layers: Sequence[tuple]) -> Tensor:
    """Apply the same linear -> batchnorm -> ReLU stack to every point.

    `layers` holds (W, b, BatchNormState-or-None) triples; a None state
    skips normalization for that layer.
    """
    _require(x.data.ndim == 3, "shared_mlp_forward expects B x N x C")
    batch, n, _ = x.data.shape
    h = x
    for w, b, bn in layers:
        flat = reshape(h, (batch * n, h.data.shape[-1]))
        flat = linear_forward(flat, w, b)
        h = reshape(flat, (batch, n, w.data.shape[1]))
        if bn is not None:
            h = batchnorm_forward(h, bn)
        h = relu(h)
    return h


@dataclass
class AdamState:
    """Moment accumulators for the Adam update rule."""

    lr: float = 0.008
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params: Sequence[Tensor], lr: float = 0.008) -> AdamState:
    state = AdamState(lr=lr)
    state.m = [np.zeros_like(p.data) for p in params]
    state.v = [np.zeros_like(p.data) for p in params]
    return state


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState):
    """One bias-corrected Adam update, applied to the parameters in place.

    A None gradient counts as zero; such parameters do not move.
    """
    _require(len(params) == len(state.m), "adam_step: parameter count differs from state")
    _require(len(grads) == len(params), "adam_step: gradient count differs from parameters")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        _require(g.shape == p.data.shape, "adam_step: gradient shape differs from parameter")
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def zero_grads(params: Sequence[Tensor]):
    for p in params:
        p.grad = None
