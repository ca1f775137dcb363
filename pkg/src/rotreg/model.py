"""Rotation regression networks: a PointNet-style encoder (PN) and a
dynamic nearest-neighbour graph encoder (DG), both ending in a 3-layer
regression head that emits an unconstrained axis-angle vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3
from . import tensor as T
from .geometry import PointCloudSegment

PN_POINT_DIMS = (64, 64, 64, 128, 1024)
DG_EDGE_DIMS = (64, 128)
GLOBAL_DIM = 1024
HEAD_DIMS = (512, 256, 3)


@dataclass(frozen=True)
class ArchitectureSpec:
    """Static description of one network variant.

    `point_mlp_dims` are per-point widths for PN and edge-convolution
    widths for DG; when the last of them differs from `global_feature_dim`
    a final shared per-point layer bridges the gap before pooling.
    """

    variant: str
    point_mlp_dims: tuple = PN_POINT_DIMS
    global_feature_dim: int = GLOBAL_DIM
    head_dims: tuple = HEAD_DIMS
    k: int = 10
    input_dim: int = 3
    num_points: int = 256

    def __post_init__(self):
        if self.variant not in ("PN", "DG"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.head_dims[-1] != 3:
            raise ValueError("head must end in a 3-dim axis-angle output")
        widths = (*self.point_mlp_dims, self.global_feature_dim, *self.head_dims[:-1])
        if any(w < 1 for w in widths):
            raise ValueError("all layer widths must be positive")
        if self.input_dim not in (3, 6):
            raise ValueError("input_dim must be 3 or 6")
        if self.variant == "DG":
            if self.k < 1:
                raise ValueError("DG needs k >= 1")
            if self.num_points <= self.k:
                raise ValueError("DG needs more points than k")


def pn_spec(**overrides) -> ArchitectureSpec:
    return ArchitectureSpec(variant="PN", **overrides)


def dg_spec(**overrides) -> ArchitectureSpec:
    overrides.setdefault("point_mlp_dims", DG_EDGE_DIMS)
    return ArchitectureSpec(variant="DG", **overrides)


@dataclass
class Model:
    spec: ArchitectureSpec
    params: dict = field(default_factory=dict)
    norm_states: dict = field(default_factory=dict)


def _he_init(rng, fan_in: int, fan_out: int, final: bool = False) -> np.ndarray:
    scale = (1.0 if final else 2.0) / fan_in
    return rng.normal(0.0, np.sqrt(scale), size=(fan_in, fan_out))


def _stage_plan(spec: ArchitectureSpec) -> list[tuple[str, int, int]]:
    """(name, fan_in, fan_out) for every layer before the head, in order."""
    plan = []
    if spec.variant == "PN":
        prev = spec.input_dim
        for i, width in enumerate(spec.point_mlp_dims):
            plan.append((f"point{i}", prev, width))
            prev = width
    else:
        prev = spec.input_dim
        for i, width in enumerate(spec.point_mlp_dims):
            plan.append((f"edge{i}", 2 * prev, width))
            prev = width
    if prev != spec.global_feature_dim:
        plan.append(("lift", prev, spec.global_feature_dim))
    return plan


def init_model(spec: ArchitectureSpec, seed: int = 0) -> Model:
    """He-initialized weights, zero biases, fresh batchnorm states."""
    rng = np.random.default_rng(seed)
    model = Model(spec=spec)
    for name, fan_in, fan_out in _stage_plan(spec):
        model.params[f"{name}_w"] = T.Tensor(_he_init(rng, fan_in, fan_out))
        model.params[f"{name}_b"] = T.Tensor(np.zeros(fan_out))
        model.norm_states[f"{name}_bn"] = T.init_batchnorm(fan_out)
    prev = spec.global_feature_dim
    for i, width in enumerate(spec.head_dims):
        final = i == len(spec.head_dims) - 1
        model.params[f"head{i}_w"] = T.Tensor(_he_init(rng, prev, width, final=final))
        model.params[f"head{i}_b"] = T.Tensor(np.zeros(width))
        if not final:
            model.norm_states[f"head{i}_bn"] = T.init_batchnorm(width)
        prev = width
    return model


def parameters(model: Model) -> list[T.Tensor]:
    out = list(model.params.values())
    for state in model.norm_states.values():
        out.append(state.gamma)
        out.append(state.beta)
    return out


def set_mode(model: Model, mode: str):
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    for state in model.norm_states.values():
        state.mode = mode


def _check_input(model: Model, x: T.Tensor):
    if x.data.ndim != 3 or x.data.shape[2] != model.spec.input_dim:
        raise ValueError(
            f"expected B x N x {model.spec.input_dim} input, got {x.data.shape}"
        )


def _head_forward(model: Model, g: T.Tensor) -> T.Tensor:
    h = g
    for i in range(len(model.spec.head_dims)):
        h = T.linear_forward(h, model.params[f"head{i}_w"], model.params[f"head{i}_b"])
        if i < len(model.spec.head_dims) - 1:
            h = T.batchnorm_forward(h, model.norm_states[f"head{i}_bn"])
            h = T.relu(h)
    return h


def _point_layers(model: Model, names) -> list[tuple]:
    return [
        (model.params[f"{n}_w"], model.params[f"{n}_b"], model.norm_states[f"{n}_bn"])
        for n in names
    ]


def pn_forward(model: Model, x: T.Tensor) -> T.Tensor:
    """Shared per-point MLP, max pool to a global feature, regression head."""
    if model.spec.variant != "PN":
        raise ValueError("pn_forward needs a PN model")
    _check_input(model, x)
    names = [name for name, _, _ in _stage_plan(model.spec)]
    h = T.shared_mlp_forward(x, _point_layers(model, names))
    return _head_forward(model, T.max_pool_points(h))


def feature_knn(features: np.ndarray, k: int) -> np.ndarray:
    """Per-batch kNN indices in the current feature space.

    Squared distances come from the inner-product expansion, which is fast
    for wide features; ties break toward the lower index and self-edges are
    excluded.
    """
    b, n, _ = features.shape
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    sq = (features**2).sum(axis=2)
    d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * np.einsum("bnc,bmc->bnm", features, features)
    d2[:, np.arange(n), np.arange(n)] = np.inf
    order = np.argsort(d2, axis=2, kind="stable")
    return order[:, :, :k]


def dg_forward(model: Model, x: T.Tensor) -> T.Tensor:
    """Edge convolutions over per-layer feature-space kNN graphs, then the
    same pooling and head as PN.

    Each stage gathers the k current-space neighbours, forms edge features
    [P_i, P_j - P_i], runs the shared layer on them, and keeps the max over
    a point's edges.
    """
    if model.spec.variant != "DG":
        raise ValueError("dg_forward needs a DG model")
    _check_input(model, x)
    k = model.spec.k
    batch, n, _ = x.data.shape
    h = x
    for i in range(len(model.spec.point_mlp_dims)):
        idx = feature_knn(h.data, k)
        edge = T.edge_features(h, idx)
        width = model.params[f"edge{i}_w"].data.shape[1]
        flat = T.reshape(edge, (batch * n * k, edge.data.shape[-1]))
        flat = T.linear_forward(flat, model.params[f"edge{i}_w"], model.params[f"edge{i}_b"])
        z = T.reshape(flat, (batch, n, k, width))
        z = T.batchnorm_forward(z, model.norm_states[f"edge{i}_bn"])
        z = T.relu(z)
        pooled = T.max_pool_points(T.reshape(z, (batch * n, k, width)))
        h = T.reshape(pooled, (batch, n, width))
    if "lift_w" in model.params:
        h = T.shared_mlp_forward(h, _point_layers(model, ["lift"]))
    return _head_forward(model, T.max_pool_points(h))


def forward(model: Model, x: T.Tensor) -> T.Tensor:
    return pn_forward(model, x) if model.spec.variant == "PN" else dg_forward(model, x)


def predict_rotation(model: Model, seg: PointCloudSegment) -> np.ndarray:
    """Eval-mode prediction for one prepared segment.

    The segment must already be downsampled to the model spec's point
    count and translation-removed.
    """
    if len(seg) != model.spec.num_points:
        raise ValueError(f"expected {model.spec.num_points} points, got {len(seg)}")
    if seg.points.shape[1] != model.spec.input_dim:
        raise ValueError(
            f"expected {model.spec.input_dim}-channel points, got {seg.points.shape[1]}"
        )
    previous = {name: s.mode for name, s in model.norm_states.items()}
    set_mode(model, "eval")
    try:
        out = forward(model, T.Tensor(seg.points[None, :, :]))
    finally:
        for name, s in model.norm_states.items():
            s.mode = previous[name]
    return out.data[0].copy()


def training_loss(model: Model, x, targets) -> tuple[float, np.ndarray]:
    """Mean geodesic loss over a batch, with gradients pushed to all
    parameters.

    Returns the mean loss and the per-sample losses, both in radians.
    """
    if not isinstance(x, T.Tensor):
        x = T.Tensor(x)
    batch = x.data.shape[0]
    if batch < 2:
        raise ValueError("training needs a batch of at least 2")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (batch, 3):
        raise ValueError(f"targets must be {batch} x 3, got {targets.shape}")
    set_mode(model, "train")
    T.zero_grads(parameters(model))
    pred = forward(model, x)
    losses = np.empty(batch)
    seeds = np.empty((batch, 3))
    for i in range(batch):
        losses[i] = so3.geodesic_loss(pred.data[i], targets[i])
        seeds[i] = so3.geodesic_loss_grad(pred.data[i], targets[i])
    pred.backward(seeds / batch)
    return float(losses.mean()), losses
