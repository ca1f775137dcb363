"""Training and evaluation loops: input preparation, minibatch Adam updates
with loss logging and best-state tracking, and split evaluation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import so3
from . import tensor as T
from .data import ObjectModel
from .errors import DataError
from .evaluation import EvalRecord, add_metric
from .geometry import PointCloudSegment, downsample, remove_translation
from .model import Model, forward, parameters, set_mode, training_loss

# mean batch loss over this many recent iterations drives early stopping
EARLY_STOP_WINDOW = 25

# keeps the batch-index stream clear of the per-sample streams [seed, i]
_BATCH_STREAM = 0x5EED


def prepare_inputs(samples, num_points: int, channel_mode: str, seed: int,
                   translation_sigma: float = 0.0):
    """Fixed-size, translation-free inputs plus axis-angle targets.

    Every sample draws from its own stream [seed, i], so the prepared points
    do not depend on how the split is batched or ordered downstream. A
    positive translation_sigma perturbs the subtracted translation,
    simulating an imperfect centroid estimate.
    """
    count = len(samples)
    if count == 0:
        raise DataError("cannot prepare an empty sample list")
    width = 3 if channel_mode == "XYZ" else 6
    x = np.empty((count, num_points, width))
    targets = np.empty((count, 3))
    for i, s in enumerate(samples):
        x[i] = _prepare_one(s, num_points, channel_mode, [seed, i], translation_sigma)
        targets[i] = s.rotation
    return x, targets


def _prepare_one(sample, num_points, channel_mode, seed, translation_sigma):
    rng = np.random.default_rng(seed)
    seg = downsample(sample.segment, num_points, int(rng.integers(0, 2**63)))
    t = sample.translation
    if translation_sigma > 0.0:
        t = t + rng.normal(0.0, translation_sigma, size=3)
    seg = remove_translation(seg, t)
    pts = seg.points
    if channel_mode == "XYZ":
        return pts[:, :3]
    if pts.shape[1] != 6:
        raise DataError("channel_mode XYZRGB needs color channels in the data")
    return pts


@dataclass
class TrainResult:
    iterations_run: int
    losses: list = field(default_factory=list)
    best_loss: float = math.inf
    best_iteration: int = -1
    best_state: Optional[tuple] = None
    stopped_early: bool = False
    adam: Optional[T.AdamState] = None
    rng: Optional[np.random.Generator] = None


def snapshot_state(model: Model) -> tuple:
    params = {k: t.data.copy() for k, t in model.params.items()}
    norms = {
        k: (s.gamma.data.copy(), s.beta.data.copy(),
            s.running_mean.copy(), s.running_var.copy())
        for k, s in model.norm_states.items()
    }
    return params, norms


def restore_state(model: Model, state: tuple):
    params, norms = state
    for k, t in model.params.items():
        t.data = params[k].copy()
    for k, s in model.norm_states.items():
        gamma, beta, mean, var = norms[k]
        s.gamma.data = gamma.copy()
        s.beta.data = beta.copy()
        s.running_mean = mean.copy()
        s.running_var = var.copy()


def train(model: Model, x: np.ndarray, targets: np.ndarray, iterations: int,
          batch_size: int, lr: float = 0.008, seed: int = 0,
          adam: Optional[T.AdamState] = None, start_iteration: int = 0,
          rng_state: Optional[dict] = None,
          early_stop_deg: Optional[float] = None, log=None,
          track_best: bool = True) -> TrainResult:
    """Minibatch Adam on the geodesic loss; one log row per iteration.

    Iterations are numbered globally, so a resumed run continues the same
    sequence: pass the saved adam state, start_iteration, and rng_state and
    the trajectory is identical to one uninterrupted run.
    """
    total = x.shape[0]
    params = parameters(model)
    if adam is None:
        adam = T.init_adam(params, lr=lr)
    elif len(adam.m) != len(params):
        raise ValueError("adam state does not match this model's parameters")
    rng = np.random.default_rng([seed, _BATCH_STREAM])
    if rng_state is not None:
        rng.bit_generator.state = rng_state

    result = TrainResult(iterations_run=start_iteration, adam=adam, rng=rng)
    for it in range(start_iteration, iterations):
        idx = rng.choice(total, size=batch_size, replace=total < batch_size)
        mean_loss, _ = training_loss(model, x[idx], targets[idx])
        T.adam_step(params, [p.grad for p in params], adam)
        result.losses.append(mean_loss)
        result.iterations_run = it + 1
        if log is not None:
            log.write(f"{it},{mean_loss!r}\n")
        if track_best and mean_loss < result.best_loss:
            result.best_loss = mean_loss
            result.best_iteration = it
            result.best_state = snapshot_state(model)
        if early_stop_deg is not None:
            recent = result.losses[-EARLY_STOP_WINDOW:]
            if len(recent) == EARLY_STOP_WINDOW and \
                    float(np.mean(recent)) < math.radians(early_stop_deg):
                result.stopped_early = True
                break
    return result


def evaluate_samples(model: Model, samples, seed: int,
                     translation_sigma: float = 0.0,
                     object_model: Optional[ObjectModel] = None,
                     workers: int = 1) -> list:
    """Per-sample eval records for a split.

    Input preparation matches training exactly (same per-sample streams).
    ADD uses the true translation on both sides, so it reflects rotation
    error alone; it is only computed when object_model is given. With
    workers > 1 samples run on a thread pool; records keep input order
    either way, and eval-mode forward passes only read shared state.
    """
    channel_mode = "XYZ" if model.spec.input_dim == 3 else "XYZRGB"

    def one(i):
        s = samples[i]
        pts = _prepare_one(s, model.spec.num_points, channel_mode, [seed, i],
                           translation_sigma)
        r_hat = forward(model, T.Tensor(pts[None, :, :])).data[0]
        add = None
        if object_model is not None:
            add = add_metric(object_model, so3.exp_map(s.rotation), s.translation,
                             so3.exp_map(r_hat), s.translation)
        return EvalRecord(
            frame_id=s.segment.frame_id or f"sample{i}",
            angle_error=so3.geodesic_loss(r_hat, s.rotation),
            occlusion_factor=s.occlusion_factor,
            add=add,
        )

    previous = {name: s.mode for name, s in model.norm_states.items()}
    set_mode(model, "eval")
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(one, range(len(samples))))
        else:
            records = [one(i) for i in range(len(samples))]
    finally:
        for name, s in model.norm_states.items():
            s.mode = previous[name]
    return records
