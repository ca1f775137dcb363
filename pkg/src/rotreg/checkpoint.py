"""Self-describing npz checkpoints: parameters, batchnorm statistics, Adam
moments, and the training RNG state, plus a JSON meta block embedding the
architecture so loading needs no external configuration.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import CheckpointError
from .model import ArchitectureSpec, Model, init_model, parameters

CHECKPOINT_FORMAT = "rotreg-checkpoint-v1"


def save_checkpoint(
    path,
    model: Model,
    adam: Optional[T.AdamState] = None,
    iteration: int = 0,
    rng_state: Optional[dict] = None,
    extra: Optional[dict] = None,
):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "spec": asdict(model.spec),
        "iteration": int(iteration),
        "rng_state": rng_state,
        "adam": None,
        "extra": extra or {},
    }
    arrays = {}
    for name, p in model.params.items():
        arrays[f"param/{name}"] = p.data
    for name, s in model.norm_states.items():
        arrays[f"bn/{name}/gamma"] = s.gamma.data
        arrays[f"bn/{name}/beta"] = s.beta.data
        arrays[f"bn/{name}/running_mean"] = s.running_mean
        arrays[f"bn/{name}/running_var"] = s.running_var
    if adam is not None:
        meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "step": adam.step}
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"adam/m/{i}"] = m
            arrays[f"adam/v/{i}"] = v
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> tuple[Model, Optional[T.AdamState], dict]:
    """Rebuild the model (and optimizer state, when present) from disk."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        archive = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if "meta" not in archive:
        raise CheckpointError(f"{path} has no meta block")
    meta = json.loads(bytes(archive["meta"]).decode())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")

    spec_dict = dict(meta["spec"])
    spec_dict["point_mlp_dims"] = tuple(spec_dict["point_mlp_dims"])
    spec_dict["head_dims"] = tuple(spec_dict["head_dims"])
    model = init_model(ArchitectureSpec(**spec_dict), seed=0)
    try:
        for name, p in model.params.items():
            p.data = np.array(archive[f"param/{name}"])
        for name, s in model.norm_states.items():
            s.gamma.data = np.array(archive[f"bn/{name}/gamma"])
            s.beta.data = np.array(archive[f"bn/{name}/beta"])
            s.running_mean = np.array(archive[f"bn/{name}/running_mean"])
            s.running_var = np.array(archive[f"bn/{name}/running_var"])
    except KeyError as exc:
        raise CheckpointError(f"{path} is missing array {exc}") from exc

    adam = None
    if meta["adam"] is not None:
        a = meta["adam"]
        adam = T.init_adam(parameters(model), lr=a["lr"])
        adam.beta1, adam.beta2, adam.eps, adam.step = a["beta1"], a["beta2"], a["eps"], a["step"]
        try:
            adam.m = [np.array(archive[f"adam/m/{i}"]) for i in range(len(adam.m))]
            adam.v = [np.array(archive[f"adam/v/{i}"]) for i in range(len(adam.v))]
        except KeyError as exc:
            raise CheckpointError(f"{path} is missing optimizer array {exc}") from exc
    return model, adam, meta
