"""Synthetic pose dataset generation and dataset file I/O.

Two canonical desk-scale shapes are shipped: an asymmetric L-shaped block
and a bar whose point set is exactly invariant under a half-turn about its
long axis. Samples apply a uniform random rotation, a random translation in
front of the camera, a half-space occlusion cut, and Gaussian noise.

Datasets are written as one YAML manifest plus one plain-text point file
per sample, so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import so3
from .errors import DataError
from .geometry import PointCloudSegment

DATASET_FORMAT = "rotreg-dataset-v1"
POINT_FORMAT = "rotreg-points-v1"

# requested occlusion is drawn per bin; the upper ends leave headroom so the
# achieved fraction ceil(o*m)/m stays on the requested side of the 0.2 boundary
OCCLUSION_BINS = {"low": (0.0, 0.2), "moderate": (0.2, 0.4)}

MIN_VISIBLE = 32


@dataclass
class ObjectModel:
    """A rigid object as a set of 3D points in the object frame, meters."""

    name: str
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("model points must be m x 3")


@dataclass
class Sample:
    """One synthetic frame: a visible segment plus its ground-truth pose."""

    segment: PointCloudSegment
    rotation: np.ndarray
    translation: np.ndarray
    occlusion_factor: float
    object: str


def _grid(xs, ys, zs):
    g = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.stack([a.reshape(-1) for a in g], axis=1)


def _steps(lo, hi, step=0.005):
    n = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(n)


def l_shape_model() -> ObjectModel:
    """Solid L-shaped block with unequal arms; no rotational symmetry."""
    zs = _steps(0.0, 0.02)
    arm_a = _grid(_steps(0.0, 0.10), _steps(0.0, 0.03), zs)
    arm_b = _grid(_steps(0.0, 0.03), _steps(0.035, 0.08), zs)
    pts = np.concatenate([arm_a, arm_b])
    pts -= pts.mean(axis=0)
    return ObjectModel("l_shape", pts)


def two_fold_bar_model() -> ObjectModel:
    """Bar with an S-shaped cross-section, exactly invariant under a 180
    degree rotation about z.

    The negative-side flange is the exact float negation of the positive
    one, so the symmetry holds bitwise on the point set.
    """
    half = 0.0025 + 0.005 * np.arange(10)  # 0.0025 .. 0.0475
    xs = np.concatenate([-half[::-1], half])
    ys = np.array([-0.0075, -0.0025, 0.0025, 0.0075])
    zs = ys.copy()
    bar = _grid(xs, ys, zs)
    flange = _grid(
        np.array([0.0375, 0.0425, 0.0475]),
        0.0125 + 0.005 * np.arange(6),
        zs,
    )
    mirrored = flange.copy()
    mirrored[:, 0] = -mirrored[:, 0]
    mirrored[:, 1] = -mirrored[:, 1]
    return ObjectModel("two_fold_bar", np.concatenate([bar, flange, mirrored]))


_BUILTIN_MODELS = {"l_shape": l_shape_model, "two_fold_bar": two_fold_bar_model}


def object_model_by_name(name: str) -> ObjectModel:
    if name not in _BUILTIN_MODELS:
        raise DataError(f"unknown object model {name!r}; known: {sorted(_BUILTIN_MODELS)}")
    return _BUILTIN_MODELS[name]()


def sample_rotation_uniform(seed) -> np.ndarray:
    """Axis-angle rotation drawn uniformly w.r.t. the Haar measure.

    A normalized 4D Gaussian gives a uniform unit quaternion; its angle is
    2 atan2(|xyz|, |w|), which already lands in [0, pi].
    """
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, xyz = abs(q[0]), q[1:] * np.sign(q[0] if q[0] != 0 else 1.0)
    s = np.linalg.norm(xyz)
    if s == 0.0:
        return np.zeros(3)
    theta = 2.0 * math.atan2(s, w)
    return so3.canonicalize(theta * xyz / s)


def generate_sample(
    model: ObjectModel,
    r,
    t,
    occlusion: float = 0.0,
    noise_sigma: float = 0.0,
    seed=0,
    frame_id: str = "",
) -> Sample:
    """Render one frame: transform, cut away the occluded side, add noise.

    The occlusion cut removes the ceil(occlusion * m) points furthest along
    a random direction from the transformed centroid. The recorded
    occlusion factor is the achieved removed fraction.
    """
    if not 0.0 <= occlusion < 1.0:
        raise DataError(f"occlusion must be in [0, 1), got {occlusion}")
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    rng = np.random.default_rng(seed)
    rot = so3.exp_map(r)
    pts = model.points @ rot.T + t

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    m = len(pts)
    # the small offset keeps ceil exact when occlusion is a ratio c/m
    cut = math.ceil(occlusion * m - 1e-9)
    if cut > 0:
        along = (pts - pts.mean(axis=0)) @ direction
        keep = np.argsort(along, kind="stable")[: m - cut]
        keep.sort()
        pts = pts[keep]
    if len(pts) < MIN_VISIBLE:
        raise DataError(f"occlusion {occlusion} leaves {len(pts)} points, need at least {MIN_VISIBLE}")
    if noise_sigma > 0.0:
        pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)

    return Sample(
        segment=PointCloudSegment(pts, frame_id=frame_id),
        rotation=so3.canonicalize(r),
        translation=t,
        occlusion_factor=cut / m,
        object=model.name,
    )


def _draw_translation(rng) -> np.ndarray:
    return np.array(
        [rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.8, 1.5)]
    )


def make_dataset(model: ObjectModel, split_spec: dict, seed: int, noise_sigma: float = 0.003):
    """Generate samples per split and occlusion bin, plus a manifest.

    `split_spec` maps split name to {bin_name: count}, e.g.
    {"train": {"low": 2000}, "test": {"low": 100, "moderate": 100}}.
    Each sample derives all its randomness from its own recorded seed.
    """
    m = len(model.points)
    seed_rng = np.random.default_rng(seed)
    splits: dict[str, list[Sample]] = {}
    manifest = {
        "format": DATASET_FORMAT,
        "point_format": POINT_FORMAT,
        "object": model.name,
        "model_points": int(m),
        "noise_sigma": float(noise_sigma),
        "seed": int(seed),
        "splits": {},
    }
    used_seeds = set()
    for split, bin_counts in split_spec.items():
        samples = []
        entries = []
        index = 0
        for bin_name, count in bin_counts.items():
            if bin_name not in OCCLUSION_BINS:
                raise DataError(f"unknown occlusion bin {bin_name!r}; known: {sorted(OCCLUSION_BINS)}")
            lo, hi = OCCLUSION_BINS[bin_name]
            # headroom keeps the achieved ceil(o*m)/m inside the bin
            hi = hi - 1.5 / m
            for _ in range(int(count)):
                sample_seed = int(seed_rng.integers(0, 2**63))
                used_seeds.add(sample_seed)
                rng = np.random.default_rng(sample_seed)
                r = sample_rotation_uniform(rng)
                t = _draw_translation(rng)
                requested = float(rng.uniform(lo, hi))
                sample_id = f"{split}-{index:05d}"
                sample = generate_sample(
                    model,
                    r,
                    t,
                    occlusion=requested,
                    noise_sigma=noise_sigma,
                    seed=rng,
                    frame_id=f"{model.name}/{sample_id}",
                )
                samples.append(sample)
                entries.append(
                    {
                        "id": sample_id,
                        "file": f"points/{sample_id}.txt",
                        "seed": sample_seed,
                        "bin": bin_name,
                        "requested_occlusion": requested,
                        "occlusion": float(sample.occlusion_factor),
                        "rotation": [float(v) for v in sample.rotation],
                        "translation": [float(v) for v in sample.translation],
                    }
                )
                index += 1
        splits[split] = samples
        manifest["splits"][split] = entries
    if len(used_seeds) != sum(len(v) for v in splits.values()):
        raise DataError("sample seed collision; rerun with a different dataset seed")
    return splits, manifest


def write_points_file(path, points: np.ndarray):
    """Header "D N" then one row of D shortest-roundtrip decimals per point."""
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    lines = [f"{d} {n}"]
    for row in points:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_points_file(path) -> np.ndarray:
    text = Path(path).read_text().strip().split("\n")
    try:
        d, n = (int(v) for v in text[0].split())
    except ValueError as exc:
        raise DataError(f"bad point file header in {path}: {text[0]!r}") from exc
    if len(text) - 1 != n:
        raise DataError(f"point file {path} announces {n} rows but has {len(text) - 1}")
    out = np.empty((n, d))
    for i, line in enumerate(text[1:]):
        vals = line.split()
        if len(vals) != d:
            raise DataError(f"point file {path} row {i} has {len(vals)} values, expected {d}")
        out[i] = [float(v) for v in vals]
    return out


def write_dataset(out_dir, splits: dict, manifest: dict):
    out = Path(out_dir)
    (out / "points").mkdir(parents=True, exist_ok=True)
    entries_by_split = manifest["splits"]
    for split, samples in splits.items():
        for sample, entry in zip(samples, entries_by_split[split]):
            write_points_file(out / entry["file"], sample.segment.points)
    with open(out / "manifest.yaml", "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.yaml"
    if not path.exists():
        raise DataError(f"no manifest.yaml under {dataset_dir}")
    with open(path) as f:
        manifest = yaml.safe_load(f)
    if not isinstance(manifest, dict) or manifest.get("format") != DATASET_FORMAT:
        raise DataError(f"{path} is not a {DATASET_FORMAT} manifest")
    return manifest


def load_split(dataset_dir, split: str) -> list[Sample]:
    """Materialize one split's samples from a written dataset."""
    manifest = load_manifest(dataset_dir)
    if split not in manifest["splits"]:
        raise DataError(f"split {split!r} not in dataset; has {sorted(manifest['splits'])}")
    root = Path(dataset_dir)
    samples = []
    for entry in manifest["splits"][split]:
        points = read_points_file(root / entry["file"])
        samples.append(
            Sample(
                segment=PointCloudSegment(points, frame_id=f"{manifest['object']}/{entry['id']}"),
                rotation=np.array(entry["rotation"]),
                translation=np.array(entry["translation"]),
                occlusion_factor=float(entry["occlusion"]),
                object=manifest["object"],
            )
        )
    return samples


def load_object_model(path, name: str = "") -> ObjectModel:
    """ASCII point list, one "x y z" triple per line, meters."""
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        vals = line.split()
        if len(vals) != 3:
            raise DataError(f"model file {path} line {i + 1} has {len(vals)} values, expected 3")
        rows.append([float(v) for v in vals])
    if not rows:
        raise DataError(f"model file {path} is empty")
    return ObjectModel(name or Path(path).stem, np.array(rows))
