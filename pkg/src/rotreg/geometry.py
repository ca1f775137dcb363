"""Point cloud segments: construction from RGB-D frames, sampling, and
k-nearest-neighbour graphs with edge features.

Coordinates are meters, colors live in [0, 1]. A segment's points are an
m x D array with D = 3 (XYZ) or D = 6 (XYZRGB).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptySegmentError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera parameters, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass
class PointCloudSegment:
    """An ordered set of object points, XYZ or XYZRGB channels."""

    points: np.ndarray
    frame_id: str = ""
    channel_mode: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] not in (3, 6):
            raise ValueError("segment points must be m x 3 or m x 6")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("segment contains non-finite coordinates")
        mode = "XYZ" if self.points.shape[1] == 3 else "XYZRGB"
        if self.channel_mode == "":
            self.channel_mode = mode
        elif self.channel_mode != mode:
            raise ValueError(f"channel_mode {self.channel_mode!r} inconsistent with width {self.points.shape[1]}")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class KnnGraph:
    """Per-point neighbour indices and the [P_i, P_j - P_i] edge features."""

    k: int
    edges: np.ndarray  # m x k neighbour indices
    edge_features: np.ndarray  # m x k x 2D


def backproject(
    depth: np.ndarray,
    color: Optional[np.ndarray],
    mask: np.ndarray,
    intr: CameraIntrinsics,
    frame_id: str = "",
) -> PointCloudSegment:
    """Lift masked pixels with valid depth into a camera-frame segment.

    Args:
        depth: height x width depth in meters.
        color: height x width x 3 RGB, or None for an XYZ-only segment.
            Integer dtypes are scaled by 1/255.
        mask: height x width, nonzero marks object pixels.
        intr: camera parameters matching the image size.

    Pixels with non-positive or non-finite depth are skipped. Raises
    EmptySegmentError when nothing survives.
    """
    depth = np.asarray(depth, dtype=np.float64)
    expected = (intr.height, intr.width)
    if depth.shape != expected:
        raise ValueError(f"depth shape {depth.shape} does not match intrinsics {expected}")
    mask = np.asarray(mask)
    if mask.shape != expected:
        raise ValueError(f"mask shape {mask.shape} does not match intrinsics {expected}")
    if color is not None and color.shape[:2] != expected:
        raise ValueError(f"color shape {color.shape} does not match intrinsics {expected}")

    vs, us = np.nonzero(mask)
    z = depth[vs, us]
    valid = np.isfinite(z) & (z > 0.0)
    if not np.any(valid):
        raise EmptySegmentError(f"no masked pixel with valid depth in frame {frame_id!r}")
    vs, us, z = vs[valid], us[valid], z[valid]

    x = (us - intr.cx) * z / intr.fx
    y = (vs - intr.cy) * z / intr.fy
    xyz = np.stack([x, y, z], axis=1)
    if color is None:
        return PointCloudSegment(xyz, frame_id=frame_id)
    rgb = np.asarray(color)[vs, us].astype(np.float64)
    if np.issubdtype(np.asarray(color).dtype, np.integer):
        rgb /= 255.0
    return PointCloudSegment(np.concatenate([xyz, rgb], axis=1), frame_id=frame_id)


def project(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame XYZ points to pixel coordinates.

    Returns an m x 2 array of (u, v). Raises on any point at or behind the
    camera plane.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    if np.any(z <= 0.0):
        raise ValueError("cannot project points with non-positive depth")
    u = intr.fx * points[:, 0] / z + intr.cx
    v = intr.fy * points[:, 1] / z + intr.cy
    return np.stack([u, v], axis=1)


def downsample(seg: PointCloudSegment, n: int, seed: int) -> PointCloudSegment:
    """Random fixed-size sample: without replacement when the segment has at
    least n points, with replacement otherwise."""
    m = len(seg)
    if m == 0:
        raise EmptySegmentError("cannot downsample an empty segment")
    rng = np.random.default_rng(seed)
    idx = rng.choice(m, size=n, replace=m < n)
    return PointCloudSegment(seg.points[idx], frame_id=seg.frame_id)


def remove_translation(seg: PointCloudSegment, t) -> PointCloudSegment:
    """Subtract t from the XYZ channels; RGB and point order are untouched."""
    t = np.asarray(t, dtype=np.float64)
    out = seg.points.copy()
    out[:, :3] -= t
    return PointCloudSegment(out, frame_id=seg.frame_id)


def knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """k nearest neighbours per row by squared Euclidean distance.

    Self-edges are excluded; ties break toward the lower index. Distances
    are accumulated per-pair exactly as an elementwise difference, square,
    and sum, so results are bit-comparable with a naive implementation.
    """
    points = np.asarray(points, dtype=np.float64)
    m = points.shape[0]
    if m <= k:
        raise ValueError(f"need more than k={k} points, got {m}")
    diff = points[:, None, :] - points[None, :, :]
    d2 = (diff**2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def knn_graph(seg: PointCloudSegment, k: int) -> KnnGraph:
    """kNN graph over the segment's full feature rows, with edge features
    [P_i, P_j - P_i] per out-edge."""
    edges = knn_indices(seg.points, k)
    p = seg.points
    neighbours = p[edges]  # m x k x D
    center = np.broadcast_to(p[:, None, :], neighbours.shape)
    features = np.concatenate([center, neighbours - center], axis=2)
    return KnnGraph(k=k, edges=edges, edge_features=features)


def load_depth_image(path) -> np.ndarray:
    """Depth file to meters: 16-bit images are treated as millimeters,
    float images as meters."""
    from PIL import Image

    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype == np.uint16 or img.mode in ("I", "I;16"):
        return arr.astype(np.float64) / 1000.0
    return arr.astype(np.float64)


def load_mask_image(path) -> np.ndarray:
    from PIL import Image

    img = Image.open(path).convert("L")
    return np.asarray(img) > 0


def load_color_image(path) -> np.ndarray:
    from PIL import Image

    img = Image.open(path).convert("RGB")
    return np.asarray(img).astype(np.float64) / 255.0
