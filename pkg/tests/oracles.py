"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written from a different algebraic form than
the implementation under test (Rodrigues outer-product form, quaternions,
exhaustive searches), so agreement is meaningful.
"""

from __future__ import annotations

import math

import numpy as np


def rodrigues_matrix(r) -> np.ndarray:
    """Rotation matrix via the outer-product form of Rodrigues' formula.

    R = cos(t) I + sin(t) [u]x + (1 - cos(t)) u u^T, with u the unit axis.
    """
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta == 0.0:
        return np.eye(3)
    u = r / theta
    ux = np.array(
        [
            [0.0, -u[2], u[1]],
            [u[2], 0.0, -u[0]],
            [-u[1], u[0], 0.0],
        ]
    )
    return math.cos(theta) * np.eye(3) + math.sin(theta) * ux + (1.0 - math.cos(theta)) * np.outer(u, u)


def axis_angle_to_quat(r) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for an axis-angle vector."""
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    u = r / theta
    return np.concatenate(([math.cos(theta / 2.0)], math.sin(theta / 2.0) * u))


def quat_geodesic(r1, r2) -> float:
    """Geodesic distance between two axis-angle rotations via quaternions.

    Uses the double-cover identity d = 2 arccos(|q1 . q2|).
    """
    q1 = axis_angle_to_quat(r1)
    q2 = axis_angle_to_quat(r2)
    dot = abs(float(q1 @ q2))
    return 2.0 * math.acos(min(1.0, dot))


def central_difference(f, x, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        e = np.zeros_like(xf)
        e[i] = h
        flat[i] = (f((xf + e).reshape(x.shape)) - f((xf - e).reshape(x.shape))) / (2.0 * h)
    return g


def brute_force_knn(points: np.ndarray, k: int) -> np.ndarray:
    """Exhaustive k-nearest-neighbour indices with ties broken by lower index.

    Distances are squared Euclidean, computed per pair with the same
    elementwise expression the library uses so equality is exact.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        d2 = [float(np.sum((points[i] - points[j]) ** 2)) for j in range(n)]
        order = sorted((j for j in range(n) if j != i), key=lambda j: (d2[j], j))
        out[i] = order[:k]
    return out


def haar_angle_pdf(theta: float) -> float:
    """Density of the rotation angle under the uniform distribution on SO(3)."""
    return (1.0 - math.cos(theta)) / math.pi


def haar_angle_cdf(theta) -> np.ndarray:
    """CDF of the rotation angle under the uniform distribution on SO(3)."""
    theta = np.asarray(theta, dtype=float)
    return (theta - np.sin(theta)) / math.pi


def haar_mean_angle() -> float:
    """Expected rotation angle under Haar measure, by numeric quadrature."""
    from scipy.integrate import quad

    value, _ = quad(lambda t: t * haar_angle_pdf(t), 0.0, math.pi)
    return value


def random_axis_angle(rng: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    """Axis-angle vector with uniform random axis and angle uniform in [lo, hi)."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(lo, hi)
