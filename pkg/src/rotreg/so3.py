"""Rotation math on SO(3) and its Lie algebra so(3).

Conventions:
- An axis-angle vector is a plain length-3 float array whose direction is the
  rotation axis and whose Euclidean norm is the rotation angle in radians.
- Rotation matrices act on column vectors: ``p_world = R @ p_object``.
- All angles are radians; degrees appear only at reporting boundaries.

All functions are pure and operate on immutable inputs, so they are safe to
call concurrently.
"""

from __future__ import annotations

import math

import numpy as np

# Below this angle the closed-form coefficients sin(t)/t and (1-cos(t))/t^2
# are evaluated by two-term Taylor series; at 1e-4 the truncation error of the
# series is below double-precision roundoff.
SMALL_ANGLE = 1e-4

# Width of the symmetric-part branch of log_map around the angle pi.
_NEAR_PI = 1e-6

# Distance from the endpoints {0, pi} of the geodesic distance inside which
# the analytic gradient is replaced by central finite differences.
_GRAD_ENDPOINT_MARGIN = 1e-5
_GRAD_FD_STEP = 1e-6

_ORTHO_TOL = 1e-6


def _as_vec3(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {r.shape}")
    return r


def _as_mat3(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    return m


def skew(r) -> np.ndarray:
    """Return the skew-symmetric matrix of a 3-vector.

    ``skew(r) @ v`` equals the cross product ``r x v`` for every ``v``.
    The result is exactly antisymmetric by construction.
    """
    r = _as_vec3(r)
    return np.array(
        [
            [0.0, -r[2], r[1]],
            [r[2], 0.0, -r[0]],
            [-r[1], r[0], 0.0],
        ]
    )


def _vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` for an (assumed) antisymmetric matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _exp_coefficients(theta: float) -> tuple[float, float]:
    """Coefficients ``sin(t)/t`` and ``(1-cos(t))/t^2`` with series fallback."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0
    return math.sin(theta) / theta, (1.0 - math.cos(theta)) / (theta * theta)


def exp_map(r) -> np.ndarray:
    """Exponential map from an axis-angle vector to a rotation matrix.

    Computes ``I + (sin t / t) K + ((1 - cos t) / t^2) K^2`` where ``K`` is
    the skew matrix of ``r`` and ``t`` its norm; small angles use the Taylor
    series of both coefficients. Total function: every finite 3-vector maps
    to a rotation matrix.
    """
    r = _as_vec3(r)
    theta = float(np.linalg.norm(r))
    a, b = _exp_coefficients(theta)
    k = skew(r)
    return np.eye(3) + a * k + b * (k @ k)


def validate_rotation(m, tol: float = _ORTHO_TOL) -> np.ndarray:
    """Return ``m`` as an array after checking it is a rotation matrix.

    Raises ``ValueError`` when orthogonality or the determinant deviates by
    more than ``tol``.
    """
    m = _as_mat3(m)
    defect = np.linalg.norm(m @ m.T - np.eye(3))
    if not defect < tol:
        raise ValueError(f"matrix is not orthogonal within {tol:g} (defect {defect:g})")
    det = np.linalg.det(m)
    if not abs(det - 1.0) < tol:
        raise ValueError(f"matrix determinant {det:g} is not 1 within {tol:g}")
    return m


def rotation_magnitude(m) -> float:
    """Rotation angle ``arccos((trace(R) - 1) / 2)`` of a rotation matrix.

    The arccos argument is clamped to [-1, 1] so float noise in the trace can
    never produce NaN. Result is in [0, pi].
    """
    m = _as_mat3(m)
    c = (float(np.trace(m)) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def _log_near_pi(m: np.ndarray, phi: float) -> np.ndarray:
    # Near pi the antisymmetric part of R vanishes; recover the axis from the
    # symmetric part S = (R + R^T)/2 - cos(phi) I = (1 - cos(phi)) u u^T.
    s = (m + m.T) / 2.0 - math.cos(phi) * np.eye(3)
    i = int(np.argmax(np.diag(s)))
    axis = s[i] / max(math.sqrt(max(s[i, i], 0.0)), 1e-300)
    norm = np.linalg.norm(axis)
    axis = axis / norm if norm > 0 else np.array([1.0, 0.0, 0.0])

    sin_phi_axis = _vee((m - m.T) / 2.0)
    if np.linalg.norm(sin_phi_axis) > 1e-12:
        if float(axis @ sin_phi_axis) < 0.0:
            axis = -axis
    else:
        # phi = pi exactly: both signs are valid, pick the lexicographically
        # non-negative representative.
        for component in axis:
            if component != 0.0:
                if component < 0.0:
                    axis = -axis
                break
    return phi * axis


def log_map(m) -> np.ndarray:
    """Logarithmic map from a rotation matrix to an axis-angle vector.

    The returned vector has norm equal to :func:`rotation_magnitude` of the
    input. Inputs failing the rotation-matrix invariants beyond 1e-6 are
    rejected. Angles within 1e-6 of pi use a symmetric-part axis extraction
    because the standard formula divides by sin(phi).
    """
    m = validate_rotation(m)
    phi = rotation_magnitude(m)
    if phi < SMALL_ANGLE:
        # Series limit of phi / (2 sin phi).
        c = 0.5 * (1.0 + phi * phi / 6.0)
        return c * _vee(m - m.T)
    if phi >= math.pi - _NEAR_PI:
        return _log_near_pi(m, phi)
    r = (phi / (2.0 * math.sin(phi))) * _vee(m - m.T)
    # Pin the norm to phi exactly; the formula matches only up to roundoff.
    norm = float(np.linalg.norm(r))
    if norm > 0.0:
        r *= phi / norm
    return r


def geodesic_loss(r_hat, r) -> float:
    """Geodesic distance between two rotations given as axis-angle vectors.

    Both arguments pass through the exponential map; the result is the
    rotation magnitude of ``exp(r_hat) exp(r)^T`` and lies in [0, pi].
    """
    return rotation_magnitude(exp_map(r_hat) @ exp_map(r).T)


def left_jacobian(r) -> np.ndarray:
    """Left Jacobian of the exponential map at ``r``.

    Satisfies ``d/dt exp(r + t v) = skew(J @ v) @ exp(r)`` at ``t = 0``.
    """
    r = _as_vec3(r)
    theta = float(np.linalg.norm(r))
    k = skew(r)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        b = 0.5 - t2 / 24.0
        c = 1.0 / 6.0 - t2 / 120.0
    else:
        b = (1.0 - math.cos(theta)) / (theta * theta)
        c = (theta - math.sin(theta)) / (theta ** 3)
    return np.eye(3) + b * k + c * (k @ k)


def _geodesic_loss_grad_fd(r_hat: np.ndarray, r: np.ndarray) -> np.ndarray:
    g = np.zeros(3)
    h = _GRAD_FD_STEP
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g[i] = (geodesic_loss(r_hat + e, r) - geodesic_loss(r_hat - e, r)) / (2.0 * h)
    return g


def geodesic_loss_grad(r_hat, r) -> np.ndarray:
    """Gradient of :func:`geodesic_loss` with respect to ``r_hat``.

    Analytic chain rule through the exponential map and arccos: with
    ``B = exp(r_hat) exp(r)^T`` and unit rotation axis ``u`` of ``B``, the
    gradient is ``left_jacobian(r_hat)^T u``. The arccos derivative is
    unbounded at distance 0 and pi, so within 1e-5 of either endpoint the
    value falls back to central finite differences with step 1e-6.
    """
    r_hat = _as_vec3(r_hat)
    r = _as_vec3(r)
    b = exp_map(r_hat) @ exp_map(r).T
    phi = rotation_magnitude(b)
    if phi <= _GRAD_ENDPOINT_MARGIN or phi >= math.pi - _GRAD_ENDPOINT_MARGIN:
        return _geodesic_loss_grad_fd(r_hat, r)
    axis = _vee((b - b.T) / 2.0) / math.sin(phi)
    return left_jacobian(r_hat).T @ axis


def canonicalize(r) -> np.ndarray:
    """Map an axis-angle vector to the equivalent representative with angle <= pi.

    The rotation is unchanged: ``exp_map(canonicalize(r)) == exp_map(r)``.
    """
    r = _as_vec3(r)
    theta = float(np.linalg.norm(r))
    if theta <= math.pi:
        return r.copy()
    wrapped = math.fmod(theta, 2.0 * math.pi)
    if wrapped > math.pi:
        wrapped -= 2.0 * math.pi
    return r * (wrapped / theta)
