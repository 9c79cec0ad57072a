"""Affine camera estimation, projection, pose angles and POSIT.

Image coordinates are pixels with the origin top-left and y pointing down.
Model space is right-handed with y up and the face looking along +z, so a
frontal camera flips the y axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateConfigurationError,
    DimensionError,
    InsufficientPointsError,
    ParameterError,
)

_FLIP_Y = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True, eq=False)
class AffineCamera:
    """3x4 homogeneous affine projection; the last row is always ``[0, 0, 0, 1]``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape == (2, 4):
            m = np.vstack([m, [0.0, 0.0, 0.0, 1.0]])
        if m.shape != (3, 4):
            raise DimensionError(f"affine camera must be 3x4, got {m.shape}")
        if not np.array_equal(m[2], [0.0, 0.0, 0.0, 1.0]):
            raise ParameterError("third row of an affine camera must be [0, 0, 0, 1]")
        if not np.all(np.isfinite(m)):
            raise ParameterError("camera matrix has non-finite entries")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def linear(self):
        """The 2x3 linear part."""
        return self.matrix[:2, :3]

    @property
    def translation(self):
        return self.matrix[:2, 3]

    def project(self, points):
        """Project an (N, 3) array (or a single 3-vector) to pixels."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.translation

    def view_direction(self):
        """Unit vector in model space pointing from the face towards the camera."""
        d = -np.cross(self.linear[0], self.linear[1])
        n = np.linalg.norm(d)
        if n == 0:
            raise DegenerateConfigurationError("camera linear part is rank deficient", rank=1)
        return d / n


@dataclass(frozen=True)
class PoseAngles:
    """Intrinsic yaw (about y), pitch (about x), roll (about z), in degrees."""

    yaw: float
    pitch: float
    roll: float


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """Homogeneous uniform-scale + translation transform (3x3 in 2D, 4x4 in 3D)."""

    matrix: np.ndarray

    @property
    def scale(self):
        return float(self.matrix[0, 0])

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        d = self.matrix.shape[0] - 1
        return pts @ self.matrix[:d, :d].T + self.matrix[:d, d]

    def inverse(self):
        return SimilarityTransform(np.linalg.inv(self.matrix))


def _normalize(points, dim):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise DimensionError(f"expected an (N, {dim}) point array, got {pts.shape}")
    if len(pts) < 2:
        raise InsufficientPointsError(f"need at least 2 points to normalize, got {len(pts)}")
    centroid = pts.mean(axis=0)
    # second pass removes the rounding left by a large offset
    centroid = centroid + (pts - centroid).mean(axis=0)
    centred = pts - centroid
    rms = np.sqrt(np.mean(np.sum(centred ** 2, axis=1)))
    if not rms > 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(dim) / rms
    T = np.eye(dim + 1)
    T[:dim, :dim] *= s
    T[:dim, dim] = -s * centroid
    out = centred * s
    return out - out.mean(axis=0), SimilarityTransform(T)


def normalize_2d(points):
    """Centre 2D points and scale them to an RMS distance of sqrt(2)."""
    return _normalize(points, 2)


def normalize_3d(points):
    """Centre 3D points and scale them to an RMS distance of sqrt(3)."""
    return _normalize(points, 3)


def estimate_affine_camera(image_points, model_points):
    """Gold Standard affine camera from >= 4 2D-3D correspondences.

    Both point sets are similarity-normalized, the two camera rows are solved
    by QR least squares on the shared N x 4 design matrix, and the result is
    denormalized as ``U^-1 C~ W``.
    """
    x = np.asarray(image_points, dtype=np.float64)
    X = np.asarray(model_points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2 or X.ndim != 2 or X.shape[1] != 3:
        raise DimensionError("expected (N, 2) image points and (N, 3) model points")
    if len(x) != len(X):
        raise DimensionError(f"{len(x)} image points vs {len(X)} model points")
    if len(x) < 4:
        raise InsufficientPointsError(f"insufficient-points: need >= 4 correspondences, got {len(x)}")
    xn, U = normalize_2d(x)
    Xn, W = normalize_3d(X)
    A = np.hstack([Xn, np.ones((len(Xn), 1))])
    q, r = np.linalg.qr(A)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > 1e-10 * max(diag.max(), 1.0)))
    if rank < 4:
        raise DegenerateConfigurationError("model points are coplanar or collinear", rank=rank)
    rows = np.linalg.solve(r, q.T @ xn)  # 4 x 2
    Cn = np.vstack([rows.T, [0.0, 0.0, 0.0, 1.0]])
    C = np.linalg.inv(U.matrix) @ Cn @ W.matrix
    C[2] = [0.0, 0.0, 0.0, 1.0]
    return AffineCamera(C)


def project(camera, point):
    return camera.project(point)


def reprojection_rmse(camera, image_points, model_points):
    r = camera.project(model_points) - np.asarray(image_points, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(r ** 2, axis=1))))


def rotation_matrix(yaw, pitch, roll):
    """R = Ry(yaw) @ Rx(pitch) @ Rz(roll), angles in degrees."""
    y, p, r = np.deg2rad([yaw, pitch, roll])
    Ry = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
    Rx = np.array([[1, 0, 0], [0, np.cos(p), -np.sin(p)], [0, np.sin(p), np.cos(p)]])
    Rz = np.array([[np.cos(r), -np.sin(r), 0], [np.sin(r), np.cos(r), 0], [0, 0, 1]])
    return Ry @ Rx @ Rz


def rotation_to_angles(R):
    """Inverse of :func:`rotation_matrix`."""
    R = np.asarray(R, dtype=np.float64)
    pitch = np.arcsin(np.clip(-R[1, 2], -1.0, 1.0))
    if abs(R[1, 2]) < 1.0 - 1e-12:
        yaw = np.arctan2(R[0, 2], R[2, 2])
        roll = np.arctan2(R[1, 0], R[1, 1])
    else:  # gimbal lock, fold everything into yaw
        yaw = np.arctan2(-R[2, 0], R[0, 0])
        roll = 0.0
    return PoseAngles(*(float(v) for v in np.rad2deg([yaw, pitch, roll])))


def camera_from_pose(yaw=0.0, pitch=0.0, roll=0.0, scale=1.0, tx=0.0, ty=0.0, image_y_down=True):
    """Scaled-orthographic camera for a head rotated by the given angles."""
    R = rotation_matrix(yaw, pitch, roll)
    P = scale * R[:2]
    if image_y_down:
        P[1] = -P[1]
    return AffineCamera(np.vstack([np.hstack([P, [[tx], [ty]]]), [0, 0, 0, 1]]))


def extract_pose_angles(camera, image_y_down=True):
    """Head rotation implied by an affine camera.

    The two linear rows are orthonormalized (Gram-Schmidt), completed by their
    cross product and decomposed as yaw-pitch-roll. With ``image_y_down`` the
    second row is negated first, undoing the pixel-axis flip.
    """
    P = np.array(camera.linear, dtype=np.float64)
    if image_y_down:
        P[1] = -P[1]
    if np.linalg.matrix_rank(P, tol=1e-12 * max(np.abs(P).max(), 1e-300)) < 2:
        raise DegenerateConfigurationError("camera linear part is rank deficient",
                                           rank=int(np.linalg.matrix_rank(P)))
    r1 = P[0] / np.linalg.norm(P[0])
    r2 = P[1] - (P[1] @ r1) * r1
    r2 /= np.linalg.norm(r2)
    return rotation_to_angles(np.vstack([r1, r2, np.cross(r1, r2)]))


def _nearest_rotation(M):
    u, _, vt = np.linalg.svd(M)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] = -u[:, -1]
        R = u @ vt
    return R


def estimate_pose_posit(image_points, model_points, focal_length, principal_point=(0.0, 0.0),
                        tol=1e-6, max_iter=100):
    """POSIT (DeMenthon & Davis) pose from >= 4 non-coplanar correspondences.

    The first model point is the reference point. Image points are in pixels;
    the camera frame has x right, y down, z forward. Returns ``(R, t)`` with
    ``R @ X + t`` the camera-frame coordinates of model point ``X``.
    """
    x = np.asarray(image_points, dtype=np.float64) - np.asarray(principal_point, dtype=np.float64)
    X = np.asarray(model_points, dtype=np.float64)
    if focal_length <= 0:
        raise ParameterError("focal_length must be positive")
    if x.shape != (len(X), 2) or X.ndim != 2 or X.shape[1] != 3:
        raise DimensionError("expected matching (N, 2) image and (N, 3) model points")
    if len(X) < 4:
        raise InsufficientPointsError(f"insufficient-points: POSIT needs >= 4 points, got {len(X)}")
    A = X[1:] - X[0]
    rank = np.linalg.matrix_rank(A, tol=1e-9 * max(np.abs(A).max(), 1e-300))
    if rank < 3:
        raise DegenerateConfigurationError("model points are coplanar", rank=int(rank))
    B = np.linalg.pinv(A)
    eps = np.zeros(len(A))
    prev = None
    for _ in range(max_iter):
        xs = x[1:, 0] * (1.0 + eps) - x[0, 0]
        ys = x[1:, 1] * (1.0 + eps) - x[0, 1]
        I = B @ xs
        J = B @ ys
        ni, nj = np.linalg.norm(I), np.linalg.norm(J)
        if ni == 0 or nj == 0:
            raise DegenerateConfigurationError("image points collapse to a line", rank=1)
        s = np.sqrt(ni * nj)
        i, j = I / ni, J / nj
        k = np.cross(i, j)
        k /= np.linalg.norm(k)
        tz = focal_length / s
        R = _nearest_rotation(np.vstack([i, j, k]))
        t = np.array([x[0, 0] / s, x[0, 1] / s, tz])
        eps = A @ R[2] / tz
        if prev is not None:
            delta = max(np.abs(R - prev[0]).max(), np.abs(t - prev[1]).max() / max(tz, 1.0))
            if delta < tol:
                return R, t
        prev = (R, t)
    raise ConvergenceError(f"POSIT did not converge in {max_iter} iterations", last_iterate=prev)


def posit_pose_angles(R):
    """Head yaw/pitch/roll from a POSIT rotation (camera y down, z forward)."""
    return rotation_to_angles(_FLIP_Y @ R)
