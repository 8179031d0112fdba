"""Rigid-body geometry: frames, axis-angle conversions, pinhole projection.

Conventions: rotation matrices act on column vectors, transforms map local
coordinates into the parent frame (x_parent = R @ x + t), angles are radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateInput, DegenerateNormal

# A Vec3 is a plain float64 ndarray of shape (3,).
Vec3 = np.ndarray

X_AXIS = np.array([1.0, 0.0, 0.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([float(x), float(y), float(z)])


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize v; raises DegenerateInput on (near-)zero norm."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DegenerateInput("cannot normalize a zero-length vector")
    return v / n


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix of v."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass
class RigidTransform:
    """SO(3) rotation plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other's frame embedding: (self o other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def invert(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (3,) or (N, 3) into the parent frame."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def apply_direction(self, dirs: np.ndarray) -> np.ndarray:
        """Rotate direction vectors without translating."""
        d = np.asarray(dirs, dtype=float)
        if d.ndim == 1:
            return self.rotation @ d
        return d @ self.rotation.T

    def orthonormality_error(self) -> float:
        return float(np.abs(self.rotation.T @ self.rotation - np.eye(3)).max())


@dataclass
class PoseVector6:
    """Position stacked with an axis-angle orientation (the robot pose format)."""

    position: np.ndarray
    axis_angle: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.axis_angle = np.asarray(self.axis_angle, dtype=float).reshape(3)

    @classmethod
    def from_transform(cls, t: RigidTransform) -> "PoseVector6":
        return cls(t.translation.copy(), rotation_to_axis_angle(t.rotation))

    def to_transform(self) -> RigidTransform:
        return RigidTransform(axis_angle_to_rotation(self.axis_angle), self.position.copy())

    def canonicalized(self) -> "PoseVector6":
        """Fold the rotation magnitude into [0, pi], flipping the axis as needed."""
        theta = np.linalg.norm(self.axis_angle)
        if theta <= np.pi or theta < 1e-12:
            return PoseVector6(self.position.copy(), self.axis_angle.copy())
        axis = self.axis_angle / theta
        theta = np.fmod(theta, 2.0 * np.pi)
        if theta > np.pi:
            theta -= 2.0 * np.pi
        return PoseVector6(self.position.copy(), axis * theta)


@dataclass
class CameraIntrinsics:
    """Pinhole camera parameters, pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


def face_pose_from_eyes(d_l: Vec3, d_r: Vec3) -> RigidTransform:
    """Face frame from the two detected eye positions in camera coordinates.

    Origin is the eye midpoint; x points from the origin through the right
    eye, y completes [0,0,1] x x, z = x cross y.
    """
    d_l = np.asarray(d_l, dtype=float)
    d_r = np.asarray(d_r, dtype=float)
    baseline = d_r - d_l
    if np.linalg.norm(baseline) < 1e-6:
        raise DegenerateInput("eye positions coincide")
    origin = 0.5 * (d_l + d_r)
    alpha = unit(d_r - origin)
    c = np.cross(Z_AXIS, alpha)
    if np.linalg.norm(c) < 1e-9:
        raise DegenerateInput("eye baseline is parallel to the optical axis")
    beta = c / np.linalg.norm(c)
    gamma = unit(np.cross(alpha, beta))
    return RigidTransform(np.column_stack([alpha, beta, gamma]), origin)


def rotation_from_normal(eta: Vec3, reference: Vec3 = Y_AXIS) -> np.ndarray:
    """Orientation whose z-axis is the unit surface normal eta.

    x = reference cross eta (normalized), y = eta cross x. Raises
    DegenerateNormal when eta is parallel to the reference axis; callers may
    retry with Z_AXIS as the fallback crossing vector.
    """
    eta = np.asarray(eta, dtype=float)
    n = np.linalg.norm(eta)
    if abs(n - 1.0) > 1e-6:
        raise ValueError("eta must be a unit vector")
    gamma = eta / n
    c = np.cross(np.asarray(reference, dtype=float), gamma)
    cn = np.linalg.norm(c)
    if cn < 1e-6:
        raise DegenerateNormal("normal is parallel to the crossing reference axis")
    alpha = c / cn
    beta = unit(np.cross(gamma, alpha))
    return np.column_stack([alpha, beta, gamma])


def rotation_to_axis_angle(rotation: np.ndarray) -> np.ndarray:
    """Axis-angle vector nu = theta * u_hat of a rotation matrix, theta in [0, pi].

    The axis comes from the antisymmetric part u = vee(R - R^T), whose norm is
    2 sin(theta). Near theta = pi that part vanishes, so the axis is recovered
    from the dominant column of (R + I)/2 = u u^T instead.
    """
    r = np.asarray(rotation, dtype=float)
    u = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    n = np.linalg.norm(u)
    cos_theta = 0.5 * (np.trace(r) - 1.0)
    if n < 1e-6 and cos_theta < 0.0:
        # theta within ~5e-7 of pi: the symmetric part of (R + I)/2 is
        # u u^T + O((pi - theta)^2); symmetrizing first drops the residual
        # (pi - theta)/2 * hat(u) term that would otherwise tilt the axis.
        m = 0.25 * (r + r.T) + 0.5 * np.eye(3)
        j = int(np.argmax(np.diag(m)))
        axis = m[:, j]
        axis = axis / np.linalg.norm(axis)
        if n > 1e-12:
            if np.dot(axis, u) < 0.0:
                axis = -axis
        elif axis[np.argmax(np.abs(axis))] < 0.0:
            axis = -axis
        theta = np.pi - np.arcsin(min(0.5 * n, 1.0))
        return theta * axis
    if n < 1e-12:
        return np.zeros(3)
    theta = np.arctan2(0.5 * n, cos_theta)
    return theta * (u / n)


def axis_angle_to_rotation(nu: np.ndarray) -> np.ndarray:
    """Rodrigues' formula; identity for ||nu|| < 1e-12."""
    nu = np.asarray(nu, dtype=float)
    theta = np.linalg.norm(nu)
    if theta < 1e-12:
        return np.eye(3)
    k = hat(nu / theta)
    return np.eye(3) + np.sin(theta) * k + 2.0 * np.sin(0.5 * theta) ** 2 * (k @ k)


def rotation_about_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_about_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def interpolate_rotation(r_from: np.ndarray, r_to: np.ndarray, fraction: float) -> np.ndarray:
    """Spherical interpolation between two rotations along the geodesic."""
    if fraction >= 1.0:
        return np.asarray(r_to, dtype=float).copy()
    if fraction <= 0.0:
        return np.asarray(r_from, dtype=float).copy()
    rel = rotation_to_axis_angle(np.asarray(r_from).T @ np.asarray(r_to))
    return np.asarray(r_from) @ axis_angle_to_rotation(fraction * rel)


def project_point(x: Vec3, intrinsics: CameraIntrinsics, extrinsics: RigidTransform) -> tuple[float, float]:
    """Pixel coordinates of a world point; extrinsics maps world into camera.

    Raises BehindCamera when camera-frame depth <= 1e-6.
    """
    p = extrinsics.apply(np.asarray(x, dtype=float))
    if p[2] <= 1e-6:
        raise BehindCamera(f"depth {p[2]:.3g} is not in front of the camera")
    u = intrinsics.fx * p[0] / p[2] + intrinsics.cx
    v = intrinsics.fy * p[1] / p[2] + intrinsics.cy
    return float(u), float(v)


def project_points(points: np.ndarray, intrinsics: CameraIntrinsics,
                   extrinsics: RigidTransform) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection. Returns (pixels (N,2), in_front mask (N,)).

    Points behind the camera get a False mask entry instead of an exception.
    """
    p = extrinsics.apply(np.asarray(points, dtype=float))
    in_front = p[:, 2] > 1e-6
    z = np.where(in_front, p[:, 2], 1.0)
    pix = np.empty((len(p), 2))
    pix[:, 0] = intrinsics.fx * p[:, 0] / z + intrinsics.cx
    pix[:, 1] = intrinsics.fy * p[:, 1] / z + intrinsics.cy
    return pix, in_front
