"""Viewpoint generation around the face and multi-view alignment.

The scanner orbits the face frame on two arcs at the standoff distance d_min
(a longitudinal sweep about y and a latitudinal sweep about x), then the views
are fused: pre-align by the known relative poses, refine each against the
accumulated model with point-to-plane ICP, concatenate, downsample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, concatenate, voxel_downsample
from .errors import EmptyCloud, InvalidParam, NoCorrespondences
from .geometry import (
    RigidTransform,
    axis_angle_to_rotation,
    rotation_about_x,
    rotation_about_y,
)

ARC_MODELS = ("circular", "as_printed")


@dataclass
class ViewpointSet:
    """Scanner poses in the base frame, frontal pose first."""

    poses: list[RigidTransform]
    local_poses: list[RigidTransform]   # same poses expressed in the face frame
    phi_step: float
    d_min: float
    n_per_side: int
    arc_model: str = "circular"

    def __len__(self) -> int:
        return len(self.poses)


def estimate_viewpoints(face_pose: RigidTransform, d_min: float, phi_step: float,
                        n_per_side: int, arc_model: str = "circular") -> ViewpointSet:
    """Viewpoints on two arcs through the frontal pose, 4*n_per_side + 1 total.

    Longitudinal poses rotate about the face y-axis, latitudinal about x, at
    angles {+-phi_step .. +-n*phi_step}. With the circular model every
    translation sits on the sphere of radius d_min and the optical axis passes
    through the face origin; the as_printed longitudinal variant keeps a
    constant z = -d_min instead.
    """
    if d_min <= 0:
        raise InvalidParam("d_min must be positive")
    if not (0 < phi_step < np.pi / 2):
        raise InvalidParam("phi_step must lie in (0, pi/2)")
    if n_per_side < 0:
        raise InvalidParam("n_per_side must be non-negative")
    if arc_model not in ARC_MODELS:
        raise InvalidParam(f"arc_model must be one of {ARC_MODELS}")

    local = [RigidTransform(np.eye(3), np.array([0.0, 0.0, -d_min]))]
    for arc in ("longitudinal", "latitudinal"):
        for i in range(1, n_per_side + 1):
            for sign in (1.0, -1.0):
                phi = sign * i * phi_step
                if arc == "longitudinal":
                    rot = rotation_about_y(phi)
                    z = -d_min if arc_model == "as_printed" else -d_min * np.cos(phi)
                    tr = np.array([-d_min * np.sin(phi), 0.0, z])
                else:
                    rot = rotation_about_x(phi)
                    tr = np.array([0.0, d_min * np.sin(phi), -d_min * np.cos(phi)])
                local.append(RigidTransform(rot, tr))
    poses = [face_pose.compose(t) for t in local]
    return ViewpointSet(poses, local, phi_step, d_min, n_per_side, arc_model)


def relative_viewpoint_transform(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Pose of frame b expressed in frame a: inv(a) o b."""
    return a.invert().compose(b)


@dataclass
class IcpResult:
    transform: RigidTransform
    rmse: float
    iterations: int
    converged: bool
    rmse_history: list = field(default_factory=list)


def _plane_rmse(src: np.ndarray, tree: cKDTree, tgt_pos: np.ndarray, tgt_nrm: np.ndarray,
                gate: float | None):
    dist, j = tree.query(src)
    if gate is not None:
        keep = dist <= gate
        if not keep.any():
            raise NoCorrespondences(f"gate {gate:.4g} m rejected all pairs")
    else:
        keep = np.ones(len(src), dtype=bool)
    p = src[keep]
    q = tgt_pos[j[keep]]
    n = tgt_nrm[j[keep]]
    b = np.einsum("ij,ij->i", p - q, n)
    return float(np.sqrt(np.mean(b * b))), p, q, n, b


def icp_point_to_plane(source: PointCloud, target: PointCloud,
                       init: RigidTransform | None = None, max_iter: int = 50,
                       tol: float = 1e-10, gate: float | None = None) -> IcpResult:
    """Point-to-plane ICP aligning source onto target (target must carry normals).

    Each iteration pairs transformed source points with their nearest target
    point (optionally distance-gated), linearizes the rotation around the
    current estimate and solves the 6x6 normal equations for the twist
    [omega, t]. The update is backtracked (halved) until the freshly
    re-evaluated objective does not increase, so the recorded rmse history is
    non-increasing. Rank-deficient systems fall back to the pseudo-inverse.

    Returns an IcpResult whose transform maps source coordinates into the
    target frame.
    """
    if len(source) == 0 or len(target) == 0:
        raise EmptyCloud("ICP needs non-empty clouds")
    if not target.has_normals:
        raise ValueError("target cloud must have normals for point-to-plane ICP")
    t = init if init is not None else RigidTransform.identity()
    tree = target.kdtree()
    tgt_pos, tgt_nrm = target.positions, target.normals
    src0 = source.positions

    rmse, p, q, n, b = _plane_rmse(t.apply(src0), tree, tgt_pos, tgt_nrm, gate)
    history = [rmse]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        a = np.hstack([np.cross(p, n), n])
        ata = a.T @ a
        atb = a.T @ b
        if np.linalg.cond(ata) > 1e12:
            x = -np.linalg.pinv(ata) @ atb
        else:
            x = -np.linalg.solve(ata, atb)

        accepted = None
        step = 1.0
        for _ in range(12):
            rot = axis_angle_to_rotation(step * x[:3])
            cand = RigidTransform(rot @ t.rotation, rot @ t.translation + step * x[3:])
            cand_eval = _plane_rmse(cand.apply(src0), tree, tgt_pos, tgt_nrm, gate)
            if cand_eval[0] <= rmse + 1e-15:
                accepted = (cand, cand_eval)
                break
            step *= 0.5
        if accepted is None:
            converged = True       # no step improves the objective
            break
        t, (new_rmse, p, q, n, b) = accepted
        history.append(new_rmse)
        if new_rmse <= 1e-12 or abs(rmse - new_rmse) <= tol * max(rmse, 1e-12):
            rmse = new_rmse
            converged = True
            break
        rmse = new_rmse
    return IcpResult(t, rmse, iterations, converged, history)


def merge_views(clouds: list[PointCloud], poses, leaf: float,
                max_iter: int = 30, gate_multiplier: float = 10.0,
                icp_log: list | None = None) -> PointCloud:
    """Fuse per-view clouds into one model in the first view's frame.

    `poses` is a ViewpointSet or a plain list of base-frame view poses, one
    per cloud. Every cloud after the first is pre-aligned by its known pose
    relative to view 0, ICP-refined against the accumulated model (pairs
    farther apart than gate_multiplier * leaf are ignored), concatenated, and
    the result voxel-downsampled at `leaf`. Pass a list as icp_log to collect
    the per-pair IcpResults.
    """
    pose_list = list(poses.poses) if isinstance(poses, ViewpointSet) else list(poses)
    if len(clouds) != len(pose_list):
        raise ValueError(f"{len(clouds)} clouds but {len(pose_list)} poses")
    if not clouds:
        raise EmptyCloud("no views to merge")
    for c in clouds:
        if not c.has_normals:
            raise ValueError("every view needs normals before merging")

    parts = [clouds[0]]
    base_inv = pose_list[0].invert()
    for i in range(1, len(clouds)):
        rel = base_inv.compose(pose_list[i])
        pre = clouds[i].transformed(rel)
        model = concatenate(parts)
        res = icp_point_to_plane(pre, model, max_iter=max_iter,
                                 gate=gate_multiplier * leaf)
        if icp_log is not None:
            icp_log.append(res)
        parts.append(pre.transformed(res.transform))
    merged = voxel_downsample(concatenate(parts), leaf)
    merged.frame = "view0"
    return merged
