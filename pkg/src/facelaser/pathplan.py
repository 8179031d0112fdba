"""Coverage path planning over segmented facial point clouds.

A region cloud (expressed in the face frame, z toward the scanner) is cut
into strips across one axis and swept along the other in alternating
directions, producing an S-shaped tool path. Strip widths adapt to surface
obliquity: a strip whose mean normal tilts away from the frontal axis by o_x
is narrowed to diameter * cos(o_x), so the path spacing measured on the
slanted skin stays close to the laser spot diameter instead of stretching by
1 / cos(o_x). Within a strip, points are grouped into diameter-wide windows
along the sweep axis and each window is condensed to a patch: mean position
chi, renormalized mean normal eta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .errors import DegenerateNormal, EmptySegment, InvalidParam
from .geometry import (
    RigidTransform,
    Vec3,
    Y_AXIS,
    Z_AXIS,
    rotation_from_normal,
)

ORIENTATIONS = ("auto", "horizontal", "vertical")

# Obliquity can push cos(o_x) arbitrarily close to zero on grazing strips;
# never let a strip get thinner than this fraction of the spot diameter.
MIN_STRIP_FRACTION = 0.1


@dataclass
class PlannerConfig:
    laser_diameter: float               # spot diameter on skin [m]
    pulse_rate: float                   # laser pulse frequency [Hz]
    orientation: str = "auto"
    obliquity_correction: bool = True

    def __post_init__(self):
        if self.laser_diameter <= 0:
            raise InvalidParam("laser_diameter must be positive")
        if self.pulse_rate <= 0:
            raise InvalidParam("pulse_rate must be positive")
        if self.orientation not in ORIENTATIONS:
            raise InvalidParam(f"orientation must be one of {ORIENTATIONS}")

    @property
    def max_speed(self) -> float:
        """Fastest tool speed that still lands one pulse per diameter [m/s]."""
        return self.laser_diameter * self.pulse_rate


@dataclass
class Strip:
    """One bin across the segment: half-open interval [lo, hi) on the bin axis."""

    index: int
    lo: float
    hi: float
    points: np.ndarray                  # indices into the segment cloud
    eta_s: Vec3                         # unit mean normal of the member points

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class PathPoint:
    chi: Vec3                           # patch centroid [m]
    eta: Vec3                           # unit patch normal


@dataclass
class SegmentPath:
    label: str
    points: list[PathPoint]
    strip_indices: np.ndarray           # per path point, the emitting strip
    orientation: str                    # resolved: "horizontal" or "vertical"
    d_s_used: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.chi for p in self.points], dtype=float).reshape(-1, 3)

    @property
    def normals(self) -> np.ndarray:
        return np.array([p.eta for p in self.points], dtype=float).reshape(-1, 3)


def strip_obliquity(eta_s: Vec3, bin_axis: Vec3, gamma_c: Vec3 = Z_AXIS) -> float:
    """Tilt of a strip normal away from the frontal axis, in [0, pi/2).

    Measured in the plane spanned by the bin axis and the frontal axis
    gamma_c: atan2(|eta . bin_axis|, |eta . gamma_c|). Tilt about the sweep
    axis itself does not change the strip footprint, so it is ignored.
    """
    away = abs(float(np.dot(eta_s, bin_axis)))
    toward = abs(float(np.dot(eta_s, gamma_c)))
    return min(float(np.arctan2(away, toward)), np.pi / 2 - 1e-9)


def _mean_normal(normals: np.ndarray, fallback: Vec3) -> Vec3:
    m = normals.mean(axis=0)
    n = np.linalg.norm(m)
    if n < 1e-12:       # opposing normals cancelled out
        return np.asarray(fallback, dtype=float)
    return m / n


def bin_strips(cloud: PointCloud, diameter: float, axis: int,
               gamma_c: Vec3 = Z_AXIS, correction: bool = True) -> list[Strip]:
    """Cut the cloud into adaptive strips along coordinate `axis` (0=x, 1=y).

    The cursor walks from the lowest to the highest coordinate. Each step
    seeds a diameter-wide window, reads the mean normal of the seeded points,
    narrows the window to diameter * cos(obliquity) when correction is on,
    then commits the points inside the narrowed window as one strip and
    advances by its width. Empty seed windows advance by a full diameter
    without emitting.
    """
    if len(cloud) == 0:
        raise EmptySegment("cannot bin an empty segment")
    if not cloud.has_normals:
        raise ValueError("strip binning needs per-point normals")
    if diameter <= 0:
        raise InvalidParam("diameter must be positive")
    if axis not in (0, 1):
        raise InvalidParam("bin axis must be 0 (x) or 1 (y)")

    bin_axis = np.eye(3)[axis]
    coord = cloud.positions[:, axis]
    hi_all = float(coord.max())
    cursor = float(coord.min())
    strips: list[Strip] = []
    index = 0
    while cursor <= hi_all + 1e-12:
        seed = (coord >= cursor) & (coord < cursor + diameter)
        if not seed.any():
            cursor += diameter
            continue
        eta_seed = _mean_normal(cloud.normals[seed], gamma_c)
        width = diameter
        if correction:
            o_x = strip_obliquity(eta_seed, bin_axis, gamma_c)
            width = max(diameter * np.cos(o_x), MIN_STRIP_FRACTION * diameter)
        member = (coord >= cursor) & (coord < cursor + width)
        if member.any():
            eta_s = _mean_normal(cloud.normals[member], gamma_c)
            strips.append(Strip(index, cursor, cursor + width,
                                np.flatnonzero(member), eta_s))
            index += 1
        cursor += width
    if not strips:
        raise EmptySegment("binning produced no strips")
    return strips


def sweep_patch(cloud: PointCloud, strip: Strip, sweep_axis: int,
                step: float) -> list[PathPoint]:
    """Condense one strip into patches along the sweep axis, low to high.

    The strip's footprint is divided into L + 1 contiguous windows of width
    `step` centered on x_min + k * step; every member point joins the window
    with the nearest center. Occupied windows yield one PathPoint each.
    """
    pos = cloud.positions[strip.points]
    nrm = cloud.normals[strip.points]
    coords = pos[:, sweep_axis]
    x_min = float(coords.min())
    span = float(coords.max()) - x_min
    last = int(span / step)
    cells = np.clip(np.round((coords - x_min) / step).astype(int), 0, last)
    out: list[PathPoint] = []
    for k in range(last + 1):
        sel = cells == k
        if not sel.any():
            continue
        out.append(PathPoint(pos[sel].mean(axis=0),
                             _mean_normal(nrm[sel], strip.eta_s)))
    return out


def plan_segment(cloud: PointCloud, config: PlannerConfig, label: str = "segment",
                 gamma_c: Vec3 = Z_AXIS) -> SegmentPath:
    """Plan an S-shaped coverage path over one region cloud.

    Orientation "horizontal" bins along y and sweeps along x; "vertical" is
    the transpose; "auto" sweeps along the larger planar extent so rows are
    long and turns are few. Consecutive emitted rows alternate direction.
    """
    if len(cloud) == 0:
        raise EmptySegment(f"region '{label}' has no points")
    orientation = config.orientation
    if orientation == "auto":
        lo, hi = cloud.bounds()
        ext = hi - lo
        orientation = "horizontal" if ext[0] >= ext[1] else "vertical"
    bin_axis, sweep_axis = (1, 0) if orientation == "horizontal" else (0, 1)

    strips = bin_strips(cloud, config.laser_diameter, bin_axis, gamma_c,
                        config.obliquity_correction)
    points: list[PathPoint] = []
    strip_of: list[int] = []
    widths: list[float] = []
    emitted = 0
    for strip in strips:
        row = sweep_patch(cloud, strip, sweep_axis, config.laser_diameter)
        if not row:
            continue
        if emitted % 2 == 1:
            row.reverse()
        points.extend(row)
        strip_of.extend([strip.index] * len(row))
        widths.append(strip.width)
        emitted += 1
    if not points:
        raise EmptySegment(f"region '{label}' produced no path points")
    return SegmentPath(label, points, np.asarray(strip_of, dtype=int),
                       orientation, widths)


def plan_regions(regions: dict, config: PlannerConfig,
                 gamma_c: Vec3 = Z_AXIS) -> dict:
    """plan_segment over a {label: cloud} mapping; labels keep dict order."""
    return {label: plan_segment(cloud, config, label, gamma_c)
            for label, cloud in regions.items()}


def path_to_poses(path: SegmentPath, standoff: float) -> list[RigidTransform]:
    """Effector poses hovering `standoff` above each patch along its normal.

    The tool frame's z-axis is the outward patch normal (the beam leaves
    along -z). The in-plane reference defaults to the face y-axis and falls
    back to z for patches whose normal is parallel to y.
    """
    if standoff < 0:
        raise InvalidParam("standoff must be non-negative")
    poses = []
    for i, pt in enumerate(path.points):
        try:
            rot = rotation_from_normal(pt.eta, Y_AXIS)
        except DegenerateNormal:
            try:
                rot = rotation_from_normal(pt.eta, Z_AXIS)
            except DegenerateNormal as exc:
                raise DegenerateNormal(
                    f"path point {i} of '{path.label}': {exc}") from exc
        poses.append(RigidTransform(rot, pt.chi + standoff * pt.eta))
    return poses
