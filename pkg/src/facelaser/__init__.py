"""Uniform laser-shot coverage planning and simulation on facial scans."""

from .errors import (
    AbortedOnSafety,
    BehindCamera,
    ConfigError,
    ContactError,
    DegenerateInput,
    DegenerateNormal,
    EmptyCloud,
    EmptyLog,
    EmptySegment,
    FacelaserError,
    InvalidParam,
    MalformedLandmarks,
    MissingField,
    NoCorrespondences,
    NoSurfaceInRange,
    ParseError,
    TooFewPoints,
)
from .geometry import (
    CameraIntrinsics,
    PoseVector6,
    RigidTransform,
    axis_angle_to_rotation,
    face_pose_from_eyes,
    interpolate_rotation,
    project_point,
    project_points,
    rotation_from_normal,
    rotation_to_axis_angle,
)
from .cloud import (
    PointCloud,
    RayHit,
    SurfacePoint,
    concatenate,
    estimate_normals,
    load_ply,
    raycast,
    save_ply,
    voxel_downsample,
)
from .registration import (
    IcpResult,
    ViewpointSet,
    estimate_viewpoints,
    icp_point_to_plane,
    merge_views,
    relative_viewpoint_transform,
)
from .segmentation import (
    REGION_LABELS,
    FaceLandmarks,
    RegionPolygon,
    SegmentedFace,
    build_region_polygons,
    point_in_polygon,
    points_in_polygon,
    polygon_is_simple,
    segment_face,
)
from .pathplan import (
    PathPoint,
    PlannerConfig,
    SegmentPath,
    Strip,
    bin_strips,
    path_to_poses,
    plan_regions,
    plan_segment,
    strip_obliquity,
    sweep_patch,
)
from .simulator import (
    CoverageReport,
    EffectorState,
    MotionScript,
    PlanarRegion,
    RunResult,
    SensorRig,
    ShotEvent,
    ShotLog,
    SimConfig,
    TrajectorySample,
    coverage_metrics,
    default_shot_region,
    motion_exceeds_deadband,
    repulsive_velocity,
    run_path,
    sensor_fusion,
    step,
    transform_path,
    update_paths_on_motion,
)

__version__ = "0.1.0"
