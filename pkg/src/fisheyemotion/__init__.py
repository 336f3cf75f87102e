"""Moving object detection for fisheye cameras on the unit projection sphere.

Feature correspondences between two calibrated views are lifted to unit
rays and tested against four geometric constraints (epipolar plane,
positive depth, positive height, anti-parallel); the deviations fuse into
a per-cell motion likelihood that is gated, segmented and scored against
synthetic ground truth.
"""

from .camera import (
    CameraIntrinsics,
    OutOfDomainError,
    OutOfImageError,
    OutsideFovError,
    RoadFrame,
    below_horizon,
    horizon_direction,
    load_camera_config,
    project,
    project_many,
    save_camera_config,
    unproject,
    unproject_many,
)
from .constraints import (
    AboveHorizonError,
    CameraPose,
    ConstraintConfig,
    ConstraintDeviations,
    Correspondence,
    DegenerateEpipolarPlaneError,
    EpipolarFrame,
    SkippedFeatureError,
    UndefinedProjectionError,
    adaptive_lambda_p,
    depth_deviation,
    epipolar_deviation,
    epipolar_frame,
    evaluate,
    evaluate_rays,
    fuse,
    height_and_antiparallel,
    project_onto_epipolar_plane,
    road_ray,
    static_camera_deviation,
)
from .pipeline import (
    FlowField,
    LikelihoodGrid,
    MismatchedFramesError,
    PipelineConfig,
    SegmentationResult,
    evaluate_detection,
    evaluate_frame,
    evaluate_frame_points,
    grid_average,
    grid_average_points,
    range_gate,
    saturate_for_render,
    segment,
)
from .simulator import (
    EmptySceneError,
    LabelledCorrespondence,
    ObjectSpec,
    SceneError,
    SceneSpec,
    classify_oracle,
    generate,
    straight_poses,
    triangulate_oracle,
)
from .triangulate import Triangulation, triangulate_many, triangulate_rays

__version__ = "0.1.0"
