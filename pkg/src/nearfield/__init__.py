"""Near-field floor perception for mobile robots.

Three cooperating layers: a laser-stripe watchdog that trips on any cutoff
of the projected line, a light-displacement height estimator built on the
same stripe, and a category/size rule table that turns detections into
motion commands.  A synthetic camera simulator stands in for the physical
rig so the whole stack runs and tests without hardware.
"""

from .datagen import (
    CLASS_NAMES,
    DatagenError,
    DatasetConfig,
    detections_to_events,
    generate_dataset,
    make_starter_assets,
    validate_annotations,
)
from .decision import (
    DEFAULT_TABLE,
    Action,
    ActionTable,
    Command,
    DetectionEvent,
    ObjectCategory,
    SizeClass,
    ZoneLayout,
    aggregate,
    classify_size,
    decide,
    load_action_table,
    perception_to_events,
    resolve_stop_or_reroute,
    severity,
)
from .frameio import iter_frames, read_image, write_image
from .geometry import (
    CalibrationData,
    CalibrationError,
    CameraIntrinsics,
    HeightEstimate,
    RigGeometry,
    StripeObservation,
    displacement_sensitivity,
    estimate_height,
    estimate_homography,
    forward_parallax,
    height_from_parallax,
    load_calibration,
    parallax_angle,
    save_calibration,
)
from .lighting import LIGHTING_MODES, apply_lighting
from .simulator import (
    DEFAULT_SETUP,
    CameraPose,
    GroundTruth,
    Obstacle,
    ObstacleWindow,
    RigSetup,
    SceneSpec,
    SimulationError,
    make_calibration,
    placement_sweep,
    render,
    render_sequence,
)
from .stripe import (
    ContinuityReport,
    Frame,
    Gap,
    HeightReading,
    ObjectEvidence,
    PerceptionEvent,
    PipelineConfig,
    PipelineError,
    RectifyGrid,
    StripePipeline,
    StripeProfile,
    cluster_evidence,
    continuity_check,
    measure_displacement,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionTable",
    "CLASS_NAMES",
    "CalibrationData",
    "CalibrationError",
    "CameraIntrinsics",
    "CameraPose",
    "Command",
    "ContinuityReport",
    "DEFAULT_SETUP",
    "DEFAULT_TABLE",
    "DatagenError",
    "DatasetConfig",
    "DetectionEvent",
    "Frame",
    "Gap",
    "GroundTruth",
    "HeightEstimate",
    "HeightReading",
    "LIGHTING_MODES",
    "ObjectCategory",
    "ObjectEvidence",
    "Obstacle",
    "ObstacleWindow",
    "PerceptionEvent",
    "PipelineConfig",
    "PipelineError",
    "RectifyGrid",
    "RigGeometry",
    "RigSetup",
    "SceneSpec",
    "SimulationError",
    "SizeClass",
    "StripeObservation",
    "StripePipeline",
    "StripeProfile",
    "ZoneLayout",
    "aggregate",
    "apply_lighting",
    "classify_size",
    "cluster_evidence",
    "continuity_check",
    "decide",
    "detections_to_events",
    "displacement_sensitivity",
    "estimate_height",
    "estimate_homography",
    "forward_parallax",
    "generate_dataset",
    "height_from_parallax",
    "iter_frames",
    "load_action_table",
    "load_calibration",
    "make_calibration",
    "make_starter_assets",
    "measure_displacement",
    "parallax_angle",
    "perception_to_events",
    "placement_sweep",
    "read_image",
    "render",
    "render_sequence",
    "resolve_stop_or_reroute",
    "save_calibration",
    "severity",
    "validate_annotations",
    "write_image",
]
