"""Tracking-by-detection convoy toolkit.

Detection geometry, reference training objectives, a frequency-domain
periodic-motion tracker, a bounding-box visual-servoing controller, a
deterministic convoy simulator, and a detector evaluation harness.
"""

from .geometry import (
    Annotation,
    BoundingBox,
    IntensityGrid,
    box_area,
    box_center,
    iou,
    iou_gradient,
)
from .losses import (
    LossWeights,
    PredictionVector,
    numeric_gradient,
    rrolo_gradient,
    rrolo_loss,
    vgg_gradient,
    vgg_loss,
)
from .mdpm import (
    MdpmConfig,
    MdpmTracker,
    MotionDirection,
    SpectralDetection,
    SubWindowGrid,
    detect_periodic_target,
    dtft_amplitude,
    enumerate_directions,
    hmm_prune,
)
from .servo import (
    ControlCommand,
    PidState,
    ServoConfig,
    ServoState,
    compute_errors,
    pid_step,
    servo_update,
)
from .sim import (
    CameraModel,
    ConvoyConfig,
    DetectorNoise,
    FootageScene,
    Pose,
    SimTrace,
    TargetModel,
    TrajectoryScript,
    leader_trajectory,
    noisy_detector,
    project_bbox,
    render_trace_frames,
    run_convoy,
    step_follower,
    trace_annotations,
)
from .evaluation import (
    FrameResult,
    MetricsReport,
    TrackStats,
    classify_frames,
    histogram_report,
    measure_fps,
    metrics_summary,
    select_threshold,
    track_statistics,
)

__version__ = "0.1.0"
