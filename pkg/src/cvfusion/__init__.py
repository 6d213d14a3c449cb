"""Camera-LiDAR fusion detector on a small numpy autodiff core."""
from .cross_view import CameraVoxelGrid, OffsetField, auto_calibrated_project, bev_camera_compress
from .data.config import RunConfig, load_config, parse_config
from .data.synthetic import SceneSample, generate_synthetic_scene
from .evaluation import Detection, average_precision_41pt, distance_binned_eval, evaluate_frames
from .fusion import gated_fuse
from .geometry import Box3D, CalibrationSet, bev_iou, iou_3d, project_to_image
from .interp import interp_gather, interp_weights
from .tensor import Tensor, backward, record, sgd_step
from .voxel import VoxelGridSpec, voxelize

__version__ = "0.1.0"
