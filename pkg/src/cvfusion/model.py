"""The two-stage fusion detector assembled from the pipeline modules, plus a
fixed-rate toy trainer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cross_view import CameraVoxelGrid, CompressParams, OffsetField, auto_calibrated_project, bev_camera_compress, plan_projection
from .data.config import RunConfig
from .data.synthetic import SceneSample
from .detect.anchors import Assignment, assign_targets, make_anchors
from .detect.heads import RefineHeadParams, RpnHeadParams, flatten_rpn, refine_head, rpn_head
from .detect.losses import box_regression_losses, focal_loss_logits, iou_confidence_loss, refinement_loss, rpn_loss
from .detect.nms import nms
from .detect.roi import SetEncoder, roi_grid_camera_pool, roi_lidar_pool, rotated_roi_align
from .evaluation import Detection
from .fusion import FusionOutput, GatedFusionParams, gated_fuse
from .imaging import ImageStemParams, image_stem, image_to_tensor
from .geometry import Box3D, decode_residuals, encode_residuals, iou_matrix
from .tensor import Tensor
from .voxel import BackboneParams, BevFeatureMap, BevGrid, VoxelEncoderParams, bev_backbone, encode_voxels, voxelize


@dataclass
class PreparedScene:
    """Everything about a scene that does not depend on network parameters."""

    sample: SceneSample
    voxels: object
    camera: list
    plans: list
    assignment: Assignment | None
    gt: np.ndarray


@dataclass
class StageOne:
    lidar: BevFeatureMap
    camera_bev: Tensor
    fusion: FusionOutput
    logits: Tensor  # [N_anchors]
    residuals: Tensor  # [N_anchors, 7]
    camera: list  # per-camera feature maps used by both stages


class CVFNet:
    """Camera-LiDAR detector. ``use_camera=False`` zeroes the camera pipeline
    (the LiDAR-only baseline with identical structure)."""

    def __init__(
        self, cfg: RunConfig, camera_channels: int = 4, n_cameras: int = 1, use_camera: bool = True,
        image_channels: int = 3,
    ):
        self.cfg = cfg
        self.use_camera = use_camera and cfg.camera.enabled
        self.n_cameras = n_cameras
        self.camera_channels = camera_channels
        net = cfg.network
        rng = np.random.default_rng(net.init_seed)
        self.spec = cfg.voxel_spec()
        self.bev_grid = BevGrid.from_spec(self.spec)
        self.cam_grid = CameraVoxelGrid.from_spec(self.spec, cfg.camera.slabs)
        self.anchors = make_anchors(self.bev_grid, cfg.anchor_spec())
        self.weights = cfg.loss_weights()
        lidar_ch = net.backbone[-1]

        self.voxel_encoder = VoxelEncoderParams.init(net.voxel_width, rng)
        self.backbone = BackboneParams.init(net.voxel_width, tuple(net.backbone), rng)
        self.offsets = OffsetField(*cfg.camera.offset_tiles)
        self.compress = CompressParams.init(camera_channels, net.camera_bev, rng)
        self.gate = GatedFusionParams.init(net.camera_bev, lidar_ch, rng)
        self.rpn = RpnHeadParams.init(net.camera_bev + lidar_ch, net.rpn_hidden, self.anchors.per_cell, rng)
        self.lidar_encoders = [
            SetEncoder.init(c, net.encoder_width, rng, f"roi.lidar{i}") for i, c in enumerate(net.backbone)
        ]
        self.camera_encoder = SetEncoder.init(camera_channels, net.encoder_width, rng, "roi.camera")
        g = net.roi_grid
        d_in = (net.camera_bev + lidar_ch) * g * g + net.encoder_width * (len(net.backbone) + n_cameras)
        self.refine = RefineHeadParams.init(d_in, net.refine_hidden, rng)
        self.stem = None
        if cfg.camera.source == "image":
            self.stem = ImageStemParams.init(image_channels, camera_channels, rng)
        elif cfg.camera.source != "features":
            raise ValueError(f"camera.source must be 'features' or 'image', got {cfg.camera.source!r}")
        self._name_params()

    # ------------------------------------------------------------------ params
    def named_parameters(self) -> dict:
        out = {
            "venc.w": self.voxel_encoder.weight,
            "venc.b": self.voxel_encoder.bias,
            "offsets": self.offsets.values,
            "cam.compress.w": self.compress.weight,
            "cam.compress.b": self.compress.bias,
            "gate.cam.w": self.gate.cam_weight,
            "gate.cam.b": self.gate.cam_bias,
            "gate.lidar.w": self.gate.lidar_weight,
            "gate.lidar.b": self.gate.lidar_bias,
            "camera.enc.w": self.camera_encoder.weight,
            "camera.enc.b": self.camera_encoder.bias,
        }
        for i, w in enumerate(self.backbone.weights):
            out[f"bev.conv{i}"] = w
        for name in ("hidden_w", "hidden_b", "cls_w", "cls_b", "reg_w", "reg_b"):
            out[f"rpn.{name}"] = getattr(self.rpn, name)
        for i, enc in enumerate(self.lidar_encoders):
            out[f"lidar.enc{i}.w"] = enc.weight
            out[f"lidar.enc{i}.b"] = enc.bias
        for name in ("hidden_w", "hidden_b", "out_w", "out_b"):
            out[f"ref.{name}"] = getattr(self.refine, name)
        if self.stem is not None:
            for i, (w, b) in enumerate(zip(self.stem.weights, self.stem.biases)):
                out[f"stem.conv{i}.w"] = w
                out[f"stem.conv{i}.b"] = b
        return out

    def _name_params(self):
        for name, p in self.named_parameters().items():
            p.name = name

    def trainable(self) -> dict:
        params = self.named_parameters()
        if not self.use_camera:
            for k in list(params):
                if k.startswith(("offsets", "cam.", "camera.", "stem.")):
                    params.pop(k)
        return params

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} != model shape {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def save(self, path) -> None:
        T.save_params(path, self.named_parameters())

    def load(self, path) -> None:
        self.load_state_dict(T.load_params(path))

    # ------------------------------------------------------------------ forward
    def prepare(self, sample: SceneSample, seed: int = 0, with_targets: bool = True) -> PreparedScene:
        vox = voxelize(sample.points, self.spec, seed)
        if self.stem is not None:
            if not sample.camera_images:
                raise ValueError("camera.source = image but the scene carries no images")
            camera = [image_to_tensor(im) for im in sample.camera_images]
        else:
            camera = [T.Tensor(f) for f in sample.camera_features]
        tile_ids = self.offsets.tile_index(self.cam_grid.shape)
        plans = [plan_projection(self.cam_grid, c, sample.feature_stride, tile_ids) for c in sample.calibs]
        gt = sample.gt_array
        assignment = None
        if with_targets:
            a = self.cfg.anchor
            assignment = assign_targets(self.anchors, gt, a.pos_iou, a.neg_iou)
        return PreparedScene(sample, vox, camera, plans, assignment, gt)

    def camera_features(self, prep: PreparedScene) -> list:
        if self.stem is None or not self.use_camera:
            return prep.camera
        return [image_stem(im, self.stem) for im in prep.camera]

    def camera_branch(self, prep: PreparedScene, cams: list) -> Tensor:
        h, w = self.bev_grid.height, self.bev_grid.width
        if not self.use_camera:
            return T.Tensor(np.zeros((self.cfg.network.camera_bev, h, w)))
        proj = auto_calibrated_project(
            cams, prep.sample.calibs, self.cam_grid, self.offsets,
            prep.sample.feature_stride, self.cfg.camera.interp, plans=prep.plans,
        )
        return bev_camera_compress(proj, self.compress)

    def projected_camera(self, prep: PreparedScene, offsets: bool = True) -> Tensor:
        return auto_calibrated_project(
            self.camera_features(prep), prep.sample.calibs, self.cam_grid, self.offsets if offsets else None,
            prep.sample.feature_stride, self.cfg.camera.interp, plans=prep.plans if offsets else None,
        )

    def stage_one(self, prep: PreparedScene) -> StageOne:
        feats = encode_voxels(prep.voxels, self.voxel_encoder)
        lidar = bev_backbone(prep.voxels, feats, self.backbone)
        cams = self.camera_features(prep)
        cam = self.camera_branch(prep, cams)
        fused = gated_fuse(cam, lidar.features, self.gate)
        cls_map, reg_map = rpn_head(fused.joint, self.rpn)
        logits, residuals = flatten_rpn(cls_map, reg_map)
        return StageOne(lidar, cam, fused, logits, residuals, cams)

    def proposals(self, s1: StageOne, inference: bool) -> tuple:
        """Decoded, NMS-filtered proposal boxes [P,7] with objectness [P]."""
        pc = self.cfg.proposal
        scores = _sigmoid(s1.logits.data)
        order = np.argsort(-scores, kind="stable")[:512]
        if inference:
            order = order[scores[order] >= pc.score_threshold]
        boxes = decode_residuals(s1.residuals.data[order], self.anchors.boxes[order])
        keep = nms(boxes, scores[order], pc.nms_iou, pc.max_keep)
        return boxes[keep], scores[order][keep]

    def stage_two(self, prep: PreparedScene, s1: StageOne, rois: np.ndarray):
        net = self.cfg.network
        joint_roi = rotated_roi_align(s1.fusion.joint, self.bev_grid, rois, net.roi_grid, self.cfg.camera.interp)
        lidar_vec = roi_lidar_pool(
            s1.lidar.stages, s1.lidar.stage_grids, rois, self.lidar_encoders, net.roi_grid, self.cfg.camera.interp
        )
        width = net.encoder_width * self.n_cameras
        if self.use_camera:
            cam_vec = roi_grid_camera_pool(
                rois, net.camera_grid_r, s1.camera, prep.sample.calibs, self.camera_encoder,
                prep.sample.feature_stride, self.cfg.camera.interp,
            )
        else:
            cam_vec = T.Tensor(np.zeros((len(rois), width)))
        return refine_head(joint_roi, lidar_vec, cam_vec, self.refine)

    # ------------------------------------------------------------------ losses
    def rpn_losses(self, prep: PreparedScene, s1: StageOne) -> dict:
        asg = prep.assignment
        use = asg.labels >= 0
        l_cls = focal_loss_logits(T.take(s1.logits, np.flatnonzero(use)), asg.labels[use], self.weights)
        pos = asg.positives
        l_loc, l_ang = box_regression_losses(T.take(s1.residuals, pos), asg.residuals[pos])
        return {"cls": l_cls, "loc": l_loc, "angle": l_ang, "total": rpn_loss(l_cls, l_loc, l_ang, self.weights)}

    def training_rois(self, prep: PreparedScene, s1: StageOne, rng: np.random.Generator) -> np.ndarray:
        boxes, _ = self.proposals(s1, inference=False)
        boxes = boxes[: self.cfg.proposal.train_rois]
        jitter = []
        for g in prep.gt:
            for _ in range(2):
                j = g.copy()
                j[:2] += rng.normal(0, 0.3, 2)
                j[3:6] *= np.exp(rng.normal(0, 0.05, 3))
                j[6] += rng.normal(0, 0.15)
                jitter.append(j)
        parts = [boxes] + ([np.array(jitter)] if jitter else [])
        return np.vstack(parts).reshape(-1, 7)

    def refinement_losses(self, prep: PreparedScene, s1: StageOne, rois: np.ndarray) -> dict:
        conf, res = self.stage_two(prep, s1, rois)
        if len(prep.gt):
            ious = iou_matrix(rois, prep.gt, "3d")
            best = ious.argmax(axis=1)
            best_iou = ious[np.arange(len(rois)), best]
        else:
            best = np.zeros(len(rois), dtype=np.int64)
            best_iou = np.zeros(len(rois))
        l_iou = iou_confidence_loss(conf, best_iou, self.weights)
        pos = np.flatnonzero(best_iou >= self.cfg.proposal.refine_pos_iou)
        target = encode_residuals(prep.gt[best[pos]], rois[pos]) if len(pos) else np.zeros((0, 7))
        l_loc, l_ang = box_regression_losses(T.take(res, pos), target)
        return {"iou": l_iou, "loc": l_loc, "angle": l_ang, "total": refinement_loss(l_iou, l_loc, l_ang, self.weights)}

    def loss(self, prep: PreparedScene, rng: np.random.Generator | None = None, two_stage: bool = True):
        s1 = self.stage_one(prep)
        parts = {"rpn": self.rpn_losses(prep, s1)}
        total = parts["rpn"]["total"]
        if two_stage:
            rois = self.training_rois(prep, s1, rng if rng is not None else np.random.default_rng(0))
            parts["ref"] = self.refinement_losses(prep, s1, rois)
            total = T.add(total, parts["ref"]["total"])
        return total, parts, s1

    # ------------------------------------------------------------------ inference
    def detect(self, sample: SceneSample | PreparedScene, refine: bool = True) -> list:
        prep = sample if isinstance(sample, PreparedScene) else self.prepare(sample, with_targets=False)
        s1 = self.stage_one(prep)
        rois, scores = self.proposals(s1, inference=True)
        if len(rois) == 0:
            return []
        if refine:
            conf, res = self.stage_two(prep, s1, rois)
            boxes = decode_residuals(res.data, rois)
            scores = _sigmoid(conf.data)
        else:
            boxes = rois
        pc = self.cfg.proposal
        keep = scores >= pc.final_score_threshold
        boxes, scores = boxes[keep], scores[keep]
        keep = nms(boxes, scores, pc.final_nms_iou, pc.max_keep)
        return [Detection(Box3D.from_array(boxes[i]), float(scores[i])) for i in keep]


def _sigmoid(z):
    return T._sigmoid(np.asarray(z, dtype=np.float64))


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)

    def append(self, **row):
        self.steps.append(row)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.steps])


def train_toy(
    model: CVFNet,
    scenes: list,
    steps: int,
    lr: float = 3e-3,
    seed: int = 0,
    two_stage: bool = True,
    optimizer: str = "adam",
    callback=None,
) -> TrainLog:
    """Fixed-rate training over prepared scenes, cycling in a seeded order."""
    rng = np.random.default_rng(seed)
    params = model.trainable()
    opt = T.Adam(params, lr) if optimizer == "adam" else None
    log = TrainLog()
    order: list = []
    for step in range(steps):
        if not order:
            order = list(rng.permutation(len(scenes)))
        prep = scenes[order.pop()]
        total, parts, s1 = model.loss(prep, rng, two_stage)
        T.zero_grad(params)
        T.backward(total)
        row = {"step": step, "total": total.item(), "rpn": parts["rpn"]["total"].item()}
        if two_stage:
            row["ref"] = parts["ref"]["total"].item()
        row["cam_attention"] = float(s1.fusion.cam_attention.data.mean())
        log.append(**row)
        if opt is not None:
            opt.step()
        else:
            T.sgd_step(params, lr)
        if callback is not None:
            callback(step, row)
    return log


def mean_camera_attention(model: CVFNet, scenes: list) -> float:
    vals = [model.stage_one(p).fusion.cam_attention.data.mean() for p in scenes]
    return float(np.mean(vals))


def yaw_flip_equivalent(a: float, b: float) -> float:
    """Smallest yaw gap treating headings that differ by pi as equal."""
    d = (a - b) % math.pi
    return min(d, math.pi - d)
