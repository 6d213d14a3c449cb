"""``cvfusion`` command line: synth-gen, voxelize, project-bev, fuse, train-toy, detect, eval."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data.config import ConfigError, load_config
from .data.kitti import ParseError, read_kitti_calib, read_kitti_objects, camera_to_lidar_box, write_kitti_labels
from .data.scene_io import frame_name, list_frames, read_scene, write_scene
from .data.synthetic import generate_synthetic_scene
from .evaluation import Detection, evaluate_frames
from .imaging import ImageFormatError, dump_bev_image
from .voxel import voxelize


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", default="desk", help="config file or bundled name (desk, kitti)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=out_help)


def _scene_args(p: argparse.ArgumentParser, frame_help: str = "frame id; defaults to the first frame"):
    p.add_argument("--scene", required=True, help="scene directory (velodyne/, calib/, label_2/, features/)")
    p.add_argument("--frame", default=None, help=frame_help)


def _model(cfg, args, use_camera: bool = True):
    from .model import CVFNet

    m = CVFNet(cfg, cfg.camera.channels, use_camera=use_camera)
    if getattr(args, "checkpoint", None):
        m.load(args.checkpoint)
    return m


def _one_frame(args):
    frame = args.frame or list_frames(args.scene)[0]
    return read_scene(args.scene, frame)


def cmd_synth_gen(args, cfg) -> str:
    out = Path(args.out)
    spec = cfg.voxel_spec()
    names = []
    for k in range(args.count):
        seed = args.seed + k
        sample = generate_synthetic_scene(seed, args.objects, spec, cfg.synth)
        write_scene(out, frame_name(seed), sample)
        names.append(frame_name(seed))
    return f"wrote {len(names)} frame(s) to {out}: {' '.join(names)}"


def cmd_voxelize(args, cfg) -> str:
    sample = _one_frame(args)
    spec = cfg.voxel_spec()
    vox = voxelize(sample.points, spec, args.seed)
    nx, ny, _ = spec.dims
    occupancy = np.zeros((ny, nx))
    np.add.at(occupancy, (vox.coords[:, 1], vox.coords[:, 0]), 1.0)
    dump_bev_image(occupancy, args.out)
    return f"voxels {vox.n_voxels} dims {spec.dims} dropped {vox.dropped} out_of_range {vox.out_of_range}"


def cmd_project_bev(args, cfg) -> str:
    m = _model(cfg, args)
    prep = m.prepare(_one_frame(args), args.seed, with_targets=False)
    proj = m.projected_camera(prep)
    px = dump_bev_image(proj, args.out)
    return f"camera BEV {proj.shape} -> {args.out} (mean level {px.mean():.3f})"


def cmd_fuse(args, cfg) -> str:
    m = _model(cfg, args)
    prep = m.prepare(_one_frame(args), args.seed, with_targets=False)
    s1 = m.stage_one(prep)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_bev_image(s1.fusion.cam_attention.data[0], out / "cam_attention.pgm")
    dump_bev_image(s1.fusion.lidar_attention.data[0], out / "lidar_attention.pgm")
    dump_bev_image(s1.fusion.joint, out / "joint.pgm")
    return (
        f"mean attention camera {s1.fusion.cam_attention.data.mean():.6f} "
        f"lidar {s1.fusion.lidar_attention.data.mean():.6f}"
    )


def cmd_train_toy(args, cfg) -> str:
    from .model import train_toy

    steps = args.steps if args.steps is not None else cfg.train.steps
    lr = args.lr if args.lr is not None else cfg.train.lr
    if args.scene:
        samples = [read_scene(args.scene, f) for f in list_frames(args.scene)]
    else:
        spec = cfg.voxel_spec()
        samples = [generate_synthetic_scene(args.seed + k, None, spec, cfg.synth) for k in range(args.scenes)]
    m = _model(cfg, args, use_camera=not args.lidar_only)
    preps = [m.prepare(s, args.seed) for s in samples]
    lines = []

    def report(step, row):
        if step % 50 == 0 or step == steps - 1:
            lines.append(f"step {step} total {row['total']:.6f} rpn {row['rpn']:.6f}")
            print(lines[-1], flush=True)

    log = train_toy(m, preps, steps, lr, args.seed, optimizer=cfg.train.optimizer, callback=report)
    m.save(args.out)
    rpn = log.column("rpn")
    return f"saved {args.out}; L_rpn {rpn[0]:.6f} -> {rpn[-1]:.6f}"


def cmd_detect(args, cfg) -> str:
    m = _model(cfg, args)
    frames = [args.frame] if args.frame else list_frames(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    total = 0
    for f in frames:
        sample = read_scene(args.scene, f)
        dets = m.detect(m.prepare(sample, args.seed, with_targets=False))
        write_kitti_labels(
            out / f"{f}.txt", [d.box for d in dets], sample.calibs[0], [d.score for d in dets], sample.image_size
        )
        total += len(dets)
    return f"{total} detection(s) over {len(frames)} frame(s) -> {out}"


def _parse_bins(text: str):
    if text.strip().lower() in ("", "none"):
        return None
    edges = [float(v) for v in text.split(",")]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"--bins needs increasing edges, got {text!r}")
    return tuple(zip(edges[:-1], edges[1:]))


def cmd_eval(args, cfg) -> str:
    bins = _parse_bins(args.bins)
    root, pred = Path(args.scene), Path(args.pred)
    frames = []
    for f in list_frames(root):
        calib = read_kitti_calib(root / "calib" / f"{f}.txt")
        gts = [camera_to_lidar_box(o, calib) for o in read_kitti_objects(root / "label_2" / f"{f}.txt") if o.type == "Car"]
        dets = []
        pred_path = pred / f"{f}.txt"
        if pred_path.exists():
            for o in read_kitti_objects(pred_path):
                if o.type != "Car":
                    continue
                if o.score is None:
                    raise ParseError(f"{pred_path}: detection rows need a score column")
                dets.append(Detection(camera_to_lidar_box(o, calib), o.score))
        frames.append((dets, gts))
    report = evaluate_frames(frames, args.iou, bins)
    Path(args.out).write_text(report.to_text())
    return " ".join(f"{k}={v:.4f}" for k, v in report.ap.items())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvfusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write synthetic scenes")
    _common(p, "output scene directory")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--objects", type=int, default=None)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("voxelize", help="BEV voxel occupancy image")
    _common(p, "output PGM")
    _scene_args(p)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("project-bev", help="camera features projected to BEV")
    _common(p, "output PGM")
    _scene_args(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_project_bev)

    p = sub.add_parser("fuse", help="gated fusion attention maps")
    _common(p, "output directory")
    _scene_args(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train-toy", help="fixed-rate training on a few scenes")
    _common(p, "output checkpoint")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--scene", default=None, help="train on every frame of this directory")
    p.add_argument("--scenes", type=int, default=1, help="synthetic scenes to generate when --scene is absent")
    p.add_argument("--lidar-only", action="store_true")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("detect", help="write detections as KITTI label text")
    _common(p, "output label directory")
    _scene_args(p, "frame id; defaults to every frame")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="41-point AP report")
    _common(p, "output report file")
    p.add_argument("--scene", required=True, help="scene directory with ground-truth labels")
    p.add_argument("--pred", required=True, help="directory of predicted label files")
    p.add_argument("--iou", type=float, default=0.7)
    p.add_argument("--bins", default="0,20,40,70", help="comma separated range edges in metres, or 'none'")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        print(args.func(args, cfg))
    except (OSError, ConfigError, ParseError, ImageFormatError, ValueError, KeyError, IndexError) as exc:
        print(f"cvfusion {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
