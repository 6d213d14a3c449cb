import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvfusion.evaluation import (
    DISTANCE_BINS,
    Detection,
    ap_from_flags,
    average_precision_41pt,
    bev_range,
    distance_binned_eval,
    evaluate_frames,
)
from cvfusion.geometry import Box3D, iou_3d
from cvfusion.imaging import ImageFormatError, dump_bev_image, quantize_map, read_pnm, write_pnm
from oracles import ap_hand_stepped, greedy_match

# frozen from oracles.ap_hand_stepped([1, 0, 1, 1], 3)
HAND_AP = 0.8353658536585366


def car(x, y, yaw=0.0):
    return Box3D(x, y, -0.9, 1.6, 3.9, 1.5, yaw)


def shifted(b: Box3D, dx: float) -> Box3D:
    return Box3D(b.x + dx, b.y, b.z, b.w, b.l, b.h, b.yaw)


# ---------------------------------------------------------------- AP examples

def test_perfect_detector():
    gts = [car(10, 0), car(25, 3), car(50, -4)]
    dets = [Detection(g, 0.9 - 0.1 * i) for i, g in enumerate(gts)]
    assert average_precision_41pt(dets, gts) == 1.0


def test_no_detections():
    assert average_precision_41pt([], [car(10, 0)]) == 0.0


def test_empty_gts():
    assert average_precision_41pt([Detection(car(10, 0), 0.5)], []) == 0.0
    with pytest.warns(UserWarning):
        assert average_precision_41pt([], []) == 1.0


def test_hand_built_example():
    gts = [car(10, 0), car(20, 5), car(30, -5)]
    dets = [
        Detection(gts[0], 0.9),
        Detection(car(40, 10), 0.8),  # matches nothing
        Detection(gts[1], 0.7),
        Detection(gts[2], 0.6),
    ]
    assert HAND_AP == pytest.approx(ap_hand_stepped([1, 0, 1, 1], 3), abs=1e-15)
    # recall 1/3 at precision 1, then 2/3 and 1 at precision 3/4: (14 * 1 + 27 * 0.75) / 41
    assert HAND_AP == pytest.approx((14 + 27 * 0.75) / 41, abs=1e-15)
    assert average_precision_41pt(dets, gts) == pytest.approx(HAND_AP, abs=1e-12)


def test_threshold_validation():
    with pytest.raises(ValueError):
        average_precision_41pt([], [car(1, 1)], 0.0)
    with pytest.raises(ValueError):
        evaluate_frames([], 1.5)


def test_each_gt_matched_once():
    g = car(10, 0)
    dets = [Detection(g, 0.9), Detection(g, 0.8)]
    ap, prec, rec = ap_from_flags([0.9, 0.8], [True, False], 1)
    assert average_precision_41pt(dets, [g]) == ap == 1.0
    assert prec.tolist() == [1.0, 0.5] and rec.tolist() == [1.0, 1.0]


def test_match_needs_threshold_iou():
    g = car(10, 0)
    near = shifted(g, 0.5)  # 3D IoU = 3.4 / 4.4
    assert iou_3d(near, g) == pytest.approx(3.4 / 4.4, abs=1e-12)
    assert average_precision_41pt([Detection(near, 0.9)], [g], 0.7) == 1.0
    assert average_precision_41pt([Detection(near, 0.9)], [g], 0.8) == 0.0


def _micro_scene(rng):
    n_gt, n_det = rng.integers(0, 11), rng.integers(0, 21)
    gts = [car(rng.uniform(5, 60), rng.uniform(-15, 15), rng.uniform(-3, 3)) for _ in range(n_gt)]
    dets = []
    for _ in range(n_det):
        if gts and rng.random() < 0.6:
            g = gts[rng.integers(len(gts))]
            b = Box3D(g.x + rng.normal(0, 0.3), g.y + rng.normal(0, 0.3), g.z, g.w, g.l, g.h, g.yaw + rng.normal(0, 0.1))
        else:
            b = car(rng.uniform(5, 60), rng.uniform(-15, 15))
        dets.append(Detection(b, float(np.round(rng.uniform(0, 1), 2))))  # rounded: ties happen
    return dets, gts


@pytest.mark.parametrize("seed", range(25))
def test_ap_matches_hand_stepped_oracle(seed):
    rng = np.random.default_rng(seed)
    dets, gts = _micro_scene(rng)
    flags = greedy_match([(d.box.as_array(), d.score) for d in dets], [g.as_array() for g in gts], 0.7, iou_3d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ours = average_precision_41pt(dets, gts)
    assert abs(ours - ap_hand_stepped(flags, len(gts))) <= 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_adding_top_true_positive_never_lowers_ap(seed):
    rng = np.random.default_rng(seed)
    dets, gts = _micro_scene(rng)
    gts.append(car(65.0, 18.0))  # nobody detects this one yet
    base = average_precision_41pt(dets, gts)
    top = max([d.score for d in dets], default=0.5) + 0.01
    assert average_precision_41pt(dets + [Detection(gts[-1], top)], gts) >= base


# ---------------------------------------------------------------- distance bins

def test_all_near_gts_populate_first_bin_only():
    gts = [car(10, 0), car(8, 3)]
    rep = evaluate_frames([([Detection(gts[0], 0.9)], gts)], 0.7, DISTANCE_BINS)
    assert rep.ap["0-20m"] == pytest.approx(ap_hand_stepped([1], 2), abs=1e-12)
    assert rep.fn["20-40m"] == 0 and rep.fn["40-70m"] == 0
    assert rep.tp["20-40m"] == 0 and rep.tp["40-70m"] == 0


def test_bins_partition_gts():
    rng = np.random.default_rng(0)
    gts = [car(rng.uniform(2, 69), rng.uniform(-5, 5)) for _ in range(40)]
    rep = evaluate_frames([([], gts)], 0.7, DISTANCE_BINS)
    assert sum(rep.fn[k] for k in ("0-20m", "20-40m", "40-70m")) == rep.fn["all"] == 40


def test_unmatched_detection_goes_to_its_own_range():
    gts = [car(10, 0)]
    fp = car(55, 0)
    rep = evaluate_frames([([Detection(gts[0], 0.9), Detection(fp, 0.95)], gts)], 0.7, DISTANCE_BINS)
    assert rep.fp["40-70m"] == 1 and rep.fp["0-20m"] == 0 and rep.tp["0-20m"] == 1


def test_binned_ap_matches_oracle_per_bin():
    rng = np.random.default_rng(1)
    frames = [_micro_scene(rng) for _ in range(10)]
    rep = evaluate_frames(frames, 0.7, DISTANCE_BINS)
    for k, (lo, hi) in enumerate(DISTANCE_BINS):
        scores, flags, n_gt = [], [], 0
        for dets, gts in frames:
            gts_arr = [g.as_array() for g in gts]
            tp = greedy_match([(d.box.as_array(), d.score) for d in dets], gts_arr, 0.7, iou_3d)
            order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
            # attribute each ranked detection to its matched gt's bin or its own
            taken = set()
            for rank, i in enumerate(order):
                best, best_j = -1.0, None
                for j, g in enumerate(gts_arr):
                    if j in taken:
                        continue
                    v = iou_3d(dets[i].box, g)
                    if v > best:
                        best, best_j = v, j
                if tp[rank]:
                    taken.add(best_j)
                    r = math.hypot(gts[best_j].x, gts[best_j].y)
                else:
                    r = bev_range(dets[i].box)
                if lo <= r < hi:
                    scores.append(dets[i].score)
                    flags.append(tp[rank])
            n_gt += sum(lo <= math.hypot(g.x, g.y) < hi for g in gts)
        order = sorted(range(len(scores)), key=lambda i: -scores[i])
        ref = ap_hand_stepped([flags[i] for i in order], n_gt)
        assert abs(rep.ap[f"{lo:g}-{hi:g}m"] - ref) <= 1e-12


def test_distance_binned_eval_keys():
    out = distance_binned_eval([], [car(10, 0)])
    assert sorted(out) == ["0-20m", "20-40m", "40-70m"]


def test_report_text_schema():
    gts = [car(10, 0)]
    rep = evaluate_frames([([Detection(gts[0], 0.9)], gts)], 0.7, DISTANCE_BINS)
    text = rep.to_text().splitlines()
    assert text[0] == "iou_threshold: 0.7000"
    assert text[1:6] == ["[all]", "ap: 1.000000", "tp: 1", "fp: 0", "fn: 0"]


# ---------------------------------------------------------------- PGM dumps

def test_constant_map_is_mid_gray(tmp_path):
    px = dump_bev_image(np.full((5, 7), 3.3), tmp_path / "c.pgm")
    assert np.all(px == 128)
    assert np.all(read_pnm(tmp_path / "c.pgm") == 128)


def test_image_dims_match_map(tmp_path):
    m = np.random.default_rng(0).normal(size=(3, 25, 44))
    px = dump_bev_image(m, tmp_path / "m.pgm")
    assert px.shape == (25, 44) and read_pnm(tmp_path / "m.pgm").shape == (25, 44)
    ref = np.sqrt((m**2).sum(0))
    assert px[np.unravel_index(ref.argmax(), ref.shape)] == 255
    assert px[np.unravel_index(ref.argmin(), ref.shape)] == 0


def test_pgm_round_trip_exact(tmp_path):
    m = np.random.default_rng(1).normal(size=(9, 11))
    px = dump_bev_image(m, tmp_path / "r.pgm")
    assert read_pnm(tmp_path / "r.pgm").tobytes() == px.tobytes() == quantize_map(m).tobytes()
    raw = (tmp_path / "r.pgm").read_bytes()
    assert raw.startswith(b"P5\n11 9\n255\n")


def test_ppm_round_trip(tmp_path):
    px = np.random.default_rng(2).integers(0, 256, (4, 6, 3)).astype(np.uint8)
    write_pnm(tmp_path / "x.ppm", px)
    assert read_pnm(tmp_path / "x.ppm").tobytes() == px.tobytes()


@pytest.mark.parametrize("raw", [b"P2\n2 2\n255\n0000", b"P5\n2 2\n65535\n\0\0\0\0", b"P5\n2 2\n255\n\0\0\0", b"P5\n2"])
def test_bad_pnm_rejected(tmp_path, raw):
    (tmp_path / "bad.pgm").write_bytes(raw)
    with pytest.raises(ImageFormatError):
        read_pnm(tmp_path / "bad.pgm")


def test_pnm_comment_skipped(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x05\x06")
    assert read_pnm(tmp_path / "c.pgm").tolist() == [[5, 6]]
