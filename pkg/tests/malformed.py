"""Curated malformed KITTI calibration and label files.

Each entry is (kind, name, text, expected position fragment). The fragment
is what a useful error message must contain to point at the problem.
"""

IDENT_P = "P2: 1 0 0 0 0 1 0 0 0 0 1 0"
IDENT_R = "R0_rect: 1 0 0 0 1 0 0 0 1"
IDENT_T = "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0"
GOOD_CALIB = "\n".join([IDENT_P, IDENT_R, IDENT_T]) + "\n"
GOOD_ROW = "Car 0.00 0 -1.57 100.00 120.00 200.00 180.00 1.50 1.60 3.90 1.00 1.70 12.00 0.10"

CASES = [
    ("calib", "missing_p2", "\n".join([IDENT_R, IDENT_T]), "missing key P2"),
    ("calib", "missing_tr", "\n".join([IDENT_P, IDENT_R]), "missing key Tr_velo_to_cam"),
    ("calib", "short_p2", "\n".join(["P2: 1 0 0 0 0 1 0 0 0 0 1", IDENT_R, IDENT_T]), ":1:"),
    ("calib", "long_r0", "\n".join([IDENT_P, "R0_rect: 1 0 0 0 1 0 0 0 1 0", IDENT_T]), ":2:"),
    ("calib", "non_numeric", "\n".join([IDENT_P, IDENT_R, "Tr_velo_to_cam: 1 0 0 x 0 1 0 0 0 0 1 0"]), ":3:"),
    ("calib", "no_colon", "\n".join([IDENT_P, "R0_rect 1 0 0 0 1 0 0 0 1", IDENT_T]), ":2:"),
    ("calib", "duplicate_key", "\n".join([IDENT_P, IDENT_R, IDENT_P, IDENT_T]), ":3:"),
    ("calib", "nan_value", "\n".join([IDENT_P, "R0_rect: 1 0 0 0 nan 0 0 0 1", IDENT_T]), ":2:"),
    ("calib", "scaled_rotation", "\n".join([IDENT_P, "R0_rect: 2 0 0 0 2 0 0 0 2", IDENT_T]), ":2:"),
    ("calib", "skewed_tr", "\n".join([IDENT_P, IDENT_R, "Tr_velo_to_cam: 1 1 0 0 0 1 0 0 0 0 1 0"]), ":3:"),
    ("calib", "empty", "", "missing key"),
    ("label", "too_few_fields", GOOD_ROW.rsplit(" ", 3)[0], ":1:"),
    ("label", "too_many_fields", GOOD_ROW + " 0.5 0.5", ":1:"),
    ("label", "text_in_bbox", GOOD_ROW.replace("120.00", "abc"), ":1:"),
    ("label", "second_row_bad", GOOD_ROW + "\n" + GOOD_ROW.replace("1.60", "oops"), ":2:"),
    ("label", "zero_height", GOOD_ROW.replace("1.50 1.60", "0.00 1.60"), ":1:"),
    ("label", "negative_length", GOOD_ROW.replace("3.90", "-3.90"), ":1:"),
    ("label", "inf_location", GOOD_ROW.replace("12.00", "inf"), ":1:"),
    ("label", "nan_rotation", GOOD_ROW.replace(" 0.10", " nan"), ":1:"),
    ("label", "third_row_short", "\n".join([GOOD_ROW, GOOD_ROW, "Car 0 0"]), ":3:"),
]
