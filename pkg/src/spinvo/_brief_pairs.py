"""Fixed sampling-pair table for the rotated binary descriptor.

256 rows of (px, py, qx, qy) offsets in [-13, 13], generated once from
a fixed seed and frozen here so descriptors are bit-identical across
platforms. Rotated by keypoint orientation, the offsets stay within the
18 px patch margin (13 * sqrt(2) < 18.4).
"""

import numpy as np

BRIEF_PAIRS = np.array([
    (13, -9, -10, 5), (10, -10, 0, -9), (8, 10, 13, 13), (12, 11, 7, -10),
    (-12, 13, 11, 6), (9, 9, 4, -7), (-1, 9, -11, -8), (-13, -4, 1, -7),
    (-6, -10, -10, 4), (5, -11, 5, -10), (7, -5, 13, -10), (3, -3, -4, 4),
    (5, 13, -11, 4), (-1, -12, 1, -1), (10, 4, 12, 7), (-6, -8, 7, 13),
    (8, -2, -4, 5), (12, -13, 1, -11), (4, -1, -4, -1), (-8, 0, 2, -4),
    (-10, 12, 2, 13), (-7, 13, -12, -12), (5, -6, -6, -9), (7, 7, -12, 2),
    (5, 13, 13, -10), (-11, 0, -11, 3), (-13, 2, -3, -4), (7, -10, -7, 3),
    (-11, -9, 11, 12), (-7, -5, 9, 5), (-7, 1, 9, -13), (5, 7, 10, 9),
    (1, 8, -7, -1), (4, 10, 8, 8), (-1, 10, -10, -11), (4, 13, -12, 8),
    (-7, -9, -4, 11), (8, -7, -2, 12), (0, -9, 6, 12), (2, -11, -9, -12),
    (-2, -13, -3, -3), (3, -5, -1, -9), (10, -10, -13, 5), (7, 8, 7, 13),
    (9, -10, -2, -6), (0, -2, 3, -10), (-2, -1, -8, -1), (6, -2, -8, -4),
    (2, -1, 8, -6), (-6, 12, 11, 2), (10, -1, -10, 7), (8, 4, -11, -2),
    (6, 4, -5, 5), (3, 4, 7, -4), (4, 12, 2, -3), (-11, -12, -12, 10),
    (1, -11, -10, 1), (-11, -11, -13, -11), (3, 11, -8, -1), (-2, -12, 13, -11),
    (-12, -3, -7, -3), (5, 5, 3, 2), (-8, 4, -3, -11), (9, -3, 11, 13),
    (6, -11, -10, -10), (13, -1, -1, -1), (-10, 9, -7, 8), (-8, -10, -11, 2),
    (3, 6, -8, 5), (-2, 1, -2, -11), (-5, -9, -6, 8), (-8, -10, -2, 1),
    (13, -4, 2, -13), (-2, 4, -7, 9), (-6, 1, 12, 6), (6, -3, -13, -8),
    (11, 10, -2, -8), (9, 6, 10, 11), (10, -4, 10, -12), (-11, -3, 10, 11),
    (12, -8, 6, 12), (5, 7, -12, 7), (2, 7, 12, -6), (8, 4, 6, 6),
    (-7, 4, 12, -7), (6, -11, -7, -7), (-7, -3, 11, 7), (-2, 2, 5, -3),
    (8, 8, -4, 5), (5, -7, 3, -4), (5, -3, -6, 0), (9, 3, -7, -5),
    (4, -11, 4, 8), (-3, 1, -10, -4), (-9, 8, -12, 3), (-4, 1, -9, 0),
    (10, 11, 1, 5), (7, 4, -9, 7), (-1, 2, 11, 5), (-7, 10, 13, -7),
    (-2, 13, 1, -3), (-2, -8, 13, -6), (8, -6, -13, 13), (-11, -4, -13, -13),
    (-7, -2, 0, 12), (12, -13, 1, -6), (2, -13, 2, 10), (11, -3, -10, -9),
    (-9, 0, -13, -2), (-2, -3, 0, 11), (-10, 3, -3, 4), (6, -3, -8, 11),
    (-9, -10, -4, 2), (-4, 3, -12, -5), (-12, 1, 1, 6), (8, 12, 6, 10),
    (7, -1, 8, -6), (5, -4, -9, 7), (11, 6, 0, 5), (3, 10, 11, -10),
    (-7, -1, 1, -9), (12, 7, -3, -10), (-1, -4, 3, 6), (-11, -5, 3, 7),
    (11, -5, -12, 11), (13, -12, 1, 10), (6, -13, 0, -10), (-12, -11, -1, 1),
    (-11, 4, -5, 4), (-13, -5, 8, -10), (9, -5, 12, -13), (2, 10, -1, -4),
    (0, -6, 1, -13), (-1, -12, -13, -13), (13, 2, 2, -4), (-3, 9, -11, -11),
    (-1, -9, 9, 2), (-5, -8, 0, -9), (7, 10, 7, -5), (-10, 6, 4, -3),
    (8, -9, -7, 13), (4, 4, -13, -6), (7, 10, -10, -1), (-12, -11, -13, -9),
    (-4, 4, -9, 1), (-11, -13, 5, -1), (-1, -2, 9, 4), (5, 2, -1, 1),
    (3, -4, 9, -11), (-13, -10, 7, -7), (-5, -3, 12, 5), (12, -9, 2, 4),
    (-12, 7, -9, -12), (5, 7, 2, 5), (-10, 6, -12, 7), (2, -1, 8, 11),
    (-5, 4, 11, -3), (13, 8, -7, 6), (6, 5, -1, -4), (-8, -5, 0, -7),
    (-8, -13, -10, -2), (-10, -13, 3, 9), (-5, 9, -8, 0), (-2, 9, 8, 3),
    (4, -13, 5, -1), (0, -7, 6, -13), (-1, 8, 10, 13), (-4, -9, 9, -10),
    (8, -6, 8, 4), (6, -5, 9, -4), (-11, 11, -1, 7), (-9, 10, -8, -10),
    (10, -13, 1, 5), (12, 4, 13, 12), (1, 13, 3, 11), (3, -13, 9, 9),
    (-9, -2, 0, -1), (7, 6, 2, -13), (7, -2, 12, -1), (-11, -12, -4, 2),
    (9, -11, 13, -2), (5, 3, 3, -7), (-12, 6, -4, 3), (-7, 5, -2, 2),
    (3, -2, 1, -3), (12, -7, 6, 11), (-6, -5, 12, -11), (11, 4, -11, -1),
    (-7, -9, 11, -3), (-8, 11, -8, 6), (5, 0, 11, -4), (-5, -9, 10, 9),
    (-2, 8, 6, -8), (-2, -1, 1, 12), (3, 5, 12, -2), (-8, -10, -6, 7),
    (3, 0, 1, -5), (2, -1, -10, 1), (11, -10, -8, -6), (2, -12, -4, 0),
    (-12, 1, 13, 2), (2, 11, 3, -8), (-8, 8, 8, 1), (9, -3, 2, 6),
    (-9, 1, -12, -6), (6, 5, 13, -12), (13, 8, -11, -12), (12, 5, -4, 2),
    (-12, 10, 12, 1), (13, 7, 2, 7), (-8, 11, 5, 13), (-7, -1, 3, -7),
    (-11, 2, 12, 10), (5, 0, 4, -6), (13, 11, 6, -11), (-1, -2, 13, -3),
    (-8, -3, -7, 8), (2, 0, -8, 10), (10, -2, 7, 5), (-8, -6, 6, -11),
    (-9, -3, -9, 5), (-5, 7, -9, -7), (2, 9, -11, 11), (4, 11, 11, -11),
    (-12, -2, -9, 8), (-13, 2, -2, 9), (2, -8, 1, -12), (7, -1, 13, -6),
    (4, -4, -11, 7), (6, -10, -5, -12), (12, 10, 6, 12), (9, 4, -6, 11),
    (9, -8, 2, -9), (-4, -8, 0, -1), (2, -1, -11, -6), (1, 7, -10, 10),
    (9, -9, 8, 8), (3, -10, -5, 13), (1, -2, 2, -11), (-1, -1, -3, 7),
    (-13, 0, 11, 13), (7, 9, -6, -4), (4, -9, 4, 6), (-13, 9, -6, 7),
    (-13, -10, 3, -11), (-9, -2, 8, 4), (-6, 13, 12, -1), (8, 6, -8, 13),
    (10, 1, -7, 1), (3, -9, -2, -9), (3, -9, 12, 12), (11, -2, 12, 12),
    (6, -11, 8, -1), (4, 13, 5, 11), (4, -12, 3, 3), (11, 0, -3, -6),
], dtype=np.int32)
