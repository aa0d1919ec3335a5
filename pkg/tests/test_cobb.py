import math

import numpy as np
import pytest

from cobbkit.cobb import angle_matrix, cobb_angles, is_s_shape
from cobbkit.errors import ValidationError
from cobbkit.geometry import ImageDims, SpineLandmarks, rotate_points
from cobbkit.synth import SpineParams, generate_spine, random_params

DIMS = ImageDims(1000, 3000)


def spine_from_tilts(tilts, centers=None, w=60.0, h=40.0):
    """Rectangles rotated by the given tilts (degrees), stacked 100 px apart."""
    quads = []
    for i, t in enumerate(tilts):
        cx, cy = centers[i] if centers is not None else (500.0, 600.0 + 100.0 * i)
        base = np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [-w / 2, h / 2], [w / 2, h / 2]])
        quads.append(rotate_points(base, t) + [cx, cy])
    return SpineLandmarks(np.array(quads))


def spine_from_vectors(vectors):
    quads = []
    for i, (vx, vy) in enumerate(vectors):
        c = np.array([500.0, 600.0 + 100 * i])
        half = 50.0 * np.array([vx, vy])
        down = np.array([0.0, 20.0])
        quads.append([c - half - down, c + half - down, c - half + down, c + half + down])
    return SpineLandmarks(np.array(quads))


def reference_cobb(spine, height, eps=1e-4):
    """Literal acos/clip transcription with explicit branch evaluation."""
    p = spine.points
    v = (p[:, 1] + p[:, 3]) / 2 - (p[:, 0] + p[:, 2]) / 2
    n = len(v)
    a = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                c = (v[i] @ v[j]) / (np.linalg.norm(v[i]) * np.linalg.norm(v[j]))
                a[i][j] = math.degrees(math.acos(min(max(c, 0.0), 1.0)))
    mt, ui, lj = max((a[i][j], -i, -j) for i in range(n) for j in range(n))
    ui, lj = -ui, -lj
    mid = spine.midline()
    (x0, y0), (xn, yn) = mid[0], mid[-1]
    r = [(y - yn) / (y0 - yn) - (x - xn) / (x0 - xn) for x, y in mid[:-2]]
    s = abs(sum(r) ** 2 - sum(abs(q) for q in r) ** 2) > eps
    if not s:
        return mt, a[0][ui], a[n - 1][lj], s
    pt = max(a[ui][: ui + 1])
    k = a[ui][: ui + 1].index(pt)
    if mid[2 * ui][1] + mid[2 * lj][1] < height:
        tl = max(a[lj][lj:])
    else:
        tl = max(a[k][: k + 1])
    return mt, pt, tl, s


def test_identical_rectangles_give_zero_matrix():
    spine = spine_from_tilts([0.0] * 17)
    assert not angle_matrix(spine).any()
    t = cobb_angles(spine, DIMS)
    assert (t.mt, t.pt, t.tl) == (0.0, 0.0, 0.0)


def test_known_pair_angles():
    c, s = math.cos(math.radians(10)), math.sin(math.radians(10))
    a = angle_matrix(spine_from_vectors([(1, 0), (c, s)]))
    assert a[0, 1] == pytest.approx(10.0, abs=1e-12)
    a = angle_matrix(spine_from_vectors([(1, 0), (-1, 0.01)]))
    assert a[0, 1] == 90.0


def test_matrix_symmetric_zero_diagonal_bounded():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = angle_matrix(spine_from_tilts(rng.uniform(-80, 80, 17)))
        assert np.array_equal(a, a.T)
        assert not np.diag(a).any()
        assert a.min() >= 0 and a.max() <= 90


def test_matrix_invariant_under_similarity():
    rng = np.random.default_rng(4)
    spine = spine_from_tilts(rng.uniform(-30, 30, 17))
    a = angle_matrix(spine)
    moved = SpineLandmarks(rotate_points(spine.points.reshape(-1, 2) * 2.5 + [37, -11], 23.0, (400, 900)))
    np.testing.assert_allclose(angle_matrix(moved), a, atol=1e-9)


def test_zero_direction_vector_rejected():
    pts = spine_from_tilts([0.0] * 17).points.copy()
    pts[5, :, 0] = 500.0
    with pytest.raises(ValidationError):
        angle_matrix(SpineLandmarks(pts))


def _midline(xs, ys):
    return np.column_stack([xs, ys])


def test_s_shape_collinear_is_false():
    y = np.linspace(100, 2000, 34)
    assert not is_s_shape(_midline(0.3 * y + 40, y))


def test_s_shape_quadratic_arc_is_false():
    y = np.linspace(100, 2000, 34)
    x = 500 + 1e-4 * (y - 100) * (2000 - y) + 0.1 * y
    # brute force: every residual against the end chord has the same sign
    (x0, y0), (xn, yn) = (x[0], y[0]), (x[-1], y[-1])
    cross = [(xn - x0) * (yk - y0) - (yn - y0) * (xk - x0) for xk, yk in zip(x[1:-1], y[1:-1])]
    assert all(c > 0 for c in cross) or all(c < 0 for c in cross)
    assert not is_s_shape(_midline(x, y))


def test_s_shape_sinusoid_is_true():
    y = np.linspace(100, 2000, 34)
    x = 500 + 120 * np.sin(2 * np.pi * (y - 100) / 1900) + 0.05 * y
    (x0, y0), (xn, yn) = (x[0], y[0]), (x[-1], y[-1])
    cross = [(xn - x0) * (yk - y0) - (yn - y0) * (xk - x0) for xk, yk in zip(x[1:-1], y[1:-1])]
    assert min(cross) < 0 < max(cross)
    assert is_s_shape(_midline(x, y))


def test_s_shape_degenerate_chord_falls_back():
    y = np.linspace(100, 2000, 34)
    arc = 500 + 1e-4 * (y - 100) * (2000 - y)  # same x at both ends
    assert not is_s_shape(_midline(arc, y))
    wave = 500 + 120 * np.sin(2 * np.pi * (y - 100) / 1900)
    assert is_s_shape(_midline(wave, y))
    assert not is_s_shape(_midline(np.full(34, 500.0), y))


def test_c_curve_mt_is_max_tilt_difference():
    tilts = np.linspace(-10, 10, 17)
    t = cobb_angles(spine_from_tilts(tilts), DIMS)
    assert t.mt == pytest.approx(20.0, abs=1e-9)
    assert (t.upper_idx, t.lower_idx) == (0, 16)


def test_prescribed_tilts_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(100):
        tilts = rng.uniform(-25, 25, 17)
        t = cobb_angles(spine_from_tilts(tilts), DIMS)
        best = max(abs(a - b) for a in tilts for b in tilts)
        assert t.mt == pytest.approx(best, abs=1e-9)


def test_s_curve_matches_reference_transcription():
    rng = np.random.default_rng(12)
    seen = set()
    for k in range(200):
        sp = generate_spine(random_params(rng, "s" if k % 3 else "c", noise_sigma=float(rng.uniform(0, 2))))
        t = cobb_angles(sp.landmarks, sp.dims)
        mt, pt, tl, s = reference_cobb(sp.landmarks, sp.dims.height)
        assert t.s_shaped == s
        assert (t.mt, t.pt, t.tl) == pytest.approx((mt, pt, tl), abs=1e-6)
        top = sp.landmarks.top_mids()[:, 1]
        seen.add((s, s and top[t.upper_idx] + top[t.lower_idx] < sp.dims.height))
    assert seen == {(False, False), (True, True), (True, False)}


def test_mt_equals_matrix_max_with_noise():
    rng = np.random.default_rng(13)
    for _ in range(100):
        sp = generate_spine(random_params(rng, "s", noise_sigma=3.0))
        assert cobb_angles(sp.landmarks, sp.dims).mt == angle_matrix(sp.landmarks).max()


def test_ties_pick_lowest_index():
    vecs = [(1, 0), (1, 1)] * 8 + [(1, 0)]
    t = cobb_angles(spine_from_vectors(vecs), DIMS)
    assert (t.upper_idx, t.lower_idx) == (0, 1)
    assert t.mt == pytest.approx(45.0)
    assert t.pair_inverted is False


def test_pair_never_inverted_on_symmetric_matrix():
    rng = np.random.default_rng(14)
    for _ in range(200):
        t = cobb_angles(spine_from_tilts(rng.uniform(-30, 30, 17)), DIMS)
        assert t.upper_idx < t.lower_idx


def test_straight_spine_is_zero_and_not_s():
    sp = generate_spine(SpineParams())
    t = cobb_angles(sp.landmarks, sp.dims)
    assert (t.mt, t.pt, t.tl, t.s_shaped) == (0.0, 0.0, 0.0, False)


def test_deterministic():
    sp = generate_spine(random_params(np.random.default_rng(5), "s", noise_sigma=1.0))
    assert cobb_angles(sp.landmarks, sp.dims) == cobb_angles(sp.landmarks, sp.dims)
