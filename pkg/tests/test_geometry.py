import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import plain_dlt, quat_rotate
from sidewalk_snow.colmap import CameraIntrinsics
from sidewalk_snow.geometry import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateInput,
    Homography,
    InsufficientCorrespondences,
    InsufficientPoints,
    NonUnitQuaternion,
    PlaneModel,
    PointAtInfinity,
    apply_homography,
    dlt_homography,
    estimate_homography,
    fit_plane_ransac,
    orient_plane_toward,
    project_points,
    project_to_image,
    quaternion_from_rotation,
    reorientation_for_plane,
    rotation_from_quaternion,
)

CAM = CameraIntrinsics(1, "PINHOLE", 1920, 1080, (1000.0, 1000.0, 960.0, 540.0))
IDENTITY_POSE = ((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

finite = st.floats(-1e3, 1e3, allow_nan=False)
quats = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4).filter(lambda q: np.linalg.norm(q) > 0.1)
normals = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(lambda n: np.linalg.norm(n) > 1e-3)


def unit(q):
    q = np.asarray(q, float)
    return tuple(q / np.linalg.norm(q))


# --- rotations -------------------------------------------------------------


def test_identity_quaternion():
    assert np.array_equal(rotation_from_quaternion((1, 0, 0, 0)), np.eye(3))


def test_quarter_turn_about_x():
    h = math.sqrt(0.5)
    R = rotation_from_quaternion((h, h, 0, 0))
    assert np.allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-12)


def test_matches_sandwich_product():
    rng = np.random.default_rng(3)
    q = unit(rng.normal(size=4))
    R = rotation_from_quaternion(q)
    for v in rng.normal(size=(100, 3)):
        assert np.allclose(R @ v, quat_rotate(q, v), atol=1e-12)


def test_non_unit_quaternion():
    with pytest.raises(NonUnitQuaternion):
        rotation_from_quaternion((1.0, 0.01, 0, 0))


@given(quats)
def test_rotation_is_proper_orthonormal(q):
    R = rotation_from_quaternion(unit(q))
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


@given(quats)
def test_quaternion_round_trip(q):
    R = rotation_from_quaternion(unit(q))
    assert np.allclose(rotation_from_quaternion(quaternion_from_rotation(R)), R, atol=1e-12)


# --- projection --------------------------------------------------------------


def test_optical_axis_hits_principal_point():
    assert np.allclose(project_to_image(CAM, IDENTITY_POSE, (0, 0, 5)), (960, 540))


def test_lateral_offset():
    assert np.allclose(project_to_image(CAM, IDENTITY_POSE, (1, 0, 5)), (1160, 540))


def test_behind_camera():
    with pytest.raises(BehindCamera):
        project_to_image(CAM, IDENTITY_POSE, (0, 0, -1))


def test_simple_radial_distortion():
    cam = CameraIntrinsics(2, "SIMPLE_RADIAL", 100, 100, (100.0, 50.0, 50.0, 0.1))
    # normalized (0.2, 0) -> radial factor 1 + 0.1 * 0.04
    px = project_to_image(cam, IDENTITY_POSE, (1, 0, 5))
    assert np.allclose(px, (50 + 100 * 0.2 * 1.004, 50))


def test_batch_projection_flags_points_behind():
    px, front = project_points(CAM, np.eye(3), (0, 0, 0), [(0, 0, 5), (0, 0, -5), (0, 0, 0)])
    assert front.tolist() == [True, False, False]
    assert np.isnan(px[1]).all()


# --- plane fitting -------------------------------------------------------------


def plane_points():
    rng = np.random.default_rng(0)
    on = np.column_stack([rng.uniform(-5, 5, (100, 2)), np.full(100, 2.0)])
    off = np.column_stack([rng.uniform(-5, 5, (10, 2)), np.full(10, 50.0)])
    return np.arange(110), np.vstack([on, off])


def test_exact_plane_with_outliers():
    ids, xyz = plane_points()
    p = fit_plane_ransac(ids, xyz, threshold=0.01)
    assert np.allclose(np.abs(p.normal), (0, 0, 1), atol=1e-12)
    assert abs(abs(p.offset) - 2.0) < 1e-12
    assert p.inlier_ids == frozenset(range(100))


def test_minimal_three_points():
    p = fit_plane_ransac([1, 2, 3], [(0, 0, 0), (1, 0, 0), (0, 1, 0)], threshold=1e-6)
    assert np.allclose(p.normal, (0, 0, 1)) and abs(p.offset) < 1e-12


def test_collinear_points_rejected():
    with pytest.raises(DegenerateInput):
        fit_plane_ransac(range(5), [(i, 2 * i, 3 * i) for i in range(5)], threshold=0.1)


def test_too_few_points():
    with pytest.raises(InsufficientPoints):
        fit_plane_ransac([1, 2], [(0, 0, 0), (1, 0, 0)], threshold=0.1)


def test_plane_seed_determinism():
    rng = np.random.default_rng(5)
    xyz = np.column_stack([rng.uniform(-5, 5, (400, 2)), rng.normal(0, 0.02, 400)])
    xyz[::3, 2] += rng.uniform(1, 4, len(xyz[::3]))
    a = fit_plane_ransac(range(400), xyz, seed=11)
    b = fit_plane_ransac(range(400), xyz, seed=11)
    assert a == b


def test_inliers_respect_threshold():
    rng = np.random.default_rng(6)
    xyz = np.column_stack([rng.uniform(-5, 5, (300, 2)), rng.normal(0, 0.05, 300)])
    p = fit_plane_ransac(range(300), xyz, threshold=0.08)
    d = np.abs(xyz @ p.normal - p.offset)
    assert all(d[i] <= p.inlier_threshold for i in p.inlier_ids)


def test_orient_toward_cameras():
    p = PlaneModel((0, 0, 1), 0.0)
    flipped = orient_plane_toward(p, [(0, 0, -3), (1, 0, -2), (5, 5, 1)])
    assert np.array_equal(flipped.normal, (0, 0, -1))


# --- reorientation --------------------------------------------------------------


def test_reorient_identity():
    T = reorientation_for_plane(PlaneModel((0, 0, 1), 0.0))
    assert np.allclose(T.rotation, np.eye(3)) and np.allclose(T.translation, 0)


def test_reorient_x_normal():
    T = reorientation_for_plane(PlaneModel((1, 0, 0), 3.0))
    rng = np.random.default_rng(1)
    pts = np.column_stack([np.full(20, 3.0), rng.normal(size=(20, 2))])
    assert np.allclose(T.apply(pts)[:, 2], 0.0, atol=1e-12)


def test_reorient_antiparallel_convention():
    T = reorientation_for_plane(PlaneModel((0, 0, -1), 2.0))
    assert np.allclose(T.rotation, np.diag([1, -1, -1]))
    assert np.allclose(T.apply([(4, 5, -2)])[0, 2], 0.0)


@given(normals, st.floats(-100, 100, allow_nan=False), st.lists(st.tuples(finite, finite), min_size=1, max_size=10))
def test_reorient_puts_plane_on_z0(n, offset, uv):
    p = PlaneModel(n, offset)
    T = reorientation_for_plane(p)
    R = T.rotation
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9) and abs(np.linalg.det(R) - 1) < 1e-9
    assert np.allclose(R @ p.normal, (0, 0, 1), atol=1e-9)
    # points exactly on the plane: offset * n plus in-plane combinations
    a = np.cross(p.normal, [1.0, 0, 0] if abs(p.normal[0]) < 0.9 else [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(p.normal, a)
    pts = p.offset * p.normal + np.array([u * a + v * b for u, v in uv])
    scale = max(1.0, np.abs(pts).max())
    assert np.all(np.abs(T.apply(pts)[:, 2]) <= 1e-9 * scale)


# --- homographies ----------------------------------------------------------------


SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]


def test_identity_from_unit_square():
    H, count = estimate_homography(SQUARE, SQUARE)
    assert np.allclose(H.h, np.eye(3), atol=1e-9) and count == 4


def test_pure_scale():
    H, _ = estimate_homography(SQUARE, [(2 * x, 2 * y) for x, y in SQUARE])
    assert np.allclose(H.h, np.diag([2, 2, 1]), atol=1e-9)


def test_too_few_correspondences():
    with pytest.raises(InsufficientCorrespondences):
        estimate_homography(SQUARE[:3], SQUARE[:3])


def test_collinear_correspondences_degenerate():
    line = [(i, 2 * i) for i in range(8)]
    with pytest.raises(DegenerateConfiguration):
        estimate_homography(line, line, iterations=50)


def test_apply_examples():
    assert np.allclose(apply_homography(Homography(np.eye(3)), (3, 4)), (3, 4))
    assert np.allclose(apply_homography(Homography(np.diag([2.0, 2.0, 1.0])), (3, 4)), (6, 8))


def test_point_at_infinity():
    H = Homography([[1, 0, 0], [0, 1, 0], [1, 0, 1]])
    with pytest.raises(PointAtInfinity):
        apply_homography(H, (-1, 5))


def random_homography(rng):
    h = np.eye(3) + rng.normal(0, 0.2, (3, 3))
    h[2, :2] = rng.normal(0, 1e-3, 2)
    return Homography(h)


def test_apply_then_inverse():
    rng = np.random.default_rng(8)
    H = random_homography(rng)
    pts = rng.uniform(-100, 100, (100, 2))
    fwd, ok = H.apply(pts)
    back, ok2 = H.inverse().apply(fwd)
    assert ok.all() and ok2.all()
    assert np.allclose(back, pts, atol=1e-9)


def test_dlt_matches_unnormalized_oracle():
    rng = np.random.default_rng(9)
    H = random_homography(rng)
    src = rng.uniform(0, 500, (30, 2))
    dst, _ = H.apply(src)
    assert np.allclose(dlt_homography(src, dst).h, plain_dlt(src, dst), atol=1e-6)
    assert np.allclose(dlt_homography(src, dst).h, H.h, atol=1e-8)


def road_camera_homography(height=3.0, pitch_deg=10.0, f=1000.0):
    """Ground (x lateral, y forward) -> pixel map of a forward-looking camera."""
    th = math.radians(pitch_deg)
    z_c = np.array([0.0, math.cos(th), -math.sin(th)])
    x_c = np.array([1.0, 0.0, 0.0])
    R = np.vstack([x_c, np.cross(z_c, x_c), z_c])
    t = -R @ np.array([0.0, 0.0, height])
    K = np.array([[f, 0, 960.0], [0, f, 540.0], [0, 0, 1]])
    return Homography(K @ np.column_stack([R[:, 0], R[:, 1], t]))


def road_pairs(rng, n, noise, outliers):
    """Noisy pixel -> ground pairs for a road seen by a forward camera."""
    G = road_camera_homography()
    ground = np.column_stack([rng.uniform(-4, 4, n), rng.uniform(6, 40, n)])
    pix, _ = G.apply(ground)
    noisy = pix + rng.normal(0, noise, pix.shape)
    bad = rng.random(n) < outliers
    noisy[bad] += rng.uniform(-200, 200, (bad.sum(), 2))
    return noisy, ground, pix, G


def test_robust_homography_on_road_pairs():
    rng = np.random.default_rng(10)
    src, dst, _, _ = road_pairs(rng, 200, 0.5, 0.2)
    H, count = estimate_homography(src, dst, ransac_threshold=3.0, seed=1)
    assert count >= 0.75 * 200
    _, held_ground, held_pix, _ = road_pairs(rng, 100, 0.0, 0.0)
    back, ok = H.inverse().apply(held_ground)
    assert ok.all()
    assert np.max(np.linalg.norm(back - held_pix, axis=1)) <= 1.5


def test_homography_seed_determinism():
    rng = np.random.default_rng(12)
    src, dst, _, _ = road_pairs(rng, 150, 0.5, 0.3)
    a = estimate_homography(src, dst, seed=4)
    b = estimate_homography(src, dst, seed=4)
    assert a[0] == b[0] and a[1] == b[1]


@given(
    st.floats(0.01, 100), st.floats(-math.pi, math.pi), st.tuples(finite, finite),
    st.floats(0.01, 100), st.floats(-math.pi, math.pi), st.tuples(finite, finite),
)
def test_similarity_invariance(s1, a1, t1, s2, a2, t2):
    rng = np.random.default_rng(13)
    H = random_homography(rng)
    src = rng.uniform(0, 50, (12, 2))
    dst, _ = H.apply(src)

    def sim(s, a, t):
        return np.array([[s * math.cos(a), -s * math.sin(a), t[0]], [s * math.sin(a), s * math.cos(a), t[1]], [0, 0, 1]])

    S1, S2 = sim(s1, a1, t1), sim(s2, a2, t2)
    src2, _ = Homography(S1).apply(src)
    dst2, _ = Homography(S2).apply(dst)
    H2, _ = estimate_homography(src2, dst2, ransac_threshold=3.0 * s1)
    mapped, _ = H2.apply(src2)
    scale = max(1.0, np.abs(dst2).max())
    assert np.allclose(mapped, dst2, atol=1e-9 * scale)
