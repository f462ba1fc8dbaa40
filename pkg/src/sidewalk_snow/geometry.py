"""Projective and robust-estimation math.

Rotations from quaternions, pinhole projection, RANSAC plane fitting, the rigid
re-orientation that puts a plane at z = 0, and RANSAC homography estimation with
Hartley-normalized DLT.

All RANSAC routines draw their hypotheses from ``numpy.random.default_rng(seed)``
in fixed-size batches, so a given seed always yields the same result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .colmap import CameraIntrinsics

E3 = np.array([0.0, 0.0, 1.0])

# hypotheses evaluated per vectorized batch; part of the determinism contract
RANSAC_BATCH = 128

BEHIND_EPS = 1e-9
INFINITY_EPS = 1e-12
ANTIPARALLEL_EPS = 1e-6
FINAL_REFIT_ROUNDS = 5


class GeometryError(ValueError):
    """Base class for geometric estimation failures."""


class NonUnitQuaternion(GeometryError):
    pass


class BehindCamera(GeometryError):
    """The point lies on or behind the camera's image plane."""


class InsufficientPoints(GeometryError):
    pass


class DegenerateInput(GeometryError):
    pass


class InsufficientCorrespondences(GeometryError):
    pass


class DegenerateConfiguration(GeometryError):
    pass


class PointAtInfinity(GeometryError):
    pass


# ---------------------------------------------------------------------------
# rotations and projection
# ---------------------------------------------------------------------------


def rotation_from_quaternion(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``.

    Raises:
        NonUnitQuaternion: if ``|q|`` differs from 1 by more than 1e-6.
    """
    w, x, y, z = (float(c) for c in q)
    norm = math.sqrt(w * w + x * x + y * y + z * z)
    if abs(norm - 1.0) > 1e-6:
        raise NonUnitQuaternion(f"|q| = {norm!r}")
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_from_rotation(R) -> tuple[float, float, float, float]:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0`` for a rotation matrix."""
    R = np.asarray(R, dtype=float)
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0:
        s = 2.0 * math.sqrt(trace + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return tuple(float(c) for c in q)  # type: ignore[return-value]


def camera_center(qvec, tvec) -> np.ndarray:
    R = rotation_from_quaternion(qvec)
    return -R.T @ np.asarray(tvec, dtype=float)


def _distort(intr: CameraIntrinsics, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = intr.radial_k
    if k == 0.0:
        return u, v
    radial = k * (u * u + v * v)
    return u + u * radial, v + v * radial


def project_points(intr: CameraIntrinsics, R, t, xyz) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of world points.

    Args:
        intr: camera intrinsics.
        R, t: world-to-camera rotation (3x3) and translation (3,).
        xyz: (N, 3) world points.

    Returns:
        ``(pixels (N, 2), in_front (N,) bool)``. Pixels of points behind the
        camera are NaN.
    """
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    cam = xyz @ np.asarray(R, dtype=float).T + np.asarray(t, dtype=float)
    z = cam[:, 2]
    in_front = z > BEHIND_EPS
    safe_z = np.where(in_front, z, np.nan)
    u, v = _distort(intr, cam[:, 0] / safe_z, cam[:, 1] / safe_z)
    fx, fy = intr.focal
    cx, cy = intr.principal_point
    return np.column_stack([fx * u + cx, fy * v + cy]), in_front


def project_to_image(intr: CameraIntrinsics, pose, xyz) -> np.ndarray:
    """Project one world point through ``pose = (qvec, tvec)``.

    Raises:
        BehindCamera: when the camera-frame depth is <= 1e-9.
    """
    qvec, tvec = pose
    pixels, in_front = project_points(intr, rotation_from_quaternion(qvec), tvec, xyz)
    if not in_front[0]:
        raise BehindCamera(f"point {tuple(np.ravel(xyz))} is behind the camera")
    return pixels[0]


# ---------------------------------------------------------------------------
# planes and rigid transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane ``{x : normal . x = offset}`` with the inlier set that supports it."""

    normal: np.ndarray
    offset: float
    inlier_ids: frozenset = field(default_factory=frozenset)
    inlier_threshold: float = 0.0

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("plane normal must be a finite non-zero vector")
        if abs(norm - 1.0) > 1e-12:
            n = n / norm
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "inlier_ids", frozenset(int(i) for i in self.inlier_ids))

    def __eq__(self, other):
        if not isinstance(other, PlaneModel):
            return NotImplemented
        return (
            np.array_equal(self.normal, other.normal)
            and self.offset == other.offset
            and self.inlier_ids == other.inlier_ids
            and self.inlier_threshold == other.inlier_threshold
        )

    def signed_distance(self, xyz) -> np.ndarray:
        return np.asarray(xyz, dtype=float).reshape(-1, 3) @ self.normal - self.offset

    def flipped(self) -> "PlaneModel":
        return PlaneModel(-self.normal, -self.offset, self.inlier_ids, self.inlier_threshold)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def apply(self, xyz) -> np.ndarray:
        return np.asarray(xyz, dtype=float).reshape(-1, 3) @ self.rotation.T + self.translation

    def apply_inverse(self, xyz) -> np.ndarray:
        return (np.asarray(xyz, dtype=float).reshape(-1, 3) - self.translation) @ self.rotation


def default_plane_threshold(xyz) -> float:
    """1% of the bounding-box diagonal; SfM scale is arbitrary so thresholds must be relative."""
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    return 0.01 * float(np.linalg.norm(xyz.max(axis=0) - xyz.min(axis=0)))


def _sample_indices(rng: np.random.Generator, n: int, size: int, batch: int) -> np.ndarray:
    # `size` distinct indices per row
    keys = rng.random((batch, n))
    return np.argpartition(keys, size - 1, axis=1)[:, :size]


def required_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    """Standard adaptive RANSAC bound on the number of hypotheses."""
    if inlier_ratio >= 1.0:
        return 0
    p = inlier_ratio**sample_size
    if p <= 0.0:
        return math.inf
    if p >= 1.0 - 1e-15:
        return 1
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - p))


def _canonical_sign(normal: np.ndarray, offset: float) -> tuple[np.ndarray, float]:
    if normal[np.argmax(np.abs(normal))] < 0:
        return -normal, -offset
    return normal, offset


def fit_plane_ransac(
    ids,
    xyz,
    threshold: float | None = None,
    iterations: int = 1000,
    seed: int = 42,
    confidence: float | None = 0.999,
) -> PlaneModel:
    """Fit a plane with RANSAC and refine it by total least squares.

    Three-point hypotheses are scored by inlier count (ties go to the earliest
    hypothesis). The winning inlier set is refit through the smallest singular
    direction of its centered coordinates; the inlier set is then recomputed
    against the refined plane and the refit repeated until the set is stable.

    Args:
        ids: point identifiers aligned with ``xyz``.
        xyz: (N, 3) coordinates.
        threshold: inlier distance; defaults to :func:`default_plane_threshold`.
        iterations: maximum number of hypotheses.
        seed: RNG seed.
        confidence: stop early once this success probability is reached;
            ``None`` evaluates all ``iterations`` hypotheses.

    Returns:
        The refined :class:`PlaneModel`. The sign is chosen so the largest
        normal component is positive.

    Raises:
        InsufficientPoints: fewer than 3 points.
        DegenerateInput: all points collinear within 1e-9.
    """
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    ids = np.asarray(ids)
    if len(ids) != len(xyz):
        raise ValueError("ids and xyz must have the same length")
    n = len(xyz)
    if n < 3:
        raise InsufficientPoints(f"need at least 3 points, got {n}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if threshold is None:
        threshold = default_plane_threshold(xyz)
    if not threshold > 0:
        raise ValueError("threshold must be positive")

    sv = np.linalg.svd(xyz - xyz.mean(axis=0), compute_uv=False)
    if sv[1] <= 1e-9 * max(1.0, sv[0]):
        raise DegenerateInput("points are collinear")

    rng = np.random.default_rng(seed)
    best_count, best_mask = 0, None
    done, needed = 0, float(iterations)
    while done < min(iterations, needed):
        batch = min(RANSAC_BATCH, iterations - done)
        idx = _sample_indices(rng, n, 3, batch)
        p0, p1, p2 = xyz[idx[:, 0]], xyz[idx[:, 1]], xyz[idx[:, 2]]
        a, b = p1 - p0, p2 - p0
        normals = np.cross(a, b)
        norms = np.linalg.norm(normals, axis=1)
        valid = norms > 1e-12 * np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        valid &= norms > 0
        normals[valid] /= norms[valid, None]
        offsets = np.einsum("ij,ij->i", normals, p0)
        inside = np.abs(normals @ xyz.T - offsets[:, None]) <= threshold
        counts = np.where(valid, inside.sum(axis=1), -1)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count, best_mask = int(counts[j]), inside[j]
        done += batch
        if confidence is not None and best_count:
            needed = required_iterations(best_count / n, 3, confidence)

    if best_mask is None:
        raise DegenerateInput("no non-degenerate three-point sample found")

    # the hypothesis slab can admit clutter the refined plane rejects; refit
    # on the rescored set until it stops changing
    mask = best_mask
    for _ in range(FINAL_REFIT_ROUNDS):
        inliers = xyz[mask]
        centroid = inliers.mean(axis=0)
        _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
        normal = vt[-1] / np.linalg.norm(vt[-1])
        normal, offset = _canonical_sign(normal, float(normal @ centroid))
        new_mask = np.abs(xyz @ normal - offset) <= threshold
        if new_mask.sum() < 3 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    mask = np.abs(xyz @ normal - offset) <= threshold
    return PlaneModel(normal, offset, frozenset(ids[mask].tolist()), float(threshold))


def orient_plane_toward(plane: PlaneModel, points) -> PlaneModel:
    """Flip the plane so the majority of ``points`` (camera centers) lie on its positive side."""
    d = plane.signed_distance(points)
    if np.count_nonzero(d > 0) < np.count_nonzero(d < 0):
        return plane.flipped()
    return plane


def _rotation_to_z(n: np.ndarray) -> np.ndarray:
    # Rodrigues with K = [n x e3]_x and 1 + cos = 1 + n_z; caller keeps n_z away from -1
    nx, ny, nz = n
    K = np.array([[0.0, 0.0, -nx], [0.0, 0.0, -ny], [nx, ny, 0.0]])
    return np.eye(3) + K + (K @ K) / (1.0 + nz)


def reorientation_for_plane(plane: PlaneModel) -> RigidTransform:
    """Rigid transform taking ``plane`` to ``z = 0`` with its normal along +z.

    The rotation is the minimal-angle rotation from the normal to +z. Normals
    within ``ANTIPARALLEL_EPS`` of -z (measured as 1 + cos) first get a half turn
    about the x-axis, then the small remaining rotation; an exactly
    antiparallel normal therefore maps by the half turn alone.
    """
    n = np.asarray(plane.normal, dtype=float)
    n = n / np.linalg.norm(n)
    if 1.0 + n[2] < ANTIPARALLEL_EPS:
        flip = np.diag([1.0, -1.0, -1.0])
        R = _rotation_to_z(flip @ n) @ flip
    else:
        R = _rotation_to_z(n)
    return RigidTransform(R, np.array([0.0, 0.0, -plane.offset]))


# ---------------------------------------------------------------------------
# homographies
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Homography:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(3, 3)
        if abs(h[2, 2]) > INFINITY_EPS:
            h = h / h[2, 2]
        if not np.all(np.isfinite(h)) or np.linalg.det(h) == 0.0:
            raise DegenerateConfiguration("homography is singular")
        h.flags.writeable = False
        object.__setattr__(self, "h", h)

    def __eq__(self, other):
        if not isinstance(other, Homography):
            return NotImplemented
        return np.array_equal(self.h, other.h)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def apply(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Map (N, 2) points. Returns ``(mapped, finite)``; points at infinity map to NaN."""
        return _apply_h(self.h, np.asarray(points, dtype=float).reshape(-1, 2))


def _apply_h(h: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = pts @ h[:, :2].T + h[:, 2]
    w = x[:, 2]
    ok = np.abs(w) > INFINITY_EPS
    safe = np.where(ok, w, np.nan)
    return x[:, :2] / safe[:, None], ok


def apply_homography(h: Homography, p) -> np.ndarray:
    """Apply ``h`` to a single point.

    Raises:
        PointAtInfinity: if the homogeneous scale is <= 1e-12 in magnitude.
    """
    out, ok = _apply_h(h.h, np.asarray(p, dtype=float).reshape(1, 2))
    if not ok[0]:
        raise PointAtInfinity(f"{tuple(np.ravel(p))} maps to infinity")
    return out[0]


def hartley_normalization(pts) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    c = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - c, axis=1))
    if not mean_dist > 0:
        raise DegenerateConfiguration("points are coincident")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _batch_normalization(pts: np.ndarray) -> np.ndarray:
    # pts: (k, m, 2) -> (k, 3, 3)
    c = pts.mean(axis=1)
    mean_dist = np.linalg.norm(pts - c[:, None, :], axis=2).mean(axis=1)
    with np.errstate(divide="ignore"):
        s = np.sqrt(2.0) / mean_dist
    T = np.zeros((len(pts), 3, 3))
    T[:, 0, 0] = T[:, 1, 1] = s
    T[:, 0, 2] = -s * c[:, 0]
    T[:, 1, 2] = -s * c[:, 1]
    T[:, 2, 2] = 1.0
    return T


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    # src, dst: (..., m, 2) -> A: (..., 2m, 9)
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=-1)
    r2 = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=-1)
    A = np.stack([r1, r2], axis=-2)
    return A.reshape(*src.shape[:-2], 2 * src.shape[-2], 9)


def _transform(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ T[..., :2, :2].swapaxes(-1, -2) + T[..., None, :2, 2]


def dlt_homography(src, dst) -> Homography:
    """Hartley-normalized DLT over all correspondences (least squares for N > 4)."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) < 4:
        raise InsufficientCorrespondences(f"need at least 4 correspondences, got {len(src)}")
    Ts, Td = hartley_normalization(src), hartley_normalization(dst)
    A = _dlt_rows(_transform(Ts, src), _transform(Td, dst))
    # thin SVD drops the null vector when A has fewer rows than columns
    _, _, vt = np.linalg.svd(A, full_matrices=A.shape[0] < A.shape[1])
    hn = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(Td) @ hn @ Ts)


def _triangle_areas(p: np.ndarray) -> np.ndarray:
    # p: (k, 4, 2) -> (k, 4) absolute areas of the four triangles
    areas = []
    for i, j, l in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a, b = p[:, j] - p[:, i], p[:, l] - p[:, i]
        areas.append(np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    return np.stack(areas, axis=1)


def _transfer_residuals(hn: np.ndarray, src_n: np.ndarray, dst_n: np.ndarray) -> np.ndarray:
    """Per-pair residual vectors ``(k, 4, N)`` of ``k`` hypotheses, in source units.

    Rows 0-1 are the forward residual pulled back through the local Jacobian of
    the inverse map; rows 2-3 are the backward residual.
    """
    with np.errstate(all="ignore"):
        fwd = hn[:, :, :2] @ src_n.T + hn[:, :, 2:]
        fwd = fwd[:, :2] / fwd[:, 2:]
        inv = np.linalg.inv(hn)
        bwd = inv[:, :, :2] @ dst_n.T + inv[:, :, 2:]
        w = bwd[:, 2]
        bwd = bwd[:, :2] / bwd[:, 2:]
        r = fwd - dst_n.T[None]
        # d(inverse map)/dy = (M[:2, :2] - p M[2, :2]) / w, applied to r
        m_r = inv[:, :2, :2] @ r
        r_src = (m_r - bwd * (inv[:, 2:, :2] @ r)) / w[:, None]
        return np.concatenate([r_src, bwd - src_n.T[None]], axis=1)


def _symmetric_transfer(hn: np.ndarray, src_n: np.ndarray, dst_n: np.ndarray) -> np.ndarray:
    """Symmetric transfer error of ``k`` hypotheses over ``N`` pairs, in source units."""
    with np.errstate(all="ignore"):
        err = np.sqrt((_transfer_residuals(hn, src_n, dst_n) ** 2).sum(axis=1))
    return np.where(np.isfinite(err), err, np.inf)


def _refine_homography(hn: np.ndarray, src_n: np.ndarray, dst_n: np.ndarray) -> np.ndarray:
    """Levenberg-Marquardt polish of a normalized-frame homography on symmetric transfer error.

    The algebraic DLT cost weights pairs by their destination scale; this step
    minimizes the geometric error instead. The input is returned unchanged when
    the polish fails to lower the cost.
    """
    h0 = hn / hn[2, 2]

    def residuals(p):
        return _transfer_residuals(np.append(p, 1.0).reshape(1, 3, 3), src_n, dst_n).ravel()

    start = residuals(h0.ravel()[:8])
    if len(start) <= 8 or not np.all(np.isfinite(start)):
        return hn
    fit = optimize.least_squares(residuals, h0.ravel()[:8], method="lm")
    if not (np.all(np.isfinite(fit.fun)) and fit.fun @ fit.fun < start @ start):
        return hn
    return np.append(fit.x, 1.0).reshape(3, 3)


def estimate_homography(
    src,
    dst,
    ransac_threshold: float = 3.0,
    iterations: int = 2000,
    seed: int = 42,
    confidence: float | None = 0.999,
    refine: bool = True,
) -> tuple[Homography, int]:
    """Robustly estimate the homography mapping ``src`` onto ``dst``.

    Each 4-sample is solved by DLT in its own Hartley-normalized frame. Inliers
    are scored by symmetric transfer error. Because ``src`` and ``dst`` may live
    in unrelated units (pixels versus ground coordinates), the destination
    residual is pulled back to ``src`` units through the local Jacobian of the
    inverse map, so ``ransac_threshold`` is a ``src`` distance. The final
    homography is a normalized DLT over the inliers of the best sample,
    followed (when ``refine`` is set) by a Levenberg-Marquardt polish of the
    same symmetric transfer error; inliers are then rescored against the
    result and the refit repeated until the inlier set is stable.

    Returns:
        ``(homography, inlier_count)`` where the count is measured against the
        final homography.

    Raises:
        InsufficientCorrespondences: fewer than 4 correspondences.
        DegenerateConfiguration: no usable 4-sample among ``iterations`` draws.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("src and dst must have the same length")
    n = len(src)
    if n < 4:
        raise InsufficientCorrespondences(f"need at least 4 correspondences, got {n}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not ransac_threshold > 0:
        raise ValueError("ransac_threshold must be positive")

    Ts_g, Td_g = hartley_normalization(src), hartley_normalization(dst)
    src_n, dst_n = _transform(Ts_g, src), _transform(Td_g, dst)
    # residual threshold expressed in normalized units
    tol = ransac_threshold * Ts_g[0, 0]

    rng = np.random.default_rng(seed)
    best_count, best_mask = 0, None
    done, needed = 0, float(iterations)
    while done < min(iterations, needed):
        batch = min(RANSAC_BATCH, iterations - done)
        idx = _sample_indices(rng, n, 4, batch)
        s4, d4 = src[idx], dst[idx]
        Ts, Td = _batch_normalization(s4), _batch_normalization(d4)
        s4n, d4n = _transform(Ts, s4), _transform(Td, d4)
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(Ts).all(axis=(1, 2)) & np.isfinite(Td).all(axis=(1, 2))
            valid &= (_triangle_areas(s4n).min(axis=1) > 1e-6) & (_triangle_areas(d4n).min(axis=1) > 1e-6)
        if not valid.any():
            done += batch
            continue
        A = _dlt_rows(s4n[valid], d4n[valid])
        _, _, vt = np.linalg.svd(A)
        hn = vt[:, -1].reshape(-1, 3, 3)
        H = np.linalg.inv(Td[valid]) @ hn @ Ts[valid]
        ok = np.abs(np.linalg.det(hn)) > 1e-12
        # re-express in the global normalized frames
        Hg = Td_g @ H @ np.linalg.inv(Ts_g)
        Hg[~ok] = np.eye(3)
        inside = _symmetric_transfer(Hg, src_n, dst_n) <= tol
        counts = np.where(ok, inside.sum(axis=1), -1)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count, best_mask = int(counts[j]), inside[j]
        done += batch
        if confidence is not None and best_count:
            needed = required_iterations(best_count / n, 4, confidence)

    if best_mask is None or best_count < 4:
        raise DegenerateConfiguration(f"no non-degenerate 4-sample in {iterations} draws")

    # the 4-sample's inlier set is biased toward where that sample fits best;
    # refit, rescore and repeat until the set stops changing
    mask = best_mask
    for _ in range(FINAL_REFIT_ROUNDS):
        H = dlt_homography(src[mask], dst[mask])
        Hg = Td_g @ H.h @ np.linalg.inv(Ts_g)
        if refine:
            Hg = _refine_homography(Hg, src_n[mask], dst_n[mask])
            H = Homography(np.linalg.inv(Td_g) @ Hg @ Ts_g)
        new_mask = _symmetric_transfer(Hg[None], src_n, dst_n)[0] <= tol
        if new_mask.sum() < 4 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    count = int((_symmetric_transfer(Hg[None], src_n, dst_n) <= tol).sum())
    return H, count
