"""Synthetic street scenes with known geometry, used as test fixtures and oracles.

A scene is a flat ground plane carrying a road strip and a sidewalk strip,
photographed by a camera driven along the road in several slightly offset
runs. Everything a real pipeline would estimate (plane, poses, image to
ground homographies, snow coverage) is known exactly here.

Ground coordinates ``(u, v)`` are meters: ``u`` points right of the driving
direction (east), ``v`` along it (north). World units are meters scaled by
``units_per_meter`` so that nothing silently assumes a metric reconstruction.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import Polygon, box

from .colmap import CameraIntrinsics, ImageRecord, Observation, ScenePoint, SparseModel
from .geometry import quaternion_from_rotation, rotation_from_quaternion
from .masks import LabelRaster, write_label_raster

ORIGIN_LAT = 40.44
ORIGIN_LON = -79.99
# local tangent plane conversion only; the classifier uses its own great-circle distance
_EARTH_RADIUS_M = 6371008.8
GPS_MARGIN_M = 25.0

MIN_DEPTH_M = 0.5
BESIDE_GAP_M = 0.3
CATEGORIES = ("clear", "snow_covered", "cleared")


class InvalidSpec(ValueError):
    pass


class UnknownQuery(LookupError):
    def __init__(self, name: str):
        super().__init__(f"no query named {name!r} in the bundle")
        self.name = name


@dataclass(frozen=True)
class SnowScenario:
    """``none``, ``covers`` (outer fraction of the sidewalk plus the verge) or ``beside``."""

    kind: str = "none"
    fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "covers", "beside"):
            raise InvalidSpec(f"unknown snow scenario {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise InvalidSpec(f"snow fraction must be in [0, 1], got {self.fraction}")
        if self.kind != "covers" and self.fraction != 0.0:
            raise InvalidSpec(f"scenario {self.kind!r} takes no fraction")

    @classmethod
    def parse(cls, text: str) -> "SnowScenario":
        kind, _, frac = text.partition(":")
        if kind == "covers":
            try:
                return cls("covers", float(frac))
            except ValueError:
                raise InvalidSpec(f"bad snow scenario {text!r}; expected covers:<fraction>") from None
        if frac:
            raise InvalidSpec(f"bad snow scenario {text!r}")
        return cls(kind)

    def __str__(self) -> str:
        return f"covers:{self.fraction!r}" if self.kind == "covers" else self.kind


@dataclass(frozen=True)
class QuerySpec:
    name: str
    along: float  # meters along the road
    lateral: float = 0.0
    yaw_deg: float = 0.0
    scenario: SnowScenario = SnowScenario()
    category: str | None = None
    gps_shift_m: float = 0.0  # moves only the reported GPS fix north, not the pose

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = str(self.scenario)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuerySpec":
        d = dict(d)
        scenario = d.pop("scenario", "none")
        if isinstance(scenario, str):
            scenario = SnowScenario.parse(scenario)
        return cls(scenario=scenario, **d)


DEFAULT_QUERIES = (
    QuerySpec("query_clear_a.png", 5.0, 0.2, 0.5, SnowScenario("none"), "clear"),
    QuerySpec("query_clear_b.png", 9.0, -0.3, -0.8, SnowScenario("none"), "clear"),
    QuerySpec("query_covered_a.png", 4.0, 0.1, 0.0, SnowScenario("covers", 0.95), "snow_covered"),
    QuerySpec("query_covered_b.png", 8.0, 0.4, 1.0, SnowScenario("covers", 0.85), "snow_covered"),
    QuerySpec("query_cleared_a.png", 6.0, 0.0, -0.5, SnowScenario("beside"), "cleared"),
    QuerySpec("query_cleared_b.png", 7.0, -0.2, 0.6, SnowScenario("covers", 0.3), "cleared"),
)


def _rect(u0, u1, v0, v1):
    return ((u0, v0), (u1, v0), (u1, v1), (u0, v1))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 7
    scene_id: str = "synthetic"
    plane_normal: tuple[float, float, float] = (0.2, -0.3, 0.93)
    plane_offset: float = 1.5
    units_per_meter: float = 0.5
    road: tuple = _rect(-4.0, 2.0, -5.0, 80.0)
    sidewalk: tuple = _rect(2.0, 3.8, -5.0, 80.0)
    verge_width: float = 6.5  # unlabeled terrain on either side; snow lands there
    runs: int = 3
    images_per_run: int = 12
    run_lanes: tuple[float, ...] = (0.0, 0.5, -0.4)
    image_spacing: float = 1.6
    lateral_jitter: float = 0.15
    yaw_jitter_deg: float = 1.0
    camera_height: float = 3.0
    pitch_deg: float = 4.0
    width: int = 1280
    height: int = 720
    focal: float = 1000.0
    point_count: int = 5000
    outlier_fraction: float = 0.3
    pixel_noise: float = 0.5
    unlinked_per_image: int = 20
    max_depth: float = 60.0
    queries: tuple[QuerySpec, ...] = DEFAULT_QUERIES

    def __post_init__(self):
        object.__setattr__(self, "road", tuple(tuple(map(float, p)) for p in self.road))
        object.__setattr__(self, "sidewalk", tuple(tuple(map(float, p)) for p in self.sidewalk))
        object.__setattr__(self, "plane_normal", tuple(float(c) for c in self.plane_normal))
        object.__setattr__(self, "run_lanes", tuple(float(c) for c in self.run_lanes))
        object.__setattr__(self, "queries", tuple(self.queries))
        self._validate()

    def _validate(self):
        def need(cond, msg):
            if not cond:
                raise InvalidSpec(msg)

        need(len(self.plane_normal) == 3 and np.linalg.norm(self.plane_normal) > 0, "plane normal must be nonzero")
        need(self.units_per_meter > 0, "units_per_meter must be positive")
        for label, poly in (("road", self.road), ("sidewalk", self.sidewalk)):
            need(len(poly) >= 3, f"{label} polygon needs at least 3 vertices")
            p = Polygon(poly)
            need(p.is_valid and p.exterior.is_simple and p.area > 0, f"{label} polygon is not simple")
        need(Polygon(self.road).intersection(Polygon(self.sidewalk)).area <= 1e-9, "road and sidewalk overlap")
        need(self.runs >= 1 and self.images_per_run >= 1, "need at least one run and one image per run")
        need(self.runs * self.images_per_run >= 2, "need at least two reference images")
        need(len(self.run_lanes) >= 1, "run_lanes must not be empty")
        need(self.width > 0 and self.height > 0 and self.focal > 0, "image size and focal must be positive")
        need(self.camera_height > 0 and self.verge_width > BESIDE_GAP_M, "camera height and verge must be positive")
        need(0 < self.pitch_deg < 80, "pitch must be in (0, 80) degrees")
        need(self.point_count >= 10, "need at least 10 points")
        need(0.0 <= self.outlier_fraction < 1.0, "outlier_fraction must be in [0, 1)")
        need(self.pixel_noise >= 0 and self.unlinked_per_image >= 0, "noise and unlinked count must be >= 0")
        need(self.max_depth > MIN_DEPTH_M, "max_depth too small")
        names = [q.name for q in self.queries]
        need(len(set(names)) == len(names), "query names must be unique")
        for q in self.queries:
            need(q.category is None or q.category in CATEGORIES, f"{q.name}: unknown category {q.category!r}")
            need(not q.name.startswith("run"), f"{q.name}: query names must not start with 'run'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["queries"] = [q.to_dict() for q in self.queries]
        d["road"] = [list(p) for p in self.road]
        d["sidewalk"] = [list(p) for p in self.sidewalk]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown spec fields: {sorted(unknown)}")
        if "queries" in d:
            d["queries"] = tuple(QuerySpec.from_dict(q) for q in d["queries"])
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(str(exc)) from None

    @classmethod
    def load(cls, path) -> "SceneSpec":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise InvalidSpec(f"{path}: spec must be a JSON object")
        return cls.from_dict(doc)


# ---------------------------------------------------------------------------
# scene geometry
# ---------------------------------------------------------------------------


class _Ground:
    """World <-> ground-meter conversions for the spec's plane."""

    def __init__(self, spec: SceneSpec):
        n = np.asarray(spec.plane_normal, dtype=float)
        self.n = n / np.linalg.norm(n)
        helper = np.array([1.0, 0.0, 0.0]) if abs(self.n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = helper - (helper @ self.n) * self.n
        self.e1 = e1 / np.linalg.norm(e1)
        self.e2 = np.cross(self.n, self.e1)
        self.offset = float(spec.plane_offset)
        self.origin = self.offset * self.n
        self.s = float(spec.units_per_meter)

    def to_world(self, u, v, h=0.0) -> np.ndarray:
        u, v, h = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(h, float))
        return self.origin + self.s * (u[..., None] * self.e1 + v[..., None] * self.e2 + h[..., None] * self.n)

    def to_ground(self, xyz) -> tuple[np.ndarray, np.ndarray]:
        d = (np.asarray(xyz, float) - self.origin) / self.s
        return d @ self.e1, d @ self.e2


@dataclass(frozen=True)
class _Shot:
    name: str
    role: str
    u: float
    v: float
    yaw_deg: float
    qvec: tuple[float, float, float, float]
    tvec: tuple[float, float, float]


def _make_shot(g: _Ground, spec: SceneSpec, name: str, role: str, u: float, v: float, yaw_deg: float) -> _Shot:
    psi, theta = math.radians(yaw_deg), math.radians(spec.pitch_deg)
    fwd = math.cos(psi) * g.e2 + math.sin(psi) * g.e1
    right = math.cos(psi) * g.e1 - math.sin(psi) * g.e2
    z_c = math.cos(theta) * fwd - math.sin(theta) * g.n
    x_c = right
    y_c = np.cross(z_c, x_c)
    qvec = quaternion_from_rotation(np.vstack([x_c, y_c, z_c]))
    # rebuild R from the stored quaternion so the written pose is self-consistent
    R = rotation_from_quaternion(qvec)
    C = g.to_world(u, v, spec.camera_height)
    t = -R @ C
    return _Shot(name, role, float(u), float(v), float(yaw_deg), qvec, tuple(float(c) for c in t))


def _intrinsics(spec: SceneSpec) -> CameraIntrinsics:
    return CameraIntrinsics(
        1, "PINHOLE", spec.width, spec.height, (spec.focal, spec.focal, spec.width / 2.0, spec.height / 2.0)
    )


def _bounds(poly) -> tuple[float, float, float, float]:
    return Polygon(poly).bounds


def _verges(spec: SceneSpec) -> tuple[Polygon, Polygon]:
    _, v0, _, v1 = _bounds(spec.sidewalk)
    sw_umax = _bounds(spec.sidewalk)[2]
    road_umin = _bounds(spec.road)[0]
    outer = box(sw_umax, v0, sw_umax + spec.verge_width, v1)
    inner = box(road_umin - spec.verge_width, v0, road_umin, v1)
    return outer, inner


def snow_polygon(spec: SceneSpec, scenario: SnowScenario):
    """Ground-frame region labeled snow for a scenario, or None."""
    if scenario.kind == "none":
        return None
    sidewalk = Polygon(spec.sidewalk)
    umin, v0, umax, v1 = sidewalk.bounds
    outer, inner = _verges(spec)
    if scenario.kind == "beside":
        return shapely.union_all(
            [
                box(umax + BESIDE_GAP_M, v0, umax + spec.verge_width, v1),
                box(inner.bounds[0], v0, inner.bounds[2] - BESIDE_GAP_M, v1),
            ]
        )
    parts = [outer]
    if scenario.fraction > 0:
        cut = umax - scenario.fraction * (umax - umin)
        parts.append(sidewalk.intersection(box(cut, v0 - 1.0, umax + 1.0, v1 + 1.0)))
    return shapely.union_all(parts)


def _sample_in(poly: Polygon, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples inside a polygon by bounding-box rejection."""
    u0, v0, u1, v1 = poly.bounds
    out = np.empty((0, 2))
    while len(out) < count:
        cand = rng.uniform((u0, v0), (u1, v1), size=(2 * (count - len(out)) + 8, 2))
        out = np.vstack([out, cand[shapely.contains_xy(poly, cand[:, 0], cand[:, 1])]])
    return out[:count]


def _scene_points(spec: SceneSpec, g: _Ground, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Candidate 3D points and a per-point region code (0 clutter, 1 road, 2 sidewalk, 3 terrain)."""
    n_out = int(round(spec.outlier_fraction * spec.point_count))
    n_in = spec.point_count - n_out
    n_road = int(round(0.45 * n_in))
    n_side = int(round(0.35 * n_in))
    n_terr = n_in - n_road - n_side
    road, side = Polygon(spec.road), Polygon(spec.sidewalk)
    outer, _ = _verges(spec)
    uv = [_sample_in(road, n_road, rng), _sample_in(side, n_side, rng), _sample_in(outer, n_terr, rng)]
    h = [np.zeros(n_road), np.zeros(n_side), np.zeros(n_terr)]
    # clutter: signs, poles, vehicles hanging over the road well above the plane
    uv.append(_sample_in(road, n_out, rng))
    h.append(rng.uniform(0.4, 0.87, size=n_out) * spec.camera_height)
    codes = np.concatenate([np.full(n_road, 1), np.full(n_side, 2), np.full(n_terr, 3), np.zeros(n_out, int)])
    uv = np.vstack(uv)
    xyz = g.to_world(uv[:, 0], uv[:, 1], np.concatenate(h))
    order = rng.permutation(len(xyz))
    return xyz[order], codes[order]


def _project(K: np.ndarray, shot: _Shot, xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    R = rotation_from_quaternion(shot.qvec)
    cam = xyz @ R.T + np.asarray(shot.tvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        uvw = cam @ K.T
        px = uvw[:, :2] / uvw[:, 2:3]
    return px, cam[:, 2]


def _ground_of_pixels(spec: SceneSpec, shot: _Shot):
    """Ground coordinates hit by every pixel-center ray; ``valid`` marks rays that reach the plane.

    The ray/plane intersection of a pixel is a projective map of its
    coordinates, so it is evaluated as one homography over the grid.
    """
    g = _Ground(spec)
    K = _intrinsics(spec).K
    R = rotation_from_quaternion(shot.qvec)
    H = image_to_ground_homography(spec, shot)
    # a ray descends toward the plane iff n . (R^T K^-1 p) < 0, which is affine in the pixel
    a, b, c = g.n @ R.T @ np.linalg.inv(K)
    x = np.arange(spec.width) + 0.5
    y = (np.arange(spec.height) + 0.5)[:, None]
    w = H[2, 0] * x + H[2, 1] * y + H[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (H[0, 0] * x + H[0, 1] * y + H[0, 2]) / w
        v = (H[1, 0] * x + H[1, 1] * y + H[1, 2]) / w
    valid = (a * x + b * y + c < 0) & np.isfinite(u) & np.isfinite(v)
    return u, v, valid


def _region_mask(poly, u: np.ndarray, v: np.ndarray, valid: np.ndarray) -> np.ndarray:
    mask = np.zeros(u.shape, dtype=bool)
    if poly is None or poly.is_empty:
        return mask
    u0, v0, u1, v1 = poly.bounds
    cand = valid & (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)
    mask[cand] = shapely.contains_xy(poly, u[cand], v[cand])
    return mask


def image_to_ground_homography(spec: SceneSpec, shot: _Shot) -> np.ndarray:
    """Exact pixel -> ground-meter homography for a shot, scaled so ``H[2, 2] = 1``."""
    g = _Ground(spec)
    K = _intrinsics(spec).K
    R = rotation_from_quaternion(shot.qvec)
    t = np.asarray(shot.tvec)
    ground_to_image = K @ np.column_stack([g.s * R @ g.e1, g.s * R @ g.e2, R @ g.origin + t])
    H = np.linalg.inv(ground_to_image)
    return H / H[2, 2]


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticBundle:
    spec: SceneSpec
    reference_model: SparseModel
    augmented_model: SparseModel
    rasters: dict[str, LabelRaster]
    manifest: dict
    ground_truth: dict
    shots: dict[str, _Shot] = field(repr=False)
    sidewalk_masks: dict[str, np.ndarray] = field(repr=False)  # query name -> true sidewalk pixels

    @property
    def query_names(self) -> list[str]:
        return [q.name for q in self.spec.queries]

    @property
    def reference_names(self) -> list[str]:
        return [s.name for s in self.shots.values() if s.role == "reference"]


def _to_gps(u_m: float, v_m: float) -> tuple[float, float]:
    lat = ORIGIN_LAT + math.degrees(v_m / _EARTH_RADIUS_M)
    lon = ORIGIN_LON + math.degrees(u_m / (_EARTH_RADIUS_M * math.cos(math.radians(ORIGIN_LAT))))
    return lat, lon


def _shots(spec: SceneSpec, g: _Ground, rng: np.random.Generator) -> list[_Shot]:
    shots = []
    for r in range(spec.runs):
        lane = spec.run_lanes[r % len(spec.run_lanes)]
        for i in range(spec.images_per_run):
            u = lane + rng.normal(0.0, spec.lateral_jitter)
            v = i * spec.image_spacing + rng.normal(0.0, 0.05 * spec.image_spacing)
            yaw = rng.normal(0.0, spec.yaw_jitter_deg)
            shots.append(_make_shot(g, spec, f"run{r}_{i:03d}.png", "reference", u, v, yaw))
    for q in spec.queries:
        shots.append(_make_shot(g, spec, q.name, "query", q.lateral, q.along, q.yaw_deg))
    return shots


def _colors(codes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    base = np.array([[150, 60, 40], [90, 90, 95], [190, 185, 175], [70, 120, 50]])
    jitter = rng.integers(-20, 21, size=(len(codes), 3))
    return np.clip(base[codes] + jitter, 0, 255)


def generate(spec: SceneSpec = SceneSpec()) -> SyntheticBundle:
    """Build a complete synthetic scene. Identical specs give identical bundles.

    Raises:
        InvalidSpec: if the spec produces fewer than 10 points seen by two references.
    """
    g = _Ground(spec)
    intr = _intrinsics(spec)
    K = intr.K
    rng = np.random.default_rng(spec.seed)
    shots = _shots(spec, g, rng)
    xyz, codes = _scene_points(spec, g, rng)
    colors = _colors(codes, rng)

    s = g.s
    min_depth, max_depth = MIN_DEPTH_M * s, spec.max_depth * s
    seen, noisy_px, depths = [], [], []
    for shot in shots:
        px, depth = _project(K, shot, xyz)
        ok = (depth > min_depth) & (depth <= max_depth)
        ok &= (px[:, 0] >= 0) & (px[:, 0] < spec.width) & (px[:, 1] >= 0) & (px[:, 1] < spec.height)
        noisy = px.copy()
        idx = np.flatnonzero(ok)
        noisy[idx] += rng.normal(0.0, spec.pixel_noise, size=(len(idx), 2)) if spec.pixel_noise > 0 else 0.0
        ok &= (noisy[:, 0] >= 0) & (noisy[:, 0] < spec.width) & (noisy[:, 1] >= 0) & (noisy[:, 1] < spec.height)
        seen.append(ok)
        noisy_px.append(noisy)
        depths.append(depth)
    seen = np.array(seen)
    is_ref = np.array([sh.role == "reference" for sh in shots])
    keep = seen[is_ref].sum(axis=0) >= 2
    if keep.sum() < 10:
        raise InvalidSpec("fewer than 10 scene points are seen by two reference images")

    # stored points carry triangulation-scale error: sigma * depth / focal
    ref_depth = np.where(seen[is_ref], np.array(depths)[is_ref], 0.0).sum(axis=0) / np.maximum(
        seen[is_ref].sum(axis=0), 1
    )
    sigma3d = spec.pixel_noise * ref_depth / spec.focal
    stored = xyz + rng.normal(size=xyz.shape) * sigma3d[:, None] if spec.pixel_noise > 0 else xyz
    residual = []
    for k, shot in enumerate(shots):
        px, _ = _project(K, shot, stored)
        residual.append(np.where(seen[k], np.linalg.norm(noisy_px[k] - px, axis=1), 0.0))
    new_id = np.zeros(len(xyz), dtype=np.int64)
    new_id[keep] = np.arange(1, keep.sum() + 1)

    unlinked = [
        rng.uniform((0, 0), (spec.width, spec.height), size=(spec.unlinked_per_image, 2)) for _ in shots
    ]

    def build(include_queries: bool) -> SparseModel:
        images, tracks = {}, {}
        image_id = 0
        for k, shot in enumerate(shots):
            if shot.role == "query" and not include_queries:
                continue
            image_id += 1
            obs = []
            for j in np.flatnonzero(seen[k] & keep):
                pid = int(new_id[j])
                tracks.setdefault(pid, []).append((image_id, len(obs)))
                obs.append(Observation(float(noisy_px[k][j, 0]), float(noisy_px[k][j, 1]), pid))
            for x, y in unlinked[k]:
                obs.append(Observation(float(x), float(y), None))
            images[image_id] = ImageRecord(image_id, shot.name, shot.qvec, shot.tvec, 1, tuple(obs))
        points = {}
        mask = seen[is_ref | include_queries]
        res = np.array(residual)[is_ref | include_queries]
        for j in np.flatnonzero(keep):
            pid = int(new_id[j])
            err = float(res[mask[:, j], j].max())
            points[pid] = ScenePoint(
                pid, tuple(float(c) for c in stored[j]), tuple(int(c) for c in colors[j]), err, tuple(tracks[pid])
            )
        model = SparseModel({1: intr}, images, points)
        model.validate()
        return model

    reference_model = build(False)
    augmented_model = build(True)

    road, side = Polygon(spec.road), Polygon(spec.sidewalk)
    shapely.prepare(road)
    shapely.prepare(side)
    scenarios = {q.name: q.scenario for q in spec.queries}
    rasters, sidewalk_masks, coverage = {}, {}, {}
    for shot in shots:
        u, v, valid = _ground_of_pixels(spec, shot)
        labels = np.zeros((spec.height, spec.width), dtype=np.uint8)
        labels[_region_mask(road, u, v, valid)] = 1
        sw = _region_mask(side, u, v, valid)
        labels[sw] = 2
        if shot.role == "query":
            snow = _region_mask(snow_polygon(spec, scenarios[shot.name]), u, v, valid)
            labels[snow] = 3
            sidewalk_masks[shot.name] = sw
            total = int(sw.sum())
            coverage[shot.name] = float((sw & snow).sum() / total) if total else 0.0
        rasters[shot.name] = LabelRaster(labels)

    shot_map = {sh.name: sh for sh in shots}
    manifest = _manifest(spec, shots)
    ground_truth = {
        "plane": {"normal": g.n.tolist(), "offset": g.offset},
        "units_per_meter": s,
        "ground_basis": {"origin": g.origin.tolist(), "e1": g.e1.tolist(), "e2": g.e2.tolist()},
        "image_to_ground": {sh.name: image_to_ground_homography(spec, sh).tolist() for sh in shots},
        "true_coverage": coverage,
        "snow": {name: str(sc) for name, sc in scenarios.items()},
    }
    return SyntheticBundle(
        spec, reference_model, augmented_model, rasters, manifest, ground_truth, shot_map, sidewalk_masks
    )


def _manifest(spec: SceneSpec, shots: list[_Shot]) -> dict:
    refs = [(sh.u, sh.v) for sh in shots if sh.role == "reference"]
    cu, cv = np.mean(refs, axis=0)
    radius = max(math.hypot(u - cu, v - cv) for u, v in refs) + GPS_MARGIN_M
    categories = {q.name: q for q in spec.queries}
    images = []
    for sh in shots:
        entry = {"name": sh.name, "role": sh.role}
        shift = categories[sh.name].gps_shift_m if sh.role == "query" else 0.0
        entry["lat"], entry["lon"] = _to_gps(sh.u, sh.v + shift)
        entry["raster"] = f"rasters/{Path(sh.name).stem}.pgm"
        if sh.role == "query" and categories[sh.name].category is not None:
            entry["category"] = categories[sh.name].category
        images.append(entry)
    lat, lon = _to_gps(float(cu), float(cv))
    return {"scene": {"scene_id": spec.scene_id, "centroid": [lat, lon], "radius_m": radius}, "images": images}


def true_coverage(bundle: SyntheticBundle, name: str) -> float:
    """Fraction of the query's true sidewalk pixels that are labeled snow.

    Both pixel sets come from casting pixel-center rays onto the known ground
    polygons, not from the estimated model.

    Raises:
        UnknownQuery: ``name`` is not a query of the bundle.
    """
    try:
        return bundle.ground_truth["true_coverage"][name]
    except KeyError:
        raise UnknownQuery(name) from None


def _clip_front(poly: Polygon, a: float, b: float, c: float) -> Polygon:
    """Part of a convex-or-not polygon where ``a*u + b*v + c >= 0`` (Sutherland-Hodgman)."""
    pts = list(poly.exterior.coords)[:-1]
    out = []
    for i, p in enumerate(pts):
        q = pts[(i + 1) % len(pts)]
        fp, fq = a * p[0] + b * p[1] + c, a * q[0] + b * q[1] + c
        if fp >= 0:
            out.append(p)
        if (fp >= 0) != (fq >= 0):
            w = fp / (fp - fq)
            out.append((p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1])))
    return Polygon(out) if len(out) >= 3 else Polygon()


def analytic_coverage(bundle: SyntheticBundle, name: str) -> float:
    """Continuous counterpart of :func:`true_coverage` from image-space polygon areas."""
    if name not in bundle.ground_truth["true_coverage"]:
        raise UnknownQuery(name)
    spec = bundle.spec
    shot = bundle.shots[name]
    g = _Ground(spec)
    R = rotation_from_quaternion(shot.qvec)
    t = np.asarray(shot.tvec)
    G = np.linalg.inv(np.asarray(bundle.ground_truth["image_to_ground"][name]))
    # camera depth of ground point (u, v) is affine in (u, v)
    a, b = g.s * (R @ g.e1)[2], g.s * (R @ g.e2)[2]
    c = (R @ g.origin + t)[2] - MIN_DEPTH_M * 1e-3 * g.s
    frame = box(0, 0, spec.width, spec.height)

    def to_image(poly):
        if poly is None or poly.is_empty:
            return Polygon()
        pieces = []
        for part in getattr(poly, "geoms", [poly]):
            clipped = _clip_front(part, a, b, c)
            if clipped.is_empty:
                continue
            uv = np.asarray(clipped.exterior.coords)
            # a homography maps straight edges to straight edges, so vertices suffice
            p = np.column_stack([uv, np.ones(len(uv))]) @ G.T
            pieces.append(Polygon(p[:, :2] / p[:, 2:3]).buffer(0))
        return shapely.union_all(pieces).intersection(frame) if pieces else Polygon()

    side = to_image(Polygon(spec.sidewalk))
    if side.area == 0:
        return 0.0
    snow = to_image(snow_polygon(spec, SnowScenario.parse(bundle.ground_truth["snow"][name])))
    return float(side.intersection(snow).area / side.area)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def _g(x: float) -> str:
    return format(float(x), ".17g")


def write_sparse_model(m: SparseModel, out_dir) -> None:
    """Write ``cameras.txt``, ``images.txt`` and ``points3D.txt`` in the sparse text format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = [
        "# Camera list with one line of data per camera:",
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
        f"# Number of cameras: {len(m.cameras)}",
    ]
    for cid in sorted(m.cameras):
        c = m.cameras[cid]
        lines.append(" ".join([str(cid), c.model_kind, str(c.width), str(c.height), *map(_g, c.params)]))
    (out / "cameras.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    n_obs = sum(len(im.observations) for im in m.images.values())
    mean_obs = n_obs / len(m.images) if m.images else 0.0
    lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
        f"# Number of images: {len(m.images)}, mean observations per image: {mean_obs:g}",
    ]
    for iid in sorted(m.images):
        im = m.images[iid]
        lines.append(" ".join([str(iid), *map(_g, im.qvec), *map(_g, im.tvec), str(im.camera_id), im.name]))
        lines.append(
            " ".join(
                f"{_g(o.x)} {_g(o.y)} {-1 if o.point3d_id is None else o.point3d_id}" for o in im.observations
            )
        )
    (out / "images.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    n_track = sum(len(p.track) for p in m.points.values())
    mean_track = n_track / len(m.points) if m.points else 0.0
    lines = [
        "# 3D point list with one line of data per point:",
        "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)",
        f"# Number of points: {len(m.points)}, mean track length: {mean_track:g}",
    ]
    for pid in sorted(m.points):
        p = m.points[pid]
        track = " ".join(f"{i} {j}" for i, j in p.track)
        lines.append(
            " ".join([str(pid), *map(_g, p.xyz), *map(str, p.color), _g(p.reproj_error)]) + (f" {track}" if track else "")
        )
    (out / "points3D.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _dump_json(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_bundle(bundle: SyntheticBundle, out_dir) -> Path:
    """Lay a bundle out on disk.

    Layout::

        sparse/        reference images only (clear-weather reconstruction)
        augmented/     references plus registered queries
        rasters/*.pgm  label rasters
        manifest.json
        ground_truth.json
        spec.json
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sparse_model(bundle.reference_model, out / "sparse")
    write_sparse_model(bundle.augmented_model, out / "augmented")
    (out / "rasters").mkdir(exist_ok=True)
    for entry in bundle.manifest["images"]:
        write_label_raster(bundle.rasters[entry["name"]], out / entry["raster"])
    _dump_json(bundle.manifest, out / "manifest.json")
    _dump_json(bundle.ground_truth, out / "ground_truth.json")
    _dump_json(bundle.spec.to_dict(), out / "spec.json")
    return out
