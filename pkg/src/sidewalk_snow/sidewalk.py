"""Build and persist the expected-sidewalk model of a scene.

The model is learned from clear-weather reference images: road-linked 3D points
give a ground plane, each reference image gets an image-to-ground homography from
its road correspondences, and the near-side sidewalk pixels are pushed through
that homography onto the plane.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .colmap import SparseModel, linked_observations
from .geometry import Homography, PlaneModel, RigidTransform
from .masks import Category, LabelRaster, PixelSet, category_pixels, right_side_filter

logger = logging.getLogger(__name__)

FORMAT_MAGIC = "SIDEWALK_MODEL"
FORMAT_VERSION = "v1"


class SidewalkModelError(RuntimeError):
    pass


class NoCorrespondences(SidewalkModelError):
    pass


class PlaneFitFailed(SidewalkModelError):
    pass


class HomographyFailed(SidewalkModelError):
    def __init__(self, image: str, reason: str):
        super().__init__(f"homography for {image} failed: {reason}")
        self.image = image


class ModelEmpty(SidewalkModelError):
    pass


class ModelFileError(ValueError):
    """Base class for unreadable sidewalk model files."""


class MalformedModelFile(ModelFileError):
    pass


class VersionMismatch(ModelFileError):
    pass


class ChecksumMismatch(ModelFileError):
    pass


@dataclass(frozen=True)
class SceneDescriptor:
    scene_id: str
    gps_centroid: tuple[float, float]
    gps_radius_m: float
    reference_names: tuple[str, ...] = ()

    def __post_init__(self):
        lat, lon = (float(v) for v in self.gps_centroid)
        if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
            raise ValueError(f"invalid GPS centroid ({lat}, {lon})")
        if not self.gps_radius_m > 0:
            raise ValueError("gps_radius_m must be positive")
        object.__setattr__(self, "gps_centroid", (lat, lon))
        object.__setattr__(self, "gps_radius_m", float(self.gps_radius_m))
        object.__setattr__(self, "reference_names", tuple(self.reference_names))


@dataclass(frozen=True)
class BuildParams:
    seed: int = 42
    plane_threshold: float | None = None  # None: 1% of the candidate bounding-box diagonal
    plane_iterations: int = 1000
    stride: int = 2
    keep_side: str = "right"
    homography_threshold: float = 3.0  # pixels
    homography_iterations: int = 2000

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.keep_side not in ("right", "left"):
            raise ValueError("keep_side must be 'right' or 'left'")
        if self.plane_threshold is not None and not self.plane_threshold > 0:
            raise ValueError("plane_threshold must be positive")


@dataclass(frozen=True, eq=False)
class SidewalkModel:
    scene: SceneDescriptor
    plane: PlaneModel
    reorient: RigidTransform
    points: np.ndarray  # (N, 2) ground-frame x, y; z = 0 implied
    source_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("sidewalk points must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "source_counts", dict(self.source_counts))

    def __eq__(self, other):
        if not isinstance(other, SidewalkModel):
            return NotImplemented
        return (
            self.scene == other.scene
            and self.plane == other.plane
            and self.reorient == other.reorient
            and np.array_equal(self.points, other.points)
            and self.source_counts == other.source_counts
        )

    def points_3d(self) -> np.ndarray:
        """Stored points lifted back into the reconstruction frame."""
        lifted = np.column_stack([self.points, np.zeros(len(self.points))])
        return self.reorient.apply_inverse(lifted)


def _pixel_index(pixels: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cols = np.floor(pixels[:, 0]).astype(np.int64)
    rows = np.floor(pixels[:, 1]).astype(np.int64)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    return cols, rows, inside


def _in_mask(pixels: np.ndarray, s: PixelSet) -> np.ndarray:
    cols, rows, inside = _pixel_index(pixels, s.width, s.height)
    hit = np.zeros(len(pixels), dtype=bool)
    hit[inside] = s.mask[rows[inside], cols[inside]]
    return hit


def _reference_ids(model: SparseModel, rasters: dict[str, LabelRaster], scene: SceneDescriptor) -> list[tuple[str, int]]:
    names = scene.reference_names or tuple(rasters)
    refs = []
    for name in sorted(names):
        if name not in rasters:
            raise KeyError(f"no label raster for reference image {name!r}")
        refs.append((name, model.image_by_name(name).image_id))
    return refs


def road_point_candidates(model: SparseModel, image_roads) -> tuple[np.ndarray, np.ndarray]:
    """Pool the 3D points observed at road pixels in any of the given images.

    Args:
        image_roads: iterable of ``(image_id, road PixelSet)``.

    Returns:
        ``(ids, xyz)`` sorted by point id.
    """
    ids = set()
    for image_id, road in image_roads:
        pixels, point_ids, _ = linked_observations(model, image_id)
        ids.update(point_ids[_in_mask(pixels, road)].tolist())
    ordered = np.array(sorted(ids), dtype=np.int64)
    xyz = np.array([model.points[i].xyz for i in ordered], dtype=float).reshape(-1, 3)
    return ordered, xyz


def estimate_ground_frame(
    model: SparseModel, image_roads, params: BuildParams = BuildParams()
) -> tuple[PlaneModel, RigidTransform]:
    """Fit the scene ground plane and the re-orientation that puts it at z = 0.

    The normal sign is chosen so most of the given cameras sit above the plane.
    """
    image_roads = list(image_roads)
    ids, xyz = road_point_candidates(model, image_roads)
    try:
        plane = geometry.fit_plane_ransac(
            ids, xyz, params.plane_threshold, iterations=params.plane_iterations, seed=params.seed
        )
    except geometry.GeometryError as exc:
        raise PlaneFitFailed(f"{len(ids)} road-linked points: {exc}") from exc
    centers = np.array([geometry.camera_center(model.images[i].qvec, model.images[i].tvec) for i, _ in image_roads])
    plane = geometry.orient_plane_toward(plane, centers)
    return plane, geometry.reorientation_for_plane(plane)


def ground_correspondences(
    model: SparseModel, image_id: int, road: PixelSet, plane: PlaneModel, reorient: RigidTransform
) -> tuple[np.ndarray, np.ndarray]:
    """Road pixels of one image paired with the in-plane coordinates of their 3D points.

    Only observations that fall in ``road`` and link to a plane inlier are kept.

    Returns:
        ``(pixels (N, 2), ground_xy (N, 2))``.

    Raises:
        NoCorrespondences: when fewer than 4 pairs remain.
    """
    pixels, point_ids, xyz = linked_observations(model, image_id)
    keep = _in_mask(pixels, road) & np.isin(point_ids, list(plane.inlier_ids))
    if np.count_nonzero(keep) < 4:
        raise NoCorrespondences(f"image {image_id}: {np.count_nonzero(keep)} road correspondences on the plane")
    ground = reorient.apply(xyz[keep])
    return pixels[keep], ground[:, :2]


def sidewalk_sample_pixels(raster: LabelRaster, stride: int, keep_side: str) -> np.ndarray:
    """Pixel centers of the near-side sidewalk, subsampled on a ``stride`` grid."""
    near = right_side_filter(category_pixels(raster, Category.SIDEWALK), keep_side)
    grid = np.zeros_like(near.mask)
    grid[::stride, ::stride] = True
    ys, xs = np.nonzero(near.mask & grid)
    return np.column_stack([xs, ys]).astype(float) + 0.5


def project_reference_image(
    model: SparseModel,
    image_id: int,
    raster: LabelRaster,
    plane: PlaneModel,
    reorient: RigidTransform,
    params: BuildParams = BuildParams(),
) -> tuple[np.ndarray, Homography]:
    """Map one reference image's near-side sidewalk onto the ground frame.

    Returns:
        ``(ground_xy (M, 2), homography)``.

    Raises:
        HomographyFailed: too few or degenerate road correspondences.
    """
    image = model.images[image_id]
    road = category_pixels(raster, Category.ROAD)
    try:
        src, dst = ground_correspondences(model, image_id, road, plane, reorient)
        H, _ = geometry.estimate_homography(
            src, dst, params.homography_threshold, iterations=params.homography_iterations, seed=params.seed
        )
    except (NoCorrespondences, geometry.GeometryError) as exc:
        raise HomographyFailed(image.name, str(exc)) from exc

    pixels = sidewalk_sample_pixels(raster, params.stride, params.keep_side)
    ground, finite = H.apply(pixels)
    ground = ground[finite]
    # a pixel above the horizon maps to the plane behind the camera
    lifted = reorient.apply_inverse(np.column_stack([ground, np.zeros(len(ground))]))
    R = geometry.rotation_from_quaternion(image.qvec)
    depth = lifted @ R[2] + image.tvec[2]
    return ground[depth > geometry.BEHIND_EPS], H


def build_sidewalk_model(
    model: SparseModel,
    rasters: dict[str, LabelRaster],
    scene: SceneDescriptor,
    params: BuildParams = BuildParams(),
) -> SidewalkModel:
    """Learn the expected sidewalk locations of a scene.

    Reference images are those named in ``scene.reference_names`` (all rasters
    when empty) and are processed in name order. Images whose homography cannot
    be estimated are logged and contribute zero points.

    Raises:
        PlaneFitFailed: the pooled road points do not support a plane.
        ModelEmpty: no image contributed any sidewalk point.
    """
    refs = _reference_ids(model, rasters, scene)
    roads = [(image_id, category_pixels(rasters[name], Category.ROAD)) for name, image_id in refs]
    plane, reorient = estimate_ground_frame(model, roads, params)

    chunks, counts = [], {}
    for name, image_id in refs:
        try:
            ground, _ = project_reference_image(model, image_id, rasters[name], plane, reorient, params)
        except HomographyFailed as exc:
            logger.warning("skipping %s: %s", name, exc)
            ground = np.empty((0, 2))
        chunks.append(ground)
        counts[name] = len(ground)

    points = np.concatenate(chunks) if chunks else np.empty((0, 2))
    if len(points) == 0:
        raise ModelEmpty("no reference image contributed sidewalk points")
    return SidewalkModel(scene, plane, reorient, points, counts)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps_model(m: SidewalkModel) -> str:
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        f"scene_id {json.dumps(m.scene.scene_id)}",
        f"gps_centroid {_floats(m.scene.gps_centroid)}",
        f"gps_radius_m {m.scene.gps_radius_m!r}",
        f"references {len(m.scene.reference_names)}",
        *(json.dumps(name) for name in m.scene.reference_names),
        f"plane_normal {_floats(m.plane.normal)}",
        f"plane_offset {m.plane.offset!r}",
        f"plane_threshold {float(m.plane.inlier_threshold)!r}",
        f"plane_inliers {len(m.plane.inlier_ids)} " + " ".join(str(i) for i in sorted(m.plane.inlier_ids)),
        f"rotation {_floats(m.reorient.rotation.ravel())}",
        f"translation {_floats(m.reorient.translation)}",
        f"sources {len(m.source_counts)}",
        *(f"{count} {json.dumps(name)}" for name, count in m.source_counts.items()),
        f"points {len(m.points)}",
    ]
    body = "\n".join(lines) + "\n" + "".join(f"{x!r} {y!r}\n" for x, y in m.points.tolist())
    crc = zlib.crc32(body.encode("utf-8"))
    return body + f"crc32 {crc:08x}\n"


def save_model(m: SidewalkModel, path) -> None:
    Path(path).write_text(dumps_model(m), encoding="utf-8")


class _Lines:
    def __init__(self, lines: list[str]):
        self.lines = lines
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise MalformedModelFile("unexpected end of file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def keyed(self, key: str) -> str:
        line = self.next()
        head, _, rest = line.partition(" ")
        if head != key:
            raise MalformedModelFile(f"line {self.pos}: expected {key!r}, found {head!r}")
        return rest


def loads_model(text: str) -> SidewalkModel:
    first, _, _ = text.partition("\n")
    magic, _, version = first.partition(" ")
    if magic != FORMAT_MAGIC:
        raise MalformedModelFile("not a sidewalk model file")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported model version {version!r}, expected {FORMAT_VERSION!r}")

    body, sep, trailer = text.rpartition("crc32 ")
    if not sep or not body.endswith("\n"):
        raise ChecksumMismatch("checksum line missing; file is truncated")
    try:
        stored = int(trailer.strip(), 16)
    except ValueError:
        raise ChecksumMismatch("unreadable checksum") from None
    if zlib.crc32(body.encode("utf-8")) != stored:
        raise ChecksumMismatch("body does not match stored CRC32")

    try:
        r = _Lines(body.split("\n"))
        r.next()
        scene_id = json.loads(r.keyed("scene_id"))
        lat, lon = (float(v) for v in r.keyed("gps_centroid").split())
        radius = float(r.keyed("gps_radius_m"))
        refs = tuple(json.loads(r.next()) for _ in range(int(r.keyed("references"))))
        normal = [float(v) for v in r.keyed("plane_normal").split()]
        offset = float(r.keyed("plane_offset"))
        threshold = float(r.keyed("plane_threshold"))
        inlier_fields = r.keyed("plane_inliers").split()
        inliers = [int(v) for v in inlier_fields[1:]]
        if len(inliers) != int(inlier_fields[0]):
            raise MalformedModelFile("plane inlier count does not match")
        rotation = np.array([float(v) for v in r.keyed("rotation").split()]).reshape(3, 3)
        translation = np.array([float(v) for v in r.keyed("translation").split()])
        counts = {}
        for _ in range(int(r.keyed("sources"))):
            count, _, name = r.next().partition(" ")
            counts[json.loads(name)] = int(count)
        n_points = int(r.keyed("points"))
        rest = r.lines[r.pos :]
        if rest and rest[-1] == "":
            rest = rest[:-1]
        if len(rest) != n_points:
            raise MalformedModelFile(f"expected {n_points} points, found {len(rest)}")
        points = np.array(" ".join(rest).split(), dtype=float).reshape(n_points, 2)

        # stored normal is already unit length; PlaneModel keeps it bit-exact
        plane = PlaneModel(np.array(normal), offset, frozenset(inliers), threshold)
        scene = SceneDescriptor(scene_id, (lat, lon), radius, refs)
        return SidewalkModel(scene, plane, RigidTransform(rotation, translation), points, counts)
    except (ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise MalformedModelFile(str(exc)) from exc


def load_model(path) -> SidewalkModel:
    """Read a model written by :func:`save_model`.

    Raises:
        OSError: unreadable path.
        VersionMismatch, ChecksumMismatch, MalformedModelFile.
    """
    return loads_model(Path(path).read_text(encoding="utf-8"))
