"""Classify a query image as Clear or Snow-covered against a sidewalk model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from . import geometry
from .colmap import CameraIntrinsics, SparseModel, UnknownImage
from .masks import Category, LabelRaster, PixelSet, category_pixels, overlap_ratio
from .sidewalk import SceneDescriptor, SidewalkModel

EARTH_RADIUS_M = 6371008.8
# slack on the inclusive GPS boundary, absorbs rounding between distance formulas
GPS_BOUNDARY_TOL_M = 1e-6

REFERENCE_WIDTH = 1920
REFERENCE_SPLAT_RADIUS = 2.0

OVERLAY_BACKGROUND, OVERLAY_PROJECTED, OVERLAY_SNOW, OVERLAY_OVERLAP = 0, 1, 2, 3


class EmptyProjection(RuntimeError):
    """No stored sidewalk point lands inside the query frame."""


class UnregisteredQuery(LookupError):
    """The query image has no pose in the augmented reconstruction."""

    def __init__(self, name: str):
        super().__init__(f"query {name!r} is not registered in the augmented model")
        self.name = name


class Outcome(str, Enum):
    OUT_OF_SCENE = "OutOfScene"
    NO_SNOW = "NoSnow"
    CLEAR = "Clear"
    SNOW_COVERED = "SnowCovered"

    @property
    def is_alert(self) -> bool:
        return self is Outcome.SNOW_COVERED

    @property
    def label(self) -> str:
        """Two-class reading: NoSnow counts as Clear."""
        return Outcome.CLEAR.value if self is Outcome.NO_SNOW else self.value


def haversine_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def gps_gate(gps: tuple[float, float], scene: SceneDescriptor) -> bool:
    """True when ``gps`` lies within the scene radius of its centroid (boundary included)."""
    return haversine_m(gps, scene.gps_centroid) <= scene.gps_radius_m + GPS_BOUNDARY_TOL_M


def snow_present(raster: LabelRaster, min_fraction: float = 0.0) -> bool:
    if not 0.0 <= min_fraction < 1.0:
        raise ValueError("min_fraction must be in [0, 1)")
    snow = np.count_nonzero(raster.labels == Category.SNOW)
    return snow / raster.labels.size > min_fraction


def default_splat_radius(width: int) -> float:
    """2 px at 1920 columns, scaled with image width."""
    return REFERENCE_SPLAT_RADIUS * width / REFERENCE_WIDTH


def disc(radius: float) -> np.ndarray:
    """Discrete L2 disc: offsets with ``dx^2 + dy^2 <= radius^2``."""
    r = int(math.floor(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= radius * radius


@dataclass(frozen=True)
class QueryInput:
    name: str
    gps: tuple[float, float]
    qvec: tuple[float, float, float, float]
    tvec: tuple[float, float, float]
    intrinsics: CameraIntrinsics
    raster: LabelRaster

    def __post_init__(self):
        if (self.raster.width, self.raster.height) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError(
                f"query {self.name}: raster is {self.raster.width}x{self.raster.height}, "
                f"camera is {self.intrinsics.width}x{self.intrinsics.height}"
            )
        if not (np.all(np.isfinite(self.qvec)) and np.all(np.isfinite(self.tvec))):
            raise ValueError(f"query {self.name}: pose is not finite")


def query_from_model(augmented: SparseModel, name: str, gps: tuple[float, float], raster: LabelRaster) -> QueryInput:
    """Pull a query's pose and camera from the augmented model by exact image name.

    Raises:
        UnregisteredQuery: no image of that name was registered.
    """
    try:
        image = augmented.image_by_name(name)
    except UnknownImage:
        raise UnregisteredQuery(name) from None
    return QueryInput(name, gps, image.qvec, image.tvec, augmented.cameras[image.camera_id], raster)


@dataclass(frozen=True)
class ClassifyParams:
    splat_radius: float | None = None  # None: scaled from the image width
    min_snow_fraction: float = 0.0

    def radius_for(self, width: int) -> float:
        return default_splat_radius(width) if self.splat_radius is None else self.splat_radius


@dataclass(frozen=True, eq=False)
class Verdict:
    name: str
    outcome: Outcome
    coverage: float | None
    threshold: float
    projected_count: int = 0
    overlay: np.ndarray | None = None

    def __post_init__(self):
        has_coverage = self.outcome in (Outcome.CLEAR, Outcome.SNOW_COVERED)
        if (self.coverage is not None) != has_coverage:
            raise ValueError(f"coverage must be present exactly for Clear/SnowCovered, got {self.outcome}")
        if has_coverage and (self.outcome is Outcome.SNOW_COVERED) != (self.coverage > self.threshold):
            raise ValueError("outcome disagrees with coverage and threshold")


def project_sidewalk(m: SidewalkModel, q: QueryInput, splat_radius: float) -> PixelSet:
    """Render the stored sidewalk into the query view.

    Points behind the camera or outside the frame are dropped; every survivor
    is dilated by a disc of ``splat_radius`` pixels.

    Raises:
        EmptyProjection: when no point lands in the frame.
    """
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    w, h = q.intrinsics.width, q.intrinsics.height
    R = geometry.rotation_from_quaternion(q.qvec)
    pixels, in_front = geometry.project_points(q.intrinsics, R, q.tvec, m.points_3d())
    pixels = pixels[in_front]
    cols = np.floor(pixels[:, 0]).astype(np.int64)
    rows = np.floor(pixels[:, 1]).astype(np.int64)
    inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    if not inside.any():
        raise EmptyProjection(f"no sidewalk point of scene {m.scene.scene_id} projects into {q.name}")
    mask = np.zeros((h, w), dtype=bool)
    mask[rows[inside], cols[inside]] = True
    if splat_radius >= 1.0:
        mask = ndimage.binary_dilation(mask, structure=disc(splat_radius))
    return PixelSet(mask)


def render_overlay(projected: PixelSet | None, snow: PixelSet) -> np.ndarray:
    """Diagnostic codes: 0 background, 1 projected sidewalk, 2 snow, 3 overlap."""
    overlay = np.zeros(snow.mask.shape, dtype=np.uint8)
    overlay[snow.mask] = OVERLAY_SNOW
    if projected is not None:
        overlay[projected.mask] = OVERLAY_PROJECTED
        overlay[projected.mask & snow.mask] = OVERLAY_OVERLAP
    return overlay


@dataclass(frozen=True)
class Measurement:
    """Threshold-independent part of a classification."""

    outcome: Outcome | None  # OutOfScene / NoSnow, or None when coverage was measured
    coverage: float | None
    projected_count: int


def measure(m: SidewalkModel, q: QueryInput, params: ClassifyParams = ClassifyParams()) -> Measurement:
    if not gps_gate(q.gps, m.scene):
        return Measurement(Outcome.OUT_OF_SCENE, None, 0)
    if not snow_present(q.raster, params.min_snow_fraction):
        return Measurement(Outcome.NO_SNOW, None, 0)
    projected = project_sidewalk(m, q, params.radius_for(q.intrinsics.width))
    coverage = overlap_ratio(projected, category_pixels(q.raster, Category.SNOW))
    return Measurement(None, coverage, len(projected))


def decide(measurement: Measurement, threshold: float) -> Outcome:
    if measurement.outcome is not None:
        return measurement.outcome
    return Outcome.SNOW_COVERED if measurement.coverage > threshold else Outcome.CLEAR


def classify(
    m: SidewalkModel,
    q: QueryInput,
    threshold: float = 0.60,
    params: ClassifyParams = ClassifyParams(),
    overlay: bool = False,
) -> Verdict:
    """Run the GPS gate, snow gate, projection and coverage test for one query.

    An alert (SnowCovered) is raised only when coverage is strictly greater
    than ``threshold``.

    Raises:
        EmptyProjection: the model does not project into the query view.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    meas = measure(m, q, params)
    outcome = decide(meas, threshold)

    diag = None
    if overlay and outcome is not Outcome.OUT_OF_SCENE:
        snow = category_pixels(q.raster, Category.SNOW)
        try:
            projected = project_sidewalk(m, q, params.radius_for(q.intrinsics.width))
        except EmptyProjection:
            projected = None
        diag = render_overlay(projected, snow)
    return Verdict(q.name, outcome, meas.coverage, threshold, meas.projected_count, diag)
