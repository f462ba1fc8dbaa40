"""Reader for sparse reconstruction text models (cameras.txt, images.txt, points3D.txt).

Only the text layout is supported. Pixel coordinates follow the usual convention
where the upper-left pixel covers ``[0, 1) x [0, 1)`` and its center is ``(0.5, 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

# model name -> number of parameters
CAMERA_MODELS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4, "SIMPLE_RADIAL": 4}

MIN_IMAGES = 2
MIN_POINTS = 10

# quaternions further than this from unit norm are rejected outright
QUATERNION_REJECT_TOL = 1e-3
# quaternions closer than this are kept bit-for-bit so write/parse is stable
QUATERNION_KEEP_TOL = 1e-12


class ColmapError(ValueError):
    """Base class for sparse model ingestion errors."""


class MissingFile(ColmapError):
    def __init__(self, name: str):
        super().__init__(f"missing model file: {name}")
        self.name = name


class MalformedLine(ColmapError):
    def __init__(self, file: str, line: int, reason: str):
        super().__init__(f"{file}:{line}: {reason}")
        self.file = file
        self.line = line
        self.reason = reason


class DanglingReference(ColmapError):
    def __init__(self, kind: str, id: int, detail: str = ""):
        msg = f"dangling {kind} reference {id}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.kind = kind
        self.id = id


class UnsupportedCameraModel(ColmapError):
    def __init__(self, name: str):
        super().__init__(f"unsupported camera model {name!r}; expected one of {sorted(CAMERA_MODELS)}")
        self.name = name


class DegenerateModel(ColmapError):
    """The model parsed cleanly but is too small for any downstream use."""


class UnknownImage(LookupError):
    def __init__(self, key):
        super().__init__(f"unknown image {key!r}")
        self.key = key


@dataclass(frozen=True)
class CameraIntrinsics:
    camera_id: int
    model_kind: str
    width: int
    height: int
    params: tuple[float, ...]

    def __post_init__(self):
        if self.model_kind not in CAMERA_MODELS:
            raise UnsupportedCameraModel(self.model_kind)
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera {self.camera_id}: non-positive image size {self.width}x{self.height}")
        if len(self.params) != CAMERA_MODELS[self.model_kind]:
            raise ValueError(
                f"camera {self.camera_id}: {self.model_kind} takes {CAMERA_MODELS[self.model_kind]} params, "
                f"got {len(self.params)}"
            )
        fx, fy = self.focal
        if not (fx > 0 and fy > 0):
            raise ValueError(f"camera {self.camera_id}: focal length must be positive")

    @property
    def focal(self) -> tuple[float, float]:
        if self.model_kind == "PINHOLE":
            return self.params[0], self.params[1]
        return self.params[0], self.params[0]

    @property
    def principal_point(self) -> tuple[float, float]:
        if self.model_kind == "PINHOLE":
            return self.params[2], self.params[3]
        return self.params[1], self.params[2]

    @property
    def radial_k(self) -> float:
        return self.params[3] if self.model_kind == "SIMPLE_RADIAL" else 0.0

    @property
    def K(self) -> np.ndarray:
        fx, fy = self.focal
        cx, cy = self.principal_point
        return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


class Observation(NamedTuple):
    x: float
    y: float
    point3d_id: int | None


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    name: str
    qvec: tuple[float, float, float, float]
    tvec: tuple[float, float, float]
    camera_id: int
    observations: tuple[Observation, ...]


@dataclass(frozen=True)
class ScenePoint:
    point3d_id: int
    xyz: tuple[float, float, float]
    color: tuple[int, int, int]
    reproj_error: float
    track: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class SparseModel:
    cameras: dict[int, CameraIntrinsics]
    images: dict[int, ImageRecord]
    points: dict[int, ScenePoint]

    def image_by_name(self, name: str) -> ImageRecord:
        for image in self.images.values():
            if image.name == name:
                return image
        raise UnknownImage(name)

    def camera_of(self, image_id: int) -> CameraIntrinsics:
        return self.cameras[self._image(image_id).camera_id]

    def _image(self, image_id: int) -> ImageRecord:
        try:
            return self.images[image_id]
        except KeyError:
            raise UnknownImage(image_id) from None

    def validate(self) -> None:
        """Check referential integrity across cameras, images and points.

        Raises:
            DanglingReference: on the first broken link found.
        """
        for image in self.images.values():
            if image.camera_id not in self.cameras:
                raise DanglingReference("camera", image.camera_id, f"image {image.image_id}")
            for idx, obs in enumerate(image.observations):
                if obs.point3d_id is None:
                    continue
                point = self.points.get(obs.point3d_id)
                if point is None:
                    raise DanglingReference("point3D", obs.point3d_id, f"image {image.image_id} obs {idx}")
                if (image.image_id, idx) not in point.track:
                    raise DanglingReference(
                        "track", obs.point3d_id, f"point does not list image {image.image_id} obs {idx}"
                    )
        for point in self.points.values():
            if not point.track:
                raise DanglingReference("track", point.point3d_id, "empty track")
            for image_id, idx in point.track:
                image = self.images.get(image_id)
                if image is None:
                    raise DanglingReference("image", image_id, f"track of point {point.point3d_id}")
                if not 0 <= idx < len(image.observations) or image.observations[idx].point3d_id != point.point3d_id:
                    raise DanglingReference(
                        "observation", idx, f"image {image_id} does not link back to point {point.point3d_id}"
                    )


def _data_lines(path: Path):
    """Yield (line number, stripped text) for every line, comments removed."""
    with path.open(encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if line.startswith("#"):
                continue
            yield lineno, line


def _parse_cameras(path: Path) -> dict[int, CameraIntrinsics]:
    cameras = {}
    for lineno, line in _data_lines(path):
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4:
            raise MalformedLine(path.name, lineno, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]")
        model = parts[1]
        if model not in CAMERA_MODELS:
            raise UnsupportedCameraModel(model)
        try:
            camera_id, width, height = int(parts[0]), int(parts[2]), int(parts[3])
            params = tuple(float(p) for p in parts[4:])
        except ValueError as exc:
            raise MalformedLine(path.name, lineno, str(exc)) from None
        if camera_id in cameras:
            raise MalformedLine(path.name, lineno, f"duplicate camera id {camera_id}")
        try:
            cameras[camera_id] = CameraIntrinsics(camera_id, model, width, height, params)
        except ValueError as exc:
            raise MalformedLine(path.name, lineno, str(exc)) from None
    return cameras


def _normalize_qvec(q: tuple[float, ...], file: str, lineno: int) -> tuple[float, float, float, float]:
    norm = math.sqrt(sum(c * c for c in q))
    if abs(norm - 1.0) > QUATERNION_REJECT_TOL:
        raise MalformedLine(file, lineno, f"quaternion norm {norm:.6g} is not close to 1")
    if abs(norm - 1.0) <= QUATERNION_KEEP_TOL:
        return q  # type: ignore[return-value]
    return tuple(c / norm for c in q)  # type: ignore[return-value]


def _parse_images(path: Path) -> dict[int, ImageRecord]:
    images = {}
    lines = _data_lines(path)
    for lineno, line in lines:
        if not line:
            continue
        parts = line.split()
        if len(parts) < 10:
            raise MalformedLine(path.name, lineno, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME")
        try:
            image_id = int(parts[0])
            q = tuple(float(v) for v in parts[1:5])
            t = tuple(float(v) for v in parts[5:8])
            camera_id = int(parts[8])
        except ValueError as exc:
            raise MalformedLine(path.name, lineno, str(exc)) from None
        name = " ".join(parts[9:])
        qvec = _normalize_qvec(q, path.name, lineno)

        obs_lineno, obs_line = next(lines, (lineno + 1, None))
        if obs_line is None:
            raise MalformedLine(path.name, obs_lineno, f"missing POINTS2D line for image {image_id}")
        fields = obs_line.split()
        if len(fields) % 3:
            raise MalformedLine(path.name, obs_lineno, "POINTS2D must be (X, Y, POINT3D_ID) triples")
        try:
            observations = tuple(
                Observation(float(fields[i]), float(fields[i + 1]), None if int(fields[i + 2]) == -1 else int(fields[i + 2]))
                for i in range(0, len(fields), 3)
            )
        except ValueError as exc:
            raise MalformedLine(path.name, obs_lineno, str(exc)) from None

        if image_id in images:
            raise MalformedLine(path.name, lineno, f"duplicate image id {image_id}")
        images[image_id] = ImageRecord(image_id, name, qvec, t, camera_id, observations)  # type: ignore[arg-type]
    return images


def _parse_points(path: Path) -> dict[int, ScenePoint]:
    points = {}
    for lineno, line in _data_lines(path):
        if not line:
            continue
        parts = line.split()
        if len(parts) < 8 or (len(parts) - 8) % 2:
            raise MalformedLine(path.name, lineno, "expected POINT3D_ID X Y Z R G B ERROR TRACK[] pairs")
        try:
            point_id = int(parts[0])
            xyz = tuple(float(v) for v in parts[1:4])
            color = tuple(int(v) for v in parts[4:7])
            error = float(parts[7])
            track = tuple((int(parts[i]), int(parts[i + 1])) for i in range(8, len(parts), 2))
        except ValueError as exc:
            raise MalformedLine(path.name, lineno, str(exc)) from None
        if error < 0:
            raise MalformedLine(path.name, lineno, "negative reprojection error")
        if point_id in points:
            raise MalformedLine(path.name, lineno, f"duplicate point id {point_id}")
        points[point_id] = ScenePoint(point_id, xyz, color, error, track)  # type: ignore[arg-type]
    return points


def parse_sparse_model(model_dir) -> SparseModel:
    """Parse a sparse text model directory.

    Args:
        model_dir: directory holding ``cameras.txt``, ``images.txt`` and ``points3D.txt``.

    Returns:
        A referentially consistent :class:`SparseModel`.

    Raises:
        MissingFile, MalformedLine, DanglingReference, UnsupportedCameraModel,
        DegenerateModel: for fewer than 2 images or 10 points.
    """
    model_dir = Path(model_dir)
    paths = {}
    for name in ("cameras.txt", "images.txt", "points3D.txt"):
        paths[name] = model_dir / name
        if not paths[name].is_file():
            raise MissingFile(name)

    model = SparseModel(
        cameras=_parse_cameras(paths["cameras.txt"]),
        images=_parse_images(paths["images.txt"]),
        points=_parse_points(paths["points3D.txt"]),
    )
    model.validate()
    if len(model.images) < MIN_IMAGES or len(model.points) < MIN_POINTS:
        raise DegenerateModel(
            f"model has {len(model.images)} images and {len(model.points)} points; "
            f"need at least {MIN_IMAGES} and {MIN_POINTS}"
        )
    return model


def linked_observations(model: SparseModel, image_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array view of an image's observations that carry a 3D point link.

    Returns:
        ``(pixels (N, 2), point_ids (N,), xyz (N, 3))`` in observation order.
    """
    image = model._image(image_id)
    linked = [obs for obs in image.observations if obs.point3d_id is not None]
    pixels = np.array([(o.x, o.y) for o in linked], dtype=float).reshape(-1, 2)
    ids = np.array([o.point3d_id for o in linked], dtype=np.int64)
    xyz = np.array([model.points[o.point3d_id].xyz for o in linked], dtype=float).reshape(-1, 3)
    return pixels, ids, xyz


def pixel_point_pairs(model: SparseModel, image_id: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """One ``(pixel, xyz)`` pair per linked observation of ``image_id``, in observation order."""
    pixels, _, xyz = linked_observations(model, image_id)
    return list(zip(pixels, xyz))
