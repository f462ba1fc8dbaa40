"""JSON manifest tying image names to GPS fixes, label rasters and evaluation labels.

Example::

    {
      "scene": {"scene_id": "stop-42", "centroid": [40.44, -79.99], "radius_m": 60.0},
      "images": [
        {"name": "run0_000.png", "role": "reference", "lat": 40.44, "lon": -79.99,
         "raster": "rasters/run0_000.pgm"},
        {"name": "q1.png", "role": "query", "lat": 40.4401, "lon": -79.99,
         "raster": "rasters/q1.pgm", "category": "snow_covered"}
      ]
    }

Raster paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .sidewalk import SceneDescriptor

ROLES = ("reference", "query")
CATEGORIES = ("clear", "snow_covered", "cleared")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    role: str
    lat: float
    lon: float
    raster: Path
    category: str | None = None

    @property
    def gps(self) -> tuple[float, float]:
        return self.lat, self.lon


@dataclass(frozen=True)
class Manifest:
    scene: SceneDescriptor
    entries: tuple[ManifestEntry, ...]

    def entry(self, name: str) -> ManifestEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise ManifestError(f"image {name!r} is not in the manifest")

    @property
    def references(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == "reference"]

    @property
    def queries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == "query"]


def parse_manifest(doc: dict, base_dir: Path, check_files: bool = True) -> Manifest:
    try:
        scene_doc = doc["scene"]
        lat, lon = scene_doc["centroid"]
        raw_entries = doc["images"]
        entries = []
        for item in raw_entries:
            role = item["role"]
            if role not in ROLES:
                raise ManifestError(f"{item['name']}: role must be one of {ROLES}, got {role!r}")
            category = item.get("category")
            if category is not None and category not in CATEGORIES:
                raise ManifestError(f"{item['name']}: category must be one of {CATEGORIES}, got {category!r}")
            raster = base_dir / item["raster"]
            if check_files and not raster.is_file():
                raise ManifestError(f"{item['name']}: raster {raster} does not exist")
            entries.append(
                ManifestEntry(str(item["name"]), role, float(item["lat"]), float(item["lon"]), raster, category)
            )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"manifest is missing or mistypes a field: {exc}") from None

    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise ManifestError("image names in the manifest must be unique")
    try:
        scene = SceneDescriptor(
            str(scene_doc["scene_id"]),
            (float(lat), float(lon)),
            float(scene_doc["radius_m"]),
            tuple(e.name for e in entries if e.role == "reference"),
        )
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"invalid scene block: {exc}") from None
    return Manifest(scene, tuple(entries))


def load_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    return parse_manifest(doc, path.parent, check_files)
