"""Semantic label rasters and pixel-set arithmetic.

Rasters are binary PGM (P5, maxval 255) files whose bytes are category codes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np


class Category(IntEnum):
    VOID = 0
    ROAD = 1
    SIDEWALK = 2
    SNOW = 3


class MalformedPgm(ValueError):
    pass


class IllegalLabelValue(ValueError):
    def __init__(self, value: int, index: int):
        super().__init__(f"illegal label value {value} at byte index {index}")
        self.value = value
        self.index = index


class DimensionMismatch(ValueError):
    pass


class EmptySubject(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LabelRaster:
    labels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("labels must be a 2D grid")
        bad = np.flatnonzero(labels.ravel() > max(Category))
        if bad.size or (labels < 0).any():
            i = int(bad[0]) if bad.size else int(np.flatnonzero(labels.ravel() < 0)[0])
            raise IllegalLabelValue(int(labels.ravel()[i]), i)
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LabelRaster):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class PixelSet:
    mask: np.ndarray  # (height, width) bool

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be a 2D grid")
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def empty(cls, width: int, height: int) -> "PixelSet":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_pixels(cls, width: int, height: int, pixels) -> "PixelSet":
        """Set from integer ``(x, y)`` pairs."""
        mask = np.zeros((height, width), dtype=bool)
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        mask[pixels[:, 1], pixels[:, 0]] = True
        return cls(mask)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def __len__(self) -> int:
        return int(np.count_nonzero(self.mask))

    def __contains__(self, xy) -> bool:
        x, y = xy
        return 0 <= x < self.width and 0 <= y < self.height and bool(self.mask[y, x])

    def __eq__(self, other):
        if not isinstance(other, PixelSet):
            return NotImplemented
        return np.array_equal(self.mask, other.mask)

    def pixels(self) -> np.ndarray:
        """Member ``(x, y)`` coordinates in row-major order."""
        ys, xs = np.nonzero(self.mask)
        return np.column_stack([xs, ys])

    def _check(self, other: "PixelSet") -> None:
        if self.mask.shape != other.mask.shape:
            raise DimensionMismatch(f"{self.width}x{self.height} vs {other.width}x{other.height}")

    def __and__(self, other: "PixelSet") -> "PixelSet":
        self._check(other)
        return PixelSet(self.mask & other.mask)

    def __or__(self, other: "PixelSet") -> "PixelSet":
        self._check(other)
        return PixelSet(self.mask | other.mask)

    def issubset(self, other: "PixelSet") -> bool:
        self._check(other)
        return not np.any(self.mask & ~other.mask)


def _read_header_token(data: bytes, pos: int) -> tuple[int, int]:
    # skip whitespace and comments, then read a decimal token
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
        else:
            break
    start = pos
    while pos < n and data[pos : pos + 1].isdigit():
        pos += 1
    if start == pos:
        raise MalformedPgm(f"expected a number at byte {start}")
    return int(data[start:pos]), pos


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode a binary P5 PGM with maxval 255 into a (height, width) uint8 array."""
    if not data.startswith(b"P5"):
        raise MalformedPgm("not a binary PGM (missing P5 magic)")
    pos = 2
    width, pos = _read_header_token(data, pos)
    height, pos = _read_header_token(data, pos)
    maxval, pos = _read_header_token(data, pos)
    if maxval != 255:
        raise MalformedPgm(f"maxval must be 255, got {maxval}")
    if width <= 0 or height <= 0:
        raise MalformedPgm(f"bad dimensions {width}x{height}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MalformedPgm("missing whitespace after header")
    pos += 1
    body = data[pos:]
    if len(body) != width * height:
        raise MalformedPgm(f"expected {width * height} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def encode_pgm(grid: np.ndarray) -> bytes:
    grid = np.asarray(grid, dtype=np.uint8)
    height, width = grid.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + grid.tobytes()


def load_label_raster(path) -> LabelRaster:
    """Read a label raster.

    Raises:
        MalformedPgm: if the file is not a P5 PGM with maxval 255.
        IllegalLabelValue: for bytes outside the category codes 0-3.
    """
    return LabelRaster(decode_pgm(Path(path).read_bytes()))


def write_label_raster(raster: LabelRaster, path) -> None:
    Path(path).write_bytes(encode_pgm(raster.labels))


def category_pixels(raster: LabelRaster, code) -> PixelSet:
    code = Category(code)
    if code == Category.VOID:
        raise ValueError("category code must be road, sidewalk or snow")
    return PixelSet(raster.labels == code)


def right_side_filter(s: PixelSet, keep_side: str = "right") -> PixelSet:
    """Keep the pixels of the lower image half on the driving side.

    With ``keep_side="right"`` a pixel survives when ``x >= width // 2`` and
    ``y >= height // 2``; ``"left"`` mirrors the column test to ``x <= width // 2``.
    Pixels on the midlines are kept.
    """
    if keep_side not in ("right", "left"):
        raise ValueError(f"keep_side must be 'right' or 'left', got {keep_side!r}")
    mask = np.zeros_like(s.mask)
    mx, my = s.width // 2, s.height // 2
    if keep_side == "right":
        mask[my:, mx:] = s.mask[my:, mx:]
    else:
        mask[my:, : mx + 1] = s.mask[my:, : mx + 1]
    return PixelSet(mask)


def overlap_ratio(subject: PixelSet, cover: PixelSet) -> float:
    """``|subject & cover| / |subject|``.

    Raises:
        EmptySubject: if ``subject`` has no pixels.
        DimensionMismatch: if the grids differ in size.
    """
    subject._check(cover)
    total = np.count_nonzero(subject.mask)
    if total == 0:
        raise EmptySubject("subject pixel set is empty")
    return np.count_nonzero(subject.mask & cover.mask) / total
