"""Shared domain types: 8-bit rasters, HSV color math, tiling and PNG I/O.

Everything downstream (annotation, counting, detection, fusion, evaluation)
works on these types. All values are immutable once constructed and safe to
share across threads; per-tile work is embarrassingly parallel.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image


class ToolkitError(Exception):
    """Base class for domain errors raised by this package."""


class ConfigError(ToolkitError):
    """Invalid configuration value or descriptor."""


class CoordinateError(ToolkitError):
    """Pixel coordinate outside the image."""


class StateError(ToolkitError):
    """Operation refused in the current session state."""


class ConflictError(ToolkitError):
    """Operation collides with existing labels."""


class NotFoundError(ToolkitError):
    """Referenced entity does not exist."""


# ---------------------------------------------------------------------------
# Raster image


@dataclass(frozen=True)
class RasterImage:
    """8-bit pixel grid with shape (height, width, channels), channels in {1, 3, 4}.

    The array is made read-only at construction; RasterImage values can be
    shared freely between threads.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            raise ValueError(f"raster samples must be uint8, got {arr.dtype}")
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3, 4):
            raise ValueError(f"raster must be (h, w, c) with c in {{1, 3, 4}}, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("raster must be at least 1x1")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def rgb(self) -> np.ndarray:
        """First three channels, or replicated gray for single-channel images."""
        if self.channels == 1:
            return np.repeat(self.data, 3, axis=2)
        return self.data[:, :, :3]

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


# ---------------------------------------------------------------------------
# HSV color math


@dataclass(frozen=True)
class HsvColor:
    """Hexcone HSV: h in degrees [0, 360), s and v clamped to [0, 1]."""

    h: float
    s: float
    v: float

    def __post_init__(self):
        object.__setattr__(self, "h", float(self.h) % 360.0)
        object.__setattr__(self, "s", min(1.0, max(0.0, float(self.s))))
        object.__setattr__(self, "v", min(1.0, max(0.0, float(self.v))))


def rgb_to_hsv(r: float, g: float, b: float) -> HsvColor:
    """Standard hexcone conversion from 0..255 samples; h is 0 when s is 0.

    Accepts floats so neighborhood means keep their precision.
    """
    for name, c in (("r", r), ("g", g), ("b", b)):
        if not 0 <= c <= 255:
            raise ValueError(f"{name}={c} outside 0..255")
    mx = max(r, g, b)
    mn = min(r, g, b)
    v = mx / 255.0
    if mx == 0 or mx == mn:
        return HsvColor(0.0, 0.0, v)
    d = mx - mn
    s = d / mx
    if mx == r:
        h = 60.0 * (((g - b) / d) % 6.0)
    elif mx == g:
        h = 60.0 * ((b - r) / d + 2.0)
    else:
        h = 60.0 * ((r - g) / d + 4.0)
    return HsvColor(h, s, v)


def hsv_to_rgb(color: HsvColor) -> tuple[int, int, int]:
    """Inverse hexcone conversion, rounded to bytes."""
    h, s, v = color.h, color.s, color.v
    c = v * s
    hp = h / 60.0
    x = c * (1.0 - abs(hp % 2.0 - 1.0))
    sector = int(hp) % 6
    r1, g1, b1 = (
        (c, x, 0.0), (x, c, 0.0), (0.0, c, x),
        (0.0, x, c), (x, 0.0, c), (c, 0.0, x),
    )[sector]
    m = v - c
    return tuple(int(round((u + m) * 255.0)) for u in (r1, g1, b1))


def sv_distance(a: HsvColor, b: HsvColor) -> float:
    """Euclidean distance over (s, v) only; hue is ignored on purpose —
    vehicles and roads in pan-sharpened imagery are nearly achromatic."""
    return math.hypot(a.s - b.s, a.v - b.v)


def sv_channels(image: RasterImage) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (s, v) planes as float32 arrays in [0, 1], vectorized.

    Single source of truth for the flood-fill predicate: matches rgb_to_hsv
    exactly on every pixel.
    """
    rgb = image.rgb().astype(np.float32)
    mx = rgb.max(axis=2)
    mn = rgb.min(axis=2)
    v = mx / 255.0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mx > 0, (mx - mn) / mx, 0.0)
    return s.astype(np.float32), v.astype(np.float32)


# ---------------------------------------------------------------------------
# Boxes


@dataclass(frozen=True, order=True)
class PixelBox:
    """Axis-aligned box, min-inclusive / max-exclusive; coordinates may be fractional."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate box [{self.x_min}, {self.y_min}, {self.x_max}, {self.y_max}]"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0


# ---------------------------------------------------------------------------
# Tiling


@dataclass(frozen=True)
class TileGrid:
    """Fixed-size tiling plan over a source image.

    Origins are top-left offsets in source coordinates. The final row/column
    clamps to the far edge so coverage is total; images smaller than the tile
    get a single origin plus a recorded zero-pad amount.
    """

    tile_size: int
    overlap: int
    origins: tuple[tuple[int, int], ...]
    pad_x: int = 0
    pad_y: int = 0

    def to_json_dict(self) -> dict:
        return {
            "tile_size": self.tile_size,
            "overlap": self.overlap,
            "origins": [list(o) for o in self.origins],
            "pad": [self.pad_x, self.pad_y],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TileGrid":
        pad = d.get("pad", [0, 0])
        return cls(
            tile_size=int(d["tile_size"]),
            overlap=int(d["overlap"]),
            origins=tuple((int(x), int(y)) for x, y in d["origins"]),
            pad_x=int(pad[0]),
            pad_y=int(pad[1]),
        )


def _axis_origins(extent: int, tile_size: int, stride: int) -> list[int]:
    if extent <= tile_size:
        return [0]
    origins = list(range(0, extent - tile_size + 1, stride))
    if origins[-1] != extent - tile_size:
        origins.append(extent - tile_size)
    return origins


def plan_tiles(width: int, height: int, tile_size: int, overlap: int) -> TileGrid:
    """Plan edge-clamped tiling with the given overlap.

    stride = tile_size - overlap; the last row/column is clamped to the far
    edge rather than padded, so every tile holds real imagery. Images smaller
    than the tile in either extent yield a single origin at (0, 0) with the
    pad amount recorded.
    """
    if width < 1 or height < 1:
        raise ValueError("image extent must be positive")
    if tile_size < 1:
        raise ValueError("tile_size must be positive")
    if overlap < 0 or overlap >= tile_size:
        raise ConfigError(f"overlap {overlap} must satisfy 0 <= overlap < tile_size {tile_size}")
    stride = tile_size - overlap
    xs = _axis_origins(width, tile_size, stride)
    ys = _axis_origins(height, tile_size, stride)
    origins = tuple((x, y) for y in ys for x in xs)
    return TileGrid(
        tile_size=tile_size,
        overlap=overlap,
        origins=origins,
        pad_x=max(0, tile_size - width),
        pad_y=max(0, tile_size - height),
    )


def crop_tiles(image: RasterImage, grid: TileGrid) -> list[tuple[tuple[int, int], RasterImage]]:
    """Cut the planned tiles out of the image, zero-padding only when the
    image itself is smaller than the tile."""
    t = grid.tile_size
    out = []
    for ox, oy in grid.origins:
        window = image.data[oy : oy + t, ox : ox + t, :]
        if window.shape[0] != t or window.shape[1] != t:
            padded = np.zeros((t, t, image.channels), dtype=np.uint8)
            padded[: window.shape[0], : window.shape[1], :] = window
            window = padded
        out.append(((ox, oy), RasterImage(np.ascontiguousarray(window))))
    return out


def stitch(
    tiles: Sequence[tuple[tuple[int, int], RasterImage]],
    grid: TileGrid,
    width: int,
    height: int,
) -> RasterImage:
    """Reassemble tiles onto a (height, width) canvas.

    Overlap conflicts resolve by last-writer in grid-origin order: masks are
    categorical, blending would invent labels. Raises if any planned origin
    is missing a tile.
    """
    by_origin = {tuple(origin): tile for origin, tile in tiles}
    missing = [o for o in grid.origins if o not in by_origin]
    if missing:
        raise NotFoundError(f"incomplete mosaic: missing tiles at {missing[:4]}")
    channels = next(iter(by_origin.values())).channels
    canvas = np.zeros((height, width, channels), dtype=np.uint8)
    t = grid.tile_size
    for origin in grid.origins:
        ox, oy = origin
        tile = by_origin[origin]
        if tile.channels != channels:
            raise ValueError("tiles disagree on channel count")
        h = min(t, height - oy)
        w = min(t, width - ox)
        canvas[oy : oy + h, ox : ox + w, :] = tile.data[:h, :w, :]
    return RasterImage(canvas)


def save_tile_grid(grid: TileGrid, path: str | Path) -> None:
    Path(path).write_text(json.dumps(grid.to_json_dict()) + "\n")


def load_tile_grid(path: str | Path) -> TileGrid:
    return TileGrid.from_json_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# PNG I/O — 8-bit via Pillow, 16-bit via a minimal built-in codec
# (Pillow cannot write the 16-bit two-channel PNGs used for vote masks).


def read_image(path: str | Path) -> RasterImage:
    """Read an 8-bit PNG (or any Pillow-readable raster) as a RasterImage."""
    with Image.open(path) as im:
        if im.mode == "P":
            im = im.convert("RGB")
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    return RasterImage(arr)


def write_image(image: RasterImage, path: str | Path) -> None:
    arr = image.data
    if image.channels == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path, format="PNG")
    else:
        mode = "RGB" if image.channels == 3 else "RGBA"
        Image.fromarray(arr, mode=mode).save(path, format="PNG")


_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_png16(array: np.ndarray) -> bytes:
    """Encode a 16-bit PNG: (h, w) gray or (h, w, 2) gray+alpha, lossless."""
    arr = np.asarray(array)
    if arr.dtype != np.uint16:
        raise ValueError(f"expected uint16 samples, got {arr.dtype}")
    if arr.ndim == 2:
        color_type, planes = 0, 1
        arr = arr[:, :, np.newaxis]
    elif arr.ndim == 3 and arr.shape[2] == 2:
        color_type, planes = 4, 2
    else:
        raise ValueError(f"expected (h, w) or (h, w, 2), got shape {arr.shape}")
    h, w = arr.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 16, color_type, 0, 0, 0)
    # Big-endian samples, one filter-0 byte per scanline.
    big = arr.astype(">u2").tobytes()
    row_bytes = w * planes * 2
    raw = bytearray()
    for y in range(h):
        raw.append(0)
        raw += big[y * row_bytes : (y + 1) * row_bytes]
    payload = zlib.compress(bytes(raw), 6)
    return (
        _PNG_SIGNATURE
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", payload)
        + _png_chunk(b"IEND", b"")
    )


def write_png16(array: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_png16(array))


def _unfilter_scanlines(raw: bytes, height: int, row_bytes: int, bpp: int) -> bytearray:
    out = bytearray(height * row_bytes)
    prev = bytearray(row_bytes)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        pos += 1
        line = bytearray(raw[pos : pos + row_bytes])
        pos += row_bytes
        if ftype == 1:  # Sub
            for i in range(bpp, row_bytes):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(row_bytes):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(row_bytes):
                a = line[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + ((a + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(row_bytes):
                a = line[i - bpp] if i >= bpp else 0
                b = prev[i]
                c = prev[i - bpp] if i >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                if pa <= pb and pa <= pc:
                    pred = a
                elif pb <= pc:
                    pred = b
                else:
                    pred = c
                line[i] = (line[i] + pred) & 0xFF
        elif ftype != 0:
            raise ValueError(f"unsupported PNG filter type {ftype}")
        out[y * row_bytes : (y + 1) * row_bytes] = line
        prev = line
    return out


def read_png16(path: str | Path) -> np.ndarray:
    """Read a 16-bit gray or gray+alpha PNG written by this codec (or any
    non-interlaced encoder). Returns uint16 (h, w) or (h, w, 2)."""
    blob = Path(path).read_bytes()
    if blob[:8] != _PNG_SIGNATURE:
        raise ValueError(f"{path} is not a PNG file")
    pos = 8
    width = height = None
    color_type = bitdepth = None
    idat = bytearray()
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, bitdepth, color_type, _, _, interlace = struct.unpack(
                ">IIBBBBB", payload
            )
            if interlace != 0:
                raise ValueError("interlaced PNG not supported")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if width is None:
        raise ValueError(f"{path}: missing IHDR")
    if bitdepth != 16 or color_type not in (0, 4):
        raise ValueError(
            f"{path}: expected 16-bit gray or gray+alpha, got depth {bitdepth} type {color_type}"
        )
    planes = 1 if color_type == 0 else 2
    row_bytes = width * planes * 2
    raw = zlib.decompress(bytes(idat))
    flat = _unfilter_scanlines(raw, height, row_bytes, planes * 2)
    arr = np.frombuffer(bytes(flat), dtype=">u2").reshape(height, width, planes)
    arr = arr.astype(np.uint16)
    return arr[:, :, 0] if planes == 1 else arr


def require_inside(image: RasterImage, x: int, y: int) -> None:
    if not image.contains(x, y):
        raise CoordinateError(
            f"({x}, {y}) outside image {image.width}x{image.height}"
        )
