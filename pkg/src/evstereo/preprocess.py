"""Event-stream preprocessing: IR-region masking, hot-pixel removal,
background-activity filtering, uniform downscaling, and cropping.

Every stage is a pure filter+remap over an immutable stream: it never creates
events, never reorders survivors, and never touches timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import CameraGeometry, StereoEventStream


@dataclass(frozen=True)
class Rect:
    """Pixel rectangle [x, x+w) x [y, y+h) in the coordinates of its stage."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"rectangle must have positive size, got {self.w}x{self.h}")

    def contains(self, x: int, y: int) -> bool:
        return self.x <= x < self.x + self.w and self.y <= y < self.y + self.h

    def inside(self, geometry: CameraGeometry) -> bool:
        return (
            self.x >= 0
            and self.y >= 0
            and self.x + self.w <= geometry.width
            and self.y + self.h <= geometry.height
        )


@dataclass
class PreprocessConfig:
    """Full preprocessing schedule; filters default to the standard DVS
    denoising rules with all parameters configurable.

    ``hot_pixel_factor=None`` / ``background_window_us=None`` disable those
    stages. ``crop_origin=None`` requires auto-crop at run time.
    """

    mask_rects: list[Rect] = field(default_factory=list)
    hot_pixel_factor: float | None = 10.0
    background_window_us: int | None = 5000
    background_radius: int = 1
    background_include_same_pixel: bool = False
    downscale_factor: int = 6
    crop_origin: tuple[int, int] | None = None
    crop_size: tuple[int, int] = (16, 16)

    def validate(self, geometry: CameraGeometry) -> None:
        for rect in self.mask_rects:
            if not rect.inside(geometry):
                raise ValueError(f"mask rectangle {rect} exceeds geometry {geometry}")
        if self.downscale_factor < 1:
            raise ValueError(f"downscale_factor must be >= 1, got {self.downscale_factor}")
        if self.background_window_us is not None and self.background_window_us <= 0:
            raise ValueError("background_window_us must be > 0")
        if self.background_radius < 0:
            raise ValueError("background_radius must be >= 0")
        if self.hot_pixel_factor is not None and self.hot_pixel_factor <= 0:
            raise ValueError("hot_pixel_factor must be > 0")
        cw, ch = self.crop_size
        reduced = self.downscaled_geometry(geometry)
        if cw <= 0 or ch <= 0 or cw > reduced.width or ch > reduced.height:
            raise ValueError(f"crop size {self.crop_size} does not fit in {reduced}")
        if self.crop_origin is not None:
            ox, oy = self.crop_origin
            if ox < 0 or oy < 0 or ox + cw > reduced.width or oy + ch > reduced.height:
                raise ValueError(f"crop {self.crop_origin}+{self.crop_size} exceeds {reduced}")

    def downscaled_geometry(self, geometry: CameraGeometry) -> CameraGeometry:
        return CameraGeometry(geometry.width // self.downscale_factor, geometry.height // self.downscale_factor)


def mask_regions(stream: StereoEventStream, regions: list[Rect]) -> StereoEventStream:
    """Drop every event whose pixel lies inside any of the rectangles."""
    if not regions:
        return stream
    for rect in regions:
        if not rect.inside(stream.geometry):
            raise ValueError(f"mask rectangle {rect} exceeds geometry {stream.geometry}")
    keep = np.ones(len(stream), dtype=bool)
    for r in regions:
        keep &= ~((stream.x >= r.x) & (stream.x < r.x + r.w) & (stream.y >= r.y) & (stream.y < r.y + r.h))
    return stream.select(keep)


def detect_hot_pixels(stream: StereoEventStream, factor: float) -> set[tuple[int, int, int]]:
    """Pixels whose event count exceeds factor x median nonzero per-pixel
    count, statistics taken per camera side. Returns {(x, y, side)}."""
    hot: set[tuple[int, int, int]] = set()
    w = stream.geometry.width
    for side in stream.sides_present():
        m = stream.side == side
        flat = stream.y[m].astype(np.int64) * w + stream.x[m]
        counts = np.bincount(flat, minlength=w * stream.geometry.height)
        nonzero = counts[counts > 0]
        if len(nonzero) == 0:
            continue
        threshold = factor * float(np.median(nonzero))
        for idx in np.flatnonzero(counts > threshold):
            hot.add((int(idx % w), int(idx // w), side))
    return hot


def remove_pixels(stream: StereoEventStream, pixels: set[tuple[int, int, int]]) -> StereoEventStream:
    if not pixels:
        return stream
    keep = np.fromiter(
        ((int(x), int(y), int(s)) not in pixels for x, y, s in zip(stream.x, stream.y, stream.side)),
        dtype=bool,
        count=len(stream),
    )
    return stream.select(keep)


def filter_background(
    stream: StereoEventStream,
    window_us: int,
    radius: int,
    include_same_pixel: bool = False,
) -> StereoEventStream:
    """Background-activity filter: an event survives iff some strictly earlier
    event on the same side occurred within Chebyshev distance <= radius in the
    preceding ``window_us``. The same pixel counts as support only when
    ``include_same_pixel`` is set.
    """
    if window_us <= 0:
        raise ValueError("window_us must be > 0")
    n = len(stream)
    if n == 0:
        return stream
    h, w = stream.geometry.height, stream.geometry.width
    pad = radius
    sentinel = np.int64(-(1 << 62))
    # committed most-recent event time per padded pixel, one map per side
    last = {s: np.full((h + 2 * pad, w + 2 * pad), sentinel) for s in (0, 1)}
    t, x, y, side = stream.t, stream.x, stream.y, stream.side
    keep = np.zeros(n, dtype=bool)
    i = 0
    while i < n:
        # process all events sharing this timestamp against committed state,
        # then commit the whole group; enforces the strict t_j < t_i rule
        j = i
        ti = t[i]
        while j < n and t[j] == ti:
            j += 1
        cutoff = ti - window_us
        for k in range(i, j):
            grid = last[int(side[k])]
            yy, xx = int(y[k]) + pad, int(x[k]) + pad
            win = grid[yy - radius : yy + radius + 1, xx - radius : xx + radius + 1]
            best = win.max() if win.size else sentinel
            if not include_same_pixel and radius >= 0:
                centre = grid[yy, xx]
                if best == centre:
                    saved = grid[yy, xx]
                    grid[yy, xx] = sentinel
                    best = win.max() if win.size else sentinel
                    grid[yy, xx] = saved
            keep[k] = best >= cutoff
        for k in range(i, j):
            grid = last[int(side[k])]
            yy, xx = int(y[k]) + pad, int(x[k]) + pad
            if grid[yy, xx] < ti:
                grid[yy, xx] = ti
        i = j
    return stream.select(keep)


def downscale(stream: StereoEventStream, factor: int) -> StereoEventStream:
    """Floor-divide coordinates by ``factor``; events falling on the remainder
    strip of a non-divisible geometry are dropped."""
    if factor < 1:
        raise ValueError(f"downscale factor must be >= 1, got {factor}")
    if factor == 1:
        return stream
    geom = CameraGeometry(stream.geometry.width // factor, stream.geometry.height // factor)
    x = stream.x // factor
    y = stream.y // factor
    keep = (x < geom.width) & (y < geom.height)
    survivors = stream.select(keep)
    return survivors.replace_coords(survivors.x // factor, survivors.y // factor, geom)


def crop(stream: StereoEventStream, origin: tuple[int, int], size: tuple[int, int]) -> StereoEventStream:
    """Keep events inside the rectangle and re-base coordinates to its origin."""
    ox, oy = origin
    w, h = size
    rect = Rect(ox, oy, w, h)
    if not rect.inside(stream.geometry):
        raise ValueError(f"crop {origin}+{size} exceeds geometry {stream.geometry}")
    keep = (stream.x >= ox) & (stream.x < ox + w) & (stream.y >= oy) & (stream.y < oy + h)
    survivors = stream.select(keep)
    return survivors.replace_coords(survivors.x - ox, survivors.y - oy, CameraGeometry(w, h))


def auto_crop_origin(downscaled: StereoEventStream, crop_size: tuple[int, int]) -> tuple[int, int]:
    """Crop origin centring the window on the event centroid of the first
    second of (downscaled) data; falls back to the full stream when the first
    second is empty, and to the frame centre when the stream is."""
    w, h = crop_size
    geom = downscaled.geometry
    m = downscaled.t <= 1_000_000
    if not m.any():
        m = np.ones(len(downscaled), dtype=bool)
    if len(downscaled) == 0:
        cx, cy = geom.width / 2, geom.height / 2
    else:
        cx = float(downscaled.x[m].mean())
        cy = float(downscaled.y[m].mean())
    ox = int(round(cx - w / 2))
    oy = int(round(cy - h / 2))
    ox = min(max(ox, 0), geom.width - w)
    oy = min(max(oy, 0), geom.height - h)
    return (ox, oy)


def preprocess_pipeline_resolved(
    stream: StereoEventStream, config: PreprocessConfig
) -> tuple[StereoEventStream, tuple[int, int]]:
    """As ``preprocess_pipeline`` but also returns the crop origin actually
    used (needed to map ground truth into the same frame under auto-crop)."""
    config.validate(stream.geometry)
    out = mask_regions(stream, config.mask_rects)
    if config.hot_pixel_factor is not None:
        out = remove_pixels(out, detect_hot_pixels(out, config.hot_pixel_factor))
    if config.background_window_us is not None:
        out = filter_background(
            out,
            config.background_window_us,
            config.background_radius,
            config.background_include_same_pixel,
        )
    out = downscale(out, config.downscale_factor)
    origin = config.crop_origin
    if origin is None:
        origin = auto_crop_origin(out, config.crop_size)
    return crop(out, origin, config.crop_size), origin


def preprocess_pipeline(stream: StereoEventStream, config: PreprocessConfig) -> StereoEventStream:
    """mask -> hot-pixel removal -> background filter -> downscale -> crop."""
    return preprocess_pipeline_resolved(stream, config)[0]
