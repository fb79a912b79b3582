"""Synthetic small-target sequences over a scrolling panoramic background.

A frame at time ``t`` (ms) shows the panorama shifted right by
``V_B * t / 1000`` pixels (sub-pixel shifts are linearly interpolated and
wrap around), with a dark rectangle stamped at the target trajectory.
Frames are quantised to 8 bits like a rendered video.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from .io import read_pgm


class InvalidSceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    """Stimulus geometry.  Velocities are in pixels/second, times in ms.

    ``V_B > 0`` scrolls the background left to right; ``V_T > 0`` moves the
    target right to left.  ``background`` is ``"procedural"``, ``"blank"`` or
    a path to a PGM panorama.
    """

    width: int = 500
    height: int = 250
    fps: float = 1000.0
    duration: float = 1000.0
    background: str = "procedural"
    seed: int = 0
    background_luminance: float = 200.0
    V_B: float = 250.0
    V_T: float = 500.0
    target_size: int = 5
    target_height: int | None = None
    target_luminance: float = 50.0
    t_offset: float = 300.0
    amplitude: float = 15.0
    wrap: bool = True

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidSceneError("frame size must be positive")
        if not self.fps > 0:
            raise InvalidSceneError("fps must be positive")
        if not self.duration > 0:
            raise InvalidSceneError("duration must be positive")
        if self.target_size < 1 or (self.target_height is not None and self.target_height < 1):
            raise InvalidSceneError("target size must be positive")
        if self.target_size > self.width or self.target_rows > self.height:
            raise InvalidSceneError("target does not fit inside the frame")

    @property
    def target_rows(self):
        return self.target_size if self.target_height is None else self.target_height

    @property
    def n_frames(self):
        return int(round(self.duration * self.fps / 1000.0))

    def frame_time(self, index):
        return index * 1000.0 / self.fps

    def replace(self, **changes):
        return SceneConfig(**{**self.as_dict(), **changes})

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class GroundTruthTrack:
    t_ms: np.ndarray
    x: np.ndarray
    y: np.ndarray
    present: np.ndarray

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i):
        return float(self.x[i]), float(self.y[i]), bool(self.present[i])


def trajectory(t, cfg=SceneConfig()):
    """Target centre ``(x, y)`` at time ``t`` ms.

    ``x = width - V_T (t + t_offset) / 1000``,
    ``y = height / 2 + amplitude sin(4 pi (t + t_offset) / 1000)``.
    """
    if not 0 <= t <= cfg.duration:
        raise ValueError(f"t={t} outside [0, {cfg.duration}]")
    s = (t + cfg.t_offset) / 1000.0
    return cfg.width - cfg.V_T * s, cfg.height / 2.0 + cfg.amplitude * math.sin(4.0 * math.pi * s)


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def ground_truth(cfg):
    n = cfg.n_frames
    t = np.array([cfg.frame_time(i) for i in range(n)])
    xy = np.array([trajectory(ti, cfg) for ti in t]).reshape(n, 2)
    x, y = xy[:, 0], xy[:, 1]
    present = (x >= 0) & (x <= cfg.width - 1) & (y >= 0) & (y <= cfg.height - 1)
    return GroundTruthTrack(t, x, y, present)


def target_box(x, y, cfg):
    """Row and column slices of the stamped target, clipped to the frame."""
    cx, cy = _round_half_up(x), _round_half_up(y)
    w, h = cfg.target_size, cfg.target_rows
    x0, y0 = cx - w // 2, cy - h // 2
    cols = slice(max(x0, 0), max(min(x0 + w, cfg.width), 0))
    rows = slice(max(y0, 0), max(min(y0 + h, cfg.height), 0))
    return rows, cols


# ---------------------------------------------------------------------------
# backgrounds
# ---------------------------------------------------------------------------


def procedural_clutter(seed, width, height, blob_density=1.0 / 1500.0):
    """Periodic cluttered panorama with dark small-target-like blobs.

    The base is 1/f noise band-limited to wavelengths of 4-128 px, stretched
    to luminance 80-230.  Dark blobs (luminance 10-50, diameters 3-15 px)
    are scattered at ``blob_density`` per pixel.  Both axes wrap seamlessly.
    """
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    f = np.hypot(fx, fy)
    band = (f >= 1.0 / 128.0) & (f <= 1.0 / 4.0)
    amp = np.zeros_like(f)
    amp[band] = 1.0 / f[band]
    base = np.fft.irfft2(np.fft.rfft2(white) * amp, s=(height, width))
    lo, hi = base.min(), base.max()
    pano = 80.0 + 150.0 * (base - lo) / (hi - lo) if hi > lo else np.full_like(base, 155.0)

    n_blobs = max(1, int(round(width * height * blob_density)))
    yy = np.arange(height)[:, None]
    xx = np.arange(width)[None, :]
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        r = rng.uniform(1.5, 7.5)
        lum = rng.uniform(10.0, 50.0)
        dx = (xx - cx + width / 2.0) % width - width / 2.0
        dy = (yy - cy + height / 2.0) % height - height / 2.0
        pano[dx * dx + dy * dy <= r * r] = lum
    return np.clip(np.rint(pano), 0, 255).astype(np.uint8)


def load_background(cfg):
    if cfg.background == "blank":
        return np.full((cfg.height, cfg.width), cfg.background_luminance, dtype=np.float64)
    if cfg.background == "procedural":
        pano_width = max(2 * cfg.width, cfg.width + math.ceil(abs(cfg.V_B) * cfg.duration / 1000.0))
        return procedural_clutter(cfg.seed, pano_width, cfg.height).astype(np.float64)
    pano = read_pgm(cfg.background).astype(np.float64)
    if pano.shape[0] < cfg.height:
        raise InvalidSceneError(f"panorama height {pano.shape[0]} < frame height {cfg.height}")
    needed = cfg.width + abs(cfg.V_B) * cfg.duration / 1000.0
    if not cfg.wrap and pano.shape[1] < needed:
        raise InvalidSceneError(f"panorama width {pano.shape[1]} < required {needed:.0f} without wrap")
    if pano.shape[1] < cfg.width:
        raise InvalidSceneError(f"panorama width {pano.shape[1]} < frame width {cfg.width}")
    return pano[:cfg.height]


def background_view(pano, offset, width):
    """Columns of ``pano`` shifted right by ``offset`` px, with wrap and linear interpolation."""
    pw = pano.shape[1]
    src = np.arange(width) - offset
    i0 = np.floor(src)
    frac = src - i0
    i0 = i0.astype(np.int64) % pw
    i1 = (i0 + 1) % pw
    if np.all(frac == 0):
        return pano[:, i0].copy()
    return pano[:, i0] * (1.0 - frac) + pano[:, i1] * frac


def iter_frames(cfg, gt=None):
    """Yield the uint8 frames of the sequence one at a time."""
    gt = gt if gt is not None else ground_truth(cfg)
    pano = load_background(cfg)
    static = None
    for i in range(cfg.n_frames):
        if cfg.V_B == 0:
            if static is None:
                static = background_view(pano, 0.0, cfg.width)
            frame = static.copy()
        else:
            frame = background_view(pano, cfg.V_B * gt.t_ms[i] / 1000.0, cfg.width)
        rows, cols = target_box(gt.x[i], gt.y[i], cfg)
        frame[rows, cols] = cfg.target_luminance
        yield np.clip(np.rint(frame), 0, 255).astype(np.uint8)


def generate_sequence(cfg):
    """Return ``(frames, gt)`` with frames stacked as a ``(T, H, W)`` uint8 array."""
    gt = ground_truth(cfg)
    frames = np.empty((cfg.n_frames, cfg.height, cfg.width), dtype=np.uint8)
    for i, frame in enumerate(iter_frames(cfg, gt)):
        frames[i] = frame
    return frames, gt


def count_dark_regions(image, threshold=70, min_area=9, max_area=225):
    """Number of 8-connected regions below ``threshold`` with area in ``[min_area, max_area]``."""
    labels, n = ndimage.label(np.asarray(image) < threshold, structure=np.ones((3, 3)))
    if n == 0:
        return 0
    areas = np.bincount(labels.ravel())[1:]
    return int(np.count_nonzero((areas >= min_area) & (areas <= max_area)))
