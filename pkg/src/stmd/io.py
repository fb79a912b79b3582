"""File formats: PGM (P5) frames, raw float32 response streams, CSV tables.

A response stream file starts with a fixed 128-byte ASCII header::

    STMD-F32 width=<w> height=<h> count=<n> warmup=<k>

padded with spaces and terminated by a newline, followed by ``count``
frames of little-endian float32 in row-major order.
"""

from __future__ import annotations

import csv
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

HEADER_SIZE = 128
_MAGIC = "STMD-F32"


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------


def _pgm_tokens(data):
    """Split a PGM header into ``(magic, width, height, maxval, offset)``."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(data, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    return tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3]), pos + 1


def read_pgm(path):
    data = Path(path).read_bytes()
    magic, w, h, maxval, offset = _pgm_tokens(data)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM is not supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    return raster.reshape(h, w).copy()


def write_pgm(path, image):
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError("PGM images must be 2-D")
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def frame_name(index):
    return f"frame_{index:05d}.pgm"


def list_frames(directory):
    paths = sorted(Path(directory).glob("frame_*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.pgm files in {directory}")
    return paths


# ---------------------------------------------------------------------------
# response streams
# ---------------------------------------------------------------------------


def _header(width, height, count, warmup):
    text = f"{_MAGIC} width={width} height={height} count={count} warmup={warmup}"
    return (text.ljust(HEADER_SIZE - 1) + "\n").encode("ascii")


class ResponseWriter:
    """Append float32 frames to a response stream; the header is finalised on close."""

    def __init__(self, path, shape, warmup=0):
        self.path = Path(path)
        self.height, self.width = shape
        self.warmup = warmup
        self.count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_header(self.width, self.height, 0, warmup))

    def write(self, frame):
        f = np.asarray(frame)
        if f.shape != (self.height, self.width):
            raise FormatError(f"frame shape {f.shape} != {(self.height, self.width)}")
        self._fh.write(f.astype("<f4").tobytes())
        self.count += 1

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(_header(self.width, self.height, self.count, self.warmup))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_response_header(path):
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE).decode("ascii", errors="replace")
    parts = head.split()
    if not parts or parts[0] != _MAGIC:
        raise FormatError(f"{path}: not a response stream")
    meta = dict(p.split("=", 1) for p in parts[1:])
    return {k: int(v) for k, v in meta.items()}


def read_responses(path):
    """Memory-map a response stream; returns ``(array (count, h, w), header dict)``."""
    meta = read_response_header(path)
    n, h, w = meta["count"], meta["height"], meta["width"]
    expected = HEADER_SIZE + n * h * w * 4
    size = os.path.getsize(path)
    if size != expected:
        raise FormatError(f"{path}: size {size} does not match header ({expected})")
    if n == 0:
        return np.zeros((0, h, w), dtype="<f4"), meta
    return np.memmap(path, dtype="<f4", mode="r", offset=HEADER_SIZE, shape=(n, h, w)), meta


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------


def write_ground_truth(path, gt):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "t_ms", "x", "y", "present"])
        for i in range(len(gt)):
            w.writerow([i, repr(float(gt.t_ms[i])), repr(float(gt.x[i])), repr(float(gt.y[i])),
                        int(bool(gt.present[i]))])


def read_ground_truth(path):
    from .scenegen import GroundTruthTrack

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for i, r in enumerate(rows):
        if int(r["frame_index"]) != i:
            raise FormatError(f"{path}: frame_index out of order at row {i}")
    return GroundTruthTrack(
        t_ms=np.array([float(r["t_ms"]) for r in rows]),
        x=np.array([float(r["x"]) for r in rows]),
        y=np.array([float(r["y"]) for r in rows]),
        present=np.array([r["present"].strip() in ("1", "true", "True") for r in rows]),
    )


def write_detections(path, detections):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "score"])
        for d in detections:
            w.writerow([d.frame_index, d.x, d.y, repr(float(d.score))])


def write_roc(path, points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "dr", "fa"])
        for p in points:
            w.writerow([repr(float(p.gamma)), repr(float(p.D_R)), repr(float(p.F_A))])


def read_roc(path):
    from .evaluation import RocPoint

    with open(path, newline="") as fh:
        return [RocPoint(float(r["gamma"]), float(r["dr"]), float(r["fa"]))
                for r in csv.DictReader(fh)]


def write_json_atomic(path, payload):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(tmp, path)
