"""Detections, ground-truth matching, detection rate / false alarm rate and ROC sweeps.

A detection is one 8-connected component of the supra-threshold set
``F > gamma``, located at the component's highest-scoring pixel (ties go to
the first pixel in row-major order).  In each frame at most one detection
within ``radius`` pixels of the target counts as true; every other
detection is a false alarm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

MATCH_RADIUS = 5.0
_EIGHT = np.ones((3, 3), dtype=bool)


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    frame_index: int
    x: int
    y: int
    score: float


@dataclass(frozen=True)
class RocPoint:
    gamma: float
    D_R: float
    F_A: float


def extract_detections(F, gamma, frame_index=0):
    """One ``Detection`` per 8-connected component of ``F > gamma``."""
    F = np.asarray(F, dtype=np.float64)
    mask = F > gamma
    if not mask.any():
        return []
    labels, n = ndimage.label(mask, structure=_EIGHT)
    flat_idx = np.flatnonzero(mask)  # row-major
    flat_lab = labels.ravel()[flat_idx]
    flat_val = F.ravel()[flat_idx]
    order = np.argsort(-flat_val, kind="stable")
    _, first = np.unique(flat_lab[order], return_index=True)
    peaks = flat_idx[order[first]]
    ys, xs = np.unravel_index(peaks, F.shape)
    dets = [Detection(frame_index, int(x), int(y), float(F[y, x])) for x, y in zip(xs, ys)]
    dets.sort(key=lambda d: (-d.score, d.y, d.x))
    return dets


def match_frame(dets, gt_entry, radius=MATCH_RADIUS):
    """Return ``(true_count, false_count)`` for one frame.

    ``gt_entry`` is ``(x, y, present)``.  Distances are Euclidean and the
    radius is inclusive.
    """
    x, y, present = gt_entry
    if not present:
        return 0, len(dets)
    hit = any(math.hypot(d.x - x, d.y - y) <= radius for d in dets)
    return int(hit), len(dets) - int(hit)


def compute_metrics(true_counts, false_counts, n_frames_with_target, n_frames):
    """``D_R = sum(true) / n_frames_with_target``, ``F_A = sum(false) / n_frames``."""
    if n_frames_with_target <= 0:
        raise UndefinedMetricError("detection rate is undefined without any target frames")
    if n_frames <= 0:
        raise UndefinedMetricError("false alarm rate is undefined without frames")
    return float(np.sum(true_counts)) / n_frames_with_target, float(np.sum(false_counts)) / n_frames


def evaluation_mask(n_frames, warmup):
    mask = np.zeros(n_frames, dtype=bool)
    mask[warmup:] = True
    return mask


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _frame_counts(values, order, height, width, near, gammas, n_comp_out, hit_out):
    """Sweep pixels in descending order with a union-find over 8-neighbours.

    For each threshold (descending) records the number of components of
    ``F > gamma`` and whether any surviving component peak is near the
    target.  Merging keeps the elder peak (higher value, then earlier in
    row-major order), which is exactly the peak ``extract_detections`` picks.
    """
    n = height * width
    parent = np.full(n, -1, np.int64)
    near_peak = np.zeros(n, np.bool_)
    n_comp = 0
    n_near = 0
    g = 0
    n_g = gammas.size
    for j in range(order.size):
        p = order[j]
        v = values[p]
        while g < n_g and gammas[g] >= v:
            n_comp_out[g] = n_comp
            hit_out[g] = n_near > 0
            g += 1
        if g == n_g:
            return
        parent[p] = p
        near_peak[p] = near[p]
        n_comp += 1
        if near[p]:
            n_near += 1
        r = p // width
        c = p - r * width
        for dr in range(-1, 2):
            rr = r + dr
            if rr < 0 or rr >= height:
                continue
            for dc in range(-1, 2):
                cc = c + dc
                if (dr == 0 and dc == 0) or cc < 0 or cc >= width:
                    continue
                q = rr * width + cc
                if parent[q] < 0:
                    continue
                a = _find(parent, p)
                b = _find(parent, q)
                if a == b:
                    continue
                # roots are component peaks; the elder survives
                va = values[a]
                vb = values[b]
                if va > vb or (va == vb and a < b):
                    elder, younger = a, b
                else:
                    elder, younger = b, a
                parent[younger] = elder
                n_comp -= 1
                if near_peak[younger]:
                    n_near -= 1
    while g < n_g:
        n_comp_out[g] = n_comp
        hit_out[g] = n_near > 0
        g += 1


def frame_roc_counts(F, gt_entry, gammas, radius=MATCH_RADIUS):
    """Per-threshold ``(true_counts, false_counts)`` for one frame.

    ``gammas`` must be strictly decreasing.  Equivalent to running
    ``extract_detections`` and ``match_frame`` once per threshold.
    """
    F = np.asarray(F, dtype=np.float64)
    gammas = np.asarray(gammas, dtype=np.float64)
    h, w = F.shape
    values = F.ravel()
    cand = np.flatnonzero(values > gammas[-1])
    order = cand[np.lexsort((cand, -values[cand]))]
    x, y, present = gt_entry
    if present:
        ys, xs = np.divmod(np.arange(h * w), w)
        near = np.hypot(xs - x, ys - y) <= radius
    else:
        near = np.zeros(h * w, dtype=bool)
    n_comp = np.zeros(gammas.size, np.int64)
    hit = np.zeros(gammas.size, np.bool_)
    _frame_counts(values, order, h, w, near, gammas, n_comp, hit)
    trues = hit.astype(np.int64)
    return trues, n_comp - trues


def _check_gammas(gammas):
    g = np.asarray(gammas, dtype=np.float64).ravel()
    if g.size == 0:
        raise ValueError("gamma list is empty")
    if np.any(np.diff(g) >= 0):
        raise ValueError("gammas must be strictly decreasing")
    return g


class RocAccumulator:
    """Streams response frames into per-threshold true/false totals."""

    def __init__(self, gammas, radius=MATCH_RADIUS):
        self.gammas = _check_gammas(gammas)
        self.radius = radius
        self.true = np.zeros(self.gammas.size, np.int64)
        self.false = np.zeros(self.gammas.size, np.int64)
        self.n_frames = 0
        self.n_target_frames = 0

    def add(self, F, gt_entry):
        t, f = frame_roc_counts(F, gt_entry, self.gammas, self.radius)
        self.true += t
        self.false += f
        self.n_frames += 1
        self.n_target_frames += int(bool(gt_entry[2]))

    def points(self):
        return [RocPoint(float(g), *compute_metrics(t, f, self.n_target_frames, self.n_frames))
                for g, t, f in zip(self.gammas, self.true, self.false)]


def roc_sweep(responses, gt, gammas, warmup=0, radius=MATCH_RADIUS):
    """ROC over a response sequence; frames before ``warmup`` are skipped.

    ``responses`` is any iterable of 2-D frames aligned with ``gt``.
    """
    acc = RocAccumulator(gammas, radius)
    n = 0
    for i, F in enumerate(responses):
        if i >= len(gt):
            raise ValueError("more response frames than ground-truth entries")
        n += 1
        if i >= warmup:
            acc.add(F, gt[i])
    if n != len(gt):
        raise ValueError(f"{n} response frames but {len(gt)} ground-truth entries")
    return acc.points()


def dr_at_fa(roc, target_fa=10.0):
    """Detection rate at a given false alarm rate by linear interpolation.

    Points are ordered by decreasing threshold.  Outside the sampled range
    the nearest endpoint's detection rate is returned.
    """
    if not roc:
        raise ValueError("empty ROC")
    pts = sorted(roc, key=lambda p: -p.gamma)
    below = [p for p in pts if p.F_A <= target_fa]
    above = [p for p in pts if p.F_A >= target_fa]
    if not below:
        return above[0].D_R
    if not above:
        return below[-1].D_R
    lo, hi = below[-1], above[0]
    if lo.F_A == target_fa or hi.F_A == lo.F_A:
        return lo.D_R
    w = (target_fa - lo.F_A) / (hi.F_A - lo.F_A)
    return lo.D_R + w * (hi.D_R - lo.D_R)


def auto_gammas(peak, n=80, span=1e-6):
    """``n`` log-spaced thresholds from ``peak`` down to ``peak * span``."""
    if not peak > 0:
        return np.array([0.0])
    return np.geomspace(peak, peak * span, n)
