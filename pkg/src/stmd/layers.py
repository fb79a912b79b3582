"""Retina, lamina, medulla and lobula stages as a causal per-frame processor.

Two output variants share every stage up to the medulla:

* ``"estmd"``: the lobula response is the product of the undelayed ON
  (Tm3) channel and the delayed OFF (Tm1) channel.
* ``"feedback"``: the past output, delayed through a Gamma kernel and scaled
  by ``k``, is added to both factors before the product.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .kernels import (
    GammaSpec,
    GaussianSpec,
    InvalidInputError,
    InvalidParameterError,
    TemporalConvolver,
    W2Params,
    convolve_spatial,
    dog_split,
    exp_kernel,
    gamma_kernel,
    gaussian_kernel,
    highpass_kernel,
    shift_kernel,
    w2_kernel,
)

VARIANTS = ("estmd", "feedback")


@dataclass(frozen=True)
class ModelConfig:
    """Every free parameter of the model.

    Spatial scales are in pixels, time constants in milliseconds.  The
    surround of the lamina inhibition kernel is fixed at ``2 * sigma2`` and
    therefore not stored.

    The time constants are short so that the response stays within a few
    pixels of a target moving at several hundred pixels per second.  ``k``
    is signed: positive values add the delayed output back in, negative
    values subtract it, which damps responses that persist at one place
    (slowly drifting clutter) more than those of a fast target.  Large
    ``|k|`` lets the loop run away, since with no input ``F = k^2 fb^2``.
    """

    sigma1: float = 1.25
    n1: int = 2
    tau1: float = 1.0
    n2: int = 6
    tau2: float = 3.0
    sigma2: float = 1.5
    lambda1: float = 1.0
    lambda2: float = 3.0
    w2: W2Params = field(default_factory=W2Params)
    nN: int = 5
    tauN: float = 6.0
    nF: int = 5
    tauF: float = 6.0
    nL: int = 5
    tauL: float = 2.0
    k: float = -0.5
    dt: float = 1.0

    def __post_init__(self):
        for name in ("sigma1", "sigma2", "tau1", "tau2", "lambda1", "lambda2",
                     "tauN", "tauF", "tauL", "dt"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidParameterError(f"{name} must be positive, got {v!r}")
        for name in ("n1", "n2", "nN", "nF", "nL"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameterError(f"{name} must be an integer >= 1, got {v!r}")
        if not self.lambda2 > self.lambda1:
            raise InvalidParameterError("lambda2 must exceed lambda1")
        if not math.isfinite(self.k):
            raise InvalidParameterError("k must be finite")
        if isinstance(self.w2, dict):
            object.__setattr__(self, "w2", W2Params(**self.w2))

    @property
    def sigma3(self):
        return 2.0 * self.sigma2

    def replace(self, **changes):
        w2_changes = {k: changes.pop(k) for k in list(changes) if k in W2_FIELDS}
        w2 = W2Params(**{**asdict(self.w2), **w2_changes})
        return ModelConfig(**{**self.as_flat_dict(nested=False), "w2": w2, **changes})

    def as_flat_dict(self, nested=True):
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "w2"}
        if nested:
            out.update(asdict(self.w2))
        return out

    @classmethod
    def from_flat_dict(cls, values):
        return cls().replace(**dict(values))


W2_FIELDS = tuple(f.name for f in fields(W2Params))


@dataclass(frozen=True, eq=False)
class KernelBank:
    retina: object
    highpass: object
    w1_pos: object
    w1_neg: object
    w1_tpos: object
    w1_tneg: object
    w2: object
    delay_on: object
    delay_off: object
    feedback: object


@functools.lru_cache(maxsize=32)
def build_kernels(cfg):
    dt = cfg.dt
    pos, neg = dog_split(cfg.sigma2)
    return KernelBank(
        retina=gaussian_kernel(GaussianSpec(cfg.sigma1)),
        highpass=highpass_kernel(GammaSpec(cfg.n1, cfg.tau1), GammaSpec(cfg.n2, cfg.tau2), dt),
        w1_pos=pos,
        w1_neg=neg,
        w1_tpos=exp_kernel(cfg.lambda1, dt),
        w1_tneg=exp_kernel(cfg.lambda2, dt),
        w2=w2_kernel(cfg.w2),
        delay_on=gamma_kernel(GammaSpec(cfg.nN, cfg.tauN), dt),
        delay_off=gamma_kernel(GammaSpec(cfg.nF, cfg.tauF), dt),
        feedback=gamma_kernel(GammaSpec(cfg.nL, cfg.tauL), dt),
    )


def warmup_horizon(cfg):
    """Frames until the zero-initialised history has left the output.

    The cold-start transient travels the whole causal chain (high-pass,
    slower inhibition branch, OFF delay, feedback loop), so the horizon is
    the summed length of that chain. Both variants share it so that their
    evaluations cover the same frames.
    """
    kb = build_kernels(cfg)
    return (len(kb.highpass) + max(len(kb.w1_tpos), len(kb.w1_tneg))
            + max(len(kb.delay_on), len(kb.delay_off)) + len(kb.feedback))


@dataclass
class LayerTap:
    """Every intermediate frame produced by one pipeline step."""

    index: int
    warmup: bool
    P: np.ndarray
    L: np.ndarray
    L_I: np.ndarray
    S_ON: np.ndarray
    S_OFF: np.ndarray
    S_Tm3: np.ndarray
    S_Tm2: np.ndarray
    S_Mi1: np.ndarray
    S_Tm1: np.ndarray
    F: np.ndarray
    feedback: np.ndarray | None = None


class FeedbackState:
    """Feedback buffer of past outputs.

    The lag-0 tap is dropped: the convolver is fed ``F(t-1)`` and weights it
    with tap 1, so the current output never depends on itself.
    """

    def __init__(self, kernel, shape):
        self.conv = TemporalConvolver(shift_kernel(kernel, 1), shape)
        self.previous = np.zeros(shape)

    def delayed(self):
        return self.conv.push(self.previous)

    def record(self, F):
        self.previous = F


class PipelineState:
    """Temporal histories for one frame stream."""

    def __init__(self, cfg, shape):
        self.cfg = cfg
        self.shape = tuple(shape)
        self.kernels = kb = build_kernels(cfg)
        self.highpass = TemporalConvolver(kb.highpass, shape)
        self.w1_tpos = TemporalConvolver(kb.w1_tpos, shape)
        self.w1_tneg = TemporalConvolver(kb.w1_tneg, shape)
        self.delay_on = TemporalConvolver(kb.delay_on, shape)
        self.delay_off = TemporalConvolver(kb.delay_off, shape)
        self.feedback = FeedbackState(kb.feedback, shape)
        self.frame_count = 0


def retina_blur(frame, cfg):
    return convolve_spatial(frame, build_kernels(cfg).retina)


def lamina_highpass(P, state):
    return state.highpass.push(P)


def lateral_inhibit_w1(L, state):
    kb = state.kernels
    pos = convolve_spatial(L, kb.w1_pos)
    neg = convolve_spatial(L, kb.w1_neg)
    return state.w1_tpos.push(pos) + state.w1_tneg.push(neg)


def split_on_off(L_I):
    L_I = np.asarray(L_I, dtype=np.float64)
    return np.maximum(L_I, 0.0), np.maximum(-L_I, 0.0)


def medulla_fast(S_ON, S_OFF, cfg):
    w2 = build_kernels(cfg).w2
    tm3 = np.maximum(convolve_spatial(S_ON, w2), 0.0)
    tm2 = np.maximum(convolve_spatial(S_OFF, w2), 0.0)
    return tm3, tm2


def medulla_delay(S_Tm3, S_Tm2, state):
    return state.delay_on.push(S_Tm3), state.delay_off.push(S_Tm2)


def lobula_estmd(S_Tm3, S_Tm1):
    S_Tm3 = np.asarray(S_Tm3, dtype=np.float64)
    S_Tm1 = np.asarray(S_Tm1, dtype=np.float64)
    if S_Tm3.shape != S_Tm1.shape:
        raise InvalidInputError(f"shape mismatch {S_Tm3.shape} vs {S_Tm1.shape}")
    return S_Tm3 * S_Tm1


def lobula_feedback(S_Tm3, S_Tm1, state, cfg):
    """Feedback correlation; returns ``(F, delayed feedback signal)``."""
    fstate = state.feedback if isinstance(state, PipelineState) else state
    fb = fstate.delayed()
    if cfg.k == 0:
        F = lobula_estmd(S_Tm3, S_Tm1)
    else:
        kfb = cfg.k * fb
        F = lobula_estmd(S_Tm3 + kfb, S_Tm1 + kfb)
    fstate.record(F)
    return F, fb


class Pipeline:
    """Streaming model: feed frames in time order, get a ``LayerTap`` per frame.

    Parameters
    ----------
    cfg : ModelConfig, optional
    variant : {"estmd", "feedback"}
    shape : tuple of int, optional
        Frame shape ``(height, width)``.  Taken from the first frame if omitted.
    """

    def __init__(self, cfg=None, variant="feedback", shape=None):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.cfg = cfg or ModelConfig()
        self.variant = variant
        self.warmup = warmup_horizon(self.cfg)
        self.state = None if shape is None else PipelineState(self.cfg, shape)

    @property
    def frame_count(self):
        return 0 if self.state is None else self.state.frame_count

    def _check(self, frame):
        f = np.asarray(frame, dtype=np.float64)
        if f.ndim != 2 or f.size == 0:
            raise InvalidInputError(f"expected a non-empty 2-D frame, got shape {f.shape}")
        if self.state is None:
            self.state = PipelineState(self.cfg, f.shape)
        elif f.shape != self.state.shape:
            raise InvalidInputError(f"frame shape changed from {self.state.shape} to {f.shape}")
        if not np.all(np.isfinite(f)):
            raise InvalidInputError("frame contains non-finite values")
        return f

    def _medulla(self, frame):
        st, cfg = self.state, self.cfg
        P = retina_blur(frame, cfg)
        L = lamina_highpass(P, st)
        L_I = lateral_inhibit_w1(L, st)
        S_ON, S_OFF = split_on_off(L_I)
        S_Tm3, S_Tm2 = medulla_fast(S_ON, S_OFF, cfg)
        S_Mi1, S_Tm1 = medulla_delay(S_Tm3, S_Tm2, st)
        return P, L, L_I, S_ON, S_OFF, S_Tm3, S_Tm2, S_Mi1, S_Tm1

    def step(self, frame):
        f = self._check(frame)
        P, L, L_I, S_ON, S_OFF, S_Tm3, S_Tm2, S_Mi1, S_Tm1 = self._medulla(f)
        fb = None
        if self.variant == "estmd":
            F = lobula_estmd(S_Tm3, S_Tm1)
        else:
            F, fb = lobula_feedback(S_Tm3, S_Tm1, self.state, self.cfg)
        index = self.state.frame_count
        self.state.frame_count += 1
        return LayerTap(index, index < self.warmup, P, L, L_I, S_ON, S_OFF,
                        S_Tm3, S_Tm2, S_Mi1, S_Tm1, F, fb)

    def run(self, frames):
        for frame in frames:
            yield self.step(frame)


def run_variants(frames, cfg=None, variants=VARIANTS):
    """Run several lobula variants over one stream, sharing the front end.

    Yields ``(index, {variant: F})``.  Each ``F`` equals what a separate
    ``Pipeline`` of that variant would produce.
    """
    cfg = cfg or ModelConfig()
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    front = Pipeline(cfg, "estmd")
    fstates = {}
    for frame in frames:
        f = front._check(frame)
        if not fstates:
            fstates = {v: FeedbackState(front.state.kernels.feedback, f.shape)
                       for v in variants if v == "feedback"}
        *_, S_Tm3, _, _, S_Tm1 = front._medulla(f)
        out = {}
        for v in variants:
            if v == "estmd":
                out[v] = lobula_estmd(S_Tm3, S_Tm1)
            else:
                out[v] = lobula_feedback(S_Tm3, S_Tm1, fstates[v], cfg)[0]
        index = front.state.frame_count
        front.state.frame_count += 1
        yield index, out
