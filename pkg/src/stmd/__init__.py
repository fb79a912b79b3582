"""Small target motion detection: a bio-inspired ESTMD pipeline with an
optional output feedback loop, synthetic stimuli and ROC evaluation."""

from .evaluation import Detection, RocPoint, dr_at_fa, extract_detections, roc_sweep
from .kernels import GammaSpec, GaussianSpec, W2Params, convolve_spatial, gamma_kernel
from .layers import LayerTap, ModelConfig, Pipeline, run_variants, warmup_horizon
from .scenegen import GroundTruthTrack, SceneConfig, generate_sequence, ground_truth, iter_frames

__all__ = [
    "Detection", "RocPoint", "dr_at_fa", "extract_detections", "roc_sweep",
    "GammaSpec", "GaussianSpec", "W2Params", "convolve_spatial", "gamma_kernel",
    "LayerTap", "ModelConfig", "Pipeline", "run_variants", "warmup_horizon",
    "GroundTruthTrack", "SceneConfig", "generate_sequence", "ground_truth", "iter_frames",
]
