"""End-to-end acceptance gate, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest summary
under "acceptance criteria".
"""

import hashlib
import time

import numpy as np
import pytest

from oracle import reference, rel_err
from stmd.cli import evaluate_scene
from stmd.config import EvalConfig
from stmd.kernels import (
    GammaSpec,
    GaussianSpec,
    exp_kernel,
    gamma_kernel,
    gaussian_kernel,
    highpass_kernel,
)
from stmd.layers import ModelConfig, Pipeline, build_kernels, run_variants, warmup_horizon
from stmd.scenegen import SceneConfig, generate_sequence, iter_frames

CFG = ModelConfig()
EXPERIMENT_1 = SceneConfig()  # 500 x 250, 1000 frames, clutter at 250 px/s, target at 500 px/s


def test_1_kernel_suite(acceptance):
    start = time.perf_counter()
    worst = {"sum": 0.0, "hp": 0.0, "peak": 0.0, "dc": 0.0}
    for n in (1, 2, 3, 5, 6, 8):
        for tau in (1.0, 2.0, 3.0, 6.0, 9.0, 25.0):
            taps = gamma_kernel(GammaSpec(n, tau)).taps
            worst["sum"] = max(worst["sum"], abs(taps.sum() - 1.0))
            worst["peak"] = max(worst["peak"], abs(np.argmax(taps) - tau))
    for lam in (0.5, 1.0, 3.0, 9.0, 30.0):
        worst["sum"] = max(worst["sum"], abs(exp_kernel(lam).taps.sum() - 1.0))
    for g1, g2 in (((2, 1.0), (6, 3.0)), ((2, 3.0), (6, 9.0)), ((1, 2.0), (4, 10.0))):
        hp = highpass_kernel(GammaSpec(*g1), GammaSpec(*g2))
        worst["hp"] = max(worst["hp"], abs(hp.taps.sum()))
    for sigma in (0.5, 1.0, 1.25, 3.0, 7.0):
        worst["dc"] = max(worst["dc"], abs(gaussian_kernel(GaussianSpec(sigma)).weights.sum() - 1))
    elapsed = time.perf_counter() - start
    ok = (worst["sum"] <= 1e-12 and worst["hp"] <= 1e-12 and worst["peak"] <= 1.0
          and worst["dc"] <= 1e-12 and elapsed < 1.0)
    acceptance(1, "kernel suite", ok,
               f"|sum-1|={worst['sum']:.1e} |hp sum|={worst['hp']:.1e} "
               f"peak offset={worst['peak']:.0f} dt |DC-1|={worst['dc']:.1e} in {elapsed:.2f} s")
    assert ok


def test_2_oracle_equivalence(acceptance):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        frames = np.random.default_rng(seed).uniform(0, 255, (100, 16, 16))
        ref = reference(frames, CFG, "feedback")
        fb = np.array([t.F for t in Pipeline(CFG, "feedback").run(frames)])
        est = np.array([t.F for t in Pipeline(CFG, "estmd").run(frames)])
        worst = max(worst, rel_err(fb, ref["F"]), rel_err(est, ref["S_Tm3"] * ref["S_Tm1"]))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 30.0
    acceptance(2, "oracle equivalence", ok,
               f"max relative error {worst:.1e} over 20 seeds x 2 variants in {elapsed:.1f} s")
    assert ok


def _digests(frames, cfg, variant):
    return [hashlib.sha256(np.ascontiguousarray(t.F).tobytes()).digest()
            for t in Pipeline(cfg, variant).run(frames)]


def test_3_feedback_reduction(acceptance):
    cfg = CFG.replace(k=0.0)
    frames = iter_frames(EXPERIMENT_1)
    est = _digests(iter_frames(EXPERIMENT_1), cfg, "estmd")
    fb = _digests(frames, cfg, "feedback")
    differing = sum(a != b for a, b in zip(est, fb))
    ok = len(est) == len(fb) == EXPERIMENT_1.n_frames and differing == 0
    acceptance(3, "feedback reduction (k=0)", ok,
               f"{differing} of {len(est)} experiment-1 frames differ bitwise")
    assert ok


def test_4_static_rejection(acceptance):
    rng = np.random.default_rng(4)
    inputs = {
        "uniform": np.full((30, 40), 200.0),
        "noise": rng.uniform(0, 255, (30, 40)),
        "clutter": generate_sequence(SceneConfig(width=120, height=40, duration=1,
                                                 target_luminance=200))[0][0].astype(float),
        "edge": np.where(np.arange(40) < 20, 10.0, 250.0)[None, :].repeat(30, 0),
    }
    n = warmup_horizon(CFG)
    worst = 0.0
    for img in inputs.values():
        for variant in ("estmd", "feedback"):
            F = np.array([t.F for t in Pipeline(CFG, variant).run([img] * (n + 60))])[n:]
            worst = max(worst, np.max(np.abs(F)) / np.max(np.abs(img)) ** 2)
    ok = worst < 1e-9
    acceptance(4, "static rejection", ok,
               f"max|F| / max|input|^2 = {worst:.1e} after {n} warm-up frames")
    assert ok


def test_5_localization(acceptance):
    scene = SceneConfig(background="blank", background_luminance=200, target_luminance=50,
                        V_T=500, V_B=0)
    frames, gt = generate_sequence(scene)
    warm = warmup_horizon(CFG)
    hits = {"estmd": [], "feedback": []}
    for i, out in run_variants(frames, CFG):
        x, y, present = gt[i]
        if i < warm or not present:
            continue
        for v, F in out.items():
            yy, xx = np.unravel_index(np.argmax(F), F.shape)
            hits[v].append(np.hypot(xx - x, yy - y) <= 5.0)
    rates = {v: float(np.mean(h)) for v, h in hits.items()}
    ok = all(r >= 0.9 for r in rates.values())
    acceptance(5, "localization", ok,
               "within 5 px: " + ", ".join(f"{v} {r:.1%}" for v, r in rates.items())
               + f" of {len(hits['estmd'])} frames")
    assert ok


def test_6_size_tuning(acceptance):
    def peaks(width):
        scene = SceneConfig(background="blank", V_B=0, height=80, duration=700,
                            target_size=width, target_height=5)
        frames, _ = generate_sequence(scene)
        warm = warmup_horizon(CFG)
        best = {"estmd": 0.0, "feedback": 0.0}
        for i, out in run_variants(frames, CFG):
            if i >= warm:
                for v, F in out.items():
                    best[v] = max(best[v], float(F.max()))
        return best

    small, bar = peaks(5), peaks(40)
    ratios = {v: small[v] / bar[v] if bar[v] > 0 else np.inf for v in small}
    ok = all(r >= 2.0 for r in ratios.values())
    acceptance(6, "size tuning", ok,
               "5x5 / 40x5 peak: " + ", ".join(f"{v} {r:.2f}" for v, r in ratios.items()))
    assert ok


CLUTTER_SEEDS = (0, 1, 2)


def _clutter_scene(seed, V_T):
    # 100 rows and 500 frames keep the whole check to a few minutes
    return SceneConfig(background="procedural", seed=seed, V_B=250, V_T=V_T,
                       height=100, duration=500)


@pytest.fixture(scope="module")
def clutter_results():
    ev = EvalConfig()
    return {(seed, v_t): evaluate_scene(_clutter_scene(seed, v_t), CFG, ev)
            for v_t in (200, 500, 750) for seed in CLUTTER_SEEDS}


def test_7_feedback_advantage(acceptance, clutter_results):
    at_500 = {s: clutter_results[(s, 500)] for s in CLUTTER_SEEDS}
    each = all(r["feedback"] >= r["estmd"] for r in at_500.values())

    def advantage(v_t):
        return float(np.mean([clutter_results[(s, v_t)]["feedback"]
                              - clutter_results[(s, v_t)]["estmd"] for s in CLUTTER_SEEDS]))

    slow, fast = advantage(200), advantage(750)
    ok = each and fast > slow
    detail = " ".join(f"seed {s}: {r['feedback']:.3f} vs {r['estmd']:.3f};"
                      for s, r in at_500.items())
    acceptance(7, "feedback advantage", ok,
               f"dr_at_fa(10) feedback vs estmd at V_T=500 {detail} "
               f"mean advantage V_T=200 {slow:+.3f}, V_T=750 {fast:+.3f}")
    assert ok


def test_8_performance(acceptance):
    start = time.perf_counter()
    result = evaluate_scene(EXPERIMENT_1, CFG, EvalConfig())
    elapsed = time.perf_counter() - start
    ok = elapsed <= 300.0 and all(np.isfinite(list(result.values())))
    acceptance(8, "performance", ok,
               f"experiment 1 (generate, both variants, ROC) in {elapsed:.0f} s; "
               + ", ".join(f"{v} dr_at_fa(10)={r:.3f}" for v, r in result.items()))
    assert ok
