"""Acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line, printed together at the end of the
pytest run (see ``conftest.py``), then asserts.
"""
import math
import time

import numpy as np
import pytest

from csguard import pipeline
from csguard.diffusion import Prompt, make_prior, make_schedule
from csguard.harness import ExperimentConfig, run_experiment
from csguard.harness.report import canonical_json
from csguard.rng import make_rng
from csguard.sensing import check_jl, gen_secret_matrix, project_consistency, split_components
from csguard.watermark import detection_threshold

from . import pinned
from .test_watermark import FPRS, exact_threshold

pytestmark = pytest.mark.acceptance

_START = time.perf_counter()
DEFAULTS = ExperimentConfig()
_REPORTS: dict = {}


def report(name: str, cfg: ExperimentConfig):
    if name not in _REPORTS:
        _REPORTS[name] = run_experiment(cfg)
    return _REPORTS[name]


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _overlap(a, b) -> bool:
    return a["ci_low"] <= b["ci_high"] and b["ci_low"] <= a["ci_high"]


def test_criterion_01_projection_algebra(record_criterion):
    def run():
        rng = make_rng(2024, 1)
        worst = {"consistency": 0.0, "idempotence": 0.0, "null": 0.0}
        minimal_ok = True
        for case in range(1000):
            n = int(rng.integers(8, 129))
            ratio = float(rng.uniform(0.1, 0.9))
            if math.floor(ratio * n) < 1:
                ratio = 1.0 / n + 1e-9
            a = gen_secret_matrix(10_000 + case, n, ratio)
            z = rng.standard_normal(n) * rng.uniform(0.1, 10.0)
            y = rng.standard_normal(a.m) * rng.uniform(0.1, 10.0)
            p = project_consistency(a, y, z)
            worst["consistency"] = max(worst["consistency"], np.linalg.norm(a.entries @ p - y) / np.linalg.norm(y))
            worst["idempotence"] = max(worst["idempotence"], np.linalg.norm(project_consistency(a, y, p) - p) / np.linalg.norm(p))
            worst["null"] = max(
                worst["null"], np.linalg.norm(split_components(a, p)[1] - split_components(a, z)[1]) / np.linalg.norm(z)
            )
            # 100 other feasible points: p plus null-space directions
            _, nulls = split_components(a, rng.standard_normal((n, 100)))
            dists = np.linalg.norm(p[:, None] + nulls - z[:, None], axis=0)
            minimal_ok &= bool(np.all(dists >= np.linalg.norm(p - z) * (1 - 1e-12)))
        return worst, minimal_ok

    (worst, minimal_ok), secs = _timed(run)
    ok = worst["consistency"] <= 1e-8 and worst["idempotence"] <= 1e-10 and worst["null"] <= 1e-10 and minimal_ok and secs < 10
    record_criterion(
        1,
        "projection algebra, 1000 fuzzed cases",
        ok,
        f"consistency {worst['consistency']:.1e}, idempotence {worst['idempotence']:.1e}, "
        f"null {worst['null']:.1e}, minimal {minimal_ok}, {secs:.1f}s",
    )
    assert ok


def test_criterion_02_jl_certification(record_criterion):
    def run():
        passed, worst = 0, []
        for seed in range(100):
            a = gen_secret_matrix(seed, 256, 0.8)
            pts = make_rng(seed, 2).standard_normal((50, 256))
            rep = check_jl(a, pts, 0.3)
            passed += rep.passed
            worst.append(rep.max_distortion)
        return passed, max(worst)

    (passed, worst), secs = _timed(run)
    ok = passed >= 95 and secs < 30
    record_criterion(2, "JL distortion <= 0.3 on >= 95/100 seeds", ok, f"{passed}/100 passed, worst {worst:.3f}, {secs:.1f}s")
    assert ok


def test_criterion_03_testbed_symmetry(record_criterion):
    def run():
        prior = make_prior(DEFAULTS.model_seed, DEFAULTS.n)
        sched = make_schedule(50, train_steps=DEFAULTS.train_steps)
        errs = []
        for i in range(100):
            z_T = make_rng(i, 3).standard_normal(DEFAULTS.n)
            prompt = Prompt(i % DEFAULTS.K)
            z0, _, _ = pipeline.sample(z_T, prior, prompt, sched)
            back = pipeline.invert(z0, prior, sched, prompt=prompt, iters=DEFAULTS.inversion_iters)
            errs.append(np.linalg.norm(back - z_T) / np.linalg.norm(z_T))
        return max(errs)

    worst, secs = _timed(run)
    ok = worst <= 1e-3 and secs < 60
    record_criterion(3, "unconstrained round trip rel. error <= 1e-3", ok, f"worst {worst:.2e} over 100 trials, {secs:.1f}s")
    assert ok


def test_criterion_04_benign_completeness(record_criterion):
    rep, secs = _timed(lambda: report("benign", DEFAULTS))
    g = rep.group("benign")
    ok = (
        g["trials"] == 100
        and g["detection_rate"] == 1.0
        and abs(g["mean_bit_accuracy"] - pinned.BENIGN_MEAN_BIT_ACCURACY) <= pinned.BENIGN_BIT_ACCURACY_TOL
        and g["max_deviation"] <= pinned.DEVIATION_BOUND
        and secs < 300
    )
    record_criterion(
        4,
        "benign TPR = 1.00, BitAcc within 0.03 of pinned",
        ok,
        f"TPR {g['detection_rate']:.2f}, BitAcc {g['mean_bit_accuracy']:.6f} (pinned {pinned.BENIGN_MEAN_BIT_ACCURACY}), "
        f"max deviation {g['max_deviation']:.4f}, {secs:.1f}s",
    )
    assert ok


def test_criterion_05_vulnerability_control(record_criterion):
    rep = report("plain_forge", DEFAULTS.replace(mode="forge", scheme="plain", trials=32))
    g = rep.group("forge")
    ok = g["trials"] == 32 and g["detection_rate"] >= 0.9
    record_criterion(5, "reprompt attack on plain baseline >= 0.9", ok, f"ASR {g['detection_rate']:.3f} over 32 trials")
    assert ok


def test_criterion_06_forgery_gap(record_criterion):
    benign = report("benign", DEFAULTS).group("benign")
    rep, secs = _timed(lambda: report("forge", DEFAULTS.replace(mode="forge", trials=32)))
    g = rep.group("forge")
    gap = benign["mean_bit_accuracy"] - g["mean_bit_accuracy"]
    ok = g["detection_rate"] <= benign["detection_rate"] - 0.5 and gap >= 0.15 and secs < 300
    record_criterion(
        6,
        "forged rate <= benign - 0.5 and BitAcc gap >= 0.15",
        ok,
        f"ASR {g['detection_rate']:.3f} vs TPR {benign['detection_rate']:.2f}, forged BitAcc {g['mean_bit_accuracy']:.4f}, "
        f"gap {gap:.4f}, {secs:.1f}s",
    )
    assert ok


def test_criterion_07_informed_flatness(record_criterion):
    base = DEFAULTS.replace(mode="informed_forge", trials=32)
    groups = {s: report(f"informed_{s}", base.replace(matrix_similarity=s)).group("informed") for s in (0.0, 0.5, 0.9)}
    flat = all(_overlap(groups[a], groups[b]) for a in groups for b in groups)
    reprompt = report("forge", DEFAULTS.replace(mode="forge", trials=32)).group("forge")
    same_as_reprompt = _overlap(groups[0.0], reprompt)
    # similarity 1 with the victim's own model is the victim's own round trip
    exact = report("informed_exact", base.replace(matrix_similarity=1.0, attacker_mismatch=0.0)).group("informed")
    ok = flat and same_as_reprompt and exact["detection_rate"] >= 0.9
    rates = ", ".join(f"s={s}: {g['detection_rate']:.3f}" for s, g in groups.items())
    record_criterion(
        7,
        "informed attack flat over similarity, s=1 succeeds",
        ok,
        f"{rates}; s=0 vs reprompt overlap {same_as_reprompt}; s=1 (victim model) {exact['detection_rate']:.3f}",
    )
    assert ok


def test_criterion_08_random_observation(record_criterion):
    rep = report("observation", DEFAULTS.replace(mode="ablate_observation", trials=32))
    intrinsic = rep.group("benign", "trajectory_intrinsic")
    rand = rep.group("benign", "random")
    ok = rand["detection_rate"] <= 0.2 and intrinsic["detection_rate"] == 1.0
    record_criterion(
        8,
        "random observation TPR <= 0.2, intrinsic 1.0",
        ok,
        f"random {rand['detection_rate']:.3f} (BitAcc {rand['mean_bit_accuracy']:.3f}), intrinsic {intrinsic['detection_rate']:.3f}",
    )
    assert ok


def _non_increasing_within_ci(series) -> bool:
    return all(cur["detection_rate"] <= prev["ci_high"] for prev, cur in zip(series, series[1:]))


def test_criterion_09_ablation_trends(record_criterion):
    cs = report("ablate_cs", DEFAULTS.replace(mode="ablate_cs", trials=32))
    proj = report("ablate_proj", DEFAULTS.replace(mode="ablate_proj", trials=32))
    cs_asr = [cs.group("forge", v) for v in (0.2, 0.5, 0.8)]
    proj_asr = [proj.group("forge", v) for v in (0.1, 0.4, 0.8)]
    proj_acc = [proj.group("benign", v)["mean_bit_accuracy"] for v in (0.1, 0.4, 0.8)]
    cs_ok = _non_increasing_within_ci(cs_asr)
    proj_asr_ok = _non_increasing_within_ci(proj_asr) and proj_asr[-1]["detection_rate"] < proj_asr[0]["detection_rate"]
    proj_acc_ok = all(b <= a for a, b in zip(proj_acc, proj_acc[1:])) and proj_acc[-1] < proj_acc[0]
    ok = cs_ok and proj_asr_ok and proj_acc_ok
    record_criterion(
        9,
        "ASR falls with cs_ratio and proj_ratio, BitAcc falls with proj_ratio",
        ok,
        "cs ASR " + "/".join(f"{g['detection_rate']:.2f}" for g in cs_asr)
        + "; proj ASR " + "/".join(f"{g['detection_rate']:.2f}" for g in proj_asr)
        + "; proj BitAcc " + "/".join(f"{v:.3f}" for v in proj_acc),
    )
    assert ok


def test_criterion_10_fpr_calibration(record_criterion):
    rep = report("calibration", DEFAULTS.replace(mode="fpr_calibration", trials=32, grid=(1e-2,)))
    null = rep.group("null", 1e-2)
    mismatches = [(L, f) for f in FPRS for L in range(1, 65) if detection_threshold(L, f) != exact_threshold(L, f)]
    ok = null["trials"] == 10_000 and null["detection_rate"] <= 1.5e-2 and not mismatches
    record_criterion(
        10,
        "empirical FPR <= 1.5e-2 at 1e-2, exact thresholds for L <= 64",
        ok,
        f"null rate {null['detection_rate']:.4f} over {null['trials']}, threshold mismatches {len(mismatches)}; "
        f"TPR at 1e-2 {rep.group('benign', 1e-2)['detection_rate']:.2f}",
    )
    assert ok


def test_criterion_11_determinism_and_runtime(record_criterion):
    first = report("benign", DEFAULTS)
    second = run_experiment(DEFAULTS)
    same_benign = canonical_json(first) == canonical_json(second)
    forge_cfg = DEFAULTS.replace(mode="forge", trials=32)
    same_forge = canonical_json(report("forge", forge_cfg)) == canonical_json(run_experiment(forge_cfg))
    elapsed = time.perf_counter() - _START
    ok = same_benign and same_forge and elapsed < 1200
    record_criterion(
        11,
        "byte-identical reports, suite < 20 min",
        ok,
        f"benign identical {same_benign}, forge identical {same_forge}, acceptance module {elapsed:.0f}s",
    )
    assert ok
