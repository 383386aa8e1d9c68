"""Trial runners and experiment orchestration.

Trial ``i`` draws everything it needs from ``seed_base + i``, so trials are
independent and may run in any order or in parallel without changing a
single reported value.  Shared assets (prior, matrix, schedule) are rebuilt
from config fields and cached per process.
"""
from __future__ import annotations

import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import __version__
from .. import attack, diffusion, pipeline, sensing
from ..rng import STREAM_TRIAL, make_rng
from ..watermark import Payload, WatermarkKey, detection_threshold, extract_bits
from .config import DEFAULTS_VERSION, SWEEP_AXES, ExperimentConfig, validate
from .report import ExperimentReport, aggregate_rows

WORKERS_ENV = "CSGUARD_WORKERS"
ABLATION_AXES = ("cs_ratio", "proj_ratio", "T")

# kinds of trial evaluated at each point of a sweep mode
_SWEEP_KINDS = {
    "ablate_cs": ("benign", "forge"),
    "ablate_proj": ("benign", "forge"),
    "ablate_steps": ("benign", "forge"),
    "ablate_observation": ("benign",),
    "distortion_sweep": ("benign",),
}
_MODE_KIND = {"benign": "benign", "forge": "forge", "informed_forge": "informed"}


@dataclass(frozen=True, eq=False)
class Assets:
    prior: diffusion.GmmPrior
    attacker_prior: diffusion.GmmPrior
    matrix: sensing.SecretMatrix
    sched: diffusion.DiffusionSchedule
    params: pipeline.CsGuardParams


@lru_cache(maxsize=8)
def _prior(seed, n, K, std, mean_range):
    return diffusion.make_prior(seed, n, K, std, mean_range)


@lru_cache(maxsize=8)
def _matrix(seed, n, cs_ratio):
    return sensing.gen_secret_matrix_with_fallback(seed, n, cs_ratio)


@lru_cache(maxsize=8)
def _schedule(T, train_steps):
    return diffusion.make_schedule(T, train_steps=train_steps)


@lru_cache(maxsize=8)
def _attacker(prior_key, mismatch, seed):
    return diffusion.related_prior(_prior(*prior_key), mismatch, seed)


def build_assets(cfg: ExperimentConfig) -> Assets:
    prior_key = (cfg.model_seed, cfg.n, cfg.K, cfg.component_std, cfg.mean_range)
    params = pipeline.CsGuardParams(
        proj_ratio=cfg.proj_ratio,
        cs_ratio=cfg.cs_ratio,
        T=cfg.T,
        fpr=cfg.fpr,
        observation_mode=cfg.observation_mode,
        inversion_iters=cfg.inversion_iters,
        recompute_noise=cfg.recompute_noise,
    )
    return Assets(
        prior=_prior(*prior_key),
        attacker_prior=_attacker(prior_key, cfg.attacker_mismatch, cfg.attacker_seed),
        matrix=_matrix(cfg.matrix_seed, cfg.n, cfg.cs_ratio),
        sched=_schedule(cfg.T, cfg.train_steps),
        params=params,
    )


@dataclass(frozen=True, eq=False)
class TrialSetup:
    seed: int
    key: WatermarkKey
    payload: Payload
    prompt: diffusion.Prompt
    adversarial_prompt: diffusion.Prompt


def trial_setup(cfg: ExperimentConfig, trial_id: int) -> TrialSetup:
    seed = cfg.seed_base + trial_id
    cls = trial_id % cfg.K
    return TrialSetup(
        seed=seed,
        key=WatermarkKey(seed),
        payload=Payload.random(seed, cfg.L),
        prompt=diffusion.Prompt(cls, f"class {cls}"),
        adversarial_prompt=diffusion.Prompt((cls + cfg.K // 2) % cfg.K, "adversarial"),
    )


def _generate(cfg, assets, s):
    if cfg.scheme == "plain":
        return pipeline.generate_plain(s.key, s.payload, s.prompt, assets.params, assets.prior, assets.sched, s.seed)
    return pipeline.generate_watermarked(
        s.key, s.payload, s.prompt, assets.matrix, assets.params, assets.prior, assets.sched, s.seed
    )


def _verify(cfg, assets, z0, s):
    if cfg.scheme == "plain":
        return pipeline.invert_plain(z0, s.key, s.payload, assets.params, assets.prior, assets.sched)[0]
    return pipeline.invert_and_verify(z0, assets.matrix, s.key, s.payload, assets.params, assets.prior, assets.sched)[0]


def run_trial(cfg: ExperimentConfig, trial_id: int, kind: str) -> dict:
    """One benign, forged or informed-forged trial; returns a report row."""
    assets = build_assets(cfg)
    s = trial_setup(cfg, trial_id)
    record = _generate(cfg, assets, s)
    z0 = record.z0
    if kind in ("forge", "informed"):
        acfg = attack.AttackConfig(
            adversarial_prompt=s.adversarial_prompt,
            attacker_steps=cfg.effective_attacker_steps,
            matrix_similarity=cfg.matrix_similarity if kind == "informed" else None,
            inversion_iters=cfg.inversion_iters,
        )
        if kind == "forge":
            z0 = attack.reprompt_forge(z0, assets.attacker_prior, acfg, assets.sched)
        else:
            z0 = attack.informed_forge(
                z0, assets.matrix, assets.attacker_prior, acfg, assets.params, assets.sched, s.seed
            )
    elif kind != "benign":
        raise ValueError(f"unknown trial kind {kind!r}")
    if cfg.distortion_sigma > 0:
        z0 = attack.distort_latent(z0, cfg.distortion_sigma, s.seed)
    rep = _verify(cfg, assets, z0, s)
    return {
        "trial_id": trial_id,
        "point": None,
        "kind": kind,
        "bit_accuracy": rep.bit_accuracy,
        "matched_bits": rep.matched_bits,
        "detected": rep.detected,
        "deviation": record.trajectory_deviation,
    }


def null_matches(cfg: ExperimentConfig, trial_id: int) -> int:
    """Matched bits of an unwatermarked latent against trial ``trial_id``'s key and payload."""
    s = trial_setup(cfg, trial_id)
    z = make_rng(s.seed, STREAM_TRIAL).standard_normal(cfg.n)
    recovered, _ = extract_bits(z, s.key, cfg.L)
    return int(np.sum(recovered.bits == s.payload.bits))


def _task(args):
    cfg, trial_id, kind, point = args
    row = run_trial(cfg, trial_id, kind)
    row["point"] = point
    return row


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_tasks(tasks: list, workers: int | None = None) -> list[dict]:
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(tasks) < 2:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _report(cfg, rows, axis=None, timing=None) -> ExperimentReport:
    return ExperimentReport(
        config_echo=cfg.to_dict(),
        per_trial=rows,
        aggregate=aggregate_rows(rows),
        version=f"{__version__}+{DEFAULTS_VERSION}",
        seed_base=cfg.seed_base,
        axis=axis,
        timing=timing or {},
    )


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentReport:
    validate(cfg)
    if cfg.mode == "timing":
        return _run_timing(cfg)
    if cfg.mode == "fpr_calibration":
        return _run_calibration(cfg, workers)
    if cfg.mode in _SWEEP_KINDS:
        axis = SWEEP_AXES[cfg.mode]
        tasks = []
        for value in cfg.effective_grid:
            sub = cfg.replace(**{axis: value})
            for kind in _SWEEP_KINDS[cfg.mode]:
                tasks += [(sub, i, kind, value) for i in range(cfg.trials)]
        return _report(cfg, _run_tasks(tasks, workers), axis=axis)
    kind = _MODE_KIND[cfg.mode]
    return _report(cfg, _run_tasks([(cfg, i, kind, None) for i in range(cfg.trials)], workers))


def run_ablation(cfg: ExperimentConfig, axis: str, grid, workers: int | None = None) -> list[ExperimentReport]:
    """One report per grid value of ``axis``, all sharing ``seed_base``."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    if cfg.mode not in _MODE_KIND:
        raise ValueError(f"ablation needs a single-point base mode, got {cfg.mode!r}")
    return [run_experiment(validate(cfg.replace(**{axis: v})), workers) for v in grid]


def calibrate_fpr(cfg: ExperimentConfig, fpr_grid, workers: int | None = None) -> ExperimentReport:
    return run_experiment(cfg.replace(mode="fpr_calibration", grid=tuple(fpr_grid)), workers)


def _run_calibration(cfg, workers):
    # matched-bit counts do not depend on the threshold, so each trial is run
    # once and re-scored at every grid fpr
    tasks = [(cfg, i, kind, None) for kind in ("benign", "forge") for i in range(cfg.trials)]
    scored = _run_tasks(tasks, workers)
    nulls = [null_matches(cfg, i) for i in range(cfg.null_trials)]
    rows = []
    for fpr in cfg.effective_grid:
        tau = detection_threshold(cfg.L, fpr)
        for i, m in enumerate(nulls):
            rows.append(
                {
                    "trial_id": i,
                    "point": fpr,
                    "kind": "null",
                    "bit_accuracy": m / cfg.L,
                    "matched_bits": m,
                    "detected": m >= tau,
                    "deviation": 0.0,
                }
            )
        for r in scored:
            rows.append({**r, "point": fpr, "detected": r["matched_bits"] >= tau})
    return _report(cfg, rows, axis="fpr")


def _run_timing(cfg):
    """Matched generation pairs with and without projection on identical seeds."""
    plain_cfg = cfg.replace(proj_ratio=0.0)
    assets = build_assets(cfg)
    plain_assets = build_assets(plain_cfg)
    rows, with_proj, without = [], [], []
    for i in range(cfg.trials):
        s = trial_setup(cfg, i)
        for c, a, kind, bucket in ((cfg, assets, "benign", with_proj), (plain_cfg, plain_assets, "plain", without)):
            start = time.perf_counter()
            record = _generate(c, a, s)
            bucket.append(time.perf_counter() - start)
            rep = _verify(c, a, record.z0, s)
            rows.append(
                {
                    "trial_id": i,
                    "point": None,
                    "kind": kind,
                    "bit_accuracy": rep.bit_accuracy,
                    "matched_bits": rep.matched_bits,
                    "detected": rep.detected,
                    "deviation": record.trajectory_deviation,
                }
            )
    timing = {
        "generation_seconds_with_projection": with_proj,
        "generation_seconds_without_projection": without,
        "time_ratio": statistics.median(with_proj) / statistics.median(without),
    }
    return _report(cfg, rows, timing=timing)
