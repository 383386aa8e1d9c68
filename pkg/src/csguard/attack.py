"""Forgery attacks and a latent-noise distortion proxy.

``reprompt_forge`` never sees the secret matrix: it inverts a watermarked
latent with the attacker's own model and regenerates it under a different
prompt.  ``informed_forge`` is handed a noisy copy of the matrix and runs the
full constrained round trip with it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pipeline
from .diffusion import DiffusionSchedule, GmmPrior, Prompt
from .pipeline import Constraint, CsGuardParams
from .rng import STREAM_DISTORT, make_rng
from .sensing import SecretMatrix, measure, perturb_matrix
from .watermark import VerifyReport


@dataclass(frozen=True)
class AttackConfig:
    adversarial_prompt: Prompt
    attacker_steps: int = 50
    matrix_similarity: float | None = None
    distortion_sigma: float | None = None
    inversion_iters: int = 5

    def __post_init__(self):
        if self.attacker_steps < 1:
            raise ValueError("attacker_steps must be >= 1")
        if self.matrix_similarity is not None and not 0.0 <= self.matrix_similarity <= 1.0:
            raise ValueError(f"matrix_similarity must lie in [0, 1], got {self.matrix_similarity}")
        if self.distortion_sigma is not None and self.distortion_sigma < 0:
            raise ValueError("distortion_sigma must be >= 0")
        if self.inversion_iters < 0:
            raise ValueError("inversion_iters must be >= 0")


@dataclass(frozen=True, eq=False)
class AttackOutcome:
    forged_z0: np.ndarray
    victim_report: VerifyReport

    @property
    def success(self) -> bool:
        return self.victim_report.detected


def _attacker_schedule(cfg: AttackConfig, sched: DiffusionSchedule) -> DiffusionSchedule:
    return sched if cfg.attacker_steps == sched.T else sched.with_steps(cfg.attacker_steps)


def reprompt_forge(
    benign_z0: np.ndarray,
    attacker_prior: GmmPrior,
    cfg: AttackConfig,
    sched: DiffusionSchedule,
) -> np.ndarray:
    """Invert with the attacker's model, then regenerate under ``cfg.adversarial_prompt``."""
    own = _attacker_schedule(cfg, sched)
    z_T = pipeline.invert(benign_z0, attacker_prior, own, iters=cfg.inversion_iters)
    forged, _, _ = pipeline.sample(z_T, attacker_prior, cfg.adversarial_prompt, own)
    return forged


def informed_forge(
    benign_z0: np.ndarray,
    a_true: SecretMatrix,
    attacker_prior: GmmPrior,
    cfg: AttackConfig,
    params: CsGuardParams,
    sched: DiffusionSchedule,
    seed: int,
) -> np.ndarray:
    """Constrained inversion and regeneration using an estimate of the matrix.

    ``a_true`` is only read through :func:`perturb_matrix`.
    """
    similarity = 0.0 if cfg.matrix_similarity is None else cfg.matrix_similarity
    estimate = perturb_matrix(a_true, similarity, seed)
    own = _attacker_schedule(cfg, sched)
    t_proj = int(np.floor(params.proj_ratio * own.T))
    constraint = None
    if t_proj > 0:
        constraint = Constraint(estimate, t_proj, measure(estimate, benign_z0))
    z_T = pipeline.invert(benign_z0, attacker_prior, own, constraint, iters=cfg.inversion_iters)
    forged, _, _ = pipeline.sample(
        z_T,
        attacker_prior,
        cfg.adversarial_prompt,
        own,
        Constraint(estimate, t_proj) if t_proj > 0 else None,
    )
    return forged


def distort_latent(z0: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add ``sigma`` times standard Gaussian noise; ``sigma=0`` returns a copy."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    z0 = np.asarray(z0, dtype=np.float64)
    if sigma == 0:
        return z0.copy()
    return z0 + sigma * make_rng(seed, STREAM_DISTORT).standard_normal(z0.shape)


def outcome(forged_z0: np.ndarray, victim_report: VerifyReport) -> AttackOutcome:
    return AttackOutcome(forged_z0, victim_report)
