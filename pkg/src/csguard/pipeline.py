"""Watermarked generation and constrained inversion.

``generate_watermarked`` runs the DDIM sampler from a watermarked initial
latent.  From step ``T_proj`` downward the clean estimate is projected onto
``{z : A z = y}``, where ``y`` is the measurement of the clean estimate at
``T_proj`` itself.  ``invert_and_verify`` rebuilds ``y`` from the image, runs
the inverse sampler with the same projections and checks the watermark in the
recovered initial latent.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import sensing
from .diffusion import (
    NULL_PROMPT,
    DiffusionSchedule,
    GmmPrior,
    Prompt,
    ddim_denoise_step,
    ddim_invert_step,
    estimate_clean,
)
from .rng import STREAM_OBSERVATION, make_rng
from .sensing import Observation, SecretMatrix
from .watermark import Payload, VerifyReport, WatermarkKey, embed_watermark, verify_watermark


class ObservationMode(str, Enum):
    TRAJECTORY_INTRINSIC = "trajectory_intrinsic"
    RANDOM = "random"


@dataclass(frozen=True)
class CsGuardParams:
    proj_ratio: float = 0.4
    cs_ratio: float = 0.8
    T: int = 50
    fpr: float = 1e-10
    observation_mode: ObservationMode = ObservationMode.TRAJECTORY_INTRINSIC
    # fixed-point refinements per inversion step; 0 is plain DDIM inversion
    inversion_iters: int = 5
    recompute_noise: bool = False

    def __post_init__(self):
        if not 0.0 <= self.proj_ratio < 1.0:
            raise ValueError(f"proj_ratio must lie in [0, 1), got {self.proj_ratio}")
        if not 0.0 < self.cs_ratio <= 1.0:
            raise ValueError(f"cs_ratio must lie in (0, 1], got {self.cs_ratio}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 < self.fpr <= 1.0:
            raise ValueError(f"fpr must lie in (0, 1], got {self.fpr}")
        if self.inversion_iters < 0:
            raise ValueError("inversion_iters must be >= 0")
        object.__setattr__(self, "observation_mode", ObservationMode(self.observation_mode))

    @property
    def t_proj(self) -> int:
        return int(np.floor(self.proj_ratio * self.T))


@dataclass(frozen=True, eq=False)
class GenerationRecord:
    z0: np.ndarray
    y: Observation
    z_T_initial: np.ndarray
    prompt: Prompt
    trajectory_deviation: float


@dataclass(frozen=True)
class Constraint:
    matrix: SecretMatrix
    t_proj: int
    observation: Observation | None = None


def _predict(prior, z, t, prompt, sched, constraint, recompute_noise):
    """Clean estimate and noise prediction used by the sampler step out of ``t``."""
    eps = prior.denoise(z, t, prompt, sched).eps_hat
    x0 = estimate_clean(z, eps, t, sched)
    deviation = 0.0
    if constraint is not None and t < constraint.t_proj:
        projected = sensing.project_consistency(constraint.matrix, constraint.observation, x0)
        deviation = float(np.linalg.norm(projected - x0) / np.linalg.norm(x0))
        x0 = projected
        if recompute_noise:
            eps = (z - sched.signal(t) * x0) / sched.noise(t)
    return x0, eps, deviation


def sample(
    z_T: np.ndarray,
    prior: GmmPrior,
    prompt: Prompt,
    sched: DiffusionSchedule,
    constraint: Constraint | None = None,
    *,
    random_observation: np.ndarray | None = None,
    recompute_noise: bool = False,
) -> tuple[np.ndarray, Observation | None, float]:
    """Deterministic DDIM sampling from ``z_T``; returns (z0, y, max deviation)."""
    z = np.asarray(z_T, dtype=np.float64)
    worst = 0.0
    for t in range(sched.T, 0, -1):
        if constraint is not None and t == constraint.t_proj:
            if random_observation is not None:
                y = Observation(np.asarray(random_observation, dtype=np.float64), source_step=t)
            else:
                eps = prior.denoise(z, t, prompt, sched).eps_hat
                y = sensing.measure(constraint.matrix, estimate_clean(z, eps, t, sched), source_step=t)
            constraint = Constraint(constraint.matrix, constraint.t_proj, y)
        x0, eps, dev = _predict(prior, z, t, prompt, sched, constraint, recompute_noise)
        worst = max(worst, dev)
        z = ddim_denoise_step(x0, eps, t, sched)
    observation = constraint.observation if constraint is not None else None
    return z, observation, worst


def invert(
    z0: np.ndarray,
    prior: GmmPrior,
    sched: DiffusionSchedule,
    constraint: Constraint | None = None,
    *,
    prompt: Prompt = NULL_PROMPT,
    iters: int = 5,
    recompute_noise: bool = False,
) -> np.ndarray:
    """Inverse DDIM from ``z0`` to ``z_T``.

    Step ``t -> t+1`` undoes the sampler step ``t+1 -> t``, whose predictions
    are taken at ``(z_{t+1}, t+1)``.  The first guess evaluates them at
    ``(z_t, t+1)``; each refinement re-evaluates at the current guess and
    corrects it by the residual of the forward step (null-space part only on
    projected steps).
    """
    z = np.asarray(z0, dtype=np.float64)
    for t in range(sched.T):
        x0, eps, _ = _predict(prior, z, t + 1, prompt, sched, constraint, recompute_noise)
        nxt = ddim_invert_step(x0, eps, t, sched)
        projected = constraint is not None and t + 1 < constraint.t_proj
        for _ in range(iters):
            x0, eps, _ = _predict(prior, nxt, t + 1, prompt, sched, constraint, recompute_noise)
            residual = z - ddim_denoise_step(x0, eps, t + 1, sched)
            if projected:
                # the range part of a projected step is pinned by y and is not
                # invertible, so only the null-space part is refined
                residual = sensing.split_components(constraint.matrix, residual)[1]
            nxt = nxt + residual
        z = nxt
    return z


def _initial_latent(key, payload, n, seed):
    return embed_watermark(key, payload, n, seed)


def generate_watermarked(
    key: WatermarkKey,
    payload: Payload,
    prompt: Prompt,
    a: SecretMatrix,
    params: CsGuardParams,
    prior: GmmPrior,
    sched: DiffusionSchedule,
    seed: int,
) -> GenerationRecord:
    """Watermarked generation with consistency projection below ``T_proj``."""
    z_T = _initial_latent(key, payload, prior.n, seed)
    t_proj = params.t_proj
    if t_proj == 0:
        z0, _, _ = sample(z_T, prior, prompt, sched, recompute_noise=params.recompute_noise)
        return GenerationRecord(z0, sensing.measure(a, z0), z_T, prompt, 0.0)
    random_y = None
    if params.observation_mode is ObservationMode.RANDOM:
        random_y = make_rng(seed, STREAM_OBSERVATION).standard_normal(a.m)
    z0, y, deviation = sample(
        z_T,
        prior,
        prompt,
        sched,
        Constraint(a, t_proj),
        random_observation=random_y,
        recompute_noise=params.recompute_noise,
    )
    return GenerationRecord(z0, y, z_T, prompt, deviation)


def invert_and_verify(
    z0: np.ndarray,
    a: SecretMatrix,
    key: WatermarkKey,
    payload: Payload,
    params: CsGuardParams,
    prior: GmmPrior,
    sched: DiffusionSchedule,
    prompt: Prompt = NULL_PROMPT,
) -> tuple[VerifyReport, np.ndarray]:
    y = sensing.measure(a, z0)
    z_T = invert(
        z0,
        prior,
        sched,
        Constraint(a, params.t_proj, y) if params.t_proj > 0 else None,
        prompt=prompt,
        iters=params.inversion_iters,
        recompute_noise=params.recompute_noise,
    )
    return verify_watermark(z_T, key, payload, params.fpr), z_T


def generate_plain(
    key: WatermarkKey,
    payload: Payload,
    prompt: Prompt,
    params: CsGuardParams,
    prior: GmmPrior,
    sched: DiffusionSchedule,
    seed: int,
) -> GenerationRecord:
    """Unconstrained watermarked generation (the sign-shading baseline)."""
    z_T = _initial_latent(key, payload, prior.n, seed)
    z0, _, _ = sample(z_T, prior, prompt, sched)
    return GenerationRecord(z0, Observation(np.empty(0)), z_T, prompt, 0.0)


def invert_plain(
    z0: np.ndarray,
    key: WatermarkKey,
    payload: Payload,
    params: CsGuardParams,
    prior: GmmPrior,
    sched: DiffusionSchedule,
    prompt: Prompt = NULL_PROMPT,
) -> tuple[VerifyReport, np.ndarray]:
    z_T = invert(z0, prior, sched, prompt=prompt, iters=params.inversion_iters)
    return verify_watermark(z_T, key, payload, params.fpr), z_T
