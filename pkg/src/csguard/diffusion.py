"""DDIM recurrences and a closed-form Gaussian-mixture denoiser.

The "image" prior is an isotropic Gaussian mixture, so the posterior mean
``E[x | z_t]`` under ``z_t = sqrt(abar_t) x + sqrt(1 - abar_t) eps`` has a closed
form and stands in for a trained noise-prediction network.  Prompts select the
mixture component(s) the denoiser conditions on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .rng import STREAM_DATA, STREAM_PRIOR, make_rng

DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02
DEFAULT_TRAIN_STEPS = 1000


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Cumulative signal coefficients ``alpha_bar[0..T]`` with ``alpha_bar[0] = 1``.

    ``timesteps[t]`` is the training timestep that sampling step ``t`` maps to;
    for a schedule built without ``train_steps`` it is simply ``t``.
    """

    T: int
    alpha_bar: np.ndarray
    beta_min: float
    beta_max: float
    train_steps: int | None = None
    timesteps: np.ndarray = field(default=None, repr=False)

    def signal(self, t: int) -> float:
        return math.sqrt(self.alpha_bar[t])

    def noise(self, t: int) -> float:
        return math.sqrt(1.0 - self.alpha_bar[t])

    def with_steps(self, steps: int) -> "DiffusionSchedule":
        return make_schedule(steps, self.beta_min, self.beta_max, self.train_steps)


def make_schedule(
    T: int,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
    train_steps: int | None = None,
) -> DiffusionSchedule:
    """Linear-beta schedule.

    With ``train_steps=None`` the betas run linearly over the ``T`` sampling
    steps themselves.  Otherwise they run over ``train_steps`` training steps
    and the ``T`` sampling steps are evenly strided through them (the usual
    DDIM sub-sampling of a DDPM schedule).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    base = T if train_steps is None else int(train_steps)
    if base < T:
        raise ValueError(f"train_steps ({base}) must be >= T ({T})")
    betas = np.linspace(beta_min, beta_max, base)
    full = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    steps = np.rint(np.linspace(0, base, T + 1)).astype(np.int64)
    alpha_bar = full[steps]
    alpha_bar.setflags(write=False)
    steps.setflags(write=False)
    return DiffusionSchedule(T, alpha_bar, beta_min, beta_max, train_steps, steps)


@dataclass(frozen=True)
class Prompt:
    """Conditioning label; ``class_id=None`` is the unconditional prompt."""

    class_id: int | None
    description: str = ""


NULL_PROMPT = Prompt(None, "unconditional")


@dataclass(frozen=True, eq=False)
class GmmPrior:
    means: np.ndarray
    component_std: float
    seed: int

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def n(self) -> int:
        return self.means.shape[1]

    def components(self, prompt: Prompt) -> np.ndarray:
        if prompt.class_id is None:
            return np.arange(self.K)
        if not 0 <= prompt.class_id < self.K:
            raise ValueError(f"prompt class {prompt.class_id} outside [0, {self.K})")
        return np.array([prompt.class_id])

    def denoise(self, z_t, t: int, prompt: Prompt, sched: DiffusionSchedule) -> "DenoiserOutput":
        return gmm_denoise(self, z_t, t, prompt, sched)


@dataclass(frozen=True, eq=False)
class DenoiserOutput:
    eps_hat: np.ndarray
    z0_hat: np.ndarray


def make_prior(seed: int, n: int, K: int = 8, component_std: float = 0.5, mean_range: float = 2.0) -> GmmPrior:
    """Means uniform in ``[-mean_range, mean_range]^n``."""
    if component_std <= 0:
        raise ValueError("component_std must be positive")
    means = make_rng(seed, STREAM_PRIOR).uniform(-mean_range, mean_range, size=(K, n))
    means.setflags(write=False)
    return GmmPrior(means, float(component_std), int(seed))


def related_prior(prior: GmmPrior, mismatch: float, seed: int) -> GmmPrior:
    """A proxy model from the same family: every mean is shifted by
    ``mismatch * component_std`` times a standard normal vector."""
    shift = make_rng(seed, STREAM_PRIOR, 1).standard_normal(prior.means.shape)
    means = prior.means + mismatch * prior.component_std * shift
    means.setflags(write=False)
    return GmmPrior(means, prior.component_std, int(seed))


def _check_step(t: int, lo: int, hi: int) -> None:
    if not lo <= t <= hi:
        raise ValueError(f"step {t} outside [{lo}, {hi}]")


def estimate_clean(z_t, eps_hat, t: int, sched: DiffusionSchedule) -> np.ndarray:
    _check_step(t, 0, sched.T)
    return (z_t - sched.noise(t) * eps_hat) / sched.signal(t)


def ddim_denoise_step(z0_hat, eps_hat, t: int, sched: DiffusionSchedule) -> np.ndarray:
    _check_step(t, 1, sched.T)
    return sched.signal(t - 1) * z0_hat + sched.noise(t - 1) * eps_hat


def ddim_invert_step(z0_hat, eps_hat, t: int, sched: DiffusionSchedule) -> np.ndarray:
    _check_step(t, 0, sched.T - 1)
    return sched.signal(t + 1) * z0_hat + sched.noise(t + 1) * eps_hat


def gmm_denoise(prior: GmmPrior, z_t, t: int, prompt: Prompt, sched: DiffusionSchedule) -> DenoiserOutput:
    """Posterior mean of the clean latent and the matching noise prediction."""
    _check_step(t, 1, sched.T)
    mu = prior.means[prior.components(prompt)]
    a, b = sched.signal(t), sched.noise(t)
    s2 = prior.component_std**2
    var = a * a * s2 + b * b
    centred = z_t - a * mu
    # every component has the same marginal variance, so only distances matter
    weights = softmax(-np.einsum("kn,kn->k", centred, centred) / (2.0 * var))
    gain = a * s2 / var
    z0_hat = weights @ mu + gain * (z_t - a * (weights @ mu))
    return DenoiserOutput(eps_hat=(z_t - a * z0_hat) / b, z0_hat=z0_hat)


def sample_data(prior: GmmPrior, prompt: Prompt, seed: int) -> np.ndarray:
    rng = make_rng(seed, STREAM_DATA)
    comps = prior.components(prompt)
    k = comps[rng.integers(0, comps.size)]
    return prior.means[k] + prior.component_std * rng.standard_normal(prior.n)
