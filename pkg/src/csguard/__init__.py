"""Compressed-sensing constrained watermarking on an analytic diffusion testbed."""
__version__ = "0.1.0"

from .diffusion import NULL_PROMPT, GmmPrior, Prompt, make_prior, make_schedule, related_prior
from .pipeline import (
    CsGuardParams,
    GenerationRecord,
    ObservationMode,
    generate_plain,
    generate_watermarked,
    invert_and_verify,
    invert_plain,
)
from .sensing import Observation, SecretMatrix, gen_secret_matrix, measure, project_consistency
from .watermark import Payload, VerifyReport, WatermarkKey, detection_threshold, verify_watermark

__all__ = [
    "NULL_PROMPT",
    "CsGuardParams",
    "GenerationRecord",
    "GmmPrior",
    "Observation",
    "ObservationMode",
    "Payload",
    "Prompt",
    "SecretMatrix",
    "VerifyReport",
    "WatermarkKey",
    "detection_threshold",
    "gen_secret_matrix",
    "generate_plain",
    "generate_watermarked",
    "invert_and_verify",
    "invert_plain",
    "make_prior",
    "make_schedule",
    "measure",
    "project_consistency",
    "related_prior",
    "verify_watermark",
]
