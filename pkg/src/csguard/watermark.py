"""Sign-shading watermark for the initial latent.

Each payload bit is replicated ``r = n / L`` times, XOR-ed with a keystream and
written into the sign of a half-normal magnitude, so every coordinate of the
watermarked latent is still exactly N(0, 1).  Extraction decrypts signs and
takes a majority vote per bit; detection compares the number of matching bits
against an exact binomial threshold.
"""
from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import asdict, dataclass

import numpy as np

from .rng import STREAM_KEYSTREAM, STREAM_MAGNITUDE, STREAM_PAYLOAD, make_rng

# Relative slack when comparing a tail mass against the target FPR; only
# exact ties (dyadic fprs) are affected.
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class WatermarkKey:
    key: int

    def keystream(self, n: int) -> np.ndarray:
        return make_rng(self.key, STREAM_KEYSTREAM).integers(0, 2, size=n, dtype=np.uint8)


@dataclass(frozen=True, eq=False)
class Payload:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size < 1 or np.any(bits > 1):
            raise ValueError("payload must be a non-empty vector of 0/1 bits")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return self.bits.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Payload) and np.array_equal(self.bits, other.bits)

    @classmethod
    def from_hex(cls, text: str) -> "Payload":
        text = text.strip().lower().removeprefix("0x")
        if not text:
            raise ValueError("empty hex payload")
        bits = [(int(ch, 16) >> shift) & 1 for ch in text for shift in (3, 2, 1, 0)]
        return cls(np.array(bits, dtype=np.uint8))

    def to_hex(self) -> str:
        if len(self) % 4:
            raise ValueError("hex encoding needs a multiple of 4 bits")
        nibbles = self.bits.reshape(-1, 4) @ np.array([8, 4, 2, 1])
        return "".join(f"{v:x}" for v in nibbles)

    @classmethod
    def random(cls, seed: int, length: int) -> "Payload":
        return cls(make_rng(seed, STREAM_PAYLOAD).integers(0, 2, size=length, dtype=np.uint8))


@dataclass(frozen=True)
class VerifyReport:
    bit_accuracy: float
    matched_bits: int
    threshold: int
    detected: bool
    fpr_target: float

    def to_dict(self) -> dict:
        return asdict(self)


def _replication(length: int, n: int) -> int:
    if length < 1 or n % length:
        raise ValueError(f"payload length {length} must divide latent dimension {n}")
    return n // length


def shade(bits: np.ndarray, keystream: np.ndarray, magnitudes: np.ndarray) -> np.ndarray:
    r = _replication(len(bits), len(keystream))
    signs = np.repeat(np.asarray(bits, dtype=np.uint8), r) ^ keystream
    return np.where(signs == 1, magnitudes, -magnitudes)


def embed_watermark(key: WatermarkKey, payload: Payload, n: int, sample_seed: int) -> np.ndarray:
    _replication(len(payload), n)
    magnitudes = np.abs(make_rng(sample_seed, STREAM_MAGNITUDE).standard_normal(n))
    return shade(payload.bits, key.keystream(n), magnitudes)


def unshade(z: np.ndarray, keystream: np.ndarray, length: int) -> tuple[Payload, np.ndarray]:
    z = np.asarray(z)
    r = _replication(length, z.size)
    decrypted = (z > 0).astype(np.uint8) ^ keystream
    votes = decrypted.reshape(length, r).sum(axis=1)
    # ties (even r only) resolve to 0
    return Payload((2 * votes > r).astype(np.uint8)), votes


def extract_bits(z: np.ndarray, key: WatermarkKey, length: int) -> tuple[Payload, np.ndarray]:
    return unshade(z, key.keystream(np.asarray(z).size), length)


def _log_pmf_half(length: int) -> list[float]:
    log_half = length * math.log(2.0)
    lg = math.lgamma
    return [lg(length + 1) - lg(k + 1) - lg(length - k + 1) - log_half for k in range(length + 1)]


def log_tail_half(length: int, tau: int) -> float:
    """log P[Binomial(length, 1/2) >= tau]."""
    if tau <= 0:
        return 0.0
    if tau > length:
        return -math.inf
    lp = _log_pmf_half(length)[tau:]
    top = max(lp)
    return top + math.log(math.fsum(math.exp(v - top) for v in lp))


def detection_threshold(length: int, fpr: float) -> int:
    """Smallest tau with P[Binomial(length, 1/2) >= tau] <= fpr."""
    if length < 1:
        raise ValueError("payload length must be >= 1")
    if not 0.0 < fpr <= 1.0:
        raise ValueError(f"fpr must lie in (0, 1], got {fpr}")
    bound = math.log(fpr) + _TIE_RTOL
    taus = range(length + 2)
    # the tail is non-increasing in tau, so bisect on the predicate
    return bisect_left(taus, True, key=lambda t: log_tail_half(length, t) <= bound)


def verify_watermark(z: np.ndarray, key: WatermarkKey, payload: Payload, fpr: float) -> VerifyReport:
    recovered, _ = extract_bits(z, key, len(payload))
    matched = int(np.sum(recovered.bits == payload.bits))
    tau = detection_threshold(len(payload), fpr)
    return VerifyReport(
        bit_accuracy=matched / len(payload),
        matched_bits=matched,
        threshold=tau,
        detected=matched >= tau,
        fpr_target=fpr,
    )
