"""Watermark detectors: correlation statistics, thresholds, p-values.

Both detectors score a token sequence by correlating it with re-derived
per-step key material and compare the mean against a threshold calibrated
so that unwatermarked text is flagged with probability at most delta. The
closed bound is sub-Gaussian (the per-step scores live in [-1, 1]); the
open statistic is exactly Gaussian under the null, so its p-value is an
equality rather than a bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import keystream
from .core import validate_tokens
from .errors import InvalidInputError
from .keystream import CLOSED, OPEN, WatermarkKey


@dataclass(frozen=True)
class DetectionReport:
    """Outcome of scoring one token sequence against one key.

    ``verdict`` is exactly the rule ``statistic >= threshold``; the p-value
    is extra reporting and never changes the decision."""

    scheme: str
    n_tokens: int
    statistic: float
    threshold: float
    delta: float
    p_value: float
    verdict: bool

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "DetectionReport":
        try:
            return cls(
                scheme=obj["scheme"],
                n_tokens=int(obj["n_tokens"]),
                statistic=float(obj["statistic"]),
                threshold=float(obj["threshold"]),
                delta=float(obj["delta"]),
                p_value=float(obj["p_value"]),
                verdict=bool(obj["verdict"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed detection report: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise InvalidInputError("delta must lie strictly between 0 and 1")


def _check_n(n: int) -> None:
    if n < 1:
        raise InvalidInputError("need at least one token to score")


def closed_threshold(n: int, delta: float) -> float:
    """Decision threshold sqrt(2 ln(1/delta) / n) for the closed statistic."""
    _check_n(n)
    _check_delta(delta)
    return math.sqrt(2.0 * math.log(1.0 / delta) / n)


def open_threshold(n: int, delta: float, epsilon: float) -> float:
    """Decision threshold epsilon * sqrt(2 ln(1/delta) / n) for the open
    statistic."""
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    return epsilon * closed_threshold(n, delta)


def closed_p_value(z: float, n: int) -> float:
    """Sub-Gaussian tail bound exp(-n * max(z, 0)^2 / 2) on falsely reaching
    score z with unwatermarked text."""
    _check_n(n)
    return math.exp(-n * max(z, 0.0) ** 2 / 2.0)


def open_p_value(z: float, n: int, epsilon: float) -> float:
    """Exact null tail probability of the open statistic: under the null the
    mean of n i.i.d. N(0, epsilon^2) scores is N(0, epsilon^2/n)."""
    _check_n(n)
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    return 0.5 * math.erfc(math.sqrt(n) * max(z, 0.0) / (epsilon * math.sqrt(2.0)))


# --------------------------------------------------------------------------
# Statistics from raw key material (no key object needed; lets callers score
# against synthetic material and keeps the key-handling path thin).


def closed_statistic(tokens, colorings: np.ndarray, flips: np.ndarray) -> float:
    """Mean keyed score (1/n) * sum_j flips[j] * colorings[j, tokens[j]]."""
    tokens = validate_tokens(tokens, colorings.shape[1])
    if colorings.shape[0] < tokens.size or flips.shape[0] < tokens.size:
        raise InvalidInputError("key material covers fewer steps than tokens")
    steps = np.arange(tokens.size)
    scores = colorings[steps, tokens].astype(np.float64) * flips[: tokens.size]
    return float(scores.mean())


def open_statistic(tokens, gaussians: np.ndarray) -> float:
    """Mean observed Gaussian coordinate (1/n) * sum_j gaussians[j, tokens[j]]."""
    tokens = validate_tokens(tokens, gaussians.shape[1])
    if gaussians.shape[0] < tokens.size:
        raise InvalidInputError("key material covers fewer steps than tokens")
    return float(gaussians[np.arange(tokens.size), tokens].mean())


# --------------------------------------------------------------------------
# End-to-end detection against a key


def detect_closed(key: WatermarkKey, tokens, delta: float = 0.05,
                  start: int = 0) -> DetectionReport:
    """Score ``tokens`` (generated from step ``start`` onward) against a
    closed key."""
    tokens = validate_tokens(tokens, key.d)
    _check_n(tokens.size)
    _check_delta(delta)
    batch = keystream.derive_closed_steps(key, tokens.size, start)
    z = closed_statistic(tokens, batch.colorings, batch.flips)
    t = closed_threshold(tokens.size, delta)
    return DetectionReport(
        scheme=CLOSED, n_tokens=tokens.size, statistic=z, threshold=t, delta=delta,
        p_value=closed_p_value(z, tokens.size), verdict=z >= t,
    )


def detect_open(key: WatermarkKey, tokens, delta: float = 0.05,
                start: int = 0) -> DetectionReport:
    """Score ``tokens`` against an open key using only its Gaussian lane."""
    tokens = validate_tokens(tokens, key.d)
    _check_n(tokens.size)
    _check_delta(delta)
    gaussians = keystream.derive_open_gaussians(key, tokens.size, start)
    z = open_statistic(tokens, gaussians)
    t = open_threshold(tokens.size, delta, key.epsilon)
    return DetectionReport(
        scheme=OPEN, n_tokens=tokens.size, statistic=z, threshold=t, delta=delta,
        p_value=open_p_value(z, tokens.size, key.epsilon), verdict=z >= t,
    )


def detect(key: WatermarkKey, tokens, delta: float = 0.05,
           start: int = 0) -> DetectionReport:
    """Dispatch on the key's scheme."""
    if key.scheme == CLOSED:
        return detect_closed(key, tokens, delta, start)
    return detect_open(key, tokens, delta, start)


# --------------------------------------------------------------------------
# Batched scoring for sweeps: many same-length texts against one key


def closed_statistics(key: WatermarkKey, token_matrix: np.ndarray,
                      start: int = 0) -> np.ndarray:
    """Closed statistic per row of an (m, n) token matrix, one derivation."""
    token_matrix = np.asarray(token_matrix)
    m, n = token_matrix.shape
    batch = keystream.derive_closed_steps(key, n, start)
    picked = batch.colorings[np.arange(n)[None, :], token_matrix].astype(np.float64)
    return (picked * batch.flips[None, :]).mean(axis=1)


def open_statistics(key: WatermarkKey, token_matrix: np.ndarray,
                    start: int = 0) -> np.ndarray:
    """Open statistic per row of an (m, n) token matrix, one derivation."""
    token_matrix = np.asarray(token_matrix)
    m, n = token_matrix.shape
    gaussians = keystream.derive_open_gaussians(key, n, start)
    return gaussians[np.arange(n)[None, :], token_matrix].mean(axis=1)
