"""Deterministic per-step key material derived from a master seed.

The sampler and the detector never share state; both re-derive the same
per-step secrets from a 32-byte master seed. The derivation below is part
of the key-file format contract and must stay bit-exact across versions.

PRF stream
----------
Block ``c`` of lane ``L`` at step ``j`` is::

    SHA-256( master_seed (32 bytes)
             || L  (1 byte)
             || j  (8 bytes, big-endian)
             || c  (8 bytes, big-endian) )

Blocks are concatenated and split into big-endian unsigned 64-bit words;
word ``t`` of a lane is bytes ``[8t, 8t+8)`` of that stream. Lanes:
0 coloring, 1 flip, 2 gaussian, 3 support, 4 direction.

Derived quantities
------------------
* Bounded integers: word ``w`` reduced to ``w mod n``. The modulo bias is
  below ``n / 2**64`` (< 2**-40 for any realistic dictionary) and is
  accepted by this format.
* Coloring (closed scheme): start from the sign array ``[+1]*(d/2) +
  [-1]*(d/2)`` indexed by token, then Fisher-Yates shuffle downward: for
  ``i = d-1 .. 1``, word ``t = d-1-i`` gives ``pos = word_t mod (i+1)``
  and entries ``i`` and ``pos`` are swapped. Uniform over balanced
  colorings because every permutation of the sign multiset is equally
  likely.
* Flip / direction: a single word; its lowest bit maps 1 -> +1, 0 -> -1.
* Gaussian vector (open scheme): words ``2m`` and ``2m+1`` feed one
  Box-Muller pair, ``u1 = ((w >> 11) + 1) * 2**-53`` in (0, 1] and
  ``u2 = (w' >> 11) * 2**-53`` in [0, 1); entry ``2m`` is
  ``sqrt(-2 ln u1) * cos(2 pi u2) * epsilon`` and entry ``2m+1`` the same
  with sine. For odd ``d`` the final sine entry is dropped. The integer
  lanes above are bit-portable; this lane is deterministic within one
  environment but may drift by an ulp across math libraries (log/cos/sin
  kernels differ), which moves detector statistics by under 1e-15.
* Support (open scheme): Floyd's k-subset sampler over ``[0, d)``: for
  ``t = 0 .. k-1``, let ``j = d-k+t`` and ``pos = word_t mod (j+1)``; add
  ``pos`` to the subset unless already present, in which case add ``j``.
  With ``support_mode = "fixed-per-key"`` every step reuses the step-0
  subset; with ``"fresh-per-step"`` each step draws its own.
"""

from __future__ import annotations

import base64
import functools
import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidKeyError, SchemeMismatchError

KEY_FILE_VERSION = 1
SEED_BYTES = 32

LANE_COLORING = 0
LANE_FLIP = 1
LANE_GAUSSIAN = 2
LANE_SUPPORT = 3
LANE_DIRECTION = 4

CLOSED = "closed"
OPEN = "open"
FIXED_SUPPORT = "fixed-per-key"
FRESH_SUPPORT = "fresh-per-step"

# Largest tolerated epsilon before the quality/detectability trade-off
# leaves the regime the guarantees were designed around.
EPSILON_SOFT_CAP = 0.5


@dataclass(frozen=True)
class WatermarkKey:
    """Master secret plus scheme parameters; all per-step keys derive from it.

    ``padded`` records that the dictionary had odd size and a zero-probability
    spurious token was appended to make ``d`` even; the spurious token is
    never sampled because its shift magnitude is always zero.
    """

    master_seed: bytes
    d: int
    scheme: str
    epsilon: float | None = None
    k: int | None = None
    support_mode: str | None = None
    padded: bool = False

    def __post_init__(self):
        if len(self.master_seed) != SEED_BYTES:
            raise InvalidKeyError(f"master seed must be {SEED_BYTES} bytes")
        if self.d < 2:
            raise InvalidKeyError("dictionary size must be at least 2")
        if self.scheme == CLOSED:
            if self.d % 2 != 0:
                raise InvalidKeyError("closed scheme needs even d; pad the dictionary first")
            if self.epsilon is not None or self.k is not None or self.support_mode is not None:
                raise InvalidKeyError("epsilon/k/support_mode only apply to the open scheme")
        elif self.scheme == OPEN:
            if self.epsilon is None or self.epsilon <= 0:
                raise InvalidKeyError("open scheme requires epsilon > 0")
            if self.k is None or not 1 <= self.k <= self.d:
                raise InvalidKeyError("open scheme requires 1 <= k <= d")
            mode = self.support_mode if self.support_mode is not None else FIXED_SUPPORT
            if mode not in (FIXED_SUPPORT, FRESH_SUPPORT):
                raise InvalidKeyError(f"unknown support mode {mode!r}")
            object.__setattr__(self, "support_mode", mode)
            if self.padded:
                raise InvalidKeyError("padding applies to the closed scheme only")
            if self.epsilon > EPSILON_SOFT_CAP:
                warnings.warn(
                    f"epsilon={self.epsilon} exceeds {EPSILON_SOFT_CAP}; detection still works "
                    "but the distortion guarantees assume a smaller noise scale",
                    stacklevel=3,
                )
        else:
            raise InvalidKeyError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True, eq=False)
class ClosedStepKey:
    """One step's secret for the closed scheme: a balanced coloring and a flip."""

    coloring: np.ndarray  # (d,) int8, entries +-1, exactly d/2 of each
    flip: int             # +1 or -1


@dataclass(frozen=True, eq=False)
class OpenStepKey:
    """One step's secret for the open scheme.

    The detector only ever uses ``gaussian``; ``support`` and ``direction``
    are sampler-side material.
    """

    gaussian: np.ndarray     # (d,) float64, i.i.d. N(0, epsilon^2) entries
    support: np.ndarray      # (k,) int64, sorted ascending
    direction: int           # +1 or -1
    mean_vector: np.ndarray = field(default=None)  # k^{-1/2} on support, else 0

    def __post_init__(self):
        if self.mean_vector is None:
            mu = np.zeros(self.gaussian.size)
            mu[self.support] = 1.0 / np.sqrt(self.support.size)
            mu.flags.writeable = False
            object.__setattr__(self, "mean_vector", mu)


@dataclass(frozen=True, eq=False)
class ClosedStepBatch:
    """Closed-scheme key material for steps ``start .. start+n-1``."""

    colorings: np.ndarray  # (n, d) int8
    flips: np.ndarray      # (n,) int8
    start: int = 0


@dataclass(frozen=True, eq=False)
class OpenStepBatch:
    """Open-scheme sampler material for steps ``start .. start+n-1``."""

    gaussians: np.ndarray   # (n, d) float64
    supports: np.ndarray    # (n, k) int64
    directions: np.ndarray  # (n,) int8
    start: int = 0


# --------------------------------------------------------------------------
# PRF stream plumbing


def _words(seed: bytes, lane: int, step: int, nwords: int) -> np.ndarray:
    """The first ``nwords`` 64-bit words of one step's lane stream."""
    nblocks = (nwords + 3) // 4
    prefix = seed + bytes([lane]) + step.to_bytes(8, "big")
    sha = hashlib.sha256
    raw = b"".join(sha(prefix + c.to_bytes(8, "big")).digest() for c in range(nblocks))
    return np.frombuffer(raw, dtype=">u8")[:nwords].astype(np.uint64)


def _word_matrix(seed: bytes, lane: int, start: int, count: int, nwords: int) -> np.ndarray:
    """Words for ``count`` consecutive steps, shape (count, nwords)."""
    nblocks = (nwords + 3) // 4
    sha = hashlib.sha256
    lane_byte = bytes([lane])
    counters = [c.to_bytes(8, "big") for c in range(nblocks)]
    chunks = []
    for step in range(start, start + count):
        prefix = seed + lane_byte + step.to_bytes(8, "big")
        chunks.append(b"".join(sha(prefix + c).digest() for c in counters))
    flat = np.frombuffer(b"".join(chunks), dtype=">u8").astype(np.uint64)
    return flat.reshape(count, nblocks * 4)[:, :nwords]


def _sign_words(seed: bytes, lane: int, start: int, count: int) -> np.ndarray:
    words = _word_matrix(seed, lane, start, count, 1)[:, 0]
    return (2 * (words & np.uint64(1)).astype(np.int8) - 1).astype(np.int8)


def _coloring_matrix(seed: bytes, d: int, start: int, count: int) -> np.ndarray:
    """Balanced colorings for consecutive steps via per-step Fisher-Yates."""
    words = _word_matrix(seed, LANE_COLORING, start, count, d - 1)
    perm = np.empty((count, d), dtype=np.int8)
    perm[:, : d // 2] = 1
    perm[:, d // 2:] = -1
    rows = np.arange(count)
    for t, i in enumerate(range(d - 1, 0, -1)):
        pos = (words[:, t] % np.uint64(i + 1)).astype(np.intp)
        tmp = perm[rows, i].copy()
        perm[rows, i] = perm[rows, pos]
        perm[rows, pos] = tmp
    return perm


def _gaussian_matrix(seed: bytes, d: int, epsilon: float, start: int, count: int) -> np.ndarray:
    npairs = (d + 1) // 2
    words = _word_matrix(seed, LANE_GAUSSIAN, start, count, 2 * npairs)
    scale = 2.0 ** -53
    u1 = ((words[:, 0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * scale
    u2 = (words[:, 1::2] >> np.uint64(11)).astype(np.float64) * scale
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.empty((count, 2 * npairs))
    out[:, 0::2] = radius * np.cos(angle)
    out[:, 1::2] = radius * np.sin(angle)
    return epsilon * out[:, :d]


def _support_matrix(seed: bytes, d: int, k: int, start: int, count: int) -> np.ndarray:
    """Floyd's algorithm per step, vectorized over steps."""
    words = _word_matrix(seed, LANE_SUPPORT, start, count, k)
    member = np.zeros((count, d), dtype=bool)
    rows = np.arange(count)
    for t in range(k):
        j = d - k + t
        pos = (words[:, t] % np.uint64(j + 1)).astype(np.intp)
        taken = member[rows, pos]
        chosen = np.where(taken, j, pos)
        member[rows, chosen] = True
    return np.nonzero(member)[1].reshape(count, k).astype(np.int64)


def _require_scheme(key: WatermarkKey, scheme: str) -> None:
    if key.scheme != scheme:
        raise SchemeMismatchError(f"operation needs a {scheme} key, got {key.scheme}")


def _check_step(step: int) -> None:
    if step < 0:
        raise InvalidInputError("step index must be non-negative")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


# --------------------------------------------------------------------------
# Public derivation API


def derive_closed_step(key: WatermarkKey, step: int) -> ClosedStepKey:
    """Re-derive the balanced coloring and flip for one step. Pure and
    bit-identical on repeated calls."""
    _require_scheme(key, CLOSED)
    _check_step(step)
    coloring = _freeze(_coloring_matrix(key.master_seed, key.d, step, 1)[0])
    flip = int(_sign_words(key.master_seed, LANE_FLIP, step, 1)[0])
    return ClosedStepKey(coloring=coloring, flip=flip)


@functools.lru_cache(maxsize=8)
def derive_closed_steps(key: WatermarkKey, count: int, start: int = 0) -> ClosedStepBatch:
    """Closed key material for ``count`` steps from ``start``; cached because
    detection sweeps re-derive the same prefix for every text."""
    _require_scheme(key, CLOSED)
    _check_step(start)
    colorings = _freeze(_coloring_matrix(key.master_seed, key.d, start, count))
    flips = _freeze(_sign_words(key.master_seed, LANE_FLIP, start, count))
    return ClosedStepBatch(colorings=colorings, flips=flips, start=start)


def derive_open_step(key: WatermarkKey, step: int) -> OpenStepKey:
    """Re-derive one step's Gaussian vector, support, and direction."""
    _require_scheme(key, OPEN)
    _check_step(step)
    seed = key.master_seed
    gaussian = _freeze(_gaussian_matrix(seed, key.d, key.epsilon, step, 1)[0])
    support_step = 0 if key.support_mode == FIXED_SUPPORT else step
    support = _freeze(_support_matrix(seed, key.d, key.k, support_step, 1)[0])
    direction = int(_sign_words(seed, LANE_DIRECTION, step, 1)[0])
    return OpenStepKey(gaussian=gaussian, support=support, direction=direction)


@functools.lru_cache(maxsize=8)
def derive_open_steps(key: WatermarkKey, count: int, start: int = 0) -> OpenStepBatch:
    """Open sampler material for ``count`` steps from ``start`` (cached)."""
    _require_scheme(key, OPEN)
    _check_step(start)
    seed = key.master_seed
    gaussians = _freeze(_gaussian_matrix(seed, key.d, key.epsilon, start, count))
    if key.support_mode == FIXED_SUPPORT:
        one = _support_matrix(seed, key.d, key.k, 0, 1)
        supports = _freeze(np.repeat(one, count, axis=0))
    else:
        supports = _freeze(_support_matrix(seed, key.d, key.k, start, count))
    directions = _freeze(_sign_words(seed, LANE_DIRECTION, start, count))
    return OpenStepBatch(gaussians=gaussians, supports=supports, directions=directions, start=start)


@functools.lru_cache(maxsize=8)
def derive_open_gaussians(key: WatermarkKey, count: int, start: int = 0) -> np.ndarray:
    """Detector-side material: only the Gaussian vectors, shape (count, d)."""
    _require_scheme(key, OPEN)
    _check_step(start)
    return _freeze(_gaussian_matrix(key.master_seed, key.d, key.epsilon, start, count))


# --------------------------------------------------------------------------
# Key files


def new_master_seed() -> bytes:
    """Fresh cryptographically random master seed (the only OS-entropy use)."""
    return os.urandom(SEED_BYTES)


def key_to_dict(key: WatermarkKey) -> dict:
    out = {
        "version": KEY_FILE_VERSION,
        "scheme": key.scheme,
        "d": key.d,
        "k": key.k,
        "epsilon": key.epsilon,
        "support_mode": key.support_mode,
        "master_seed_base64": base64.b64encode(key.master_seed).decode("ascii"),
    }
    if key.padded:
        out["padded"] = True
    return out


def key_from_dict(obj: dict) -> WatermarkKey:
    try:
        version = obj["version"]
        if version != KEY_FILE_VERSION:
            raise InvalidKeyError(f"unsupported key file version {version!r}")
        seed = base64.b64decode(obj["master_seed_base64"])
        return WatermarkKey(
            master_seed=seed,
            d=int(obj["d"]),
            scheme=obj["scheme"],
            epsilon=None if obj.get("epsilon") is None else float(obj["epsilon"]),
            k=None if obj.get("k") is None else int(obj["k"]),
            support_mode=obj.get("support_mode"),
            padded=bool(obj.get("padded", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidKeyError(f"malformed key file: {exc}") from exc


def save_key(key: WatermarkKey, path) -> None:
    Path(path).write_text(json.dumps(key_to_dict(key), indent=2, sort_keys=True) + "\n")


def load_key(path) -> WatermarkKey:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidKeyError(f"cannot read key file {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidKeyError("key file must hold a JSON object")
    return key_from_dict(obj)
