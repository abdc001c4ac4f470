"""Splittable seed derivation.

A child generator is keyed by ``(seed, *labels)``: integer labels are used
as-is, string labels are mapped through CRC32. The key tuple is fed to
:class:`numpy.random.SeedSequence`, so streams for different labels are
statistically independent and never depend on call order.
"""
from __future__ import annotations

import numbers
import zlib

import numpy as np

from .errors import PreconditionError

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral) or not 0 <= seed <= MAX_SEED:
        raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    return int(seed)


def _label_words(label) -> list[int]:
    if isinstance(label, str):
        return [zlib.crc32(label.encode("utf-8"))]
    value = int(label)
    if value < 0:
        raise PreconditionError("integer seed labels must be nonnegative")
    # split into 32-bit words so 64-bit labels survive intact
    return [value & 0xFFFFFFFF, value >> 32]


def derive_seed_sequence(seed: int, *labels) -> np.random.SeedSequence:
    words = _label_words(check_seed(seed))
    for label in labels:
        words.extend(_label_words(label))
    return np.random.SeedSequence(words)


def derive_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(seed, *labels))


def derive_seed(seed: int, *labels) -> int:
    """A derived 64-bit integer seed, for handing to another component."""
    state = derive_seed_sequence(seed, *labels).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
