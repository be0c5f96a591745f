"""Portable counter-based random streams.

Every random draw in the package comes from Philox4x64-10 keyed with the
pair ``(seed, stream)`` and a counter starting at zero.  Raw 64-bit outputs
are consumed in order and mapped to the open interval (0, 1) as
``((x >> 11) + 0.5) * 2**-53``; Gaussian variates use the inverse normal CDF
of one such uniform, so each variate costs exactly one raw word.  Any
language with a Philox4x64-10 implementation can reproduce the streams.
"""

import numpy as np
from scipy.special import ndtri

from .errors import InvalidArgumentError

# Stream identifiers; the key's second word keeps consumers independent.
STREAM_DATA = 0
STREAM_SPLIT = 1
STREAM_RANDOM_MATCH = 2
STREAM_SUBSAMPLE = 3
STREAM_ROADMAP = 4

_U64 = 1 << 64


def check_seed(seed):
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise InvalidArgumentError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < _U64:
        raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def uniforms(seed, stream, count):
    """Return ``count`` doubles in (0, 1) from stream ``(seed, stream)``."""
    seed = check_seed(seed)
    bitgen = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    raw = bitgen.random_raw(int(count))
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniform_block(seed, stream, rows, cols):
    """Row-major ``rows x cols`` block: row ``i`` holds unit ``i``'s draws in order."""
    return uniforms(seed, stream, rows * cols).reshape(rows, cols)


def std_normal(u):
    return ndtri(u)
