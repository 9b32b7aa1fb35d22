"""Deterministic random substreams.

Two mechanisms live here, both keyed so that any work item can be computed
in isolation (and therefore in parallel) without changing results:

* SplitMix64 counter streams, used by the simulator. The draw ``k`` of the
  substream for unit ``i`` under master seed ``s`` is::

      key(s, i) = mix64(s XOR mix64((i + 1) * GOLDEN))
      u_k(s, i) = (mix64(key(s, i) + k * GOLDEN) >> 11) * 2**-53

  where ``mix64`` is the SplitMix64 finalizer (Steele, Lea & Flood 2014)
  and ``GOLDEN = 0x9E3779B97F4A7C15``. All arithmetic is modulo 2**64.
  This generator is fixed for the life of the package so simulated CSVs
  are reproducible byte-for-byte across platforms and numpy versions.

* numpy ``Generator`` substreams derived from ``SeedSequence`` for the
  estimation layers (parameter draws, mediator simulation, bootstrap).
  Each work item ``j`` of a stream gets ``substream(seed, tag, j)``, so
  results are invariant to how work items are scheduled across workers.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_U64 = np.uint64
_GOLDEN_U = _U64(GOLDEN)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)

# Stream tags namespacing the SeedSequence substreams per consumer.
STREAM_PARAM_DRAWS = 1
STREAM_MEDIATION = 2
STREAM_BOOTSTRAP = 3


def mix64(value: int) -> int:
    """SplitMix64 finalizer on a Python int, modulo 2**64."""
    z = value & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64_array(values: np.ndarray) -> np.ndarray:
    """Vectorized SplitMix64 finalizer over a uint64 array."""
    z = values.astype(np.uint64, copy=True)
    z ^= z >> _U64(30)
    z *= _M1
    z ^= z >> _U64(27)
    z *= _M2
    z ^= z >> _U64(31)
    return z


def check_seed(seed: int) -> int:
    from .errors import ConfigurationError

    if not isinstance(seed, (int, np.integer)):
        raise ConfigurationError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if seed < 0 or seed > MASK64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    return seed


def unit_keys(master_seed: int, start: int, stop: int) -> np.ndarray:
    """Substream keys for units ``start..stop-1`` (uint64 array)."""
    idx = np.arange(start + 1, stop + 1, dtype=np.uint64)
    return mix64_array(_U64(master_seed & MASK64) ^ mix64_array(idx * _GOLDEN_U))


def uniforms_at(keys: np.ndarray, draw_index: int) -> np.ndarray:
    """The ``draw_index``-th uniform in [0, 1) of each substream key."""
    offset = _U64((draw_index * GOLDEN) & MASK64)
    return uniforms_offset(keys, offset)


def uniforms_offset(keys: np.ndarray, offsets: np.ndarray | np.uint64) -> np.ndarray:
    """Uniforms for per-element draw offsets (already multiplied by GOLDEN)."""
    bits = mix64_array(keys + offsets)
    return (bits >> _U64(11)) * np.float64(2.0**-53)


def substream(master_seed: int, *path: int) -> np.random.Generator:
    """A numpy Generator keyed by (seed, *path); stable within one install."""
    entropy = [int(master_seed) & MASK64] + [int(p) & MASK64 for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
