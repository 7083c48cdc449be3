"""Counter-based pseudo-random numbers (splitmix64), stable across platforms."""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def splitmix64(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2**64
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def to_unit_interval(x: np.ndarray) -> np.ndarray:
    """Map uint64 to floats in the open interval (0, 1)."""
    return ((np.asarray(x, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / (1 << 53))


def keyed_uniform(seed: int, counter: int) -> float:
    key = splitmix64(np.array([seed], dtype=np.uint64))
    with np.errstate(over="ignore"):
        return float(to_unit_interval(splitmix64(key ^ np.uint64(counter)))[0])
