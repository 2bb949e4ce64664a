"""Counter-based random streams.

Every variate is a pure function of ``(master_seed, path, step, stream, component)``,
so a chunk of paths can be generated by any worker in any order and the
result is bit-identical to a serial run.  The bits come from a SplitMix64
finaliser chain; normals use the inverse CDF so one counter gives one normal.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream identifiers used across the package
STREAM_W1 = 1
STREAM_W2 = 2
STREAM_BRIDGE = 3
STREAM_AUX = 4


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _u64(x):
    return np.asarray(x).astype(np.uint64)


def random_bits(seed, paths, step, stream, n_components):
    """Return uint64 array of shape ``(len(paths), n_components)``."""
    paths = _u64(np.atleast_1d(paths))
    with np.errstate(over="ignore"):
        h = _mix(_u64(seed & 0xFFFFFFFFFFFFFFFF))
        h = _mix(h ^ _u64(stream))
        h = _mix(h + _u64(step) * _M1)
        h = _mix(h[None] ^ paths)  # (n,)
        comps = np.arange(n_components, dtype=np.uint64)
        out = _mix(h[:, None] + comps[None, :] * _M2)
    return out


def uniforms(seed, paths, step, stream, n_components=1):
    """Uniforms strictly inside (0, 1)."""
    bits = random_bits(seed, paths, step, stream, n_components)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(seed, paths, step, stream, n_components=1):
    return ndtri(uniforms(seed, paths, step, stream, n_components))


def derive_seed(seed, *labels):
    """Deterministic child seed, e.g. for the independent marginal ensembles."""
    h = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for lab in labels:
            if isinstance(lab, str):
                lab = int.from_bytes(lab.encode()[:8].ljust(8, b"\0"), "little")
            h = _mix(h ^ np.uint64(lab & 0xFFFFFFFFFFFFFFFF))
    return int(h)
