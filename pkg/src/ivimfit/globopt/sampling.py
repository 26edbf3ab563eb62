"""Space-filling samplers on the unit cube: Sobol and latin hypercube."""

import numpy as np

_BITS = 52

# Joe & Kuo primitive polynomials and initial direction numbers for
# dimensions 2..6: (degree s, coefficient a, initial m_1..m_s).
_JOE_KUO = (
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
)
MAX_SOBOL_DIM = len(_JOE_KUO) + 1


def _direction_numbers(dim):
    """Integer direction numbers ``v[j, k]`` scaled by ``2**_BITS``."""
    v = np.zeros((dim, _BITS), dtype=np.uint64)
    for k in range(_BITS):
        v[0, k] = 1 << (_BITS - 1 - k)
    for j in range(1, dim):
        s, a, m_init = _JOE_KUO[j - 1]
        m = list(m_init)
        for k in range(s, _BITS):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    new ^= m[k - i] << i
            m.append(new)
        for k in range(_BITS):
            v[j, k] = m[k] << (_BITS - 1 - k)
    return v


def sobol_points(dim, n, skip=0):
    """Unscrambled base-2 Sobol points in gray-code order.

    Index 0 is the all-zeros point; ``skip`` leading points are dropped.
    Returns an array of shape ``(n, dim)``.
    """
    if not 1 <= dim <= MAX_SOBOL_DIM:
        raise ValueError(f"Sobol dimension must be in 1..{MAX_SOBOL_DIM}, got {dim}")
    if n < 1 or skip < 0:
        raise ValueError("need n >= 1 and skip >= 0")
    total = n + skip
    if total > 2**_BITS:
        raise ValueError("too many Sobol points requested")
    v = _direction_numbers(dim)
    out = np.empty((total, dim))
    state = np.zeros(dim, dtype=np.uint64)
    scale = 1.0 / float(1 << _BITS)
    out[0] = 0.0
    for i in range(1, total):
        state ^= v[:, _lowest_zero_bit(i - 1)]
        out[i] = state.astype(float) * scale
    return out[skip:]


def _lowest_zero_bit(i):
    c = 0
    while i & 1:
        i >>= 1
        c += 1
    return c


def latin_hypercube(dim, n, seed=None):
    """One point per stratum of width ``1/n`` along every axis.

    Strata are permuted independently per axis and points jittered
    uniformly inside their cell.
    """
    if n < 1 or dim < 1:
        raise ValueError("need n >= 1 and dim >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((n, dim))
    perms = np.column_stack([rng.permutation(n) for _ in range(dim)])
    pts = (perms + u) / n
    # guard against rounding up to the next stratum edge
    return np.minimum(pts, np.nextafter((perms + 1) / n, 0.0))
