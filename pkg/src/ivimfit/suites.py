"""Standard synthetic experiment suites.

Truth ranges: f in [0.05, 0.4], d_star in [5e-3, 5e-2] mm^2/s,
d in [3e-4, 2.5e-3] mm^2/s, s0 = 1.
"""

import itertools

import numpy as np

from .model import (
    COMPACT_BVALUES,
    DIPY_IVIM_BVALUES,
    AcquisitionScheme,
    IvimParams,
    NoiseSpec,
    simulate,
)

F_RANGE = (0.05, 0.4)
DSTAR_RANGE = (5e-3, 5e-2)
D_RANGE = (3e-4, 2.5e-3)

COMPACT_SCHEME = AcquisitionScheme(COMPACT_BVALUES)
INVIVO_SCHEME = AcquisitionScheme(DIPY_IVIM_BVALUES)


def truth_grid(n=5):
    """``n**3`` truths on an evenly spaced grid over the three ranges."""
    axes = [np.linspace(*r, n) for r in (F_RANGE, DSTAR_RANGE, D_RANGE)]
    return [IvimParams(1.0, f, ds, d) for f, ds, d in itertools.product(*axes)]


def random_truths(n, seed=0):
    """``n`` truths drawn uniformly over the ranges."""
    rng = np.random.default_rng(seed)
    return [
        IvimParams(1.0, rng.uniform(*F_RANGE), rng.uniform(*DSTAR_RANGE), rng.uniform(*D_RANGE))
        for _ in range(n)
    ]


def noiseless_suite(n=20, seed=0, scheme=COMPACT_SCHEME):
    """``(truths, curves)`` without noise."""
    truths = random_truths(n, seed)
    return truths, [simulate(t, scheme) for t in truths]


def noisy_suite(n=200, snr=30.0, kind="rician", seed=0, scheme=INVIVO_SCHEME):
    """``(truths, curves)`` with independent noise per curve."""
    truths = random_truths(n, seed)
    ss = np.random.SeedSequence([seed, int(snr * 1000), ("gaussian", "rician").index(kind)])
    seeds = ss.generate_state(n)
    curves = [simulate(t, scheme, NoiseSpec(kind, snr, int(s))) for t, s in zip(truths, seeds)]
    return truths, curves
