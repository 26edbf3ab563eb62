"""Differential evolution, best/1/bin, on a box."""

from dataclasses import dataclass

import numpy as np

from ..lsq import bqn_minimize
from .objective import GlobalResult, ObjectiveHandle, UnitBoxObjective
from .sampling import latin_hypercube


@dataclass(frozen=True)
class DeConfig:
    """Differential-evolution settings.

    ``mutation`` is a ``(low, high)`` range, redrawn uniformly every
    generation (dithering); pass equal values for a fixed factor.
    ``tol`` is relative to the mean population objective.
    """

    popsize: int = 30
    mutation: tuple = (0.5, 1.0)
    crossover: float = 0.7
    max_generations: int = 200
    tol: float = 1e-8
    atol: float = 0.0
    seed: int = 0
    polish: bool = True

    def __post_init__(self):
        if self.popsize < 5:
            raise ValueError("popsize must be >= 5")
        if not 0 < self.crossover <= 1:
            raise ValueError("crossover rate must lie in (0, 1]")
        lo, hi = self.mutation
        if not (0 < lo <= hi < 2):
            raise ValueError("mutation range must lie within (0, 2)")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")


def de_minimize(obj, lower, upper, cfg=DeConfig()):
    """Minimize ``obj`` over ``[lower, upper]`` with best/1/bin evolution.

    The population starts from a latin hypercube. Every generation each
    member ``i`` builds a mutant ``best + F * (x_r1 - x_r2)`` with ``r1, r2``
    distinct and different from ``i`` and the best member, crosses it
    binomially with ``x_i`` (one mutant gene always kept), resamples genes
    that left the box, and replaces ``x_i`` when the trial is no worse.
    Trials of one generation are evaluated before any replacement, so their
    order does not matter. The final best point is polished with the
    bounded quasi-Newton minimizer.
    """
    handle = obj if isinstance(obj, ObjectiveHandle) else ObjectiveHandle(obj)
    start = handle.count
    unit = UnitBoxObjective(handle, lower, upper)
    dim = unit.width.size
    rng = np.random.default_rng(cfg.seed)
    n = cfg.popsize

    pop = latin_hypercube(dim, n, seed=rng)
    energy = np.array([unit(p) for p in pop])
    best = int(np.argmin(energy))
    trace = [float(energy[best])]
    others = np.arange(n)

    gen = 0
    for gen in range(1, cfg.max_generations + 1):
        F = rng.uniform(*cfg.mutation)
        trials = np.empty_like(pop)
        for i in range(n):
            choices = others[(others != i) & (others != best)]
            r1, r2 = rng.choice(choices, 2, replace=False)
            mutant = pop[best] + F * (pop[r1] - pop[r2])
            cross = rng.random(dim) < cfg.crossover
            cross[rng.integers(dim)] = True
            trial = np.where(cross, mutant, pop[i])
            out = (trial < 0) | (trial > 1)
            if np.any(out):
                trial[out] = rng.random(int(out.sum()))
            trials[i] = trial
        trial_energy = np.array([unit(t) for t in trials])
        better = trial_energy <= energy
        pop[better] = trials[better]
        energy[better] = trial_energy[better]
        best = int(np.argmin(energy))
        trace.append(float(energy[best]))
        spread = float(energy.max() - energy.min())
        if spread <= cfg.atol + cfg.tol * abs(float(energy.mean())):
            break

    x, fun = pop[best].copy(), float(energy[best])
    if cfg.polish:
        res = bqn_minimize(unit, x, np.zeros(dim), np.ones(dim))
        if res.fun < fun:
            x, fun = res.x, float(res.fun)
            trace.append(fun)
    return GlobalResult(unit.to_box(x), fun, handle.count - start, trace, nit=gen)
