"""Variable projection for the two-atom IVIM dictionary.

For fixed nonlinear rates ``x = (d, d_star)`` the signal is linear in the
amplitudes ``c = (s0 * f, s0 * (1 - f))``. Those are eliminated with the
pseudoinverse of the dictionary, which leaves an objective in ``x`` only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AcquisitionScheme, DecayCurve, ModelDomainError

# Relative singular-value cutoff; also the condition-number limit.
RCOND = 1e-10
PENALTY_SCALE = 1e30


class IllConditioned(ArithmeticError):
    """The dictionary columns are numerically collinear."""

    def __init__(self, cond, fallback):
        super().__init__(f"dictionary condition number {cond:.3g} exceeds {1 / RCOND:.0e}")
        self.cond = cond
        self.fallback = fallback


@dataclass(frozen=True)
class NonlinearParams:
    """Reduced-subspace variable: diffusion and pseudo-diffusion rates."""

    d: float
    d_star: float

    def as_array(self):
        return np.array([self.d, self.d_star])


@dataclass(frozen=True)
class LinearCoeffs:
    """Amplitudes of the perfusion (``c1``) and diffusion (``c2``) atoms."""

    c1: float
    c2: float

    @property
    def nonnegative(self):
        return self.c1 >= 0 and self.c2 >= 0

    def as_array(self):
        return np.array([self.c1, self.c2])


def _rates(x):
    if isinstance(x, NonlinearParams):
        return x.d, x.d_star
    d, d_star = x
    return float(d), float(d_star)


def build_dictionary(x, scheme, bounds=None):
    """Evaluate the atoms ``[exp(-b d_star), exp(-b d)]`` column-wise.

    Parameters
    ----------
    x : NonlinearParams or (d, d_star)
    scheme : AcquisitionScheme or array of b-values
    bounds : ParamBounds, optional
        When given, ``x`` must lie inside the (d, d_star) boxes.

    Returns
    -------
    ndarray, shape (n_bvalues, 2)
    """
    d, d_star = _rates(x)
    b = scheme.bvalues if isinstance(scheme, AcquisitionScheme) else np.asarray(scheme, float)
    if not (np.isfinite(d) and np.isfinite(d_star)) or d < 0 or d_star < 0:
        raise ModelDomainError(f"rates must be finite and non-negative, got {(d, d_star)}")
    if bounds is not None:
        lo, hi = bounds.nonlinear
        if not (lo[0] <= d <= hi[0] and lo[1] <= d_star <= hi[1]):
            raise ModelDomainError(f"{(d, d_star)} outside the nonlinear bounds")
    return np.column_stack((np.exp(-b * d_star), np.exp(-b * d)))


def _signal(s):
    return s.signal if isinstance(s, DecayCurve) else np.asarray(s, dtype=float)


def _equal_split(s, b):
    s = np.asarray(s)
    at0 = s[b == 0] if np.any(b == 0) else s[:1]
    half = float(np.mean(at0)) / 2.0
    return LinearCoeffs(half, half)


def solve_coefficients(phi, s):
    """SVD least squares for ``phi @ c ~ s``; raises on excessive conditioning.

    Returns the coefficient vector. Separated from :func:`project_linear` so
    that callers holding a dictionary do not rebuild it.
    """
    u, sv, vt = np.linalg.svd(phi, full_matrices=False)
    if sv[0] == 0 or sv[-1] < RCOND * sv[0]:
        cond = np.inf if sv[-1] == 0 else sv[0] / sv[-1]
        raise IllConditioned(cond, None)
    return vt.T @ ((u.T @ s) / sv)


def project_linear(x, s, scheme=None):
    """Best linear amplitudes for fixed rates ``x``.

    The inner problem is unconstrained, so coefficients may come out
    negative; the simplex-constrained stage deals with that.

    Raises
    ------
    IllConditioned
        If the dictionary condition number exceeds 1e10. The exception's
        ``fallback`` attribute carries the equal-split coefficients (half the
        mean b=0 signal each).
    """
    if scheme is None:
        scheme = s.scheme
    sig = _signal(s)
    phi = build_dictionary(x, scheme)
    try:
        c = solve_coefficients(phi, sig)
    except IllConditioned as err:
        b = scheme.bvalues if isinstance(scheme, AcquisitionScheme) else np.asarray(scheme)
        err.fallback = _equal_split(sig, b)
        raise
    return LinearCoeffs(float(c[0]), float(c[1]))


def reduced_objective(x, s, scheme=None):
    """Squared residual norm after projecting out the linear amplitudes.

    Ill-conditioned dictionaries return ``1e30 * ||s||^2`` instead of raising,
    so that global optimizers can walk through the region.
    """
    if scheme is None:
        scheme = s.scheme
    sig = _signal(s)
    phi = build_dictionary(x, scheme)
    try:
        c = solve_coefficients(phi, sig)
    except IllConditioned:
        return PENALTY_SCALE * float(sig @ sig)
    r = sig - phi @ c
    return float(r @ r)


def projector(x, scheme):
    """Orthogonal projector onto the dictionary's column space."""
    phi = build_dictionary(x, scheme)
    return phi @ np.linalg.pinv(phi, rcond=RCOND)


def full_objective(x, c, s, scheme=None):
    """Squared residual of the joint model at rates ``x`` and amplitudes ``c``."""
    if scheme is None:
        scheme = s.scheme
    phi = build_dictionary(x, scheme)
    r = _signal(s) - phi @ np.asarray(c, dtype=float)
    return float(r @ r)


class ReducedObjective:
    """Callable ``(d, d_star) -> reduced_objective`` bound to one signal.

    Avoids re-validating the curve on every call inside optimizers.
    """

    def __init__(self, signal, bvalues):
        self.signal = np.asarray(signal, dtype=float)
        self.bvalues = np.asarray(bvalues, dtype=float)
        self._penalty = PENALTY_SCALE * float(self.signal @ self.signal)

    def __call__(self, x):
        d, d_star = x
        phi = np.column_stack((np.exp(-self.bvalues * d_star), np.exp(-self.bvalues * d)))
        try:
            c = solve_coefficients(phi, self.signal)
        except IllConditioned:
            return self._penalty
        r = self.signal - phi @ c
        return float(r @ r)
