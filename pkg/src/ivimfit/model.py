"""IVIM forward model, analytic Jacobian, parameter containers and simulation.

The two-compartment signal is

    S(b) = S0 * (f * exp(-b * D*) + (1 - f) * exp(-b * D))

with ``f`` the perfusion fraction, ``D*`` the pseudo-diffusion coefficient and
``D`` the tissue diffusion coefficient (mm^2/s, b in s/mm^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("s0", "f", "d_star", "d")


class ModelDomainError(ValueError):
    """Raised when parameters or schemes violate their invariants."""


@dataclass(frozen=True)
class AcquisitionScheme:
    """Ordered b-values (s/mm^2) of a measurement protocol.

    ``require_b0`` and ``min_distinct`` exist so that cross-validation folds,
    which are sub-schemes of a valid protocol, can be represented too.
    """

    bvalues: np.ndarray
    require_b0: bool = True
    min_distinct: int = 4

    def __post_init__(self):
        b = np.asarray(self.bvalues, dtype=float).ravel()
        if b.size == 0 or not np.all(np.isfinite(b)):
            raise ModelDomainError("b-values must be a non-empty finite sequence")
        if np.any(b < 0):
            raise ModelDomainError("b-values must be non-negative")
        if self.require_b0 and not np.any(b == 0):
            raise ModelDomainError("scheme needs at least one b=0 measurement")
        if np.unique(b).size < self.min_distinct:
            raise ModelDomainError(
                f"scheme needs at least {self.min_distinct} distinct b-values"
            )
        b.setflags(write=False)
        object.__setattr__(self, "bvalues", b)

    def __len__(self):
        return self.bvalues.size

    def __eq__(self, other):
        if not isinstance(other, AcquisitionScheme):
            return NotImplemented
        return np.array_equal(self.bvalues, other.bvalues)

    def __hash__(self):
        return hash(self.bvalues.tobytes())

    @property
    def is_sorted(self):
        return bool(np.all(np.diff(self.bvalues) >= 0))

    def canonical(self):
        """Return the scheme with b-values sorted (stable) and the sort order."""
        order = np.argsort(self.bvalues, kind="stable")
        return (
            AcquisitionScheme(self.bvalues[order], self.require_b0, self.min_distinct),
            order,
        )

    def subset(self, indices):
        """Sub-scheme for a fold; b=0 and distinct-count checks are relaxed."""
        idx = np.asarray(indices, dtype=int)
        return AcquisitionScheme(self.bvalues[idx], require_b0=False, min_distinct=1)

    @property
    def b0_mask(self):
        return self.bvalues == 0


@dataclass(frozen=True)
class IvimParams:
    """The four IVIM parameters.

    ``d_blood`` is an additive constant folded into the perfusion decay rate
    for forward simulation only; fitting treats ``d_star`` as the total rate.
    """

    s0: float
    f: float
    d_star: float
    d: float
    d_blood: float = 0.0

    def validate(self, require_order=True):
        if not all(np.isfinite(v) for v in self.as_array()):
            raise ModelDomainError(f"non-finite parameters: {self}")
        if self.s0 <= 0:
            raise ModelDomainError(f"s0 must be positive, got {self.s0}")
        if not 0.0 <= self.f <= 1.0:
            raise ModelDomainError(f"f must lie in [0, 1], got {self.f}")
        if self.d <= 0:
            raise ModelDomainError(f"d must be positive, got {self.d}")
        # With f == 0 the perfusion rate is irrelevant, so any d_star is allowed.
        if require_order and self.f > 0 and not self.d_star > self.d:
            raise ModelDomainError(
                f"d_star ({self.d_star}) must exceed d ({self.d})"
            )
        if self.d_blood < 0:
            raise ModelDomainError("d_blood must be non-negative")
        return self

    def as_array(self):
        return np.array([self.s0, self.f, self.d_star, self.d], dtype=float)

    @classmethod
    def from_array(cls, x, d_blood=0.0):
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]), d_blood)


@dataclass(frozen=True)
class ParamBounds:
    """Box limits for (s0, f, d_star, d).

    Default diffusion boxes do not overlap (d_star lower >= d upper), which
    keeps the two compartments from swapping labels. The pipeline interprets
    the s0 box relative to the curve's normalization constant.
    """

    s0: tuple = (0.2, 5.0)
    f: tuple = (0.0, 1.0)
    d_star: tuple = (3e-3, 1e-1)
    d: tuple = (1e-4, 2.9e-3)

    def __post_init__(self):
        for name in PARAM_NAMES:
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ModelDomainError(f"invalid bounds for {name}: ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.f[0] < 0 or self.f[1] > 1:
            raise ModelDomainError("f bounds must lie within [0, 1]")
        if self.s0[0] <= 0 or self.d[0] <= 0:
            raise ModelDomainError("s0 and d lower bounds must be positive")
        if self.d_star[0] < self.d[1]:
            raise ModelDomainError(
                "d_star lower bound must be >= d upper bound (non-overlapping boxes)"
            )

    @property
    def lower(self):
        return np.array([getattr(self, n)[0] for n in PARAM_NAMES])

    @property
    def upper(self):
        return np.array([getattr(self, n)[1] for n in PARAM_NAMES])

    @property
    def nonlinear(self):
        """Bounds of the reduced variable ``(d, d_star)`` as (lower, upper)."""
        return (
            np.array([self.d[0], self.d_star[0]]),
            np.array([self.d[1], self.d_star[1]]),
        )

    def contains(self, params):
        x = params.as_array()
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class DecayCurve:
    """One voxel's signal, aligned with ``scheme``."""

    signal: np.ndarray
    scheme: AcquisitionScheme

    def __post_init__(self):
        s = np.asarray(self.signal, dtype=float).ravel()
        if s.size != len(self.scheme):
            raise ModelDomainError(
                f"signal length {s.size} does not match scheme length {len(self.scheme)}"
            )
        if not np.all(np.isfinite(s)):
            raise ModelDomainError("signal contains non-finite values")
        s.setflags(write=False)
        object.__setattr__(self, "signal", s)

    def __eq__(self, other):
        if not isinstance(other, DecayCurve):
            return NotImplemented
        return self.scheme == other.scheme and np.array_equal(self.signal, other.signal)

    def __hash__(self):
        return hash((self.signal.tobytes(), self.scheme))

    def subset(self, indices):
        idx = np.asarray(indices, dtype=int)
        return DecayCurve(self.signal[idx], self.scheme.subset(idx))


NOISE_KINDS = ("none", "gaussian", "rician")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model; ``sigma = s0 / snr`` applied independently per sample."""

    kind: str = "none"
    snr: float = np.inf
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ModelDomainError(f"unknown noise kind {self.kind!r}")
        if self.kind != "none" and not self.snr > 0:
            raise ModelDomainError("snr must be positive for noisy simulation")


def _check(params, scheme):
    if not isinstance(scheme, AcquisitionScheme):
        scheme = AcquisitionScheme(scheme)
    params.validate()
    return scheme


def evaluate_signal(params: IvimParams, scheme: AcquisitionScheme) -> DecayCurve:
    """Noiseless IVIM signal for every b-value of ``scheme``."""
    scheme = _check(params, scheme)
    b = scheme.bvalues
    signal = params.s0 * (
        params.f * np.exp(-b * (params.d_star + params.d_blood))
        + (1.0 - params.f) * np.exp(-b * params.d)
    )
    return DecayCurve(signal, scheme)


def signal_array(x, bvalues):
    """Vectorised model for a raw parameter vector ``(s0, f, d_star, d)``.

    No validation; used inside solvers where the box already guards the
    domain.
    """
    s0, f, d_star, d = x
    return s0 * (f * np.exp(-bvalues * d_star) + (1.0 - f) * np.exp(-bvalues * d))


def jacobian_array(x, bvalues):
    s0, f, d_star, d = x
    e_star = np.exp(-bvalues * d_star)
    e_d = np.exp(-bvalues * d)
    jac = np.empty((bvalues.size, 4))
    jac[:, 0] = f * e_star + (1.0 - f) * e_d
    jac[:, 1] = s0 * (e_star - e_d)
    jac[:, 2] = -bvalues * s0 * f * e_star
    jac[:, 3] = -bvalues * s0 * (1.0 - f) * e_d
    return jac


def jacobian(params: IvimParams, scheme: AcquisitionScheme) -> np.ndarray:
    """Analytic derivative of the signal, columns ordered (s0, f, d_star, d).

    ``d_blood`` is not part of the fitted model and is ignored here.
    """
    scheme = _check(params, scheme)
    return jacobian_array(params.as_array(), scheme.bvalues)


def simulate(
    params: IvimParams, scheme: AcquisitionScheme, noise: NoiseSpec = NoiseSpec()
) -> DecayCurve:
    """Simulate a decay curve with optional Gaussian or Rician noise.

    Parameters
    ----------
    params : IvimParams
        Ground-truth parameters.
    scheme : AcquisitionScheme
        b-values to sample.
    noise : NoiseSpec
        ``sigma = params.s0 / noise.snr``. Gaussian noise is additive; Rician
        noise is the magnitude of the signal plus complex Gaussian noise.

    Returns
    -------
    DecayCurve
        Deterministic given ``noise.seed``.
    """
    clean = evaluate_signal(params, scheme)
    if noise.kind == "none":
        return clean
    rng = np.random.default_rng(noise.seed)
    sigma = params.s0 / noise.snr
    s = clean.signal
    n1 = rng.normal(0.0, sigma, size=s.size)
    if noise.kind == "gaussian":
        noisy = s + n1
    else:
        n2 = rng.normal(0.0, sigma, size=s.size)
        noisy = np.sqrt((s + n1) ** 2 + n2**2)
    return DecayCurve(noisy, clean.scheme)


# The in-vivo protocol of the public DIPY IVIM dataset (21 b-values).
DIPY_IVIM_BVALUES = (
    0, 10, 20, 30, 40, 60, 80, 100, 120, 140, 160, 180, 200,
    300, 400, 500, 600, 700, 800, 900, 1000,
)
# Compact 11-point protocol.
COMPACT_BVALUES = (0, 10, 20, 40, 80, 160, 240, 400, 600, 800, 1000)
