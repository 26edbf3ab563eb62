"""Goodness-of-fit and comparison statistics.

Cross-validated R^2, per-voxel MSE summaries and evaluation-count / runtime
tables for comparing fitting methods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DecayCurve, signal_array
from .pipeline import FitConfig, InsufficientSplit, fit
from .lsq import NonFiniteResidual


class DegenerateFold(ValueError):
    """A cross-validation fold could not be fitted or scored."""


@dataclass(frozen=True)
class CvSplit:
    folds: tuple
    seed: int | None = None

    def __post_init__(self):
        a, b = (np.asarray(f, dtype=int) for f in self.folds)
        if np.intersect1d(a, b).size:
            raise ValueError("folds must be disjoint")
        if a.size < 2 or b.size < 2:
            raise ValueError("each fold needs at least two indices")
        object.__setattr__(self, "folds", (np.sort(a), np.sort(b)))

    def covers(self, n):
        return np.array_equal(np.sort(np.concatenate(self.folds)), np.arange(n))


def make_split(n, kind="interleaved", seed=None, bvalues=None):
    """Two-fold split of ``n`` measurement indices.

    ``interleaved`` alternates indices (in b-value order when ``bvalues`` is
    given) so that both folds span the whole b-range. ``random`` shuffles
    with ``seed``, placing b=0 samples in different folds where possible.
    """
    if n < 4:
        raise ValueError("need at least four measurements for two folds")
    order = np.argsort(bvalues, kind="stable") if bvalues is not None else np.arange(n)
    if kind == "interleaved":
        return CvSplit((order[0::2], order[1::2]))
    if kind != "random":
        raise ValueError(f"unknown split kind {kind!r}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    if bvalues is not None:
        b0 = np.asarray(bvalues)[perm] == 0
        # b=0 samples first, so the alternating deal spreads them over both folds
        perm = np.concatenate([perm[b0], perm[~b0]])
    return CvSplit((perm[0::2], perm[1::2]), seed)


@dataclass(frozen=True)
class CvScore:
    r2: float
    prediction: np.ndarray
    degenerate: bool = False
    reason: str = ""


def r_squared(measured, predicted):
    """``1 - SS_res / SS_tot``; NaN when the measurement has no variance."""
    measured = np.asarray(measured, dtype=float)
    ss_tot = float(np.sum((measured - measured.mean()) ** 2))
    if ss_tot == 0.0:
        return np.nan
    return 1.0 - float(np.sum((measured - predicted) ** 2)) / ss_tot


def cross_validate(curve: DecayCurve, cfg: FitConfig = FitConfig(), split: CvSplit | None = None,
                   method="varpro_sh"):
    """Two-fold cross-validated R^2 of ``method`` on one curve.

    Fit on each fold, predict the other, and score the assembled prediction
    against the full measured curve. Folds that cannot be fitted, and curves
    without variance, give ``r2 = NaN`` with ``degenerate`` set.
    """
    n = len(curve.scheme)
    if split is None:
        split = make_split(n, bvalues=curve.scheme.bvalues)
    if not split.covers(n):
        raise ValueError("split does not partition the curve's indices")
    pred = np.full(n, np.nan)
    if float(np.ptp(curve.signal)) == 0.0:
        return CvScore(np.nan, pred, True, "zero variance")
    for train, test in (split.folds, split.folds[::-1]):
        try:
            res = fit(curve.subset(train), method, cfg)
        except (InsufficientSplit, NonFiniteResidual, ValueError) as err:
            return CvScore(np.nan, pred, True, f"fold fit failed: {err}")
        pred[test] = res.predict(curve.scheme.bvalues[test])
    return CvScore(r_squared(curve.signal, pred), pred)


@dataclass(frozen=True)
class ScoreReport:
    label: str
    mse: np.ndarray
    r2: np.ndarray | None = None

    @property
    def summary(self):
        return quantiles(self.mse)

    @property
    def r2_summary(self):
        return None if self.r2 is None else quantiles(self.r2)


QUANTILE_NAMES = ("min", "q25", "median", "q75", "max")


def quantiles(values):
    """Five-number summary ignoring NaNs."""
    v = np.asarray(values, dtype=float).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        return dict.fromkeys(QUANTILE_NAMES, np.nan)
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(QUANTILE_NAMES, (float(x) for x in q)))


def mse_report(reference, fitted, quantity="s0", bvalues=None, label="", r2=None):
    """Per-voxel squared error with a quantile summary.

    Parameters
    ----------
    reference : array_like
        ``quantity="s0"``: true S0 per voxel. ``quantity="full_curve"``:
        measured signals, shape ``(n_voxels, n_b)``.
    fitted : array_like
        ``"s0"``: predicted S0 per voxel. ``"full_curve"``: fitted
        parameters ``(n_voxels, 4)`` ordered (s0, f, d_star, d).
    bvalues : array_like
        Required for ``"full_curve"``.
    """
    ref = np.asarray(reference, dtype=float)
    fit_ = np.asarray(fitted, dtype=float)
    if quantity == "s0":
        if ref.shape != fit_.shape:
            raise ValueError(f"shape mismatch: {ref.shape} vs {fit_.shape}")
        mse = (fit_ - ref) ** 2
    elif quantity == "full_curve":
        if bvalues is None:
            raise ValueError("bvalues are required for full-curve MSE")
        b = np.asarray(bvalues, dtype=float)
        ref = ref.reshape(-1, b.size)
        fit_ = fit_.reshape(-1, 4)
        if ref.shape[0] != fit_.shape[0]:
            raise ValueError(f"shape mismatch: {ref.shape[0]} curves vs {fit_.shape[0]} fits")
        pred = np.array([signal_array(p, b) for p in fit_]).reshape(ref.shape)
        mse = np.mean((pred - ref) ** 2, axis=1)
    else:
        raise ValueError(f"unknown quantity {quantity!r}")
    return ScoreReport(label, mse.ravel(), None if r2 is None else np.asarray(r2, float).ravel())


@dataclass(frozen=True)
class SpeedRow:
    method: str
    n_fits: int
    total_nfev: int
    median_nfev: float
    total_time: float
    median_time: float


def speed_report(results, stage_prefix=None):
    """Evaluation-count and wall-time table per method.

    Parameters
    ----------
    results : dict
        ``method label -> sequence of FitResult``.
    stage_prefix : str, optional
        Only count stages whose name starts with this prefix (e.g.
        ``"global"`` to compare the global optimizers alone).

    Returns
    -------
    dict
        label -> SpeedRow.
    """
    rows = {}
    for label, fits in results.items():
        nfev, times = [], []
        for r in fits:
            stages = [s for s in r.stages if stage_prefix is None or s.name.startswith(stage_prefix)]
            nfev.append(sum(s.nfev for s in stages))
            times.append(sum(s.wall_time for s in stages))
        rows[label] = SpeedRow(
            label,
            len(fits),
            int(np.sum(nfev)),
            float(np.median(nfev)) if nfev else np.nan,
            float(np.sum(times)),
            float(np.median(times)) if times else np.nan,
        )
    return rows


def speed_ratio(rows, numerator="varpro_de", denominator="varpro_sh", key="median_nfev"):
    """Ratio of a speed statistic between two methods (DE over SH by default)."""
    return getattr(rows[numerator], key) / getattr(rows[denominator], key)
