"""Four-stage IVIM fit, baseline fitters and volume-wide fitting.

The staged fit of one curve:

1. normalize the curve by its mean b=0 signal;
2. minimize the variable-projection objective over ``(d, d_star)`` with the
   simplicial-homology (``sh``) or differential-evolution (``de``) optimizer;
3. solve for the fractions ``(f, 1 - f)`` by simplex-constrained least
   squares with the dictionary of step 2;
4. refine all four parameters by trust-region-reflective least squares.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import lsq
from .globopt import DeConfig, ObjectiveHandle, de_minimize, shgo_minimize
from .model import (
    AcquisitionScheme,
    DecayCurve,
    IvimParams,
    ModelDomainError,
    ParamBounds,
    jacobian_array,
    signal_array,
)
from .varpro import IllConditioned, ReducedObjective, build_dictionary, project_linear

METHODS = ("varpro_sh", "varpro_de", "msnlls", "dstar_fixed")

FLAG_BITS = {
    "degenerate_projection": 1,
    "hit_bounds": 2,
    "not_converged": 4,
    "failed": 8,
}

# Literal fixed pseudo-diffusion value quoted for the liver/pancreas baseline
# (mm^2/s); the default below is the dimensionally plausible 7e-3.
LITERAL_DSTAR_FIXED = 7e-9


class InsufficientSplit(ValueError):
    """Too few b-values on one side of the segmentation threshold."""


@dataclass(frozen=True)
class FitConfig:
    optimizer: str = "sh"
    bounds: ParamBounds = field(default_factory=ParamBounds)
    shgo_samples: int = 64
    shgo_iterations: int = 1
    de: DeConfig = field(default_factory=DeConfig)
    trr: lsq.TrrConfig = field(default_factory=lsq.TrrConfig)
    normalize: bool = True
    seed: int = 0
    use_global: bool = True
    use_convex: bool = True
    use_trr: bool = True
    split_b: float = 400.0
    d_star_fixed: float = 7e-3

    def __post_init__(self):
        if self.optimizer not in ("sh", "de"):
            raise ValueError(f"optimizer must be 'sh' or 'de', got {self.optimizer!r}")


@dataclass(frozen=True)
class StageRecord:
    name: str
    objective: float
    nfev: int
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class FitResult:
    params: IvimParams
    stages: tuple
    flags: frozenset = frozenset()
    method: str = "varpro_sh"

    @property
    def nfev(self):
        return sum(s.nfev for s in self.stages)

    def stage(self, name):
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def flag_code(self):
        return sum(FLAG_BITS[f] for f in self.flags)

    def predict(self, scheme):
        b = scheme.bvalues if isinstance(scheme, AcquisitionScheme) else np.asarray(scheme, float)
        return signal_array(self.params.as_array(), b)


def normalization_constant(curve):
    """Mean signal at b=0, or at the smallest b-value when b=0 is absent."""
    b = curve.scheme.bvalues
    at = b == b.min()
    value = float(np.mean(curve.signal[at]))
    if not value > 0:
        value = float(np.max(np.abs(curve.signal)))
    return value if value > 0 else 1.0


def _sse(y, bvals, x):
    r = signal_array(x, bvals) - y
    return float(r @ r)


def _hit_bounds(x, lower, upper, rtol=1e-6):
    w = upper - lower
    return bool(np.any((x - lower <= rtol * w) | (upper - x <= rtol * w)))


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def _prepare(curve, cfg):
    if not isinstance(curve, DecayCurve):
        raise TypeError("expected a DecayCurve")
    norm = normalization_constant(curve) if cfg.normalize else 1.0
    return curve.signal / norm, curve.scheme.bvalues, norm


def fit_curve(curve: DecayCurve, cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit the IVIM model to one curve with the staged variable-projection fit.

    Solver problems are reported through ``FitResult.flags``; a finite curve
    never raises.
    """
    y, b, norm = _prepare(curve, cfg)
    bounds = cfg.bounds
    lo_nl, hi_nl = bounds.nonlinear
    flags = set()
    stages = []

    # stages A/B: variable projection + global search over (d, d_star)
    handle = ObjectiveHandle(ReducedObjective(y, b))
    with _Timer() as t:
        if not cfg.use_global:
            x_nl, obj = 0.5 * (lo_nl + hi_nl), None
        elif cfg.optimizer == "sh":
            g = shgo_minimize(handle, lo_nl, hi_nl, cfg.shgo_samples, cfg.shgo_iterations)
            x_nl, obj = g.x, g.fun
        else:
            g = de_minimize(handle, lo_nl, hi_nl, replace(cfg.de, seed=cfg.seed))
            x_nl, obj = g.x, g.fun
        if obj is None:
            obj = handle(x_nl)
    d, d_star = (float(v) for v in x_nl)
    stages.append(StageRecord(f"global_{cfg.optimizer}", float(obj), handle.count, t.elapsed))
    try:
        project_linear((d, d_star), y, b)
    except IllConditioned:
        flags.add("degenerate_projection")

    # stage C: fractions on the simplex
    with _Timer() as t:
        phi = build_dictionary((d, d_star), b)
        if cfg.use_convex:
            sol = lsq.solve_simplex_ls(phi, y)
            if sol.degenerate:
                flags.add("degenerate_projection")
            f = sol.f1
        else:
            f = 0.1
    x_c = np.array([1.0, f, d_star, d])
    x_c = np.clip(x_c, bounds.lower, bounds.upper)
    stages.append(StageRecord("convex", _sse(y, b, x_c), 0, t.elapsed))

    # stage D: full nonlinear refinement
    x = x_c
    if cfg.use_trr:
        lo, hi = bounds.lower, bounds.upper
        with _Timer() as t:
            try:
                res = lsq.trr_minimize(
                    lambda p: signal_array(p, b) - y,
                    lambda p: jacobian_array(p, b),
                    x_c, lo, hi, cfg.trr,
                )
            except lsq.NonFiniteResidual:
                flags.add("failed")
                res = None
        if res is not None:
            x = res.x
            if not res.converged:
                flags.add("not_converged")
            stages.append(StageRecord("trr", res.fun, res.nfev, t.elapsed))
        if _hit_bounds(x, lo, hi):
            flags.add("hit_bounds")

    method = "varpro_" + cfg.optimizer
    return FitResult(_denormalize(x, norm), tuple(stages), frozenset(flags), method)


def _denormalize(x, norm):
    return IvimParams(float(x[0] * norm), float(x[1]), float(x[2]), float(x[3]))


def _loglinear(y, b, mask):
    """Fit ``log y = log a - b d`` on ``mask``; returns ``(a, d)``."""
    yy = np.maximum(y[mask], 1e-6)
    slope, intercept = np.polyfit(b[mask], np.log(yy), 1)
    return float(np.exp(intercept)), float(-slope)


def split_mask(bvalues, split_b=400.0):
    """High-b samples used by the segmented baselines: ``b >= split_b``."""
    return np.asarray(bvalues, dtype=float) >= split_b


def fit_baseline_msnlls(curve, split_b=400.0, bounds=ParamBounds(), trr_cfg=lsq.TrrConfig()):
    """Segmented fit: mono-exponential D from b >= ``split_b``, then NLLS.

    Stage 1 fits ``log S`` linearly on the high b-values to get the tissue
    diffusion coefficient. Stage 2 fits ``(s0, f, d_star)`` on the full curve
    with ``d`` frozen.

    Raises
    ------
    InsufficientSplit
        If fewer than two b-values fall on either side of the threshold.
    """
    y, b, norm = _prepare(curve, FitConfig())
    high = split_mask(b, split_b)
    if high.sum() < 2 or (~high).sum() < 2:
        raise InsufficientSplit(
            f"split at b={split_b} leaves {int((~high).sum())} low and {int(high.sum())} high samples"
        )
    flags = set()
    with _Timer() as t:
        a_tissue, d = _loglinear(y, b, high)
        d = float(np.clip(d, *bounds.d))
    stages = [StageRecord("loglinear", float(np.sum((a_tissue * np.exp(-b[high] * d) - y[high]) ** 2)), 0, t.elapsed)]

    lo = bounds.lower[:3]
    hi = bounds.upper[:3]
    f0 = float(np.clip(1.0 - a_tissue, 0.01, 0.99))
    x0 = np.clip([1.0, f0, np.sqrt(bounds.d_star[0] * bounds.d_star[1])], lo, hi)

    def resid(p):
        return signal_array((p[0], p[1], p[2], d), b) - y

    def jac(p):
        return jacobian_array((p[0], p[1], p[2], d), b)[:, :3]

    with _Timer() as t:
        res = lsq.trr_minimize(resid, jac, x0, lo, hi, trr_cfg)
    stages.append(StageRecord("trr", res.fun, res.nfev, t.elapsed))
    if not res.converged:
        flags.add("not_converged")
    if _hit_bounds(res.x, lo, hi):
        flags.add("hit_bounds")
    x = np.array([res.x[0], res.x[1], res.x[2], d])
    return FitResult(_denormalize(x, norm), tuple(stages), frozenset(flags), "msnlls")


def fit_baseline_dstar_fixed(curve, d_star_fixed=7e-3, bounds=ParamBounds(), split_b=400.0,
                             trr_cfg=lsq.TrrConfig()):
    """NLLS of ``(s0, f, d)`` with the pseudo-diffusion coefficient held fixed."""
    y, b, norm = _prepare(curve, FitConfig())
    flags = set()
    high = split_mask(b, split_b)
    if high.sum() < 2:
        high = np.ones_like(high)
    a_tissue, d0 = _loglinear(y, b, high)
    lo = np.array([bounds.s0[0], bounds.f[0], bounds.d[0]])
    hi = np.array([bounds.s0[1], bounds.f[1], bounds.d[1]])
    x0 = np.clip([1.0, np.clip(1.0 - a_tissue, 0.01, 0.99), d0], lo, hi)

    def resid(p):
        return signal_array((p[0], p[1], d_star_fixed, p[2]), b) - y

    def jac(p):
        return jacobian_array((p[0], p[1], d_star_fixed, p[2]), b)[:, [0, 1, 3]]

    with _Timer() as t:
        res = lsq.trr_minimize(resid, jac, x0, lo, hi, trr_cfg)
    stages = (StageRecord("trr", res.fun, res.nfev, t.elapsed),)
    if not res.converged:
        flags.add("not_converged")
    if _hit_bounds(res.x, lo, hi):
        flags.add("hit_bounds")
    x = np.array([res.x[0], res.x[1], d_star_fixed, res.x[2]])
    return FitResult(_denormalize(x, norm), stages, frozenset(flags), "dstar_fixed")


def fit(curve, method="varpro_sh", cfg: FitConfig = FitConfig()):
    """Dispatch to one of :data:`METHODS`."""
    if method == "varpro_sh":
        return fit_curve(curve, replace(cfg, optimizer="sh"))
    if method == "varpro_de":
        return fit_curve(curve, replace(cfg, optimizer="de"))
    if method == "msnlls":
        return fit_baseline_msnlls(curve, cfg.split_b, cfg.bounds, cfg.trr)
    if method == "dstar_fixed":
        return fit_baseline_dstar_fixed(curve, cfg.d_star_fixed, cfg.bounds, cfg.split_b, cfg.trr)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# --------------------------------------------------------------------------
# volumes


@dataclass(frozen=True)
class VoxelVolume:
    """Dense ``(nx, ny, nz, n_b)`` grid of decay curves with an optional mask."""

    data: np.ndarray
    scheme: AcquisitionScheme
    mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 4 or data.shape[3] != len(self.scheme):
            raise ModelDomainError(
                f"volume data must be (nx, ny, nz, {len(self.scheme)}), got {data.shape}"
            )
        object.__setattr__(self, "data", data)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != data.shape[:3]:
                raise ModelDomainError("mask shape must equal the spatial dimensions")
            object.__setattr__(self, "mask", mask)

    @property
    def dims(self):
        return self.data.shape[:3]

    @property
    def n_voxels(self):
        return int(np.prod(self.dims))

    def voxel_mask(self):
        if self.mask is None:
            return np.ones(self.dims, dtype=bool)
        return self.mask

    def curve(self, index):
        """Curve at flat (C-order) voxel ``index``."""
        return DecayCurve(self.data.reshape(-1, len(self.scheme))[index], self.scheme)


@dataclass
class ParameterMaps:
    """Per-voxel fit output; unmasked voxels hold NaN (flags: -1)."""

    s0: np.ndarray
    f: np.ndarray
    d_star: np.ndarray
    d: np.ndarray
    flags: np.ndarray
    results: list

    def as_dict(self):
        return {"s0": self.s0, "f": self.f, "d_star": self.d_star, "d": self.d}


def voxel_seed(base_seed, index):
    """Per-voxel seed that depends only on (base seed, flat voxel index)."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def _fit_voxel(args):
    signal, scheme, method, cfg, index = args
    cfg = replace(cfg, seed=voxel_seed(cfg.seed, index))
    try:
        return fit(DecayCurve(signal, scheme), method, cfg)
    except (ModelDomainError, InsufficientSplit, lsq.NonFiniteResidual, ValueError):
        return None


def fit_volume(volume: VoxelVolume, cfg: FitConfig = FitConfig(), method="varpro_sh", workers=1):
    """Fit every masked voxel.

    Each voxel gets its own seed derived from ``cfg.seed`` and its flat
    index, so the maps do not depend on ``workers`` or scheduling. A voxel
    whose fit raises is marked with the ``failed`` flag.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    nb = len(volume.scheme)
    flat = volume.data.reshape(-1, nb)
    idx = np.flatnonzero(volume.voxel_mask().ravel())
    jobs = [(flat[i], volume.scheme, method, cfg, int(i)) for i in idx]
    if workers == 1 or len(jobs) < 2:
        fitted = [_fit_voxel(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(_fit_voxel, jobs, chunksize=max(1, len(jobs) // (4 * workers))))

    n = volume.n_voxels
    maps = {k: np.full(n, np.nan) for k in ("s0", "f", "d_star", "d")}
    flags = np.full(n, -1, dtype=np.int64)
    results = [None] * n
    for i, res in zip(idx, fitted):
        if res is None:
            flags[i] = FLAG_BITS["failed"]
            continue
        p = res.params
        maps["s0"][i], maps["f"][i], maps["d_star"][i], maps["d"][i] = p.s0, p.f, p.d_star, p.d
        flags[i] = res.flag_code
        results[i] = res
    shape = volume.dims
    return ParameterMaps(
        *(maps[k].reshape(shape) for k in ("s0", "f", "d_star", "d")),
        flags.reshape(shape),
        results,
    )
