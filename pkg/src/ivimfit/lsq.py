"""Constrained least-squares solvers.

* :func:`solve_simplex_ls` -- two-atom least squares with ``f1 + f2 = 1`` and
  ``f in [0, 1]^2``, solved in closed form.
* :func:`trr_minimize` -- bound-constrained nonlinear least squares with a
  trust region and reflective handling of bound crossings.
* :func:`bqn_minimize` -- bounded limited-memory quasi-Newton minimizer used to
  polish global-optimizer candidates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

EPS = np.finfo(float).eps


class NonFiniteResidual(FloatingPointError):
    """Residual or Jacobian evaluated to inf/nan."""


@dataclass
class LocalResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    nit: int
    nfev: int
    converged: bool
    message: str = ""
    trace: list = field(default_factory=list)


# --------------------------------------------------------------------------
# simplex-constrained linear stage


@dataclass(frozen=True)
class SimplexSolution:
    f1: float
    f2: float
    degenerate: bool = False

    @property
    def fractions(self):
        return (self.f1, self.f2)


def solve_simplex_ls(design, target):
    """Minimize ``||target - design @ [f1, f2]||^2`` with ``f1 + f2 = 1``.

    Substituting ``f2 = 1 - f1`` turns the problem into a one-dimensional
    quadratic whose feasible set is ``[0, 1]``, so clamping the unconstrained
    minimizer gives the exact constrained optimum.

    Parameters
    ----------
    design : ndarray, shape (n, 2)
    target : ndarray, shape (n,)

    Returns
    -------
    SimplexSolution
        ``degenerate`` is set (and ``f1 = 0.5``) when the two columns are
        identical, i.e. the quadratic has no curvature.
    """
    a = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float).ravel()
    if a.ndim != 2 or a.shape[1] != 2 or a.shape[0] != y.size or y.size < 2:
        raise ValueError("design must be (n, 2) with n >= 2 matching target")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValueError("design and target must be finite")
    u = a[:, 0] - a[:, 1]
    w = y - a[:, 1]
    uu = float(u @ u)
    if uu <= (EPS * float(np.sum(a * a))) ** 2 or uu == 0.0:
        return SimplexSolution(0.5, 0.5, degenerate=True)
    f1 = min(1.0, max(0.0, float(u @ w) / uu))
    return SimplexSolution(f1, 1.0 - f1)


# --------------------------------------------------------------------------
# trust-region reflective nonlinear least squares


@dataclass(frozen=True)
class TrrConfig:
    max_iter: int = 100
    gtol: float = 1e-10
    xtol: float = 1e-12
    initial_radius: float = 1.0

    def __post_init__(self):
        if not (self.gtol > 0 and self.xtol > 0 and self.initial_radius > 0):
            raise ValueError("TRR tolerances and radius must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


ACTIVE_TOL = 1e-6


def _fold(z):
    """Reflect coordinates back into [0, 1] about the faces they cross."""
    w = np.mod(z, 2.0)
    return np.where(w > 1.0, 2.0 - w, w)


def _tr_subproblem(g, evals, evecs, radius):
    """Minimize ``g.p + p.B.p/2`` over ``||p|| <= radius`` for PSD ``B``."""
    gq = evecs.T @ g
    lam_floor = 1e-14 * max(evals[-1], 1e-300)
    pos = evals > lam_floor
    # Gauss-Newton step (minimum-norm on the null space)
    pq = np.zeros_like(gq)
    pq[pos] = -gq[pos] / evals[pos]
    if np.linalg.norm(pq) <= radius and np.all(np.abs(gq[~pos]) <= 1e-14 * (np.abs(gq).max() + 1e-300)):
        return evecs @ pq

    def norm_at(lam):
        return np.linalg.norm(gq / (evals + lam))

    lo, hi = 0.0, max(np.linalg.norm(g) / radius, 1e-300)
    while norm_at(hi) > radius:
        hi *= 2.0
    if lo == 0.0 and np.any(evals + lo <= 0):
        lo = 1e-300
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm_at(mid) > radius:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return evecs @ (-gq / (evals + hi))


def _truncate(z, p):
    """Largest multiple of ``p`` (at most 1) that keeps ``z + t p`` in [0, 1]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        room = np.where(p > 0, (1.0 - z) / p, np.where(p < 0, -z / p, np.inf))
    return min(1.0, float(np.min(room))) * p


def _face_step(z, g, bmat, radius, active):
    """Trust-region step over the variables not held on a face.

    ``active`` variables are moved onto the face the gradient pushes them
    against; the subproblem is solved over the others and the step is
    truncated where it first meets the box. A free variable already on a
    face whose step points outward is pinned as well and the step re-solved.
    Returns None when every variable ends up pinned.
    """
    face = (g < 0).astype(float)
    pinned = active.copy()
    for _ in range(z.size):
        free = ~pinned
        if not free.any():
            return None
        q = np.where(pinned, face - z, 0.0)
        # model gradient at the pinned point, restricted to the free variables
        gf = (g + bmat @ q)[free]
        ev, vec = np.linalg.eigh(bmat[np.ix_(free, free)])
        qf = _tr_subproblem(gf, np.maximum(ev, 0.0), vec, radius)
        zf = z[free]
        blocked = ((zf <= 0.0) & (qf < 0)) | ((zf >= 1.0) & (qf > 0))
        if blocked.any():
            idx = np.flatnonzero(free)[blocked]
            face[idx] = (qf[blocked] > 0).astype(float)
            pinned[idx] = True
            continue
        q[free] = _truncate(zf, qf)
        return q
    return None


def _model(g, b, p):
    return float(g @ p + 0.5 * p @ (b @ p))


def trr_minimize(residual_fn, jacobian_fn, x0, lower, upper, cfg=TrrConfig()):
    """Bounded nonlinear least squares by a reflective trust-region method.

    Variables are mapped affinely so the box becomes the unit cube. Each
    iteration solves the trust-region subproblem of the Gauss-Newton model;
    a trial step leaving the box is reflected about the faces it crosses.
    The clipped step, and a step over the variables not held on a face by
    the gradient, are kept as alternatives; the candidate with the largest
    model decrease is taken. Steps are accepted when actual/predicted reduction > 1e-4; the
    radius doubles when the ratio exceeds 0.75 on a full-radius step and
    shrinks by 4 below 0.25.

    Parameters
    ----------
    residual_fn, jacobian_fn : callable
        ``x -> r`` (shape (m,)) and ``x -> J`` (shape (m, n)).
    x0, lower, upper : array_like, shape (n,)
    cfg : TrrConfig

    Returns
    -------
    LocalResult
        ``fun`` is the residual sum of squares. The result is never worse
        than ``x0`` and always satisfies the bounds exactly.

    Raises
    ------
    NonFiniteResidual
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    width = upper - lower
    if np.any(width <= 0):
        raise ValueError("bounds must satisfy lower < upper")
    x_start = np.clip(np.asarray(x0, dtype=float), lower, upper)
    margin = 1e-8
    z = np.clip((x_start - lower) / width, margin, 1.0 - margin)

    def to_x(zz):
        return np.clip(lower + zz * width, lower, upper)

    nfev = 0

    def evaluate(zz):
        nonlocal nfev
        nfev += 1
        r = np.asarray(residual_fn(to_x(zz)), dtype=float)
        if not np.all(np.isfinite(r)):
            raise NonFiniteResidual(f"non-finite residual at x={to_x(zz)}")
        return r

    def scaled_jac(zz):
        j = np.asarray(jacobian_fn(to_x(zz)), dtype=float)
        if not np.all(np.isfinite(j)):
            raise NonFiniteResidual(f"non-finite Jacobian at x={to_x(zz)}")
        return j * width

    r = evaluate(z)
    cost = float(r @ r)
    start_cost = cost
    jac = scaled_jac(z)
    radius = cfg.initial_radius
    trace = [cost]
    converged = False
    message = "maximum iterations reached"
    gnorm = np.inf
    nit = 0

    for nit in range(1, cfg.max_iter + 1):
        g = jac.T @ r
        pg = z - np.clip(z - g, 0.0, 1.0)
        gnorm = float(np.max(np.abs(pg)))
        scale = float(np.linalg.norm(jac) * np.sqrt(cost))
        if cost == 0.0 or gnorm <= cfg.gtol * scale:
            converged, message = True, "gradient tolerance"
            nit -= 1
            break
        bmat = jac.T @ jac
        evals, evecs = np.linalg.eigh(bmat)
        evals = np.maximum(evals, 0.0)

        # variables held on (or within ACTIVE_TOL of) a face by the gradient
        active = ((z <= ACTIVE_TOL) & (g > 0)) | ((z >= 1.0 - ACTIVE_TOL) & (g < 0))

        accepted = False
        while not accepted:
            p = _tr_subproblem(g, evals, evecs, radius)
            trial = z + p
            if np.any(trial < 0) or np.any(trial > 1):
                candidates = [_fold(trial) - z, np.clip(trial, 0.0, 1.0) - z]
                t = _truncate(z, p)
                if np.any(t != 0):
                    candidates.append(t)
                q = _face_step(z, g, bmat, radius, active)
                if q is not None:
                    candidates.append(q)
                p = min(candidates, key=lambda q: _model(g, bmat, q))
            step_norm = float(np.linalg.norm(p))
            predicted = -_model(g, bmat, p)
            if step_norm <= cfg.xtol * (cfg.xtol + np.linalg.norm(z)):
                converged, message = True, "step tolerance"
                break
            if predicted <= 0:
                radius = 0.25 * min(radius, step_norm)
                continue
            z_new = np.clip(z + p, 0.0, 1.0)
            r_new = evaluate(z_new)
            cost_new = float(r_new @ r_new)
            ratio = (cost - cost_new) / (2.0 * predicted)
            if ratio < 0.25:
                radius = 0.25 * step_norm
            elif ratio > 0.75 and step_norm >= 0.99 * radius:
                radius *= 2.0
            if ratio > 1e-4 and cost_new < cost:
                accepted = True
                z, r, cost = z_new, r_new, cost_new
                jac = scaled_jac(z)
                trace.append(cost)
                if step_norm <= cfg.xtol * (cfg.xtol + np.linalg.norm(z)):
                    converged, message = True, "step tolerance"
            elif radius <= cfg.xtol * (cfg.xtol + np.linalg.norm(z)):
                converged, message = True, "step tolerance"
                break
        if converged:
            break

    x = to_x(z)
    if start_cost < cost:
        x, cost = x_start, start_cost
    return LocalResult(x, cost, gnorm, nit, nfev, converged, message, trace)


# --------------------------------------------------------------------------
# bounded limited-memory quasi-Newton


def fd_gradient(fun, x, lower, upper, step):
    """Central differences, one-sided where a bound is within ``step``."""
    g = np.empty_like(x)
    n = 0
    for i in range(x.size):
        h = step[i]
        xp = x.copy()
        xm = x.copy()
        xp[i] = min(x[i] + h, upper[i])
        xm[i] = max(x[i] - h, lower[i])
        fp = fun(xp)
        fm = fun(xm)
        n += 2
        g[i] = (fp - fm) / (xp[i] - xm[i])
    return g, n


def bqn_minimize(
    obj_fn,
    x0,
    lower,
    upper,
    grad_fn=None,
    memory=5,
    max_iter=200,
    gtol=1e-12,
    xtol=1e-12,
    fd_rel_step=1e-6,
):
    """Bounded quasi-Newton descent (projected L-BFGS).

    Free variables follow the limited-memory BFGS direction; variables held
    at a bound by the gradient are frozen. Steps are backtracked along the
    projected path until the Armijo condition holds, so the objective trace
    is monotone decreasing. Gradients default to finite differences with
    step ``fd_rel_step`` times the box width.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    width = upper - lower
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    nfev = 0

    def f(xx):
        nonlocal nfev
        nfev += 1
        return float(obj_fn(xx))

    def grad(xx):
        nonlocal nfev
        if grad_fn is not None:
            return np.asarray(grad_fn(xx), dtype=float)
        g, n = fd_gradient(obj_fn, xx, lower, upper, fd_rel_step * width)
        nfev += n
        return g

    fx = f(x)
    g = grad(x)
    trace = [fx]
    s_hist = deque(maxlen=memory)
    y_hist = deque(maxlen=memory)
    converged = False
    message = "maximum iterations reached"
    gnorm = np.inf
    nit = 0

    for nit in range(1, max_iter + 1):
        pg = x - np.clip(x - g, lower, upper)
        gnorm = float(np.max(np.abs(pg / width)))
        if gnorm <= gtol:
            converged, message = True, "projected gradient tolerance"
            nit -= 1
            break
        tiny = 1e-12 * width
        active = ((x <= lower + tiny) & (g > 0)) | ((x >= upper - tiny) & (g < 0))
        free = ~active
        d = _two_loop(g, s_hist, y_hist, free)
        if not g @ d < 0:
            d = np.where(free, -g, 0.0)
            s_hist.clear()
            y_hist.clear()
        if not s_hist:
            # first step: move at most a tenth of the box
            d *= min(1.0, 0.1 / max(np.max(np.abs(d) / width), 1e-300))

        t = 1.0
        improved = False
        for _ in range(40):
            x_new = np.clip(x + t * d, lower, upper)
            step = x_new - x
            if np.max(np.abs(step) / width) <= xtol:
                break
            f_new = f(x_new)
            if f_new <= fx + 1e-4 * float(g @ step) and f_new < fx:
                improved = True
                break
            t *= 0.5
        if not improved:
            converged, message = True, "no further decrease within step tolerance"
            break
        g_new = grad(x_new)
        s_vec = x_new - x
        y_vec = g_new - g
        if s_vec @ y_vec > 1e-12 * np.sqrt((s_vec @ s_vec) * (y_vec @ y_vec)):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
        x, fx, g = x_new, f_new, g_new
        trace.append(fx)
        if np.max(np.abs(s_vec) / width) <= xtol:
            converged, message = True, "step tolerance"
            break

    return LocalResult(x, fx, gnorm, nit, nfev, converged, message, trace)


def _two_loop(g, s_hist, y_hist, free):
    q = np.where(free, g, 0.0)
    if not s_hist:
        return -q
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        s = np.where(free, s, 0.0)
        y = np.where(free, y, 0.0)
        sy = s @ y
        if sy <= 0:
            alphas.append((0.0, s, y, 0.0))
            continue
        rho = 1.0 / sy
        a = rho * (s @ q)
        q = q - a * y
        alphas.append((a, s, y, rho))
    s_last = np.where(free, s_hist[-1], 0.0)
    y_last = np.where(free, y_hist[-1], 0.0)
    yy = y_last @ y_last
    gamma = (s_last @ y_last) / yy if yy > 0 and s_last @ y_last > 0 else 1.0
    r = gamma * q
    for a, s, y, rho in reversed(alphas):
        if rho == 0.0:
            continue
        b = rho * (y @ r)
        r = r + s * (a - b)
    return -np.where(free, r, 0.0)
