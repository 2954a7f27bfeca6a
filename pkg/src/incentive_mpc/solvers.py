"""Dependency-light first-order convex solvers.

Two routines cover every optimization problem in the library:

* :func:`solve_composite` -- accelerated proximal gradient (FISTA-style
  momentum with adaptive restart and backtracking) for
  ``smooth(w) + prox_term(w)`` over a box.  Batched: a ``(B, n)`` iterate
  solves ``B`` independent problems simultaneously, which is how whole
  follower populations are solved in one call.
* :func:`solve_polytope` -- augmented Lagrangian (method of multipliers)
  for a smooth convex objective under linear equality / inequality
  constraints plus a variable box, with :func:`solve_composite` as the
  inner loop.

Both routines are pure functions of their inputs and safe to call from
concurrent workers; callbacks supplied by callers must be reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class SolverError(RuntimeError):
    pass


class NonFiniteObjective(SolverError):
    """A callback produced a NaN or infinity at a feasible point."""


class MaxIterExceeded(SolverError):
    """Iteration budget exhausted; carries the best iterate found."""

    def __init__(self, message: str, best=None, residual: float = float("inf")):
        super().__init__(message)
        self.best = best
        self.residual = residual


class Infeasible(SolverError):
    """The augmented-Lagrangian penalty diverged without finding a
    feasible point."""


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box ``lower <= w <= upper`` (entries may be +-inf)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("box has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dim:
            raise ValueError(f"point has dim {v.shape[-1]}, box has dim {self.dim}")
        return np.clip(v, self.lower, self.upper)

    def interior_point(self) -> np.ndarray:
        lo = np.where(np.isfinite(self.lower), self.lower, -1.0)
        hi = np.where(np.isfinite(self.upper), self.upper, 1.0)
        return 0.5 * (lo + hi)

    @staticmethod
    def unbounded(n: int) -> "BoxSet":
        return BoxSet(np.full(n, -np.inf), np.full(n, np.inf))

    @staticmethod
    def bounds(lower, upper) -> "BoxSet":
        return BoxSet(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))


def project_box(v: np.ndarray, box: BoxSet) -> np.ndarray:
    """Coordinatewise clamp of ``v`` into ``box`` (the Euclidean projection)."""
    return box.project(v)


@dataclass
class CompositeObjective:
    """Objective ``smooth_part(w) + prox_term(w)`` for :func:`solve_composite`.

    smooth_part : callable
        ``w -> (value, gradient)``.  Must accept a trailing-dimension batch
        ``(B, n)`` and return ``(B,)`` values with ``(B, n)`` gradients.
    prox_part : callable or None
        ``(v, t) -> argmin_w  prox_term(w) + ||w - v||^2 / (2 t)``.
        Must be coordinatewise separable so that composing with the box
        projection is exact.
    strong_convexity_m : float
        Modulus of strong convexity of the full objective (0 if unknown);
        informational for callers, not required by the solver.
    prox_value : callable or None
        ``w -> value`` of the prox term, used only to monitor monotone
        descent of the full objective.  Without it the descent monitor
        covers the smooth part plus the box indicator.
    """

    smooth_part: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    prox_part: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    strong_convexity_m: float = 0.0
    prox_value: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass
class CompositeResult:
    w: np.ndarray
    residual: float
    iterations: int
    converged: bool
    objective: float
    step_size: float = float("nan")
    objective_history: Optional[np.ndarray] = None


def check_gradient(smooth_part, w0: np.ndarray, rel_tol: float = 1e-5,
                   probes: int = 8, seed: int = 0) -> float:
    """Compare the callback gradient against central finite differences on
    random directions; returns the worst relative error and raises if it
    exceeds ``rel_tol``."""
    rng = np.random.default_rng(seed)
    w0 = np.asarray(w0, dtype=float)
    _, g = smooth_part(w0)
    scale = 1.0 + float(np.linalg.norm(w0))
    eps = 1e-6 * scale
    worst = 0.0
    for _ in range(probes):
        d = rng.standard_normal(w0.shape)
        d /= np.linalg.norm(d)
        fp, _ = smooth_part(w0 + eps * d)
        fm, _ = smooth_part(w0 - eps * d)
        fd = (fp - fm) / (2 * eps)
        an = float(np.sum(g * d))
        denom = max(abs(fd), abs(an), 1e-8 * scale)
        worst = max(worst, abs(fd - an) / denom)
    if worst > rel_tol:
        raise NonFiniteObjective(
            f"gradient check failed: relative error {worst:.3e} > {rel_tol:.1e}"
        )
    return worst


def _power_lipschitz(smooth_part, w0: np.ndarray) -> float:
    """Curvature bound via power iteration on gradient differences
    (exact largest Hessian eigenvalue for quadratics)."""
    n = w0.shape[-1]
    probe = 1.0 + 0.01 * np.arange(n)
    probe /= np.linalg.norm(probe)
    eps = 1e-6 * (1.0 + float(np.linalg.norm(w0)))
    _, g0 = smooth_part(w0)
    if not np.all(np.isfinite(g0)):
        raise NonFiniteObjective("gradient is non-finite at the initial point")
    lam = 0.0
    v = probe
    for _ in range(15):
        _, g1 = smooth_part(w0 + eps * v)
        u = (np.asarray(g1, dtype=float) - g0) / eps
        lam_new = float(np.linalg.norm(u))
        if not np.isfinite(lam_new):
            raise NonFiniteObjective("gradient is non-finite near the initial point")
        if lam_new <= 1e-12:
            return 1e-12
        v = u / lam_new
        if abs(lam_new - lam) <= 1e-3 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return max(lam, 1e-12)


def solve_composite(obj: CompositeObjective, box: BoxSet, tol: float = 1e-8,
                    max_iter: int = 20000, w0: Optional[np.ndarray] = None,
                    track_objective: bool = False,
                    strict: bool = False,
                    lipschitz: Optional[float] = None) -> CompositeResult:
    """Minimize ``obj`` over ``box`` by accelerated proximal gradient.

    Convergence is measured by the fixed-point residual of the
    prox-gradient map, ``||w - T(w)||_2`` per problem (max over the batch).
    The accepted iterate sequence is nonincreasing in the monitored
    objective: an accelerated candidate that fails the descent check is
    replaced by the plain prox-gradient step, which the backtracked step
    size guarantees to descend.

    Returns the best iterate with its residual; ``converged`` is False when
    the budget ran out (raises :class:`MaxIterExceeded` only if ``strict``).
    """
    if w0 is None:
        w0 = box.interior_point()
    w0 = np.asarray(w0, dtype=float)
    single = w0.ndim == 1
    x = np.atleast_2d(w0).copy()
    if x.shape[-1] != box.dim:
        raise ValueError(f"iterate dim {x.shape[-1]} != box dim {box.dim}")
    x = box.project(x)

    smooth = obj.smooth_part
    prox = obj.prox_part
    hval = obj.prox_value

    def step_map(v, t):
        if prox is not None:
            v = prox(v, t)
        return box.project(v)

    def monitored(fvals, pts):
        if hval is None:
            return np.asarray(fvals, dtype=float)
        return np.asarray(fvals, dtype=float) + np.asarray(hval(pts), dtype=float)

    # an undersized hint only costs backtracking rounds, never correctness
    L = _power_lipschitz(smooth, x[0]) if lipschitz is None \
        else max(float(lipschitz), 1e-12)
    t_step = 1.0 / (1.1 * L)
    t_cap = t_step * 8.0

    B = x.shape[0]
    y = x.copy()
    t_mom = np.ones(B)
    y_is_x = True

    fx_s, gx = smooth(x)
    if not (np.all(np.isfinite(fx_s)) and np.all(np.isfinite(gx))):
        raise NonFiniteObjective("objective is non-finite at the starting point")
    Fx = monitored(fx_s, x)

    best_x = x.copy()
    best_res = np.inf
    history = [] if track_objective else None
    bt_slack = 1e-12 * (1.0 + float(np.max(np.abs(fx_s))))

    iterations = 0
    for iterations in range(1, max_iter + 1):
        if y_is_x:
            fy, gy = fx_s, gx
        else:
            fy, gy = smooth(y)

        # settle the step size so the quadratic upper bound holds at both
        # the momentum point and the current iterate
        for _ in range(80):
            c = step_map(y - t_step * gy, t_step)
            fc, gc = smooth(c)
            dy = c - y
            ub_y = fy + np.sum(gy * dy, axis=-1) + np.sum(dy * dy, axis=-1) / (2 * t_step)
            p = c if y_is_x else step_map(x - t_step * gx, t_step)
            if p is c:
                ok_x = True
            else:
                fp_s, gp = smooth(p)
                dx = p - x
                ub_x = fx_s + np.sum(gx * dx, axis=-1) + np.sum(dx * dx, axis=-1) / (2 * t_step)
                ok_x = np.all(fp_s <= ub_x + bt_slack)
            if not np.all(np.isfinite(fc)):
                t_step *= 0.5
                continue
            if np.all(fc <= ub_y + bt_slack) and ok_x:
                break
            t_step *= 0.5
        else:
            raise NonFiniteObjective("backtracking failed to find a usable step")

        if y_is_x:
            fp_s, gp = fc, gc

        res = np.linalg.norm(x - p, axis=-1)
        res_max = float(np.max(res))
        if res_max < best_res:
            best_res = res_max
            best_x = x.copy()
        if track_objective:
            history.append(float(np.max(Fx)))
        if res_max <= tol:
            out = best_x[0] if single else best_x
            return CompositeResult(out, best_res, iterations, True,
                                   float(np.max(Fx)), t_step,
                                   np.asarray(history) if track_objective else None)

        # monotone acceptance: accelerated candidate per problem, plain
        # prox-gradient step where the candidate would increase the objective
        Fc = monitored(fc, c)
        accept = Fc <= Fx + bt_slack
        if np.all(accept):
            x_new, f_new, g_new, F_new = c, fc, gc, Fc
            restart = ~accept  # all False
        else:
            Fp = monitored(fp_s, p)
            sel = accept[:, None]
            x_new = np.where(sel, c, p)
            f_new = np.where(accept, fc, fp_s)
            g_new = np.where(sel, gc, gp)
            F_new = np.where(accept, Fc, np.minimum(Fp, Fx))
            # a plain step that fails to descend numerically keeps the iterate
            stuck = (~accept) & (Fp > Fx + bt_slack)
            if np.any(stuck):
                s = stuck[:, None]
                x_new = np.where(s, x, x_new)
                f_new = np.where(stuck, fx_s, f_new)
                g_new = np.where(s, gx, g_new)
                F_new = np.where(stuck, Fx, F_new)
            restart = ~accept

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom ** 2))
        beta = (t_mom - 1.0) / t_next
        # gradient-based restart: momentum pointing uphill resets it
        uphill = np.sum((y - x_new) * (x_new - x), axis=-1) > 0.0
        restart = restart | uphill
        beta = np.where(restart, 0.0, beta)
        t_mom = np.where(restart, 1.0, t_next)

        y = x_new + beta[:, None] * (x_new - x)
        y_is_x = bool(np.all(beta == 0.0))
        if y_is_x:
            y = x_new
        x, fx_s, gx, Fx = x_new, f_new, g_new, F_new
        t_step = min(t_step * 1.02, t_cap)

    out = best_x[0] if single else best_x
    if strict:
        raise MaxIterExceeded(
            f"composite solver hit max_iter={max_iter} with residual {best_res:.3e}",
            best=out, residual=best_res)
    return CompositeResult(out, best_res, iterations, False, float(np.max(Fx)),
                           t_step,
                           np.asarray(history) if track_objective else None)


@dataclass
class PolytopeProgram:
    """Smooth convex objective over ``eq_A z = eq_b``, ``ineq_C z <= ineq_d``
    and a variable box.

    ``hessian`` (``z -> (n, n)`` PSD matrix) is optional; when present the
    penalized subproblems are solved by projected Newton steps instead of
    the first-order composite solver, which matters for badly conditioned
    objectives."""

    objective: Callable[[np.ndarray], tuple[float, np.ndarray]]
    var_box: BoxSet
    eq_A: Optional[np.ndarray] = None
    eq_b: Optional[np.ndarray] = None
    ineq_C: Optional[np.ndarray] = None
    ineq_d: Optional[np.ndarray] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        n = self.var_box.dim
        if self.eq_A is not None:
            self.eq_A = np.atleast_2d(np.asarray(self.eq_A, dtype=float))
            self.eq_b = np.atleast_1d(np.asarray(self.eq_b, dtype=float))
            if self.eq_A.shape != (self.eq_b.shape[0], n):
                raise ValueError("equality constraint shapes are inconsistent")
        if self.ineq_C is not None:
            self.ineq_C = np.atleast_2d(np.asarray(self.ineq_C, dtype=float))
            self.ineq_d = np.atleast_1d(np.asarray(self.ineq_d, dtype=float))
            if self.ineq_C.shape != (self.ineq_d.shape[0], n):
                raise ValueError("inequality constraint shapes are inconsistent")


@dataclass
class PolytopeResult:
    z: np.ndarray
    feas_residual: float
    kkt_residual: float
    iterations: int
    eq_mult: Optional[np.ndarray]
    ineq_mult: Optional[np.ndarray]
    converged: bool
    penalty: float = 1.0


class _SlackNewton:
    """Inner solver for penalized subproblems of Hessian-carrying programs.

    Inequalities are lifted into slack variables (``C z + s = d, s >= 0``),
    so every subproblem is twice continuously differentiable with a
    near-constant Hessian and projected Newton steps accept unit length.
    """

    def __init__(self, prog: "PolytopeProgram", tol: float):
        self.f = prog.objective
        self.hess = prog.hessian
        self.A, self.b = prog.eq_A, prog.eq_b
        self.C, self.d = prog.ineq_C, prog.ineq_d
        self.n = prog.var_box.dim
        self.m_in = 0 if self.C is None else self.d.shape[0]
        lo = [prog.var_box.lower]
        hi = [prog.var_box.upper]
        if self.m_in:
            lo.append(np.zeros(self.m_in))
            hi.append(np.full(self.m_in, np.inf))
        self.box = BoxSet(np.concatenate(lo), np.concatenate(hi))
        self.tol = tol
        self._s = None

    def solve(self, rho, mu, nu, z):
        n, m_in = self.n, self.m_in
        A, b, C, d = self.A, self.b, self.C, self.d
        if m_in:
            s = np.maximum(d - C @ z, 0.0) if self._s is None else self._s
            v0 = np.concatenate([z, s])
        else:
            v0 = z.copy()

        def val_grad(v):
            zz = v[:n]
            val, gz = self.f(zz)
            val = float(val)
            grad = np.empty_like(v)
            grad[:n] = gz
            if m_in:
                grad[n:] = 0.0
            if A is not None:
                r = A @ zz - b
                val += float(mu @ r) + 0.5 * rho * float(r @ r)
                grad[:n] += A.T @ (mu + rho * r)
            if m_in:
                r = C @ zz + v[n:] - d
                val += float(nu @ r) + 0.5 * rho * float(r @ r)
                t = nu + rho * r
                grad[:n] += C.T @ t
                grad[n:] += t
            return val, grad

        def hess(v):
            H = np.zeros((v.shape[0], v.shape[0]))
            H[:n, :n] = np.asarray(self.hess(v[:n]), dtype=float)
            if A is not None:
                H[:n, :n] += rho * (A.T @ A)
            if m_in:
                H[:n, :n] += rho * (C.T @ C)
                H[:n, n:] = rho * C.T
                H[n:, :n] = rho * C
                H[n:, n:] += rho * np.eye(m_in)
            return H

        v = _box_newton(val_grad, hess, self.box, v0, tol=self.tol)
        if m_in:
            self._s = v[n:].copy()
        return v[:n]


def _box_qp_steps(H, g0, x, lo, hi, tol, max_iter=200):
    """Minimize a strictly convex quadratic with gradient ``g0`` at ``x``
    over a box, by Newton steps on the free block with exact steps to the
    first blocking face.  Finite and monotone for PSD models."""
    x = x.copy()
    g = g0.copy()
    n = x.shape[0]
    for _ in range(max_iter):
        res = float(np.linalg.norm(x - np.clip(x - g, lo, hi)))
        if res <= tol:
            break
        eps_act = 1e-12 * (1.0 + np.abs(x))
        at_lo = x <= lo + eps_act
        at_hi = x >= hi - eps_act
        free = ~((at_lo & (g > 0)) | (at_hi & (g < 0)))
        d = np.zeros(n)
        # coupling can point a bound coordinate outward even when its own
        # gradient points inward; clamp such coordinates and re-solve
        for _ in range(n):
            if not np.any(free):
                break
            Hff = H[np.ix_(free, free)]
            ridge = 1e-12 * (1.0 + np.trace(Hff) / Hff.shape[0])
            try:
                d_f = -np.linalg.solve(Hff + ridge * np.eye(Hff.shape[0]),
                                       g[free])
            except np.linalg.LinAlgError:
                d_f = -g[free]
            d[:] = 0.0
            d[free] = d_f
            outward = free & ((at_lo & (d < 0)) | (at_hi & (d > 0)))
            if not np.any(outward):
                break
            free = free & ~outward
        if not np.any(free) or not np.any(d):
            break
        # exact step to the first blocking bound (the quadratic decreases
        # monotonically up to the unconstrained minimizer at alpha = 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            hi_ratio = np.where(d > 1e-16, (hi - x) / d, np.inf)
            lo_ratio = np.where(d < -1e-16, (lo - x) / d, np.inf)
        alpha = min(1.0, float(np.min(np.minimum(hi_ratio, lo_ratio))))
        if alpha <= 0:
            break
        step = alpha * d
        x = np.clip(x + step, lo, hi)
        g = g + H @ step
    return x


def _box_newton(val_grad, hess, box: BoxSet, z0: np.ndarray, tol: float,
                max_iter: int = 30) -> np.ndarray:
    """Minimize a smooth convex function over a box by successive quadratic
    models, each solved exactly by an active-set box QP."""
    lo, hi = box.lower, box.upper
    z = box.project(z0.astype(float))
    f, g = val_grad(z)
    for _ in range(max_iter):
        res = float(np.linalg.norm(z - box.project(z - g)))
        if res <= tol:
            break
        H = hess(z)
        z_model = _box_qp_steps(H, g, z, lo, hi, tol=0.3 * tol)
        d = z_model - z
        if not np.any(d):
            break
        # the model is exact up to the mildly nonquadratic objective part;
        # a short backtracking line search guards that gap
        accepted = False
        alpha = 1.0
        gain_full = float(g @ d)
        for _ in range(30):
            z_new = box.project(z + alpha * d)
            f_new, g_new = val_grad(z_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * alpha * gain_full:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        z, f, g = z_new, f_new, g_new
    return z


@dataclass
class PolytopeResult:
    z: np.ndarray
    feas_residual: float
    kkt_residual: float
    iterations: int
    eq_mult: Optional[np.ndarray]
    ineq_mult: Optional[np.ndarray]
    converged: bool
    penalty: float = 1.0


class _SlackNewton:
    """Inner solver for penalized subproblems of Hessian-carrying programs.

    Inequalities are lifted into slack variables (``C z + s = d, s >= 0``),
    so every subproblem is twice continuously differentiable with a
    near-constant Hessian and projected Newton steps accept unit length.
    """

    def __init__(self, prog: "PolytopeProgram", tol: float):
        self.f = prog.objective
        self.hess = prog.hessian
        self.A, self.b = prog.eq_A, prog.eq_b
        self.C, self.d = prog.ineq_C, prog.ineq_d
        self.n = prog.var_box.dim
        self.m_in = 0 if self.C is None else self.d.shape[0]
        lo = [prog.var_box.lower]
        hi = [prog.var_box.upper]
        if self.m_in:
            lo.append(np.zeros(self.m_in))
            hi.append(np.full(self.m_in, np.inf))
        self.box = BoxSet(np.concatenate(lo), np.concatenate(hi))
        self.tol = tol
        self._s = None

    def solve(self, rho, mu, nu, z):
        n, m_in = self.n, self.m_in
        A, b, C, d = self.A, self.b, self.C, self.d
        if m_in:
            s = np.maximum(d - C @ z, 0.0) if self._s is None else self._s
            v0 = np.concatenate([z, s])
        else:
            v0 = z.copy()

        def val_grad(v):
            zz = v[:n]
            val, gz = self.f(zz)
            val = float(val)
            grad = np.empty_like(v)
            grad[:n] = gz
            if m_in:
                grad[n:] = 0.0
            if A is not None:
                r = A @ zz - b
                val += float(mu @ r) + 0.5 * rho * float(r @ r)
                grad[:n] += A.T @ (mu + rho * r)
            if m_in:
                r = C @ zz + v[n:] - d
                val += float(nu @ r) + 0.5 * rho * float(r @ r)
                t = nu + rho * r
                grad[:n] += C.T @ t
                grad[n:] += t
            return val, grad

        def hess(v):
            H = np.zeros((v.shape[0], v.shape[0]))
            H[:n, :n] = np.asarray(self.hess(v[:n]), dtype=float)
            if A is not None:
                H[:n, :n] += rho * (A.T @ A)
            if m_in:
                H[:n, :n] += rho * (C.T @ C)
                H[:n, n:] = rho * C.T
                H[n:, :n] = rho * C
                H[n:, n:] += rho * np.eye(m_in)
            return H

        v = _box_newton(val_grad, hess, self.box, v0, tol=self.tol)
        if m_in:
            self._s = v[n:].copy()
        return v[:n]


def _box_newton(val_grad, hess, box: BoxSet, z0: np.ndarray, tol: float,
                max_iter: int = 100) -> np.ndarray:
    """Projected Newton for a smooth convex function over a box.

    Coordinates pinned at a bound with an outward-pushing gradient are
    frozen; a Newton step on the free block is backtracked along the
    projection arc.  Falls back to a projected gradient step whenever the
    Newton direction stalls.
    """
    lo, hi = box.lower, box.upper
    z = box.project(z0.astype(float))
    n = z.shape[0]
    f, g = val_grad(z)
    f_scale = 1.0 + abs(f)

    def try_arc(direction):
        # backtracking along the projection arc; accepts Armijo progress or
        # any representable decrease
        alpha = 1.0
        for _ in range(50):
            z_new = box.project(z + alpha * direction)
            if np.allclose(z_new, z):
                return None
            f_new, g_new = val_grad(z_new)
            gain = float(g @ (z_new - z))
            armijo = gain <= 0 and f_new <= f + 1e-4 * gain
            if np.isfinite(f_new) and (armijo or f_new < f - 1e-14 * f_scale):
                return z_new, f_new, g_new
            alpha *= 0.5
        return None

    for _ in range(max_iter):
        res = float(np.linalg.norm(z - box.project(z - g)))
        if res <= tol:
            break
        eps_act = 1e-10 * (1.0 + np.abs(z))
        active = ((z <= lo + eps_act) & (g > 0)) | ((z >= hi - eps_act) & (g < 0))
        free = ~active
        d = np.zeros(n)
        if np.any(free):
            H = hess(z)
            Hff = H[np.ix_(free, free)]
            ridge = 1e-10 * (1.0 + np.trace(Hff) / max(Hff.shape[0], 1))
            try:
                d[free] = -np.linalg.solve(
                    Hff + ridge * np.eye(Hff.shape[0]), g[free])
            except np.linalg.LinAlgError:
                d[free] = -g[free]
        step = try_arc(d) if np.any(free) else None
        if step is None:
            step = try_arc(-g / (1.0 + float(np.linalg.norm(g))))
        if step is None:
            break  # no representable descent left
        z, f, g = step
        f_scale = 1.0 + abs(f)
    return z


def solve_polytope(prog: PolytopeProgram, tol_feas: float = 1e-7,
                   tol_opt: float = 1e-6, max_outer: int = 60,
                   inner_max_iter: int = 20000,
                   z0: Optional[np.ndarray] = None,
                   warm: Optional[PolytopeResult] = None) -> np.ndarray:
    """Method of multipliers with penalty growth factor 10 from an initial
    penalty of 1.  Returns the primal solution; raises :class:`Infeasible`
    when the penalty diverges without feasibility and
    :class:`MaxIterExceeded` when the outer budget runs out.

    Full diagnostics (multipliers for warm starting) are available through
    :func:`solve_polytope_full`.
    """
    return solve_polytope_full(prog, tol_feas, tol_opt, max_outer,
                               inner_max_iter, z0, warm).z


def solve_polytope_full(prog: PolytopeProgram, tol_feas: float = 1e-7,
                        tol_opt: float = 1e-6, max_outer: int = 60,
                        inner_max_iter: int = 20000,
                        z0: Optional[np.ndarray] = None,
                        warm: Optional[PolytopeResult] = None) -> PolytopeResult:
    box = prog.var_box
    A, b = prog.eq_A, prog.eq_b
    C, d = prog.ineq_C, prog.ineq_d
    f = prog.objective

    rho = 1.0
    if warm is not None:
        z = box.project(warm.z.astype(float))
        mu = None if A is None else (warm.eq_mult.copy() if warm.eq_mult is not None
                                     else np.zeros(b.shape[0]))
        nu = None if C is None else (warm.ineq_mult.copy() if warm.ineq_mult is not None
                                     else np.zeros(d.shape[0]))
        rho = max(1.0, warm.penalty)
    else:
        z = box.project(z0.astype(float) if z0 is not None else box.interior_point())
        mu = None if A is None else np.zeros(b.shape[0])
        nu = None if C is None else np.zeros(d.shape[0])
    # the slack-Newton path keeps the penalty low (its subproblem
    # conditioning scales with the penalty) and relies on multiplier
    # updates for feasibility, which requires tight inner solves
    if prog.hessian is not None:
        newton_state = _SlackNewton(prog, tol=min(0.25 * tol_opt,
                                                  0.1 * tol_feas))
        rho_cap = 1e4
    else:
        newton_state = None
        rho_cap = 1e8
    feas_prev = np.inf
    inner_tol = 1e-4

    def residuals(zz):
        r_eq = (A @ zz - b) if A is not None else None
        r_in = (C @ zz - d) if C is not None else None
        feas = 0.0
        if r_eq is not None and r_eq.size:
            feas = max(feas, float(np.max(np.abs(r_eq))))
        if r_in is not None and r_in.size:
            feas = max(feas, float(np.max(np.maximum(r_in, 0.0))))
        return r_eq, r_in, feas

    for outer in range(1, max_outer + 1):
        rho_k, mu_k, nu_k = rho, mu, nu

        def aug_one(zz):
            val, grad = f(zz)
            val = float(val)
            grad = np.asarray(grad, dtype=float).copy()
            if A is not None:
                r = A @ zz - b
                val += float(mu_k @ r) + 0.5 * rho_k * float(r @ r)
                grad += A.T @ (mu_k + rho_k * r)
            if C is not None:
                s = C @ zz - d + nu_k / rho_k
                sp = np.maximum(s, 0.0)
                val += 0.5 * rho_k * float(sp @ sp) - float(nu_k @ nu_k) / (2 * rho_k)
                grad += rho_k * (C.T @ sp)
            return val, grad

        def aug(zz):
            # objective callbacks are single-problem; adapt to the batched
            # iterate of the inner solver (batch size is always 1 here)
            if zz.ndim == 1:
                return aug_one(zz)
            vals = np.empty(zz.shape[0])
            grads = np.empty_like(zz)
            for i in range(zz.shape[0]):
                vals[i], grads[i] = aug_one(zz[i])
            return vals, grads

        if prog.hessian is not None:
            z = newton_state.solve(rho_k, mu_k, nu_k, z)
        else:
            res = solve_composite(CompositeObjective(aug), box, tol=inner_tol,
                                  max_iter=inner_max_iter, w0=z)
            z = res.w

        r_eq, r_in, feas = residuals(z)
        if A is not None:
            mu = mu + rho * r_eq
        if C is not None:
            if newton_state is not None:
                # slack-form equality update; the multiplier is free during
                # iterations and nonnegative at optimality
                nu = nu + rho * (r_in + newton_state._s)
            else:
                nu = np.maximum(0.0, nu + rho * r_in)

        _, grad_f = f(z)
        g_lag = np.asarray(grad_f, dtype=float).copy()
        if A is not None:
            g_lag += A.T @ mu
        if C is not None:
            g_lag += C.T @ nu
        kkt = float(np.linalg.norm(z - box.project(z - g_lag)))

        if feas <= tol_feas and kkt <= tol_opt:
            return PolytopeResult(z, feas, kkt, outer, mu, nu, True, rho)

        if feas > 0.25 * feas_prev and feas > tol_feas:
            if rho >= rho_cap and feas > max(1e3 * tol_feas, 1e-9) \
                    and feas >= 0.99 * feas_prev:
                raise Infeasible(
                    f"penalty reached {rho:.1e} with feasibility residual {feas:.3e}")
            rho = min(rho * 10.0, rho_cap)
        feas_prev = feas
        if prog.hessian is None:
            # the composite residual lives at step ~1/L of the penalized
            # problem; scale the inner tolerance so the unit-step KKT
            # residual can reach tol_opt
            t_scale = min(res.step_size, 1.0)
            inner_tol = min(max(0.3 * tol_opt * t_scale, 1e-15),
                            0.1 * max(feas, tol_feas))

    raise MaxIterExceeded(
        f"augmented Lagrangian hit max_outer={max_outer} "
        f"(feas {feas:.3e}, kkt {kkt:.3e})", best=z, residual=max(feas, kkt))
