"""Computing optimal incentives by querying followers as black boxes.

The coordinator wants the follower response to match a target plan.  With
plain linear pricing this is dual ascent with the strong-convexity modulus
as the step size; with cone-constrained pricing maps each step minimizes a
regularized quadratic surrogate of the dual cost over the dual cone
(majorization-minimization).  Neither method reads the follower cost: both
consume only (response, error) pairs from solves at trial incentives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cones import ConeSpec, Incentive
from .lompc import IncentiveMap, Population, average_response, solve_group, \
    solve_representative
from .solvers import BoxSet, CompositeObjective, MaxIterExceeded, \
    PolytopeProgram, solve_composite, solve_polytope_full

LAMBDA_CAP_DEFAULT = 1e6


def ascent_step(lambda_k: np.ndarray, w_k: np.ndarray, w_target: np.ndarray,
                m: float) -> np.ndarray:
    """One dual-ascent step for linear pricing:
    ``lambda + m * (response - target)``."""
    lambda_k = np.asarray(lambda_k, dtype=float)
    w_k = np.asarray(w_k, dtype=float)
    w_target = np.asarray(w_target, dtype=float)
    if not lambda_k.shape == w_k.shape == w_target.shape:
        raise ValueError("ascent step requires equal dimensions")
    return lambda_k + m * (w_k - w_target)


@dataclass
class SurrogateState:
    """State of one majorization-minimization iteration.

    ``w_k`` is the (group-average) response at ``lambda_k``; ``lambda_next``
    is filled by the update; the decrease fields are filled by the audit.
    """

    lambda_k: np.ndarray
    w_k: np.ndarray
    w_target: np.ndarray
    eps_k: float
    lambda_next: Optional[np.ndarray] = None
    surrogate_decrease: float = float("nan")
    actual_decrease: float = float("nan")

    def __post_init__(self):
        if self.eps_k <= 0:
            raise ValueError("regularization weight must be positive")


def mm_lambda_update(state: SurrogateState, incentive_map: IncentiveMap,
                     m: float, cap: float = LAMBDA_CAP_DEFAULT,
                     tol: float = 1e-10) -> tuple[np.ndarray, bool]:
    """Minimize the regularized quadratic surrogate over the dual cone.

    Solves, in the step ``d = lambda - lambda_k``::

        min_d  eps*||d||^2 + <d, phi(target) - phi(w_k)>
               + ||Dphi(w_k)^T d||^2 / (2 m)
        s.t.   lambda_k + d in dual cone,  |lambda_k + d| <= cap

    Returns the new incentive vector and whether the safety cap is active
    (the boundedness hypothesis of the convergence theory made checkable).
    """
    lam0 = np.asarray(state.lambda_k, dtype=float)
    eps = state.eps_k
    Jt = incentive_map.jacobian_t(state.w_k)  # (in_dim, out_dim)
    b = incentive_map.value(state.w_target) - incentive_map.value(state.w_k)

    def smooth(d):
        Jd = d @ Jt.T  # rows: Jt @ d
        val = eps * np.sum(d * d, axis=-1) + d @ b \
            + np.sum(Jd * Jd, axis=-1) / (2.0 * m)
        grad = 2.0 * eps * d + b + (Jd @ Jt) / m
        return val, grad

    lo, hi = incentive_map.cone.dual_box(lam0, cap)
    curvature = 2.0 * eps + np.linalg.norm(Jt, 2) ** 2 / m
    res = solve_composite(CompositeObjective(smooth, strong_convexity_m=2 * eps),
                          BoxSet(lo, hi), tol=tol, max_iter=20000,
                          w0=np.zeros_like(lam0), lipschitz=curvature)
    lam_new = incentive_map.cone.project_dual(lam0 + res.w)
    cap_hit = bool(np.any(np.abs(lam_new) >= cap * (1 - 1e-9)))
    return lam_new, cap_hit


@dataclass
class AuditRecord:
    lhs: float
    rhs: float
    ok: bool
    actual_decrease: float
    surrogate_decrease: float


def dual_decrease_audit(state: SurrogateState,
                        gbar_at: Callable[[np.ndarray], tuple[float, np.ndarray]],
                        incentive_map: IncentiveMap, m: float,
                        slack: float = 1e-8) -> AuditRecord:
    """Check the guaranteed dual-cost decrease of one surrogate step.

    ``gbar_at`` evaluates the dual function: one zero-offset follower solve
    returning (optimal value, solution).  With ``gt(lam) = gbar(lam) -
    <lam, phi(target)>``, the audit verifies::

        gt(lam_k) - gt(lam_next) <= -gt(lam_next; lam_k) + gt(lam_k; lam_k)
                                    + eps * ||lam_next - lam_k||^2

    where ``gt(.; lam_k)`` is the quadratic surrogate anchored at the
    follower's own response at ``lam_k``.  The record also carries the
    (actual, surrogate) dual-cost decrease pair; the actual decrease
    dominates the surrogate decrease whenever the surrogate majorizes.
    """
    if state.lambda_next is None:
        raise ValueError("audit requires lambda_next")
    lam_k = np.asarray(state.lambda_k, dtype=float)
    lam_n = np.asarray(state.lambda_next, dtype=float)
    phi_t = incentive_map.value(state.w_target)

    v_k, w_rep = gbar_at(lam_k)
    v_n, _ = gbar_at(lam_n)
    gt_k = v_k - float(lam_k @ phi_t)
    gt_n = v_n - float(lam_n @ phi_t)

    d = lam_n - lam_k
    Jt = incentive_map.jacobian_t(w_rep)
    quad = float(np.sum((Jt @ d) ** 2)) / (2.0 * m)
    # surrogate value of gt at lam_next, anchored at (lam_k, w_rep)
    gt_sur_n = v_k + float(d @ incentive_map.value(w_rep)) - quad \
        - float(lam_n @ phi_t)

    lhs = gt_k - gt_n
    rhs = -gt_sur_n + gt_k + state.eps_k * float(d @ d)
    scale = 1.0 + abs(gt_k)
    ok = lhs <= rhs + slack * scale

    actual = gt_n - gt_k          # decrease of the dual cost -gt
    surrogate = gt_sur_n - gt_k   # decrease of the majorizing model
    state.actual_decrease = actual
    state.surrogate_decrease = surrogate
    return AuditRecord(lhs, rhs, ok, actual, surrogate)


@dataclass
class IncentiveResult:
    incentive: Incentive
    w: np.ndarray
    err_history: np.ndarray
    audits: list[AuditRecord] = field(default_factory=list)


def iterate_incentive(query: Callable[[np.ndarray], np.ndarray],
                      incentive_map: IncentiveMap, m: float,
                      w_target: np.ndarray, bound: float, eps_tol: float,
                      lambda_ws: Optional[np.ndarray] = None,
                      max_iter: int = 200,
                      eps_weight: Optional[float] = None,
                      cap: float = LAMBDA_CAP_DEFAULT,
                      first_step_band: Optional[float] = None,
                      first_step_dims: int = 1,
                      gbar_at: Optional[Callable] = None) -> IncentiveResult:
    """Iterate surrogate steps until the response error meets the bound.

    Terminates when ``||target - response|| <= bound + eps_tol`` (and, when
    ``first_step_band`` is given, the first-input error also sits inside its
    band, so a receding-horizon caller can apply the first input safely).
    ``query`` maps an incentive vector to the group-average response.
    Audits run only when ``gbar_at`` is supplied (one extra follower solve
    per iteration).  On a blown budget the best iterate is returned with
    ``converged=False`` and the error trajectory as diagnostics.
    """
    cone = incentive_map.cone
    if eps_weight is None:
        eps_weight = 0.01 * m
    lam = cone.project_dual(np.zeros(cone.dim) if lambda_ws is None
                            else np.asarray(lambda_ws, dtype=float))

    def errors(w):
        full = float(np.linalg.norm(w_target - w))
        first = float(np.linalg.norm(w_target[:first_step_dims]
                                     - w[:first_step_dims]))
        return full, first

    def done(full, first):
        if full > bound + eps_tol:
            return False
        return first_step_band is None or first <= first_step_band

    w = query(lam)
    err, err0 = errors(w)
    errs = [err]
    audits: list[AuditRecord] = []
    best = (err, lam.copy(), w.copy())
    cap_hit = False
    iterations = 0
    converged = True

    while not done(err, err0):
        if iterations >= max_iter:
            converged = False
            break
        state = SurrogateState(lam, w, w_target, eps_weight)
        lam_next, hit = mm_lambda_update(state, incentive_map, m, cap=cap)
        cap_hit = cap_hit or hit
        state.lambda_next = lam_next
        if gbar_at is not None:
            audits.append(dual_decrease_audit(state, gbar_at, incentive_map, m))
        lam = lam_next
        w = query(lam)
        err, err0 = errors(w)
        errs.append(err)
        iterations += 1
        if err < best[0]:
            best = (err, lam.copy(), w.copy())

    if not converged:
        err, lam, w = best
        err0 = errors(w)[1]
    inc = Incentive(lam, cone, iterations=iterations, final_err=err,
                    converged=converged, cap_hit=cap_hit)
    return IncentiveResult(inc, w, np.asarray(errs), audits)


def solve_optimal_incentive(pop: Population, group: int, w_target: np.ndarray,
                            offset_bound_over_m: float, eps_tol: float,
                            lambda_ws: Optional[Incentive] = None,
                            max_iter: int = 200,
                            audit: bool = False,
                            first_step_band: Optional[float] = None,
                            cap: float = LAMBDA_CAP_DEFAULT,
                            step_modulus: Optional[float] = None
                            ) -> tuple[Incentive, np.ndarray, IncentiveResult]:
    """Optimal incentive for one population group toward a target plan.

    Queries the group only through its average response; the returned
    incentive carries iteration count and final error, and the group
    average at that incentive satisfies
    ``||target - average|| <= offset_bound_over_m + eps_tol``.

    ``step_modulus`` may pass a certified strong-convexity modulus larger
    than the group's advertised one; the surrogate steps then take bigger
    strides while the majorization (and so every guarantee) stays valid.
    Error bounds always use the advertised modulus.
    """
    rep = pop.group_spec(group)
    mp = rep.incentive_map
    m = rep.strong_convexity if step_modulus is None \
        else max(step_modulus, rep.strong_convexity)
    warm_batch: dict = {}

    def query(lam_vec):
        inc = Incentive(lam_vec, mp.cone)
        info: dict = {}
        sols = solve_group(pop, group, inc, w0=warm_batch.get("w"),
                           lipschitz=warm_batch.get("L"), info_out=info)
        warm_batch["w"] = sols
        # 1/(1.1 t) makes the next solve start at this solve's final step
        warm_batch["L"] = 1.0 / (1.1 * info["step_size"])
        return np.add.reduce(sols, axis=0) / sols.shape[0]

    gbar = None
    if audit:
        def gbar(lam_vec):
            return solve_representative(pop, group, Incentive(lam_vec, mp.cone))

    res = iterate_incentive(
        query, mp, m, np.asarray(w_target, dtype=float), offset_bound_over_m,
        eps_tol, lambda_ws=None if lambda_ws is None else lambda_ws.values,
        max_iter=max_iter, cap=cap, first_step_band=first_step_band,
        gbar_at=gbar)
    return res.incentive, res.w, res


def regularize_incentive(incentive_star: Incentive, w_at_lambda: np.ndarray,
                         incentive_map: IncentiveMap, c: np.ndarray,
                         lambda_box_cap: float = LAMBDA_CAP_DEFAULT,
                         tol_feas: float = 1e-8,
                         tol_opt: float = 1e-4) -> Incentive:
    """Cheapest incentive on the optimal set through ``lambda_star``.

    Minimizes ``<lambda, c>`` over the dual cone subject to
    ``Dphi(w)^T (lambda - lambda_star) = 0`` and a coordinatewise cap; any
    feasible point leaves the follower response unchanged, so the result is
    as optimal as the input.  With ``c = 0`` the anchor itself is returned.

    Response preservation rides on equality feasibility alone, so the linear
    objective is solved to a loose optimality tolerance; a candidate that is
    infeasible or more expensive than the anchor is discarded for the anchor.
    """
    incentive_star.require_valid()
    lam_star = incentive_star.values
    c = np.asarray(c, dtype=float)
    if not np.any(c):
        out = Incentive(lam_star.copy(), incentive_star.cone,
                        iterations=incentive_star.iterations,
                        final_err=incentive_star.final_err,
                        converged=incentive_star.converged,
                        cap_hit=incentive_star.cap_hit)
        return out

    Jt = incentive_map.jacobian_t(w_at_lambda)  # (in_dim, out_dim)
    b_eq = Jt @ lam_star

    if incentive_map.regularizer is not None:
        lam_bar = np.asarray(
            incentive_map.regularizer(lam_star, w_at_lambda, c, lambda_box_cap),
            dtype=float)
    else:
        lo, hi = incentive_map.cone.dual_box(np.zeros_like(lam_star),
                                             lambda_box_cap)
        # row-normalize the equality block and the cost so the tolerances
        # below are geometric; a small proximal anchor removes the linear
        # program's flat optimal faces and biases ties toward the anchor
        row_n = np.linalg.norm(Jt, axis=1)
        keep = row_n > 1e-14
        A_n = Jt[keep] / row_n[keep, None]
        b_n = b_eq[keep] / row_n[keep]
        c_n = c / (1.0 + float(np.max(np.abs(c))))
        sigma = 1e-6 / (1.0 + float(np.max(np.abs(lam_star))))

        def objective(lam):
            d = lam - lam_star
            return float(lam @ c_n) + sigma * float(d @ d), \
                c_n + 2.0 * sigma * d

        prog = PolytopeProgram(objective, BoxSet(lo, hi), eq_A=A_n, eq_b=b_n)
        try:
            res = solve_polytope_full(prog, tol_feas=tol_feas, tol_opt=tol_opt,
                                      max_outer=30, inner_max_iter=4000,
                                      z0=lam_star)
            lam_bar = res.z
        except (MaxIterExceeded,) as exc:
            lam_bar = exc.best if exc.best is not None else lam_star
        lam_bar = np.clip(lam_bar, lo, hi)

    lam_bar = incentive_map.cone.project_dual(lam_bar)
    scale_b = 1.0 + float(np.max(np.abs(b_eq)))
    feas = float(np.max(np.abs(Jt @ lam_bar - b_eq))) if lam_bar.size else 0.0
    cost_scale = 1.0 + abs(float(lam_star @ c))
    # the anchor is always feasible; never return something infeasible or
    # more expensive
    if feas > 1e-6 * scale_b or \
            float(lam_bar @ c) > float(lam_star @ c) + 1e-9 * cost_scale:
        lam_bar = lam_star.copy()
    cap_hit = bool(np.any(np.abs(lam_bar) >= lambda_box_cap * (1 - 1e-9)))
    return Incentive(lam_bar, incentive_star.cone,
                     iterations=incentive_star.iterations,
                     final_err=incentive_star.final_err,
                     converged=incentive_star.converged,
                     cap_hit=incentive_star.cap_hit or cap_hit)
