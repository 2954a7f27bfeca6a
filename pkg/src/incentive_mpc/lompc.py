"""Follower (lower-level MPC) models and the black-box query interface.

A follower minimizes ``base(w) + <incentive, map(w)> + <offset, w>`` over a
box of feasible input plans.  The coordinator never sees ``base``: everything
outside this module consumes only solved plans and error norms.

Members of one population group share the base objective, the box and the
incentive map; they differ only in the linear ``offset`` term.  That shared
structure lets a whole group be solved as one batched composite problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cones import ConeSpec, ConeViolation, Incentive
from .solvers import BoxSet, CompositeObjective, CompositeResult, solve_composite

LOMPC_TOL = 1e-8
LOMPC_MAX_ITER = 50000


@dataclass(frozen=True)
class IncentiveMap:
    """A cone-convex pricing map with its transposed-Jacobian action.

    value : callable
        ``w -> phi(w)`` mapping an input plan (dim ``in_dim``) to pricing
        features (dim ``out_dim``); must be convex w.r.t. ``cone``.
    vjp : callable
        ``(w, lam) -> D phi(w)^T lam`` (vector-Jacobian product).
    cone : ConeSpec
        Cone of the map's convexity; incentives live in its dual.
    jacobian_matrix : callable or None
        Optional ``w -> D phi(w)^T`` as an ``(in_dim, out_dim)`` matrix; when
        absent it is assembled column by column through ``vjp``.
    """

    value: Callable[[np.ndarray], np.ndarray]
    vjp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    cone: ConeSpec
    in_dim: int
    out_dim: int
    jacobian_matrix: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # optional exact solver for the cheapest-equivalent-incentive program,
    # for maps whose Jacobian rows decouple: (lam_star, w, c, cap) -> lam
    regularizer: Optional[Callable] = None

    def jacobian_t(self, w: np.ndarray) -> np.ndarray:
        """Dense ``D phi(w)^T`` of shape ``(in_dim, out_dim)``."""
        if self.jacobian_matrix is not None:
            return np.asarray(self.jacobian_matrix(w), dtype=float)
        cols = [self.vjp(w, e) for e in np.eye(self.out_dim)]
        return np.stack(cols, axis=-1)


def linear_incentive_map(n: int) -> IncentiveMap:
    """Plain linear pricing phi(w) = w with the zero cone (free incentives)."""
    return IncentiveMap(
        value=lambda w: np.asarray(w, dtype=float),
        vjp=lambda w, lam: np.broadcast_to(lam, np.shape(w)).astype(float),
        cone=ConeSpec("zero", n),
        in_dim=n,
        out_dim=n,
        jacobian_matrix=lambda w: np.eye(n),
    )


@dataclass(frozen=True)
class LoMPCSpec:
    """One follower's strongly convex problem in parametric form."""

    base_objective: CompositeObjective
    input_box: BoxSet
    offset: np.ndarray  # linear cost term private to this member
    strong_convexity: float
    incentive_map: IncentiveMap

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        if self.offset.shape != (self.input_box.dim,):
            raise ValueError("offset dimension does not match the input box")
        if self.strong_convexity <= 0:
            raise ValueError("strong convexity modulus must be positive")
        if self.incentive_map.in_dim != self.input_box.dim:
            raise ValueError("incentive map input dim does not match the box")


def _incentivized_objective(spec: LoMPCSpec, lam: np.ndarray,
                            offsets: np.ndarray) -> CompositeObjective:
    base = spec.base_objective
    mp = spec.incentive_map

    def smooth(w):
        val, grad = base.smooth_part(w)
        feat = mp.value(w)
        val = val + feat @ lam
        grad = grad + mp.vjp(w, lam)
        val = val + np.sum(offsets * w, axis=-1)
        grad = grad + offsets
        return val, grad

    return CompositeObjective(smooth, base.prox_part,
                              base.strong_convexity_m, base.prox_value)


def solve_member(spec: LoMPCSpec, incentive: Incentive,
                 w0: Optional[np.ndarray] = None,
                 tol: float = LOMPC_TOL) -> np.ndarray:
    """Unique minimizer of the member's incentivized cost over its box."""
    incentive.require_valid()
    obj = _incentivized_objective(spec, incentive.values, spec.offset)
    res = solve_composite(obj, spec.input_box, tol=tol, max_iter=LOMPC_MAX_ITER)
    return res.w


@dataclass
class Population:
    """A set of followers partitioned into groups that share structure.

    Within each group every member has the same base objective object, box
    and incentive map; only the linear offset differs, and its norm is
    bounded by the group's ``offset_bound`` entry.
    """

    members: Sequence[LoMPCSpec]
    groups: Sequence[Sequence[int]]
    offset_bound_per_group: Sequence[float]

    def __post_init__(self):
        seen = sorted(i for g in self.groups for i in g)
        if seen != list(range(len(self.members))):
            raise ValueError("groups must partition the member indices exactly")
        if len(self.groups) != len(self.offset_bound_per_group):
            raise ValueError("one offset bound per group is required")
        for gi, g in enumerate(self.groups):
            if not g:
                raise ValueError(f"group {gi} is empty")
            first = self.members[g[0]]
            bound = self.offset_bound_per_group[gi]
            for i in g:
                m = self.members[i]
                if (m.base_objective is not first.base_objective
                        or m.input_box is not first.input_box
                        or m.incentive_map is not first.incentive_map):
                    raise ValueError(
                        f"group {gi} members do not share base objective, "
                        f"box and incentive map")
                if np.linalg.norm(m.offset) > bound * (1 + 1e-9) + 1e-12:
                    raise ValueError(
                        f"member {i} offset norm exceeds the group bound")

    def group_spec(self, group: int) -> LoMPCSpec:
        return self.members[self.groups[group][0]]

    def group_offsets(self, group: int) -> np.ndarray:
        return np.stack([self.members[i].offset for i in self.groups[group]])


def solve_group(pop: Population, group: int, incentive: Incentive,
                w0: Optional[np.ndarray] = None,
                tol: float = LOMPC_TOL,
                lipschitz: Optional[float] = None,
                info_out: Optional[dict] = None) -> np.ndarray:
    """All member solutions of one group as a ``(members, n)`` array.

    One batched composite solve; identical results to solving each member
    separately (the objective is separable across rows).  ``lipschitz`` is
    an optional curvature hint (e.g. carried over from the previous solve of
    the same group); ``info_out`` receives solve diagnostics."""
    incentive.require_valid()
    rep = pop.group_spec(group)
    offsets = pop.group_offsets(group)
    obj = _incentivized_objective(rep, incentive.values, offsets)
    if w0 is None:
        w0 = np.broadcast_to(rep.input_box.interior_point(),
                             offsets.shape).copy()
    res = solve_composite(obj, rep.input_box, tol=tol, max_iter=LOMPC_MAX_ITER,
                          w0=w0, lipschitz=lipschitz)
    if info_out is not None:
        info_out["step_size"] = res.step_size
        info_out["iterations"] = res.iterations
        info_out["residual"] = res.residual
    return res.w


def average_response(pop: Population, group: int, incentive: Incentive,
                     w0: Optional[np.ndarray] = None,
                     tol: float = LOMPC_TOL) -> np.ndarray:
    """Arithmetic mean of the group's member solutions.

    Members are solved independently (batched) and reduced in member-index
    order, so the result is bit-stable regardless of worker layout."""
    sols = solve_group(pop, group, incentive, w0=w0, tol=tol)
    return np.add.reduce(sols, axis=0) / sols.shape[0]


def solve_representative(pop: Population, group: int, incentive: Incentive,
                         tol: float = LOMPC_TOL) -> tuple[float, np.ndarray]:
    """Optimal value and solution of the group's zero-offset problem
    ``min base(w) + <incentive, map(w)>`` (the dual-function query)."""
    incentive.require_valid()
    rep = pop.group_spec(group)
    zero = np.zeros(rep.input_box.dim)
    obj = _incentivized_objective(rep, incentive.values, zero)
    res = solve_composite(obj, rep.input_box, tol=tol, max_iter=LOMPC_MAX_ITER)
    w = res.w
    val, _ = obj.smooth_part(w)
    if obj.prox_value is not None:
        val = val + obj.prox_value(w)
    return float(val), w


def soc_offset_vector(y0_member: float, y0_center: float, delta: float,
                      capacity: float, horizon: int) -> np.ndarray:
    """Linear cost offset of a member whose state of charge differs from the
    group center: ``2 * delta * capacity^2 * (center - member)`` in every
    coordinate."""
    return np.full(horizon, 2.0 * delta * capacity ** 2 * (y0_center - y0_member))


def offset_bound(delta: float, capacity: float, dy0: float, horizon: int) -> float:
    """Worst-case offset norm for a group whose SoCs span ``2 * dy0``:
    ``2 * delta * capacity^2 * dy0 * sqrt(horizon)``."""
    if min(delta, capacity, dy0, horizon) < 0:
        raise ValueError("all inputs must be nonnegative")
    return 2.0 * delta * capacity ** 2 * dy0 * math.sqrt(horizon)
