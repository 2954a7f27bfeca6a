"""Robustly tightened team-optimal problem for the coordinator.

The coordinator plans upper-level inputs and a desired average follower
response per group.  Realized responses deviate from the plan by at most a
known radius per group, so every polytopic constraint row is tightened by
``radius * ||row x disturbance-map||`` (Euclidean, self-dual) restricted to
the robustness horizon.  A plan feasible for the tightened problem stays
feasible under any admissible response error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .solvers import BoxSet, Infeasible, MaxIterExceeded, PolytopeProgram, \
    solve_polytope_full


@dataclass(frozen=True)
class BatchDynamics:
    """Stacked-horizon form of ``x+ = A x + B1 u + B2 w``:
    ``x_traj = A_bar x0 + B1_bar u + B2_bar w`` with the initial state as
    the first block row."""

    A_bar: np.ndarray
    B1_bar: np.ndarray
    B2_bar: np.ndarray
    horizon: int

    @property
    def state_dim(self) -> int:
        return self.A_bar.shape[1]

    def trajectory(self, x0, u, w) -> np.ndarray:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return self.A_bar @ x0 + self.B1_bar @ np.ravel(u) + self.B2_bar @ np.ravel(w)


def build_batch(A, B1, B2, N: int) -> BatchDynamics:
    """Block-Toeplitz batch matrices over ``N`` steps."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    B2 = np.atleast_2d(np.asarray(B2, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or B1.shape[0] != n or B2.shape[0] != n:
        raise ValueError("dynamics matrices have inconsistent shapes")
    p, g = B1.shape[1], B2.shape[1]

    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])

    A_bar = np.vstack(powers)
    B1_bar = np.zeros((n * (N + 1), p * N))
    B2_bar = np.zeros((n * (N + 1), g * N))
    for k in range(1, N + 1):
        for j in range(k):
            blk = powers[k - 1 - j]
            B1_bar[k * n:(k + 1) * n, j * p:(j + 1) * p] = blk @ B1
            B2_bar[k * n:(k + 1) * n, j * g:(j + 1) * g] = blk @ B2
    return BatchDynamics(A_bar, B1_bar, B2_bar, N)


@dataclass(frozen=True)
class TightenedPolytope:
    """Rows ``C x <= d`` shrunk by ``tightening`` to absorb bounded
    disturbances entering through a known map."""

    C: np.ndarray
    d: np.ndarray
    radius: float
    tightening: np.ndarray

    @property
    def d_eff(self) -> np.ndarray:
        return self.d - self.tightening

    def margins(self, x: np.ndarray, tightened: bool = True) -> np.ndarray:
        rhs = self.d_eff if tightened else self.d
        return rhs - self.C @ x


def tighten(C, d, B2_bar, radius: float, horizon_r: int,
            gamma_dim: int) -> TightenedPolytope:
    """Per-row tightening ``radius * ||C_j B2_bar||`` using only the
    disturbance columns of the first ``horizon_r`` time steps."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    B2_bar = np.asarray(B2_bar, dtype=float)
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    cols = min(horizon_r * gamma_dim, B2_bar.shape[1])
    rows = C @ B2_bar[:, :cols]
    tightening = radius * np.linalg.norm(rows, axis=1)
    return TightenedPolytope(C, d, radius, tightening)


def total_radius(groups: Sequence[tuple[float, float, float]], N: int) -> float:
    """Aggregate first-step consumption-error radius over groups given as
    ``(member_count, capacity, soc_halfrange)`` triples:
    ``sum_g count * capacity * sqrt(N) * soc_halfrange``."""
    total = 0.0
    for count, capacity, dy0 in groups:
        if min(count, capacity, dy0) < 0:
            raise ValueError("group entries must be nonnegative")
        total += count * capacity * math.sqrt(N) * dy0
    return total


@dataclass
class RobustBiMPCSpec:
    """Tightened coordinator problem over ``z = (u, w_hat per group)``.

    ``state_rows`` are polytope rows over the batch state trajectory and are
    already tightened; ``disturbance_maps`` records, per group, the batch
    map from that group's response error to the state trajectory (used by
    audits).  ``cost`` maps ``z`` to (value, gradient).
    """

    dynamics: BatchDynamics
    state_rows: TightenedPolytope
    input_box_u: BoxSet
    input_box_w: Sequence[BoxSet]
    cost: Callable[[np.ndarray], tuple[float, np.ndarray]]
    horizon_r: int
    affine_offset: np.ndarray  # constant term of the state trajectory
    group_B2: Sequence[np.ndarray]
    cost_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.horizon_r < 1:
            raise ValueError("robustness horizon must be at least 1")

    @property
    def n_u(self) -> int:
        return self.input_box_u.dim

    @property
    def group_dims(self) -> list[int]:
        return [b.dim for b in self.input_box_w]

    @property
    def z_dim(self) -> int:
        return self.n_u + sum(self.group_dims)

    def z_box(self) -> BoxSet:
        lows = [self.input_box_u.lower] + [b.lower for b in self.input_box_w]
        highs = [self.input_box_u.upper] + [b.upper for b in self.input_box_w]
        return BoxSet(np.concatenate(lows), np.concatenate(highs))

    def split(self, z: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        u = z[: self.n_u]
        parts, at = [], self.n_u
        for dim in self.group_dims:
            parts.append(z[at: at + dim])
            at += dim
        return u, parts

    def state_of(self, x0, z: np.ndarray) -> np.ndarray:
        u, ws = self.split(z)
        x = self.dynamics.A_bar @ np.atleast_1d(np.asarray(x0, dtype=float))
        x = x + self.dynamics.B1_bar @ u + self.affine_offset
        for B2g, wg in zip(self.group_B2, ws):
            x = x + B2g @ wg
        return x


def assemble_program(spec: RobustBiMPCSpec, x0) -> PolytopeProgram:
    """Tightened state rows rewritten over the stacked decision vector."""
    dyn = spec.dynamics
    C = spec.state_rows.C
    blocks = [C @ dyn.B1_bar] + [C @ B2g for B2g in spec.group_B2]
    ineq_C = np.hstack(blocks)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    ineq_d = spec.state_rows.d_eff - C @ (dyn.A_bar @ x0 + spec.affine_offset)
    return PolytopeProgram(spec.cost, spec.z_box(), ineq_C=ineq_C, ineq_d=ineq_d,
                           hessian=spec.cost_hessian)


@dataclass
class CertificateReport:
    feasible: bool
    violated: Optional[str]
    witness: Optional[dict]


def feasibility_certificate(spec: RobustBiMPCSpec, x0, demand: np.ndarray,
                            delta: float, u_b_max: float,
                            x_max: float) -> CertificateReport:
    """Closed-form feasibility check with an explicit witness.

    The witness holds the storage flat (net exchange zero) by generating
    exactly the external demand and planning zero follower consumption; it
    exists whenever the aggregate radius fits inside the storage and
    exchange bounds and the demand fits under the generation cap.
    """
    demand = np.asarray(demand, dtype=float)
    x0 = float(np.atleast_1d(np.asarray(x0, dtype=float))[0])
    if delta > u_b_max:
        return CertificateReport(False, "radius exceeds max storage exchange", None)
    if 2 * delta > x_max:
        return CertificateReport(False, "twice the radius exceeds storage capacity", None)
    if not (delta <= x0 <= x_max - delta):
        return CertificateReport(False, "initial storage outside tightened range", None)
    lo_u, hi_u = spec.input_box_u.lower, spec.input_box_u.upper
    if np.any(demand < lo_u - 1e-12) or np.any(demand > hi_u + 1e-12):
        return CertificateReport(False, "demand outside the generation bounds", None)
    witness = {
        "u": demand.copy(),
        "w_hat": [np.zeros(b.dim) for b in spec.input_box_w],
        "storage_exchange": np.zeros(demand.shape[0]),
    }
    return CertificateReport(True, None, witness)


@dataclass
class TeamOptimalPlan:
    u: np.ndarray
    w_hat: list[np.ndarray]
    predicted_x: np.ndarray
    kkt_residual: float
    feas_residual: float
    solver_state: object = None  # pass back in as `warm` for the next solve


def solve_team_optimal(spec: RobustBiMPCSpec, x0,
                       tol_feas: float = 1e-7, tol_opt: float = 1e-6,
                       z0: Optional[np.ndarray] = None,
                       warm=None) -> TeamOptimalPlan:
    """Solve the tightened coordinator problem.

    A convex program, so the returned plan is globally optimal to tolerance.
    A solver-tolerance infeasibility (after the certificate passed) is
    retried once at 10x relaxed tolerances, then raised.
    """
    prog = assemble_program(spec, x0)
    if warm is not None and (warm.z.shape[0] != spec.z_dim or
                             warm.ineq_mult is None or
                             warm.ineq_mult.shape[0] != prog.ineq_d.shape[0]):
        warm = None
    try:
        res = solve_polytope_full(prog, tol_feas=tol_feas, tol_opt=tol_opt,
                                  z0=z0, warm=warm)
    except (Infeasible, MaxIterExceeded):
        res = solve_polytope_full(prog, tol_feas=10 * tol_feas,
                                  tol_opt=10 * tol_opt, z0=z0, max_outer=80)
    u, ws = spec.split(res.z)
    x = spec.state_of(x0, res.z)
    return TeamOptimalPlan(u, ws, x, res.kkt_residual, res.feas_residual, res)
