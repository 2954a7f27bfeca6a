"""Closed-loop orchestration: plan, price, query followers, apply, record.

Each time step: partition the fleet by current SoC, certify feasibility,
solve the tightened coordinator problem, compute one incentive per group by
querying that group's followers, apply the first inputs through the energy
balance, and append a complete record to the trace.  A finished trace can be
re-audited independently of the in-loop flags and serialized to one CSV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .bimpc import feasibility_certificate, solve_team_optimal
from .cones import Incentive
from .ev import PlanProblem, ScenarioConfig, build_bimpc, \
    build_ev_incentive_map, build_ev_base_objective, build_group_population, \
    certified_step_modulus, make_plan_groups, scenario_demand
from .incentives import regularize_incentive, solve_optimal_incentive
from .lompc import solve_group
from .solvers import BoxSet


class InfeasibleStep(RuntimeError):
    """The feasibility certificate failed at a simulation step."""


@dataclass
class SystemState:
    x_kwh: float
    socs: list[np.ndarray]  # per class, current normalized SoCs
    t: int


@dataclass
class GroupStepRecord:
    class_index: int
    center: float
    count: int
    band: float
    w_hat: np.ndarray
    w_real: np.ndarray
    incentive: np.ndarray
    iterations: int
    final_err: float
    first_step_err: float
    converged: bool
    cap_hit: bool


@dataclass
class StepRecord:
    t: int
    x_kwh: float
    demand_kwh: float
    delta_kwh: float
    u_g_plan_kwh: np.ndarray
    x_pred_kwh: np.ndarray
    u_b_real_kwh: float
    consumption_real_kwh: float
    x_next_kwh: float
    groups: list[GroupStepRecord]
    socs: list[np.ndarray]
    full_charged: list[int]
    flags: list[str]


@dataclass
class ClosedLoopTrace:
    config: ScenarioConfig
    seed: int
    records: list[StepRecord] = field(default_factory=list)
    initial_socs: list[np.ndarray] = field(default_factory=list)
    initial_x_kwh: float = 0.0
    final_state: Optional[SystemState] = None

    @property
    def flagged(self) -> bool:
        return any(r.flags for r in self.records)

    def full_charge_totals(self) -> list[int]:
        n_classes = len(self.config.classes)
        totals = [0] * n_classes
        for r in self.records:
            for ci in range(n_classes):
                totals[ci] += r.full_charged[ci]
        return totals

    def iteration_stats(self) -> list[dict]:
        """Mean and max incentive-solver iterations per class."""
        out = []
        for ci in range(len(self.config.classes)):
            its = [g.iterations for r in self.records for g in r.groups
                   if g.class_index == ci]
            out.append({
                "mean": float(np.mean(its)) if its else 0.0,
                "max": int(max(its)) if its else 0,
                "solves": len(its),
            })
        return out


class Simulator:
    """Holds the immutable scenario plus the mutable run state (RNG and
    warm starts).  One simulator drives one run."""

    def __init__(self, config: ScenarioConfig, seed: Optional[int] = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.demand = scenario_demand(config)
        N = config.horizon
        self.shared = []
        for cls in config.classes:
            mapper = build_ev_incentive_map(cls, N)
            box = BoxSet(np.zeros(N), np.full(N, cls.w_max))
            self.shared.append((mapper, box))
        self.rng = np.random.default_rng(self.seed)
        # per class: list of (group center, incentive) from the previous step
        self._lambda_ws: list[list] = [[] for _ in config.classes]
        self._step_modulus = [certified_step_modulus(cls, N)
                              for cls in config.classes]
        self._bimpc_warm = None

    def initial_state(self) -> SystemState:
        cfg = self.config
        socs = [self.rng.uniform(cfg.soc_init_low, cfg.soc_init_high, cls.count)
                for cls in cfg.classes]
        return SystemState(cfg.x_init_frac * cfg.fleet_capacity_kwh, socs, 0)

    def step(self, state: SystemState) -> tuple[SystemState, StepRecord]:
        cfg = self.config
        N = cfg.horizon
        B = cfg.fleet_capacity_kwh
        flags: list[str] = []

        infos, parts, class_of = make_plan_groups(cfg, state.socs)
        demand_window = self.demand.window(state.t, N)
        problem: PlanProblem = build_bimpc(cfg, infos, state.x_kwh, demand_window)

        margin = cfg.recursive_margin_kwh()
        cert = feasibility_certificate(
            problem.spec, (state.x_kwh - margin) / B, demand_window / B,
            problem.delta_kwh / B, cfg.u_b_max_frac,
            (cfg.x_max_frac * B - 2 * margin) / B)
        if not cert.feasible:
            raise InfeasibleStep(
                f"step {state.t}: infeasible plan ({cert.violated})")

        plan = solve_team_optimal(problem.spec, state.x_kwh / B,
                                  tol_feas=1e-7, tol_opt=1e-6,
                                  warm=self._bimpc_warm)
        self._bimpc_warm = plan.solver_state
        u_g_kwh = plan.u * B
        x_pred_kwh = plan.predicted_x * B

        group_records: list[GroupStepRecord] = []
        consumption0 = 0.0
        next_socs = [s.copy() for s in state.socs]
        new_ws: list[list] = [[] for _ in cfg.classes]
        for gi, (info, pg) in enumerate(zip(infos, parts)):
            ci = info.class_index
            cls = cfg.classes[ci]
            mapper, box = self.shared[ci]
            base = build_ev_base_objective(cls, pg.center, N)
            pop = build_group_population(cfg, ci, state.socs[ci], pg,
                                         (base, box, mapper))
            target = plan.w_hat[gi]
            # warm start from the previous step's nearest group center,
            # shifted by one step to follow the receding horizon
            warm = None
            if self._lambda_ws[ci]:
                prev = min(self._lambda_ws[ci],
                           key=lambda cw: abs(cw[0] - pg.center))[1]
                vals = prev.values.reshape(3, N)
                shifted = np.concatenate(
                    [vals[:, 1:], vals[:, -1:]], axis=1).ravel()
                warm = Incentive(shifted, prev.cone)
            inc, w_avg, res = solve_optimal_incentive(
                pop, 0, target, info.band, cfg.eps_tol,
                lambda_ws=warm, max_iter=cfg.max_incentive_iter,
                audit=cfg.audit, first_step_band=info.band if info.band > 0
                else None, cap=cfg.lambda_cap,
                step_modulus=self._step_modulus[ci])
            if not inc.converged:
                flags.append(f"t={state.t} group={gi}: incentive solver "
                             f"stopped at err={inc.final_err:.3e}")
            if inc.cap_hit:
                flags.append(f"t={state.t} group={gi}: incentive cap active")

            members_w = None
            if cfg.regularize:
                reg = regularize_incentive(inc, w_avg, mapper,
                                           c=mapper.value(w_avg),
                                           lambda_box_cap=cfg.lambda_cap)
                cand = solve_group(pop, 0, reg)
                cand_avg = np.add.reduce(cand, axis=0) / cand.shape[0]
                err_full = float(np.linalg.norm(target - cand_avg))
                err0 = abs(float(target[0] - cand_avg[0]))
                if err_full <= info.band + cfg.eps_tol and \
                        (info.band == 0.0 or err0 <= info.band):
                    inc, w_avg, members_w = reg, cand_avg, cand
                else:
                    flags.append(f"t={state.t} group={gi}: regularized "
                                 f"incentive rejected, keeping iterate")
            if members_w is None:
                members_w = solve_group(pop, 0, inc)
                w_avg = np.add.reduce(members_w, axis=0) / members_w.shape[0]
            new_ws[ci].append((pg.center, inc))

            first_err = abs(float(target[0] - w_avg[0]))
            consumption0 += info.weight_kwh * float(w_avg[0])
            next_socs[ci][pg.indices] += members_w[:, 0]
            group_records.append(GroupStepRecord(
                class_index=ci, center=pg.center, count=info.count,
                band=info.band, w_hat=target.copy(), w_real=w_avg.copy(),
                incentive=inc.values.copy(), iterations=inc.iterations,
                final_err=inc.final_err, first_step_err=first_err,
                converged=inc.converged, cap_hit=inc.cap_hit))

        d0 = float(demand_window[0])
        u_b_real = float(u_g_kwh[0]) - d0 - consumption0
        x_next = state.x_kwh + u_b_real

        full_charged = []
        for ci, cls in enumerate(cfg.classes):
            done = next_socs[ci] >= cls.y_max - 1e-12
            n_done = int(np.count_nonzero(done))
            full_charged.append(n_done)
            if n_done:
                next_socs[ci][done] = self.rng.uniform(
                    cfg.soc_init_low, cfg.soc_init_high, n_done)

        self._lambda_ws = new_ws
        record = StepRecord(
            t=state.t, x_kwh=state.x_kwh, demand_kwh=d0,
            delta_kwh=problem.delta_kwh, u_g_plan_kwh=u_g_kwh,
            x_pred_kwh=x_pred_kwh, u_b_real_kwh=u_b_real,
            consumption_real_kwh=consumption0, x_next_kwh=x_next,
            groups=group_records,
            socs=[s.copy() for s in state.socs],
            full_charged=full_charged, flags=flags)
        new_state = SystemState(x_next, next_socs, state.t + 1)
        return new_state, record


def run(config: ScenarioConfig, steps: Optional[int] = None,
        seed: Optional[int] = None) -> ClosedLoopTrace:
    """Deterministic closed-loop run: a pure function of (config, seed)."""
    sim = Simulator(config, seed=seed)
    n_steps = config.steps if steps is None else steps
    state = sim.initial_state()
    trace = ClosedLoopTrace(config=config, seed=sim.seed,
                            initial_socs=[s.copy() for s in state.socs],
                            initial_x_kwh=state.x_kwh)
    for _ in range(n_steps):
        state, record = sim.step(state)
        trace.records.append(record)
    trace.final_state = state
    return trace


@dataclass
class AuditReport:
    violations: list[str]
    min_storage_margin_kwh: float
    min_exchange_margin_kwh: float
    min_generation_margin_kwh: float
    max_balance_residual_kwh: float
    min_first_step_margin: float

    @property
    def passed(self) -> bool:
        return not self.violations


def audit_trace(trace: ClosedLoopTrace, config: Optional[ScenarioConfig] = None,
                balance_tol_frac: float = 1e-9) -> AuditReport:
    """Recompute every closed-loop invariant from the raw trace, independent
    of the flags recorded during the run."""
    cfg = trace.config if config is None else config
    B = cfg.fleet_capacity_kwh
    x_max = cfg.x_max_frac * B
    u_b_max = cfg.u_b_max_frac * B
    u_g_max = cfg.u_g_max_frac * B
    bal_tol = balance_tol_frac * B

    violations: list[str] = []
    sto_m, exch_m, gen_m, bal_r, band_m = [np.inf], [np.inf], [np.inf], [0.0], [np.inf]

    prev_next = None
    for r in trace.records:
        if prev_next is not None and abs(r.x_kwh - prev_next) > 1e-9 * max(B, 1):
            violations.append(f"t={r.t}: state does not chain from previous step")
        prev_next = r.x_next_kwh

        for label, x in (("start", r.x_kwh), ("next", r.x_next_kwh)):
            sto_m.append(min(x, x_max - x))
            if x < -1e-9 or x > x_max + 1e-9:
                violations.append(f"t={r.t}: storage ({label}) out of bounds")

        exch_m.append(u_b_max - abs(r.u_b_real_kwh))
        if abs(r.u_b_real_kwh) > u_b_max + 1e-9:
            violations.append(f"t={r.t}: storage exchange out of bounds")

        gen_m.append(float(np.min(np.minimum(r.u_g_plan_kwh,
                                             u_g_max - r.u_g_plan_kwh))))
        if np.any(r.u_g_plan_kwh < -1e-9) or np.any(r.u_g_plan_kwh > u_g_max + 1e-9):
            violations.append(f"t={r.t}: generation plan out of bounds")

        cons = sum(g.count * cfg.classes[g.class_index].capacity_kwh
                   * float(g.w_real[0]) for g in r.groups)
        resid = abs(r.u_g_plan_kwh[0] - r.demand_kwh - cons - r.u_b_real_kwh)
        bal_r.append(resid)
        if resid > bal_tol:
            violations.append(f"t={r.t}: energy balance residual {resid:.3e} kWh")

        if abs(r.x_next_kwh - (r.x_kwh + r.u_b_real_kwh)) > bal_tol:
            violations.append(f"t={r.t}: storage update inconsistent")

        # receding-horizon consistency: predicted next storage differs from
        # the realized one by the first-step consumption error only
        err_kwh = sum(g.count * cfg.classes[g.class_index].capacity_kwh
                      * abs(float(g.w_hat[0] - g.w_real[0])) for g in r.groups)
        if abs(r.x_pred_kwh[1] - r.x_next_kwh) > err_kwh + bal_tol:
            violations.append(f"t={r.t}: predicted state outside the error band")

        for gi, g in enumerate(r.groups):
            margin = g.band - g.first_step_err
            band_m.append(margin)
            if g.band > 0 and margin < -1e-12:
                violations.append(
                    f"t={r.t} group={gi}: first-step error {g.first_step_err:.3e} "
                    f"exceeds band {g.band:.3e}")
            cls = cfg.classes[g.class_index]
            if np.any(g.w_real < -1e-9) or np.any(g.w_real > cls.w_max + 1e-9):
                violations.append(f"t={r.t} group={gi}: response outside box")

        for ci, socs in enumerate(r.socs):
            if np.any(socs < -1e-9) or np.any(socs > cfg.classes[ci].y_max + 1e-9):
                violations.append(f"t={r.t}: class {ci} SoC out of range")

    return AuditReport(
        violations=violations,
        min_storage_margin_kwh=float(min(sto_m)),
        min_exchange_margin_kwh=float(min(exch_m)),
        min_generation_margin_kwh=float(min(gen_m)),
        max_balance_residual_kwh=float(max(bal_r)),
        min_first_step_margin=float(min(band_m)),
    )


# --- trace serialization (long CSV; schema documented in the cli module) ----

def _fmt(x) -> str:
    return repr(float(x))


def write_trace_csv(trace: ClosedLoopTrace, path: Union[str, Path]) -> None:
    lines = ["t,field,group,k,value"]

    def add(t, fieldname, group, k, value):
        lines.append(f"{t},{fieldname},{group},{k},{_fmt(value)}")

    cfg = trace.config
    add(-1, "meta_B_kwh", "", "", cfg.fleet_capacity_kwh)
    add(-1, "meta_horizon", "", "", cfg.horizon)
    add(-1, "meta_steps", "", "", len(trace.records))
    add(-1, "meta_seed", "", "", trace.seed)
    add(-1, "meta_x_max_kwh", "", "", cfg.x_max_frac * cfg.fleet_capacity_kwh)
    add(-1, "meta_u_b_max_kwh", "", "", cfg.u_b_max_frac * cfg.fleet_capacity_kwh)
    add(-1, "meta_u_g_max_kwh", "", "", cfg.u_g_max_frac * cfg.fleet_capacity_kwh)
    add(-1, "meta_initial_x_kwh", "", "", trace.initial_x_kwh)

    for r in trace.records:
        t = r.t
        add(t, "x_kwh", "", "", r.x_kwh)
        add(t, "x_next_kwh", "", "", r.x_next_kwh)
        add(t, "demand_kwh", "", "", r.demand_kwh)
        add(t, "delta_kwh", "", "", r.delta_kwh)
        add(t, "u_b_real_kwh", "", "", r.u_b_real_kwh)
        add(t, "consumption_real_kwh", "", "", r.consumption_real_kwh)
        add(t, "n_flags", "", "", len(r.flags))
        for k, v in enumerate(r.u_g_plan_kwh):
            add(t, "u_g_plan_kwh", "", k, v)
        for k, v in enumerate(r.x_pred_kwh):
            add(t, "x_pred_kwh", "", k, v)
        for ci, n in enumerate(r.full_charged):
            add(t, "full_charged", ci, "", n)
        for gi, g in enumerate(r.groups):
            add(t, "group_class", gi, "", g.class_index)
            add(t, "group_count", gi, "", g.count)
            add(t, "group_center", gi, "", g.center)
            add(t, "band", gi, "", g.band)
            add(t, "iterations", gi, "", g.iterations)
            add(t, "final_err", gi, "", g.final_err)
            add(t, "first_step_err", gi, "", g.first_step_err)
            add(t, "converged", gi, "", int(g.converged))
            add(t, "cap_hit", gi, "", int(g.cap_hit))
            for k, v in enumerate(g.w_hat):
                add(t, "w_hat", gi, k, v)
            for k, v in enumerate(g.w_real):
                add(t, "w_real", gi, k, v)
            for k, v in enumerate(g.incentive):
                add(t, "incentive", gi, k, v)
        for ci, socs in enumerate(r.socs):
            for mi, v in enumerate(socs):
                add(t, "soc", ci, mi, v)
    Path(path).write_text("\n".join(lines) + "\n")


class TraceTable:
    """Random access into a serialized trace CSV."""

    def __init__(self, rows: dict):
        self.rows = rows  # (field, group, k) -> list[(t, value)]

    @staticmethod
    def read(path: Union[str, Path]) -> "TraceTable":
        rows: dict = {}
        text = Path(path).read_text().splitlines()
        if not text or text[0] != "t,field,group,k,value":
            raise ValueError(f"{path}: not a trace CSV (bad header)")
        for line in text[1:]:
            if not line:
                continue
            t, fieldname, group, k, value = line.split(",")
            rows.setdefault((fieldname, group, k), []).append(
                (int(t), float(value)))
        return TraceTable(rows)

    def meta(self, name: str) -> float:
        return self.rows[(name, "", "")][0][1]

    def series(self, fieldname: str, group: str = "", k: str = "") -> np.ndarray:
        entries = sorted(self.rows.get((fieldname, group, k), []))
        return np.asarray([v for _, v in entries])

    def per_step_vector(self, fieldname: str, t: int, group: str = "") -> np.ndarray:
        vals = []
        k = 0
        while (fieldname, group, str(k)) in self.rows:
            entries = dict(self.rows[(fieldname, group, str(k))])
            if t not in entries:
                break
            vals.append(entries[t])
            k += 1
        return np.asarray(vals)

    def groups_at(self, t: int) -> list[str]:
        out = []
        gi = 0
        while ("group_class", str(gi), "") in self.rows:
            if t in dict(self.rows[("group_class", str(gi), "")]):
                out.append(str(gi))
            gi += 1
        return out

    @property
    def steps(self) -> int:
        return int(self.meta("meta_steps"))


def write_run_summary(trace: ClosedLoopTrace, path: Union[str, Path]) -> None:
    """Deterministic structured-text summary: config echo, charge counts,
    iteration statistics and flags."""
    cfg = trace.config
    lines = ["[run]"]
    lines.append(f"seed = {trace.seed}")
    lines.append(f"steps = {len(trace.records)}")
    lines.append(f"fleet_capacity_kwh = {_fmt(cfg.fleet_capacity_kwh)}")
    lines.append("")
    lines.append("[config]")
    for key in ("horizon", "steps", "partitions", "soc_init_low",
                "soc_init_high", "x_max_frac", "u_g_max_frac", "u_b_max_frac",
                "x_init_frac", "c_g_norm", "gamma", "eps_tol", "lambda_cap",
                "robustness_horizon", "regularize", "audit",
                "max_incentive_iter", "seed"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    for i, cls in enumerate(cfg.classes):
        for key in ("name", "count", "capacity_kwh", "w_max", "y_max", "delta",
                    "battery_c1", "battery_c2", "battery_knee_frac"):
            lines.append(f"classes[{i}].{key} = {getattr(cls, key)}")
    lines.append("")
    lines.append("[results]")
    totals = trace.full_charge_totals()
    stats = trace.iteration_stats()
    for i, cls in enumerate(cfg.classes):
        lines.append(f"full_charged.{cls.name} = {totals[i]}")
        lines.append(f"incentive_iterations_mean.{cls.name} = "
                     f"{stats[i]['mean']:.3f}")
        lines.append(f"incentive_iterations_max.{cls.name} = {stats[i]['max']}")
        lines.append(f"incentive_solves.{cls.name} = {stats[i]['solves']}")
    n_flags = sum(len(r.flags) for r in trace.records)
    lines.append(f"flags = {n_flags}")
    for r in trace.records:
        for fl in r.flags:
            lines.append(f"flag = {fl}")
    if trace.final_state is not None:
        lines.append(f"final_storage_kwh = {_fmt(trace.final_state.x_kwh)}")
    Path(path).write_text("\n".join(lines) + "\n")
