"""EV smart-charging instantiation of the hierarchical pricing problem.

Followers are EVs choosing hourly charging plans; the coordinator is an
independent system operator (ISO) choosing electricity generation, storage
use and unit electricity prices.  Every quantity the ISO optimizes is
normalized by the total fleet battery capacity ``B`` so that the planning
problem is well scaled; interfaces to the simulator are in kWh.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .bimpc import RobustBiMPCSpec, TightenedPolytope, build_batch, tighten, \
    total_radius
from .cones import ConeSpec
from .lompc import IncentiveMap, LoMPCSpec, Population, offset_bound, \
    soc_offset_vector
from .solvers import BoxSet, CompositeObjective


class ParseError(ValueError):
    pass


class NegativeDemand(ValueError):
    pass


@dataclass(frozen=True)
class EVClassConfig:
    """One homogeneous EV class (all members share these parameters)."""

    name: str
    count: int
    capacity_kwh: float           # battery size
    w_max: float                  # max normalized charge per step
    y_max: float                  # charging stops at this normalized SoC
    delta: float                  # SoC tracking weight
    battery_c1: float = 0.1       # quadratic wear coefficient
    battery_c2: float = 0.5      # wear slope past the knee
    battery_knee_frac: float = 0.6  # knee as a fraction of w_max

    def __post_init__(self):
        if not 0 < self.w_max <= 1:
            raise ValueError(f"class {self.name}: w_max must be in (0, 1]")
        if not 0 < self.y_max <= 1:
            raise ValueError(f"class {self.name}: y_max must be in (0, 1]")
        if self.delta <= 0 or self.capacity_kwh <= 0 or self.count <= 0:
            raise ValueError(f"class {self.name}: nonpositive parameter")

    @property
    def strong_convexity(self) -> float:
        # modulus certified by the tracking term alone; the wear term only
        # adds curvature
        return 2.0 * self.delta * self.capacity_kwh ** 2

    @property
    def knee(self) -> float:
        return self.battery_knee_frac * self.w_max


@dataclass(frozen=True)
class SyntheticDemand:
    """Smooth daily profile with an afternoon peak and pre-dawn trough."""

    mean_frac: float = 0.5    # of fleet capacity B, per hour
    swing_frac: float = 0.15
    peak_hour: float = 16.0
    period: float = 24.0


@dataclass
class DemandProfile:
    """External demand forecast, kWh per step, long enough for the final
    planning window."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("demand must be a 1-D series")
        if np.any(self.values < 0):
            raise NegativeDemand("demand contains negative entries")

    def window(self, t: int, n: int) -> np.ndarray:
        if t + n > self.values.shape[0]:
            raise ValueError("demand series too short for the requested window")
        return self.values[t: t + n]


def ingest_demand(source: Union[str, Path, SyntheticDemand],
                  length: int, scale: float = 1.0,
                  capacity_kwh: float = 1.0) -> DemandProfile:
    """Build a demand profile from a two-column CSV (hour, kWh) or a
    synthetic daily shape.

    CSV values are divided by ``scale`` and tiled periodically out to
    ``length`` entries.  The synthetic profile is expressed as fractions of
    ``capacity_kwh``.
    """
    if isinstance(source, SyntheticDemand):
        hours = np.arange(length, dtype=float)
        phase = 2.0 * math.pi * (hours - source.peak_hour) / source.period
        frac = source.mean_frac + source.swing_frac * np.cos(phase)
        if np.any(frac < 0):
            raise NegativeDemand("synthetic profile dips below zero")
        return DemandProfile(frac * capacity_kwh)

    path = Path(source)
    if not path.exists():
        raise ParseError(f"demand file not found: {path}")
    values = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p for p in re.split(r"[,\s]+", line) if p]
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected two columns, got {raw!r}")
        try:
            float(parts[0])
            kwh = float(parts[1])
        except ValueError:
            if lineno == 1:
                continue  # header row
            raise ParseError(f"{path}:{lineno}: non-numeric entry {raw!r}")
        values.append(kwh / scale)
    if not values:
        raise ParseError(f"{path}: no demand rows found")
    base = np.asarray(values, dtype=float)
    if np.any(base < 0):
        raise NegativeDemand(f"{path}: negative demand after scaling")
    reps = int(math.ceil(length / base.shape[0]))
    return DemandProfile(np.tile(base, reps)[:length])


def certified_step_modulus(cls: EVClassConfig, N: int) -> float:
    """Strong-convexity modulus of an EV cost certified from all its
    quadratic pieces (tracking through the cumulative-sum map plus the
    smooth wear term); at least the advertised class modulus."""
    L = np.tril(np.ones((N, N)))
    lam_min = float(np.linalg.eigvalsh(L.T @ L)[0])
    certified = 2.0 * cls.capacity_kwh ** 2 * (cls.battery_c1
                                               + cls.delta * lam_min)
    return max(certified, cls.strong_convexity)


def build_ev_incentive_map(cls: EVClassConfig, N: int) -> IncentiveMap:
    """Pricing features of one EV class: capacity-scaled
    ``(w, w_max - w, w*w)`` stacked into a nonnegative-cone map.

    The three blocks price consumption, reward high charging rates, and
    price consumption nonlinearly; all unit prices are nonnegative.
    """
    th = cls.capacity_kwh
    wmax = cls.w_max

    def value(w):
        w = np.asarray(w, dtype=float)
        return th * np.concatenate([w, wmax - w, w * w], axis=-1)

    def vjp(w, lam):
        w = np.asarray(w, dtype=float)
        l1, l2, l3 = lam[..., :N], lam[..., N:2 * N], lam[..., 2 * N:]
        return th * (l1 - l2 + 2.0 * w * l3)

    def jac(w):
        w = np.asarray(w, dtype=float)
        return th * np.concatenate(
            [np.eye(N), -np.eye(N), 2.0 * np.diag(w)], axis=1)

    def cheapest_equivalent(lam_star, w, c, cap):
        # the equality rows decouple per time step: each step's cheapest
        # price triple keeping the marginal price fixed is a vertex of a
        # 3-variable polyhedron, i.e. a single nonzero component
        w = np.asarray(w, dtype=float)
        l1, l2, l3 = lam_star[:N], lam_star[N:2 * N], lam_star[2 * N:]
        c1, c2, c3 = c[:N], c[N:2 * N], c[2 * N:]
        d = l1 - l2 + 2.0 * w * l3  # marginal price per step, / capacity
        out = lam_star.copy()
        anchor_cost = c1 * l1 + c2 * l2 + c3 * l3
        for k in range(N):
            cands = []
            if d[k] >= 0.0:
                if d[k] <= cap:
                    cands.append((c1[k] * d[k], (d[k], 0.0, 0.0)))
                if w[k] > 1e-12:
                    q = d[k] / (2.0 * w[k])
                    if q <= cap:
                        cands.append((c3[k] * q, (0.0, 0.0, q)))
            else:
                if -d[k] <= cap:
                    cands.append((c2[k] * (-d[k]), (0.0, -d[k], 0.0)))
            cands.append((anchor_cost[k], (l1[k], l2[k], l3[k])))
            _, (a, b, q) = min(cands, key=lambda t: t[0])
            out[k], out[N + k], out[2 * N + k] = a, b, q
        return out

    return IncentiveMap(value, vjp, ConeSpec("nonneg", 3 * N),
                        in_dim=N, out_dim=3 * N, jacobian_matrix=jac,
                        regularizer=cheapest_equivalent)


def build_ev_base_objective(cls: EVClassConfig, center_y0: float,
                            N: int) -> CompositeObjective:
    """Shared cost of a group's representative member: SoC tracking toward
    ``y_max`` from the group-center SoC, plus battery wear (smooth quadratic
    part and a nonsmooth knee handled through the prox path)."""
    th2 = cls.capacity_kwh ** 2
    track = cls.delta * th2
    wear_q = cls.battery_c1 * th2
    wear_h = cls.battery_c2 * th2
    knee = cls.knee
    gap = cls.y_max - center_y0

    def smooth(w):
        w = np.asarray(w, dtype=float)
        s = np.cumsum(w, axis=-1)
        r = gap - s
        val = track * np.sum(r * r, axis=-1) + wear_q * np.sum(w * w, axis=-1)
        rc = np.cumsum(r[..., ::-1], axis=-1)[..., ::-1]
        grad = -2.0 * track * rc + 2.0 * wear_q * w
        return val, grad

    def prox(v, t):
        s = t * wear_h
        out = np.where(v > knee + s, v - s, np.minimum(v, knee))
        return np.where(v < knee, v, out)

    def prox_val(w):
        return wear_h * np.sum(np.maximum(np.asarray(w) - knee, 0.0), axis=-1)

    return CompositeObjective(smooth, prox, cls.strong_convexity, prox_val)


def build_ev_lompc(cls: EVClassConfig, member_y0: float, group_center_y0: float,
                   N: int, shared: Optional[tuple] = None) -> LoMPCSpec:
    """One EV's charging problem, split into the group-shared base cost and
    the member-specific linear offset from its SoC distance to the group
    center.  Pass ``shared = (base, box, map)`` to reuse group objects."""
    if not 0 <= member_y0 <= cls.y_max:
        raise ValueError("member SoC outside [0, y_max]")
    if shared is None:
        base = build_ev_base_objective(cls, group_center_y0, N)
        box = BoxSet(np.zeros(N), np.full(N, cls.w_max))
        mapper = build_ev_incentive_map(cls, N)
    else:
        base, box, mapper = shared
    off = soc_offset_vector(member_y0, group_center_y0, cls.delta,
                            cls.capacity_kwh, N)
    return LoMPCSpec(base, box, off, cls.strong_convexity, mapper)


@dataclass(frozen=True)
class PartitionGroup:
    indices: np.ndarray      # member positions within the class
    center: float            # SoC interval midpoint
    halfwidth: float         # half the interval width (the SoC spread bound)


def partition_population(y0s: np.ndarray, partitions: int,
                         lo: Optional[float] = None,
                         hi: Optional[float] = None) -> list[PartitionGroup]:
    """Split members into equal-width SoC intervals; empty intervals are
    dropped.  Bounds default to the observed SoC range."""
    if partitions < 1:
        raise ValueError("need at least one partition")
    y0s = np.asarray(y0s, dtype=float)
    lo = float(np.min(y0s)) if lo is None else float(lo)
    hi = float(np.max(y0s)) if hi is None else float(hi)
    if hi < lo:
        raise ValueError("invalid SoC interval")
    if hi == lo:
        return [PartitionGroup(np.arange(y0s.shape[0]), lo, 0.0)]
    width = (hi - lo) / partitions
    which = np.clip(((y0s - lo) / width).astype(int), 0, partitions - 1)
    groups = []
    for k in range(partitions):
        idx = np.nonzero(which == k)[0]
        if idx.size == 0:
            continue
        center = lo + (k + 0.5) * width
        groups.append(PartitionGroup(idx, center, width / 2.0))
    return groups


@dataclass(frozen=True)
class ScenarioConfig:
    """Full experiment description; every field has a reproducible default."""

    classes: tuple[EVClassConfig, ...]
    horizon: int = 12
    steps: int = 48
    partitions: int = 12
    soc_init_low: float = 0.3
    soc_init_high: float = 0.5
    x_max_frac: float = 0.3
    u_g_max_frac: float = 1.0
    u_b_max_frac: float = 0.3
    x_init_frac: float = 0.15
    c_g_norm: float = 1e-3       # generation cost coefficient times B^1.7
    gamma: float = 5.0           # tracking discount, > 1
    eps_tol: float = 1e-3
    lambda_cap: float = 1e6
    robustness_horizon: int = 1
    regularize: bool = True
    audit: bool = False
    max_incentive_iter: int = 400
    min_partition_halfwidth: float = 0.005
    # extra storage-bound margin guaranteeing the next step's certificate;
    # None derives the worst-case next-step radius from the config
    storage_margin_kwh: Optional[float] = None
    seed: int = 42
    demand_source: Union[str, SyntheticDemand] = field(
        default_factory=SyntheticDemand)
    demand_scale: float = 1.0

    def __post_init__(self):
        if self.gamma <= 1:
            raise ValueError("gamma must exceed 1")
        if not self.classes:
            raise ValueError("at least one EV class is required")
        if not 0 <= self.soc_init_low <= self.soc_init_high:
            raise ValueError("invalid initial SoC interval")
        for c in self.classes:
            if self.soc_init_high > c.y_max:
                raise ValueError(
                    f"class {c.name}: initial SoC interval exceeds y_max")
        if not 1 <= self.robustness_horizon <= self.horizon:
            raise ValueError("robustness horizon must be in [1, horizon]")

    @property
    def fleet_capacity_kwh(self) -> float:
        return sum(c.count * c.capacity_kwh for c in self.classes)

    def recursive_margin_kwh(self) -> float:
        """Upper bound on any step's aggregate response-error radius: SoCs
        stay within [initial low, y_max], so no group's SoC halfwidth can
        exceed that width over twice the partition count."""
        if self.storage_margin_kwh is not None:
            return self.storage_margin_kwh
        width = max(c.y_max for c in self.classes) - self.soc_init_low
        half = max(width / (2 * self.partitions), self.min_partition_halfwidth)
        return math.sqrt(self.horizon) * half * self.fleet_capacity_kwh

    @property
    def total_members(self) -> int:
        return sum(c.count for c in self.classes)


def default_scenario(**overrides) -> ScenarioConfig:
    classes = (
        EVClassConfig("small", 500, 10.0, 0.25, 0.9, 0.05),
        EVClassConfig("large", 500, 50.0, 0.15, 0.9, 0.05),
    )
    return ScenarioConfig(classes=classes, **overrides)


@dataclass
class GroupPlanInfo:
    """Per-group metadata needed by the coordinator and the simulator."""

    class_index: int
    count: int
    center: float
    halfwidth: float
    band: float          # sqrt(horizon) * halfwidth, response-error bound
    weight_kwh: float    # count * capacity
    mean_y0: float
    class_fraction: float  # count / class count


@dataclass
class PlanProblem:
    spec: RobustBiMPCSpec
    groups: list[GroupPlanInfo]
    fleet_capacity_kwh: float
    demand_window_kwh: np.ndarray
    delta_kwh: float


def build_bimpc(config: ScenarioConfig, groups: Sequence[GroupPlanInfo],
                x0_kwh: float, demand_window_kwh: np.ndarray) -> PlanProblem:
    """Assemble the tightened coordinator problem in fleet-normalized units.

    Decision vector: generation (as a fraction of fleet capacity) followed
    by one average charging plan per group.  Storage exchange is eliminated
    through the energy balance; storage states are cumulative sums.  Bounds
    on the exchange and the storage trajectory are tightened by each group's
    response-error band over the robustness horizon.
    """
    N = config.horizon
    B = config.fleet_capacity_kwh
    demand_frac = np.asarray(demand_window_kwh, dtype=float) / B
    if demand_frac.shape[0] != N:
        raise ValueError("demand window length must equal the horizon")

    dyn = build_batch(1.0, 1.0, 0.0, N)     # storage integrates the exchange
    group_B2 = [-(g.weight_kwh / B) * dyn.B1_bar for g in groups]
    affine = -dyn.B1_bar @ demand_frac

    rows, rhs = [], []
    x_max = config.x_max_frac
    u_b_max = config.u_b_max_frac
    # storage rows carry an extra margin so the realized state also
    # satisfies the NEXT step's certificate (recursive feasibility)
    margin = config.recursive_margin_kwh() / B
    for k in range(1, N + 1):
        e = np.zeros(N + 1)
        e[k] = 1.0
        rows.append(e.copy())
        rhs.append(x_max - margin)
        rows.append(-e)
        rhs.append(-margin)
    for k in range(N):
        e = np.zeros(N + 1)
        e[k + 1] = 1.0
        e[k] = -1.0
        rows.append(e.copy())
        rhs.append(u_b_max)
        rows.append(-e)
        rhs.append(u_b_max)
    C = np.asarray(rows)
    d = np.asarray(rhs, dtype=float)

    tightening = np.zeros(d.shape[0])
    for g, B2g in zip(groups, group_B2):
        tightening += tighten(C, d, B2g, g.band, config.robustness_horizon,
                              1).tightening
    state_rows = TightenedPolytope(C, d, 0.0, tightening)

    gammas = config.gamma ** (np.arange(1, N + 1) - N)
    cls_list = config.classes
    cg = config.c_g_norm

    def cost(z):
        u = np.maximum(z[:N], 0.0)
        val = cg * float(np.sum(u ** 1.7))
        grad = np.zeros_like(z)
        grad[:N] = 1.7 * cg * u ** 0.7
        at = N
        for g in groups:
            wg = z[at: at + N]
            goal = cls_list[g.class_index].y_max - g.mean_y0
            s = np.cumsum(wg)
            r = s - goal
            wr = gammas * r
            val += g.class_fraction * float(np.sum(wr * r))
            grad[at: at + N] = 2.0 * g.class_fraction * \
                np.cumsum(wr[::-1])[::-1]
            at += N
        return val, grad

    # tracking blocks are constant; the generation block is diagonal with
    # curvature clamped away from the singularity at zero generation
    Lmat = np.tril(np.ones((N, N)))
    track_block = Lmat.T @ (gammas[:, None] * Lmat)

    def cost_hessian(z):
        n_z = z.shape[0]
        H = np.zeros((n_z, n_z))
        u = np.maximum(z[:N], 1e-6)
        H[:N, :N] = np.diag(1.7 * 0.7 * cg * u ** -0.3)
        at = N
        for g in groups:
            H[at: at + N, at: at + N] = 2.0 * g.class_fraction * track_block
            at += N
        return H

    spec = RobustBiMPCSpec(
        dynamics=dyn,
        state_rows=state_rows,
        input_box_u=BoxSet(np.zeros(N), np.full(N, config.u_g_max_frac)),
        input_box_w=[BoxSet(np.zeros(N),
                            np.full(N, cls_list[g.class_index].w_max))
                     for g in groups],
        cost=cost,
        horizon_r=config.robustness_horizon,
        affine_offset=affine,
        group_B2=group_B2,
        cost_hessian=cost_hessian,
    )
    delta_kwh = total_radius(
        [(g.count, cls_list[g.class_index].capacity_kwh, g.halfwidth)
         for g in groups], N)
    return PlanProblem(spec, list(groups), B, np.asarray(demand_window_kwh,
                                                         dtype=float), delta_kwh)


def make_plan_groups(config: ScenarioConfig,
                     socs_per_class: Sequence[np.ndarray]
                     ) -> tuple[list[GroupPlanInfo], list[PartitionGroup],
                                list[int]]:
    """Partition every class by current SoC and collect per-group planning
    metadata.  Returns (plan infos, raw partitions, class index per group)."""
    infos: list[GroupPlanInfo] = []
    parts: list[PartitionGroup] = []
    class_of: list[int] = []
    for ci, (cls, socs) in enumerate(zip(config.classes, socs_per_class)):
        for raw in partition_population(socs, config.partitions):
            # a floor on the per-group SoC spread keeps the response-error
            # bands bounded away from zero when the fleet's SoCs cluster
            pg = PartitionGroup(raw.indices, raw.center,
                                max(raw.halfwidth,
                                    config.min_partition_halfwidth))
            band = math.sqrt(config.horizon) * pg.halfwidth
            infos.append(GroupPlanInfo(
                class_index=ci,
                count=int(pg.indices.size),
                center=pg.center,
                halfwidth=pg.halfwidth,
                band=band,
                weight_kwh=pg.indices.size * cls.capacity_kwh,
                mean_y0=float(np.mean(socs[pg.indices])),
                class_fraction=pg.indices.size / cls.count,
            ))
            parts.append(pg)
            class_of.append(ci)
    return infos, parts, class_of


def build_group_population(config: ScenarioConfig, class_index: int,
                           socs: np.ndarray, pg: PartitionGroup,
                           shared: tuple) -> Population:
    """Followers of one partition group as a single-group population."""
    cls = config.classes[class_index]
    base, box, mapper = shared
    members = [
        LoMPCSpec(base, box, soc_offset_vector(float(socs[i]), pg.center,
                                               cls.delta, cls.capacity_kwh,
                                               config.horizon),
                  cls.strong_convexity, mapper)
        for i in pg.indices
    ]
    bound = offset_bound(cls.delta, cls.capacity_kwh, pg.halfwidth,
                         config.horizon)
    return Population(members, [list(range(len(members)))], [bound])


# --- scenario config file (flat key = value lines) -------------------------

_CLASS_KEYS = {
    "name": str, "count": int, "capacity_kwh": float, "w_max": float,
    "y_max": float, "delta": float, "battery_c1": float, "battery_c2": float,
    "battery_knee_frac": float,
}
_TOP_KEYS = {
    "horizon": int, "steps": int, "partitions": int,
    "soc_init_low": float, "soc_init_high": float,
    "x_max_frac": float, "u_g_max_frac": float, "u_b_max_frac": float,
    "x_init_frac": float, "c_g_norm": float, "gamma": float,
    "eps_tol": float, "lambda_cap": float, "robustness_horizon": int,
    "regularize": bool, "audit": bool, "max_incentive_iter": int, "seed": int,
    "min_partition_halfwidth": float, "storage_margin_kwh": float,
}
_DEMAND_KEYS = {
    "source": str, "path": str, "scale": float, "mean_frac": float,
    "swing_frac": float, "peak_hour": float, "period": float,
}


def _coerce(key: str, raw: str, typ):
    if typ is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ParseError(f"key {key!r}: expected a boolean, got {raw!r}")
    try:
        return typ(raw.strip())
    except ValueError:
        raise ParseError(f"key {key!r}: expected {typ.__name__}, got {raw!r}")


def parse_scenario_file(path: Union[str, Path]) -> ScenarioConfig:
    """Parse the flat ``key = value`` scenario format (see the schema file
    shipped in docs/)."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"scenario file not found: {path}")
    top: dict = {}
    demand: dict = {}
    classes: dict[int, dict] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        m = re.fullmatch(r"classes\[(\d+)\]\.(\w+)", key)
        if m:
            idx, sub = int(m.group(1)), m.group(2)
            if sub not in _CLASS_KEYS:
                raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
            classes.setdefault(idx, {})[sub] = _coerce(key, val, _CLASS_KEYS[sub])
            continue
        if key.startswith("demand."):
            sub = key[len("demand."):]
            if sub not in _DEMAND_KEYS:
                raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
            demand[sub] = _coerce(key, val, _DEMAND_KEYS[sub])
            continue
        if key not in _TOP_KEYS:
            raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
        top[key] = _coerce(key, val, _TOP_KEYS[key])

    if classes:
        idxs = sorted(classes)
        if idxs != list(range(len(idxs))):
            raise ParseError("class indices must be contiguous from 0")
        built = []
        for i in idxs:
            spec = classes[i]
            missing = {"name", "count", "capacity_kwh", "w_max", "y_max",
                       "delta"} - set(spec)
            if missing:
                raise ParseError(
                    f"classes[{i}] is missing keys: {sorted(missing)}")
            built.append(EVClassConfig(**spec))
        class_tuple = tuple(built)
    else:
        class_tuple = default_scenario().classes

    source = demand.pop("source", "synthetic")
    scale = demand.pop("scale", 1.0)
    if source == "synthetic":
        synth_keys = {k: v for k, v in demand.items() if k != "path"}
        demand_source: Union[str, SyntheticDemand] = SyntheticDemand(**synth_keys)
    elif source == "csv":
        if "path" not in demand:
            raise ParseError("key 'demand.path' is required for csv demand")
        demand_source = demand["path"]
    else:
        raise ParseError(f"key 'demand.source': unknown source {source!r}")

    return ScenarioConfig(classes=class_tuple, demand_source=demand_source,
                          demand_scale=scale, **top)


def scenario_demand(config: ScenarioConfig) -> DemandProfile:
    return ingest_demand(config.demand_source,
                         length=config.steps + config.horizon,
                         scale=config.demand_scale,
                         capacity_kwh=config.fleet_capacity_kwh)
