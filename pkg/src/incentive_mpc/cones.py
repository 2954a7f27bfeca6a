"""Closed convex cones used to constrain incentive vectors.

Three cone families cover every incentive structure in the library:

* ``zero``    -- the cone {0}; its dual is the whole space, so the
  incentive vector is unconstrained (plain linear pricing).
* ``nonneg``  -- the nonnegative orthant, self-dual; every incentive
  coordinate must be >= 0 (e.g. unit prices).
* ``product`` -- {0}^free_dim x nonneg orthant; the first ``free_dim``
  incentive coordinates are unconstrained and the rest are >= 0
  (a linear pricing block stacked with a convex pricing block).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONE_TAGS = ("zero", "nonneg", "product")


@dataclass(frozen=True)
class ConeSpec:
    """Cone of incentive-map outputs; incentives live in its dual."""

    tag: str
    dim: int
    free_dim: int = 0  # size of the unconstrained dual block ("product" only)

    def __post_init__(self):
        if self.tag not in CONE_TAGS:
            raise ValueError(f"unknown cone tag {self.tag!r}")
        if self.tag == "product" and not 0 <= self.free_dim <= self.dim:
            raise ValueError("free_dim must lie in [0, dim]")

    def _nonneg_slice(self) -> slice:
        if self.tag == "zero":
            return slice(0, 0)
        if self.tag == "nonneg":
            return slice(0, self.dim)
        return slice(self.free_dim, self.dim)

    def project_dual(self, lam: np.ndarray) -> np.ndarray:
        """Euclidean projection onto the dual cone."""
        lam = np.asarray(lam, dtype=float)
        out = lam.copy()
        s = self._nonneg_slice()
        out[..., s] = np.maximum(out[..., s], 0.0)
        return out

    def contains_dual(self, lam: np.ndarray, tol: float = 1e-9) -> bool:
        lam = np.asarray(lam, dtype=float)
        if lam.shape[-1] != self.dim:
            return False
        s = self._nonneg_slice()
        block = lam[..., s]
        return bool(block.size == 0 or np.min(block) >= -tol)

    def contains_primal(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        """Membership of the primal cone (for K-convexity probes)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            return False
        if self.tag == "zero":
            return bool(np.max(np.abs(x)) <= tol)
        if self.tag == "nonneg":
            return bool(np.min(x) >= -tol)
        zero_ok = self.free_dim == 0 or np.max(np.abs(x[..., : self.free_dim])) <= tol
        rest = x[..., self.free_dim :]
        return bool(zero_ok and (rest.size == 0 or np.min(rest) >= -tol))

    def dual_box(self, anchor: np.ndarray, cap: float) -> tuple[np.ndarray, np.ndarray]:
        """Bounds on a step ``d`` so that ``anchor + d`` stays in the dual
        cone with ``|anchor + d| <= cap`` coordinatewise."""
        anchor = np.asarray(anchor, dtype=float)
        lower = np.full(self.dim, -cap) - anchor
        upper = np.full(self.dim, cap) - anchor
        s = self._nonneg_slice()
        lower[s] = np.maximum(lower[s], -anchor[s])
        return lower, upper


class ConeViolation(ValueError):
    """An incentive vector fell outside the required dual cone."""


@dataclass
class Incentive:
    """An incentive vector with solve provenance attached.

    ``iterations`` and ``final_err`` record how the vector was computed
    (zero / nan for hand-built incentives).
    """

    values: np.ndarray
    cone: ConeSpec
    iterations: int = 0
    final_err: float = float("nan")
    converged: bool = True
    cap_hit: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.cone.dim,):
            raise ValueError(
                f"incentive has shape {self.values.shape}, cone dim {self.cone.dim}"
            )

    def require_valid(self, tol: float = 1e-9) -> None:
        if not self.cone.contains_dual(self.values, tol=tol):
            raise ConeViolation("incentive is outside the dual cone")


def zero_incentive(cone: ConeSpec) -> Incentive:
    return Incentive(np.zeros(cone.dim), cone)
