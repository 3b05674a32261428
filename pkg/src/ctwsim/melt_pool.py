"""Moving melt pool represented as a volume of prescribed temperatures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import Constraints
from .mesh import DOFS_PER_NODE, StripMesh

WELD_SPEED_MM_S = 1000.0 / 60.0  # 1 m/min


class PoolError(ValueError):
    pass


@dataclass(frozen=True)
class PoolGeometry:
    """Elliptic-cylinder pool through the full thickness.

    ``x0``/``y0`` is the centre during heat-up; afterwards the centre moves
    along +x at ``v_weld``.
    """

    a: float = 1.5  # semi-length along the weld (mm)
    b: float = 0.45  # semi-width (mm)
    x0: float = 5.0
    y0: float = 0.0
    v_weld: float = WELD_SPEED_MM_S  # mm/s
    t_heat: float = 0.1  # s
    theta_liq: float = 1460.0
    theta0: float = 20.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise PoolError("pool semi-axes must be positive")
        if self.v_weld < 0:
            raise PoolError("weld velocity must be non-negative")
        if self.t_heat <= 0:
            raise PoolError("heat-up duration must be positive")

    def center(self, t: float) -> tuple[float, float]:
        if t <= self.t_heat:
            return self.x0, self.y0
        return self.x0 + self.v_weld * (t - self.t_heat), self.y0

    def temperature(self, t: float) -> float:
        """Prescribed pool temperature: linear ramp during heat-up, then liquidus."""
        if t < 0:
            raise PoolError("time must be non-negative")
        if t <= self.t_heat:
            return self.theta0 + (self.theta_liq - self.theta0) * t / self.t_heat
        return self.theta_liq


def membership(geom: PoolGeometry, coords: np.ndarray, center) -> np.ndarray:
    """Closed elliptic footprint test, independent of z."""
    coords = np.atleast_2d(np.asarray(coords, float))
    cx, cy = center
    return ((coords[:, 0] - cx) / geom.a) ** 2 + ((coords[:, 1] - cy) / geom.b) ** 2 <= 1.0


def check_inside(geom: PoolGeometry, mesh: StripMesh, t: float) -> None:
    cx, cy = geom.center(t)
    Lx, Ly, _ = mesh.lengths
    if cx - geom.a < 0 or cx + geom.a > Lx or cy - geom.b < 0 or cy + geom.b > Ly:
        raise PoolError(
            f"melt pool at t={t:g}s (centre {cx:.4g}, {cy:.4g} mm) leaves the strip "
            f"[0, {Lx:g}] x [0, {Ly:g}] mm"
        )


def pool_nodes(geom: PoolGeometry, mesh: StripMesh, t: float) -> np.ndarray:
    check_inside(geom, mesh, t)
    return np.flatnonzero(membership(geom, mesh.coords, geom.center(t)))


def pool_constraints(geom: PoolGeometry, mesh: StripMesh, t: float) -> Constraints:
    """Temperature DOFs of member nodes with their prescribed value at ``t``."""
    nodes = pool_nodes(geom, mesh, t)
    dofs = DOFS_PER_NODE * nodes + 3
    return Constraints(dofs.astype(np.int64), np.full(nodes.size, geom.temperature(t)))
