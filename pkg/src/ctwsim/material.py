"""Temperature-dependent material tables and their piecewise-linear evaluation.

Internal unit system (used everywhere past :func:`load_table`)::

    length mm, time s, force N, stress MPa, mass t (1e3 kg), energy mJ,
    temperature in degC (Kelvin only inside logarithms)

so that ``rho * c`` comes out in MPa/K and conductivities in N/(s K).

Table file format (plain text, ``#`` comments, blank lines ignored)::

    [constants]
    density_kg_m3, 7919
    theta_sol_C, 1390
    theta_liq_C, 1460

    [param E]               one block per parameter curve
    theta_C, E_MPa          header line (column names fixed per parameter)
    20, 200000
    ...

    [yield]
    alpha \\ theta_C, 20, 400, ...    first row: temperature knots
    0.0, 260, 150, ...                 one row per plastic-strain knot (MPa)

Parameter blocks and the units of their value columns:

    E        E_MPa            MPa
    nu       nu               -
    alpha_T  alpha_T_1_K      1/K   (secant expansion coefficient from 20 degC)
    c        c_J_kgK          J/(kg K)
    lambda   lambda_W_mK      W/(m K)
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PARAM_COLUMNS = {
    "E": "E_MPa",
    "nu": "nu",
    "alpha_T": "alpha_T_1_K",
    "c": "c_J_kgK",
    "lambda": "lambda_W_mK",
}
# file units -> internal units
PARAM_SCALE = {"E": 1.0, "nu": 1.0, "alpha_T": 1.0, "c": 1.0e6, "lambda": 1.0}
DENSITY_SCALE = 1.0e-12  # kg/m^3 -> t/mm^3

THETA_REF = 20.0  # degC, uniform initial temperature
KELVIN = 273.15


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class Curve:
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.knots.ndim != 1 or self.knots.shape != self.values.shape:
            raise MaterialError("curve knots and values must be 1-D arrays of equal length")
        if self.knots.size < 1:
            raise MaterialError("curve needs at least one knot")
        if np.any(np.diff(self.knots) <= 0):
            raise MaterialError("curve knot temperatures must be strictly increasing")


@dataclass(frozen=True)
class MaterialTable:
    curves: dict  # name -> Curve, values in internal units
    density_si: float  # kg/m^3
    yield_alpha: np.ndarray
    yield_theta: np.ndarray
    yield_grid: np.ndarray  # (n_alpha, n_theta), MPa
    theta_sol: float
    theta_liq: float
    source: str = field(default="", compare=False)

    def __post_init__(self):
        missing = set(PARAM_COLUMNS) - set(self.curves)
        if missing:
            raise MaterialError(f"missing parameter curves: {sorted(missing)}")
        v = self.curves
        if np.any(v["E"].values <= 0):
            raise MaterialError("E must be positive")
        if np.any((v["nu"].values <= 0) | (v["nu"].values >= 0.5)):
            raise MaterialError("nu must lie in (0, 0.5)")
        if np.any(v["c"].values <= 0):
            raise MaterialError("c must be positive")
        if np.any(v["lambda"].values <= 0):
            raise MaterialError("lambda must be positive")
        if not self.density_si > 0:
            raise MaterialError("density must be positive")
        if not self.theta_sol < self.theta_liq:
            raise MaterialError("theta_sol must be below theta_liq")
        ya, yt, yg = self.yield_alpha, self.yield_theta, self.yield_grid
        if yg.shape != (ya.size, yt.size):
            raise MaterialError(
                f"yield grid shape {yg.shape} does not match knots ({ya.size}, {yt.size})"
            )
        if np.any(np.diff(ya) <= 0) or np.any(np.diff(yt) <= 0):
            raise MaterialError("yield knots must be strictly increasing")
        if ya[0] != 0.0:
            raise MaterialError("first plastic-strain knot of the yield grid must be 0")
        if not np.all(np.isfinite(yg)):
            raise MaterialError("yield grid is incomplete")

    @property
    def rho(self) -> float:
        """Density in internal units (t/mm^3)."""
        return self.density_si * DENSITY_SCALE

    def density(self, theta=None):
        """Density in kg/m^3; constant over temperature."""
        if theta is None:
            return self.density_si
        return np.full(np.shape(theta), self.density_si)


def make_table(
    curves: dict,
    yield_alpha,
    yield_theta,
    yield_grid,
    density=7919.0,
    theta_sol=1390.0,
    theta_liq=1460.0,
    si_units=True,
) -> MaterialTable:
    """Build a table from ``{name: (knots, values)}``; values in file units if ``si_units``."""
    cv = {}
    for name, (k, v) in curves.items():
        scale = PARAM_SCALE[name] if si_units else 1.0
        cv[name] = Curve(np.asarray(k, float), np.asarray(v, float) * scale)
    return MaterialTable(
        cv,
        float(density),
        np.asarray(yield_alpha, float),
        np.asarray(yield_theta, float),
        np.asarray(yield_grid, float),
        float(theta_sol),
        float(theta_liq),
    )


def constant_table(
    E=200000.0, nu=0.3, alpha_T=1.6e-5, c=500.0, lam=15.0, y0=250.0, hardening=0.0,
    density=7919.0,
) -> MaterialTable:
    """Temperature-independent table with linear hardening ``y = y0 + hardening * alpha``."""
    knots = [0.0]
    return make_table(
        {
            "E": (knots, [E]),
            "nu": (knots, [nu]),
            "alpha_T": (knots, [alpha_T]),
            "c": (knots, [c]),
            "lambda": (knots, [lam]),
        },
        yield_alpha=[0.0, 1.0],
        yield_theta=[0.0],
        yield_grid=[[y0], [y0 + hardening]],
        density=density,
    )


def _blocks(text: str):
    name, rows = None, []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            if name is not None:
                yield name, rows
            name, rows = line[1:-1].strip(), []
            continue
        if name is None:
            raise MaterialError(f"data outside of a block: {raw!r}")
        rows.append([c.strip() for c in line.split(",")])
    if name is not None:
        yield name, rows


def parse_table(text: str, source: str = "") -> MaterialTable:
    try:
        return _parse_table(text, source)
    except ValueError as exc:
        if isinstance(exc, MaterialError):
            raise
        raise MaterialError(f"malformed material table {source}: {exc}") from exc


def _parse_table(text: str, source: str) -> MaterialTable:
    consts: dict[str, float] = {}
    curves = {}
    yield_rows = None
    for name, rows in _blocks(text):
        if name == "constants":
            for r in rows:
                if len(r) != 2:
                    raise MaterialError(f"[constants]: expected 'key, value', got {r}")
                consts[r[0]] = float(r[1])
        elif name.startswith("param "):
            pname = name.split(None, 1)[1]
            if pname not in PARAM_COLUMNS:
                raise MaterialError(f"unknown parameter block [{name}]")
            header, data = rows[0], rows[1:]
            if header != ["theta_C", PARAM_COLUMNS[pname]]:
                raise MaterialError(
                    f"[{name}]: header must be 'theta_C, {PARAM_COLUMNS[pname]}', got {header}"
                )
            if any(len(r) != 2 for r in data):
                raise MaterialError(f"[{name}]: ragged rows")
            arr = np.array(data, dtype=float)
            curves[pname] = (arr[:, 0], arr[:, 1])
        elif name == "yield":
            yield_rows = rows
        else:
            raise MaterialError(f"unknown block [{name}]")
    if yield_rows is None or len(yield_rows) < 2:
        raise MaterialError("missing [yield] block")
    theta = np.array(yield_rows[0][1:], dtype=float)
    width = len(yield_rows[0])
    if any(len(r) != width for r in yield_rows[1:]):
        raise MaterialError("[yield]: grid is not rectangular")
    grid = np.array(yield_rows[1:], dtype=float)
    for key in ("density_kg_m3", "theta_sol_C", "theta_liq_C"):
        if key not in consts:
            raise MaterialError(f"[constants]: missing {key}")
    missing = set(PARAM_COLUMNS) - set(curves)
    if missing:
        raise MaterialError(f"missing parameter blocks: {sorted(missing)}")
    table = make_table(
        curves,
        grid[:, 0],
        theta,
        grid[:, 1:],
        density=consts["density_kg_m3"],
        theta_sol=consts["theta_sol_C"],
        theta_liq=consts["theta_liq_C"],
    )
    object.__setattr__(table, "source", source)
    return table


def load_table(path) -> MaterialTable:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MaterialError(f"cannot read material table {path}: {exc}") from exc
    return parse_table(text, source=str(path))


def format_table(table: MaterialTable) -> str:
    out = io.StringIO()
    out.write("[constants]\n")
    out.write(f"density_kg_m3, {table.density_si!r}\n")
    out.write(f"theta_sol_C, {table.theta_sol!r}\n")
    out.write(f"theta_liq_C, {table.theta_liq!r}\n")
    for name, col in PARAM_COLUMNS.items():
        cv = table.curves[name]
        out.write(f"\n[param {name}]\ntheta_C, {col}\n")
        for k, v in zip(cv.knots, cv.values / PARAM_SCALE[name]):
            out.write(f"{float(k)!r}, {float(v)!r}\n")
    out.write("\n[yield]\nalpha \\ theta_C, " + ", ".join(repr(float(t)) for t in table.yield_theta))
    out.write("\n")
    for a, row in zip(table.yield_alpha, table.yield_grid):
        out.write(", ".join([repr(float(a))] + [repr(float(v)) for v in row]) + "\n")
    return out.getvalue()


def bundled_table_path() -> Path:
    return Path(__file__).with_name("data") / "steel_1.4301_illustrative.csv"


# --------------------------------------------------------------------------- evaluation


def _segment(knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Index k of the segment with knots[k] < x <= knots[k+1] (clipped to valid range)."""
    k = np.searchsorted(knots, x, side="left") - 1
    return np.clip(k, 0, max(knots.size - 2, 0))


def interp_with_slope(knots: np.ndarray, values: np.ndarray, x):
    """Piecewise-linear value and slope, constant outside the knot range."""
    x = np.asarray(x, dtype=float)
    if knots.size == 1:
        return np.full(x.shape, values[0]), np.zeros(x.shape)
    k = _segment(knots, x)
    t0, t1 = knots[k], knots[k + 1]
    p0, p1 = values[k], values[k + 1]
    slope = (p1 - p0) / (t1 - t0)
    inside = (x >= knots[0]) & (x <= knots[-1])
    xc = np.clip(x, knots[0], knots[-1])
    val = p0 + slope * (xc - t0)
    # exact knot reproduction
    val = np.where(xc == t1, p1, val)
    return val, np.where(inside, slope, 0.0)


def eval_param(table: MaterialTable, name: str, theta):
    """Parameter ``name`` at temperature(s) ``theta`` (degC) in internal units."""
    if name == "rho":
        return np.full(np.shape(theta), table.rho) if np.ndim(theta) else table.rho
    cv = table.curves[name]
    val, _ = interp_with_slope(cv.knots, cv.values, theta)
    return val if np.ndim(theta) else float(val)


def eval_param_slope(table: MaterialTable, name: str, theta):
    cv = table.curves[name]
    return interp_with_slope(cv.knots, cv.values, theta)


def _yield_rows(table: MaterialTable, theta):
    """First interpolation step: every alpha knot row evaluated at theta.

    Returns values and theta-derivatives, both of shape ``(n_alpha, *theta.shape)``.
    """
    yt, yg = table.yield_theta, table.yield_grid
    theta = np.asarray(theta, dtype=float)
    if yt.size == 1:
        vals = np.broadcast_to(yg[:, 0].reshape((-1,) + (1,) * theta.ndim), (yg.shape[0],) + theta.shape)
        return vals, np.zeros_like(vals)
    l = _segment(yt, theta)
    t0, t1 = yt[l], yt[l + 1]
    tc = np.clip(theta, yt[0], yt[-1])
    inside = (theta >= yt[0]) & (theta <= yt[-1])
    y_l, y_l1 = yg[:, l], yg[:, l + 1]
    slope = (y_l1 - y_l) / (t1 - t0)
    vals = y_l + slope * (tc - t0)
    vals = np.where(tc == t1, y_l1, vals)
    return vals, np.where(inside, slope, 0.0)


def yield_state(table: MaterialTable, alpha, theta):
    """Yield stress ``y``, hardening slope ``h`` and ``dy/dtheta`` at (alpha, theta).

    Temperature is interpolated first at the two bracketing plastic-strain knots,
    then the result is interpolated in alpha.  The slope ``h`` belongs to the
    bracketing alpha segment (right segment at interior knots, last segment at
    and beyond the final knot, where ``y`` continues linearly).
    """
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(alpha < 0):
        raise MaterialError("accumulated plastic strain must be non-negative")
    alpha, theta = np.broadcast_arrays(alpha, theta)
    ya = table.yield_alpha
    rows, drows = _yield_rows(table, theta)
    if ya.size == 1:
        return rows[0].copy(), np.zeros(alpha.shape), drows[0].copy()
    # right segment at interior knots
    k = np.clip(np.searchsorted(ya, alpha, side="right") - 1, 0, ya.size - 2)
    idx = (k,) + tuple(np.indices(alpha.shape)) if alpha.ndim else (k,)
    yk = rows[idx]
    yk1 = rows[(k + 1,) + idx[1:]]
    dk = drows[idx]
    dk1 = drows[(k + 1,) + idx[1:]]
    a0, a1 = ya[k], ya[k + 1]
    h = (yk1 - yk) / (a1 - a0)
    w = alpha - a0
    y = yk + h * w
    dy = dk + (dk1 - dk) / (a1 - a0) * w
    at_end = alpha == a1
    y = np.where(at_end, yk1, y)
    return y, h, dy


def eval_yield(table: MaterialTable, alpha, theta):
    """Return ``(y, h)`` at accumulated plastic strain ``alpha`` and temperature ``theta``."""
    y, h, _ = yield_state(table, alpha, theta)
    if np.ndim(y) == 0:
        return float(y), float(h)
    return y, h


def elastic_moduli(table: MaterialTable, theta):
    """Bulk and shear moduli with their temperature derivatives."""
    E, dE = eval_param_slope(table, "E", theta)
    nu, dnu = eval_param_slope(table, "nu", theta)
    kappa = E / (3.0 * (1.0 - 2.0 * nu))
    dkappa = (dE * (1.0 - 2.0 * nu) + 2.0 * E * dnu) / (3.0 * (1.0 - 2.0 * nu) ** 2)
    mu = E / (2.0 * (1.0 + nu))
    dmu = (dE * (1.0 + nu) - E * dnu) / (2.0 * (1.0 + nu) ** 2)
    return kappa, dkappa, mu, dmu
