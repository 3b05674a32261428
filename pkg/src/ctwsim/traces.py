"""Time-stamped Dirichlet traces on the lateral faces ``y = 0`` and ``y = Ly``.

File format (plain text, one record per line)::

    # ctwsim-traces 1
    # units: x z ux uy uz in mm, theta in degC, time in s
    lattice <n_x> <n_z>
    frames <n_frames>
    dt_src <seconds>
    frame <t>
    face x z ux uy uz theta
    y- <x> <z> <ux> <uy> <uz> <theta>
    ...

Every frame block lists the ``y-`` face then the ``y+`` face, each as the
``n_x * n_z`` lattice in z-major order (x fastest).  Times and coordinates
are written with 6 decimals, displacements with 9 and temperatures with 6,
so writing a loaded file reproduces it byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import Constraints
from .mesh import DOFS_PER_NODE, StripMesh

FACES = ("y-", "y+")
MAGIC = "# ctwsim-traces 1"
UNITS = "# units: x z ux uy uz in mm, theta in degC, time in s"
FMT_T = "{:.6f}"
FMT_X = "{:.6f}"
FMT_U = "{:.9f}"
FMT_TH = "{:.6f}"


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryTraceSet:
    times: np.ndarray  # (n_frames,)
    x: np.ndarray  # (n_x,) lattice abscissae
    z: np.ndarray  # (n_z,)
    values: dict = field(repr=False)  # face -> (n_frames, n_z, n_x, 4): ux, uy, uz, theta
    dt_src: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.ndim != 1 or t.size < 1:
            raise TraceError("at least one frame is required")
        if np.any(np.diff(t) <= 0):
            raise TraceError("frame times are non-monotone (must be strictly increasing)")
        for name, v in (("x", self.x), ("z", self.z)):
            if np.any(np.diff(v) <= 0):
                raise TraceError(f"lattice {name} coordinates must be strictly increasing")
        shape = (t.size, len(self.z), len(self.x), 4)
        for f in FACES:
            if f not in self.values:
                raise TraceError(f"missing face {f}")
            if self.values[f].shape != shape:
                raise TraceError(f"face {f} data has shape {self.values[f].shape}, expected {shape}")

    @property
    def n_frames(self) -> int:
        return len(self.times)


# --------------------------------------------------------------------------- text I/O


def format_traces(tr: BoundaryTraceSet) -> str:
    lines = [
        MAGIC,
        UNITS,
        f"lattice {len(tr.x)} {len(tr.z)}",
        f"frames {tr.n_frames}",
        f"dt_src {FMT_T.format(tr.dt_src)}",
    ]
    X, Z = np.meshgrid(tr.x, tr.z)
    xs = [FMT_X.format(v) for v in X.ravel()]
    zs = [FMT_X.format(v) for v in Z.ravel()]
    for n, t in enumerate(tr.times):
        lines.append(f"frame {FMT_T.format(t)}")
        lines.append("face x z ux uy uz theta")
        for f in FACES:
            v = tr.values[f][n].reshape(-1, 4)
            for xi, zi, row in zip(xs, zs, v):
                lines.append(
                    f"{f} {xi} {zi} {FMT_U.format(row[0])} {FMT_U.format(row[1])} "
                    f"{FMT_U.format(row[2])} {FMT_TH.format(row[3])}"
                )
    return "\n".join(lines) + "\n"


def write_traces(tr: BoundaryTraceSet, path) -> None:
    Path(path).write_text(format_traces(tr))


def _header(lines, i, key, n_fields):
    parts = lines[i].split()
    if not parts or parts[0] != key or len(parts) != n_fields + 1:
        raise TraceError(f"line {i + 1}: expected '{key}' with {n_fields} value(s)")
    return parts[1:]


def parse_traces(text: str) -> BoundaryTraceSet:
    if text.split("\n", 1)[0].strip() != MAGIC:
        raise TraceError(f"not a trace file: first line must be {MAGIC!r}")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) < 3:
        raise TraceError("truncated trace file header")
    nx, nz = map(int, _header(lines, 0, "lattice", 2))
    nf = int(_header(lines, 1, "frames", 1)[0])
    dt_src = float(_header(lines, 2, "dt_src", 1)[0])
    per_face = nx * nz
    block = 2 + 2 * per_face
    if len(lines) - 3 != nf * block:
        raise TraceError(
            f"ragged lattice: expected {nf} frame blocks of {2 * per_face} rows, "
            f"found {len(lines) - 3} data lines"
        )
    times = np.empty(nf)
    values = {f: np.empty((nf, nz, nx, 4)) for f in FACES}
    coords = None
    for n in range(nf):
        base = 3 + n * block
        times[n] = float(_header(lines, base, "frame", 1)[0])
        if lines[base + 1].split() != "face x z ux uy uz theta".split():
            raise TraceError(f"line {base + 2}: missing column header")
        rows = [lines[base + 2 + r].split() for r in range(2 * per_face)]
        for r, parts in enumerate(rows):
            if len(parts) != 7:
                raise TraceError(
                    f"frame {n} row {r}: missing fields (expected 7 columns, got {len(parts)})"
                )
        faces = [p[0] for p in rows]
        expect = [FACES[0]] * per_face + [FACES[1]] * per_face
        if faces != expect:
            raise TraceError(f"frame {n}: face labels out of order or unknown")
        data = np.array([[float(v) for v in p[1:]] for p in rows])
        xz = data[:, :2]
        if coords is None:
            coords = xz[:per_face]
        for f in range(2):
            if not np.array_equal(xz[f * per_face : (f + 1) * per_face], coords):
                raise TraceError(f"frame {n}: lattice coordinates differ between frames or faces")
            values[FACES[f]][n] = data[f * per_face : (f + 1) * per_face, 2:].reshape(nz, nx, 4)
    grid = coords.reshape(nz, nx, 2)
    x, z = grid[0, :, 0], grid[:, 0, 1]
    if not (np.all(grid[:, :, 0] == x) and np.all(grid[:, :, 1] == z[:, None])):
        raise TraceError("ragged lattice: samples do not form a tensor-product grid")
    return BoundaryTraceSet(times, x, z, values, dt_src)


def load_traces(path) -> BoundaryTraceSet:
    return parse_traces(Path(path).read_text())


# --------------------------------------------------------------------------- evaluation


def _bracket(knots, q):
    """Segment index and weight of the right knot, clamped to the knot range."""
    q = np.clip(q, knots[0], knots[-1])
    if knots.size == 1:
        return np.zeros(np.shape(q), int), np.zeros(np.shape(q))
    i = np.clip(np.searchsorted(knots, q, side="right") - 1, 0, knots.size - 2)
    w = (q - knots[i]) / (knots[i + 1] - knots[i])
    return i, w


def _frame_index(times, t):
    """Bracketing frames and weight for time ``t`` (clamped outside)."""
    if t <= times[0] or times.size == 1:
        return 0, 0, 0.0
    if t >= times[-1]:
        return times.size - 1, times.size - 1, 0.0
    n = int(np.searchsorted(times, t, side="right") - 1)
    return n, n + 1, (t - times[n]) / (times[n + 1] - times[n])


def _bilinear(field, ix, wx, iz, wz):
    nx = field.shape[1]
    ix1 = np.minimum(ix + 1, nx - 1)
    iz1 = np.minimum(iz + 1, field.shape[0] - 1)
    wx, wz = wx[..., None], wz[..., None]
    return (
        (1 - wz) * ((1 - wx) * field[iz, ix] + wx * field[iz, ix1])
        + wz * ((1 - wx) * field[iz1, ix] + wx * field[iz1, ix1])
    )


def eval_trace(tr: BoundaryTraceSet, face: str, x, z, t: float) -> np.ndarray:
    """``(ux, uy, uz, theta)`` at points ``(x, z)``: bilinear in space, linear in time."""
    if face not in FACES:
        raise TraceError(f"unknown face {face!r}; expected one of {FACES}")
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    ix, wx = _bracket(np.asarray(tr.x), x)
    iz, wz = _bracket(np.asarray(tr.z), z)
    n0, n1, w = _frame_index(np.asarray(tr.times), float(t))
    v = tr.values[face]
    a = _bilinear(v[n0], ix, wx, iz, wz)
    if w == 0.0:
        return a
    b = _bilinear(v[n1], ix, wx, iz, wz)
    return (1 - w) * a + w * b


def trace_constraints(tr: BoundaryTraceSet, mesh: StripMesh, t: float) -> Constraints:
    """All four DOFs of every lateral-face node prescribed from the traces."""
    Lx, _, Lz = mesh.lengths
    tol = 1e-9 * max(Lx, Lz)
    if tr.x[0] > tol or tr.x[-1] < Lx - tol or tr.z[0] > tol or tr.z[-1] < Lz - tol:
        raise TraceError(
            f"trace lattice [{tr.x[0]:g}, {tr.x[-1]:g}] x [{tr.z[0]:g}, {tr.z[-1]:g}] "
            f"does not cover the strip [0, {Lx:g}] x [0, {Lz:g}]"
        )
    dofs, vals = [], []
    for f in FACES:
        nodes = np.flatnonzero(mesh.faces[f])
        xyz = mesh.coords[nodes]
        v = eval_trace(tr, f, xyz[:, 0], xyz[:, 2], t)
        dofs.append((DOFS_PER_NODE * nodes[:, None] + np.arange(DOFS_PER_NODE)).ravel())
        vals.append(v.ravel())
    return Constraints(np.concatenate(dofs).astype(np.int64), np.concatenate(vals))


def clamped_constraints(mesh: StripMesh) -> Constraints:
    """Lateral faces mechanically fixed, thermally free."""
    nodes = np.flatnonzero(mesh.faces["y-"] | mesh.faces["y+"])
    dofs = (DOFS_PER_NODE * nodes[:, None] + np.arange(3)).ravel()
    return Constraints(dofs.astype(np.int64), np.zeros(dofs.size))


# --------------------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class TraceParams:
    """Synthetic trace schedule.

    The global strain is the relative face separation over ``gauge``
    (default: the strip width); each face moves by half of it.
    """

    Lx: float
    Ly: float
    Lz: float
    n_x: int = 21
    n_z: int = 2
    t_end: float = 2.4
    dt_src: float = 0.01
    t_load: float = 1.9
    strain_rate: float = 0.06  # 1/s
    max_strain: float = 0.025
    gauge: float | None = None
    theta0: float = 20.0
    # optional thermal profile following the pool, off when amplitude is 0
    thermal_amplitude: float = 0.0
    thermal_length: float = 5.0
    pool_x0: float = 5.0
    pool_v: float = 1000.0 / 60.0
    t_heat: float = 0.1

    @property
    def gauge_length(self) -> float:
        return self.Ly if self.gauge is None else self.gauge

    @property
    def t_plateau(self) -> float:
        return self.t_load + self.max_strain / self.strain_rate


def global_strain(p: TraceParams, t):
    return np.minimum(p.strain_rate * np.maximum(np.asarray(t, float) - p.t_load, 0.0), p.max_strain)


def generate_traces(p: TraceParams, path=None) -> BoundaryTraceSet:
    n_src = int(np.ceil(p.t_end / p.dt_src - 1e-9))
    times = np.concatenate([np.arange(n_src + 1) * p.dt_src, [p.t_load, p.t_plateau]])
    times = np.unique(np.round(times[(times >= 0) & (times <= p.t_end + 1e-12)], 6))
    x = np.round(np.linspace(0.0, p.Lx, p.n_x), 6)
    z = np.round(np.linspace(0.0, p.Lz, p.n_z), 6)
    eps = global_strain(p, times)
    values = {}
    for f, sign in zip(FACES, (-1.0, 1.0)):
        v = np.zeros((times.size, z.size, x.size, 4))
        v[..., 1] = (sign * 0.5 * eps * p.gauge_length)[:, None, None]
        th = np.full((times.size, x.size), p.theta0)
        if p.thermal_amplitude:
            xc = p.pool_x0 + p.pool_v * np.maximum(times - p.t_heat, 0.0)
            th += p.thermal_amplitude * np.exp(-(((x[None, :] - xc[:, None]) / p.thermal_length) ** 2))
        v[..., 3] = th[:, None, :]
        v[..., :3] = np.round(v[..., :3], 9) + 0.0  # no negative zeros
        v[..., 3] = np.round(v[..., 3], 6)
        values[f] = v
    tr = BoundaryTraceSet(times, x, z, values, float(np.round(p.dt_src, 6)))
    if path is not None:
        write_traces(tr, path)
    return tr
