"""Strain recovery, moving-window quantities of interest, cross-sections and
snapshot files."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .element import GAUSS, geometry, shape_functions
from .mesh import StripMesh

QOI_COLUMNS = (
    "time",
    "roi_mean_eyy",
    "gw_max_eyy",
    "gw_mean_eyy",
    "roi_volume_max_eyy",
    "roi_mean_exx",
    "gw_max_exx",
    "gw_mean_exx",
    "roi_volume_max_exx",
)
VOIGT = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))
ROI_PRESETS = {"physical": (4.8, 1.46), "full_fov": (9.0, 1.46)}
EPS_BOX = 1e-9  # closed-box tolerance in mm


class RoiError(ValueError):
    pass


# --------------------------------------------------------------------------- strains


def displacement_gradient(grad: np.ndarray, u_e: np.ndarray) -> np.ndarray:
    """``H[i, j] = d u_i / d x_j`` at points, from shape gradients ``(ne, g, 8, 3)``."""
    return np.einsum("egaj,eai->egij", grad, u_e)


def green_lagrange(H: np.ndarray) -> np.ndarray:
    """``E = (H + H^T + H^T H) / 2`` for displacement gradients ``(.., 3, 3)``."""
    Ht = np.swapaxes(H, -1, -2)
    return 0.5 * (H + Ht + Ht @ H)


def to_voigt(T: np.ndarray) -> np.ndarray:
    """Tensor components ``(xx, yy, zz, xy, yz, xz)`` (no engineering factor)."""
    return np.stack([T[..., i, j] for i, j in VOIGT], axis=-1)


def gauss_strain(mesh: StripMesh, u_nodes: np.ndarray, geo=None):
    """Green-Lagrange strain (Voigt, tensor shear) at volume Gauss points and the geometry."""
    if geo is None:
        geo = geometry(mesh.coords[mesh.conn])
    H = displacement_gradient(geo.grad, np.asarray(u_nodes)[mesh.conn])
    return to_voigt(green_lagrange(H)), geo


def nodal_average(mesh: StripMesh, values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Volume-weighted average of Gauss values ``(ne, g, ...)`` onto nodes.

    Each element contributes its weighted Gauss mean to its eight nodes,
    weighted by the element volume.
    """
    values = np.asarray(values, float)
    tail = values.shape[2:]
    vol = weights.sum(axis=1)
    emean = np.einsum("eg,eg...->e...", weights, values) / vol.reshape((-1,) + (1,) * len(tail))
    flat = emean.reshape(mesh.n_elems, -1)
    num = np.zeros((mesh.n_nodes, flat.shape[1]))
    den = np.bincount(mesh.conn.ravel(), weights=np.repeat(vol, 8), minlength=mesh.n_nodes)
    for c in range(flat.shape[1]):
        num[:, c] = np.bincount(
            mesh.conn.ravel(), weights=np.repeat(vol * flat[:, c], 8), minlength=mesh.n_nodes
        )
    return (num / den[:, None]).reshape((mesh.n_nodes,) + tail)


def nodal_strain(mesh: StripMesh, u_nodes: np.ndarray) -> np.ndarray:
    E, geo = gauss_strain(mesh, u_nodes)
    return nodal_average(mesh, E, geo.wdet)


# top-face quadrature: 2 x 2 Gauss points on the zeta = +1 face
_TOP_XI = np.column_stack([GAUSS[:4, 0], GAUSS[:4, 1], np.ones(4)])
_TOP_N, _TOP_DN = shape_functions(_TOP_XI)


def top_elements(mesh: StripMesh) -> np.ndarray:
    i, j = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny), indexing="xy")
    return mesh.elem_id(i.ravel(), j.ravel(), np.full(i.size, mesh.nz - 1))


@dataclass
class SurfacePoints:
    xy: np.ndarray  # (m, 2)
    area: np.ndarray  # (m,)
    E: np.ndarray  # (m, 6) Voigt, tensor shear


def surface_strain(mesh: StripMesh, u_nodes: np.ndarray) -> SurfacePoints:
    """Green-Lagrange strain at the 2 x 2 Gauss points of every top face."""
    elems = top_elements(mesh)
    X = mesh.coords[mesh.conn[elems]]  # (ne, 8, 3)
    J = np.einsum("eai,gaj->egij", X, _TOP_DN)
    grad = np.einsum("gaj,egji->egai", _TOP_DN, np.linalg.inv(J))
    H = displacement_gradient(grad, np.asarray(u_nodes)[mesh.conn[elems]])
    E = to_voigt(green_lagrange(H))
    xg = np.einsum("ga,eai->egi", _TOP_N, X)
    area = np.linalg.norm(np.cross(J[..., :, 0], J[..., :, 1]), axis=-1)  # unit Gauss weights
    return SurfacePoints(xg[..., :2].reshape(-1, 2), area.ravel(), E.reshape(-1, 6))


# --------------------------------------------------------------------------- ROI


@dataclass(frozen=True)
class RoiSpec:
    """Moving evaluation window trailing the pool centre on the top surface.

    The ROI spans ``[c - offset - width, c - offset]`` along x and ``height``
    centred on ``y_center`` (default: mid-width of the strip).  The green
    window ``gw = (dx, dy, w, h)`` is given relative to the ROI's lower-left
    corner and has no default.
    """

    gw: tuple
    width: float = ROI_PRESETS["physical"][0]
    height: float = ROI_PRESETS["physical"][1]
    offset: float = 3.75
    y_center: float | None = None

    def __post_init__(self):
        if self.gw is None or len(self.gw) != 4:
            raise RoiError("green window must be given as (dx, dy, w, h)")
        dx, dy, w, h = map(float, self.gw)
        object.__setattr__(self, "gw", (dx, dy, w, h))
        if self.width <= 0 or self.height <= 0:
            raise RoiError("ROI size must be positive")
        if self.offset <= 0:
            raise RoiError("ROI offset must be positive")
        if w <= 0 or h <= 0 or dx < 0 or dy < 0 or dx + w > self.width + EPS_BOX or dy + h > self.height + EPS_BOX:
            raise RoiError("green window must lie inside the ROI")

    @classmethod
    def preset(cls, name: str, gw, **kw) -> "RoiSpec":
        if name not in ROI_PRESETS:
            raise RoiError(f"unknown ROI preset {name!r}; choose from {sorted(ROI_PRESETS)}")
        w, h = ROI_PRESETS[name]
        return cls(gw=gw, width=w, height=h, **kw)

    def roi_box(self, center_x: float, Ly: float):
        yc = Ly / 2 if self.y_center is None else self.y_center
        x1 = center_x - self.offset
        return (x1 - self.width, x1, yc - self.height / 2, yc + self.height / 2)

    def gw_box(self, center_x: float, Ly: float):
        x0, _, y0, _ = self.roi_box(center_x, Ly)
        dx, dy, w, h = self.gw
        return (x0 + dx, x0 + dx + w, y0 + dy, y0 + dy + h)


def in_box(xy: np.ndarray, box) -> np.ndarray:
    x0, x1, y0, y1 = box
    return (
        (xy[:, 0] >= x0 - EPS_BOX)
        & (xy[:, 0] <= x1 + EPS_BOX)
        & (xy[:, 1] >= y0 - EPS_BOX)
        & (xy[:, 1] <= y1 + EPS_BOX)
    )


def check_roi(spec: RoiSpec, mesh: StripMesh, center_x: float) -> None:
    Lx, Ly, _ = mesh.lengths
    x0, x1, y0, y1 = spec.roi_box(center_x, Ly)
    if x0 < -EPS_BOX or x1 > Lx + EPS_BOX or y0 < -EPS_BOX or y1 > Ly + EPS_BOX:
        raise RoiError(
            f"ROI [{x0:.4g}, {x1:.4g}] x [{y0:.4g}, {y1:.4g}] mm lies outside the strip"
        )


@dataclass
class QoiRecord:
    time: float
    roi_mean_eyy: float
    gw_max_eyy: float
    gw_mean_eyy: float
    roi_volume_max_eyy: float
    roi_mean_exx: float
    gw_max_exx: float
    gw_mean_exx: float
    roi_volume_max_exx: float

    def as_row(self) -> list:
        return [getattr(self, c) for c in QOI_COLUMNS]

    @classmethod
    def empty(cls, t: float) -> "QoiRecord":
        return cls(t, *([np.nan] * (len(QOI_COLUMNS) - 1)))


def _mean(v, w):
    return float(np.sum(v * w) / np.sum(w)) if v.size else np.nan


def _max(v):
    return float(v.max()) if v.size else np.nan


def qoi(
    mesh: StripMesh,
    u_nodes: np.ndarray,
    t: float,
    center_x: float,
    spec: RoiSpec,
    surface: SurfacePoints | None = None,
    volume=None,
) -> QoiRecord:
    """Surface means and maxima of E_yy and E_xx in the ROI and green window.

    Means are area weighted over top-face Gauss points inside the window; the
    volume maximum runs over all Gauss points whose footprint lies in the ROI,
    including the surface points.
    """
    check_roi(spec, mesh, center_x)
    Ly = mesh.lengths[1]
    sp_ = surface_strain(mesh, u_nodes) if surface is None else surface
    if volume is None:
        E, geo = gauss_strain(mesh, u_nodes)
        volume = (geo.xg[..., :2].reshape(-1, 2), E.reshape(-1, 6))
    roi = in_box(sp_.xy, spec.roi_box(center_x, Ly))
    gw = in_box(sp_.xy, spec.gw_box(center_x, Ly))
    vol = in_box(volume[0], spec.roi_box(center_x, Ly))
    out = [t]
    for comp in (1, 0):  # yy then xx
        e = sp_.E[:, comp]
        ev = np.concatenate([volume[1][vol, comp], e[roi]])
        out += [
            _mean(e[roi], sp_.area[roi]),
            _max(e[gw]),
            _mean(e[gw], sp_.area[gw]),
            _max(ev),
        ]
    return QoiRecord(*out)


def write_qoi_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QOI_COLUMNS)
        for r in records:
            w.writerow([repr(float(v)) for v in r.as_row()])


def read_qoi_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RoiError(f"{path}: empty QoI file")
    header, data = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in data]) for i, h in enumerate(header)}


# --------------------------------------------------------------------------- fluctuation strain


class FluctuationTracker:
    """Entry displacements of top-surface nodes for re-referenced strains.

    A node's displacement is recorded the first time it lies inside the ROI;
    the fluctuation strain uses displacements relative to those values, so
    every point starts from zero strain when it is first covered.
    """

    def __init__(self, mesh: StripMesh, spec: RoiSpec):
        self.mesh = mesh
        self.spec = spec
        self.nodes = np.flatnonzero(mesh.faces["z+"])
        self.entry = np.full((mesh.n_nodes, 3), np.nan)
        self.entered = np.zeros(mesh.n_nodes, bool)

    def update(self, u_nodes: np.ndarray, center_x: float) -> int:
        xy = self.mesh.coords[self.nodes, :2]
        box = self.spec.roi_box(center_x, self.mesh.lengths[1])
        new = self.nodes[in_box(xy, box) & ~self.entered[self.nodes]]
        self.entry[new] = u_nodes[new]
        self.entered[new] = True
        return new.size

    def field(self, u_nodes: np.ndarray, center_x: float):
        """In-plane Green-Lagrange strain of the re-referenced displacement.

        Returns ``(xy, E)`` with ``E`` columns ``(exx, eyy, exy)`` at the 2 x 2
        Gauss points of top faces whose four nodes have entered and whose
        points lie in the current ROI.
        """
        mesh = self.mesh
        elems = top_elements(mesh)
        top = mesh.conn[elems][:, 4:]  # corners of the zeta = +1 face
        ok = self.entered[top].all(axis=1)
        top = top[ok]
        if top.size == 0:
            return np.zeros((0, 2)), np.zeros((0, 3))
        w = (u_nodes[top] - self.entry[top])[..., :2]  # (m, 4, 2) in-plane
        X = mesh.coords[top][..., :2]
        g = GAUSS[:4, :2]
        xi = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
        N = 0.25 * (1 + g[:, None, 0] * xi[:, 0]) * (1 + g[:, None, 1] * xi[:, 1])
        dN = np.stack(
            [
                0.25 * xi[:, 0] * (1 + g[:, None, 1] * xi[:, 1]),
                0.25 * xi[:, 1] * (1 + g[:, None, 0] * xi[:, 0]),
            ],
            axis=-1,
        )  # (4 gp, 4 nodes, 2)
        J = np.einsum("eai,gaj->egij", X, dN)
        grad = np.einsum("gaj,egji->egai", dN, np.linalg.inv(J))
        H = np.einsum("egaj,eai->egij", grad, w)
        E2 = green_lagrange(H)
        xy = np.einsum("ga,eai->egi", N, X).reshape(-1, 2)
        E = np.stack([E2[..., 0, 0], E2[..., 1, 1], E2[..., 0, 1]], axis=-1).reshape(-1, 3)
        keep = in_box(xy, self.spec.roi_box(center_x, mesh.lengths[1]))
        return xy[keep], E[keep]

    def state(self) -> dict:
        return {"fluct_entry": self.entry.copy(), "fluct_entered": self.entered.copy()}

    def load(self, state: dict) -> None:
        self.entry = np.array(state["fluct_entry"], float)
        self.entered = np.array(state["fluct_entered"], bool)


# --------------------------------------------------------------------------- cross-section


def cross_section(mesh: StripMesh, x0: float, nodal: dict) -> dict:
    """Nodal fields on the node plane nearest to ``x0``; arrays shaped ``(nz+1, ny+1)``."""
    hx = mesh.h[0]
    i = int(np.clip(np.rint(x0 / hx), 0, mesh.nx))
    j, k = np.meshgrid(np.arange(mesh.ny + 1), np.arange(mesh.nz + 1), indexing="xy")
    nodes = mesh.node_id(np.full(j.shape, i), j, k)
    out = {"x": float(mesh.coords[nodes[0, 0], 0]), "y": mesh.coords[nodes, 1], "z": mesh.coords[nodes, 2]}
    for name, v in nodal.items():
        out[name] = np.asarray(v)[nodes]
    return out


def write_cross_section_csv(section: dict, path, names=("theta", "E_yy", "alpha")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", *names])
        for idx in np.ndindex(section["y"].shape):
            w.writerow(
                [repr(section["x"]), repr(float(section["y"][idx])), repr(float(section["z"][idx]))]
                + [repr(float(section[n][idx])) for n in names]
            )


# --------------------------------------------------------------------------- snapshots


def write_vtk(path, mesh: StripMesh, point_data: dict, cell_data: dict | None = None, title="ctwsim") -> None:
    """Legacy ASCII unstructured-grid file with hexahedral cells.

    Point arrays of shape ``(n,)`` become SCALARS, ``(n, 3)`` VECTORS and
    ``(n, 3, 3)`` TENSORS; cell arrays must be scalar.  Values are written
    with 17 significant digits so they parse back exactly.
    """
    f = "{:.17g}".format
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [" ".join(f(v) for v in p) for p in mesh.coords]
    lines.append(f"CELLS {mesh.n_elems} {9 * mesh.n_elems}")
    lines += ["8 " + " ".join(str(n) for n in c) for c in mesh.conn]
    lines.append(f"CELL_TYPES {mesh.n_elems}")
    lines += ["12"] * mesh.n_elems
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, v in point_data.items():
        v = np.asarray(v, float)
        if v.ndim == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f(a) for a in v]
        elif v.shape[1:] == (3,):
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(f(a) for a in row) for row in v]
        elif v.shape[1:] == (3, 3):
            lines.append(f"TENSORS {name} double")
            lines += [" ".join(f(a) for a in row.ravel()) for row in v]
        else:
            raise ValueError(f"unsupported point array shape {v.shape} for {name}")
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_elems}")
        for name, v in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f(a) for a in np.asarray(v, float)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> dict:
    """Parse files written by :func:`write_vtk`."""
    tok = Path(path).read_text().split("\n")
    pos = 4
    out = {"point_data": {}, "cell_data": {}}

    def take(n):
        nonlocal pos
        rows = tok[pos : pos + n]
        pos += n
        return rows

    n_pts = int(tok[pos].split()[1])
    pos += 1
    out["points"] = np.array([[float(a) for a in r.split()] for r in take(n_pts)])
    n_cells = int(tok[pos].split()[1])
    pos += 1
    out["cells"] = np.array([[int(a) for a in r.split()[1:]] for r in take(n_cells)])
    pos += 1 + n_cells  # CELL_TYPES block
    target, count = None, 0
    while pos < len(tok) and tok[pos].strip():
        head = tok[pos].split()
        pos += 1
        if head[0] == "POINT_DATA":
            target, count = out["point_data"], int(head[1])
        elif head[0] == "CELL_DATA":
            target, count = out["cell_data"], int(head[1])
        elif head[0] == "SCALARS":
            pos += 1  # lookup table line
            target[head[1]] = np.array([float(a) for a in take(count)])
        elif head[0] == "VECTORS":
            target[head[1]] = np.array([[float(a) for a in r.split()] for r in take(count)])
        elif head[0] == "TENSORS":
            target[head[1]] = np.array(
                [[float(a) for a in r.split()] for r in take(count)]
            ).reshape(count, 3, 3)
    return out


def voigt_to_tensor(v: np.ndarray) -> np.ndarray:
    T = np.empty(v.shape[:-1] + (3, 3))
    for c, (i, j) in enumerate(VOIGT):
        T[..., i, j] = T[..., j, i] = v[..., c]
    return T
