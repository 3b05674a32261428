"""Structured hexahedral strip mesh, DOF numbering and box decompositions.

Nodes are numbered lexicographically with x fastest, then y, then z.  Each
node carries four unknowns interleaved as ``(ux, uy, uz, theta)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

DOFS_PER_NODE = 4

# reference corner ordering of the 8-node brick (counter-clockwise bottom, then top)
HEX_CORNERS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ],
    dtype=np.int64,
)

FACE_NAMES = ("x-", "x+", "y-", "y+", "z-", "z+")


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class StripMesh:
    """Uniform brick mesh of the box ``[0, Lx] x [0, Ly] x [0, Lz]`` (mm)."""

    nx: int
    ny: int
    nz: int
    lengths: tuple[float, float, float]
    coords: np.ndarray = field(repr=False)
    conn: np.ndarray = field(repr=False)
    faces: dict = field(repr=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def node_shape(self) -> tuple[int, int, int]:
        return (self.nx + 1, self.ny + 1, self.nz + 1)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elems(self) -> int:
        return self.conn.shape[0]

    @property
    def n_dofs(self) -> int:
        return DOFS_PER_NODE * self.n_nodes

    @property
    def h(self) -> tuple[float, float, float]:
        return (
            self.lengths[0] / self.nx,
            self.lengths[1] / self.ny,
            self.lengths[2] / self.nz,
        )

    def node_id(self, i, j, k):
        nxn, nyn, _ = self.node_shape
        return np.asarray(i) + nxn * (np.asarray(j) + nyn * np.asarray(k))

    def node_ijk(self, nodes) -> np.ndarray:
        nxn, nyn, _ = self.node_shape
        nodes = np.asarray(nodes)
        return np.stack([nodes % nxn, (nodes // nxn) % nyn, nodes // (nxn * nyn)], axis=-1)

    def elem_id(self, i, j, k):
        return np.asarray(i) + self.nx * (np.asarray(j) + self.ny * np.asarray(k))

    def elem_ijk(self, elems) -> np.ndarray:
        elems = np.asarray(elems)
        return np.stack(
            [elems % self.nx, (elems // self.nx) % self.ny, elems // (self.nx * self.ny)], axis=-1
        )

    def dof(self, nodes, comp) -> np.ndarray:
        return DOFS_PER_NODE * np.asarray(nodes) + comp

    def elem_dofs(self, elems=None) -> np.ndarray:
        """Interleaved global DOFs of elements, shape ``(n, 32)``."""
        conn = self.conn if elems is None else self.conn[elems]
        return (DOFS_PER_NODE * conn[:, :, None] + np.arange(DOFS_PER_NODE)).reshape(len(conn), -1)

    def boundary_nodes(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        for m in self.faces.values():
            mask |= m
        return np.flatnonzero(mask)

    def node_adjacency(self) -> sp.csr_matrix:
        """Boolean node graph: two nodes are adjacent when they share an element."""
        rows = np.repeat(self.conn, 8, axis=1).ravel()
        cols = np.tile(self.conn, (1, 8)).ravel()
        g = sp.coo_matrix(
            (np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(self.n_nodes,) * 2
        ).tocsr()
        g.data[:] = 1
        return g


def build_mesh(nx: int, ny: int, nz: int, Lx: float, Ly: float, Lz: float) -> StripMesh:
    for name, n in (("nx", nx), ("ny", ny), ("nz", nz)):
        if int(n) != n or n < 1:
            raise MeshError(f"{name} must be a positive integer, got {n!r}")
    for name, length in (("Lx", Lx), ("Ly", Ly), ("Lz", Lz)):
        if not length > 0:
            raise MeshError(f"{name} must be positive, got {length!r}")
    nx, ny, nz = int(nx), int(ny), int(nz)

    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    zs = np.linspace(0.0, Lz, nz + 1)
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    coords = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    ek, ej, ei = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    ei, ej, ek = ei.ravel(), ej.ravel(), ek.ravel()
    nxn, nyn = nx + 1, ny + 1
    conn = np.empty((ei.size, 8), dtype=np.int64)
    for a, (di, dj, dk) in enumerate(HEX_CORNERS):
        conn[:, a] = (ei + di) + nxn * ((ej + dj) + nyn * (ek + dk))

    nk, nj, ni = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
    ni, nj, nk = ni.ravel(), nj.ravel(), nk.ravel()
    faces = {
        "x-": ni == 0,
        "x+": ni == nx,
        "y-": nj == 0,
        "y+": nj == ny,
        "z-": nk == 0,
        "z+": nk == nz,
    }
    return StripMesh(nx, ny, nz, (float(Lx), float(Ly), float(Lz)), coords, conn, faces)


def _split(n: int, p: int) -> np.ndarray:
    """Slab boundaries of a balanced split of ``n`` cells into ``p`` parts."""
    sizes = np.full(p, n // p)
    sizes[: n % p] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


@dataclass(frozen=True)
class InterfaceComponent:
    nodes: np.ndarray
    owners: tuple[int, ...]
    kind: str  # "vertex", "edge" or "face"


@dataclass(frozen=True)
class BoxDecomposition:
    mesh: StripMesh = field(repr=False)
    parts: tuple[int, int, int]
    overlap: int
    bounds: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    elem_sub: np.ndarray = field(repr=False)
    boxes: list = field(repr=False)  # non-overlapping element index boxes
    overlap_boxes: list = field(repr=False)

    @property
    def n_sub(self) -> int:
        return int(np.prod(self.parts))

    def sub_index(self, a, b, c) -> int:
        px, py, _ = self.parts
        return a + px * (b + py * c)

    def elements(self, s: int) -> np.ndarray:
        return _box_elements(self.mesh, self.boxes[s])

    def overlap_elements(self, s: int) -> np.ndarray:
        return _box_elements(self.mesh, self.overlap_boxes[s])

    def overlap_nodes(self, s: int) -> np.ndarray:
        return _box_nodes(self.mesh, self.overlap_boxes[s])

    def node_owners(self) -> list[tuple[int, ...]]:
        """Sorted tuple of subdomains whose own elements touch each node."""
        mesh = self.mesh
        axis_owners = []
        for ax, n in enumerate(mesh.shape):
            b = self.bounds[ax]
            own = []
            for i in range(n + 1):
                own.append(
                    tuple(p for p in range(len(b) - 1) if b[p] <= i <= b[p + 1])
                )
            axis_owners.append(own)
        ijk = mesh.node_ijk(np.arange(mesh.n_nodes))
        out = []
        for i, j, k in ijk:
            out.append(
                tuple(
                    sorted(
                        self.sub_index(a, b, c)
                        for c in axis_owners[2][k]
                        for b in axis_owners[1][j]
                        for a in axis_owners[0][i]
                    )
                )
            )
        return out

    def owner_count(self) -> np.ndarray:
        """Number of owning subdomains per node (vectorised)."""
        mesh = self.mesh
        ijk = mesh.node_ijk(np.arange(mesh.n_nodes))
        count = np.ones(mesh.n_nodes, dtype=np.int64)
        for ax in range(3):
            interior = self.bounds[ax][1:-1]
            count *= 1 + np.isin(ijk[:, ax], interior)
        return count

    def node_owner(self) -> np.ndarray:
        """Unique owner per node, ties resolved to the lowest subdomain index."""
        mesh = self.mesh
        ijk = mesh.node_ijk(np.arange(mesh.n_nodes))
        idx = []
        for ax, n in enumerate(mesh.shape):
            b = self.bounds[ax]
            # lowest slab whose closed node range contains i
            slab = np.searchsorted(b, ijk[:, ax], side="left") - 1
            slab = np.clip(slab, 0, len(b) - 2)
            idx.append(slab)
        return self.sub_index(idx[0], idx[1], idx[2])


def _box_elements(mesh: StripMesh, box) -> np.ndarray:
    (i0, i1), (j0, j1), (k0, k1) = box
    K, J, I = np.meshgrid(np.arange(k0, k1), np.arange(j0, j1), np.arange(i0, i1), indexing="ij")
    return mesh.elem_id(I.ravel(), J.ravel(), K.ravel())


def _box_nodes(mesh: StripMesh, box) -> np.ndarray:
    (i0, i1), (j0, j1), (k0, k1) = box
    K, J, I = np.meshgrid(
        np.arange(k0, k1 + 1), np.arange(j0, j1 + 1), np.arange(i0, i1 + 1), indexing="ij"
    )
    return mesh.node_id(I.ravel(), J.ravel(), K.ravel())


def decompose(mesh: StripMesh, px: int, py: int, pz: int, overlap_k: int = 1) -> BoxDecomposition:
    parts = (int(px), int(py), int(pz))
    for name, p, n in zip(("px", "py", "pz"), parts, mesh.shape):
        if p < 1:
            raise MeshError(f"{name} must be >= 1")
        if p > n:
            raise MeshError(f"{name}={p} exceeds the {n} elements along that axis")
    if overlap_k < 0:
        raise MeshError("overlap must be non-negative")
    bounds = tuple(_split(n, p) for n, p in zip(mesh.shape, parts))

    ijk = mesh.elem_ijk(np.arange(mesh.n_elems))
    slab = [np.searchsorted(bounds[ax], ijk[:, ax], side="right") - 1 for ax in range(3)]
    elem_sub = slab[0] + parts[0] * (slab[1] + parts[1] * slab[2])

    boxes, overlap_boxes = [], []
    for c in range(parts[2]):
        for b in range(parts[1]):
            for a in range(parts[0]):
                box = (
                    (int(bounds[0][a]), int(bounds[0][a + 1])),
                    (int(bounds[1][b]), int(bounds[1][b + 1])),
                    (int(bounds[2][c]), int(bounds[2][c + 1])),
                )
                boxes.append(box)
                # k node-sharing dilations of a box are the box grown by k cells
                overlap_boxes.append(
                    tuple(
                        (max(lo - overlap_k, 0), min(hi + overlap_k, n))
                        for (lo, hi), n in zip(box, mesh.shape)
                    )
                )
    return BoxDecomposition(mesh, parts, int(overlap_k), bounds, elem_sub, boxes, overlap_boxes)


def classify_interface(decomp: BoxDecomposition) -> list[InterfaceComponent]:
    """Group interface nodes by owning-subdomain set and split into connected pieces."""
    mesh = decomp.mesh
    if decomp.n_sub < 2:
        return []
    multi = np.flatnonzero(decomp.owner_count() > 1)
    if multi.size == 0:
        return []
    owners = decomp.node_owners()
    groups: dict[tuple[int, ...], list[int]] = {}
    for n in multi:
        groups.setdefault(owners[n], []).append(int(n))

    adj = mesh.node_adjacency()
    comps = []
    for key in sorted(groups):
        nodes = np.asarray(groups[key])
        sub = adj[nodes][:, nodes]
        ncomp, labels = connected_components(sub, directed=False)
        for c in range(ncomp):
            cn = nodes[labels == c]
            ijk = mesh.node_ijk(cn)
            dim = int(np.sum(ijk.max(axis=0) > ijk.min(axis=0)))
            comps.append(InterfaceComponent(cn, key, ("vertex", "edge", "face")[min(dim, 2)]))
    comps.sort(key=lambda c: (int(c.nodes.min()), c.owners))
    return comps
