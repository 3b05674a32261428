"""Overlapping additive Schwarz preconditioners with GDSW and RGDSW coarse spaces.

The coarse spaces are built algebraically from the assembled matrix: kernel
fields of the unconstrained operator are restricted to interface components
and extended discrete-harmonically into subdomain interiors.  The same code
handles the monolithic 4-DOF layout and a scalar (temperature-like) layout.
"""
from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import apply_constraints, subdomain_dofs
from .element import conductivity_matrix
from .krylov import SolverError, gmres_solve
from .mesh import BoxDecomposition, StripMesh, classify_interface

COARSE_VARIANTS = ("gdsw", "rgdsw", "gdsw-rgdsw")
# fill-reducing ordering for structurally symmetric FE blocks
ORDERING = "MMD_AT_PLUS_A"
RANK_TOL = 1e-10

_build_counter = itertools.count(1)


@dataclass
class SolverSettings:
    restart: int = 100
    rtol: float = 1e-6
    atol: float = 1e-10
    max_iter: int = 2000
    levels: int = 2
    coarse: str = "gdsw-rgdsw"
    overlap: int = 1
    recycling: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.levels not in (1, 2):
            raise ValueError("levels must be 1 or 2")
        if self.coarse not in COARSE_VARIANTS:
            raise ValueError(f"coarse variant must be one of {COARSE_VARIANTS}")
        if self.overlap < 0:
            raise ValueError("overlap must be non-negative")


# --------------------------------------------------------------------------- null space


def null_space(coords: np.ndarray, dofs_per_node: int, center=None) -> np.ndarray:
    """Kernel fields evaluated at nodes, shape ``(n_nodes * dofs_per_node, n_fields)``.

    Layouts: 1 (scalar) -> constant; 3 -> 3 translations + 3 linearised
    rotations; 4 -> the six rigid modes on the displacement slots plus a
    constant temperature.  Rotations are taken about ``center`` (default:
    centroid of ``coords``).
    """
    coords = np.asarray(coords, float)
    n = coords.shape[0]
    if dofs_per_node == 1:
        return np.ones((n, 1))
    if dofs_per_node not in (3, 4):
        raise ValueError("dofs_per_node must be 1, 3 or 4")
    c = coords.mean(axis=0) if center is None else np.asarray(center, float)
    x, y, z = (coords - c).T
    nf = 6 if dofs_per_node == 3 else 7
    Z = np.zeros((n, dofs_per_node, nf))
    Z[:, 0, 0] = Z[:, 1, 1] = Z[:, 2, 2] = 1.0
    Z[:, 1, 3], Z[:, 2, 3] = -z, y  # about x
    Z[:, 0, 4], Z[:, 2, 4] = z, -x  # about y
    Z[:, 0, 5], Z[:, 1, 5] = -y, x  # about z
    if dofs_per_node == 4:
        Z[:, 3, 6] = 1.0
    return Z.reshape(n * dofs_per_node, nf)


def field_blocks(dofs_per_node: int) -> list[str]:
    """Block ('u' or 'theta') of each null-space field of a layout."""
    if dofs_per_node == 1:
        return ["theta"]
    if dofs_per_node == 3:
        return ["u"] * 6
    return ["u"] * 6 + ["theta"]


def _rank_filter(cols: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Indices of columns kept by greedy Gram-Schmidt (original columns retained)."""
    keep, Q = [], []
    for j in range(cols.shape[1]):
        v = cols[:, j].copy()
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        for q in Q:
            v -= (q @ v) * q
        for q in Q:
            v -= (q @ v) * q
        nr = np.linalg.norm(v)
        if nr > tol * nv:
            keep.append(j)
            Q.append(v / nr)
    return np.asarray(keep, dtype=int)


# --------------------------------------------------------------------------- coarse space


@dataclass
class CoarseSpace:
    Phi: sp.csc_matrix  # (n_dofs, n_coarse)
    interface_dofs: np.ndarray
    labels: list = field(default_factory=list)  # (component index, field index, variant) per column

    @property
    def dim(self) -> int:
        return self.Phi.shape[1]


def _maximal_components(comps) -> tuple[list[int], list[list[int]]]:
    sets = [frozenset(c.owners) for c in comps]
    maximal = [i for i, s in enumerate(sets) if not any(s < t for t in sets)]
    ancestors = [[m for m in maximal if sets[m] >= s] for s in sets]
    for i in maximal:
        ancestors[i] = [i]
    return maximal, ancestors


def interface_values(
    decomp: BoxDecomposition,
    dofs_per_node: int,
    variant: str,
    constrained: np.ndarray | None = None,
    comps=None,
):
    """Coarse functions restricted to the interface, before extension.

    Returns ``(C, labels, gamma_dofs)`` with sparse ``C`` of shape
    ``(n_gamma_dofs, n_coarse)``.
    """
    mesh = decomp.mesh
    comps = classify_interface(decomp) if comps is None else comps
    n_dofs = mesh.n_nodes * dofs_per_node
    free = np.ones(n_dofs, bool) if constrained is None else ~np.asarray(constrained, bool)
    gamma_nodes = np.flatnonzero(decomp.owner_count() > 1)
    gamma_dofs = (dofs_per_node * gamma_nodes[:, None] + np.arange(dofs_per_node)).ravel()
    gamma_dofs = gamma_dofs[free[gamma_dofs]]
    pos = -np.ones(n_dofs, dtype=np.int64)
    pos[gamma_dofs] = np.arange(gamma_dofs.size)

    center = mesh.coords.mean(axis=0)
    blocks = field_blocks(dofs_per_node)
    if variant == "gdsw":
        use_r = {"u": False, "theta": False}
    elif variant == "rgdsw":
        use_r = {"u": True, "theta": True}
    else:
        use_r = {"u": True, "theta": False}

    _, ancestors = _maximal_components(comps)
    n_anc = np.zeros(mesh.n_nodes)
    for ci, c in enumerate(comps):
        n_anc[c.nodes] = len(ancestors[ci])
    # nodes of each maximal component's RGDSW support with their weights
    support: dict[int, list[np.ndarray]] = {}
    for ci, c in enumerate(comps):
        for a in ancestors[ci]:
            support.setdefault(a, []).append(c.nodes)

    rows, cols, vals_all, labels = [], [], [], []

    def emit(nodes, weights, field_idx, ci, tag):
        Z = null_space(mesh.coords[nodes], dofs_per_node, center)[:, field_idx]
        vals = Z * np.repeat(weights, dofs_per_node)[:, None]
        dofs = (dofs_per_node * nodes[:, None] + np.arange(dofs_per_node)).ravel()
        ok = free[dofs]
        vals, dofs = vals[ok], dofs[ok]
        for j in _rank_filter(vals):
            nz = vals[:, j] != 0.0
            rows.append(pos[dofs[nz]])
            cols.append(np.full(nz.sum(), len(labels)))
            vals_all.append(vals[nz, j])
            labels.append((ci, field_idx[j], tag))

    for blk in ("u", "theta"):
        fidx = [f for f, b in enumerate(blocks) if b == blk]
        if not fidx:
            continue
        if use_r[blk]:
            for a in sorted(support):
                nodes = np.concatenate(support[a])
                emit(nodes, 1.0 / n_anc[nodes], fidx, a, "rgdsw")
        else:
            for ci, c in enumerate(comps):
                emit(c.nodes, np.ones(c.nodes.size), fidx, ci, "gdsw")
    shape = (gamma_dofs.size, len(labels))
    if labels:
        C = sp.csc_matrix(
            (np.concatenate(vals_all), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        )
    else:
        C = sp.csc_matrix(shape)
    return C, labels, gamma_dofs


def coarse_basis(
    K: sp.spmatrix,
    decomp: BoxDecomposition,
    dofs_per_node: int,
    variant: str = "gdsw",
    constrained: np.ndarray | None = None,
    comps=None,
) -> CoarseSpace:
    """Interface values of the coarse functions extended discrete-harmonically."""
    if variant not in COARSE_VARIANTS:
        raise ValueError(f"unknown coarse variant {variant!r}")
    mesh = decomp.mesh
    n_dofs = mesh.n_nodes * dofs_per_node
    K = sp.csr_matrix(K)
    if K.shape != (n_dofs, n_dofs):
        raise ValueError("matrix size does not match the decomposition layout")
    free = np.ones(n_dofs, bool) if constrained is None else ~np.asarray(constrained, bool)
    C, labels, gamma = interface_values(decomp, dofs_per_node, variant, constrained, comps)
    nc = C.shape[1]
    if nc == 0:
        return CoarseSpace(sp.csc_matrix((n_dofs, 0)), gamma, labels)

    Cc = C.tocoo()
    rows, cols, vals = [gamma[Cc.row]], [Cc.col], [Cc.data]
    owner_count = decomp.owner_count()
    owner = decomp.node_owner()
    K_gamma = (K[:, gamma] @ C).tocsr()  # A[:, Gamma] phi_Gamma
    for s in range(decomp.n_sub):
        nodes = np.flatnonzero((owner == s) & (owner_count == 1))
        dofs = (dofs_per_node * nodes[:, None] + np.arange(dofs_per_node)).ravel()
        dofs = dofs[free[dofs]]
        if dofs.size == 0:
            continue
        rhs = K_gamma[dofs].tocsc()
        active = np.flatnonzero(np.diff(rhs.indptr))
        if active.size == 0:
            continue
        A_II = K[dofs][:, dofs].tocsc()
        try:
            lu = splu(A_II, permc_spec=ORDERING)
        except RuntimeError as exc:
            raise SolverError(f"singular interior matrix in subdomain {s}: {exc}") from exc
        ext = lu.solve(-rhs[:, active].toarray())
        r, c = np.nonzero(ext)
        rows.append(dofs[r])
        cols.append(active[c])
        vals.append(ext[r, c])
    Phi = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_dofs, nc)
    )
    return CoarseSpace(Phi, gamma, labels)


# --------------------------------------------------------------------------- preconditioner


@dataclass
class SchwarzPreconditioner:
    n: int
    dofs: list  # restriction index maps
    factors: list  # splu objects
    coarse: CoarseSpace | None
    coarse_factor: object | None
    build_id: int
    step_index: int = -1
    build_time: float = 0.0
    threads: int = 1

    @property
    def levels(self) -> int:
        return 1 if self.coarse is None else 2

    @property
    def coarse_dim(self) -> int:
        return 0 if self.coarse is None else self.coarse.dim

    def _local(self, i, r):
        return self.factors[i].solve(r[self.dofs[i]])

    def apply(self, r: np.ndarray) -> np.ndarray:
        """``M^{-1} r = Phi K0^{-1} Phi^T r + sum_i R_i^T K_i^{-1} R_i r``."""
        r = np.asarray(r, float)
        if self.threads > 1 and len(self.factors) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(lambda i: self._local(i, r), range(len(self.factors))))
        else:
            parts = [self._local(i, r) for i in range(len(self.factors))]
        z = np.zeros(self.n)
        for idx, p in zip(self.dofs, parts):
            z[idx] += p
        if self.coarse is not None and self.coarse.dim:
            Phi = self.coarse.Phi
            z += Phi @ self.coarse_factor.solve(Phi.T @ r)
        return z

    __call__ = apply


def _factorize(A, label):
    try:
        return splu(sp.csc_matrix(A), permc_spec=ORDERING)
    except RuntimeError as exc:
        raise SolverError(f"singular {label}: {exc}") from exc


def build_preconditioner(
    K: sp.spmatrix,
    decomp: BoxDecomposition,
    settings: SolverSettings = SolverSettings(),
    dofs_per_node: int = 4,
    constrained: np.ndarray | None = None,
    step_index: int = -1,
    comps=None,
) -> SchwarzPreconditioner:
    t0 = time.perf_counter()
    K = sp.csr_matrix(K)
    n = K.shape[0]
    if n != decomp.mesh.n_nodes * dofs_per_node:
        raise ValueError("matrix size does not match the decomposition layout")
    if decomp.overlap != settings.overlap:
        raise ValueError(
            f"decomposition overlap {decomp.overlap} differs from settings.overlap {settings.overlap}"
        )
    dofs = [subdomain_dofs(decomp, s, dofs_per_node) for s in range(decomp.n_sub)]

    def fac(s):
        return _factorize(K[dofs[s]][:, dofs[s]], f"subdomain matrix {s}")

    if settings.threads > 1 and decomp.n_sub > 1:
        with ThreadPoolExecutor(settings.threads) as pool:
            factors = list(pool.map(fac, range(decomp.n_sub)))
    else:
        factors = [fac(s) for s in range(decomp.n_sub)]

    coarse = coarse_factor = None
    if settings.levels == 2 and decomp.n_sub > 1:
        coarse = coarse_basis(K, decomp, dofs_per_node, settings.coarse, constrained, comps)
        if coarse.dim:
            K0 = (coarse.Phi.T @ (K @ coarse.Phi)).tocsc()
            coarse_factor = _factorize(K0, "coarse matrix")
    return SchwarzPreconditioner(
        n,
        dofs,
        factors,
        coarse,
        coarse_factor,
        next(_build_counter),
        step_index,
        time.perf_counter() - t0,
        settings.threads,
    )


def maybe_rebuild(
    precond: SchwarzPreconditioner | None,
    K: sp.spmatrix,
    decomp: BoxDecomposition,
    time_step_index: int,
    newton_index: int,
    settings: SolverSettings,
    dofs_per_node: int = 4,
    constrained: np.ndarray | None = None,
    comps=None,
) -> SchwarzPreconditioner:
    """Reuse the preconditioner within a time step when recycling is enabled."""
    if precond is not None and settings.recycling and newton_index > 0:
        return precond
    return build_preconditioner(
        K, decomp, settings, dofs_per_node, constrained, time_step_index, comps
    )


def solve(K, b, precond, settings: SolverSettings):
    return gmres_solve(
        K, b, precond, settings.restart, settings.rtol, settings.atol, settings.max_iter
    )


# --------------------------------------------------------------------------- surrogate


def poisson_surrogate(mesh: StripMesh, dirichlet: str = "all", lam: float = 1.0):
    """Scalar conduction matrix on ``mesh`` with homogeneous Dirichlet elimination.

    ``dirichlet`` is ``"all"`` (every boundary node), ``"none"`` or a
    comma-separated list of face names.  Returns ``(K, constrained_mask)``.
    """
    Ke = conductivity_matrix(mesh.coords[mesh.conn], lam)
    rows = np.repeat(mesh.conn, 8, axis=1).ravel()
    cols = np.tile(mesh.conn, (1, 8)).ravel()
    K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)
    mask = np.zeros(mesh.n_nodes, bool)
    if dirichlet == "all":
        mask[mesh.boundary_nodes()] = True
    elif dirichlet != "none":
        for f in dirichlet.split(","):
            mask |= mesh.faces[f.strip()]
    K, _ = apply_constraints(K, np.zeros(mesh.n_nodes), mask)
    K.eliminate_zeros()
    return K.tocsr(), mask
