"""Global assembly of the coupled residual and tangent, Dirichlet elimination
and subdomain extraction."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constitutive import MaterialPointState, ModelOptions
from .element import N_GP, element_residual_tangent
from .material import MaterialTable
from .mesh import DOFS_PER_NODE, BoxDecomposition, StripMesh

CHUNK = 1024  # elements per work item; fixed so results do not depend on the thread count


class ConstraintError(ValueError):
    pass


@dataclass
class Constraints:
    """Prescribed DOF values; ``dofs`` are unique global indices."""

    dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return self.dofs.size

    def mask(self, n_dofs: int) -> np.ndarray:
        m = np.zeros(n_dofs, dtype=bool)
        m[self.dofs] = True
        return m


def merge_constraints(*parts: Constraints) -> Constraints:
    """Union of constraint sets; a DOF prescribed twice is an error."""
    dofs = np.concatenate([p.dofs for p in parts]).astype(np.int64)
    vals = np.concatenate([p.values for p in parts]).astype(float)
    uniq, first, counts = np.unique(dofs, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = uniq[counts > 1]
        listing = ", ".join(
            f"node {d // DOFS_PER_NODE} dof {d % DOFS_PER_NODE}" for d in dup[:8]
        )
        raise ConstraintError(f"conflicting prescriptions for {dup.size} DOF(s): {listing}")
    return Constraints(uniq, vals[first])


@dataclass
class GlobalSystem:
    K: sp.csr_matrix | None
    R: np.ndarray
    constrained: np.ndarray  # bool mask
    prescribed: np.ndarray  # values at constrained DOFs (full-length vector, 0 elsewhere)
    states: MaterialPointState  # trial Gauss point states
    strain: np.ndarray  # (n_elems, 8, 6) B-bar strains

    @property
    def n(self) -> int:
        return self.R.size


class SparsityPattern:
    """CSR pattern of the element-to-global scatter with a per-entry data map."""

    def __init__(self, edofs: np.ndarray, n: int):
        ne, m = edofs.shape
        rows = np.repeat(edofs, m, axis=1).ravel()
        cols = np.tile(edofs, (1, m)).ravel()
        keys, inverse = np.unique(rows * n + cols, return_inverse=True)
        self.n = n
        self.nnz = keys.size
        self.indices = (keys % n).astype(np.int32)
        self.row_of = (keys // n).astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(self.row_of, minlength=n))])
        self.entry_map = inverse.reshape(ne, m * m).astype(np.int32)
        self.diag = np.flatnonzero(self.row_of == self.indices)
        assert self.diag.size == n

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def apply_constraints(K: sp.csr_matrix, R: np.ndarray, mask: np.ndarray, pattern=None):
    """Symmetric elimination with zero prescribed increments: constrained rows
    and columns become identity, residual entries there are zeroed (in place)."""
    if pattern is not None:
        kill = mask[pattern.row_of] | mask[pattern.indices]
        K.data[kill] = 0.0
        K.data[pattern.diag[mask]] = 1.0
    else:
        K = K.tocsr()
        rows = np.repeat(np.arange(K.shape[0]), np.diff(K.indptr))
        kill = mask[rows] | mask[K.indices]
        K.data[kill] = 0.0
        K = K + sp.diags(mask.astype(float))
        K = K.tocsr()
    R[mask] = 0.0
    return K, R


def lift_constraints(K: sp.csr_matrix, rhs: np.ndarray, mask: np.ndarray, increments: np.ndarray):
    """Move known columns of non-zero prescribed increments to the right-hand side."""
    rhs = rhs - K[:, mask] @ increments[mask]
    rhs[mask] = increments[mask]
    return rhs


class Assembler:
    def __init__(
        self,
        mesh: StripMesh,
        table: MaterialTable,
        options: ModelOptions = ModelOptions(),
        threads: int = 1,
        body_force=None,
        heat_source=None,
    ):
        self.mesh = mesh
        self.table = table
        self.options = options
        self.threads = max(int(threads), 1)
        self.body_force = body_force
        self.heat_source = heat_source
        self.edofs = mesh.elem_dofs()
        self.elem_coords = mesh.coords[mesh.conn]
        self.pattern = SparsityPattern(self.edofs, mesh.n_dofs)
        self.chunks = [
            np.arange(s, min(s + CHUNK, mesh.n_elems)) for s in range(0, mesh.n_elems, CHUNK)
        ]

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_dofs

    def _evaluate(self, elems, x, x_old, states_old, dt, want_tangent):
        xe = x[self.edofs[elems]].reshape(-1, 8, DOFS_PER_NODE)
        xo = x_old[self.edofs[elems]].reshape(-1, 8, DOFS_PER_NODE)
        gp = (elems[:, None] * N_GP + np.arange(N_GP)).ravel()
        out = element_residual_tangent(
            self.elem_coords[elems],
            xe[:, :, :3],
            xe[:, :, 3],
            xo[:, :, :3],
            xo[:, :, 3],
            states_old.take(gp),
            dt,
            self.table,
            self.options,
            body_force=self.body_force,
            heat_source=self.heat_source,
            elem_ids=elems,
            want_tangent=want_tangent,
        )
        R = np.bincount(self.edofs[elems].ravel(), weights=out.r.ravel(), minlength=self.n_dofs)
        data = None
        if want_tangent:
            data = np.bincount(
                self.pattern.entry_map[elems].ravel(),
                weights=out.K.ravel(),
                minlength=self.pattern.nnz,
            )
        return R, data, out.states, out.strain

    def assemble(
        self,
        x: np.ndarray,
        x_old: np.ndarray,
        states_old: MaterialPointState,
        dt: float,
        constraints: Constraints | None = None,
        want_tangent: bool = True,
        order=None,
    ) -> GlobalSystem:
        """Residual and tangent at ``x``.  ``order`` permutes the chunk processing
        order (the reduction is always performed in chunk-index order)."""
        chunks = self.chunks
        idx = range(len(chunks)) if order is None else order
        if self.threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                futs = {
                    i: pool.submit(self._evaluate, chunks[i], x, x_old, states_old, dt, want_tangent)
                    for i in idx
                }
                results = [futs[i].result() for i in range(len(chunks))]
        else:
            tmp = {
                i: self._evaluate(chunks[i], x, x_old, states_old, dt, want_tangent) for i in idx
            }
            results = [tmp[i] for i in range(len(chunks))]

        R = np.zeros(self.n_dofs)
        data = np.zeros(self.pattern.nnz) if want_tangent else None
        for r, d, _, _ in results:
            R += r
            if want_tangent:
                data += d
        states = _concat_states([res[2] for res in results])
        strain = np.concatenate([res[3] for res in results])

        mask = np.zeros(self.n_dofs, dtype=bool)
        prescribed = np.zeros(self.n_dofs)
        if constraints is not None and len(constraints):
            mask[constraints.dofs] = True
            prescribed[constraints.dofs] = constraints.values
        K = self.pattern.matrix(data) if want_tangent else None
        if K is not None:
            K, R = apply_constraints(K, R, mask, self.pattern)
        else:
            R[mask] = 0.0
        return GlobalSystem(K, R, mask, prescribed, states, strain)


def _concat_states(parts) -> MaterialPointState:
    return MaterialPointState(
        np.concatenate([p.eps_p for p in parts]),
        np.concatenate([p.alpha for p in parts]),
        np.concatenate([p.theta for p in parts]),
        np.concatenate([p.sigma for p in parts]),
    )


# --------------------------------------------------------------------------- subdomains


def subdomain_dofs(decomp: BoxDecomposition, s: int, dofs_per_node: int = DOFS_PER_NODE) -> np.ndarray:
    """All DOFs of all nodes of the overlapping element set of subdomain ``s``."""
    if not 0 <= s < decomp.n_sub:
        raise IndexError(f"subdomain id {s} out of range [0, {decomp.n_sub})")
    nodes = np.sort(decomp.overlap_nodes(s))
    return (dofs_per_node * nodes[:, None] + np.arange(dofs_per_node)).ravel()


def extract_subdomain(K: sp.spmatrix, decomp: BoxDecomposition, s: int, dofs_per_node: int = DOFS_PER_NODE):
    """Principal submatrix on the overlapping DOF set and the restriction index map.

    Dropping the couplings to DOFs outside the set imposes homogeneous
    Dirichlet conditions on the artificial subdomain boundary.
    """
    if isinstance(K, GlobalSystem):
        K = K.K
    idx = subdomain_dofs(decomp, s, dofs_per_node)
    K = K.tocsr()
    return K[idx][:, idx], idx


def partition_of_unity(decomp: BoxDecomposition, dofs_per_node: int = DOFS_PER_NODE):
    """Ownership weights ``D_i`` such that ``sum_i R_i^T D_i R_i = I``."""
    owner = decomp.node_owner()
    out = []
    for s in range(decomp.n_sub):
        idx = subdomain_dofs(decomp, s, dofs_per_node)
        out.append((owner[idx // dofs_per_node] == s).astype(float))
    return out


def write_triplets(K: sp.spmatrix, path) -> None:
    """Text dump: header ``n nnz`` then one ``row col value`` line per entry (0-based)."""
    K = K.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{K.shape[0]} {K.nnz}\n")
        for r, c, v in zip(K.row, K.col, K.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_triplets(path) -> sp.csr_matrix:
    with open(path) as fh:
        n, nnz = map(int, fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, n))
