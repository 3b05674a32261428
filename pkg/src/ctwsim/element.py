"""Trilinear 8-node brick with mean-dilatation B-bar displacements and a
trilinear temperature field.

Everything here is vectorised over a leading axis of elements.  Element
vectors are interleaved per node as ``(ux, uy, uz, theta)`` so that an element
contributes a ``32 x 32`` block to the global matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constitutive import ModelOptions, MaterialPointState, update
from .material import MaterialTable, eval_param_slope
from .mesh import HEX_CORNERS

XI = 2.0 * HEX_CORNERS - 1.0  # reference corners in [-1, 1]^3
GAUSS = XI / np.sqrt(3.0)
GAUSS_W = np.ones(8)
N_GP = 8

# positions of displacement / temperature entries inside the 32-vector
U_SLOTS = (4 * np.arange(8)[:, None] + np.arange(3)).ravel()
T_SLOTS = 4 * np.arange(8) + 3


class ElementError(ValueError):
    pass


def shape_functions(xi):
    """Trilinear shape values ``(.., 8)`` and reference gradients ``(.., 8, 3)``."""
    xi = np.asarray(xi, dtype=float)
    f = 1.0 + xi[..., None, :] * XI  # (.., 8, 3)
    N = 0.125 * f.prod(axis=-1)
    dN = np.empty(xi.shape[:-1] + (8, 3))
    dN[..., 0] = 0.125 * XI[:, 0] * f[..., 1] * f[..., 2]
    dN[..., 1] = 0.125 * XI[:, 1] * f[..., 0] * f[..., 2]
    dN[..., 2] = 0.125 * XI[:, 2] * f[..., 0] * f[..., 1]
    return N, dN


N_GAUSS, DN_GAUSS = shape_functions(GAUSS)  # (8 gp, 8 nodes), (8 gp, 8 nodes, 3)


@dataclass
class ElementGeometry:
    """Quadrature data of a batch of elements."""

    detJ: np.ndarray  # (ne, 8)
    grad: np.ndarray  # (ne, 8 gp, 8 nodes, 3) physical shape gradients
    wdet: np.ndarray  # (ne, 8) quadrature weight times detJ
    volume: np.ndarray  # (ne,)
    bbar: np.ndarray  # (ne, 8 nodes, 3) element-mean shape gradients
    xg: np.ndarray  # (ne, 8, 3) Gauss point coordinates


def geometry(coords, elem_ids=None) -> ElementGeometry:
    coords = np.asarray(coords, dtype=float)
    J = np.einsum("eai,gaj->egij", coords, DN_GAUSS)
    detJ = np.linalg.det(J)
    if np.any(detJ <= 0):
        bad = np.flatnonzero((detJ <= 0).any(axis=1))
        ids = bad if elem_ids is None else np.asarray(elem_ids)[bad]
        raise ElementError(f"non-positive Jacobian in element(s) {ids[:10].tolist()}")
    invJ = np.linalg.inv(J)
    grad = np.einsum("gaj,egji->egai", DN_GAUSS, invJ)
    wdet = detJ * GAUSS_W
    vol = wdet.sum(axis=1)
    bbar = np.einsum("eg,egai->eai", wdet, grad) / vol[:, None, None]
    xg = np.einsum("ga,eai->egi", N_GAUSS, coords)
    return ElementGeometry(detJ, grad, wdet, vol, bbar, xg)


def b_matrix(grad) -> np.ndarray:
    """Standard strain-displacement operator, shape ``(.., 6, 24)`` (engineering strain)."""
    sh = grad.shape[:-2]
    B = np.zeros(sh + (6, 24))
    dx, dy, dz = grad[..., 0], grad[..., 1], grad[..., 2]
    B[..., 0, 0::3] = dx
    B[..., 1, 1::3] = dy
    B[..., 2, 2::3] = dz
    B[..., 3, 0::3] = dy
    B[..., 3, 1::3] = dx
    B[..., 4, 1::3] = dz
    B[..., 4, 2::3] = dy
    B[..., 5, 0::3] = dz
    B[..., 5, 2::3] = dx
    return B


def bbar_matrix(geo: ElementGeometry) -> np.ndarray:
    """B-bar operator ``(ne, 8 gp, 6, 24)``: volumetric rows use the element-mean divergence."""
    B = b_matrix(geo.grad)
    div = geo.grad.reshape(geo.grad.shape[:2] + (24,))  # (ne, gp, 24) local divergence row
    div_bar = geo.bbar.reshape(geo.bbar.shape[0], 1, 24)
    corr = (div_bar - div) / 3.0
    B[..., :3, :] += corr[..., None, :]
    return B


def bbar_strain(coords, u_e, gauss_point=None) -> np.ndarray:
    """B-bar engineering strains at Gauss points, shape ``(ne, 8, 6)`` (or one point)."""
    coords = np.asarray(coords, dtype=float)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
        u_e = np.asarray(u_e, dtype=float)[None]
    geo = geometry(coords)
    B = bbar_matrix(geo)
    eps = np.einsum("egij,ej->egi", B, np.asarray(u_e, float).reshape(len(coords), 24))
    if gauss_point is not None:
        eps = eps[:, gauss_point]
    return eps[0] if single else eps


def div_bar(geo: ElementGeometry, u_e) -> np.ndarray:
    """Element-mean volumetric strain, shape ``(ne,)``."""
    return np.einsum("eai,eai->e", geo.bbar, u_e)


@dataclass
class ElementOutput:
    r: np.ndarray  # (ne, 32)
    K: np.ndarray  # (ne, 32, 32)
    states: MaterialPointState  # ne * 8 points, element-major
    strain: np.ndarray  # (ne, 8, 6)


def element_residual_tangent(
    coords,
    u_e,
    th_e,
    u_old,
    th_old,
    states_old: MaterialPointState,
    dt: float,
    table: MaterialTable,
    options: ModelOptions = ModelOptions(),
    body_force=None,
    heat_source=None,
    elem_ids=None,
    want_tangent: bool = True,
) -> ElementOutput:
    """Coupled residual and tangent of a batch of elements.

    ``dt = inf`` drops all rate terms (steady state).  ``body_force(x)`` and
    ``heat_source(x)`` are optional callables on Gauss point coordinates
    ``(m, 3)`` used for verification problems.
    """
    coords = np.asarray(coords, float)
    u_e = np.asarray(u_e, float)
    th_e = np.asarray(th_e, float)
    ne = coords.shape[0]
    inv_dt = 0.0 if not np.isfinite(dt) else 1.0 / dt

    geo = geometry(coords, elem_ids)
    B = bbar_matrix(geo)  # (ne, g, 6, 24)
    uf = u_e.reshape(ne, 24)
    eps = np.einsum("egij,ej->egi", B, uf)
    tr_new = div_bar(geo, u_e)
    tr_old = div_bar(geo, np.asarray(u_old, float))
    th_g = th_e @ N_GAUSS.T  # (ne, g)
    th_old_g = np.asarray(th_old, float) @ N_GAUSS.T
    gradth = np.einsum("egai,ea->egi", geo.grad, th_e)

    res = update(eps.reshape(-1, 6), th_g.ravel(), states_old, table, dt, options)
    sig = res.sigma.reshape(ne, N_GP, 6)
    w = geo.wdet

    # mechanical residual
    r_u = np.einsum("egij,egi,eg->ej", B, sig, w)
    if body_force is not None:
        b = np.asarray(body_force(geo.xg.reshape(-1, 3)), float).reshape(ne, N_GP, 3)
        r_u -= np.einsum("ga,egi,eg->eai", N_GAUSS, b, w).reshape(ne, 24)

    # thermal residual
    lam, dlam = eval_param_slope(table, "lambda", th_g)
    cap = res.capacity.reshape(ne, N_GP)
    dcap = res.dcapacity_dtheta.reshape(ne, N_GP)
    heat = res.heating.reshape(ne, N_GP)
    dheat = res.dheating_dtheta.reshape(ne, N_GP)
    rate = (th_g - th_old_g) * inv_dt
    dtr = (tr_new - tr_old)[:, None] * inv_dt
    src = cap * rate + heat * dtr  # per-volume nodal-weighted source terms
    if options.plastic_dissipation:
        src = src - res.dissipation.reshape(ne, N_GP) * inv_dt
    if heat_source is not None:
        src = src - np.asarray(heat_source(geo.xg.reshape(-1, 3)), float).reshape(ne, N_GP)
    r_t = np.einsum("ga,eg,eg->ea", N_GAUSS, src, w)
    r_t += np.einsum("egai,egi,eg->ea", geo.grad, lam[..., None] * gradth, w)

    r = np.zeros((ne, 32))
    r[:, U_SLOTS] = r_u
    r[:, T_SLOTS] = r_t
    new_states = res.state

    if not want_tangent:
        return ElementOutput(r, None, new_states, eps)

    C = res.C.reshape(ne, N_GP, 6, 6)
    CB = np.matmul(C, B) * w[..., None, None]
    K_uu = np.matmul(B.transpose(0, 1, 3, 2), CB).sum(axis=1)
    dsig = res.dsigma_dtheta.reshape(ne, N_GP, 6)
    Bs = np.einsum("egij,egi->egj", B, dsig * w[..., None])  # (ne, g, 24)
    K_ut = Bs.transpose(0, 2, 1) @ N_GAUSS

    # d r_theta / d u: heating * d tr / du, tr = bbar . u
    coef = np.einsum("ga,eg,eg->ea", N_GAUSS, heat, w) * inv_dt
    K_tu = coef[:, :, None] * geo.bbar.reshape(ne, 1, 24)

    # the optional plastic dissipation source is not linearised
    dsrc = dcap * rate + cap * inv_dt + dheat * dtr
    K_tt = (N_GAUSS.T * (dsrc * w)[:, None, :]) @ N_GAUSS
    G = geo.grad.transpose(0, 2, 1, 3).reshape(ne, 8, 3 * N_GP)
    K_tt += G @ (G * np.repeat(lam * w, 3, axis=1)[:, None, :]).transpose(0, 2, 1)
    q = np.einsum("egai,egi->eag", geo.grad, gradth) * (dlam * w)[:, None, :]
    K_tt += q @ N_GAUSS

    K = np.empty((ne, 8, 4, 8, 4))
    K[:, :, :3, :, :3] = K_uu.reshape(ne, 8, 3, 8, 3)
    K[:, :, :3, :, 3] = K_ut.reshape(ne, 8, 3, 8)
    K[:, :, 3, :, :3] = K_tu.reshape(ne, 8, 8, 3)
    K[:, :, 3, :, 3] = K_tt
    return ElementOutput(r, K.reshape(ne, 32, 32), new_states, eps)


def conductivity_matrix(coords, lam: float) -> np.ndarray:
    """Element conductivity matrix ``int grad N . lam grad N`` (8 x 8 per element)."""
    geo = geometry(np.asarray(coords, float).reshape(-1, 8, 3))
    return np.einsum("egai,egbi,eg->eab", geo.grad, geo.grad, lam * geo.wdet)
