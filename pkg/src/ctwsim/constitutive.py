"""Small-strain thermo-elastoplastic material point update.

Voigt ordering is ``(xx, yy, zz, xy, yz, xz)``.  Strain-like vectors store
engineering shears (``2 eps_xy``), stress-like vectors store tensor shears.
All routines are vectorised over a leading axis of material points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .material import KELVIN, THETA_REF, MaterialTable, elastic_moduli, eval_param_slope, yield_state

SQ23 = np.sqrt(2.0 / 3.0)
ONE = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
SHEAR2 = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])  # stress-like -> strain-like
# maps engineering strain to the stress-like deviator
IDEV = np.zeros((6, 6))
IDEV[:3, :3] = np.eye(3) - 1.0 / 3.0
IDEV[3:, 3:] = 0.5 * np.eye(3)
ONE_ONE = np.outer(ONE, ONE)

MAX_LOCAL_ITER = 50


class ConstitutiveError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class MaterialPointState:
    eps_p: np.ndarray  # (n, 6) engineering plastic strain
    alpha: np.ndarray  # (n,)
    theta: np.ndarray  # (n,) degC
    sigma: np.ndarray  # (n, 6)

    @classmethod
    def virgin(cls, n: int, theta0: float = THETA_REF) -> "MaterialPointState":
        return cls(np.zeros((n, 6)), np.zeros(n), np.full(n, float(theta0)), np.zeros((n, 6)))

    def __len__(self):
        return self.alpha.shape[0]

    def take(self, idx) -> "MaterialPointState":
        return MaterialPointState(self.eps_p[idx], self.alpha[idx], self.theta[idx], self.sigma[idx])

    def copy(self) -> "MaterialPointState":
        return MaterialPointState(
            self.eps_p.copy(), self.alpha.copy(), self.theta.copy(), self.sigma.copy()
        )


@dataclass
class PointUpdateResult:
    sigma: np.ndarray  # (n, 6)
    C: np.ndarray  # (n, 6, 6) consistent tangent d sigma / d eps
    dsigma_dtheta: np.ndarray  # (n, 6)
    heating: np.ndarray  # (n,) 3 alpha_T kappa theta_K, multiplies tr(eps_dot)
    dheating_dtheta: np.ndarray
    capacity: np.ndarray  # (n,) rho c
    dcapacity_dtheta: np.ndarray
    state: MaterialPointState
    dgamma: np.ndarray
    beta: np.ndarray
    dissipation: np.ndarray  # (n,) plastic work per volume in this step


@dataclass(frozen=True)
class ModelOptions:
    plasticity: bool = True
    thermoelastic_heating: bool = True
    plastic_dissipation: bool = False
    theta0: float = THETA_REF


def dev_norm(s: np.ndarray) -> np.ndarray:
    """Frobenius norm of a stress-like deviator in Voigt form."""
    return np.sqrt(np.sum(s[..., :3] ** 2, axis=-1) + 2.0 * np.sum(s[..., 3:] ** 2, axis=-1))


def deviator(v: np.ndarray) -> np.ndarray:
    """Stress-like deviator of a stress-like Voigt vector."""
    out = v.copy()
    out[..., :3] -= v[..., :3].mean(axis=-1, keepdims=True)
    return out


def free_energy(eps_te, theta, alpha, kappa, mu, alpha_T, capacity, theta0=THETA_REF, f_alpha=0.0):
    """Helmholtz free energy per unit volume.

    ``eps_te`` is a strain-like Voigt vector, ``capacity`` the volumetric heat
    capacity ``rho c``; temperatures in degC.
    """
    eps_te = np.asarray(eps_te, dtype=float)
    th = np.asarray(theta, dtype=float) + KELVIN
    th0 = theta0 + KELVIN
    if np.any(th <= 0):
        raise ValueError("absolute temperature must be positive")
    tr = eps_te[..., :3].sum(axis=-1)
    e = eps_te.copy()
    e[..., :3] -= tr[..., None] / 3.0
    e[..., 3:] *= 0.5
    dev2 = np.sum(e[..., :3] ** 2, axis=-1) + 2.0 * np.sum(e[..., 3:] ** 2, axis=-1)
    return (
        0.5 * kappa * tr**2
        + mu * dev2
        - capacity * (th * np.log(th / th0) - th + th0)
        - 3.0 * alpha_T * kappa * (th - th0) * tr
        + f_alpha
    )


def elastic_tangent(kappa, mu) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return kappa[..., None, None] * ONE_ONE + 2.0 * mu[..., None, None] * IDEV


def update(
    eps_new,
    theta_new,
    state_old: MaterialPointState,
    table: MaterialTable,
    dt: float = 1.0,
    options: ModelOptions = ModelOptions(),
) -> PointUpdateResult:
    """Backward-Euler radial return at every material point.

    ``eps_new`` has shape ``(n, 6)`` (engineering), ``theta_new`` shape ``(n,)``.
    """
    eps_new = np.atleast_2d(np.asarray(eps_new, dtype=float))
    theta = np.atleast_1d(np.asarray(theta_new, dtype=float))
    n = eps_new.shape[0]
    theta0 = options.theta0

    kappa, dkappa, mu, dmu = elastic_moduli(table, theta)
    aT, daT = eval_param_slope(table, "alpha_T", theta)
    c, dc = eval_param_slope(table, "c", theta)

    eps_te = eps_new - state_old.eps_p
    tr = eps_te[:, :3].sum(axis=1)
    dev_e = eps_te @ IDEV.T  # stress-like deviatoric strain
    norm_dev_e = dev_norm(dev_e)
    dth = theta - theta0
    p = kappa * (tr - 3.0 * aT * dth)
    dp = dkappa * (tr - 3.0 * aT * dth) - 3.0 * kappa * (daT * dth + aT)

    s_tr = 2.0 * mu[:, None] * dev_e
    q_tr = 2.0 * mu * norm_dev_e

    alpha_old = state_old.alpha
    y_old, _, _ = yield_state(table, alpha_old, theta)
    y_virgin, _, _ = yield_state(table, np.zeros(n), theta)
    phi_tr = q_tr - SQ23 * y_old
    tol = 1e-10 * np.maximum(np.abs(y_virgin), 1e-12)
    plastic = (phi_tr > tol) if options.plasticity else np.zeros(n, dtype=bool)

    dgamma = np.zeros(n)
    h = np.zeros(n)
    dydth = np.zeros(n)
    if np.any(plastic):
        ip = np.flatnonzero(plastic)
        dgamma[ip], h[ip], dydth[ip] = _return_map(
            table, q_tr[ip], mu[ip], alpha_old[ip], theta[ip], tol[ip]
        )

    C = elastic_tangent(kappa, mu)
    dsig = dp[:, None] * ONE + 2.0 * dmu[:, None] * dev_e
    sigma = p[:, None] * ONE + s_tr
    eps_p = state_old.eps_p.copy()
    alpha_new = alpha_old.copy()
    if np.any(plastic):
        ip = np.flatnonzero(plastic)
        m, q, dg, hh = mu[ip], q_tr[ip], dgamma[ip], h[ip]
        nrm = s_tr[ip] / q[:, None]
        sigma[ip] -= (2.0 * m * dg)[:, None] * nrm
        eps_p[ip] += dg[:, None] * nrm * SHEAR2
        alpha_new[ip] += SQ23 * dg
        fac = 1.0 - 2.0 * m * dg / q
        fbar = 1.0 / (1.0 + hh / (3.0 * m)) - (1.0 - fac)
        C[ip] = (
            kappa[ip, None, None] * ONE_ONE
            + (2.0 * m * fac)[:, None, None] * IDEV
            - (2.0 * m * fbar)[:, None, None] * nrm[:, :, None] * nrm[:, None, :]
        )
        dm = dmu[ip]
        ne = norm_dev_e[ip]
        ddg = (2.0 * dm * ne - 2.0 * dm * dg - SQ23 * dydth[ip]) / (2.0 * m + (2.0 / 3.0) * hh)
        ds_mag = 2.0 * dm * ne - 2.0 * dm * dg - 2.0 * m * ddg
        dsig[ip] = dp[ip, None] * ONE + ds_mag[:, None] * nrm

    y_new, _, _ = yield_state(table, alpha_new, theta)
    beta = y_new - y_virgin
    thK = theta + KELVIN
    if options.thermoelastic_heating:
        heating = 3.0 * aT * kappa * thK
        dheating = 3.0 * (daT * kappa * thK + aT * dkappa * thK + aT * kappa)
    else:
        heating = np.zeros(n)
        dheating = np.zeros(n)
    rho = table.rho
    dissip = SQ23 * y_new * dgamma if options.plastic_dissipation else np.zeros(n)
    new_state = MaterialPointState(eps_p, alpha_new, theta.copy(), sigma.copy())
    return PointUpdateResult(
        sigma=sigma,
        C=C,
        dsigma_dtheta=dsig,
        heating=heating,
        dheating_dtheta=dheating,
        capacity=rho * c,
        dcapacity_dtheta=rho * dc,
        state=new_state,
        dgamma=dgamma,
        beta=beta,
        dissipation=dissip,
    )


def _return_map(table, q_tr, mu, alpha_old, theta, tol):
    """Solve ``q_tr - 2 mu dg - sqrt(2/3) y(alpha_old + sqrt(2/3) dg) = 0`` for ``dg``.

    Newton's method kept inside a shrinking bracket; a step leaving the
    bracket is replaced by a secant (even iterations) or bisection step.
    Piecewise-linear hardening makes Newton exact once the iterate sits on
    the final segment.
    """

    def resid(dg):
        y, h, dy = yield_state(table, alpha_old + SQ23 * dg, theta)
        return q_tr - 2.0 * mu * dg - SQ23 * y, h, dy

    lo = np.zeros_like(q_tr)
    hi = q_tr / (2.0 * mu)
    g_lo = resid(lo)[0]
    g_hi = resid(hi)[0]
    dg = lo.copy()
    for it in range(MAX_LOCAL_ITER):
        g, h, dy = resid(dg)
        active = np.abs(g) > tol
        if not np.any(active):
            return dg, h, dy
        pos = g > 0
        lo, g_lo = np.where(pos, dg, lo), np.where(pos, g, g_lo)
        hi, g_hi = np.where(pos, hi, dg), np.where(pos, g_hi, g)
        deriv = 2.0 * mu + (2.0 / 3.0) * h
        with np.errstate(divide="ignore", invalid="ignore"):
            step = dg + g / deriv
            sec = lo - g_lo * (hi - lo) / (g_hi - g_lo)
        bad = ~(deriv > 0) | ~(step > lo) | ~(step < hi)
        ok_sec = np.isfinite(sec) & (sec > lo) & (sec < hi) & (it % 2 == 0)
        step = np.where(bad, np.where(ok_sec, sec, 0.5 * (lo + hi)), step)
        dg = np.where(active, step, dg)
    g = resid(dg)[0]
    raise ConstitutiveError(
        f"radial return did not converge in {MAX_LOCAL_ITER} iterations "
        f"(max |residual| {np.max(np.abs(g)):.3e})",
        residual=g,
    )


def consistent_tangent_check(
    eps, theta, state_old, table, h_fd=1e-6, options=ModelOptions(), one_sided=None
) -> float:
    """Max relative deviation of ``C`` and ``dsigma/dtheta`` from finite differences.

    ``one_sided`` may be ``+1`` or ``-1`` to use forward/backward differences
    (needed at hardening-curve knots where the tangent jumps).
    """
    eps = np.atleast_2d(np.asarray(eps, float))
    theta = np.atleast_1d(np.asarray(theta, float))
    base = update(eps, theta, state_old, table, options=options)
    n = eps.shape[0]
    fd = np.zeros((n, 6, 7))

    def stress(e, t):
        return update(e, t, state_old, table, options=options).sigma

    scale_e = np.maximum(np.abs(eps).max(axis=1, keepdims=True), 1e-3) * h_fd
    for j in range(7):
        if j < 6:
            d = np.zeros_like(eps)
            d[:, j] = scale_e[:, 0]
            step = scale_e[:, 0]
            if one_sided is None:
                fd[:, :, j] = (stress(eps + d, theta) - stress(eps - d, theta)) / (2 * step[:, None])
            else:
                s = one_sided
                fd[:, :, j] = s * (stress(eps + s * d, theta) - base.sigma) / step[:, None]
        else:
            dt_ = np.maximum(np.abs(theta), 1.0) * h_fd
            if one_sided is None:
                fd[:, :, j] = (stress(eps, theta + dt_) - stress(eps, theta - dt_)) / (2 * dt_[:, None])
            else:
                s = one_sided
                fd[:, :, j] = s * (stress(eps, theta + s * dt_) - base.sigma) / dt_[:, None]
    an = np.concatenate([base.C, base.dsigma_dtheta[:, :, None]], axis=2)
    num = np.abs(an - fd).max(axis=(1, 2))
    den = np.abs(an).max(axis=(1, 2))
    return float(np.max(num / den))
