from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import synthetic_table
from ctwsim.constitutive import MaterialPointState, ModelOptions
from ctwsim.element import (
    N_GAUSS,
    ElementError,
    bbar_strain,
    conductivity_matrix,
    element_residual_tangent,
    geometry,
)
from ctwsim.material import THETA_REF, constant_table
from ctwsim.mesh import HEX_CORNERS

BOX = np.array([1.0, 0.5, 0.25])
U_SLOTS = [i for i in range(32) if i % 4 != 3]
T_SLOTS = list(range(3, 32, 4))


def _distorted(seed=0, amp=0.03):
    rng = np.random.default_rng(seed)
    return HEX_CORNERS * BOX + amp * rng.standard_normal((8, 3))


def _call(X, x, x_old, states, dt, table, opts=ModelOptions()):
    return element_residual_tangent(
        X[None], x.reshape(8, 4)[None, :, :3], x.reshape(8, 4)[None, :, 3],
        x_old.reshape(8, 4)[None, :, :3], x_old.reshape(8, 4)[None, :, 3],
        states, dt, table, opts,
    )


def test_geometry_volume_and_inversion():
    geo = geometry((HEX_CORNERS * BOX)[None])
    assert geo.volume[0] == pytest.approx(np.prod(BOX), rel=1e-14)
    bad = (HEX_CORNERS * BOX)[[1, 0, 3, 2, 5, 4, 7, 6]]
    with pytest.raises(ElementError):
        geometry(bad[None])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_affine_field_gives_constant_strain(seed):
    rng = np.random.default_rng(seed)
    X = _distorted(seed)
    G = rng.normal(0, 1e-3, (3, 3))
    u = X @ G.T
    eps = bbar_strain(X, u)
    sym = 0.5 * (G + G.T)
    expect = np.array([sym[0, 0], sym[1, 1], sym[2, 2], 2 * sym[0, 1], 2 * sym[1, 2], 2 * sym[0, 2]])
    assert np.allclose(eps, expect, atol=1e-15)


def test_bbar_volumetric_strain_is_element_mean():
    X = _distorted(2, 0.08)
    u = np.random.default_rng(3).normal(0, 1e-3, (8, 3))
    eps = bbar_strain(X, u)
    vol = eps[:, :3].sum(axis=1)
    assert np.allclose(vol, vol[0], rtol=1e-12)


def test_rigid_translation_is_stress_free():
    t = synthetic_table(1)
    X = _distorted(1)
    x = np.zeros(32)
    x[U_SLOTS] = np.tile([0.3, -0.2, 0.1], 8)
    x[T_SLOTS] = THETA_REF
    out = _call(X, x, x, MaterialPointState.virgin(8), np.inf, t)
    assert np.abs(out.r).max() < 1e-9


def test_conductivity_matrix_properties():
    Ke = conductivity_matrix(_distorted(4)[None], 15.0)[0]
    assert np.allclose(Ke, Ke.T)
    assert np.allclose(Ke.sum(axis=1), 0.0, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(Ke)[1:] > 0)


@pytest.mark.parametrize(
    "scale, theta, dt",
    [(1e-4, 300.0, 0.01), (5e-3, 800.0, 0.01), (2e-2, 1200.0, np.inf), (2e-2, 1420.0, 0.01)],
)
def test_tangent_matches_finite_differences(scale, theta, dt):
    t = synthetic_table(0)
    rng = np.random.default_rng(int(theta))
    X = _distorted(5)
    x_old = np.zeros(32)
    x_old[T_SLOTS] = theta - 50.0
    x = np.zeros(32)
    x[U_SLOTS] = scale * rng.standard_normal(24)
    x[T_SLOTS] = theta + 30 * rng.standard_normal(8)
    st0 = MaterialPointState.virgin(8)
    K = _call(X, x, x_old, st0, dt, t).K[0]
    fd = np.zeros((32, 32))
    for j in range(32):
        h = 1e-7 * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        fd[:, j] = (_call(X, xp, x_old, st0, dt, t).r[0] - _call(X, xm, x_old, st0, dt, t).r[0]) / (2 * h)
    assert np.abs(K - fd).max() <= 1e-6 * np.abs(fd).max()


def test_steady_state_drops_rate_terms():
    t = constant_table()
    X = HEX_CORNERS * BOX
    x = np.zeros(32)
    x[T_SLOTS] = 500.0
    x_old = np.zeros(32)
    x_old[T_SLOTS] = THETA_REF
    out = _call(X, x, x_old, MaterialPointState.virgin(8), np.inf, t)
    # uniform temperature: no conduction and no storage at steady state
    assert np.allclose(out.r[0][T_SLOTS], 0.0, atol=1e-12)
    assert np.allclose(out.K[0][np.ix_(T_SLOTS, U_SLOTS)], 0.0)


def test_capacity_term_integrates_rho_c():
    t = constant_table(c=500.0)
    X = HEX_CORNERS * BOX
    dt, dth = 0.01, 10.0
    x_old = np.zeros(32)
    x_old[T_SLOTS] = THETA_REF
    x = x_old.copy()
    x[T_SLOTS] += dth
    opts = ModelOptions(thermoelastic_heating=False)
    out = _call(X, x, x_old, MaterialPointState.virgin(8), dt, t, opts)
    rho_c = t.rho * 500e6
    # uniform rate: sum of nodal heat residuals is rho c V dtheta/dt
    assert out.r[0][T_SLOTS].sum() == pytest.approx(rho_c * np.prod(BOX) * dth / dt, rel=1e-12)


def test_body_force_and_source_hooks():
    t = constant_table()
    X = HEX_CORNERS * BOX
    x = np.zeros(32)
    x[T_SLOTS] = THETA_REF
    out = element_residual_tangent(
        X[None], x.reshape(1, 8, 4)[..., :3], x.reshape(1, 8, 4)[..., 3],
        x.reshape(1, 8, 4)[..., :3], x.reshape(1, 8, 4)[..., 3],
        MaterialPointState.virgin(8), np.inf, t,
        body_force=lambda p: np.tile([0.0, 0.0, -2.0], (len(p), 1)),
        heat_source=lambda p: np.full(len(p), 3.0),
    )
    V = np.prod(BOX)
    assert out.r[0][2::4].sum() == pytest.approx(2.0 * V, rel=1e-13)
    assert out.r[0][T_SLOTS].sum() == pytest.approx(-3.0 * V, rel=1e-13)
    assert N_GAUSS.sum(axis=1) == pytest.approx(np.ones(8))
