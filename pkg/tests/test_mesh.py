from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import interface_components
from ctwsim.mesh import (
    DOFS_PER_NODE,
    HEX_CORNERS,
    MeshError,
    build_mesh,
    classify_interface,
    decompose,
)

SHAPE = (6, 4, 2)
LENGTHS = (12.0, 4.0, 1.0)


def _mesh():
    return build_mesh(*SHAPE, *LENGTHS)


def test_counts_and_spacing():
    m = _mesh()
    assert m.n_elems == 48
    assert m.n_nodes == 7 * 5 * 3
    assert m.n_dofs == DOFS_PER_NODE * m.n_nodes
    assert m.h == (2.0, 1.0, 0.5)


def test_node_numbering_x_fastest():
    m = _mesh()
    assert np.allclose(m.coords[1], [2.0, 0.0, 0.0])
    assert np.allclose(m.coords[7], [0.0, 1.0, 0.0])
    assert np.allclose(m.coords[35], [0.0, 0.0, 0.5])


def test_element_corners_follow_reference_order():
    m = _mesh()
    h = np.array(m.h)
    for e in (0, 13, m.n_elems - 1):
        X = m.coords[m.conn[e]]
        assert np.allclose(X - X[0], HEX_CORNERS * h)


def test_faces():
    m = _mesh()
    assert m.faces["y-"].sum() == 7 * 3
    assert np.all(m.coords[m.faces["x+"], 0] == LENGTHS[0])
    assert np.all(m.coords[m.faces["z+"], 2] == LENGTHS[2])
    assert m.boundary_nodes().size == m.n_nodes - 5 * 3 * 1


def test_elem_dofs_interleaved():
    m = _mesh()
    d = m.elem_dofs([0])[0]
    assert d.shape == (32,)
    assert np.array_equal(d[:4], 4 * m.conn[0, 0] + np.arange(4))
    assert np.array_equal(d[3::4], 4 * m.conn[0] + 3)


@given(st.integers(0, 6), st.integers(0, 4), st.integers(0, 2))
def test_node_ijk_roundtrip(i, j, k):
    m = _mesh()
    assert tuple(m.node_ijk(m.node_id(i, j, k))) == (i, j, k)


@pytest.mark.parametrize("bad", [(0, 1, 1, 1, 1, 1), (1, 1, 1, -1.0, 1, 1), (1.5, 1, 1, 1, 1, 1)])
def test_invalid_mesh_rejected(bad):
    with pytest.raises(MeshError):
        build_mesh(*bad)


def test_decompose_rejects_too_many_parts():
    with pytest.raises(MeshError):
        decompose(_mesh(), 7, 1, 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(1, 2), st.integers(0, 2))
def test_decomposition_partitions_elements(px, py, pz, k):
    m = _mesh()
    d = decompose(m, px, py, pz, k)
    counts = np.zeros(m.n_elems, int)
    for s in range(d.n_sub):
        own = d.elements(s)
        counts[own] += 1
        assert np.all(d.elem_sub[own] == s)
        assert set(own) <= set(d.overlap_elements(s))
    assert np.all(counts == 1)
    owners = d.node_owners()
    assert np.array_equal(d.owner_count(), [len(o) for o in owners])
    assert all(d.node_owner()[n] in owners[n] for n in range(m.n_nodes))


@pytest.mark.parametrize("parts", [(2, 1, 1), (2, 2, 1), (3, 2, 2), (2, 2, 2)])
def test_interface_components_match_enumeration(parts):
    m = build_mesh(6, 4, 4, 6.0, 4.0, 4.0)
    d = decompose(m, *parts)
    got = sorted((c.owners, sorted(c.nodes.tolist())) for c in classify_interface(d))
    assert got == interface_components(d)


def test_cube_2x2x2_component_kinds():
    d = decompose(build_mesh(4, 4, 4, 1.0, 1.0, 1.0), 2, 2, 2)
    kinds = [c.kind for c in classify_interface(d)]
    assert (kinds.count("face"), kinds.count("edge"), kinds.count("vertex")) == (12, 6, 1)


def test_overlap_grows_box_by_k_cells():
    m = _mesh()
    d = decompose(m, 3, 1, 1, 1)
    assert d.overlap_boxes[1][0] == (1, 5)
    assert d.overlap_boxes[0][0] == (0, 3)
