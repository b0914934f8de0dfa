import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxkernel.grid import SECTOR_NAMES, GridSpec, build_adjacency, sector_of

LEFT, RIGHT, UP, DOWN = range(4)


@pytest.mark.parametrize(
    "delta, expected",
    [((0, -1), LEFT), ((0, 1), RIGHT), ((-1, 0), UP), ((1, 0), DOWN), ((-2, 1), UP), ((1, 3), RIGHT)],
)
def test_sector_of_axis_neighbors(delta, expected):
    assert sector_of(*delta, sectors=4) == expected


def test_sector_names_follow_block_order():
    assert SECTOR_NAMES == ("left", "right", "up", "down")
    assert GridSpec(2, 2).sector_names() == SECTOR_NAMES


def test_diagonal_ties_go_to_lower_sector():
    # 45 deg sits between right (1) and up (2); 135 deg between up (2) and left (0)
    assert sector_of(-1, 1, 4) == RIGHT
    assert sector_of(-1, -1, 4) == LEFT
    assert sector_of(1, -1, 4) == LEFT
    assert sector_of(1, 1, 4) == RIGHT


def test_sector_of_rejects_self_loop():
    with pytest.raises(ValueError, match="self-loop"):
        sector_of(0, 0, 4)


def test_sector_of_other_counts():
    assert sector_of(5, 5, 1) == 0
    # C=2: centers at 0 and 180 deg; vertical displacements tie -> sector 0
    assert sector_of(0, -3, 2) == 1
    assert sector_of(-1, 0, 2) == 0


@pytest.mark.parametrize("bad", [dict(rows=0, cols=1), dict(rows=1, cols=-2), dict(rows=1, cols=1, radius=0)])
def test_gridspec_validation(bad):
    with pytest.raises(ValueError):
        GridSpec(**bad)


def test_3x3_interior_and_corner_weights():
    adj = build_adjacency(GridSpec(3, 3, 1, 4))
    center, corner = 4, 0
    assert adj.matrices[LEFT, center, 3] == 0.25
    assert adj.matrices[:, center].sum() == 1.0
    assert adj.matrices[RIGHT, corner, 1] == 0.5
    assert adj.matrices[DOWN, corner, 3] == 0.5
    assert np.count_nonzero(adj.matrices[:, corner]) == 2


def test_1x2_grid():
    adj = build_adjacency(GridSpec(1, 2, 1, 4))
    assert adj.matrices[RIGHT, 0, 1] == 1.0
    assert adj.matrices[LEFT, 1, 0] == 1.0
    assert adj.matrices.sum() == 2.0


def test_isolated_cell_has_zero_row():
    adj = build_adjacency(GridSpec(1, 1, 2, 4))
    assert not adj.mask.any()
    assert adj.matrices.sum() == 0.0


def test_r1_union_is_4_adjacency():
    spec = GridSpec(4, 5, 1, 4)
    adj = build_adjacency(spec)
    assert np.all(adj.mask.sum(axis=0) <= 1)  # sectors disjoint
    union = adj.mask.any(axis=0)
    for x in range(spec.n_cells):
        r, c = spec.cell_coords(x)
        for y in range(spec.n_cells):
            rr, cc = spec.cell_coords(y)
            assert union[x, y] == (abs(r - rr) + abs(c - cc) == 1)


def test_deterministic():
    a = build_adjacency(GridSpec(4, 3, 2, 4))
    b = build_adjacency(GridSpec(4, 3, 2, 4))
    assert a.matrices.tobytes() == b.matrices.tobytes()
    assert a.mask.tobytes() == b.mask.tobytes()


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 6),
    cols=st.integers(1, 6),
    radius=st.integers(1, 3),
    sectors=st.integers(1, 8),
)
def test_adjacency_invariants(rows, cols, radius, sectors):
    spec = GridSpec(rows, cols, radius, sectors)
    adj = build_adjacency(spec)
    n = spec.n_cells
    assert adj.matrices.shape == (sectors, n, n)
    assert not adj.mask[:, np.arange(n), np.arange(n)].any()
    assert np.all(adj.matrices[~adj.mask] == 0)
    assert np.all(adj.mask.sum(axis=0) <= 1)
    rowsum = adj.matrices.sum(axis=(0, 2))
    deg = adj.degrees()
    np.testing.assert_allclose(rowsum[deg > 0], 1.0, rtol=1e-12)
    assert np.all(rowsum[deg == 0] == 0)
    for c in range(sectors):
        for x, y in zip(*np.nonzero(adj.mask[c])):
            (r0, c0), (r1, c1) = spec.cell_coords(x), spec.cell_coords(y)
            dr, dc = r1 - r0, c1 - c0
            assert dr * dr + dc * dc <= radius * radius
            assert sector_of(dr, dc, sectors) == c
