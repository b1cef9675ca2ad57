import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from torus_gossip.gridindex import GridIndex
from torus_gossip.torus import TorusSpec, torus_distance

SIDE = 10.0


def test_degenerates_to_full_scan_when_cells_would_be_coarse():
    g = GridIndex(SIDE, 2, cell_target=6.0)  # floor(10/6) = 1 -> single bucket
    assert g.n_cells == 1
    g.insert(0, (0.1, 0.1))
    g.insert(1, (9.9, 5.0))
    assert sorted(g.candidates((5.0, 5.0))) == [0, 1]
    assert g.covers_radius(123.0)


def test_cell_size_is_never_below_target():
    g = GridIndex(SIDE, 1, cell_target=0.3)
    assert g.n_cells == 33
    assert g.cell >= 0.3
    assert g.covers_radius(g.cell)
    assert not g.covers_radius(g.cell * 1.01)


def test_insertion_order_preserved_within_bucket():
    g = GridIndex(SIDE, 1, cell_target=1.0)
    for idx in (3, 1, 2):
        g.insert(idx, (0.5,))
    assert list(g.candidates((0.5,))) == [3, 1, 2]
    assert len(g) == 3


@given(
    st.integers(1, 3),
    st.lists(
        st.floats(min_value=0.0, max_value=SIDE, exclude_max=True),
        min_size=3,
        max_size=120,
    ),
    st.floats(min_value=0.05, max_value=2.0),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=80, deadline=None)
def test_candidates_exhaustive_for_radii_up_to_cell(d, flat, radius, seed):
    """Any center within ``radius`` of a query must appear among candidates,
    provided the grid still covers that radius — the owner's rebuild contract."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n_pts = len(flat) // d
    if n_pts == 0:
        return
    pts = [tuple(flat[i * d : (i + 1) * d]) for i in range(n_pts)]
    g = GridIndex(SIDE, d, cell_target=2.0 * radius)
    for i, p in enumerate(pts):
        g.insert(i, p)
    if not g.covers_radius(radius):
        return
    spec = TorusSpec(d=d, side=SIDE)
    for _ in range(5):
        q = tuple(float(x) for x in rng.random(d) * SIDE)
        cand = set(g.candidates(q))
        for i, p in enumerate(pts):
            if torus_distance(p, q, spec) <= radius:
                assert i in cand


def test_wraparound_neighborhood():
    g = GridIndex(SIDE, 2, cell_target=1.0)
    g.insert(7, (9.95, 0.02))
    # Query from the opposite side of both wrap seams.
    assert 7 in set(g.candidates((0.03, 9.97)))


def test_coordinate_at_side_wraps_to_cell_zero():
    g = GridIndex(SIDE, 1, cell_target=1.0)
    g.insert(0, (SIDE,))  # only reachable through float edge cases upstream
    assert 0 in set(g.candidates((0.01,)))
