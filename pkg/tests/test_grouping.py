import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gst.grouping import (
    B2_FRIENDLY_B4,
    B4_FRIENDLY_B2,
    CIRCULANT,
    DENSE,
    CompressedTensor,
    ConversionError,
    StructureError,
    build_pattern,
    convert_friendly,
    convert_projection,
    dense_pattern,
    members,
    parse_pattern_name,
    pattern_from_name,
    project,
    realize,
    refines,
)
from oracles import circulant_block, group_mean_projection, same_group_by_definition

SHAPES = [(4, 4), (8, 4), (4, 12), (8, 8)]
KIND_BLOCKS = [(DENSE, 1), (CIRCULANT, 2), (CIRCULANT, 4), (B4_FRIENDLY_B2, 2), (B2_FRIENDLY_B4, 4)]


def ct(p, values, mask=None):
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(p.group_count, bool) if mask is None else np.asarray(mask, bool)
    return CompressedTensor(p, values, mask)


@pytest.mark.parametrize("kind,block", KIND_BLOCKS)
@pytest.mark.parametrize("shape", SHAPES)
def test_partition_matches_geometric_definition(kind, block, shape):
    p = build_pattern(kind, *shape, block)
    positions = list(itertools.product(range(shape[0]), range(shape[1])))
    for (a, b), (c, d) in itertools.combinations(positions, 2):
        same = p.group_of[a, b] == p.group_of[c, d]
        assert same == same_group_by_definition(kind, block, a, b, c, d)


@pytest.mark.parametrize("kind,block", KIND_BLOCKS)
def test_partition_is_total_and_numbered_by_first_occurrence(kind, block):
    p = build_pattern(kind, 8, 8, block)
    ids = p.group_of.ravel()
    assert set(ids) == set(range(p.group_count))
    first_seen = list(dict.fromkeys(ids.tolist()))
    assert first_seen == list(range(p.group_count))
    assert np.all(p.sizes == block)


def test_group_counts_from_examples():
    assert build_pattern(CIRCULANT, 4, 4, 2).group_count == 8
    assert build_pattern(CIRCULANT, 4, 4, 4).group_count == 4
    b = build_pattern(B4_FRIENDLY_B2, 4, 4, 2)
    assert b.group_count == 8 and set(b.sizes) == {2}
    assert refines(b, build_pattern(CIRCULANT, 4, 4, 4))
    assert dense_pattern(3, 5).group_count == 15


@pytest.mark.parametrize(
    "args",
    [(CIRCULANT, 6, 4, 4), (CIRCULANT, 4, 4, 0), (B4_FRIENDLY_B2, 4, 4, 4), (B2_FRIENDLY_B4, 6, 4, 4), ("hexagonal", 4, 4, 2), (DENSE, 4, 4, 2)],
)
def test_invalid_patterns(args):
    with pytest.raises(StructureError):
        build_pattern(*args)


def test_pattern_names():
    assert parse_pattern_name("circulant-4") == (CIRCULANT, 4)
    assert parse_pattern_name("b4-friendly-b2") == (B4_FRIENDLY_B2, 2)
    assert pattern_from_name("circulant-1", 4, 4).kind == DENSE
    assert build_pattern(CIRCULANT, 4, 4, 2).name == "circulant-2"
    with pytest.raises(StructureError):
        parse_pattern_name("circulant-x")


def test_realize_circulant_two():
    p = build_pattern(CIRCULANT, 2, 2, 2)
    assert np.array_equal(realize(ct(p, [1, 2])), [[1, 2], [2, 1]])
    assert np.array_equal(realize(ct(p, [1, 2], [True, False])), [[1, 0], [0, 1]])


def test_realize_circulant_four_row_rotation():
    p = build_pattern(CIRCULANT, 4, 4, 4)
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    m = realize(ct(p, [a, b, c, d]))
    assert np.array_equal(m, circulant_block([a, b, c, d]))
    assert np.array_equal(m[1], [d, a, b, c])


def test_pruned_values_forced_to_zero():
    p = build_pattern(CIRCULANT, 2, 2, 2)
    t = ct(p, [1, 2], [False, True])
    assert t.values[0] == 0
    with pytest.raises(StructureError):
        CompressedTensor(p, np.ones(3), np.ones(3, bool))


def test_project_group_mean_example():
    p = build_pattern(CIRCULANT, 2, 2, 2)
    assert np.array_equal(project(np.array([[1.0, 3.0], [5.0, 7.0]]), p).values, [4, 4])


@pytest.mark.parametrize("kind,block", KIND_BLOCKS)
def test_project_matches_oracle_and_is_idempotent(kind, block):
    rng = np.random.default_rng(0)
    m = rng.normal(size=(8, 12))
    p = build_pattern(kind, 8, 12, block)
    out = project(m, p, dtype=np.float64)
    assert np.allclose(realize(out), group_mean_projection(m, p.group_of), atol=1e-12)
    again = project(realize(out), p, dtype=np.float64)
    assert np.allclose(again.values, out.values, atol=1e-12)


def test_project_dense_keeps_entries():
    m = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(project(m, dense_pattern(2, 3)).values, m.ravel())


def test_refines_examples():
    c2 = build_pattern(CIRCULANT, 4, 4, 2)
    c4 = build_pattern(CIRCULANT, 4, 4, 4)
    assert refines(c4, c4)
    assert not refines(c2, c4)
    assert refines(build_pattern(B4_FRIENDLY_B2, 4, 4, 2), c4)
    assert refines(c2, build_pattern(B2_FRIENDLY_B4, 4, 4, 4))
    assert refines(dense_pattern(4, 4), c2)


def test_refines_agrees_with_membership_enumeration():
    pats = [build_pattern(k, 8, 8, b) for k, b in KIND_BLOCKS]
    for fine, coarse in itertools.product(pats, pats):
        by_members = all(len({int(coarse.group_of[i, j]) for i, j in grp}) == 1 for grp in members(fine))
        assert refines(fine, coarse) == by_members


def test_friendly_conversions_keep_realization():
    rng = np.random.default_rng(1)
    c4 = build_pattern(CIRCULANT, 8, 8, 4)
    src = ct(c4, rng.normal(size=c4.group_count), rng.random(c4.group_count) > 0.3)
    out = convert_friendly(src, build_pattern(B4_FRIENDLY_B2, 8, 8, 2))
    assert np.array_equal(realize(out), realize(src))
    b2f4 = build_pattern(B2_FRIENDLY_B4, 8, 8, 4)
    src = ct(b2f4, rng.normal(size=b2f4.group_count))
    out = convert_friendly(src, build_pattern(CIRCULANT, 8, 8, 2))
    assert np.array_equal(realize(out), realize(src))


def test_friendly_conversion_rejects_non_refinement():
    c4 = build_pattern(CIRCULANT, 4, 4, 4)
    with pytest.raises(ConversionError, match="circulant-2.*circulant-4"):
        convert_friendly(ct(c4, [1, 2, 3, 4]), build_pattern(CIRCULANT, 4, 4, 2))


def test_projection_conversion_example():
    c4 = build_pattern(CIRCULANT, 4, 4, 4)
    src = ct(c4, [1, 2, 3, 4])
    assert np.array_equal(realize(src)[:2, :2], [[1, 2], [4, 1]])
    out = convert_projection(src, build_pattern(CIRCULANT, 4, 4, 2))
    assert np.array_equal(realize(out)[:2, :2], [[1, 3], [3, 1]])


def test_projection_conversion_of_zero_and_refinement():
    c2 = build_pattern(CIRCULANT, 4, 4, 2)
    zero = ct(c2, np.zeros(c2.group_count))
    assert not realize(convert_projection(zero, build_pattern(CIRCULANT, 4, 4, 4))).any()
    src = ct(build_pattern(CIRCULANT, 4, 4, 4), [1, 2, 3, 4])
    out = convert_projection(src, build_pattern(B4_FRIENDLY_B2, 4, 4, 2))
    assert np.array_equal(realize(out), realize(src))


def test_projection_conversion_prunes_groups_touching_pruned_positions():
    c4 = build_pattern(CIRCULANT, 4, 4, 4)
    src = ct(c4, [1, 2, 3, 4], [True, False, True, True])
    out = convert_projection(src, build_pattern(CIRCULANT, 4, 4, 2))
    assert np.all(realize(out)[~src.position_mask()] == 0)


@settings(max_examples=40, deadline=None)
@given(
    kb=st.sampled_from(KIND_BLOCKS),
    blocks=st.tuples(st.integers(1, 3), st.integers(1, 3)),
    seed=st.integers(0, 2**16),
)
def test_projection_is_frobenius_nearest(kb, blocks, seed):
    kind, block = kb
    rows, cols = 4 * blocks[0], 4 * blocks[1]
    p = build_pattern(kind, rows, cols, block)
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(rows, cols))
    best = realize(project(m, p, dtype=np.float64))
    # any other structured matrix is no closer
    other = realize(ct(p, rng.normal(size=p.group_count)))
    assert np.linalg.norm(m - best) <= np.linalg.norm(m - other) + 1e-12
    # residual is orthogonal to the structure space
    assert abs(np.sum((m - best) * other)) < 1e-9
