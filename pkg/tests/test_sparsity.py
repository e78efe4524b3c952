import numpy as np
import pytest

from gst.grouping import B2_FRIENDLY_B4, CIRCULANT, CompressedTensor, build_pattern, dense_pattern, project
from gst.netcore import CompressedLinear
from gst.sparsity import (
    cr_bitmap,
    cr_exact,
    cr_formula,
    cr_ideal,
    magnitude_prune,
    measure,
    positions_needed,
    stored_bits,
)
from oracles import stored_bits_by_count


def layer(p, values=None, mask=None, bias=0, compressed=True):
    values = np.ones(p.group_count) if values is None else np.asarray(values, dtype=np.float64)
    mask = np.ones(p.group_count, bool) if mask is None else np.asarray(mask, bool)
    return CompressedLinear(CompressedTensor(p, values, mask), np.zeros(bias), compressed)


def test_prune_singletons_by_magnitude():
    p = dense_pattern(1, 4)
    out = magnitude_prune(CompressedTensor(p, np.array([0.5, -0.1, 0.3, 0.2]), np.ones(4, bool)), 0.5)
    assert out.mask.tolist() == [True, False, True, False]


def test_prune_is_monotone_noop_below_current():
    p = dense_pattern(2, 2)
    ct = CompressedTensor(p, np.array([1.0, 2.0, 3.0, 4.0]), np.array([False, False, True, True]))
    assert np.array_equal(magnitude_prune(ct, 0.25).mask, ct.mask)
    assert np.array_equal(magnitude_prune(ct, 0.5).mask, ct.mask)


def test_prune_at_group_granularity():
    p = build_pattern(CIRCULANT, 2, 4, 2)
    ct = CompressedTensor(p, np.array([0.4, 0.1, 0.3, 0.2]), np.ones(4, bool))
    out = magnitude_prune(ct, 0.5)
    assert (~out.mask).sum() == 2
    assert out.mask.tolist() == [True, False, True, False]


def test_prune_ties_broken_by_group_id():
    p = dense_pattern(1, 4)
    out = magnitude_prune(CompressedTensor(p, np.array([0.2, 0.2, 0.2, 0.2]), np.ones(4, bool)), 0.5)
    assert out.mask.tolist() == [False, False, True, True]


def test_prune_rejects_bad_target():
    with pytest.raises(ValueError):
        magnitude_prune(CompressedTensor(dense_pattern(1, 2), np.ones(2), np.ones(2, bool)), 1.5)


def test_positions_needed_absorbs_float_drift():
    # 0.05 added six times is 0.30000000000000004; it must still mean 30 of 100
    p = 0.0
    for _ in range(6):
        p += 0.05
    assert positions_needed(p, 100) == 30
    assert positions_needed(0.0, 10) == 0 and positions_needed(1.0, 10) == 10


def test_measure_fresh_and_weighted():
    p = dense_pattern(4, 4)
    assert measure([layer(p), layer(p)]).s_global == 0
    rep = measure([layer(p, mask=np.zeros(16, bool)), layer(p)])
    assert rep.s_global == 0.5
    assert rep.s_layer == [1.0, 0.0]


def test_measure_fraction_of_compressed_parameters():
    # a 2-layer net where the compressed layer holds 917 of 1000 parameters
    big = layer(dense_pattern(7, 131), bias=0)
    small = layer(dense_pattern(1, 83), bias=0, compressed=False)
    assert measure([big, small]).frac == pytest.approx(0.917)


def test_measure_ignores_uncompressed_layers_for_sparsity():
    p = dense_pattern(2, 2)
    rep = measure([layer(p, mask=np.zeros(4, bool), compressed=False), layer(p)])
    assert rep.s_global == 0 and rep.p_comp == 4 and rep.p_total == 8


@pytest.mark.parametrize("b,s,frac,expected", [(2, 0.5, 1, 0.75), (1, 0, 1, 0.0), (4, 1, 1, 1.0)])
def test_cr_ideal_values(b, s, frac, expected):
    assert cr_ideal(b, s, frac) == expected


@pytest.mark.parametrize("b,s,frac,expected", [(4, 0, 1, 0.6875), (1, 0, 1, -0.0625), (4, 1, 1, 0.9375)])
def test_cr_bitmap_values(b, s, frac, expected):
    assert cr_bitmap(b, s, frac) == expected


def test_cr_exact_bit_count_examples():
    c2 = build_pattern(CIRCULANT, 4, 4, 2)
    half = layer(c2, mask=[True, False] * 4)
    assert stored_bits([half]) == (80, 256)
    assert cr_exact([half]) == 0.6875 == cr_bitmap(2, 0.5, 1)
    b2f4 = layer(build_pattern(B2_FRIENDLY_B4, 4, 4, 4))
    assert stored_bits([b2f4]) == (80, 256)
    assert cr_exact([b2f4]) == 0.6875 == cr_bitmap(4, 0, 1)


def test_cr_exact_dense_model_is_zero():
    assert cr_exact([layer(dense_pattern(3, 3), bias=3, compressed=False)]) == 0


def test_cr_formula_matches_accounting_on_mixed_model():
    rng = np.random.default_rng(4)
    layers = [
        layer(build_pattern(CIRCULANT, 8, 8, 4), mask=rng.random(16) > 0.5, bias=8),
        layer(dense_pattern(8, 8), mask=rng.random(64) > 0.3, bias=8),
        layer(dense_pattern(2, 8), bias=2, compressed=False),
    ]
    assert stored_bits(layers) == stored_bits_by_count(layers)
    assert abs(cr_exact(layers) - cr_formula(measure(layers))) <= 1e-12
