"""Spray batch-size formulas against direct probability search."""

import math

import pytest

from sidenet.handshake import (naive_batch_size, optimized_batch_exact,
                               optimized_batch_size, optimized_batch_total)


def minimal_batch_by_search(n, p=0.95):
    """Smallest k with 1 - (1 - 1/n^2)^k >= p, found by counting up."""
    per_packet_miss = 1.0 - 1.0 / (n * n)
    k, miss = 0, 1.0
    while True:
        k += 1
        miss *= per_packet_miss
        if 1.0 - miss >= p:
            return k


def test_pinned_naive_sizes():
    assert naive_batch_size(4, 0.95) == 47
    assert naive_batch_size(8, 0.95) == 191


def test_pinned_optimized_totals():
    assert optimized_batch_total(4, 0.95) == 25
    assert optimized_batch_total(8, 0.95) == 55


def test_optimized_per_side_ceilings():
    assert optimized_batch_size(4, 0.95) == 13
    assert optimized_batch_size(8, 0.95) == 28
    assert math.floor(2 * optimized_batch_exact(4, 0.95)) == 25


def test_single_engine_degenerates_to_one_packet():
    assert naive_batch_size(1, 0.95) == 1
    assert optimized_batch_size(1, 0.95) == 1


@pytest.mark.parametrize("n", [2, 3, 4, 8])
def test_naive_formula_equals_search(n):
    assert naive_batch_size(n, 0.95) == minimal_batch_by_search(n, 0.95)


@pytest.mark.parametrize("n", [2, 3, 4, 8, 16])
def test_batch_actually_clears_target(n):
    k = naive_batch_size(n, 0.95)
    assert 1.0 - (1.0 - 1.0 / (n * n)) ** k >= 0.95
    assert 1.0 - (1.0 - 1.0 / (n * n)) ** (k - 1) < 0.95
    per_side = optimized_batch_size(n, 0.95)
    hit = 1.0 - (1.0 - 1.0 / n) ** per_side
    assert hit * hit >= 0.95


@pytest.mark.parametrize("bad_p", [0.0, 1.0, -0.5, 1.5])
def test_probability_domain_checked(bad_p):
    with pytest.raises(ValueError):
        naive_batch_size(4, bad_p)
    with pytest.raises(ValueError):
        optimized_batch_size(4, bad_p)


def test_engine_count_domain_checked():
    with pytest.raises(ValueError):
        naive_batch_size(0)
