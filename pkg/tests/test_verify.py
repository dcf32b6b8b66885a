from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jslr.errors import InvalidParams, TooLarge
from jslr.sampling import PerColumnOperators, gaussian_operator, measure
from jslr.solver import BlockSystem
from jslr.verify import (
    check_spark_condition,
    check_clustered_uniqueness,
    clustered_instance,
    fit_tail_slope,
    kappa_tail_montecarlo,
    measurement_budget,
    mmv_ambiguity_witness,
    rip_delta_bruteforce,
    spark_bruteforce,
    spark_deficient_operator,
    subspace_failure_witness,
    verification_suite,
    uniqueness_check,
)


# -- spark -------------------------------------------------------------------

def test_spark_identity_is_sentinel():
    res = spark_bruteforce(np.eye(4))
    assert res.spark == 5 and res.witness is None and res.complete


def test_spark_duplicated_column():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((4, 6))
    m[:, 4] = m[:, 1]
    res = spark_bruteforce(m)
    assert res.spark == 2 and res.witness == (1, 4)


def test_spark_gaussian_5x10():
    assert spark_bruteforce(gaussian_operator(5, 10, 1).phi).spark == 6


def test_spark_gaussian_is_s_plus_one_in_99_of_100():
    hits = sum(spark_bruteforce(gaussian_operator(4, 9, seed).phi).spark == 5 for seed in range(100))
    assert hits >= 99


def test_spark_guard_and_partial_search():
    with pytest.raises(TooLarge):
        spark_bruteforce(np.ones((3, 30)))
    res = spark_bruteforce(gaussian_operator(6, 10, 0).phi, max_cardinality=3)
    assert res.spark == 4 and not res.complete


def test_spark_deficient_operator_has_small_spark():
    phi = spark_deficient_operator(6, 12, 3, seed=0)
    assert spark_bruteforce(phi.phi).spark <= 3


# -- RIP -------------------------------------------------------------------------

def test_rip_orthonormal_columns_k1():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((6, 4)))
    assert rip_delta_bruteforce(q, 1, scale=1.0).delta_k == pytest.approx(0, abs=1e-12)


def test_rip_two_columns_closed_form():
    eps = 0.3
    e1 = np.array([1.0, 0.0])
    c2 = np.array([1.0, eps]) / np.hypot(1.0, eps)
    phi = np.stack([e1, c2], axis=1)
    # Gram [[1, g], [g, 1]] with g = <e1, c2> has eigenvalues 1 +- g
    g = 1.0 / np.hypot(1.0, eps)
    assert rip_delta_bruteforce(phi, 2, scale=1.0).delta_k == pytest.approx(g, rel=1e-12)
    assert rip_delta_bruteforce(phi, 1, scale=1.0).delta_k == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("scale", ["unit", 1.0])
def test_rip_monotone_in_k(scale):
    for seed in range(5):
        phi = gaussian_operator(6, 10, seed)
        deltas = [rip_delta_bruteforce(phi, k, scale=scale).delta_k for k in range(1, 7)]
        assert all(a <= b + 1e-12 for a, b in zip(deltas, deltas[1:]))


def test_rip_optimal_scaling_below_one_for_full_spark():
    phi = gaussian_operator(8, 12, 3)
    assert rip_delta_bruteforce(phi, 4, scale="optimal").delta_k < 1


def test_rip_guard():
    with pytest.raises(TooLarge):
        rip_delta_bruteforce(np.ones((5, 60)), 5)


# -- uniqueness ----------------------------------------------------------------

def test_uniqueness_true_on_clustered_instance():
    inst = clustered_instance(n=12, k=2, r=2, p=2, rows_per_cluster=2, seed=0)
    assert inst.spark_C.spark >= 4
    assert uniqueness_check(inst.sys, inst.support)


def test_uniqueness_false_for_zero_operators():
    a = PerColumnOperators([np.zeros((3, 8))] * 4)
    sys = BlockSystem(np.linalg.qr(np.random.default_rng(0).standard_normal((4, 2)))[0], a)
    assert not uniqueness_check(sys, [0, 1])


def test_uniqueness_false_on_mmv_witness():
    w = mmv_ambiguity_witness(s=5, n=10, k=3, N=6, seed=1)
    assert not np.allclose(w.x1, w.x2)
    y1 = measure(w.x1, None, w.sys.a).stacked_y()
    y2 = measure(w.x2, None, w.sys.a).stacked_y()
    assert np.allclose(y1, y2, atol=1e-12)
    assert not uniqueness_check(w.sys, w.union_support)


def test_uniqueness_false_on_deficient_clusters():
    inst = clustered_instance(n=12, k=2, r=2, p=2, rows_per_cluster=2, seed=1, deficient=True)
    assert not uniqueness_check(inst.sys, inst.support)


def test_uniqueness_monotone_in_rows():
    rng = np.random.default_rng(4)
    for seed in range(10):
        inst = clustered_instance(n=12, k=2, r=2, p=2, rows_per_cluster=2, seed=seed)
        before = uniqueness_check(inst.sys, inst.support)
        a = inst.sys.a
        extra = [np.vstack([c, rng.standard_normal((1, 12))]) for c in a.clusters]
        bigger = PerColumnOperators([extra[j] for j in a.cluster_map], cluster_map=a.cluster_map, clusters=extra)
        after = uniqueness_check(BlockSystem(inst.sys.q, bigger), inst.support)
        assert after or not before


def test_clustered_uniqueness_check_passes():
    assert all(c.passed for c in check_clustered_uniqueness(seed=0, instances=5))


# -- spark condition ------------------------------------------------------------------

def test_spark_condition_both_directions():
    res = check_spark_condition(seed=3)
    assert all(c.passed for c in res)
    phi = spark_deficient_operator(6, 12, 3, seed=5)
    w = subspace_failure_witness(phi, k=3, N=8, seed=1)
    assert w is not None and w.projection_error > 0.1
    # the witness is k-jointly sparse
    assert np.count_nonzero(np.linalg.norm(w.x, axis=1)) <= 3


# -- condition number tail ------------------------------------------------------------

def test_kappa_tail_reproducible():
    grid = np.geomspace(1.5, 100, 20)
    a = kappa_tail_montecarlo(3, 3, 100, grid, seed=4)
    b = kappa_tail_montecarlo(3, 3, 100, grid, seed=4)
    assert np.array_equal(a.exceed_counts, b.exceed_counts)
    assert np.array_equal(a.kappas, b.kappas)


def test_kappa_tail_requires_trials():
    with pytest.raises(InvalidParams):
        kappa_tail_montecarlo(3, 3, 50, [2.0], seed=0)


def test_kappa_tail_heavy_at_s_equal_r():
    tail = kappa_tail_montecarlo(3, 3, 20_000, np.geomspace(2, 50, 25), seed=1)
    assert tail.kappas.max() > 50
    assert -3.0 <= tail.slope <= -1.5


def test_kappa_tail_steep_at_s_r_plus_3():
    tail = kappa_tail_montecarlo(6, 3, 100_000, np.geomspace(1.2, 20, 60), seed=2)
    assert tail.slope <= -7 + 1


def test_fit_tail_slope_exact_power_law():
    c = np.geomspace(1, 100, 30)
    trials = 10**9
    counts = np.rint(trials * 0.05 * c**-3.0)
    slope, mask = fit_tail_slope(c, counts, trials)
    assert slope == pytest.approx(-3.0, abs=1e-3) and mask.any()


# -- budget --------------------------------------------------------------------

def test_budget_examples():
    b = measurement_budget(1, 1, 1, 1)
    assert b.proposed_total == 2 and b.mmv_total == 2
    b = measurement_budget(12, 5, 100, 40)
    assert b.proposed_total == 295 and b.mmv_total == 800
    b = measurement_budget(50, 2, 16384, 10_000)
    assert b.proposed_total < b.mmv_total / 40
    assert isinstance(b.proposed_per_frame, Fraction)


@settings(max_examples=1000, deadline=None)
@given(data=st.data())
def test_budget_integer_exact(data):
    r = data.draw(st.integers(1, 50))
    k = data.draw(st.integers(r, 500))
    n = data.draw(st.integers(k, 10**6))
    N = data.draw(st.integers(1, 10**4))
    b = measurement_budget(k, r, n, N)
    assert b.proposed_total == (2 * k - r + N) * r
    assert b.mmv_total == (2 * k - r + 1) * N
    assert b.proposed_per_frame == r + Fraction(2 * k * r, N)
    # the per-frame figure is the order-level form; it exceeds total / N by r^2 / N
    assert b.proposed_per_frame * N - b.proposed_total == r * r
    assert b.dof == r * (n + N - r)


def test_budget_rejects_bad_tuple():
    with pytest.raises(InvalidParams):
        measurement_budget(2, 3, 10, 4)


# -- suite -----------------------------------------------------------------------

def test_suite_turns_exceptions_into_failures(monkeypatch):
    import jslr.verify as v

    def boom(*a, **k):
        raise TooLarge("guard")

    monkeypatch.setattr(v, "check_kappa_bound", boom)
    monkeypatch.setattr(v, "check_kappa_tail", lambda *a, **k: [])
    res = verification_suite(seed=0)
    failed = [c for c in res if not c.passed]
    assert any("TooLarge" in c.detail for c in failed)
