import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jslr.errors import DimMismatch, NotOrthonormal
from jslr.model import PhantomSpec, generate_phantom
from jslr.sampling import CommonOperator, gaussian_operator
from jslr.subspace import conditioning_report, estimate_row_subspace, projection_error, rip_kappa_bound
from jslr.verify import rip_delta_bruteforce, spark_deficient_operator, subspace_failure_witness


def unitary(rng, r):
    q, _ = np.linalg.qr(rng.standard_normal((r, r)) + 1j * rng.standard_normal((r, r)))
    return q


def estimate(z, rank):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return estimate_row_subspace(z, rank=rank)


def test_projection_error_examples():
    rng = np.random.default_rng(0)
    basis, _ = np.linalg.qr(rng.standard_normal((8, 6)) + 1j * rng.standard_normal((8, 6)))
    v1, v2 = basis[:, :3], basis[:, 3:]
    assert projection_error(v1, v1) == pytest.approx(0, abs=1e-15)
    assert projection_error(v1, v2) == pytest.approx(1, abs=1e-12)
    assert projection_error(v1, v1 @ unitary(rng, 3)) < 1e-12


def test_projection_error_rejects_nonorthonormal():
    with pytest.raises(NotOrthonormal):
        projection_error(np.ones((4, 1)), np.eye(4)[:, :1])
    with pytest.raises(DimMismatch):
        projection_error(np.eye(4)[:, :1], np.eye(3)[:, :1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), r1=st.integers(1, 4), r2=st.integers(1, 4))
def test_projection_error_symmetric_bounded_and_rotation_invariant(seed, r1, r2):
    rng = np.random.default_rng(seed)
    a, _ = np.linalg.qr(rng.standard_normal((9, r1)) + 1j * rng.standard_normal((9, r1)))
    b, _ = np.linalg.qr(rng.standard_normal((9, r2)) + 1j * rng.standard_normal((9, r2)))
    e = projection_error(a, b)
    assert 0 <= e <= 1
    assert e == pytest.approx(projection_error(b, a), abs=1e-12)
    assert e == pytest.approx(projection_error(a @ unitary(rng, r1), b @ unitary(rng, r2)), abs=1e-12)


def test_rank_one_always_recovered():
    gt = generate_phantom(PhantomSpec(n=30, N=8, r=1, k=4, seed=3))
    phi = gaussian_operator(2, 30, 1)
    est = estimate(phi.phi @ gt.x.data, None)
    assert est.r_used == 1
    assert projection_error(est.q, gt.svd.V) < 1e-10


def test_threshold_at_rank():
    gt = generate_phantom(PhantomSpec(n=64, N=12, r=3, k=10, seed=0))
    ok = estimate(gaussian_operator(3, 64, 1).phi @ gt.x.data, 3)
    bad = estimate(gaussian_operator(2, 64, 1).phi @ gt.x.data, 3)
    assert projection_error(ok.q, gt.svd.V) < 1e-10
    assert projection_error(bad.q, gt.svd.V) > 0.05


def test_estimate_invariants():
    gt = generate_phantom(PhantomSpec(n=40, N=10, r=3, k=8, seed=4))
    z = gaussian_operator(6, 40, 2).phi @ gt.x.data
    est = estimate_row_subspace(z)
    assert est.r_used == 3
    assert np.allclose(est.q.conj().T @ est.q, np.eye(3), atol=1e-10)
    assert np.all(np.diff(est.spectrum_full) <= 0) and np.all(est.spectrum_full >= 0)
    # scale invariance
    for c in (1e-6, -3.0, 2j):
        assert projection_error(estimate_row_subspace(c * z).q, est.q) < 1e-10


def test_unitary_mixing_of_row_space():
    rng = np.random.default_rng(8)
    gt = generate_phantom(PhantomSpec(n=40, N=10, r=3, k=8, seed=5))
    phi = gaussian_operator(5, 40, 3).phi
    W = unitary(rng, 3)
    # X W' with W' acting inside the row space keeps the span of V
    mix = gt.svd.V @ W @ gt.svd.V.conj().T
    x2 = gt.x.data @ mix
    a = estimate(phi @ gt.x.data, 3)
    b = estimate(phi @ x2, 3)
    assert projection_error(a.q, b.q) < 1e-10


def test_generic_sufficiency_100_trials():
    r = 3
    for t in range(100):
        gt = generate_phantom(PhantomSpec(n=32, N=10, r=r, k=8, seed=t))
        good = estimate(gaussian_operator(r, 32, 1000 + t).phi @ gt.x.data, r)
        bad = estimate(gaussian_operator(r - 1, 32, 2000 + t).phi @ gt.x.data, r)
        assert projection_error(good.q, gt.svd.V) < 1e-8
        assert projection_error(bad.q, gt.svd.V) > 1e-3


def test_subspace_failure_witness_not_recovered():
    phi = spark_deficient_operator(6, 12, 3, seed=1)
    w = subspace_failure_witness(phi, k=3, N=8, seed=2)
    assert w is not None
    assert w.projection_error > 0.1


def test_noise_monotone_in_s():
    meds = []
    for s in (5, 10, 20):
        errs = []
        for seed in range(20):
            gt = generate_phantom(PhantomSpec(n=200, N=20, r=5, k=30, seed=seed, check_spark=False))
            z = gaussian_operator(s, 200, 100 + seed).phi @ gt.x.data
            rng = np.random.default_rng(seed)
            sig = np.sqrt(np.mean(np.abs(z) ** 2) / 10 ** 3.5 / 2)
            z = z + sig * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
            errs.append(projection_error(estimate(z, 5).q, gt.svd.V))
        meds.append(np.median(errs))
    assert meds[0] >= meds[1] >= meds[2]


def test_conditioning_identity_operator():
    gt = generate_phantom(PhantomSpec(n=12, N=6, r=3, k=4, seed=0))
    rep = conditioning_report(CommonOperator(np.eye(12)), gt, delta_k=0.0)
    assert rep.rip_bound == pytest.approx(rep.kappa_X)
    assert rep.kappa_R == pytest.approx(rep.kappa_X, rel=1e-10)


@pytest.mark.parametrize("scale", ["unit", "optimal"])
def test_conditioning_bound_small_instance(scale):
    for seed in range(5):
        phi = gaussian_operator(8, 12, seed)
        gt = generate_phantom(PhantomSpec(n=12, N=6, r=3, k=4, seed=seed))
        rip = rip_delta_bruteforce(phi, 4, scale=scale)
        assert conditioning_report(phi, gt, rip.delta_k).bound_holds


def test_conditioning_bound_equal_singular_values():
    gt = generate_phantom(PhantomSpec(n=12, N=6, r=3, k=4, seed=2, sigma_range=(1.0, 1.0)))
    phi = gaussian_operator(8, 12, 7)
    rip = rip_delta_bruteforce(phi, 4, scale="optimal")
    rep = conditioning_report(phi, gt, rip.delta_k)
    assert rep.kappa_X == pytest.approx(1.0)
    assert rep.kappa_R <= np.sqrt((1 + rip.delta_k) / (1 - rip.delta_k)) * (1 + 1e-9)


def test_rip_kappa_bound_vacuous_past_one():
    assert rip_kappa_bound(1.0, 2.0) == float("inf")
    assert rip_kappa_bound(0.0, 2.0) == 2.0
