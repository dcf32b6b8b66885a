import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jslr.errors import InvalidSpec, ZeroMatrix
from jslr.model import (
    MatrixSignal,
    PhantomSpec,
    condition_number,
    generate_phantom,
    joint_support,
    skinny_svd,
)


def _rank(x, tol=1e-12):
    s = np.linalg.svd(x, compute_uv=False)
    return int(np.sum(s > tol * s[0]))


def test_minimal_phantom_has_one_row_and_rank_one():
    gt = generate_phantom(PhantomSpec(n=16, N=8, r=1, k=1, seed=7))
    rows = np.flatnonzero(np.linalg.norm(gt.x.data, axis=1))
    assert rows.size == 1
    assert _rank(gt.x.data) == 1


def test_rank5_phantom_support_and_spark():
    gt = generate_phantom(PhantomSpec(n=64, N=20, r=5, k=12, seed=1))
    x = gt.x.data
    s = np.linalg.svd(x, compute_uv=False)
    assert s[5] / s[0] < 1e-12 and _rank(x) == 5
    assert np.count_nonzero(np.linalg.norm(x, axis=1)) == 12
    # every r columns independent (sampled subsets)
    rng = np.random.default_rng(0)
    for _ in range(200):
        cols = rng.choice(20, size=5, replace=False)
        assert np.linalg.matrix_rank(x[:, cols], tol=1e-10 * s[0]) == 5


def test_large_phantom_accepted():
    gt = generate_phantom(PhantomSpec(n=16384, N=200, r=20, k=300, seed=0, check_spark=False))
    assert gt.x.shape == (16384, 200)
    assert gt.svd.sigma.size == 20


def test_band_layout_is_two_image_rows():
    gt = generate_phantom(PhantomSpec(n=1024, N=10, r=3, k=64, seed=2, image_side=32, layout="band"))
    rows = np.unique(gt.support // 32)
    assert rows.size == 2 and rows[1] == rows[0] + 1


@pytest.mark.parametrize("kw", [
    dict(n=16, N=4, r=5, k=5),
    dict(n=4, N=4, r=1, k=5),
    dict(n=16, N=4, r=1, k=1, image_side=5),
    dict(n=16, N=4, r=1, k=1, layout="band"),
    dict(n=16, N=4, r=1, k=1, sigma_range=(2.0, 1.0)),
])
def test_invalid_specs(kw):
    with pytest.raises(InvalidSpec):
        generate_phantom(PhantomSpec(**kw))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.integers(1, 4), extra=st.integers(0, 6))
def test_phantom_invariants(seed, r, extra):
    k = r + extra
    gt = generate_phantom(PhantomSpec(n=40, N=9, r=r, k=k, seed=seed))
    x = gt.x.data
    U, sig, V = gt.svd.U, gt.svd.sigma, gt.svd.V
    assert np.allclose(U.conj().T @ U, np.eye(r), atol=1e-10)
    assert np.allclose(V.conj().T @ V, np.eye(r), atol=1e-10)
    assert np.all(sig > 0) and np.all(np.diff(sig) <= 0)
    assert np.linalg.norm(U * sig @ V.conj().T - x) <= 1e-10 * np.linalg.norm(x)
    assert np.array_equal(joint_support(x), gt.support)
    outside = np.setdiff1d(np.arange(40), gt.support)
    assert np.all(x[outside] == 0)
    assert skinny_svd(x).sigma.size == r


def test_support_consistency_over_100_specs():
    rng = np.random.default_rng(5)
    for t in range(100):
        r = int(rng.integers(1, 4))
        k = int(rng.integers(r, 15))
        gt = generate_phantom(PhantomSpec(n=30, N=6, r=r, k=k, seed=t))
        assert np.array_equal(joint_support(gt.x.data), gt.support)


def test_determinism_bit_identical():
    spec = PhantomSpec(n=64, N=10, r=3, k=8, seed=11)
    a, b = generate_phantom(spec), generate_phantom(spec)
    assert a.x.data.tobytes() == b.x.data.tobytes()
    assert np.array_equal(a.support, b.support)


def test_skinny_svd_rank_one_outer_product():
    N = 7
    x = np.zeros((5, N))
    x[0] = 1.0
    svd = skinny_svd(x)
    assert svd.sigma.size == 1
    assert svd.sigma[0] == pytest.approx(np.sqrt(N))


def test_skinny_svd_matches_full_svd_on_phantom():
    gt = generate_phantom(PhantomSpec(n=50, N=12, r=5, k=10, seed=3))
    svd = skinny_svd(gt.x.data)
    full = np.linalg.svd(gt.x.data, compute_uv=False)
    assert svd.sigma.size == 5
    assert np.allclose(svd.sigma, full[:5], rtol=1e-12)


def test_skinny_svd_equal_singular_values():
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3)))
    V, _ = np.linalg.qr(rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3)))
    x = U @ np.diag([2.0, 2.0, 1.0]) @ V.conj().T
    svd = skinny_svd(x)
    assert svd.sigma.size == 3
    assert np.allclose(svd.U.conj().T @ svd.U, np.eye(3), atol=1e-12)
    assert np.allclose(svd.V.conj().T @ svd.V, np.eye(3), atol=1e-12)
    assert np.allclose(svd.matrix(), x, atol=1e-12)


def test_skinny_svd_zero_matrix_raises():
    with pytest.raises(ZeroMatrix):
        skinny_svd(np.zeros((3, 3)))


def test_joint_support_examples():
    assert joint_support(np.zeros((4, 3))).size == 0
    x = np.ones((4, 3))
    x[2] *= 1e-16
    assert list(joint_support(x, tol=1e-8)) == [0, 1, 3]


def test_condition_number_examples():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((6, 3)))
    assert condition_number(q) == pytest.approx(1.0, abs=1e-12)
    assert condition_number(np.diag([4.0, 2.0])) == pytest.approx(2.0)
    g = np.random.default_rng(2).standard_normal((8, 3))
    s = np.linalg.svd(g, compute_uv=False)
    assert condition_number(g) == pytest.approx(s[0] / s[-1], rel=1e-12)


def test_matrix_signal_rejects_nonfinite():
    with pytest.raises(ValueError):
        MatrixSignal(np.array([[1.0, np.nan]]))
