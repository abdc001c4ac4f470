import itertools
import math

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsegap.errors import BudgetExceeded, PreconditionError, ZeroVector
from sparsegap.hard_design import build_Ak, build_Bk, build_Cx
from sparsegap.re_cond import (
    ConeSpec,
    _project_cone,
    check_normalization,
    gaussian_bound_suite,
    in_cone,
    operator_norm,
    rayleigh,
    re_upper_bound,
    sample_cone_vectors,
    support_lambda_min,
    zero_re_certificate,
)
from sparsegap.x3c import build_cover_matrix


def exact_cone_re(X, k, factor=3.0):
    """Minimum Rayleigh quotient over the union of cones, by enumerating cone faces.

    Each cone is split into polyhedral pieces by the sign pattern. On every
    face the minimizer, if interior to the face, is an eigenvector of G
    compressed to the face's linear span; checking all of them is exact.
    """
    n, d = X.shape
    G = X.T @ X / n
    best = math.inf
    for S in itertools.combinations(range(d), k):
        on = np.zeros(d, dtype=bool)
        on[list(S)] = True
        for signs in itertools.product((-1.0, 1.0), repeat=d):
            s = np.array(signs)
            A = np.vstack([-np.diag(s), np.where(on, -factor * s, s)[None, :]])
            for r in range(A.shape[0] + 1):
                for active in itertools.combinations(range(A.shape[0]), r):
                    if active:
                        _, sv, vt = np.linalg.svd(A[list(active)])
                        rank = int((sv > 1e-12).sum())
                        Q = vt[rank:].T
                    else:
                        Q = np.eye(d)
                    if Q.shape[1] == 0:
                        continue
                    w, V = np.linalg.eigh(Q.T @ G @ Q)
                    for val, v in zip(w, V.T):
                        theta = Q @ v
                        if np.all(A @ theta <= 1e-10) or np.all(A @ -theta <= 1e-10):
                            best = min(best, float(val))
    return best


def test_rayleigh_examples():
    n = 2
    X = math.sqrt(n) * np.diag([1.0, 2.0])
    assert rayleigh(X, [0.0, 1.0]) == pytest.approx(4.0, rel=1e-15)
    assert rayleigh(math.sqrt(5) * np.eye(5), np.arange(1.0, 6.0)) == pytest.approx(1.0, rel=1e-15)
    assert rayleigh(np.zeros((3, 3)), [1.0, 0.0, 0.0]) == 0.0
    with pytest.raises(ZeroVector):
        rayleigh(np.eye(2), [0.0, 0.0])


def test_cone_membership():
    spec = ConeSpec((0,))
    assert in_cone([1.0, 1.5, -1.5], spec)
    assert not in_cone([1.0, 2.0, -1.5], spec)
    with pytest.raises(PreconditionError):
        ConeSpec(())


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(3, 7))
def test_projection_matches_cvxpy(seed, d):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d) * rng.uniform(0.1, 5.0)
    k = int(rng.integers(1, d))
    mask = np.zeros(d, dtype=bool)
    mask[rng.choice(d, k, replace=False)] = True
    s = np.where(v[mask] >= 0, 1.0, -1.0)
    z = cp.Variable(d)
    cons = [cp.norm1(z[np.flatnonzero(~mask)]) <= 3.0 * (s @ z[np.flatnonzero(mask)])]
    cp.Problem(cp.Minimize(cp.sum_squares(z - v)), cons).solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    ours = _project_cone(v, mask, 3.0)
    np.testing.assert_allclose(ours, z.value, atol=1e-6)
    assert np.abs(ours[~mask]).sum() <= 3.0 * np.abs(ours[mask]).sum() * (1 + 1e-12)


def test_identity_sandwich_closes():
    n = 6
    est = re_upper_bound(math.sqrt(n) * np.eye(n), 2, restarts=20, seed=0)
    assert est.gamma_hat == pytest.approx(1.0, abs=1e-12)
    assert est.lower_bound == pytest.approx(1.0, abs=1e-12)


def test_duplicated_column():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 5))
    X[:, 3] = X[:, 1]
    est = re_upper_bound(X, 1, restarts=20, seed=0)
    assert est.gamma_hat <= 1e-12
    assert est.support_bound <= 1e-12 or est.gamma_hat <= est.support_bound


@pytest.mark.parametrize("seed,d,k", [(0, 4, 1), (1, 4, 2), (2, 5, 1), (3, 5, 2)])
def test_matches_exact_face_oracle(seed, d, k):
    rng = np.random.default_rng(seed)
    # correlated columns so the cone restriction matters
    X = rng.standard_normal((6, d)) @ (np.eye(d) + 0.8 * rng.standard_normal((d, d)))
    truth = exact_cone_re(X, k)
    est = re_upper_bound(X, k, restarts=100, seed=seed)
    assert est.gamma_hat >= truth - 1e-9
    assert est.gamma_hat == pytest.approx(truth, rel=1e-6, abs=1e-10)


def test_sandwich_and_witness():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((12, 8))
    est = re_upper_bound(X, 2, restarts=50, seed=3)
    tol = 1e-12 * max(1.0, float(np.abs(X.T @ X / 12).sum(axis=1).max()))
    assert est.lower_bound <= est.gamma_hat + tol
    assert est.gamma_hat <= support_lambda_min(X, 2) + tol
    assert in_cone(est.witness, ConeSpec(est.witness_support))
    assert est.gamma_hat == pytest.approx(rayleigh(X, est.witness), rel=1e-15)
    assert est.exhaustive and est.supports_examined == math.comb(8, 2)


def test_deterministic_and_json():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((10, 9))
    a = re_upper_bound(X, 3, restarts=30, seed=77)
    b = re_upper_bound(X, 3, restarts=30, seed=77)
    assert a.to_json() == b.to_json()
    assert '"seed": 77' in a.to_json() and '"restarts": 30' in a.to_json()


def test_sampled_supports():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((30, 20))
    est = re_upper_bound(X, 5, restarts=10, seed=1, max_supports=50)
    assert not est.exhaustive
    assert est.lower_bound <= est.gamma_hat + 1e-12


def _scaled(A, target):
    return A * math.sqrt(target * A.shape[0]) / operator_norm(A)


@pytest.mark.parametrize("seed", range(4))
def test_lipschitz_in_design(seed):
    rng = np.random.default_rng(seed)
    n, d, k = 12, 6, 2
    X = _scaled(rng.standard_normal((n, d)), 0.25)
    Y = _scaled(X + 0.05 * rng.standard_normal((n, d)), 0.25)
    gx = re_upper_bound(X, k, restarts=50, seed=0).gamma_hat
    gy = re_upper_bound(Y, k, restarts=50, seed=0).gamma_hat
    diff_op = operator_norm(X - Y) / math.sqrt(n)
    # square roots of the quotients are 1-Lipschitz; with both estimates below 1/4 so is the quotient
    assert abs(math.sqrt(gx) - math.sqrt(gy)) <= diff_op + 2e-9
    assert abs(gx - gy) <= diff_op + 2e-9


def test_zero_certificate_on_C0():
    M = build_cover_matrix(3)
    Bk = build_Bk(build_Ak(M, 2), 16)
    from sparsegap.hard_design import HardDesignParams

    params = HardDesignParams(m=3, t=2, n=48, d=16, gamma_target=0.02, l=30, seed=0)
    C0 = build_Cx(Bk, params, 0.0)
    theta = zero_re_certificate(C0, params.k)
    assert theta is not None
    assert np.linalg.norm(C0 @ theta) <= 1e-10 * np.linalg.norm(theta)
    assert np.count_nonzero(theta) <= 3 * params.k + 1
    top = tuple(np.argsort(-np.abs(theta), kind="stable")[: params.k])
    assert in_cone(theta, ConeSpec(top))
    assert re_upper_bound(C0, params.k, restarts=20, seed=0).gamma_hat <= 1e-8


def test_zero_certificate_full_rank_and_duplicate():
    assert zero_re_certificate(math.sqrt(8) * np.eye(8), 1) is None
    rng = np.random.default_rng(4)
    X = rng.standard_normal((20, 6))
    X[:, 2] = X[:, 0]
    theta = zero_re_certificate(X, 1)
    assert theta is not None
    theta = theta / theta[0]
    np.testing.assert_allclose(theta, [1, 0, -1, 0, 0, 0], atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_certificate_always_in_top_cone(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 3))
    X = rng.standard_normal((3 * k, 3 * k + 2))
    theta = zero_re_certificate(X, k)
    assert theta is not None
    top = tuple(np.argsort(-np.abs(theta), kind="stable")[:k])
    assert in_cone(theta, ConeSpec(top))
    assert np.linalg.norm(X @ theta) <= 1e-9 * np.linalg.norm(theta) * max(1.0, np.linalg.norm(X, 2))


def test_normalization_examples():
    n = 6
    ok = check_normalization(math.sqrt(n) * np.eye(n), 1)
    assert ok.passed and ok.worst_ratio == pytest.approx(1.0, abs=1e-14)
    bad = check_normalization(2 * math.sqrt(n) * np.eye(n), 1)
    assert not bad.passed and bad.worst_ratio == pytest.approx(4.0, rel=1e-14)
    sampled = check_normalization(2 * math.sqrt(n) * np.eye(n), 1, mode="sampled", seed=1)
    assert not sampled.passed and sampled.worst_ratio == pytest.approx(4.0, rel=1e-12)
    with pytest.raises(BudgetExceeded):
        check_normalization(np.eye(40), 10)
    with pytest.raises(PreconditionError):
        check_normalization(np.eye(4), 1, mode="fast")


def test_normalization_exact_matches_brute_force():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((7, 6))
    res = check_normalization(X, 1)
    oracle = max(np.linalg.norm(X[:, list(S)], 2) ** 2 / 7 for S in itertools.combinations(range(6), 2))
    assert res.worst_ratio == pytest.approx(oracle, rel=1e-12)


def test_operator_norm_matches_svd():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((30, 12))
    assert operator_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-8)
    assert operator_norm(np.zeros((3, 3))) == 0.0


def test_cone_sampler_members():
    vecs, masks = sample_cone_vectors(10, 3, 200, np.random.default_rng(0))
    for v, m in zip(vecs, masks):
        assert np.any(v)
        assert in_cone(v, ConeSpec(tuple(np.flatnonzero(m))))


def test_gaussian_suite_desk_config():
    with pytest.warns(UserWarning):
        report = gaussian_bound_suite(240, 30, 2, 20, seed=0)
    assert report.trials == 20
    assert report.trials_passing(0.99) >= 19


def test_gaussian_suite_rejects_k0():
    with pytest.raises(PreconditionError):
        gaussian_bound_suite(240, 30, 0, 1, seed=0)
