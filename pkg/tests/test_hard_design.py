import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsegap.errors import ConstructionFailed, PrecisionTooCoarse, PreconditionError, ShapeError
from sparsegap.hard_design import (
    THEOREM_GAMMA_MAX,
    HardDesign,
    HardDesignParams,
    build_Ak,
    build_Bk,
    build_Cx,
    build_hard_design,
    calibrate_x,
    gaussian_block,
    min_precision,
    quantize,
    top_block,
)
from sparsegap.re_cond import check_normalization, re_upper_bound, sample_cone_vectors
from sparsegap.x3c import build_cover_matrix

from conftest import DESK

M3 = build_cover_matrix(3)


def test_quantize_examples():
    assert quantize(3.0, 5) == 3.0
    assert quantize(0.7, 1) == 0.5
    assert quantize(-0.3, 2) == -0.5
    np.testing.assert_array_equal(quantize(np.array([0.7, -0.3]), 2), [0.5, -0.5])


@settings(max_examples=200)
@given(x=st.floats(-1e6, 1e6, allow_nan=False), l=st.integers(1, 40))
def test_quantize_properties(x, l):
    q = quantize(x, l)
    assert q <= x
    assert Fraction(x) - Fraction(q) < Fraction(1, 2**l)
    assert quantize(q, l) == q
    assert math.ldexp(q, l) == math.floor(math.ldexp(q, l))


def test_Ak_single_block_is_M():
    np.testing.assert_array_equal(build_Ak(M3, 1), M3.entries)


def test_Ak_two_blocks():
    A = build_Ak(M3, 2)
    assert A.shape == (12, 8)
    s = math.sqrt(2)
    np.testing.assert_array_equal(A[:6, :4], s * M3.entries)
    np.testing.assert_array_equal(A[6:, 4:], s * M3.entries)
    assert not A[:6, 4:].any() and not A[6:, :4].any()


@pytest.mark.parametrize("m,t", [(3, 1), (3, 3), (6, 2)])
def test_Ak_norm_bound(m, t):
    M = build_cover_matrix(m)
    A = build_Ak(M, t)
    p = math.comb(m, 3)
    k = t * (m // 3 + p)
    assert np.linalg.norm(A, 2) <= math.sqrt(8 * t * p)
    thetas = np.random.default_rng(m * t).standard_normal((1000, A.shape[1]))
    assert np.all(np.sum((thetas @ A.T) ** 2, axis=1) <= 8 * k * np.sum(thetas**2, axis=1))


def test_Bk_padding_and_entries():
    B = build_Bk(build_Ak(M3, 2), 16)
    assert B.shape == (12, 16)
    assert not B[:, 8:].any()
    assert set(np.unique(np.abs(B))) <= {0.0, math.sqrt(2) / 2}
    with pytest.raises(ShapeError):
        build_Bk(build_Ak(M3, 2), 7)


def test_params_invariants():
    p = HardDesignParams(gamma_target=0.02, **DESK)
    assert (p.p, p.k) == (1, 4)
    with pytest.raises(ShapeError):
        HardDesignParams(m=3, t=2, n=50, d=16, gamma_target=0.02, l=30)
    with pytest.raises(ShapeError):
        HardDesignParams(m=3, t=2, n=48, d=12, gamma_target=0.02, l=30)
    with pytest.raises(PreconditionError):
        HardDesignParams(gamma_target=THEOREM_GAMMA_MAX, **DESK)
    with pytest.raises(PreconditionError):
        HardDesignParams(gamma_target=1e-7, **DESK)
    with pytest.raises(PreconditionError):
        HardDesignParams(gamma_target=1.5, strict_range=False, **DESK)
    with pytest.warns(UserWarning):
        HardDesignParams(gamma_target=0.05, strict_range=False, **DESK)


def test_Cx_layout():
    params = HardDesignParams(gamma_target=0.02, seed=3, **DESK)
    B = build_Bk(build_Ak(M3, 2), 16)
    R = gaussian_block(params, params.seed)
    C = build_Cx(B, params, 0.7)
    assert C.shape == (48, 16)
    np.testing.assert_array_equal(C[:12], B)
    np.testing.assert_array_equal(C[12:24], B)
    np.testing.assert_array_equal(C[24:], 0.7 * R)
    assert not build_Cx(B, params, 0.0)[24:].any()
    with pytest.raises(ShapeError):
        build_Cx(B[:, :10], params, 0.5)
    with pytest.raises(ShapeError):
        build_Cx(B, params, 0.5, R=np.ones((3, 3)))


def test_top_block_independent_of_seed_and_x():
    a = HardDesignParams(gamma_target=0.02, seed=1, **DESK)
    b = HardDesignParams(gamma_target=0.02, seed=2, **DESK)
    B = build_Bk(build_Ak(M3, 2), 16)
    np.testing.assert_array_equal(build_Cx(B, a, 0.1)[:24], build_Cx(B, b, 0.9)[:24])
    np.testing.assert_array_equal(top_block(a), top_block(b))


def test_top_block_bound():
    top = top_block(HardDesignParams(gamma_target=0.02, **DESK))
    thetas = np.random.default_rng(0).standard_normal((1000, 16))
    assert np.all(np.sum((thetas @ top.T) ** 2, axis=1) / 48 <= np.sum(thetas**2, axis=1) / 3 + 1e-12)


def test_bracket_top_lower_bound():
    # at x = 8 sqrt(2) gamma, cone vectors keep at least gamma^2 of their squared norm
    gamma = 0.02
    params = HardDesignParams(gamma_target=gamma, seed=5, **DESK)
    tau = 8 * math.sqrt(2) * gamma
    C = build_Cx(build_Bk(build_Ak(M3, 2), 16), params, tau)
    vecs, _ = sample_cone_vectors(16, params.k, 2000, np.random.default_rng(1))
    ratios = np.sum((vecs @ C.T) ** 2, axis=1) / (48 * np.sum(vecs**2, axis=1))
    assert np.mean(ratios >= gamma**2) >= 0.99


def test_calibration_desk_example():
    params = HardDesignParams(gamma_target=0.02, seed=11, **DESK)
    x, gamma_hat = calibrate_x(params)
    assert abs(gamma_hat - 0.02) <= 0.001
    assert 0 < x <= params.bracket_top


def test_calibration_trace_monotone():
    cal = calibrate_x(HardDesignParams(gamma_target=0.02, seed=11, **DESK))
    pts = sorted(cal.trace)
    gammas = [g for _, g in pts]
    assert all(a <= b + 2e-9 for a, b in zip(gammas, gammas[1:]))


def test_calibration_tiny_target():
    params = HardDesignParams(gamma_target=1e-5, seed=11, **DESK)
    x, gamma_hat = calibrate_x(params)
    assert x < 0.01
    assert abs(gamma_hat - 1e-5) <= 0.05e-5


def test_min_precision():
    # log2(sqrt(48 * 16) / 1e-6) = 24.72...
    assert min_precision(48, 16, 1e-6) == 25
    assert min_precision(48, 16, 0.5) == 6
    params = HardDesignParams(m=3, t=2, n=48, d=16, l=20, gamma_target=0.02)
    with pytest.raises(PrecisionTooCoarse):
        build_hard_design(params)


def test_design_invariants(desk_design):
    X = desk_design.X
    l = desk_design.params.l
    scaled = np.ldexp(X, l)
    np.testing.assert_array_equal(scaled, np.floor(scaled))
    np.testing.assert_array_equal(X[:24], quantize(top_block(desk_design.params), l))
    norm = check_normalization(X, desk_design.k)
    assert norm.passed
    assert desk_design.normalization_ratio == norm.worst_ratio
    assert abs(desk_design.gamma_hat - 0.02) <= 0.05 * 0.02


def test_quantization_moves_re_little(desk_design):
    p = desk_design.params
    R = gaussian_block(p, desk_design.R_seed)
    C = np.vstack([top_block(p), desk_design.x_calibrated * R])
    assert np.linalg.norm(desk_design.X - C) <= 2.0**-p.l * math.sqrt(p.n * p.d)
    allowed = 2.0**-p.l * math.sqrt(p.n * p.d) / math.sqrt(p.n) + 2e-9
    assert abs(desk_design.gamma_hat - desk_design.gamma_hat_unquantized) <= allowed


def test_design_reproducible(desk_params, desk_design):
    again = build_hard_design(desk_params)
    np.testing.assert_array_equal(again.X, desk_design.X)
    assert again.R_seed == desk_design.R_seed


def test_save_load_roundtrip(tmp_path, desk_design):
    out = desk_design.save(tmp_path / "design")
    assert sorted(p.name for p in out.iterdir()) == ["X.bin", "X.meta.json", "params.json", "provenance.json"]
    assert (out / "X.bin").stat().st_size == 48 * 16 * 8
    loaded = HardDesign.load(out)
    np.testing.assert_array_equal(loaded.X, desk_design.X)
    assert loaded.params == desk_design.params
    assert loaded.trace == [tuple(p) for p in desk_design.trace]
    with pytest.raises(FileExistsError):
        desk_design.save(out)
    desk_design.save(out, force=True)


def test_unreachable_target_fails():
    with pytest.warns(UserWarning):
        params = HardDesignParams(gamma_target=0.1, seed=0, strict_range=False, **DESK)
    with pytest.raises(ConstructionFailed):
        build_hard_design(params, attempts=2)
