import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fwrisk import (
    default_test_family,
    finite_basis_psd_check,
    mercer_check,
    sine_basis,
    triangular_autocov,
    wss_fft_check,
)
from fwrisk.errors import DimensionMismatch, NotSymmetric

N = 6
BASIS = sine_basis(N)
FAMILY = default_test_family(BASIS)


def random_psd(rng, d, rank=None):
    A = rng.normal(size=(d, rank or d))
    return A @ A.T / d


class TestMercer:
    def test_family_composition(self):
        # N basis functions + 63 dyadic steps (depth 0..5) + 5 monomials
        assert FAMILY.coeffs.shape == (N, N + 63 + 5)
        assert FAMILY.labels[0] == "phi_1" and "t^4" in FAMILY.labels

    def test_equal_at_gamma_one(self, rng):
        R = random_psd(rng, 2 * N)
        assert mercer_check(R, R, 1.0, FAMILY).member

    @pytest.mark.parametrize("gamma", [0.5, 3.0, 40.0])
    def test_scaled_boundary(self, rng, gamma):
        R = random_psd(rng, 2 * N)
        res = mercer_check(gamma * R, R, gamma, FAMILY)
        assert res.member and res.witness is None

    def test_double_violates_with_leading_direction(self, rng):
        R = random_psd(rng, 2 * N)
        gamma = 2.0
        res = mercer_check(2 * gamma * R, R, gamma, FAMILY)
        assert not res.member
        w = res.witness / np.linalg.norm(res.witness)
        lead = np.linalg.eigh(R)[1][:, -1]
        assert abs(w @ lead) == pytest.approx(1.0, abs=1e-8)
        # the form equals -gamma * top eigenvalue of R
        assert res.min_form == pytest.approx(-gamma * np.linalg.eigvalsh(R)[-1], rel=1e-8)

    def test_report_is_json(self, rng):
        R = random_psd(rng, N)
        payload = json.loads(mercer_check(3 * R, R, 1.0, FAMILY).to_json())
        assert payload["member"] is False and len(payload["witness"]) == N

    def test_accepts_basis_as_family(self, rng):
        R = random_psd(rng, N)
        assert mercer_check(R, R, 1.0, BASIS).member

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mercer_check(np.eye(N), np.eye(2 * N), 1.0, FAMILY)

    def test_asymmetric(self):
        M = np.eye(N)
        M[0, 1] = 1.0
        with pytest.raises(NotSymmetric):
            mercer_check(M, np.eye(N), 1.0, FAMILY)


class TestFiniteBasis:
    def test_zero_candidate(self, rng):
        assert finite_basis_psd_check(np.zeros((4, 4)), random_psd(rng, 4), 0.1)

    def test_single_excess(self):
        g = 2.0
        C = np.zeros((3, 3))
        C[0, 0] = g + 0.1
        assert not finite_basis_psd_check(C, np.eye(3), g)

    def test_rank_one_boundary(self):
        g = 1.7
        assert finite_basis_psd_check(np.full((2, 2), g) / 2, np.eye(2), g)

    def test_asymmetric(self):
        with pytest.raises(NotSymmetric):
            finite_basis_psd_check(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2), 1.0)


def _triple(rng):
    d = 2 * N
    g = float(rng.uniform(0.2, 5.0))
    R = random_psd(rng, d)
    kind = rng.integers(3)
    if kind == 0:
        B = random_psd(rng, d, d // 2)
        C = g * R - 0.5 * g * B
        w, v = np.linalg.eigh(C)
        C = (v * np.clip(w, 0, None)) @ v.T
    elif kind == 1:
        C = g * rng.uniform(0.0, 1.0) * R
    else:
        C = g * R + rng.uniform(0.01, 1.0) * random_psd(rng, d, 1)
    return 0.5 * (C + C.T), R, g


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**30))
def test_mercer_agrees_with_finite_basis(seed):
    C, R, g = _triple(np.random.default_rng(seed))
    assert mercer_check(C, R, g, FAMILY).member == finite_basis_psd_check(C, R, g)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**30), factor=st.floats(1.0, 10.0))
def test_monotone_in_gamma(seed, factor):
    C, R, g = _triple(np.random.default_rng(seed))
    if finite_basis_psd_check(C, R, g):
        assert finite_basis_psd_check(C, R, g * factor)
        assert mercer_check(C, R, g * factor, FAMILY).member


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**30))
def test_cone_property(seed):
    rng = np.random.default_rng(seed)
    R = random_psd(rng, 2 * N)
    g = float(rng.uniform(0.5, 4.0))
    L = np.linalg.cholesky(g / 2 * R)
    members = []
    for _ in range(2):
        # L Q L^T with 0 <= Q <= I lies under (g/2) R
        w, v = np.linalg.eigh(random_psd(rng, 2 * N))
        Q = (v * np.clip(w, 0, 1)) @ v.T
        M = L @ Q @ L.T
        members.append(0.5 * (M + M.T))
    assert all(finite_basis_psd_check(M, R, g / 2) for M in members)
    assert finite_basis_psd_check(members[0] + members[1], R, g)
    assert mercer_check(members[0] + members[1], R, g, FAMILY).member


class TestWss:
    LAGS = np.arange(-40, 41, dtype=float)

    def test_scaled_member(self):
        k = triangular_autocov(self.LAGS, 10)
        assert wss_fft_check(3.0 * k, k, self.LAGS, 3.0).member

    def test_double_rejected_at_peak(self):
        k = triangular_autocov(self.LAGS, 10)
        res = wss_fft_check(4.0 * k, k, self.LAGS, 2.0)
        assert not res.member
        # the triangular spectrum peaks at frequency 0
        assert res.witness == pytest.approx(0.0)
        assert res.min_form == pytest.approx(-2.0 * 10.0, rel=1e-10)

    def test_half_spectrum_member(self):
        k = triangular_autocov(self.LAGS, 7)
        assert wss_fft_check(0.5 * 1.5 * k, k, self.LAGS, 1.5).member

    def test_matrix_valued(self):
        k = triangular_autocov(self.LAGS, 5)
        A = np.array([[1.0, 0.5], [0.5, 2.0]])
        kk = k[:, None, None] * A
        assert wss_fft_check(2.0 * kk, kk, self.LAGS, 2.0).member
        assert not wss_fft_check(2.5 * kk, kk, self.LAGS, 2.0).member

    def test_asymmetric_lag_grid(self):
        lags = np.arange(-3, 5, dtype=float)
        with pytest.raises(ValueError):
            wss_fft_check(np.ones(8), np.ones(8), lags, 1.0)

    def test_k_symmetry_required(self):
        k = triangular_autocov(self.LAGS, 5).copy()
        k[0] += 1.0
        with pytest.raises(NotSymmetric):
            wss_fft_check(k, k, self.LAGS, 1.0)
