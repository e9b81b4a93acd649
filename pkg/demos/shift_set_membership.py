"""Which shift covariances fall inside the gamma shift set?

A candidate kernel K' belongs to the set when gamma K - K' is positive
semidefinite as an integral operator. In basis coordinates this is a
matrix PSD check; the quadratic-form test over step functions and
polynomials must agree with it. For stationary shifts the check becomes a
pointwise comparison of spectral densities.
"""

import numpy as np

from fwrisk import (
    default_test_family,
    finite_basis_psd_check,
    mercer_check,
    sine_basis,
    triangular_autocov,
    wss_fft_check,
)

basis = sine_basis(6)
family = default_test_family(basis)
rng = np.random.default_rng(2)
A = rng.normal(size=(6, 6))
K = A @ A.T / 6

for scale in (0.5, 0.99, 1.0, 1.01, 2.0):
    C = scale * K
    m = mercer_check(C, K, 1.0, family)
    print(f"K' = {scale:4g} K: quadratic forms {'member' if m else 'outside'} "
          f"(min form {m.min_form:+.3e}), PSD check {finite_basis_psd_check(C, K, 1.0)}")

lags = np.arange(-32, 33, dtype=float)
k = triangular_autocov(lags, 8.0)
for factor in (1.0, 2.0):
    res = wss_fft_check(factor * 3.0 * k, k, lags, 3.0)
    print(f"stationary k' = {factor * 3:g} k at gamma 3: member {res.member}, witness frequency {res.witness}")
