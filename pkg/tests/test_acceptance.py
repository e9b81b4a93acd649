"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion <k>: PASS|FAIL`` line (outside pytest's
capture) before asserting, so the overall scorecard is visible in ``-v`` and
``-s`` runs alike.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fwrisk import (
    BetaKernel,
    EigenSystem,
    EstimatorConfig,
    TimeGrid,
    coefficient_distance,
    diagonal_minimizer,
    eigenbasis_estimator,
    eigenbasis_minimizer,
    eigendecompose,
    finite_basis_psd_check,
    gram_estimator,
    make_split,
    mercer_check,
    default_test_family,
    minimizer_from_moments,
    plugin_estimator,
    population_second_moment,
    project_panel,
    risk_closed_form,
    risk_mc_samples,
    simulate_panel,
    sine_basis,
    triangular_autocov,
    verify_decomposition,
    worst_risk,
    wss_fft_check,
)

GRID = TimeGrid.uniform(100)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return emit


def per_dim(beta):
    c = beta.phi_coefficients()
    return np.mean(np.diagonal(c, axis1=1, axis2=2), axis=1)


def test_criterion_1_population_illustration(moments, basis10, report):
    t0 = time.perf_counter()
    half = per_dim(diagonal_minimizer(*moments, 0.5, 2, basis10))
    big = per_dim(diagonal_minimizer(*moments, 500.0, 2, basis10))
    elapsed = time.perf_counter() - t0
    err = max(
        np.abs(half - np.array(oracles.GAMMA_HALF, float)).max(),
        np.abs(big - np.array(oracles.GAMMA_500, float)).max(),
    )
    ok = err <= 1e-6 and elapsed < 1.0
    report(1, ok, f"gamma 1/2 {half.round(5)}, gamma 500 {big.round(4)}, max error {err:.1e}, {elapsed:.3f}s")
    assert ok


def test_criterion_2_causal_limit(moments, basis10, report):
    t0 = time.perf_counter()
    coefs = [per_dim(diagonal_minimizer(*moments, g, 2, basis10)) for g in (10.0, 100.0, 1000.0)]
    elapsed = time.perf_counter() - t0
    causal = np.array(oracles.CAUSAL, float)
    dists = [np.linalg.norm(c - causal) for c in coefs]
    mono = bool(np.all(np.diff(dists) < 0))
    ok = mono and coefs[-1][1] <= 0.11 and elapsed < 1.0
    report(2, ok, f"distances to (1, 0) {np.round(dists, 4)}, final X2 {coefs[-1][1]:.4f}, {elapsed:.3f}s")
    assert ok


def test_criterion_3_decomposition(preset, shift, basis10, report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_gap, worst_scaled, passed = -np.inf, 0.0, True
    for b in range(5):
        beta = BetaKernel(rng.normal(scale=0.3, size=(2, 10, 10)), basis10)
        for g in (1.0, 2.0, 4.0):
            rep = verify_decomposition(preset, shift, beta, g, n_candidates=200, seed=b)
            assert rep.admissible.sum() >= 200
            passed &= rep.passed
            worst_gap = max(worst_gap, rep.max_risk - rep.decomposition)
            worst_scaled = max(worst_scaled, abs(rep.scaled_risk - rep.decomposition))
    elapsed = time.perf_counter() - t0
    ok = passed and elapsed < 30
    report(3, ok, f"max(brute force - decomposition) {worst_gap:.2e}, scaled gap {worst_scaled:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_risk_agreement(preset, basis10, report):
    t0 = time.perf_counter()
    n, chunk = 200_000, 20_000
    rng = np.random.default_rng(4)
    betas = [BetaKernel(np.zeros((2, 10, 10)), basis10)]
    betas += [BetaKernel(rng.normal(scale=0.3, size=(2, 10, 10)), basis10) for _ in range(20)]
    losses = [[] for _ in betas]
    for j in range(n // chunk):
        panel = simulate_panel(preset, None, chunk, 40_000 + j, basis10, GRID)
        for b, beta in enumerate(betas):
            losses[b].append(risk_mc_samples(beta, panel, basis10))
    MO = population_second_moment(preset)
    z = []
    for beta, ls in zip(betas, losses):
        ls = np.concatenate(ls)
        se = ls.std(ddof=1) / np.sqrt(n)
        z.append(abs(ls.mean() - risk_closed_form(beta, MO, 2, 10)) / se)
    zero_risk = risk_closed_form(betas[0], MO, 2, 10)
    elapsed = time.perf_counter() - t0
    ok = max(z) <= 3 and zero_risk == pytest.approx(oracles.RISK_ZERO_OBS) and z[0] <= 3 and elapsed < 60
    report(4, ok, f"max |MC - closed form| / SE over 21 kernels {max(z):.2f}, risk at 0 = {zero_risk:.6g}, {elapsed:.1f}s")
    assert ok


def test_criterion_5_plugin_estimation(preset, shift, basis10, moments, report):
    t0 = time.perf_counter()
    pop = minimizer_from_moments(*moments, 10.0, 2, basis10)
    rel, ratio = [], []
    for s in range(20):
        sa, so = np.random.SeedSequence(s).generate_state(2)
        pa = project_panel(simulate_panel(preset, shift, 1000, int(sa), basis10, GRID), basis10)
        po = project_panel(simulate_panel(preset, None, 1000, int(so), basis10, GRID), basis10)
        Ga, Za = pa.covariates.T @ pa.covariates / pa.n, pa.covariates.T @ pa.target / pa.n
        Go, Zo = po.covariates.T @ po.covariates / po.n, po.covariates.T @ po.target / po.n
        beta = plugin_estimator(Ga, Go, Za, Zo, 10.0, basis10, 2)
        rel.append(coefficient_distance(beta, pop) / pop.l2_norm())
        ratio.append(beta.covariate_norm(2) / beta.covariate_norm(1))
    elapsed = time.perf_counter() - t0
    med, q95 = float(np.median(rel)), float(np.percentile(ratio, 95))
    ok = med <= 0.3 and q95 <= 0.35 and elapsed < 120
    report(5, ok, f"median relative distance {med:.3f} (<= 0.3), 95th pct X2/X1 norm ratio {q95:.3f} (<= 0.35), {elapsed:.1f}s")
    assert ok


def test_criterion_6_consistency(preset, shift, basis10, moments, report):
    t0 = time.perf_counter()
    pop = minimizer_from_moments(*moments, 0.5, 2, basis10)
    cfg = EstimatorConfig(0.5)
    routes = {"eigen": eigenbasis_estimator, "gram": gram_estimator}
    medians = {r: [] for r in routes}
    for n in (50, 200, 1000):
        errs = {r: [] for r in routes}
        for s in range(20):
            sa, so = np.random.SeedSequence([n, s]).generate_state(2)
            pa = simulate_panel(preset, shift, n, int(sa), basis10, GRID)
            po = simulate_panel(preset, None, n, int(so), basis10, GRID)
            split = make_split(n, seed=s)
            for r, est in routes.items():
                errs[r].append(coefficient_distance(est(pa, po, split, cfg, basis10), pop))
        for r in routes:
            medians[r].append(float(np.median(errs[r])))
    elapsed = time.perf_counter() - t0
    ok = all(np.all(np.diff(m) < 0) for m in medians.values()) and elapsed < 300
    detail = ", ".join(f"{r} {np.round(m, 3)}" for r, m in medians.items())
    report(6, ok, f"median errors over n = 50, 200, 1000: {detail}, {elapsed:.1f}s")
    assert ok


def test_criterion_7_shiftset_coherence(report):
    t0 = time.perf_counter()
    basis = sine_basis(6)
    family = default_test_family(basis)
    rng = np.random.default_rng(7)
    d = 12
    agree, members = 0, 0
    for t in range(50):
        g = float(rng.choice([0.5, 1.0, 2.0, 4.0]))
        A = rng.normal(size=(d, d))
        R = A @ A.T / d
        if t % 2 == 0:
            L = np.linalg.cholesky(g * R)
            Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
            C = L @ (Q * rng.uniform(0, 1, d)) @ Q.T @ L.T
        else:
            B = rng.normal(size=(d, 2))
            C = g * R + rng.uniform(0.05, 1.0) * B @ B.T
        C = 0.5 * (C + C.T)
        m = mercer_check(C, R, g, family).member
        agree += m == finite_basis_psd_check(C, R, g)
        members += m
    lags = np.arange(-32, 33, dtype=float)
    k = triangular_autocov(lags, 8.0)
    wss_ok = True
    for g in (0.5, 1.0, 2.0):
        acc, rej = wss_fft_check(g * k, k, lags, g), wss_fft_check(2 * g * k, k, lags, g)
        wss_ok &= acc.member and not rej.member and isinstance(rej.witness, float)
    elapsed = time.perf_counter() - t0
    ok = agree == 50 and wss_ok and elapsed < 10
    report(7, ok, f"{agree}/50 triples agree ({members} members), spectral accept/reject {'ok' if wss_ok else 'broken'}, {elapsed:.2f}s")
    assert ok


# property suites bundled for the scorecard; each raises on the first counterexample


@settings(max_examples=30, deadline=None)
@given(N=st.integers(1, 15))
def _orthonormality(N):
    assert sine_basis(N).orthonormality_error(GRID) <= 1e-2


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 25))
def _reconstruction(seed, d):
    A = np.random.default_rng(seed).normal(size=(d, d))
    K = A @ A.T
    eig = eigendecompose(K)
    assert np.abs(eig.reconstruct() - K).max() <= 1e-8 * max(1.0, np.abs(K).max())


def _gradient(MA, MO, basis):
    for gamma in (0.5, 4.0):
        lam = minimizer_from_moments(MA, MO, gamma, 2, basis).phi_coefficients()

        def f(L):
            return gamma * risk_closed_form(L, MA, 2, 10) + (1 - gamma) * risk_closed_form(L, MO, 2, 10)

        f0 = f(lam)
        scale = max(1.0, abs(f0))
        M = gamma * MA + (1 - gamma) * MO
        grad = 2 * (np.hstack(list(lam)) @ M[10:, 10:] - M[:10, 10:])
        assert np.linalg.norm(grad) <= 1e-6 * scale
        r = np.random.default_rng(8)
        for _ in range(100):
            D = r.normal(scale=r.uniform(1e-4, 1.0), size=lam.shape)
            assert f(lam + D) >= f0 - 1e-9 * scale


def _sign_invariance(MA, MO, basis):
    @settings(max_examples=20, deadline=None)
    @given(signs=st.lists(st.sampled_from([-1.0, 1.0]), min_size=20, max_size=20))
    def check(signs):
        g, xx = 2.0, slice(10, None)
        eig = eigendecompose(g * MA[xx, xx] + (1 - g) * MO[xx, xx], n_basis=10)
        flipped = EigenSystem(eig.eigenvalues, eig.eigenvectors * np.array(signs), eig.kernel_dim, eig.threshold, 10)
        t = np.linspace(0, 1, 11)
        out = []
        for e in (eig, flipped):
            V = e.eigenvectors
            ca, co = MA[:10, xx] @ V, MO[:10, xx] @ V
            da = np.einsum("il,ij,jl->l", V, MA[xx, xx], V)
            do = np.einsum("il,ij,jl->l", V, MO[xx, xx], V)
            out.append([eigenbasis_minimizer(e, ca, co, da, do, g, basis, 2).render(i, t, t) for i in (1, 2)])
        np.testing.assert_allclose(out[0], out[1], atol=1e-10)

    check()


@settings(max_examples=50, deadline=None)
@given(r=st.floats(0, 1e3), ra=st.floats(0, 1e3), ro=st.floats(0, 1e3), g1=st.floats(0.01, 100), g2=st.floats(0.01, 100))
def _decomposition_identities(r, ra, ro, g1, g2):
    assert worst_risk(r, r, g1) == pytest.approx(r, rel=1e-12, abs=1e-9)
    mid = worst_risk(ra, ro, 0.5 * (g1 + g2))
    assert mid == pytest.approx(0.5 * (worst_risk(ra, ro, g1) + worst_risk(ra, ro, g2)), rel=1e-9, abs=1e-6)


def test_criterion_8_property_suites(moments, basis10, report):
    suites = {
        "orthonormality": _orthonormality,
        "reconstruction": _reconstruction,
        "minimizer gradient": lambda: _gradient(*moments, basis10),
        "eigen-sign invariance": lambda: _sign_invariance(*moments, basis10),
        "decomposition identities": _decomposition_identities,
    }
    failed = []
    for name, suite in suites.items():
        try:
            suite()
        except Exception as exc:  # noqa: BLE001 - every failure is reported by name
            failed.append(f"{name}: {type(exc).__name__}")
    ok = not failed
    report(8, ok, "all suites green" if ok else "; ".join(failed))
    assert ok
