"""Risk functionals, the worst-risk decomposition and its verification harness.

In score space the risk of a kernel with gain matrix ``Lam`` (target scores
predicted as ``Lam @ xi``) in an environment with score second moment ``M``
is ``tr(M_zz) - 2 tr(Lam M_xz) + tr(Lam M_xx Lam^T)``. With shift second
moment ``K`` the environment moment is ``S (Sigma + K) S^T``, so the risk is
affine in ``K``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateFamily, DimensionMismatch, GridMismatch, InvalidGamma
from .fda import BasisSet, CurvePanel, quad_weights
from .minimizer import BetaKernel
from .sem import SemSpec, ShiftSpec, environment_second_moment
from .shiftset import finite_basis_psd_check

__all__ = [
    "RiskReport",
    "risk_closed_form",
    "risk_mc",
    "risk_mc_samples",
    "worst_risk",
    "environment_risk",
    "risk_report",
    "DecompositionReport",
    "verify_decomposition",
    "ContinuityReport",
    "risk_continuity_probe",
]


@dataclass(frozen=True)
class RiskReport:
    r_obs: float
    r_shift: float
    gamma: float

    @property
    def r_pooled(self) -> float:
        return self.r_shift + self.r_obs

    @property
    def r_delta(self) -> float:
        return self.r_shift - self.r_obs

    @property
    def worst(self) -> float:
        return 0.5 * self.r_pooled + (self.gamma - 0.5) * self.r_delta


def worst_risk(r_shift: float, r_obs: float, gamma: float) -> float:
    """``R_+/2 + (gamma - 1/2) R_delta``, the supremum over the shift set."""
    if not gamma > 0:
        raise InvalidGamma(f"gamma must be positive, got {gamma}")
    if not (np.isfinite(r_shift) and np.isfinite(r_obs)):
        raise ValueError("risks must be finite")
    return 0.5 * (r_shift + r_obs) + (gamma - 0.5) * (r_shift - r_obs)


def _gain(beta, n_basis: int, p: int) -> NDArray:
    if isinstance(beta, BetaKernel):
        lam = beta.gain_matrix(n_basis)
    else:
        arr = np.asarray(beta, dtype=float)
        lam = np.hstack(list(arr)) if arr.ndim == 3 else arr
    if lam.shape != (n_basis, p * n_basis):
        raise DimensionMismatch(f"kernel gain has shape {lam.shape}, expected {(n_basis, p * n_basis)}")
    return lam


def risk_closed_form(beta, second_moment: ArrayLike, p: int, n_basis: int) -> float:
    """Exact risk from the ``(p+1)N`` score second-moment matrix.

    ``beta`` is a :class:`BetaKernel` or a ``(p, N, N)`` coefficient tensor on
    ``phi x phi``.
    """
    M = np.asarray(second_moment, dtype=float)
    N = n_basis
    if M.shape != ((p + 1) * N,) * 2:
        raise DimensionMismatch("second moment does not match (p+1)*N")
    lam = _gain(beta, N, p)
    Mzz, Mzx, Mxx = M[:N, :N], M[:N, N:], M[N:, N:]
    return float(np.trace(Mzz) - 2.0 * np.sum(lam * Mzx) + np.sum((lam @ Mxx) * lam))


def environment_risk(beta, spec: SemSpec, shift_second_moment: ArrayLike | None = None) -> float:
    M = environment_second_moment(spec, shift_second_moment)
    return risk_closed_form(beta, M, spec.p, spec.n_basis)


def risk_report(beta, spec: SemSpec, shift: ShiftSpec, gamma: float) -> RiskReport:
    return RiskReport(
        r_obs=environment_risk(beta, spec),
        r_shift=environment_risk(beta, spec, shift.second_moment),
        gamma=gamma,
    )


def risk_mc_samples(beta: BetaKernel, panel: CurvePanel, basis: BasisSet, chunk: int = 20000) -> NDArray:
    """Per-realization squared ``L2`` residual, all integrals by grid quadrature."""
    if beta.basis.n_basis != basis.n_basis or beta.basis.kind != basis.kind:
        raise GridMismatch("kernel and panel use different bases")
    if beta.p != panel.p:
        raise DimensionMismatch("kernel and panel disagree on p")
    grid = panel.grid
    w = quad_weights(grid)
    tab = basis.tabulate(grid)
    coef = beta.phi_coefficients(basis.n_basis)
    # kernel[i][a, b] = beta_i(t_a, tau_b) * w_b, so residual = Y - sum_i X_i @ kernel_i^T
    kern = np.stack([(tab.T @ coef[i] @ tab) * w for i in range(beta.p)])
    G = len(grid)
    # stacked (p G, G) operator so the fit is one matrix product per chunk
    stacked = np.transpose(kern, (0, 2, 1)).reshape(beta.p * G, G)
    out = np.empty(panel.n)
    for start in range(0, panel.n, chunk):
        block = panel.values[start : start + chunk]
        fit = block[:, 1:, :].reshape(block.shape[0], -1) @ stacked
        resid = block[:, 0, :] - fit
        out[start : start + chunk] = (resid**2) @ w
    return out


def risk_mc(beta: BetaKernel, panel: CurvePanel, basis: BasisSet, return_se: bool = False):
    """Monte Carlo risk: mean squared residual norm over the panel."""
    losses = risk_mc_samples(beta, panel, basis)
    mean = float(losses.mean())
    if return_se:
        se = float(losses.std(ddof=1) / np.sqrt(losses.size)) if losses.size > 1 else float("nan")
        return mean, se
    return mean


@dataclass
class DecompositionReport:
    gamma: float
    decomposition: float
    max_risk: float
    scaled_risk: float
    tol: float
    candidate_risks: NDArray
    admissible: NDArray
    is_scaled: NDArray
    mc_risk: float | None = None
    mc_se: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        ok = self.max_risk <= self.decomposition + self.tol
        ok &= abs(self.scaled_risk - self.decomposition) <= self.tol
        if self.mc_risk is not None:
            ok &= abs(self.mc_risk - self.decomposition) <= 3.0 * self.mc_se
        return bool(ok)

    def write_csv(self, path) -> None:
        """``candidate_id, admissible, risk, is_scaled_A`` rows plus a summary line."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["candidate_id", "admissible", "risk", "is_scaled_A"])
            for i, (a, r, s) in enumerate(zip(self.admissible, self.candidate_risks, self.is_scaled)):
                w.writerow([i, int(a), repr(float(r)), int(s)])
            w.writerow(
                [
                    "summary",
                    "PASS" if self.passed else "FAIL",
                    f"max={self.max_risk!r} decomposition={self.decomposition!r} "
                    f"scaled={self.scaled_risk!r} gamma={self.gamma!r}",
                    "",
                ]
            )


def _sqrt_factor(K: NDArray) -> NDArray:
    w, v = np.linalg.eigh(0.5 * (K + K.T))
    keep = w > 1e-12 * max(w.max(), 1e-300)
    return v[:, keep] * np.sqrt(w[keep])


def _candidate_family(K: NDArray, gamma: float, n_candidates: int, rng: np.random.Generator):
    """Random second moments dominated by ``gamma K``.

    Each candidate is ``L Q L^T`` with ``L L^T = gamma K`` and ``Q`` a random
    Wishart matrix whose spectrum is clipped to ``[0, 1]``; a share of them is
    pushed onto the boundary by setting the clipped top eigenvalues to 1.
    """
    L = _sqrt_factor(gamma * K)
    r = L.shape[1]
    if r == 0:
        raise DegenerateFamily("the observed shift has zero second moment")
    out = []
    for c in range(n_candidates):
        dof = int(rng.integers(1, 2 * r + 1))
        g = rng.standard_normal((r, dof))
        Q = g @ g.T / dof
        w, v = np.linalg.eigh(Q)
        w = np.clip(w * rng.uniform(0.2, 1.5), 0.0, 1.0)
        if c % 3 == 0:
            w[-max(1, r // 2) :] = 1.0
        out.append(L @ ((v * w) @ v.T) @ L.T)
    return out


def verify_decomposition(
    spec: SemSpec,
    shift: ShiftSpec,
    beta,
    gamma: float,
    n_candidates: int = 200,
    seed: int = 0,
    n_mc: int = 0,
    tol: float = 1e-6,
) -> DecompositionReport:
    """Falsification harness for the worst-risk decomposition.

    Draws ``n_candidates`` shift second moments inside the finite-basis shift
    set, evaluates every environment's risk in closed form and compares the
    maximum with ``gamma R_A + (1 - gamma) R_O``. The scaled shift
    ``sqrt(gamma) A`` (second moment ``gamma K_A``) is always candidate 0.
    With ``n_mc > 0`` the scaled environment is also simulated and its Monte
    Carlo risk must fall within 3 standard errors of the decomposition.
    """
    if not gamma > 0:
        raise InvalidGamma(f"gamma must be positive, got {gamma}")
    K = shift.second_moment
    rng = np.random.default_rng(seed)
    cands = [gamma * K] + _candidate_family(K, gamma, max(n_candidates - 1, 0), rng)
    admissible = np.array([finite_basis_psd_check(C, K, gamma) for C in cands])
    if not admissible.any():
        raise DegenerateFamily("no admissible candidate was generated")
    risks = np.array([environment_risk(beta, spec, C) for C in cands])
    rep = risk_report(beta, spec, shift, gamma)
    is_scaled = np.zeros(len(cands), dtype=bool)
    is_scaled[0] = True
    report = DecompositionReport(
        gamma=gamma,
        decomposition=rep.worst,
        max_risk=float(risks[admissible].max()),
        scaled_risk=float(risks[0]),
        tol=tol,
        candidate_risks=risks,
        admissible=admissible,
        is_scaled=is_scaled,
        extra={"r_obs": rep.r_obs, "r_shift": rep.r_shift},
    )
    if n_mc > 0:
        from .sem import solve_sem  # local: keeps the closed-form path import-light

        scaled = ShiftSpec(np.sqrt(gamma) * shift.mean, gamma * shift.cov, shift.n_basis, shift.affected_blocks)
        x = solve_sem(spec, scaled, n_mc, seed + 1).values
        lam = _gain(beta, spec.n_basis, spec.p)
        N = spec.n_basis
        losses = np.sum((x[:, :N] - x[:, N:] @ lam.T) ** 2, axis=1)
        report.mc_risk = float(losses.mean())
        report.mc_se = float(losses.std(ddof=1) / np.sqrt(n_mc))
    return report


@dataclass
class ContinuityReport:
    risks: NDArray
    limit_risk: float
    gaps: NDArray
    distances: NDArray
    envelope: NDArray
    constant: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.gaps <= self.envelope + 1e-12 * max(1.0, abs(self.limit_risk))))


def risk_continuity_probe(
    spec: SemSpec,
    beta,
    shift: ShiftSpec,
    transforms: Sequence[ArrayLike],
    limit: ArrayLike | None = None,
) -> ContinuityReport:
    """Risks along shifts ``A_n = T_n a`` converging to ``A = T a``.

    ``a`` is the score vector of ``shift`` and every ``T_n`` a square matrix,
    so all shifts live on one probability space and
    ``||A_n - A||^2 = tr((T_n - T) K (T_n - T)^T)``. The risk gap is checked
    against ``C (||A_n|| + ||A|| + ||eps||) ||A_n - A||`` with the explicit
    constant ``C = ||S^T Lam_ext^T Lam_ext S||_2`` (``Lam_ext = [I, -Lam]``).
    """
    K = shift.second_moment
    d = K.shape[0]
    T = np.eye(d) if limit is None else np.asarray(limit, float)
    S = spec.solution_operator
    lam = _gain(beta, spec.n_basis, spec.p)
    ext = np.hstack([np.eye(spec.n_basis), -lam])
    P = S.T @ ext.T @ ext @ S
    C = float(np.linalg.norm(P, 2))

    def vnorm(M):
        return float(np.sqrt(max(np.trace(M @ K @ M.T), 0.0)))

    eps_norm = float(np.sqrt(np.trace(spec.noise_cov)))
    limit_risk = environment_risk(beta, spec, T @ K @ T.T)
    risks, dists, env = [], [], []
    for Tn in transforms:
        Tn = np.asarray(Tn, float)
        risks.append(environment_risk(beta, spec, Tn @ K @ Tn.T))
        dist = vnorm(Tn - T)
        dists.append(dist)
        env.append(C * (vnorm(Tn) + vnorm(T) + eps_norm) * dist)
    risks = np.array(risks)
    return ContinuityReport(
        risks=risks,
        limit_risk=limit_risk,
        gaps=np.abs(risks - limit_risk),
        distances=np.array(dists),
        envelope=np.array(env),
        constant=C,
    )
