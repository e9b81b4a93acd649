"""Score-space simulation of linear functional structural equation systems.

Scores are stacked as ``x = (zeta, xi_1, ..., xi_p)`` with ``N`` coordinates
per channel. An environment with shift scores ``a`` solves
``x = B x + a + eps``, i.e. ``x = (I - B)^{-1} (a + eps)``, with ``eps`` drawn
from the same centred Gaussian law in every environment and independent of
``a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, NearSingularMultiplier, SingularSystem
from .fda import BasisSet, CurvePanel, CurveSystem, SampledCurve, ScorePanel, TimeGrid

__all__ = [
    "SemSpec",
    "ShiftSpec",
    "chain_preset",
    "chain_shift",
    "solve_sem",
    "render_curves",
    "apply_multiplicative",
    "simulate_panel",
    "environment_second_moment",
    "population_second_moment",
]

_SINGULAR_COND = 1e12


def _psd_factor(cov: NDArray) -> NDArray:
    """``L`` with ``L @ L.T == cov`` for a symmetric PSD matrix (eigen-based)."""
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def _check_psd(mat: NDArray, name: str):
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(mat)
    scale = max(np.abs(w).max(), 1e-300)
    if w.min() < -1e-8 * scale:
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {w.min():.3g})")


@dataclass(frozen=True, eq=False)
class SemSpec:
    """Linear structural system on basis scores.

    Parameters
    ----------
    p : int
        Number of covariate curves.
    n_basis : int
        Basis size ``N`` per channel.
    structural_matrix : array, shape ((p+1)N, (p+1)N)
        ``B``; rows/columns ordered target block first, then covariates.
    noise_cov : array, shape ((p+1)N, (p+1)N)
        Covariance of the centred Gaussian noise scores.
    operator_kind : {"score-linear", "multiplicative"}
        With ``"multiplicative"``, ``B`` must be zero and ``multipliers``
        (shape ``(p+1, G)``) define the pointwise operator on rendered curves.
    """

    p: int
    n_basis: int
    structural_matrix: NDArray
    noise_cov: NDArray
    operator_kind: Literal["score-linear", "multiplicative"] = "score-linear"
    multipliers: NDArray | None = None
    condition: float = field(init=False)

    def __post_init__(self):
        d = (self.p + 1) * self.n_basis
        B = np.array(self.structural_matrix, dtype=float)
        S = np.array(self.noise_cov, dtype=float)
        if B.shape != (d, d) or S.shape != (d, d):
            raise DimensionMismatch(f"B and noise_cov must be {d}x{d}")
        _check_psd(S, "noise_cov")
        cond = np.linalg.cond(np.eye(d) - B)
        if not np.isfinite(cond) or cond > _SINGULAR_COND:
            raise SingularSystem(f"I - B is singular (condition number {cond:.3g})")
        if self.operator_kind not in ("score-linear", "multiplicative"):
            raise ValueError(f"unknown operator_kind {self.operator_kind!r}")
        if self.operator_kind == "multiplicative" and self.multipliers is None:
            raise ValueError("multiplicative systems need tabulated multipliers")
        B.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "structural_matrix", B)
        object.__setattr__(self, "noise_cov", S)
        object.__setattr__(self, "condition", float(cond))

    @property
    def dim(self) -> int:
        return (self.p + 1) * self.n_basis

    @property
    def solution_operator(self) -> NDArray:
        """``(I - B)^{-1}``."""
        return np.linalg.inv(np.eye(self.dim) - self.structural_matrix)


@dataclass(frozen=True, eq=False)
class ShiftSpec:
    """Gaussian shift scores ``a ~ N(mean, cov)`` added to the system.

    ``affected_blocks`` lists channel indices (0 = target, ``j`` = covariate
    ``j``); all other blocks must carry zero mean and zero covariance.
    """

    mean: NDArray
    cov: NDArray
    n_basis: int
    affected_blocks: tuple[int, ...]

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        d = mean.size
        if cov.shape != (d, d) or d % self.n_basis:
            raise DimensionMismatch("shift mean/cov sizes are inconsistent")
        _check_psd(cov, "shift cov")
        free = np.ones(d, dtype=bool)
        for b in self.affected_blocks:
            free[b * self.n_basis : (b + 1) * self.n_basis] = False
        if np.any(mean[free] != 0) or np.any(cov[free] != 0) or np.any(cov[:, free] != 0):
            raise ValueError("unaffected blocks must have zero mean and covariance")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "affected_blocks", tuple(self.affected_blocks))

    @property
    def second_moment(self) -> NDArray:
        """Uncentred ``E[a a^T]``; this is the shift kernel in basis coordinates."""
        return self.cov + np.outer(self.mean, self.mean)


def chain_preset(
    n_basis: int = 10, b_x1y: float = 1.0, b_yx2: float = 1.0, noise_sd: float = 1.0
) -> SemSpec:
    """The chain ``X(1) -> Y -> X(2)`` with homogeneous effects on every basis dimension."""
    B3 = np.array([[0.0, b_x1y, 0.0], [0.0, 0.0, 0.0], [b_yx2, 0.0, 0.0]])
    eye = np.eye(n_basis)
    return SemSpec(2, n_basis, np.kron(B3, eye), noise_sd**2 * np.eye(3 * n_basis))


def chain_shift(
    n_basis: int = 10, mean: float = 0.1, sd: float = 0.1, blocks: Sequence[int] = (1, 2), p: int = 2
) -> ShiftSpec:
    """Independent ``N(mean, sd^2)`` shifts on every score of the listed blocks."""
    d = (p + 1) * n_basis
    mu = np.zeros(d)
    var = np.zeros(d)
    for b in blocks:
        mu[b * n_basis : (b + 1) * n_basis] = mean
        var[b * n_basis : (b + 1) * n_basis] = sd**2
    return ShiftSpec(mu, np.diag(var), n_basis, tuple(blocks))


def solve_sem(spec: SemSpec, shift: ShiftSpec | None, n: int, seed: int) -> ScorePanel:
    """Draw ``n`` score realizations of the (shifted) system.

    Noise and shift come from two independent child streams of
    ``SeedSequence(seed)``, so the noise draws are identical with and
    without a shift for the same seed.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if shift is not None and shift.mean.size != spec.dim:
        raise DimensionMismatch("shift dimension does not match the system")
    noise_ss, shift_ss = np.random.SeedSequence(seed).spawn(2)
    noise_rng = np.random.default_rng(noise_ss)
    eps = noise_rng.standard_normal((n, spec.dim)) @ _psd_factor(spec.noise_cov).T
    src = eps
    if shift is not None:
        shift_rng = np.random.default_rng(shift_ss)
        alpha = shift.mean + shift_rng.standard_normal((n, spec.dim)) @ _psd_factor(shift.cov).T
        src = eps + alpha
    if spec.operator_kind == "multiplicative" or not spec.structural_matrix.any():
        x = src
    else:
        x = np.linalg.solve(np.eye(spec.dim) - spec.structural_matrix, src.T).T
    return ScorePanel(x, spec.p, spec.n_basis)


def render_curves(
    scores: ScorePanel, basis: BasisSet, grid: TimeGrid, label: str = "observational"
) -> CurvePanel:
    """Tabulate ``sum_k score_k phi_k(t)`` for every channel of every realization."""
    if scores.n_basis != basis.n_basis:
        raise DimensionMismatch(
            f"scores use {scores.n_basis} basis functions, basis has {basis.n_basis}"
        )
    tab = basis.tabulate(grid)
    coef = scores.values.reshape(scores.n, scores.p + 1, scores.n_basis)
    return CurvePanel(grid, coef @ tab, label)


def apply_multiplicative(gs, system: CurveSystem, floor: float = 1e-6) -> CurveSystem:
    """Apply ``f_i -> f_i / (1 - g_i)`` channel-wise (target first).

    ``gs`` is a ``(p+1, G)`` array or a sequence of :class:`SampledCurve`.
    """
    g = np.vstack([c.values if isinstance(c, SampledCurve) else np.asarray(c, float) for c in gs])
    vals = system.channel_values()
    if g.shape != vals.shape:
        raise DimensionMismatch(f"multipliers have shape {g.shape}, system {vals.shape}")
    gap = 1.0 - g
    if np.any(np.abs(gap) < floor):
        raise NearSingularMultiplier(f"|1 - g_i(t)| drops below {floor}")
    out = vals / gap
    grid = system.grid
    return CurveSystem(SampledCurve(grid, out[0]), tuple(SampledCurve(grid, r) for r in out[1:]))


def simulate_panel(
    spec: SemSpec,
    shift: ShiftSpec | None,
    n: int,
    seed: int,
    basis: BasisSet,
    grid: TimeGrid,
    label: str | None = None,
) -> CurvePanel:
    """Score draws rendered to curves; multiplicative systems are applied on the grid."""
    label = label or ("observational" if shift is None else "shifted")
    panel = render_curves(solve_sem(spec, shift, n, seed), basis, grid, label)
    if spec.operator_kind != "multiplicative":
        return panel
    gap = 1.0 - np.asarray(spec.multipliers, dtype=float)
    if np.any(np.abs(gap) < 1e-6):
        raise NearSingularMultiplier("|1 - g_i(t)| drops below 1e-6")
    return CurvePanel(grid, panel.values / gap[None], label)


def environment_second_moment(spec: SemSpec, shift_second_moment: ArrayLike | None = None) -> NDArray:
    """``E[x x^T] = S (Sigma + K) S^T`` for a shift with second moment ``K``."""
    S = spec.solution_operator
    src = spec.noise_cov.copy()
    if shift_second_moment is not None:
        src = src + np.asarray(shift_second_moment, dtype=float)
    return S @ src @ S.T


def population_second_moment(spec: SemSpec, shift: ShiftSpec | None = None) -> NDArray:
    return environment_second_moment(spec, None if shift is None else shift.second_moment)
