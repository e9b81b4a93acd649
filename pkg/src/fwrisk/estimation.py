"""Consistent estimators of the worst-risk minimizer from paired curve panels.

Both estimators discretize every realization with an adaptive step
partition before taking scores, and use disjoint sample splits for the
numerator moments, the denominator moments and the eigenfunction estimate.

* :func:`eigenbasis_estimator` divides cross moments by pooled variances along
  estimated eigenfunctions of the pooled covariate operator.
* :func:`gram_estimator` solves the pooled Grammian system in the fixed basis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from numpy.typing import NDArray

from .covariance import EigenSystem, eigendecompose
from .errors import DegenerateDenominator, DimensionMismatch, InvalidTruncation, SplitViolation
from .fda import BasisSet, CurvePanel, partition_masks, project_panel, quad_weights, step_project_values
from .minimizer import BetaKernel, GramSystem, gram_minimizer

__all__ = [
    "SplitPlan",
    "EstimatorConfig",
    "make_split",
    "truncate_norm",
    "estimate_eigenfunctions",
    "eigenbasis_estimator",
    "gram_estimator",
    "step_scores",
    "range_scale",
    "write_estimation_report",
    "REPORT_FIELDS",
]

REPORT_FIELDS = ("n", "seed", "gamma", "route", "coeff_error", "frobenius_error", "runtime_ms")


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Disjoint realization indices for numerator, denominator and eigen estimation."""

    numerator: NDArray
    denominator: NDArray
    eigen: NDArray

    def __post_init__(self):
        parts = []
        for name in ("numerator", "denominator", "eigen"):
            arr = np.array(getattr(self, name), dtype=int).ravel()
            if arr.size == 0:
                raise SplitViolation(f"{name} split is empty")
            if np.unique(arr).size != arr.size:
                raise SplitViolation(f"{name} split repeats an index")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            parts.append(arr)
        allidx = np.concatenate(parts)
        if np.unique(allidx).size != allidx.size:
            raise SplitViolation("splits overlap")

    def check(self, n: int):
        for arr in (self.numerator, self.denominator, self.eigen):
            if arr.min() < 0 or arr.max() >= n:
                raise SplitViolation(f"split index outside 0..{n - 1}")

    @property
    def all(self) -> NDArray:
        return np.sort(np.concatenate([self.numerator, self.denominator, self.eigen]))


def make_split(n: int, fractions=(0.5, 0.25, 0.25), seed: int = 0) -> SplitPlan:
    """Shuffle ``0..n-1`` and cut off ``floor(f * n)`` indices per part."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or fr.sum() > 1 + 1e-12:
        raise ValueError("fractions must be three positive numbers summing to at most 1")
    sizes = np.floor(fr * n + 1e-9).astype(int)
    if np.any(sizes == 0):
        raise ValueError(f"n={n} is too small for three non-empty parts with fractions {tuple(fr)}")
    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.cumsum(sizes)
    return SplitPlan(perm[: cuts[0]], perm[cuts[0] : cuts[1]], perm[cuts[1] : cuts[2]])


def _default_truncation(n: int) -> int:
    return int(np.floor(n**0.25 + 1e-12))


def _default_mesh(n: int) -> float:
    return float(n ** (-1.0 / 3.0))


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning of the consistent estimators.

    Parameters
    ----------
    gamma : float
        Shift strength, ``> 0``.
    M : float
        Norm clamp for estimated eigenfunctions, ``> 1``.
    truncation : callable or int, optional
        ``e(n)``; an int fixes the level. Default ``floor(n^(1/4))``.
    mesh : callable or float, optional
        Relative partition threshold ``d_n``; the absolute threshold is
        ``d_n * range_scale(data)``. Default ``n^(-1/3)``.
    centralize : bool
        Centre all scores by the observational means of their split.
    reuse_splits : bool
        Use every realization for every moment (drops the independence
        between numerator and denominator estimates).
    """

    gamma: float
    M: float = 10.0
    truncation: Callable[[int], int] | int | None = None
    mesh: Callable[[int], float] | float | None = None
    centralize: bool = False
    reuse_splits: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.M > 1:
            raise InvalidTruncation(f"M must exceed 1, got {self.M}")
        probe = np.unique(np.geomspace(1, 1e6, 60).astype(int))
        if callable(self.truncation):
            e = np.array([self.truncation(int(n)) for n in probe])
            if np.any(np.diff(e) < 0):
                raise ValueError("truncation schedule must be nondecreasing")
        if callable(self.mesh):
            d = np.array([self.mesh(int(n)) for n in probe])
            if np.any(d <= 0) or np.any(np.diff(d) > 0):
                raise ValueError("mesh schedule must be positive and nonincreasing")

    def truncation_level(self, n: int) -> int:
        if self.truncation is None:
            return _default_truncation(n)
        if callable(self.truncation):
            return int(self.truncation(n))
        return int(self.truncation)

    def mesh_level(self, n: int) -> float:
        if self.mesh is None:
            return _default_mesh(n)
        if callable(self.mesh):
            return float(self.mesh(n))
        return float(self.mesh)


def truncate_norm(psi: NDArray, M: float) -> NDArray:
    """Clamp the ``L2`` norm of every channel block of ``psi`` at ``M``.

    ``psi`` has shape ``(p, N)`` (basis coefficients per channel). Blocks with
    norm above ``M`` are rescaled to norm exactly ``M``.
    """
    if not M > 1:
        raise InvalidTruncation(f"M must exceed 1, got {M}")
    psi = np.asarray(psi, dtype=float)
    norms = np.linalg.norm(psi, axis=-1, keepdims=True)
    factor = np.where(norms > M, M / np.where(norms > 0, norms, 1.0), 1.0)
    return psi * factor


def range_scale(*panels: CurvePanel) -> float:
    """Median over realizations of the largest channel range (max - min)."""
    spans = [np.ptp(p.values, axis=2).max(axis=1) for p in panels]
    return float(np.median(np.concatenate(spans)))


def step_scores(panels: Iterable[CurvePanel], basis: BasisSet, delta: float, channels=None) -> list[NDArray]:
    """Scores of step-projected curves, one partition per realization.

    The partition of realization ``m`` tracks ``channels`` (default: all)
    of every panel jointly. Returns one ``(n, p+1, N)`` score array per panel.
    """
    panels = list(panels)
    grid = panels[0].grid
    sel = slice(None) if channels is None else list(channels)
    tracked = np.concatenate([p.values[:, sel, :] for p in panels], axis=1)
    mask = partition_masks(tracked, delta)
    tab = basis.tabulate(grid) * quad_weights(grid)
    return [step_project_values(p.values, mask) @ tab.T for p in panels]


def estimate_eigenfunctions(
    shifted: CurvePanel,
    observational: CurvePanel,
    basis: BasisSet,
    gamma: float,
    reference: EigenSystem | None = None,
    kernel_threshold: float = 1e-10,
    centralize: bool = False,
) -> EigenSystem:
    """Eigensystem of the empirical pooled covariate second-moment operator.

    With ``centralize`` both environments are centred by the observational
    mean first. With a ``reference`` system, each eigenvector's sign is
    chosen to make its inner product with the matching reference
    eigenvector non-negative.
    """
    if shifted.n == 0 or observational.n == 0:
        raise ValueError("eigenfunction split is empty")
    xa = project_panel(shifted, basis).covariates
    xo = project_panel(observational, basis).covariates
    if centralize:
        mu = xo.mean(axis=0)
        xa, xo = xa - mu, xo - mu
    pooled = gamma * (xa.T @ xa) / xa.shape[0] + (1.0 - gamma) * (xo.T @ xo) / xo.shape[0]
    eig = eigendecompose(0.5 * (pooled + pooled.T), kernel_threshold, n_basis=basis.n_basis)
    if reference is not None:
        V = eig.eigenvectors.copy()
        signs = np.sign(np.sum(V * reference.eigenvectors, axis=0))
        V *= np.where(signs == 0, 1.0, signs)
        eig = EigenSystem(eig.eigenvalues, V, eig.kernel_dim, eig.threshold, eig.n_basis)
    return eig


def _check_pair(shifted: CurvePanel, observational: CurvePanel, split: SplitPlan):
    if shifted.n != observational.n or shifted.p != observational.p:
        raise DimensionMismatch("shifted and observational panels must be paired realization by realization")
    if shifted.grid != observational.grid:
        raise DimensionMismatch("panels must share one grid")
    split.check(shifted.n)


def _parts(split: SplitPlan, cfg: EstimatorConfig):
    if cfg.reuse_splits:
        everything = split.all
        return everything, everything, everything
    return split.numerator, split.denominator, split.eigen


def _pooled_den(ca: NDArray, co: NDArray, gamma: float) -> tuple[NDArray, NDArray]:
    den = gamma * np.mean(ca**2, axis=0) + (1.0 - gamma) * np.mean(co**2, axis=0)
    size = gamma * np.mean(ca**2, axis=0) + abs(1.0 - gamma) * np.mean(co**2, axis=0)
    return den, size


def eigenbasis_estimator(
    shifted: CurvePanel,
    observational: CurvePanel,
    split: SplitPlan,
    cfg: EstimatorConfig,
    basis: BasisSet,
    reference: EigenSystem | None = None,
) -> BetaKernel:
    """Quotient estimator on estimated eigenfunctions.

    ``lam[k, l] = mean_num(g C_l^A D_k^A + (1-g) C_l^O D_k^O) / mean_den(g C'_l^A^2 + (1-g) C'_l^O^2)``
    for ``k, l <= e(n)``, with ``C`` the step-projected covariate scores
    along the estimated eigenfunctions, ``D`` the step-projected target
    scores on ``phi`` and ``C'`` the covariate scores of the denominator
    split. Column functions are the norm-clamped eigenfunctions.
    """
    _check_pair(shifted, observational, split)
    n, p, N = shifted.n, shifted.p, basis.n_basis
    e = cfg.truncation_level(n)
    e_k, e_l = min(e, N), min(e, p * N)
    if e_k <= 0 or e_l <= 0:
        return BetaKernel(np.zeros((p, N, N)), basis, diagnostics={"route": "eigen-estimator", "e": 0})
    num_idx, den_idx, eig_idx = _parts(split, cfg)
    gamma = cfg.gamma

    eig = estimate_eigenfunctions(
        shifted.subset(eig_idx), observational.subset(eig_idx), basis, gamma, reference, centralize=cfg.centralize
    )
    V = eig.eigenvectors[:, :e_l]
    delta = cfg.mesh_level(n) * range_scale(shifted, observational)

    sa, so = step_scores([shifted.subset(num_idx), observational.subset(num_idx)], basis, delta)
    ca = sa[:, 1:, :].reshape(len(num_idx), -1) @ V
    co = so[:, 1:, :].reshape(len(num_idx), -1) @ V
    da, do = sa[:, 0, :e_k], so[:, 0, :e_k]

    cov_channels = range(1, p + 1)
    sa2, so2 = step_scores(
        [shifted.subset(den_idx), observational.subset(den_idx)], basis, delta, channels=cov_channels
    )
    ca2 = sa2[:, 1:, :].reshape(len(den_idx), -1) @ V
    co2 = so2[:, 1:, :].reshape(len(den_idx), -1) @ V

    if cfg.centralize:
        # a single denominator sample centred by its own mean carries no variance
        if len(den_idx) < 2:
            raise DegenerateDenominator(1)
        mu, nu, mu2 = co.mean(axis=0), do.mean(axis=0), co2.mean(axis=0)
        ca, co, da, do = ca - mu, co - mu, da - nu, do - nu
        ca2, co2 = ca2 - mu2, co2 - mu2

    numer = (gamma * da.T @ ca + (1.0 - gamma) * do.T @ co) / len(num_idx)
    den, size = _pooled_den(ca2, co2, gamma)
    bad = np.flatnonzero(np.abs(den) <= 1e-12 * size.max() + 1e-300)
    if bad.size:
        raise DegenerateDenominator(int(bad[0]) + 1)
    coef = numer / den  # (e_k, e_l)

    psi = np.stack([truncate_norm(V[:, l].reshape(p, N), cfg.M) for l in range(e_l)])  # (e_l, p, N)
    col = np.transpose(psi, (1, 0, 2))
    lam = np.broadcast_to(coef, (p,) + coef.shape)
    diag = {"route": "eigen-estimator", "e": e, "delta": delta, "eigenvalues": eig.eigenvalues[:e_l].tolist()}
    return BetaKernel(lam, basis, col, diag)


def gram_estimator(
    shifted: CurvePanel,
    observational: CurvePanel,
    split: SplitPlan,
    cfg: EstimatorConfig,
    basis: BasisSet,
) -> BetaKernel:
    """Grammian estimator in the fixed basis at truncation ``e(n)``.

    The pooled Grammian comes from the denominator split (covariates tracked
    by the partition), the right-hand sides from the numerator split.
    Raises :class:`~fwrisk.errors.SingularGram` for a singular Grammian.
    """
    _check_pair(shifted, observational, split)
    n, p, N = shifted.n, shifted.p, basis.n_basis
    e = min(cfg.truncation_level(n), N)
    if e <= 0:
        return BetaKernel(np.zeros((p, N, N)), basis, diagnostics={"route": "gram-estimator", "e": 0})
    num_idx, den_idx, _ = _parts(split, cfg)
    gamma = cfg.gamma
    delta = cfg.mesh_level(n) * range_scale(shifted, observational)

    sa, so = step_scores([shifted.subset(num_idx), observational.subset(num_idx)], basis, delta)
    ca, co = sa[:, 1:, :e].reshape(len(num_idx), -1), so[:, 1:, :e].reshape(len(num_idx), -1)
    da, do = sa[:, 0, :e], so[:, 0, :e]
    sa2, so2 = step_scores(
        [shifted.subset(den_idx), observational.subset(den_idx)], basis, delta, channels=range(1, p + 1)
    )
    ca2, co2 = sa2[:, 1:, :e].reshape(len(den_idx), -1), so2[:, 1:, :e].reshape(len(den_idx), -1)

    if cfg.centralize:
        mu, nu, mu2 = co.mean(axis=0), do.mean(axis=0), co2.mean(axis=0)
        ca, co, da, do = ca - mu, co - mu, da - nu, do - nu
        ca2, co2 = ca2 - mu2, co2 - mu2

    G = gamma * ca2.T @ ca2 / len(den_idx) + (1.0 - gamma) * co2.T @ co2 / len(den_idx)
    rhs = (gamma * da.T @ ca + (1.0 - gamma) * do.T @ co) / len(num_idx)
    beta = gram_minimizer(GramSystem(G, rhs, p, e), basis, "error")
    beta.diagnostics.update({"route": "gram-estimator", "e": e, "delta": delta})
    return beta


def write_estimation_report(rows: Iterable[dict], path) -> None:
    """CSV with columns ``n, seed, gamma, route, coeff_error, frobenius_error, runtime_ms``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(REPORT_FIELDS))
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in REPORT_FIELDS})
