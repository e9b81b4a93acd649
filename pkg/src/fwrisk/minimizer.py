"""Population worst-risk minimizers and regression kernels.

A kernel is stored as ``beta(i)(t, tau) = sum_{k,l} lam[i, k, l] phi_k(t) c_l^{(i)}(tau)``
where the column functions ``c_l^{(i)}`` are either the basis functions
themselves or the ``i``-th channel blocks of (eigen)functions given by basis
coefficients ``col_coeffs[i, l, :]``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .covariance import EigenSystem, eigendecompose
from .errors import DegenerateCovariates, DimensionMismatch, DomainError, SingularGram

__all__ = [
    "BetaKernel",
    "GramSystem",
    "assemble_gram",
    "eigenbasis_minimizer",
    "gram_minimizer",
    "plugin_estimator",
    "minimizer_from_moments",
    "diagonal_minimizer",
    "beta_eval",
    "coefficient_distance",
    "write_beta_csv",
    "read_beta_csv",
    "write_surface_csv",
    "read_surface_csv",
]

log = logging.getLogger(__name__)

_FALLBACK_COND = 1e12


@dataclass(frozen=True, eq=False)
class BetaKernel:
    """Coefficient tensor of a multivariate regression kernel.

    Parameters
    ----------
    lam : ndarray, shape (p, N_t, N_c)
        ``lam[i, k, l]``: covariate ``i`` (0-based), target basis index ``k``,
        column index ``l``.
    basis : BasisSet
        The target-side basis ``phi`` (also used to render column functions).
    col_coeffs : ndarray, shape (p, N_c, N), optional
        Basis coefficients of the column functions per covariate; ``None``
        means the column functions are ``phi_1..phi_{N_c}``.
    diagnostics : dict
        Free-form solver notes (kernel directions, conditioning, tail mass).
    """

    lam: NDArray
    basis: object
    col_coeffs: NDArray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.ndim != 3:
            raise DimensionMismatch("lam must be a (p, N_t, N_c) tensor")
        if not np.all(np.isfinite(lam)):
            raise ValueError("kernel coefficients must be finite")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        if self.col_coeffs is not None:
            cc = np.array(self.col_coeffs, dtype=float)
            if cc.shape[:2] != (lam.shape[0], lam.shape[2]):
                raise DimensionMismatch("col_coeffs must have shape (p, N_c, N)")
            cc.setflags(write=False)
            object.__setattr__(self, "col_coeffs", cc)

    @property
    def p(self) -> int:
        return self.lam.shape[0]

    @property
    def col_system(self) -> str:
        return "phi" if self.col_coeffs is None else "eigen"

    def phi_coefficients(self, n_basis: int | None = None) -> NDArray:
        """Equivalent coefficients on ``phi_k (x) phi_m``, shape ``(p, N, N)``.

        Both axes are zero-padded (or must fit) to ``n_basis``
        (default: the basis size).
        """
        N = self.basis.n_basis if n_basis is None else n_basis
        if self.col_coeffs is None:
            coef = self.lam
        else:
            coef = np.einsum("ikl,ilm->ikm", self.lam, self.col_coeffs)
        p, nt, nc = coef.shape
        if nt > N or nc > N:
            raise DimensionMismatch(f"kernel of size {nt}x{nc} does not fit in N={N}")
        out = np.zeros((p, N, N))
        out[:, :nt, :nc] = coef
        return out

    def gain_matrix(self, n_basis: int | None = None) -> NDArray:
        """Linear map from stacked covariate scores to target scores, shape ``(N, p N)``.

        Row ``k`` holds ``lam_k``; column ``i N + m`` pairs with ``<X(i), phi_m>``.
        """
        coef = self.phi_coefficients(n_basis)
        return np.hstack(list(coef))

    def l2_norm(self) -> float:
        """``||beta||`` in ``L2([T1,T2]^2)^p`` via Parseval."""
        return float(np.linalg.norm(self.phi_coefficients()))

    def covariate_norm(self, covariate: int) -> float:
        """Frobenius/L2 norm of ``beta(covariate)``; ``covariate`` is 1-based."""
        return float(np.linalg.norm(self.phi_coefficients()[covariate - 1]))

    def render(self, covariate: int, t: ArrayLike, tau: ArrayLike) -> NDArray:
        """``beta(covariate)(t, tau)`` on the outer grid ``t x tau`` (1-based covariate)."""
        if not 1 <= covariate <= self.p:
            raise IndexError(f"covariate must lie in 1..{self.p}")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        lo, hi = self.basis.t_start, self.basis.t_end
        if np.any((t < lo) | (t > hi)) or np.any((tau < lo) | (tau > hi)):
            raise DomainError(f"evaluation points must lie in [{lo}, {hi}]")
        coef = self.phi_coefficients()[covariate - 1]
        return self.basis(t).T @ coef @ self.basis(tau)


def beta_eval(beta: BetaKernel, t: float, tau: float, covariate: int) -> float:
    """Point value ``beta(covariate)(t, tau)``; ``covariate`` is 1-based."""
    return float(beta.render(covariate, [t], [tau])[0, 0])


def coefficient_distance(a: BetaKernel, b: BetaKernel) -> float:
    """``||a - b||`` in ``L2`` (Frobenius distance of ``phi x phi`` coefficients)."""
    N = max(a.basis.n_basis, b.basis.n_basis)
    return float(np.linalg.norm(a.phi_coefficients(N) - b.phi_coefficients(N)))


@dataclass(frozen=True, eq=False)
class GramSystem:
    """Pooled score Grammian ``G`` (pn x pn) with one right-hand side per target index.

    ``rhs[k]`` is ``gamma E_A[Z_k F] + (1 - gamma) E_O[Z_k F]``.
    """

    G: NDArray
    rhs: NDArray
    p: int
    n_trunc: int
    condition: float = field(init=False)

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        rhs = np.atleast_2d(np.array(self.rhs, dtype=float))
        d = self.p * self.n_trunc
        if G.shape != (d, d) or rhs.shape[1] != d:
            raise DimensionMismatch(f"Grammian must be {d}x{d} with rhs rows of length {d}")
        if np.abs(G - G.T).max() > 1e-10 * max(np.abs(G).max(), 1e-300):
            raise ValueError("Grammian must be symmetric")
        object.__setattr__(self, "G", 0.5 * (G + G.T))
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "condition", float(np.linalg.cond(self.G)))


def _truncation_index(p: int, n_basis: int, n_trunc: int) -> NDArray:
    return np.concatenate([i * n_basis + np.arange(n_trunc) for i in range(p)])


def assemble_gram(
    moment_a: NDArray, moment_o: NDArray, gamma: float, p: int, n_basis: int, n_trunc: int | None = None
) -> GramSystem:
    """Pool two ``(p+1)N`` score second-moment matrices into a :class:`GramSystem`.

    Only the first ``n_trunc`` basis functions per channel are kept.
    """
    n_trunc = n_basis if n_trunc is None else n_trunc
    M = gamma * np.asarray(moment_a, float) + (1.0 - gamma) * np.asarray(moment_o, float)
    if M.shape != ((p + 1) * n_basis,) * 2:
        raise DimensionMismatch("moment matrices do not match (p+1)*N")
    cov_idx = n_basis + _truncation_index(p, n_basis, n_trunc)
    G = M[np.ix_(cov_idx, cov_idx)]
    rhs = M[np.ix_(np.arange(n_trunc), cov_idx)]
    return GramSystem(G, rhs, p, n_trunc)


def _solve_symmetric(G: NDArray, rhs: NDArray, cond: float) -> NDArray:
    """Solve ``G X = rhs`` for symmetric ``G``; columns of ``rhs`` are right-hand sides."""
    if cond <= _FALLBACK_COND:
        try:
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), rhs)
        except np.linalg.LinAlgError:
            return scipy.linalg.solve(G, rhs, assume_a="sym")
    q, r, piv = scipy.linalg.qr(G, pivoting=True)
    z = scipy.linalg.solve_triangular(r, q.T @ rhs)
    out = np.empty_like(z)
    out[piv] = z
    return out


def _is_rank_deficient(G: NDArray) -> bool:
    s = np.linalg.svd(G, compute_uv=False)
    if s[0] == 0:
        return True
    return bool(s[-1] <= max(G.shape) * np.finfo(float).eps * s[0])


def gram_minimizer(
    gram: GramSystem,
    basis,
    singular_policy: Literal["error", "pseudo-inverse", "constant-sentinel"] = "error",
) -> BetaKernel:
    """Solve ``G lam_k = rhs_k`` for every target index ``k``.

    Parameters
    ----------
    singular_policy : {"error", "pseudo-inverse", "constant-sentinel"}
        What to do with a rank-deficient Grammian: raise :class:`SingularGram`,
        return the minimum-norm solution, or return the constant placeholder
        vector ``(n, ..., n)`` (``n`` the truncation level) with a warning.
        The placeholder only keeps the sequence well defined; it is not an
        estimate.
    """
    G, rhs = gram.G, gram.rhs
    diag = {"condition": gram.condition, "route": "gram"}
    if _is_rank_deficient(G):
        if singular_policy == "error":
            raise SingularGram(
                f"pooled Grammian is singular (condition {gram.condition:.3g})", gram.condition
            )
        if singular_policy == "pseudo-inverse":
            sol = np.linalg.lstsq(G, rhs.T, rcond=None)[0]
            diag["singular"] = "pseudo-inverse"
        elif singular_policy == "constant-sentinel":
            msg = (
                f"singular Grammian at truncation {gram.n_trunc}: returning the placeholder "
                f"vector ({gram.n_trunc}, ..., {gram.n_trunc}), not an estimate"
            )
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            log.warning(msg)
            sol = np.full((G.shape[0], rhs.shape[0]), float(gram.n_trunc))
            diag["singular"] = "constant-sentinel"
        else:
            raise ValueError(f"unknown singular_policy {singular_policy!r}")
    else:
        sol = _solve_symmetric(G, rhs.T, gram.condition)
    # sol[i*n + l, k] -> lam[i, k, l]
    lam = sol.T.reshape(rhs.shape[0], gram.p, gram.n_trunc).transpose(1, 0, 2)
    return BetaKernel(lam, basis, None, diag)


def eigenbasis_minimizer(
    eigen: EigenSystem,
    cross_a: NDArray,
    cross_o: NDArray,
    denom_a: NDArray,
    denom_o: NDArray,
    gamma: float,
    basis,
    p: int,
    summability_guard: float = 1e-10,
) -> BetaKernel:
    """Quotient formula on the eigenbasis of the pooled covariate operator.

    ``lam[k, l] = (g E_A[Z_k chi_l] + (1-g) E_O[Z_k chi_l]) / (g E_A[chi_l^2] + (1-g) E_O[chi_l^2])``.

    Directions whose pooled denominator falls below
    ``summability_guard * max|denominator|`` are treated as kernel
    directions of the pooled operator: their coefficient is set to zero
    (the minimum-norm member of the solution coset) and they are listed in
    ``diagnostics["kernel_directions"]``.

    Parameters
    ----------
    cross_a, cross_o : ndarray, shape (N_t, L)
        Cross moments ``E[Z_k chi_l]`` per environment.
    denom_a, denom_o : ndarray, shape (L,)
        ``E[chi_l^2]`` per environment.
    """
    num = gamma * np.asarray(cross_a, float) + (1.0 - gamma) * np.asarray(cross_o, float)
    den = gamma * np.asarray(denom_a, float) + (1.0 - gamma) * np.asarray(denom_o, float)
    if num.shape[1] != den.size:
        raise DimensionMismatch("cross moments and denominators disagree on L")
    scale = np.abs(den).max() if den.size else 0.0
    if scale == 0:
        raise DegenerateCovariates("every pooled denominator vanishes")
    kernel = np.abs(den) < summability_guard * scale
    if kernel.all():
        raise DegenerateCovariates("every pooled denominator is below the guard")
    safe = np.where(kernel, 1.0, den)
    coef = np.where(kernel[None, :], 0.0, num / safe)
    L = den.size
    N = eigen.n_basis
    vecs = eigen.eigenvectors[:, :L]
    # psi_l restricted to covariate i: rows i*N..(i+1)*N of the eigenvector
    col = np.stack([vecs[i * N : (i + 1) * N, :].T for i in range(p)])
    lam = np.broadcast_to(coef, (p,) + coef.shape)
    col_sq = (coef**2).sum(axis=0)
    diag = {
        "route": "eigen",
        "kernel_directions": np.flatnonzero(kernel).tolist(),
        # squared-coefficient mass per eigen-direction; a heuristic for summability only
        "tail_mass": col_sq.tolist(),
    }
    return BetaKernel(lam, basis, col, diag)


def plugin_estimator(G_a, G_o, Z_a, Z_o, gamma: float, basis, p: int) -> BetaKernel:
    """Plug-in minimizer ``[g G_A + (1-g) G_O]^{-1} [g Z_A + (1-g) Z_O]``.

    ``G_e`` are covariate Grammians (pN x pN) and ``Z_e`` the covariate/target
    cross moments (pN x N), both in the ``phi`` basis.
    """
    G = gamma * np.asarray(G_a, float) + (1.0 - gamma) * np.asarray(G_o, float)
    Z = gamma * np.asarray(Z_a, float) + (1.0 - gamma) * np.asarray(Z_o, float)
    if G.shape[0] != Z.shape[0] or G.shape[0] % p:
        raise DimensionMismatch("Grammian and cross moments have inconsistent sizes")
    gram = GramSystem(G, Z.T, p, G.shape[0] // p)
    return gram_minimizer(gram, basis, "error")


def minimizer_from_moments(
    moment_a: NDArray,
    moment_o: NDArray,
    gamma: float,
    p: int,
    basis,
    route: Literal["gram", "eigen", "diagonal"] = "gram",
    kernel_threshold: float = 1e-10,
) -> BetaKernel:
    """Worst-risk minimizer from full ``(p+1)N`` second-moment matrices of both environments.

    ``route="diagonal"`` restricts the search to kernels diagonal in ``phi``
    (see :func:`diagonal_minimizer`).
    """
    N = basis.n_basis
    if route == "diagonal":
        return diagonal_minimizer(moment_a, moment_o, gamma, p, basis)
    if route == "gram":
        return gram_minimizer(assemble_gram(moment_a, moment_o, gamma, p, N), basis)
    if route != "eigen":
        raise ValueError(f"unknown route {route!r}")
    MA, MO = np.asarray(moment_a, float), np.asarray(moment_o, float)
    xx = slice(N, None)
    pooled = gamma * MA[xx, xx] + (1.0 - gamma) * MO[xx, xx]
    eig = eigendecompose(pooled, kernel_threshold, n_basis=N)
    V = eig.eigenvectors
    cross_a = MA[:N, xx] @ V
    cross_o = MO[:N, xx] @ V
    denom_a = np.einsum("il,ij,jl->l", V, MA[xx, xx], V)
    denom_o = np.einsum("il,ij,jl->l", V, MO[xx, xx], V)
    return eigenbasis_minimizer(
        eig, cross_a, cross_o, denom_a, denom_o, gamma, basis, p, summability_guard=kernel_threshold
    )


def diagonal_minimizer(moment_a: NDArray, moment_o: NDArray, gamma: float, p: int, basis) -> BetaKernel:
    """Worst-risk minimizer over kernels diagonal in ``phi``: ``beta(i) = sum_k c_ik phi_k (x) phi_k``.

    The risk of such a kernel separates over basis dimensions, so each ``k``
    is a ``p x p`` solve on the moments of ``(Z_k, <X(1), phi_k>, ..., <X(p), phi_k>)``.
    It coincides with the unconstrained minimizer when the moments carry no
    cross-dimension terms.
    """
    N = basis.n_basis
    M = gamma * np.asarray(moment_a, float) + (1.0 - gamma) * np.asarray(moment_o, float)
    if M.shape != ((p + 1) * N,) * 2:
        raise DimensionMismatch("moment matrices do not match (p+1)*N")
    lam = np.zeros((p, N, N))
    conds = []
    for k in range(N):
        idx = N * np.arange(1, p + 1) + k
        G = M[np.ix_(idx, idx)]
        conds.append(float(np.linalg.cond(G)))
        if _is_rank_deficient(G):
            raise SingularGram(f"per-dimension Grammian {k + 1} is singular", conds[-1])
        lam[:, k, k] = np.linalg.solve(G, M[k, idx])
    return BetaKernel(lam, basis, None, {"route": "diagonal", "condition": max(conds)})


def write_beta_csv(beta: BetaKernel, path) -> None:
    """``covariate, k, l, lambda`` rows of the ``phi x phi`` coefficients (1-based indices)."""
    coef = beta.phi_coefficients()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["covariate", "k", "l", "lambda"])
        for i in range(coef.shape[0]):
            for k in range(coef.shape[1]):
                for l in range(coef.shape[2]):
                    w.writerow([i + 1, k + 1, l + 1, repr(float(coef[i, k, l]))])


def read_beta_csv(path, basis) -> BetaKernel:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    p = max(int(r["covariate"]) for r in rows)
    nk = max(int(r["k"]) for r in rows)
    nl = max(int(r["l"]) for r in rows)
    lam = np.zeros((p, nk, nl))
    for r in rows:
        lam[int(r["covariate"]) - 1, int(r["k"]) - 1, int(r["l"]) - 1] = float(r["lambda"])
    return BetaKernel(lam, basis)


def write_surface_csv(beta: BetaKernel, covariate: int, resolution: int, path) -> NDArray:
    """Uniform ``resolution x resolution`` grid of ``beta(covariate)``, t-major rows ``t, tau, value``."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    ts = np.linspace(beta.basis.t_start, beta.basis.t_end, resolution)
    surf = beta.render(covariate, ts, ts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "tau", "value"])
        for a, t in enumerate(ts):
            for b, tau in enumerate(ts):
                w.writerow([repr(float(t)), repr(float(tau)), repr(float(surf[a, b]))])
    return surf


def read_surface_csv(path) -> tuple[NDArray, NDArray]:
    """Return ``(grid, values)`` with ``values[a, b] = beta(grid[a], grid[b])``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ts = np.unique(data[:, 0])
    return ts, data[:, 2].reshape(ts.size, ts.size)
