"""Covariance kernels in basis coordinates and their eigensystems.

A kernel ``K(s, t)`` restricted to ``span{phi_1..phi_N}`` per channel is stored
as the ``(d N) x (d N)`` matrix of score second moments, channel-major. The
continuum kernel is recovered as ``phi(s)^T K phi(t)`` per channel pair.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, EmptyPanel, NotSymmetric
from .fda import BasisSet, ScorePanel

__all__ = [
    "CovOperator",
    "EigenSystem",
    "empirical_cov",
    "pooled_operator",
    "eigendecompose",
    "cross_moments",
    "rotate_scores",
    "write_matrix_csv",
]

_SYM_RTOL = 1e-10


def _is_symmetric(mat: NDArray) -> bool:
    scale = max(np.abs(mat).max(), 1e-300)
    return np.abs(mat - mat.T).max() <= _SYM_RTOL * scale


@dataclass(frozen=True, eq=False)
class CovOperator:
    """Symmetric basis-coordinate matrix of a (cross-)covariance kernel.

    ``channels`` names the stacked blocks, e.g. ``("Y", "X1", "X2")``.
    """

    matrix: NDArray
    n_basis: int
    channels: tuple[str, ...]
    basis: BasisSet | None = None

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        d = len(self.channels) * self.n_basis
        if mat.shape != (d, d):
            raise DimensionMismatch(f"expected a {d}x{d} matrix, got {mat.shape}")
        if not _is_symmetric(mat):
            raise NotSymmetric("covariance matrix is not symmetric")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def channel_count(self) -> int:
        return len(self.channels)

    def block(self, i: int, j: int) -> NDArray:
        N = self.n_basis
        return self.matrix[i * N : (i + 1) * N, j * N : (j + 1) * N]

    def is_psd(self, rtol: float = 1e-8) -> bool:
        w = np.linalg.eigvalsh(self.matrix)
        return bool(w.min() >= -rtol * max(np.abs(w).max(), 1e-300))

    def kernel(self, s: ArrayLike, t: ArrayLike, i: int = 0, j: int = 0) -> NDArray:
        """Evaluate ``K_{ij}(s, t)`` on the outer grid ``s x t``."""
        if self.basis is None:
            raise ValueError("no basis attached to this operator")
        return self.basis(s).T @ self.block(i, j) @ self.basis(t)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigenpairs sorted by descending eigenvalue.

    ``eigenvectors[:, l]`` holds the channel-stacked basis coefficients of
    ``psi_l``. ``kernel_dim`` counts eigenvalues with
    ``|alpha| < threshold * max|alpha|``.
    """

    eigenvalues: NDArray
    eigenvectors: NDArray
    kernel_dim: int
    threshold: float
    n_basis: int

    @property
    def kernel_mask(self) -> NDArray:
        scale = max(np.abs(self.eigenvalues).max(), 1e-300)
        return np.abs(self.eigenvalues) < self.threshold * scale

    def reconstruct(self) -> NDArray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def _select(scores: ScorePanel, channels) -> tuple[NDArray, tuple[str, ...]]:
    names = ["Y"] + [f"X{j}" for j in range(1, scores.p + 1)]
    if channels == "all":
        idx = list(range(scores.p + 1))
    elif channels == "covariates":
        idx = list(range(1, scores.p + 1))
    elif channels == "target":
        idx = [0]
    else:
        idx = list(channels)
    cols = np.hstack([scores.block(j) for j in idx])
    return cols, tuple(names[j] for j in idx)


def empirical_cov(scores: ScorePanel, channels="all", basis: BasisSet | None = None) -> CovOperator:
    """Uncentred second-moment matrix ``(1/n) sum_m v_m v_m^T`` of the selected blocks.

    ``channels`` is ``"all"``, ``"covariates"``, ``"target"`` or a list of
    channel indices (0 = target).
    """
    if scores.n == 0:
        raise EmptyPanel("cannot estimate a covariance from zero realizations")
    v, names = _select(scores, channels)
    mat = v.T @ v / scores.n
    return CovOperator(0.5 * (mat + mat.T), scores.n_basis, names, basis)


def pooled_operator(cov_a: CovOperator, cov_o: CovOperator, gamma: float) -> CovOperator:
    """``gamma * cov_a + (1 - gamma) * cov_o``; indefinite results are allowed for ``gamma > 1``."""
    if cov_a.matrix.shape != cov_o.matrix.shape or cov_a.channels != cov_o.channels:
        raise DimensionMismatch("pooled operands must cover the same channels and basis size")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    mat = gamma * cov_a.matrix + (1.0 - gamma) * cov_o.matrix
    return CovOperator(mat, cov_a.n_basis, cov_a.channels, cov_a.basis)


def eigendecompose(op, kernel_threshold: float = 1e-10, n_basis: int | None = None) -> EigenSystem:
    """Full symmetric eigendecomposition with a deterministic sign convention.

    Eigenvalues are sorted in descending order (stable for ties); each
    eigenvector is flipped so its first non-negligible coefficient is positive.
    A raw matrix input needs ``n_basis`` to know its channel blocks (default:
    one channel).
    """
    if isinstance(op, CovOperator):
        mat, n_basis = op.matrix, op.n_basis
    else:
        mat = np.asarray(op, dtype=float)
        n_basis = mat.shape[0] if n_basis is None else n_basis
        if not _is_symmetric(mat):
            raise NotSymmetric("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    for col in range(v.shape[1]):
        nz = np.flatnonzero(np.abs(v[:, col]) > 1e-12)
        if nz.size and v[nz[0], col] < 0:
            v[:, col] = -v[:, col]
    scale = max(np.abs(w).max(), 1e-300)
    kdim = int(np.sum(np.abs(w) < kernel_threshold * scale))
    return EigenSystem(w, v, kdim, kernel_threshold, n_basis)


def rotate_scores(covariate_scores: NDArray, eigen: EigenSystem) -> NDArray:
    """Eigen-scores ``chi_l = <X, psi_l>`` from channel-stacked basis scores."""
    return np.asarray(covariate_scores) @ eigen.eigenvectors


def cross_moments(target_scores: ArrayLike, other_scores: ArrayLike) -> NDArray:
    """``E[Z_k chi_l]`` estimated as ``(1/n) sum_m Z_k chi_l``; shape ``(K, L)``."""
    Z = np.atleast_2d(np.asarray(target_scores, dtype=float))
    C = np.atleast_2d(np.asarray(other_scores, dtype=float))
    if Z.shape[0] != C.shape[0]:
        raise DimensionMismatch(f"{Z.shape[0]} target rows vs {C.shape[0]} covariate rows")
    if Z.shape[0] == 0:
        raise EmptyPanel("no realizations")
    return Z.T @ C / Z.shape[0]


def write_matrix_csv(op: CovOperator, path) -> None:
    """Row-major CSV; the header labels each column ``<channel>:<k>``."""
    labels = [f"{c}:{k}" for c in op.channels for k in range(1, op.n_basis + 1)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + labels)
        for lab, row in zip(labels, op.matrix):
            w.writerow([lab] + [repr(float(x)) for x in row])
