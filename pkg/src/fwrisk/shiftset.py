"""Membership tests for the set of admissible out-of-sample shifts.

A candidate shift ``A'`` belongs to the set at level ``gamma`` when
``int int g(s) (gamma K_A(s,t) - K_A'(s,t)) g(t)^T ds dt >= 0`` for every test
function ``g``. Three checks are provided: quadratic forms on a dense test
family, the PSD criterion on finite basis coefficients, and the per-frequency
criterion for wide-sense stationary shifts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .covariance import CovOperator
from .errors import DimensionMismatch, NotSymmetric
from .fda import BasisSet, TimeGrid, quad_weights

__all__ = [
    "ShiftCheck",
    "TestFamily",
    "default_test_family",
    "mercer_check",
    "finite_basis_psd_check",
    "wss_fft_check",
    "triangular_autocov",
]


@dataclass
class ShiftCheck:
    """Outcome of a membership check.

    ``witness`` is the violating test function's basis coefficients
    (quadratic-form checks) or the violating frequency (spectral check);
    ``None`` for members.
    """

    member: bool
    min_form: float
    witness: NDArray | float | None = None
    witness_label: str = ""
    details: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.member

    def to_json(self) -> str:
        w = self.witness
        if isinstance(w, np.ndarray):
            w = w.tolist()
        return json.dumps(
            {
                "member": self.member,
                "min_form": self.min_form,
                "witness": w,
                "witness_label": self.witness_label,
                **self.details,
            }
        )


@dataclass(frozen=True, eq=False)
class TestFamily:
    """Single-channel test functions projected onto the basis.

    ``coeffs[:, j]`` holds ``<g_j, phi_k>``; ``labels[j]`` names ``g_j``.
    """

    coeffs: NDArray
    labels: tuple[str, ...]

    __test__ = False  # not a pytest class


def default_test_family(
    basis: BasisSet, step_depth: int = 5, poly_degree: int = 4, n_quad: int = 2049
) -> TestFamily:
    """Basis functions, dyadic step indicators and monomials up to ``poly_degree``."""
    grid = TimeGrid.uniform(n_quad, basis.t_start, basis.t_end)
    t = grid.points
    w = quad_weights(grid)
    u = (t - basis.t_start) / (basis.t_end - basis.t_start)
    tab = basis.tabulate(grid)
    funcs, labels = [], []
    for depth in range(step_depth + 1):
        for j in range(2**depth):
            lo, hi = j / 2**depth, (j + 1) / 2**depth
            funcs.append(((u >= lo) & (u < hi)).astype(float))
            labels.append(f"step[{lo:g},{hi:g})")
    for deg in range(poly_degree + 1):
        funcs.append(u**deg)
        labels.append(f"t^{deg}")
    projected = (tab * w) @ np.array(funcs).T
    N = basis.n_basis
    coeffs = np.hstack([np.eye(N), projected])
    labels = [f"phi_{k}" for k in range(1, N + 1)] + labels
    return TestFamily(coeffs, tuple(labels))


def _as_matrix(op) -> NDArray:
    return op.matrix if isinstance(op, CovOperator) else np.asarray(op, dtype=float)


def _check_sym(mat: NDArray, name: str):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"{name} must be square")
    if np.abs(mat - mat.T).max() > 1e-10 * max(np.abs(mat).max(), 1e-300):
        raise NotSymmetric(f"{name} is not symmetric")


def mercer_check(
    candidate,
    reference,
    gamma: float,
    test_family: TestFamily | BasisSet,
    tol: float = 1e-10,
) -> ShiftCheck:
    """Quadratic-form test of ``D = gamma K_ref - K_cand`` over a dense test family.

    Every family member is tried in every channel on its own; then the
    minimum of the form over the span of all multi-channel combinations of
    family members is searched (an eigenproblem on the compressed form).
    Forms are normalized by ``||g||^2`` and compared with
    ``-tol * max(||gamma K_ref||, ||K_cand||)``.
    """
    C, R = _as_matrix(candidate), _as_matrix(reference)
    _check_sym(C, "candidate")
    _check_sym(R, "reference")
    if C.shape != R.shape:
        raise DimensionMismatch("candidate and reference sizes differ")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    family = default_test_family(test_family) if isinstance(test_family, BasisSet) else test_family
    N = family.coeffs.shape[0]
    d = C.shape[0]
    if d % N:
        raise DimensionMismatch(f"operator size {d} is not a multiple of the basis size {N}")
    n_ch = d // N
    D = gamma * R - C
    scale = max(np.linalg.norm(gamma * R, 2), np.linalg.norm(C, 2), 1e-300)
    thresh = -tol * scale

    F = family.coeffs
    norms = np.maximum(np.sum(F**2, axis=0), 1e-300)
    best, best_vec, best_label = np.inf, None, ""
    for ch in range(n_ch):
        blk = D[ch * N : (ch + 1) * N, ch * N : (ch + 1) * N]
        forms = np.einsum("kj,kl,lj->j", F, blk, F) / norms
        j = int(np.argmin(forms))
        if forms[j] < best:
            vec = np.zeros(d)
            vec[ch * N : (ch + 1) * N] = F[:, j]
            best, best_vec, best_label = float(forms[j]), vec, f"channel {ch}: {family.labels[j]}"

    # span of the multi-channel family = block-diagonal column space of F
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    U = U[:, s > 1e-10 * s.max()]
    Ub = np.kron(np.eye(n_ch), U)
    w, v = np.linalg.eigh(Ub.T @ D @ Ub)
    if w[0] < best:
        best, best_vec, best_label = float(w[0]), Ub @ v[:, 0], "span minimizer"

    member = best >= thresh
    return ShiftCheck(
        member=bool(member),
        min_form=best,
        witness=None if member else best_vec,
        witness_label="" if member else best_label,
        details={"threshold": thresh, "family_size": int(F.shape[1]), "channels": n_ch},
    )


def finite_basis_psd_check(candidate, reference, gamma: float, tol: float = 1e-10) -> bool:
    """``gamma * reference - candidate`` is PSD up to ``tol`` times the spectral scale."""
    C, R = _as_matrix(candidate), _as_matrix(reference)
    _check_sym(C, "candidate")
    _check_sym(R, "reference")
    if C.shape != R.shape:
        raise DimensionMismatch("candidate and reference sizes differ")
    D = gamma * R - C
    w = np.linalg.eigvalsh(0.5 * (D + D.T))
    scale = max(np.linalg.norm(gamma * R, 2), np.linalg.norm(C, 2), 1e-300)
    return bool(w.min() >= -tol * scale)


def triangular_autocov(lags: ArrayLike, width: float) -> NDArray:
    """``max(0, 1 - |h| / width)``: a valid autocovariance (non-negative spectrum)."""
    return np.clip(1.0 - np.abs(np.asarray(lags, float)) / width, 0.0, None)


def _lag_matrices(k: ArrayLike, n_lags: int) -> NDArray:
    arr = np.asarray(k, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None, None]
    if arr.ndim != 3 or arr.shape[0] != n_lags or arr.shape[1] != arr.shape[2]:
        raise DimensionMismatch("autocovariance must be (L,) or (L, d, d) on the lag grid")
    return arr


def wss_fft_check(
    candidate_autocov: ArrayLike,
    reference_autocov: ArrayLike,
    lags: ArrayLike,
    gamma: float,
    freq_tol: float = 1e-10,
) -> ShiftCheck:
    """Spectral check for wide-sense stationary shifts.

    The lag grid must be uniform and symmetric about zero, with
    ``k(-h) = k(h)^T``. The sequence ``gamma k - k'`` is zero-padded to at
    least twice its length and transformed; every frequency bin must carry a
    Hermitian matrix with smallest eigenvalue ``>= -freq_tol * scale``.
    The witness is the frequency (cycles per lag unit) of the worst bin.
    """
    h = np.asarray(lags, dtype=float)
    L = h.size
    if L % 2 == 0 or not np.allclose(h, -h[::-1]) or not np.allclose(np.diff(h), h[1] - h[0]):
        raise ValueError("lag grid must be uniform, odd-sized and symmetric about 0")
    kc = _lag_matrices(candidate_autocov, L)
    kr = _lag_matrices(reference_autocov, L)
    if kc.shape != kr.shape:
        raise DimensionMismatch("candidate and reference have different channel counts")
    for name, k in (("candidate", kc), ("reference", kr)):
        if not np.allclose(k[::-1], np.transpose(k, (0, 2, 1)), atol=1e-12):
            raise NotSymmetric(f"{name} autocovariance violates k(-h) = k(h)^T")
    H = L // 2
    nfft = 1 << int(np.ceil(np.log2(2 * L)))
    diff = gamma * kr - kc

    def spectrum(seq):
        buf = np.zeros((nfft,) + seq.shape[1:], dtype=float)
        buf[: H + 1] = seq[H:]
        buf[nfft - H :] = seq[:H]
        return np.fft.fft(buf, axis=0)

    spec = _herm(spectrum(diff))
    eig_min = np.linalg.eigvalsh(spec)[:, 0]
    scale = max(
        np.abs(np.linalg.eigvalsh(_herm(spectrum(gamma * kr)))).max(),
        np.abs(np.linalg.eigvalsh(_herm(spectrum(kc)))).max(),
        1e-300,
    )
    idx = int(np.argmin(eig_min))
    member = bool(eig_min[idx] >= -freq_tol * scale)
    freqs = np.fft.fftfreq(nfft, d=h[1] - h[0])
    return ShiftCheck(
        member=member,
        min_form=float(eig_min[idx]),
        witness=None if member else float(freqs[idx]),
        witness_label="" if member else f"bin {idx}",
        details={"n_fft": nfft, "bin": idx},
    )


def _herm(spec: NDArray) -> NDArray:
    return 0.5 * (spec + np.conj(np.transpose(spec, (0, 2, 1))))
