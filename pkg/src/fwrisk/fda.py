"""Time grids, sampled curves, orthonormal bases and cadlag discretization.

All inner products use left-endpoint Riemann sums on the sample grid,

    <f, g> = sum_i f(t_i) g(t_i) (t_{i+1} - t_i),

so a curve is treated as the step function holding ``f(t_i)`` on
``[t_i, t_{i+1})``. The sine basis ``sqrt(2/T) sin(2 k pi (t - t_start) / T)``
is integrated exactly by this rule on uniform grids (up to aliasing).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterator, Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, EmptyPanel, GridMismatch, InvalidThreshold

__all__ = [
    "TimeGrid",
    "SampledCurve",
    "CurveSystem",
    "CurvePanel",
    "ScorePanel",
    "BasisSet",
    "AdaptivePartition",
    "sine_basis",
    "tabulated_basis",
    "quad_weights",
    "quad_inner",
    "project_scores",
    "project_panel",
    "adaptive_partition",
    "partition_masks",
    "step_project",
    "step_project_values",
    "write_panel_csv",
    "read_panel_csv",
]


def _frozen(a: ArrayLike, dtype=float) -> NDArray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Ascending sample times covering ``[t_start, t_end]``, endpoints included."""

    points: NDArray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be finite and strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, n_points: int, t_start: float = 0.0, t_end: float = 1.0) -> "TimeGrid":
        return cls(np.linspace(t_start, t_end, n_points))

    @property
    def t_start(self) -> float:
        return float(self.points[0])

    @property
    def t_end(self) -> float:
        return float(self.points[-1])

    @property
    def span(self) -> float:
        return self.t_end - self.t_start

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())

    @property
    def weights(self) -> NDArray:
        """Left-endpoint quadrature weights; the last point carries weight zero."""
        return quad_weights(self)


def quad_weights(grid: TimeGrid) -> NDArray:
    w = np.zeros(len(grid))
    w[:-1] = np.diff(grid.points)
    return w


@dataclass(frozen=True, eq=False)
class SampledCurve:
    """One real-valued curve tabulated on a :class:`TimeGrid`.

    ``interpretation`` only matters for off-grid evaluation: ``"step"`` holds
    the left value on ``[t_i, t_{i+1})`` (cadlag sampling), ``"linear"``
    interpolates.
    """

    grid: TimeGrid
    values: NDArray
    interpretation: Literal["step", "linear"] = "step"

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (len(self.grid),):
            raise DimensionMismatch(
                f"curve has {vals.size} values for a grid of {len(self.grid)} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        if self.interpretation not in ("step", "linear"):
            raise ValueError(f"unknown interpretation {self.interpretation!r}")
        object.__setattr__(self, "values", vals)

    def __call__(self, t: ArrayLike) -> NDArray:
        t = np.asarray(t, dtype=float)
        if self.interpretation == "linear":
            return np.interp(t, self.grid.points, self.values)
        idx = np.searchsorted(self.grid.points, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.grid) - 1)
        return self.values[idx]

    def __add__(self, other: "SampledCurve") -> "SampledCurve":
        _check_same_grid(self.grid, other.grid)
        return SampledCurve(self.grid, self.values + other.values, self.interpretation)

    def __mul__(self, scalar: float) -> "SampledCurve":
        return SampledCurve(self.grid, self.values * scalar, self.interpretation)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class CurveSystem:
    """A target curve ``Y`` with its ``p`` covariate curves ``X(1..p)``."""

    target: SampledCurve
    covariates: tuple[SampledCurve, ...]

    def __post_init__(self):
        covs = tuple(self.covariates)
        if len(covs) < 1:
            raise ValueError("a curve system needs at least one covariate")
        for c in covs:
            _check_same_grid(self.target.grid, c.grid)
        object.__setattr__(self, "covariates", covs)

    @property
    def grid(self) -> TimeGrid:
        return self.target.grid

    @property
    def p(self) -> int:
        return len(self.covariates)

    def channel_values(self) -> NDArray:
        """Array of shape ``(p + 1, G)``; row 0 is the target."""
        return np.vstack([self.target.values] + [c.values for c in self.covariates])


@dataclass(frozen=True, eq=False)
class CurvePanel:
    """Realizations of a curve system sharing one grid.

    Stored densely as ``values[m, c, j]``: realization ``m``, channel ``c``
    (0 = target ``Y``, ``1..p`` = covariates) and grid index ``j``.
    """

    grid: TimeGrid
    values: NDArray
    label: str = "observational"

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 3 or vals.shape[2] != len(self.grid):
            raise DimensionMismatch(
                f"panel values must have shape (n, p+1, {len(self.grid)}), got {vals.shape}"
            )
        if vals.shape[1] < 2:
            raise DimensionMismatch("panel needs a target and at least one covariate")
        if not np.all(np.isfinite(vals)):
            raise ValueError("panel values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_systems(cls, systems: Sequence[CurveSystem], label: str = "observational") -> "CurvePanel":
        if len(systems) == 0:
            raise EmptyPanel("cannot build a panel from zero systems")
        grid = systems[0].grid
        p = systems[0].p
        for s in systems:
            _check_same_grid(grid, s.grid)
            if s.p != p:
                raise DimensionMismatch("all systems in a panel must share p")
        return cls(grid, np.stack([s.channel_values() for s in systems]), label)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1] - 1

    def __len__(self) -> int:
        return self.n

    def system(self, m: int) -> CurveSystem:
        row = self.values[m]
        return CurveSystem(
            SampledCurve(self.grid, row[0]),
            tuple(SampledCurve(self.grid, r) for r in row[1:]),
        )

    @property
    def systems(self) -> Iterator[CurveSystem]:
        return (self.system(m) for m in range(self.n))

    def subset(self, indices: ArrayLike) -> "CurvePanel":
        return CurvePanel(self.grid, self.values[np.asarray(indices, dtype=int)], self.label)


@dataclass(frozen=True, eq=False)
class ScorePanel:
    """Basis scores per realization, stacked as ``(zeta, xi_1, ..., xi_p)``.

    ``values`` has shape ``(n, (p + 1) * n_basis)``; block 0 holds the target
    scores and block ``j`` the scores of covariate ``j``.
    """

    values: NDArray
    p: int
    n_basis: int

    def __post_init__(self):
        vals = _frozen(np.atleast_2d(self.values))
        if vals.shape[1] != (self.p + 1) * self.n_basis:
            raise DimensionMismatch(
                f"score dimension {vals.shape[1]} != (p+1)*N = {(self.p + 1) * self.n_basis}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def target(self) -> NDArray:
        return self.values[:, : self.n_basis]

    @property
    def covariates(self) -> NDArray:
        """Covariate scores stacked channel-major, shape ``(n, p * n_basis)``."""
        return self.values[:, self.n_basis :]

    def block(self, j: int) -> NDArray:
        """Scores of channel ``j`` (0 = target)."""
        return self.values[:, j * self.n_basis : (j + 1) * self.n_basis]

    def subset(self, indices: ArrayLike) -> "ScorePanel":
        return ScorePanel(self.values[np.asarray(indices, dtype=int)], self.p, self.n_basis)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """An orthonormal function system ``phi_1..phi_N``.

    ``evaluator(k, t)`` returns ``phi_k(t)`` for 1-based ``k`` and an array of
    times ``t``.
    """

    kind: Literal["sine", "custom-tabulated"]
    n_basis: int
    evaluator: Callable[[int, NDArray], NDArray]
    t_start: float = 0.0
    t_end: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n_basis < 1:
            raise ValueError("n_basis must be positive")

    def __call__(self, t: ArrayLike) -> NDArray:
        """Evaluate all basis functions, shape ``(N, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.vstack([self.evaluator(k, t) for k in range(1, self.n_basis + 1)])

    def tabulate(self, grid: TimeGrid) -> NDArray:
        key = grid.points.tobytes()
        if key not in self._cache:
            tab = self(grid.points)
            tab.setflags(write=False)
            self._cache[key] = tab
        return self._cache[key]

    def curve(self, k: int, grid: TimeGrid) -> SampledCurve:
        return SampledCurve(grid, self.tabulate(grid)[k - 1])

    def gram(self, grid: TimeGrid) -> NDArray:
        tab = self.tabulate(grid)
        return (tab * quad_weights(grid)) @ tab.T

    def orthonormality_error(self, grid: TimeGrid) -> float:
        return float(np.abs(self.gram(grid) - np.eye(self.n_basis)).max())


def sine_basis(n_basis: int, t_start: float = 0.0, t_end: float = 1.0) -> BasisSet:
    """``phi_k(t) = sqrt(2/T) sin(2 k pi (t - t_start) / T)``, ``k = 1..n_basis``."""
    span = t_end - t_start
    if span <= 0:
        raise ValueError("t_end must exceed t_start")
    scale = np.sqrt(2.0 / span)

    def evaluator(k, t):
        return scale * np.sin(2.0 * k * np.pi * (np.asarray(t) - t_start) / span)

    return BasisSet("sine", n_basis, evaluator, t_start, t_end)


def tabulated_basis(grid: TimeGrid, table: ArrayLike, check_tol: float | None = 1e-2) -> BasisSet:
    """Wrap user-supplied basis values ``table[k-1, j] = phi_k(t_j)``.

    Off-grid evaluation holds the left grid value. Orthonormality is checked
    only up to quadrature (``check_tol``; pass ``None`` to skip).
    """
    tab = _frozen(table)
    if tab.ndim != 2 or tab.shape[1] != len(grid):
        raise DimensionMismatch("table must have shape (N, len(grid))")

    def evaluator(k, t):
        idx = np.clip(np.searchsorted(grid.points, t, side="right") - 1, 0, len(grid) - 1)
        return tab[k - 1, idx]

    basis = BasisSet("custom-tabulated", tab.shape[0], evaluator, grid.t_start, grid.t_end)
    if check_tol is not None:
        err = basis.orthonormality_error(grid)
        if err > check_tol:
            raise ValueError(f"tabulated basis is not orthonormal on its grid (max error {err:.3g})")
    return basis


def _check_same_grid(a: TimeGrid, b: TimeGrid):
    if a != b:
        raise GridMismatch("curves are sampled on different grids")


def quad_inner(f: SampledCurve, g: SampledCurve) -> float:
    """Left-endpoint Riemann approximation of the L2 inner product."""
    _check_same_grid(f.grid, g.grid)
    return float(np.sum(f.values[:-1] * g.values[:-1] * np.diff(f.grid.points)))


def project_scores(system: CurveSystem, basis: BasisSet) -> tuple[NDArray, NDArray]:
    """Basis scores of one system.

    Returns
    -------
    zeta : ndarray, shape (N,)
        ``<Y, phi_k>``.
    xi : ndarray, shape (p, N)
        ``<X(j), phi_k>``.
    """
    _check_interval(system.grid, basis)
    tab = basis.tabulate(system.grid) * quad_weights(system.grid)
    coef = system.channel_values() @ tab.T
    return coef[0], coef[1:]


def project_panel(panel: CurvePanel, basis: BasisSet) -> ScorePanel:
    """Scores of every realization in a panel as a :class:`ScorePanel`."""
    _check_interval(panel.grid, basis)
    tab = basis.tabulate(panel.grid) * quad_weights(panel.grid)
    coef = panel.values @ tab.T  # (n, p+1, N)
    return ScorePanel(coef.reshape(panel.n, -1), panel.p, basis.n_basis)


def _check_interval(grid: TimeGrid, basis: BasisSet):
    if not (np.isclose(grid.t_start, basis.t_start) and np.isclose(grid.t_end, basis.t_end)):
        raise GridMismatch(
            f"basis lives on [{basis.t_start}, {basis.t_end}], grid on [{grid.t_start}, {grid.t_end}]"
        )


@dataclass(frozen=True, eq=False)
class AdaptivePartition:
    """Stopping-time partition of a grid at threshold ``delta``.

    ``indices`` are positions in ``grid.points``; the first is always 0 and
    the last always ``len(grid) - 1``.
    """

    grid: TimeGrid
    indices: NDArray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "indices", _frozen(self.indices, dtype=int))

    @property
    def times(self) -> NDArray:
        return self.grid.points[self.indices]

    @property
    def mesh(self) -> float:
        return float(np.diff(self.times).max())


def partition_masks(values: NDArray, delta: float) -> NDArray:
    """Vectorized stopping rule over a batch of realizations.

    Parameters
    ----------
    values : ndarray, shape (n, C, G)
        ``C`` tracked channels per realization on a ``G``-point grid.
    delta : float
        Threshold; a point is emitted at the first grid time where any channel
        has moved by at least ``delta`` since the previous partition point.

    Returns
    -------
    ndarray of bool, shape (n, G)
        ``True`` at partition points. Both endpoints are always included.
    """
    if not delta > 0:
        raise InvalidThreshold(f"delta must be positive, got {delta}")
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    n, _, G = values.shape
    mask = np.zeros((n, G), dtype=bool)
    mask[:, 0] = True
    ref = values[:, :, 0].copy()
    for j in range(1, G):
        hit = np.max(np.abs(values[:, :, j] - ref), axis=1) >= delta
        mask[hit, j] = True
        ref[hit] = values[hit, :, j]
    mask[:, -1] = True
    return mask


def adaptive_partition(channels, delta: float, grid: TimeGrid | None = None) -> AdaptivePartition:
    """Adaptive partition tracking one or more curves.

    ``channels`` may be a :class:`CurveSystem`, a sequence of curve systems
    or :class:`SampledCurve` objects (all tracked jointly), or a raw
    ``(C, G)`` array together with ``grid``.
    """
    if isinstance(channels, CurveSystem):
        channels = [channels]
    if isinstance(channels, np.ndarray):
        if grid is None:
            raise ValueError("grid is required for raw arrays")
        rows = np.atleast_2d(channels)
    else:
        rows = []
        for item in channels:
            if isinstance(item, CurveSystem):
                g, vals = item.grid, item.channel_values()
            else:
                g, vals = item.grid, item.values[None]
            if grid is None:
                grid = g
            _check_same_grid(grid, g)
            rows.append(vals)
        rows = np.vstack(rows)
    mask = partition_masks(rows[None], delta)[0]
    return AdaptivePartition(grid, np.flatnonzero(mask), delta)


def step_project_values(values: NDArray, mask: NDArray) -> NDArray:
    """Hold each value from its most recent partition point (forward fill).

    ``values`` has shape ``(n, C, G)`` and ``mask`` shape ``(n, G)``.
    """
    G = values.shape[-1]
    last = np.where(mask, np.arange(G), 0)
    last = np.maximum.accumulate(last, axis=-1)
    idx = np.broadcast_to(last[:, None, :], values.shape)
    return np.take_along_axis(values, idx, axis=-1)


def step_project(curve: SampledCurve, part: AdaptivePartition) -> SampledCurve:
    """Piecewise-constant projection of ``curve`` onto ``part``."""
    _check_same_grid(curve.grid, part.grid)
    mask = np.zeros(len(curve.grid), dtype=bool)
    mask[part.indices] = True
    vals = step_project_values(curve.values[None, None, :], mask[None])[0, 0]
    return SampledCurve(curve.grid, vals, "step")


def write_panel_csv(panel: CurvePanel, path) -> None:
    """Long-format CSV with columns ``realization, channel, t, value``."""
    names = ["Y"] + [f"X{j}" for j in range(1, panel.p + 1)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["realization", "channel", "t", "value"])
        for m in range(panel.n):
            for c, name in enumerate(names):
                for t, v in zip(panel.grid.points, panel.values[m, c]):
                    w.writerow([m, name, repr(float(t)), repr(float(v))])


def read_panel_csv(path, label: str = "observational") -> CurvePanel:
    """Inverse of :func:`write_panel_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["realization", "channel", "t", "value"]:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        rows = [(int(r["realization"]), r["channel"], float(r["t"]), float(r["value"])) for r in reader]
    if not rows:
        raise EmptyPanel(f"{path} holds no data rows")
    channels = sorted({r[1] for r in rows}, key=lambda s: (s != "Y", int(s[1:]) if s != "Y" else 0))
    times = np.array(sorted({r[2] for r in rows}))
    n = max(r[0] for r in rows) + 1
    values = np.full((n, len(channels), times.size), np.nan)
    cidx = {c: i for i, c in enumerate(channels)}
    for m, c, t, v in rows:
        values[m, cidx[c], np.searchsorted(times, t)] = v
    if np.isnan(values).any():
        raise GridMismatch("panel CSV does not cover a common grid for every realization")
    return CurvePanel(TimeGrid(times), values, label)
