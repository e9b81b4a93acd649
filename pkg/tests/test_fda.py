import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fwrisk import (
    AdaptivePartition,
    CurvePanel,
    CurveSystem,
    SampledCurve,
    TimeGrid,
    adaptive_partition,
    partition_masks,
    project_panel,
    project_scores,
    quad_inner,
    quad_weights,
    read_panel_csv,
    sine_basis,
    step_project,
    tabulated_basis,
    write_panel_csv,
)
from fwrisk.errors import DimensionMismatch, GridMismatch, InvalidThreshold


def curve(grid, values):
    return SampledCurve(grid, np.asarray(values, dtype=float))


def system(grid, y, *xs):
    return CurveSystem(curve(grid, y), tuple(curve(grid, x) for x in xs))


class TestTimeGrid:
    def test_uniform_endpoints(self):
        g = TimeGrid.uniform(5, 1.0, 3.0)
        assert g.t_start == 1.0 and g.t_end == 3.0 and g.span == 2.0
        np.testing.assert_allclose(g.points, [1.0, 1.5, 2.0, 2.5, 3.0])

    @pytest.mark.parametrize("points", [[0.0], [0.0, 0.0, 1.0], [1.0, 0.5], [[0.0, 1.0]]])
    def test_rejects_bad_points(self, points):
        with pytest.raises(ValueError):
            TimeGrid(points)

    def test_weights_are_left_riemann(self):
        g = TimeGrid([0.0, 0.1, 0.4, 1.0])
        np.testing.assert_allclose(quad_weights(g), [0.1, 0.3, 0.6, 0.0])

    def test_equality_by_points(self):
        assert TimeGrid.uniform(10) == TimeGrid.uniform(10)
        assert TimeGrid.uniform(10) != TimeGrid.uniform(11)


class TestSampledCurve:
    def test_length_mismatch(self, grid100):
        with pytest.raises(DimensionMismatch):
            SampledCurve(grid100, np.zeros(99))

    def test_non_finite(self, grid100):
        vals = np.zeros(100)
        vals[3] = np.nan
        with pytest.raises(ValueError):
            SampledCurve(grid100, vals)

    def test_immutable(self, grid100):
        c = SampledCurve(grid100, np.zeros(100))
        with pytest.raises(ValueError):
            c.values[0] = 1.0

    def test_step_and_linear_evaluation(self):
        g = TimeGrid([0.0, 1.0, 2.0])
        step = SampledCurve(g, [0.0, 2.0, 4.0])
        lin = SampledCurve(g, [0.0, 2.0, 4.0], "linear")
        assert step(0.5) == 0.0 and step(1.0) == 2.0
        assert lin(0.5) == pytest.approx(1.0)


class TestQuadInner:
    def test_orthonormal_pair(self, grid512):
        b = sine_basis(2)
        assert quad_inner(b.curve(1, grid512), b.curve(1, grid512)) == pytest.approx(1.0, abs=1e-2)
        assert quad_inner(b.curve(1, grid512), b.curve(2, grid512)) == pytest.approx(0.0, abs=1e-2)

    @pytest.mark.parametrize("k", range(1, 11))
    def test_constant_against_sine(self, grid512, k):
        b = sine_basis(10)
        one = curve(grid512, np.ones(512))
        assert quad_inner(one, b.curve(k, grid512)) == pytest.approx(0.0, abs=1e-2)

    def test_grid_mismatch(self, grid100, grid512):
        with pytest.raises(GridMismatch):
            quad_inner(curve(grid100, np.ones(100)), curve(grid512, np.ones(512)))

    @pytest.mark.parametrize("k", [1, 3, 7])
    def test_error_halves_when_grid_doubles(self, k):
        # int_0^1 t sqrt(2) sin(2 k pi t) dt = -sqrt(2) / (2 k pi)
        exact = -np.sqrt(2) / (2 * k * np.pi)
        b = sine_basis(k)
        errs = []
        for n_int in (64, 128, 256, 512):
            g = TimeGrid.uniform(n_int + 1)
            errs.append(abs(quad_inner(curve(g, g.points), b.curve(k, g)) - exact))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all(ratios >= 2.0 - 1e-6)


class TestBasis:
    @pytest.mark.parametrize("n_points,tol", [(100, 1e-2), (512, 1e-2), (1024, 1e-3)])
    def test_orthonormality(self, n_points, tol):
        assert sine_basis(16).orthonormality_error(TimeGrid.uniform(n_points)) <= tol

    def test_shifted_interval(self):
        b = sine_basis(5, 2.0, 4.0)
        assert b.orthonormality_error(TimeGrid.uniform(200, 2.0, 4.0)) <= 1e-10

    def test_tabulated_round_trip(self, grid100):
        b = sine_basis(4)
        tb = tabulated_basis(grid100, b.tabulate(grid100))
        np.testing.assert_array_equal(tb.tabulate(grid100), b.tabulate(grid100))

    def test_tabulated_rejects_non_orthonormal(self, grid100):
        with pytest.raises(ValueError):
            tabulated_basis(grid100, np.ones((2, 100)))


class TestProjectScores:
    def test_unit_coordinate(self, grid512):
        b = sine_basis(10)
        zeta, xi = project_scores(system(grid512, b.tabulate(grid512)[2], np.zeros(512)), b)
        np.testing.assert_allclose(zeta, np.eye(10)[2], atol=1e-2)
        np.testing.assert_allclose(xi, 0.0, atol=1e-12)

    def test_zero_curve(self, grid512, basis10):
        zeta, _ = project_scores(system(grid512, np.zeros(512), np.zeros(512)), basis10)
        assert np.all(zeta == 0)

    def test_mixture_against_fine_quadrature(self, grid512, basis10):
        tab = basis10.tabulate(grid512)
        zeta, _ = project_scores(system(grid512, 2 * tab[0] + 0.5 * tab[1], np.zeros(512)), basis10)
        # oracle: the same integrals on a 20001-point grid
        fine = TimeGrid.uniform(20001)
        ftab = basis10.tabulate(fine)
        y = 2 * ftab[0] + 0.5 * ftab[1]
        oracle = (ftab * quad_weights(fine)) @ y
        np.testing.assert_allclose(zeta, oracle, atol=1e-2)
        np.testing.assert_allclose(zeta[:3], [2.0, 0.5, 0.0], atol=1e-2)

    def test_interval_mismatch(self, grid100):
        with pytest.raises(GridMismatch):
            project_scores(system(grid100, np.zeros(100), np.zeros(100)), sine_basis(3, 0.0, 2.0))

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**16))
    def test_linearity(self, a, b, seed):
        grid = TimeGrid.uniform(64)
        basis = sine_basis(6)
        r = np.random.default_rng(seed)
        y1, y2, x = r.normal(size=(3, 64))
        s1 = project_scores(system(grid, y1, x), basis)[0]
        s2 = project_scores(system(grid, y2, x), basis)[0]
        s = project_scores(system(grid, a * y1 + b * y2, x), basis)[0]
        np.testing.assert_allclose(s, a * s1 + b * s2, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)


class TestAdaptivePartition:
    def test_constant_channels(self, grid100):
        part = adaptive_partition(system(grid100, np.ones(100), np.zeros(100)), 0.1)
        np.testing.assert_array_equal(part.times, [0.0, 1.0])

    def test_single_jump(self):
        grid = TimeGrid.uniform(101)
        delta = 0.3
        y = np.where(grid.points >= 0.5, 2 * delta, 0.0)
        part = adaptive_partition(system(grid, y, np.zeros(101)), delta)
        np.testing.assert_allclose(part.times, [0.0, 0.5, 1.0])
        # the step curve is reproduced exactly by its own partition
        c = curve(grid, y)
        np.testing.assert_array_equal(step_project(c, part).values, y)

    def test_threshold_above_range(self, grid100):
        y = np.sin(2 * np.pi * grid100.points)
        part = adaptive_partition(system(grid100, y, y), 5.0)
        np.testing.assert_array_equal(part.times, [0.0, 1.0])

    @pytest.mark.parametrize("delta", [0.0, -1.0])
    def test_invalid_threshold(self, grid100, delta):
        with pytest.raises(InvalidThreshold):
            adaptive_partition(system(grid100, np.zeros(100), np.zeros(100)), delta)

    def test_joint_tracking_of_two_systems(self):
        grid = TimeGrid.uniform(11)
        a = system(grid, np.where(grid.points >= 0.3, 1.0, 0.0), np.zeros(11))
        b = system(grid, np.zeros(11), np.where(grid.points >= 0.7, 1.0, 0.0))
        np.testing.assert_allclose(adaptive_partition([a, b], 0.5).times, [0.0, 0.3, 0.7, 1.0])

    def test_raw_array_needs_grid(self, grid100):
        with pytest.raises(ValueError):
            adaptive_partition(np.zeros((2, 100)), 0.1)


class TestStepProject:
    def test_full_grid_partition_is_identity(self, grid100):
        c = curve(grid100, np.cos(grid100.points))
        part = AdaptivePartition(grid100, np.arange(100), 1e-9)
        np.testing.assert_array_equal(step_project(c, part).values, c.values)

    def test_trivial_partition_is_constant(self, grid100):
        c = curve(grid100, np.cos(grid100.points) + 2)
        part = AdaptivePartition(grid100, [0, 99], 1.0)
        vals = step_project(c, part).values
        np.testing.assert_array_equal(vals[:-1], 3.0)

    def test_grid_mismatch(self, grid100, grid512):
        with pytest.raises(GridMismatch):
            step_project(curve(grid512, np.zeros(512)), AdaptivePartition(grid100, [0, 99], 1.0))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**20), delta=st.floats(0.01, 3.0), n_channels=st.integers(1, 4))
    def test_deviation_below_delta(self, seed, delta, n_channels):
        grid = TimeGrid.uniform(80)
        paths = np.cumsum(np.random.default_rng(seed).normal(scale=0.2, size=(n_channels, 80)), axis=1)
        part = adaptive_partition(paths, delta, grid)
        assert part.indices[0] == 0 and part.indices[-1] == 79
        for row in paths:
            proj = step_project(curve(grid, row), part).values
            assert np.max(np.abs(proj - row)) < delta

    def test_batched_masks_match_single(self):
        r = np.random.default_rng(0)
        vals = np.cumsum(r.normal(size=(5, 2, 50)), axis=2)
        masks = partition_masks(vals, 0.7)
        grid = TimeGrid.uniform(50)
        for m in range(5):
            np.testing.assert_array_equal(np.flatnonzero(masks[m]), adaptive_partition(vals[m], 0.7, grid).indices)


class TestPanels:
    def test_project_panel_matches_rows(self, grid100, basis10):
        r = np.random.default_rng(1)
        panel = CurvePanel(grid100, r.normal(size=(4, 3, 100)))
        scores = project_panel(panel, basis10)
        assert scores.values.shape == (4, 30)
        z, x = project_scores(panel.system(2), basis10)
        np.testing.assert_allclose(scores.target[2], z)
        np.testing.assert_allclose(scores.covariates[2], x.ravel())

    def test_csv_round_trip(self, tmp_path, grid100):
        r = np.random.default_rng(2)
        panel = CurvePanel(grid100, r.normal(size=(3, 3, 100)), "shifted")
        path = tmp_path / "panel.csv"
        write_panel_csv(panel, path)
        assert path.read_text(encoding="utf-8").splitlines()[0] == "realization,channel,t,value"
        back = read_panel_csv(path, "shifted")
        assert back.grid == panel.grid
        np.testing.assert_array_equal(back.values, panel.values)

    def test_subset_and_from_systems(self, grid100):
        systems = [system(grid100, np.full(100, m), np.zeros(100)) for m in range(5)]
        panel = CurvePanel.from_systems(systems)
        assert panel.n == 5 and panel.p == 1
        np.testing.assert_array_equal(panel.subset([4, 1]).values[:, 0, 0], [4.0, 1.0])
