import numpy as np
import pytest

from descry import (
    ConditionalSampler, Dataset, FeatureSpec, Phenomenon, build_grid,
    conditional_groups, conditional_sample, sample, support_check,
)
from descry.errors import EmptyNeighborhood
from descry.samplers import MIN_GROUP_SIZE, default_band


def integer_grade_dataset(k=400, seed=0):
    rng = np.random.default_rng(seed)
    grades = rng.integers(0, 21, size=k)
    other = rng.normal(0, 1, size=k)
    return Dataset(features=[FeatureSpec(name="grade", kind="integer"),
                             FeatureSpec(name="other", kind="numeric")],
                   target=FeatureSpec(name="y", kind="numeric"),
                   rows=np.column_stack([grades, other]),
                   targets=grades + other, provenance="observed")


class TestBuildGrid:
    def test_unique_values_branch(self):
        d = integer_grade_dataset(k=2000)
        grid = build_grid(d, "grade", max_points=25)
        assert grid.strategy == "unique_values"
        assert len(grid.points) == 21

    def test_quantile_branch(self):
        rng = np.random.default_rng(1)
        values = rng.normal(0, 1, size=10**4)
        d = Dataset(features=[FeatureSpec(name="x", kind="numeric")],
                    target=FeatureSpec(name="y", kind="numeric"),
                    rows=values[:, None], targets=values, provenance="observed")
        grid = build_grid(d, "x", max_points=20)
        assert grid.strategy == "quantile"
        assert len(grid.points) == 20
        assert list(grid.points) == sorted(grid.points)

    def test_constant_column(self):
        d = Dataset(features=[FeatureSpec(name="x", kind="numeric")],
                    target=FeatureSpec(name="y", kind="numeric"),
                    rows=[[5.0]] * 10, targets=[0.0] * 10, provenance="observed")
        grid = build_grid(d, "x", max_points=20)
        assert grid.points == (5.0,)


class TestConditionalGroups:
    def test_exact_match_membership(self):
        d = integer_grade_dataset()
        grid = build_grid(d, "grade", max_points=25)
        groups, dropped = conditional_groups(d, grid, band=0)
        col = d.numeric_column(0)
        for g in groups:
            assert all(col[i] == g.grid_point for i in g.member_row_indices)
            assert g.weight == pytest.approx(len(g.member_row_indices) / d.k)
        covered = sum(len(g.member_row_indices) for g in groups)
        covered += sum(rep["members"] for rep in dropped)
        assert covered == d.k

    def test_degenerate_band_catches_everything(self):
        d = integer_grade_dataset()
        grid = build_grid(d, "grade", max_points=25)
        groups, _ = conditional_groups(d, grid, band=100)
        assert all(len(g.member_row_indices) == d.k for g in groups)

    def test_small_groups_dropped_and_reported(self):
        rows = [[1, 0.0]] * 10 + [[2, 0.0]] * 3   # group at 2 is below minimum
        d = Dataset(features=[FeatureSpec(name="g", kind="integer"),
                              FeatureSpec(name="o", kind="numeric")],
                    target=FeatureSpec(name="y", kind="numeric"),
                    rows=rows, targets=[0.0] * 13, provenance="observed")
        grid = build_grid(d, "g", max_points=10)
        groups, dropped = conditional_groups(d, grid)
        assert [g.grid_point for g in groups] == [1.0]
        assert dropped == [{"grid_point": 2.0, "members": 3}]
        assert 3 < MIN_GROUP_SIZE

    def test_default_band_is_half_median_gap(self, benchmark_phenomenon):
        d = sample(benchmark_phenomenon, 5000, seed=2)
        grid = build_grid(d, "x1", max_points=10)
        gaps = np.diff(np.asarray(grid.points))
        assert default_band(d, grid) == pytest.approx(np.median(gaps) / 2)


class TestConditionalSample:
    def test_deterministic_dependence(self):
        # x2 equals x1 exactly in the source
        values = np.arange(10, dtype=float)
        d = Dataset(features=[FeatureSpec(name="x1", kind="integer"),
                              FeatureSpec(name="x2", kind="integer")],
                    target=FeatureSpec(name="y", kind="numeric"),
                    rows=np.column_stack([values, values]), targets=values,
                    provenance="observed")
        s = ConditionalSampler(source=d, method="grouping")
        out = conditional_sample(s, (0, 5.0), count=20, seed=1)
        assert np.all(out[:, 0] == 5.0)
        assert np.all(out[:, 1] == 5.0)

    def test_independent_features_mean(self):
        p = Phenomenon(kind="nonlinear_independent",
                       marginals=[{"family": "normal", "mu": 0.0, "sd": 1.0},
                                  {"family": "normal", "mu": 2.0, "sd": 1.0}],
                       terms=[{"coef": 1.0, "powers": {0: 1}}], noise_sd=0.1)
        d = sample(p, 20000, seed=3)
        s = ConditionalSampler(source=d, method="knn", knn_k=500)
        out = conditional_sample(s, (0, 0.0), count=10**4, seed=4)
        se = out[:, 1].std(ddof=1) / np.sqrt(out.shape[0])
        assert abs(out[:, 1].mean() - 2.0) < 4 * se

    def test_off_support_query(self):
        d = integer_grade_dataset()
        for method in ("grouping", "knn"):
            s = ConditionalSampler(source=d, method=method, knn_k=10)
            with pytest.raises(EmptyNeighborhood):
                conditional_sample(s, (0, 1000.0), count=5, seed=0)

    def test_rest_vectors_are_observed_rows(self):
        d = integer_grade_dataset()
        s = ConditionalSampler(source=d, method="grouping")
        out = conditional_sample(s, (0, 7.0), count=50, seed=5)
        observed_rest = set(d.numeric_column(1)[d.numeric_column(0) == 7.0])
        assert set(out[:, 1]).issubset(observed_rest)
        assert np.all(out[:, 0] == 7.0)


class TestSupportCheck:
    def test_training_rows_pass(self, benchmark_phenomenon):
        d = sample(benchmark_phenomenon, 500, seed=6)
        inside = [support_check(d, list(row)) for row in d.rows[:50]]
        # rows in the extreme marginal tails legitimately fail the band test
        assert np.mean(inside) > 0.9
        median_row = [float(np.median(d.numeric_column(0))),
                      float(np.median(d.numeric_column(1)))]
        assert support_check(d, median_row)

    def test_far_point_fails(self, benchmark_phenomenon):
        d = sample(benchmark_phenomenon, 500, seed=6)
        extreme = [10 * d.numeric_column(0).max(), 10 * d.numeric_column(1).max()]
        assert not support_check(d, extreme)

    def test_fresh_sample_acceptance_rate(self, benchmark_phenomenon):
        d = sample(benchmark_phenomenon, 4000, seed=7)
        fresh = sample(benchmark_phenomenon, 1000, seed=8)
        accepted = sum(support_check(d, list(row), quantile_band=0.005)
                       for row in fresh.rows)
        assert accepted >= 950

    def test_categorical_membership(self):
        features = [FeatureSpec(name="c", kind="categorical", categories=("a", "b", "z"))]
        rows = [["a"]] * 10 + [["b"]] * 10
        d = Dataset(features=features, target=FeatureSpec(name="y", kind="numeric"),
                    rows=rows, targets=[0.0] * 20, provenance="observed")
        assert support_check(d, ["a"])
        assert not support_check(d, ["z"])  # declared but never observed
