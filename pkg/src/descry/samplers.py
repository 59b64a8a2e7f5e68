"""Operational stand-ins for the conditional feature distribution.

Everything a descriptor knows about P(X_rest | X_p) comes from here: grid
construction over a feature, grouping of evaluation rows by grid point,
kNN-based conditional sampling, and a support check that keeps every query
on-distribution. Samplers never fabricate feature combinations: sampled
X_rest vectors are always taken from observed rows.
"""

import threading
from dataclasses import dataclass

import numpy as np

from .errors import EmptyNeighborhood, UnknownFeature
from .models import gower_distances, feature_ranges
from ._util import derive_seed

MIN_GROUP_SIZE = 5
SELF_DISTANCE_SAMPLE = 1000


@dataclass(frozen=True)
class Grid:
    """Evaluation points along one feature."""

    feature_index: int
    points: tuple
    strategy: str

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise ValueError("grid needs at least one point")
        if all(isinstance(p, (int, float)) for p in pts):
            pts = tuple(float(p) for p in pts)
            if any(b <= a for a, b in zip(pts, pts[1:])):
                raise ValueError("numeric grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)
        if self.strategy not in ("unique_values", "quantile"):
            raise ValueError(f"unknown grid strategy {self.strategy!r}")

    @property
    def is_numeric(self):
        return all(isinstance(p, float) for p in self.points)


@dataclass(frozen=True)
class ConditionalGroup:
    grid_point: object
    member_row_indices: tuple
    weight: float


def build_grid(d, feature, max_points=20):
    """Unique values when few enough, otherwise quantiles at equispaced
    probability levels (midpoint rule, so extreme tails are avoided)."""
    if max_points < 2:
        raise ValueError("max_points must be at least 2")
    j = d.feature_index(feature) if isinstance(feature, str) else int(feature)
    if not (0 <= j < d.n):
        raise UnknownFeature(f"feature index {j} out of range", operation="build_grid")
    spec = d.features[j]
    if spec.kind == "categorical":
        seen = set(d.column(j))
        points = tuple(c for c in spec.categories if c in seen)
        return Grid(feature_index=j, points=points, strategy="unique_values")
    col = d.numeric_column(j)
    distinct = np.unique(col)
    if distinct.size <= max_points:
        return Grid(feature_index=j, points=tuple(distinct), strategy="unique_values")
    levels = (np.arange(max_points) + 0.5) / max_points
    points = np.unique(np.quantile(col, levels))
    return Grid(feature_index=j, points=tuple(points), strategy="quantile")


def default_band(d, grid):
    """0 for integer/categorical features; half the median gap between
    adjacent grid points for continuous ones."""
    spec = d.features[grid.feature_index]
    if spec.kind in ("integer", "categorical") or len(grid.points) < 2:
        return 0.0
    gaps = np.diff(np.asarray(grid.points, dtype=float))
    return float(np.median(gaps) / 2.0)


def conditional_groups(d, grid, band=None):
    """Group evaluation rows by grid point.

    Numeric membership is |x_p - i| <= band; categorical and integer grids
    match exactly when band is 0. Groups smaller than MIN_GROUP_SIZE are
    dropped and returned separately so sparsity is never silent.

    Returns (groups, dropped) where dropped lists {"grid_point", "members"}.
    """
    if band is None:
        band = default_band(d, grid)
    if band < 0:
        raise ValueError("band must be non-negative")
    j = grid.feature_index
    spec = d.features[j]
    groups, dropped = [], []
    total = d.k
    if spec.kind == "categorical":
        col = d.column(j)
        for point in grid.points:
            members = np.flatnonzero(np.array([v == point for v in col]))
            _classify(groups, dropped, point, members, total)
    else:
        col = d.numeric_column(j)
        for point in grid.points:
            if band == 0:
                members = np.flatnonzero(col == point)
            else:
                members = np.flatnonzero(np.abs(col - point) <= band)
            _classify(groups, dropped, point, members, total)
    return groups, dropped


def _classify(groups, dropped, point, members, total):
    if members.size >= MIN_GROUP_SIZE:
        groups.append(ConditionalGroup(grid_point=point,
                                       member_row_indices=tuple(int(i) for i in members),
                                       weight=members.size / total))
    else:
        dropped.append({"grid_point": point, "members": int(members.size)})


@dataclass(frozen=True)
class ConditionalSampler:
    """Finite-data surrogate for P(X_rest | X_p)."""

    source: object
    method: str = "grouping"
    knn_k: int = 50
    distance: str = "euclidean_standardized"

    def __post_init__(self):
        if self.method not in ("grouping", "knn"):
            raise ValueError(f"unknown sampler method {self.method!r}")
        if self.method == "knn" and not (1 <= self.knn_k <= self.source.k):
            raise ValueError("knn_k must be in [1, source size]")


def _grouping_band(d, j):
    spec = d.features[j]
    if spec.kind in ("integer", "categorical"):
        return 0.0
    distinct = np.unique(d.numeric_column(j))
    if distinct.size < 2:
        return 0.0
    return float(np.median(np.diff(distinct)) / 2.0)


def conditional_sample(s, fixed, count, seed):
    """Draw `count` full feature vectors with the fixed coordinate pinned.

    grouping: resample X_rest from rows whose conditioned feature matches.
    knn: resample X_rest from the knn_k rows nearest in the conditioned
    feature. Queries outside the observed support raise EmptyNeighborhood.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    j, value = fixed
    d = s.source
    spec = d.features[j]
    if spec.kind == "categorical":
        pool = np.flatnonzero(np.array([v == value for v in d.column(j)]))
    else:
        col = d.numeric_column(j)
        value = float(value)
        if s.method == "grouping":
            band = _grouping_band(d, j)
            pool = np.flatnonzero(np.abs(col - value) <= band) if band > 0 \
                else np.flatnonzero(col == value)
        else:
            if value < col.min() or value > col.max():
                pool = np.array([], dtype=int)
            else:
                order = np.argsort(np.abs(col - value), kind="stable")
                pool = order[:s.knn_k]
    if pool.size == 0:
        raise EmptyNeighborhood(
            f"no source rows support {d.features[j].name} = {value!r}",
            operation="conditional_sample")
    rng = np.random.default_rng(derive_seed(seed, "conditional-sample", j, repr(value)))
    picks = pool[rng.integers(0, pool.size, size=count)]
    rows = np.array(d.rows[picks], dtype=d.rows.dtype, copy=True)
    rows[:, j] = value
    return rows


# -- support checking ---------------------------------------------------------


class SupportChecker:
    """Operational proxy for P(X = x) > 0: the point must sit inside every
    per-feature empirical [q, 1-q] band AND within the dataset's typical
    nearest-neighbor (Gower) distance. Positive density is unobservable;
    this conjunction is the weakest testable stand-in."""

    def __init__(self, d, quantile_band=0.005):
        self.d = d
        self.quantile_band = float(quantile_band)
        self.ranges = feature_ranges(d.rows, d.features)
        self.bounds = []
        for idx, spec in enumerate(d.features):
            if spec.kind == "categorical":
                self.bounds.append(set(d.column(idx)))
            else:
                col = d.numeric_column(idx)
                lo, hi = np.quantile(col, [self.quantile_band, 1.0 - self.quantile_band])
                self.bounds.append((float(lo), float(hi)))
        self.nn_threshold = self._self_distance_percentile()

    def _self_distance_percentile(self):
        k = self.d.k
        if k < 2:
            return 0.0
        rng = np.random.default_rng(derive_seed(0, "support-self", self.d.fingerprint))
        queries = np.arange(k) if k <= SELF_DISTANCE_SAMPLE \
            else np.sort(rng.choice(k, size=SELF_DISTANCE_SAMPLE, replace=False))
        nearest = np.empty(len(queries))
        for qi, row_idx in enumerate(queries):
            dist = gower_distances(self.d.rows, self.d.rows[row_idx],
                                   self.d.features, self.ranges)
            dist[row_idx] = np.inf
            nearest[qi] = dist.min()
        return float(np.quantile(nearest, 0.99))

    def check(self, x):
        for idx, spec in enumerate(self.d.features):
            if spec.kind == "categorical":
                if x[idx] not in self.bounds[idx]:
                    return False
            else:
                lo, hi = self.bounds[idx]
                if not (lo <= float(x[idx]) <= hi):
                    return False
        dist = gower_distances(self.d.rows, x, self.d.features, self.ranges)
        return bool(dist.min() <= self.nn_threshold)


_checker_cache = {}
_checker_lock = threading.Lock()


def get_support_checker(d, quantile_band=0.005):
    key = (d.fingerprint, float(quantile_band))
    with _checker_lock:
        checker = _checker_cache.get(key)
    if checker is None:
        checker = SupportChecker(d, quantile_band)
        with _checker_lock:
            _checker_cache.setdefault(key, checker)
            checker = _checker_cache[key]
    return checker


def support_check(d, x, quantile_band=0.005):
    """True iff x passes the quantile-band and nearest-neighbor tests."""
    return get_support_checker(d, quantile_band).check(list(x))
