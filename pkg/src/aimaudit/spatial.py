"""Local spatial autocorrelation of county mismatch rates.

Spatial weights come from an undirected adjacency file and are
row-standardized.  Local Moran's I per county uses the all-units
variance denominator (m2 = sum((x - xbar)^2) / n); significance comes
from conditional permutation (the focal value stays put, the rest are
permuted) with pseudo_p = (exceedances + 1) / (n_perm + 1), where a
permutation exceeds when it is at least as extreme as the observed
statistic in either direction.  Counting only the tail matching the
observed sign would roughly double the false-positive rate under
exchangeable data (the tail would be chosen after peeking), so both
extreme kinds enter the count and the pseudo p-values stay calibrated.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_fraction

_ROW_SUM_TOL = 1e-12


class SpatialWeightsError(ValueError):
    """Adjacency input failed validation."""


class Cluster(str, Enum):
    HIGH_HIGH = "High-High"
    LOW_LOW = "Low-Low"
    LOW_HIGH = "Low-High"
    HIGH_LOW = "High-Low"
    NOT_SIGNIFICANT = "Not-Significant"
    ISOLATE = "Isolate"


def classify_cluster(significant: bool, deviation: float, lag_deviation: float) -> Cluster:
    """Label from (significance, sign of deviation, sign of lag deviation).

    Zero deviation or zero lag has no quadrant, so it can never be a
    cluster regardless of the pseudo p-value.
    """
    if not significant or deviation == 0.0 or lag_deviation == 0.0:
        return Cluster.NOT_SIGNIFICANT
    if deviation > 0.0:
        return Cluster.HIGH_HIGH if lag_deviation > 0.0 else Cluster.HIGH_LOW
    return Cluster.LOW_HIGH if lag_deviation > 0.0 else Cluster.LOW_LOW


@dataclass(frozen=True)
class SpatialWeights:
    """Row-standardized contiguity weights over an ordered unit list."""

    units: tuple
    neighbors: dict  # unit -> tuple of neighbor units
    weights: dict  # unit -> tuple of row-standardized weights

    def __post_init__(self):
        index = {u: i for i, u in enumerate(self.units)}
        if len(index) != len(self.units):
            raise SpatialWeightsError("duplicate unit names")
        for unit in self.units:
            neigh = self.neighbors.get(unit, ())
            wrow = self.weights.get(unit, ())
            if len(neigh) != len(wrow):
                raise SpatialWeightsError(f"{unit}: neighbor/weight length mismatch")
            if unit in neigh:
                raise SpatialWeightsError(f"{unit}: self-neighbor")
            for other in neigh:
                if other not in index:
                    raise SpatialWeightsError(f"{unit}: unknown neighbor {other}")
                if unit not in self.neighbors.get(other, ()):
                    raise SpatialWeightsError(
                        f"asymmetric pair ({unit}, {other}): reverse edge missing"
                    )
            if neigh:
                total = sum(wrow)
                if abs(total - 1.0) > _ROW_SUM_TOL:
                    raise SpatialWeightsError(f"{unit}: row sum {total} != 1")

    @property
    def isolates(self) -> frozenset:
        return frozenset(u for u in self.units if not self.neighbors.get(u))

    @classmethod
    def from_pairs(cls, pairs, units=None) -> "SpatialWeights":
        """Build row-standardized weights from undirected edges.

        `units` extends the universe beyond the names appearing in the
        edges (extra units become isolates).  Self-loops are fatal.
        """
        adjacency: dict = {}
        names = set(units or ())
        for a, b in pairs:
            if a == b:
                raise SpatialWeightsError(f"self-loop on {a}")
            names.update((a, b))
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)
        ordered = tuple(sorted(names))
        neighbors = {}
        weights = {}
        for unit in ordered:
            neigh = tuple(sorted(adjacency.get(unit, ())))
            neighbors[unit] = neigh
            weights[unit] = tuple([1.0 / len(neigh)] * len(neigh)) if neigh else ()
        return cls(units=ordered, neighbors=neighbors, weights=weights)

    def subset(self, keep) -> "SpatialWeights":
        """Induced subgraph on `keep`, with rows re-standardized."""
        keep_set = set(keep)
        pairs = []
        for unit in self.units:
            if unit not in keep_set:
                continue
            for other in self.neighbors.get(unit, ()):
                if other in keep_set and unit < other:
                    pairs.append((unit, other))
        return SpatialWeights.from_pairs(pairs, units=[u for u in self.units if u in keep_set])


def read_adjacency(path):
    """Parse an adjacency file into (edge pairs, declared units).

    Each line is either `unit_a,unit_b` (an undirected edge) or a single
    `unit` name declaring a node with no edges (an isolate).  If the file
    ever lists an edge in both orientations it is treated as a directed
    listing and every edge must then appear in both orientations.
    """
    pairs = []
    singles = []
    seen = set()
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        for lineno, row in enumerate(reader, 1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells or cells[0].startswith("#"):
                continue
            if len(cells) == 1:
                singles.append(cells[0])
                continue
            if len(cells) != 2:
                raise SpatialWeightsError(f"{path}:{lineno}: expected 1 or 2 fields")
            a, b = cells
            if a == b:
                raise SpatialWeightsError(f"{path}:{lineno}: self-loop on {a}")
            if (a, b) in seen:
                raise SpatialWeightsError(f"{path}:{lineno}: duplicate edge ({a}, {b})")
            seen.add((a, b))
            pairs.append((a, b))
    both = {(a, b) for a, b in pairs if (b, a) in seen}
    if both and len(both) != len(pairs):
        missing = sorted((a, b) for a, b in pairs if (b, a) not in seen)[:5]
        raise SpatialWeightsError(
            f"{path}: mixed directed/undirected listing; asymmetric pairs e.g. {missing}"
        )
    unique = sorted({tuple(sorted(p)) for p in pairs})
    return unique, singles


def build_weights(path, units=None) -> SpatialWeights:
    pairs, singles = read_adjacency(path)
    extra = list(singles) + list(units or ())
    return SpatialWeights.from_pairs(pairs, units=extra)


def write_adjacency(pairs, path, isolates=()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for a, b in pairs:
            writer.writerow([a, b])
        for unit in isolates:
            writer.writerow([unit])


def grid_adjacency(names, n_cols: int) -> list:
    """Rook-contiguity edges laying `names` row-major onto a grid.

    Used to give synthetic corpora a plausible contiguity structure
    without parsing any real geometry.
    """
    if n_cols < 1:
        raise ValueError("n_cols must be positive")
    pairs = []
    for idx, name in enumerate(names):
        row, col = divmod(idx, n_cols)
        if col + 1 < n_cols and idx + 1 < len(names):
            pairs.append((name, names[idx + 1]))
        if idx + n_cols < len(names):
            pairs.append((name, names[idx + n_cols]))
    return pairs


class LocalMoran(BaseEstimator):
    """Per-unit Moran statistic with conditional-permutation inference.

    Parameters
    ----------
    weights : SpatialWeights
    n_perm : int
        Conditional permutations per unit (>= 99).
    alpha : float
        Pseudo p-value cutoff for cluster labeling.
    seed : int
        Base seed; each unit gets an independent spawned substream, so
        results do not depend on evaluation order or thread count.
    n_threads : int
        Worker threads for the permutation loop.
    """

    def __init__(
        self,
        weights: SpatialWeights,
        n_perm: int = 999,
        alpha: float = 0.05,
        seed: int = 0,
        n_threads: int = 1,
    ):
        self.weights = weights
        self.n_perm = n_perm
        self.alpha = alpha
        self.seed = seed
        self.n_threads = n_threads

    def fit(self, x: dict):
        """x maps unit -> rate; must cover every non-isolate unit."""
        w = self.weights
        if self.n_perm < 99:
            raise ValueError("n_perm must be >= 99")
        check_fraction(self.alpha, "alpha", inclusive=False)
        missing = [u for u in w.units if u not in x and u not in w.isolates]
        if missing:
            raise ValueError(f"rates missing for non-isolate units: {missing[:5]}")
        units = [u for u in w.units if u in x]
        if len(units) < 3:
            raise ValueError(f"need at least 3 units with rates, got {len(units)}")

        values = np.array([float(x[u]) for u in units])
        n = len(units)
        index = {u: i for i, u in enumerate(units)}
        mean = values.mean()
        z = values - mean
        m2 = float(z @ z) / n

        local_i = np.zeros(n)
        lag = np.zeros(n)
        pseudo_p = np.ones(n)
        clusters = [Cluster.NOT_SIGNIFICANT] * n
        isolate_mask = np.array([u in w.isolates for u in units])

        if m2 > 0.0:
            for i, unit in enumerate(units):
                if isolate_mask[i]:
                    continue
                neigh = w.neighbors[unit]
                wrow = np.array(w.weights[unit])
                lag[i] = float(wrow @ z[[index[v] for v in neigh]])
                local_i[i] = z[i] / m2 * lag[i]

            streams = np.random.SeedSequence(self.seed).spawn(n)

            def _one(i: int):
                if isolate_mask[i]:
                    return 1.0
                unit = units[i]
                k = len(w.neighbors[unit])
                wrow = np.array(w.weights[unit])
                others = np.delete(z, i)
                rng = np.random.default_rng(streams[i])
                # each row of `order` is a uniformly random ordered
                # k-subset of the other units
                order = np.argsort(rng.random((self.n_perm, others.shape[0])), axis=1)[:, :k]
                lag_perm = others[order] @ wrow
                stat_perm = z[i] / m2 * lag_perm
                exceed = int(np.sum(np.abs(stat_perm) >= abs(local_i[i])))
                return (exceed + 1) / (self.n_perm + 1)

            if self.n_threads > 1:
                with ThreadPoolExecutor(max_workers=self.n_threads) as pool:
                    pseudo_p = np.array(list(pool.map(_one, range(n))))
            else:
                pseudo_p = np.array([_one(i) for i in range(n)])

        for i in range(n):
            if isolate_mask[i]:
                clusters[i] = Cluster.ISOLATE
            elif m2 > 0.0:
                clusters[i] = classify_cluster(pseudo_p[i] <= self.alpha, z[i], lag[i])

        self.units_ = tuple(units)
        self.local_i_ = local_i
        self.lag_ = lag
        self.pseudo_p_ = pseudo_p
        self.clusters_ = tuple(clusters)
        self.mean_ = mean
        self.m2_ = m2
        return self

    def results(self) -> list:
        """Rows of (unit, cluster, pseudo_p, local_i) in unit order."""
        check_fitted(self, "units_")
        return [
            (unit, self.clusters_[i], float(self.pseudo_p_[i]), float(self.local_i_[i]))
            for i, unit in enumerate(self.units_)
        ]

    def cluster_map(self) -> dict:
        check_fitted(self, "units_")
        return {unit: self.clusters_[i] for i, unit in enumerate(self.units_)}
