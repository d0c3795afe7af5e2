"""Spatial weights and Local Moran tests against a straight-loop oracle."""

import math
import random

import numpy as np
import pytest

from aimaudit.spatial import (
    Cluster,
    LocalMoran,
    SpatialWeights,
    SpatialWeightsError,
    build_weights,
    classify_cluster,
    grid_adjacency,
    read_adjacency,
    write_adjacency,
)
from aimaudit.synth import iowa_counties


def brute_local_moran(values, neighbor_lists, weight_lists):
    """Independent straight-loop implementation of the statistic."""
    n = len(values)
    mean = sum(values) / n
    m2 = sum((v - mean) ** 2 for v in values) / n
    out = []
    for i in range(n):
        if m2 == 0.0:
            out.append(0.0)
            continue
        lag = 0.0
        for j, w in zip(neighbor_lists[i], weight_lists[i]):
            lag += w * (values[j] - mean)
        out.append((values[i] - mean) / m2 * lag)
    return out


def ring(n):
    names = [f"u{i}" for i in range(n)]
    pairs = [(names[i], names[(i + 1) % n]) for i in range(n)]
    return names, SpatialWeights.from_pairs(pairs)


class TestWeights:
    def test_ring_rows(self):
        names, w = ring(4)
        for unit in names:
            assert len(w.neighbors[unit]) == 2
            assert w.weights[unit] == (0.5, 0.5)

    def test_isolate_flagged(self):
        w = SpatialWeights.from_pairs([("a", "b")], units=["a", "b", "lonely"])
        assert "lonely" in w.isolates
        assert w.neighbors["lonely"] == ()

    def test_self_loop_fatal(self):
        with pytest.raises(SpatialWeightsError, match="self-loop"):
            SpatialWeights.from_pairs([("a", "a")])

    def test_asymmetric_construction_fatal(self):
        with pytest.raises(SpatialWeightsError, match="asymmetric"):
            SpatialWeights(
                units=("a", "b"),
                neighbors={"a": ("b",), "b": ()},
                weights={"a": (1.0,), "b": ()},
            )

    def test_row_sums_one(self):
        rng = random.Random(3)
        names = [f"n{i}" for i in range(30)]
        pairs = set()
        for _ in range(60):
            a, b = rng.sample(names, 2)
            pairs.add((min(a, b), max(a, b)))
        w = SpatialWeights.from_pairs(sorted(pairs), units=names)
        for unit in w.units:
            if w.neighbors[unit]:
                assert abs(sum(w.weights[unit]) - 1.0) <= 1e-12

    def test_99_county_grid_fixture(self, tmp_path):
        counties = sorted(iowa_counties())
        pairs = grid_adjacency(counties, n_cols=11)
        path = tmp_path / "adjacency.csv"
        write_adjacency(pairs, path)
        w = build_weights(path, units=counties)
        assert len(w.units) == 99
        assert not w.isolates
        # fixture checked against its own edge list
        edge_set = {frozenset(p) for p in pairs}
        for unit in w.units:
            for other in w.neighbors[unit]:
                assert frozenset((unit, other)) in edge_set
            assert abs(sum(w.weights[unit]) - 1.0) <= 1e-12
        assert sum(len(w.neighbors[u]) for u in w.units) == 2 * len(pairs)

    def test_adjacency_file_isolate_lines(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("a,b\nlonely\n", encoding="utf-8")
        w = build_weights(path)
        assert "lonely" in w.isolates

    def test_adjacency_self_loop_fatal(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("a,a\n", encoding="utf-8")
        with pytest.raises(SpatialWeightsError, match="self-loop"):
            build_weights(path)

    def test_mixed_directed_listing_fatal(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("a,b\nb,a\nb,c\n", encoding="utf-8")
        with pytest.raises(SpatialWeightsError, match="asymmetric"):
            read_adjacency(path)

    def test_fully_directed_listing_ok(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("a,b\nb,a\nb,c\nc,b\n", encoding="utf-8")
        pairs, _ = read_adjacency(path)
        assert pairs == [("a", "b"), ("b", "c")]

    def test_duplicate_edge_fatal(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("a,b\na,b\n", encoding="utf-8")
        with pytest.raises(SpatialWeightsError, match="duplicate"):
            read_adjacency(path)

    def test_subset_restandardizes(self):
        names, w = ring(5)
        sub = w.subset(names[:3])  # path u0-u1-u2 (u0-u4 edge dropped)
        assert sub.weights["u1"] == (0.5, 0.5)
        assert sub.weights["u0"] == (1.0,)
        assert sub.units == ("u0", "u1", "u2")


class TestLocalMoran:
    def test_constant_field(self):
        names, w = ring(6)
        x = {u: 0.25 for u in names}
        lm = LocalMoran(w, n_perm=99, seed=1).fit(x)
        assert np.all(lm.local_i_ == 0.0)
        assert all(c is Cluster.NOT_SIGNIFICANT for c in lm.clusters_)

    def test_ring_matches_brute_force(self):
        names, w = ring(4)
        x = {u: float(i + 1) for i, u in enumerate(names)}
        lm = LocalMoran(w, n_perm=99, seed=2).fit(x)
        values = [x[u] for u in lm.units_]
        index = {u: i for i, u in enumerate(lm.units_)}
        neighbor_lists = [[index[v] for v in w.neighbors[u]] for u in lm.units_]
        weight_lists = [list(w.weights[u]) for u in lm.units_]
        expected = brute_local_moran(values, neighbor_lists, weight_lists)
        assert np.allclose(lm.local_i_, expected, atol=1e-12, rtol=0)

    def test_random_instances_match_brute_force(self):
        rng = random.Random(7)
        for trial in range(25):
            n = rng.randrange(3, 13)
            names = [f"u{i}" for i in range(n)]
            pairs = {(names[i], names[(i + 1) % n]) for i in range(n)}
            for _ in range(rng.randrange(0, n)):
                a, b = rng.sample(names, 2)
                pairs.add((min(a, b), max(a, b)))
            w = SpatialWeights.from_pairs(sorted(pairs))
            x = {u: rng.random() for u in names}
            lm = LocalMoran(w, n_perm=99, seed=trial).fit(x)
            index = {u: i for i, u in enumerate(lm.units_)}
            values = [x[u] for u in lm.units_]
            expected = brute_local_moran(
                values,
                [[index[v] for v in w.neighbors[u]] for u in lm.units_],
                [list(w.weights[u]) for u in lm.units_],
            )
            assert np.allclose(lm.local_i_, expected, atol=1e-12, rtol=0)

    def test_translation_and_scale_invariance(self):
        rng = random.Random(5)
        names = [f"u{i}" for i in range(12)]
        pairs = [(names[i], names[(i + 1) % 12]) for i in range(12)]
        w = SpatialWeights.from_pairs(pairs)
        x = {u: rng.random() for u in names}
        base = LocalMoran(w, n_perm=99, seed=3).fit(x).local_i_
        shifted = LocalMoran(w, n_perm=99, seed=3).fit({u: v + 17.5 for u, v in x.items()})
        scaled = LocalMoran(w, n_perm=99, seed=3).fit({u: v * 42.0 for u, v in x.items()})
        assert np.allclose(shifted.local_i_, base, rtol=1e-10, atol=1e-12)
        assert np.allclose(scaled.local_i_, base, rtol=1e-10, atol=1e-12)

    def test_cluster_rules_exhaustive(self):
        cases = {
            (True, 1.0, 1.0): Cluster.HIGH_HIGH,
            (True, 1.0, -1.0): Cluster.HIGH_LOW,
            (True, -1.0, 1.0): Cluster.LOW_HIGH,
            (True, -1.0, -1.0): Cluster.LOW_LOW,
            (False, 1.0, 1.0): Cluster.NOT_SIGNIFICANT,
            (False, 1.0, -1.0): Cluster.NOT_SIGNIFICANT,
            (False, -1.0, 1.0): Cluster.NOT_SIGNIFICANT,
            (False, -1.0, -1.0): Cluster.NOT_SIGNIFICANT,
        }
        for (sig, dev, lag), expected in cases.items():
            assert classify_cluster(sig, dev, lag) is expected
        assert classify_cluster(True, 0.0, 1.0) is Cluster.NOT_SIGNIFICANT
        assert classify_cluster(True, 1.0, 0.0) is Cluster.NOT_SIGNIFICANT

    def test_isolate_cluster(self):
        w = SpatialWeights.from_pairs([("a", "b"), ("b", "c")], units=["a", "b", "c", "d"])
        x = {"a": 0.1, "b": 0.9, "c": 0.2, "d": 0.5}
        lm = LocalMoran(w, n_perm=99, seed=0).fit(x)
        assert lm.cluster_map()["d"] is Cluster.ISOLATE
        assert lm.local_i_[lm.units_.index("d")] == 0.0

    def test_pseudo_p_bounds(self):
        rng = random.Random(11)
        names = [f"u{i}" for i in range(20)]
        pairs = [(names[i], names[(i + 1) % 20]) for i in range(20)]
        w = SpatialWeights.from_pairs(pairs)
        lm = LocalMoran(w, n_perm=199, seed=4).fit({u: rng.random() for u in names})
        assert np.all(lm.pseudo_p_ >= 1.0 / 200.0)
        assert np.all(lm.pseudo_p_ <= 1.0)

    def test_significant_implies_small_p(self):
        rng = random.Random(13)
        counties = sorted(iowa_counties())
        w = SpatialWeights.from_pairs(grid_adjacency(counties, 11))
        # spatially structured field: smooth gradient plus noise
        x = {u: i / 99 + 0.05 * rng.random() for i, u in enumerate(counties)}
        lm = LocalMoran(w, n_perm=199, alpha=0.05, seed=5).fit(x)
        for i, cluster in enumerate(lm.clusters_):
            if cluster not in (Cluster.NOT_SIGNIFICANT, Cluster.ISOLATE):
                assert lm.pseudo_p_[i] <= 0.05

    def test_deterministic_and_thread_invariant(self):
        rng = random.Random(17)
        counties = sorted(iowa_counties())
        w = SpatialWeights.from_pairs(grid_adjacency(counties, 11))
        x = {u: rng.random() for u in counties}
        a = LocalMoran(w, n_perm=199, seed=9, n_threads=1).fit(x)
        b = LocalMoran(w, n_perm=199, seed=9, n_threads=4).fit(x)
        assert np.array_equal(a.pseudo_p_, b.pseudo_p_)
        assert np.array_equal(a.local_i_, b.local_i_)
        assert a.clusters_ == b.clusters_

    def test_calibration_under_exchangeability(self):
        counties = sorted(iowa_counties())
        w = SpatialWeights.from_pairs(grid_adjacency(counties, 11))
        fractions = []
        for seed in range(3):
            rng = random.Random(100 + seed)
            x = {u: rng.random() for u in counties}
            lm = LocalMoran(w, n_perm=199, alpha=0.05, seed=seed).fit(x)
            fractions.append(float(np.mean(lm.pseudo_p_ <= 0.05)))
        bound = 0.05 + 3 * math.sqrt(0.05 / 199)
        assert sum(fractions) / len(fractions) <= bound

    def test_validation_errors(self):
        names, w = ring(5)
        with pytest.raises(ValueError, match="n_perm"):
            LocalMoran(w, n_perm=10).fit({u: 1.0 for u in names})
        with pytest.raises(ValueError, match="missing"):
            LocalMoran(w, n_perm=99).fit({u: 1.0 for u in names[:3]})
        _, w3 = ring(3)
        with pytest.raises(ValueError, match="at least 3"):
            LocalMoran(SpatialWeights.from_pairs([("a", "b")]), n_perm=99).fit(
                {"a": 1.0, "b": 2.0}
            )

    def test_results_table_shape(self):
        names, w = ring(4)
        lm = LocalMoran(w, n_perm=99, seed=1).fit({u: float(i) for i, u in enumerate(names)})
        rows = lm.results()
        assert len(rows) == 4
        unit, cluster, p, local_i = rows[0]
        assert isinstance(cluster, Cluster)
        assert 0 < p <= 1
        assert isinstance(local_i, float)
