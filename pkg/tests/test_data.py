import math

import numpy as np
import pytest

from conformal import Bag, SeededRng, SplitSpec, load_csv, save_csv, split, tau_stream

# PCG64 draws are pinned per seed; a change here means reproducibility broke.
PINNED_TAUS = {
    0: [0.6369616873214543, 0.2697867137638703, 0.04097352393619469, 0.016527635528529094],
    7: [0.625095466604667, 0.8972138009695755, 0.7756856902451935, 0.22520718999059186],
    123456789: [0.02771273928251694, 0.9067000554840227, 0.8813935546997342, 0.6248972754209087],
}


class TestSeededRng:
    def test_pinned_sequences(self):
        for seed, expected in PINNED_TAUS.items():
            np.testing.assert_array_equal(tau_stream(SeededRng(seed), 4), expected)

    def test_same_seed_same_stream(self):
        a = tau_stream(SeededRng(42), 5)
        b = tau_stream(SeededRng(42), 5)
        np.testing.assert_array_equal(a, b)

    def test_empty_stream(self):
        assert tau_stream(SeededRng(1), 0).shape == (0,)

    def test_range_and_mean(self):
        draws = tau_stream(SeededRng(3), 10_000)
        assert np.all((draws >= 0.0) & (draws <= 1.0))
        assert abs(draws.mean() - 0.5) < 0.02

    def test_bad_seed(self):
        with pytest.raises(ValueError):
            SeededRng(-1)
        with pytest.raises(ValueError):
            SeededRng(2**64)


class TestBag:
    def test_classification_label_space_sorted(self):
        bag = Bag.classification([[0.0], [1.0], [2.0]], ["B", "A", "B"])
        assert bag.label_space == ("A", "B")
        assert len(bag) == 3
        assert bag.is_classification

    def test_regression_bag(self):
        bag = Bag.regression([[0.0], [1.0]], [1.5, -2.0])
        assert bag.label_space == ()
        assert not bag.is_classification
        assert bag.y == (1.5, -2.0)

    def test_label_outside_space_rejected(self):
        with pytest.raises(ValueError, match="label space"):
            Bag([[0.0]], ["C"], ("A", "B"))

    def test_nonfinite_features_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            Bag.classification([[math.nan]], ["A"])
        with pytest.raises(ValueError, match="finite"):
            Bag.regression([[0.0]], [math.inf])

    def test_immutable_observations(self):
        bag = Bag.regression([[1.0]], [0.0])
        with pytest.raises(ValueError):
            bag.x[0, 0] = 2.0

    def test_append_merges_label_spaces(self):
        a = Bag.classification([[0.0]], ["A"])
        b = Bag.classification([[1.0]], ["C"])
        merged = a.append(b)
        assert merged.label_space == ("A", "C")
        assert merged.y == ("A", "C")
        assert len(merged) == 2

    def test_append_rejects_mixed_kinds(self):
        with pytest.raises(ValueError, match="mix"):
            Bag.classification([[0.0]], ["A"]).append(Bag.regression([[1.0]], [1.0]))

    def test_subset_keeps_label_space(self):
        bag = Bag.classification([[0.0], [1.0], [2.0]], ["A", "B", "A"])
        sub = bag.subset([2, 0])
        assert sub.y == ("A", "A")
        assert sub.label_space == ("A", "B")


class TestSplit:
    def _bag(self, n):
        return Bag.classification([[float(i)] for i in range(n)], ["A"] * n, ("A",))

    def test_sizes_ceiling(self):
        train, rest = split(self._bag(10), SplitSpec(0.8, 1))
        assert (len(train), len(rest)) == (8, 2)
        train, rest = split(self._bag(7), SplitSpec(0.5, 1))
        assert (len(train), len(rest)) == (4, 3)

    def test_deterministic(self):
        bag = self._bag(20)
        spec = SplitSpec(0.6, 99)
        a1, b1 = split(bag, spec)
        a2, b2 = split(bag, spec)
        np.testing.assert_array_equal(a1.x, a2.x)
        np.testing.assert_array_equal(b1.x, b2.x)

    def test_partition_exact(self):
        bag = self._bag(13)
        train, rest = split(bag, SplitSpec(0.4, 5))
        seen = sorted(v for part in (train, rest) for v in part.x[:, 0])
        assert seen == [float(i) for i in range(13)]

    def test_empty_bag_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            split(Bag(np.empty((0, 1)), (), ("A",)), SplitSpec(0.5, 0))

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError):
            split(self._bag(3), SplitSpec(1.0, 0))


class TestCsv:
    def test_small_file(self, tmp_path):
        path = tmp_path / "small.csv"
        path.write_text("f1,f2,label\n1.0,2.0,A\n3.5,4.0,B\n0.0,-1.0,A\n")
        bag = load_csv(path, "label")
        assert len(bag) == 3
        assert bag.label_space == ("A", "B")
        np.testing.assert_array_equal(bag.x[1], [3.5, 4.0])

    def test_label_column_by_index(self, tmp_path):
        path = tmp_path / "idx.csv"
        path.write_text("label,f1\nA,1.0\nB,2.0\n")
        bag = load_csv(path, 0)
        assert bag.y == ("A", "B")
        assert bag.x.shape == (2, 1)

    def test_parse_error_names_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f1,label\noops,A\n")
        with pytest.raises(ValueError, match=r"row 1, column 'f1'"):
            load_csv(path, "label")

    def test_unknown_label_column(self, tmp_path):
        path = tmp_path / "cols.csv"
        path.write_text("f1,label\n1.0,A\n")
        with pytest.raises(ValueError, match="unknown label column"):
            load_csv(path, "target")

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("f1,f2,label\n1.0,2.0,A\n1.0,B\n")
        with pytest.raises(ValueError, match="row 2"):
            load_csv(path, "label")

    def test_nonfinite_feature_rejected(self, tmp_path):
        path = tmp_path / "inf.csv"
        path.write_text("f1,label\ninf,A\n")
        with pytest.raises(ValueError, match="non-finite"):
            load_csv(path, "label")

    def test_iris_style_counts(self, tmp_path):
        # 150 rows, 4 features, 3 classes, written by this test
        rng = np.random.default_rng(0)
        path = tmp_path / "iris_like.csv"
        lines = ["sl,sw,pl,pw,species"]
        species = ["setosa", "versicolor", "virginica"]
        for i in range(150):
            feats = rng.uniform(0, 8, size=4)
            lines.append(",".join(f"{v:.3f}" for v in feats) + "," + species[i % 3])
        path.write_text("\n".join(lines) + "\n")
        bag = load_csv(path, "species")
        assert len(bag) == 150
        assert bag.n_features == 4
        assert len(bag.label_space) == 3

    def test_real_labels(self, tmp_path):
        path = tmp_path / "reg.csv"
        path.write_text("f1,y\n1.0,2.5\n2.0,-0.5\n")
        bag = load_csv(path, "y", "real")
        assert bag.y == (2.5, -0.5)
        assert bag.label_space == ()

    def test_round_trip_classification(self, tmp_path):
        rng = np.random.default_rng(1)
        bag = Bag.classification(rng.standard_normal((9, 3)), list("ABCABCABC"))
        path = tmp_path / "round.csv"
        save_csv(bag, path)
        loaded = load_csv(path, "label")
        np.testing.assert_array_equal(loaded.x, bag.x)
        assert loaded.y == bag.y
        assert loaded.label_space == bag.label_space

    def test_round_trip_regression(self, tmp_path):
        rng = np.random.default_rng(2)
        bag = Bag.regression(rng.standard_normal((7, 2)), rng.standard_normal(7))
        path = tmp_path / "round_reg.csv"
        save_csv(bag, path, label_column="y")
        loaded = load_csv(path, "y", "real")
        np.testing.assert_array_equal(loaded.x, bag.x)
        assert loaded.y == bag.y
