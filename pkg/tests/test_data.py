import os
import tempfile
from unittest import TestCase

import numpy as np

from nbvae.data import (
    BinaryMatrix,
    Dataset,
    FeatureMatrix,
    SparseCountMatrix,
    load_binary,
    load_bow,
    load_dataset,
    load_multilabel,
    minibatches,
    save_bow,
    save_multilabel,
    split_heldout,
    split_rows,
)
from nbvae.exc import ConfigurationError, ContractError, LoadError


class FileTestCase(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)

    def write(self, text, name="data.txt"):
        path = os.path.join(self.directory.name, name)
        with open(path, "w") as fp:
            fp.write(text)
        return path

    def write_bytes(self, data, name="data.txt"):
        path = os.path.join(self.directory.name, name)
        with open(path, "wb") as fp:
            fp.write(data)
        return path


class TestSparseCountMatrix(TestCase):
    def test_from_triplets_sums_duplicates(self):
        m = SparseCountMatrix.from_triplets([0, 0, 1], [2, 2, 0], [1, 3, 5], (2, 3))
        self.assertEqual(m.nnz, 2)
        self.assertEqual(m.to_dense().tolist(), [[0, 0, 4], [5, 0, 0]])
        self.assertEqual(m.totals.tolist(), [4, 5])

    def test_zeros_are_not_stored(self):
        m = SparseCountMatrix.from_dense([[0, 2, 0], [0, 0, 0]])
        self.assertEqual(m.nnz, 1)
        self.assertEqual(m.totals.tolist(), [2, 0])

    def test_columns_sorted_within_rows(self):
        m = SparseCountMatrix.from_triplets([0, 0, 0], [4, 1, 3], [1, 1, 1], (1, 5))
        cols, _ = m.row(0)
        self.assertEqual(cols.tolist(), [1, 3, 4])

    def test_immutable(self):
        m = SparseCountMatrix.from_dense([[1, 2]])
        with self.assertRaises(ValueError):
            m.matrix.data[0] = 7

    def test_counts_must_fit(self):
        too_big = int(np.iinfo(np.uint32).max) + 1
        self.assertRaises(
            ContractError, SparseCountMatrix.from_triplets, [0], [0], [too_big], (1, 1)
        )
        halves = [too_big // 2, too_big // 2]
        self.assertRaises(
            ContractError,
            SparseCountMatrix.from_triplets,
            [0, 0],
            [0, 0],
            halves,
            (1, 1),
        )

    def test_negative_counts_rejected(self):
        self.assertRaises(ContractError, SparseCountMatrix.from_dense, [[1, -1]])

    def test_select_rows(self):
        m = SparseCountMatrix.from_dense([[1, 0], [0, 2], [3, 3]])
        selected = m.select_rows([2, 0])
        self.assertIsInstance(selected, SparseCountMatrix)
        self.assertEqual(selected.to_dense().tolist(), [[3, 3], [1, 0]])

    def test_binary_matrix_collapses_counts(self):
        m = BinaryMatrix.from_dense([[3, 0, 1]])
        self.assertEqual(m.to_dense().tolist(), [[1, 0, 1]])
        self.assertEqual(m.max_count(), 1)


class TestLoadBow(FileTestCase):
    def test_load(self):
        path = self.write("2 4 3\n1 1 2\n1 4 1\n2 2 5\n")
        m = load_bow(path)
        self.assertEqual(m.n_rows, 2)
        self.assertEqual(m.n_cols, 4)
        self.assertEqual(m.to_dense().tolist(), [[2, 0, 0, 1], [0, 5, 0, 0]])

    def test_blank_lines_are_skipped(self):
        path = self.write("\n1 2 1\n\n1 2 3\n")
        self.assertEqual(load_bow(path).to_dense().tolist(), [[0, 3]])

    def test_duplicate_triplets_summed(self):
        path = self.write("1 2 2\n1 2 3\n1 2 4\n")
        self.assertEqual(load_bow(path).to_dense().tolist(), [[0, 7]])

    def test_id_out_of_range(self):
        path = self.write("2 4 1\n3 1 1\n")
        with self.assertRaises(LoadError) as context:
            load_bow(path)
        self.assertEqual(context.exception.line_number, 2)
        self.assertIn(path, str(context.exception))
        self.assertIn("line 2", str(context.exception))

    def test_zero_count(self):
        path = self.write("1 1 1\n1 1 0\n")
        self.assertRaises(LoadError, load_bow, path)

    def test_wrong_triplet_count(self):
        path = self.write("1 1 2\n1 1 1\n")
        self.assertRaises(LoadError, load_bow, path)

    def test_malformed_line(self):
        path = self.write("1 1 1\n1 a 1\n")
        self.assertRaises(LoadError, load_bow, path)

    def test_invalid_utf8(self):
        path = self.write_bytes(b"1 2 1\n1 1 \xff\xfe\n")
        with self.assertRaises(LoadError) as context:
            load_bow(path)
        self.assertEqual(context.exception.line_number, 2)
        self.assertIn("utf-8", str(context.exception))

    def test_count_too_large(self):
        path = self.write(f"1 1 1\n1 1 {2 ** 32}\n")
        with self.assertRaises(LoadError) as context:
            load_bow(path)
        self.assertEqual(context.exception.line_number, 2)

    def test_duplicates_summing_past_the_limit(self):
        half = 2 ** 31
        path = self.write(f"1 1 2\n1 1 {half}\n1 1 {half}\n")
        with self.assertRaises(LoadError) as context:
            load_bow(path)
        self.assertEqual(context.exception.line_number, 1)

    def test_empty_file(self):
        path = self.write("")
        self.assertRaises(LoadError, load_bow, path)

    def test_load_error_is_a_configuration_error(self):
        self.assertEqual(LoadError("x", 1, "bad").exit_code, 2)
        self.assertTrue(issubclass(LoadError, ConfigurationError))

    def test_save_then_load(self):
        m = SparseCountMatrix.from_dense([[0, 3, 1], [2, 0, 0]])
        path = os.path.join(self.directory.name, "out.txt")
        save_bow(m, path)
        with open(path) as fp:
            self.assertEqual(fp.readline(), "2 3 3\n")
        self.assertEqual(load_bow(path).to_dense().tolist(), m.to_dense().tolist())

    def test_load_binary_clamps(self):
        path = self.write("1 3 2\n1 1 4\n1 3 1\n")
        with self.assertLogs("nbvae.data", "WARNING"):
            m = load_binary(path)
        self.assertIsInstance(m, BinaryMatrix)
        self.assertEqual(m.to_dense().tolist(), [[1, 0, 1]])


class TestLoadMultilabel(FileTestCase):
    def test_load(self):
        path = self.write("3 4 5\n0,4 0:1.5 3:-2\n 1:0.25\n2\n")
        features, labels = load_multilabel(path)
        self.assertEqual(features.n_dims, 4)
        self.assertEqual(labels.n_cols, 5)
        self.assertEqual(
            labels.to_dense().tolist(),
            [[1, 0, 0, 0, 1], [0, 0, 0, 0, 0], [0, 0, 1, 0, 0]],
        )
        self.assertEqual(
            features.to_dense().tolist(),
            [[1.5, 0, 0, -2], [0, 0.25, 0, 0], [0, 0, 0, 0]],
        )

    def test_label_out_of_range(self):
        path = self.write("1 2 2\n2 0:1\n")
        self.assertRaises(LoadError, load_multilabel, path)

    def test_invalid_utf8(self):
        path = self.write_bytes(b"1 2 2\n0 1:\xe9\n")
        with self.assertRaises(LoadError) as context:
            load_multilabel(path)
        self.assertEqual(context.exception.line_number, 2)

    def test_duplicate_feature_index(self):
        path = self.write("1 2 2\n0 1:1 1:2\n")
        self.assertRaises(LoadError, load_multilabel, path)

    def test_row_count_mismatch(self):
        path = self.write("2 2 2\n0 1:1\n")
        self.assertRaises(LoadError, load_multilabel, path)

    def test_save_then_load(self):
        features = FeatureMatrix.from_dense([[0.5, 0], [0, -1.25]])
        labels = BinaryMatrix.from_dense([[0, 1, 1], [0, 0, 0]])
        path = os.path.join(self.directory.name, "ml.txt")
        save_multilabel(features, labels, path)
        loaded_features, loaded_labels = load_multilabel(path)
        self.assertEqual(loaded_features.to_dense().tolist(), [[0.5, 0], [0, -1.25]])
        self.assertEqual(loaded_labels.to_dense().tolist(), labels.to_dense().tolist())

    def test_load_dataset(self):
        path = self.write("1 2 2\n1 0:1\n")
        dataset = load_dataset(path, "multilabel")
        self.assertEqual(dataset.modality, "multilabel")
        self.assertEqual(dataset.features.n_rows, 1)
        self.assertRaises(ConfigurationError, load_dataset, path, "tsv")


class TestDataset(TestCase):
    def test_multilabel_needs_features(self):
        labels = BinaryMatrix.from_dense([[1, 0]])
        self.assertRaises(ContractError, Dataset, labels, modality="multilabel")

    def test_rows_must_align(self):
        labels = BinaryMatrix.from_dense([[1, 0]])
        features = FeatureMatrix.from_dense([[1.0], [2.0]])
        self.assertRaises(ContractError, Dataset, labels, features, "multilabel")

    def test_select_rows_keeps_features_aligned(self):
        labels = BinaryMatrix.from_dense([[1, 0], [0, 1]])
        features = FeatureMatrix.from_dense([[1.0], [2.0]])
        dataset = Dataset(labels, features, "multilabel").select_rows([1])
        self.assertEqual(dataset.features.to_dense().tolist(), [[2.0]])
        self.assertEqual(dataset.labels.to_dense().tolist(), [[0, 1]])


class TestSplitHeldout(TestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        self.m = SparseCountMatrix.from_dense(rng.poisson(2.0, size=(20, 30)))

    def test_parts_sum_to_original(self):
        split = split_heldout(self.m, 0.2, seed=7)
        total = split.observed.to_dense() + split.heldout.to_dense()
        self.assertTrue(np.array_equal(total, self.m.to_dense()))

    def test_deterministic(self):
        a = split_heldout(self.m, 0.2, seed=7)
        b = split_heldout(self.m, 0.2, seed=7)
        self.assertTrue(np.array_equal(a.heldout.to_dense(), b.heldout.to_dense()))
        c = split_heldout(self.m, 0.2, seed=8)
        self.assertFalse(np.array_equal(a.heldout.to_dense(), c.heldout.to_dense()))

    def test_heldout_share_near_fraction(self):
        split = split_heldout(self.m, 0.2, seed=1)
        share = split.heldout.totals.sum() / self.m.totals.sum()
        self.assertAlmostEqual(share, 0.2, delta=0.05)

    def test_fraction_must_be_open_interval(self):
        self.assertRaises(ContractError, split_heldout, self.m, 0.0, 1)
        self.assertRaises(ContractError, split_heldout, self.m, 1.0, 1)

    def test_binary_stays_binary(self):
        binary = BinaryMatrix.from_counts(self.m)
        split = split_heldout(binary, 0.5, seed=2)
        self.assertIsInstance(split.observed, BinaryMatrix)
        self.assertIsInstance(split.heldout, BinaryMatrix)


class TestBatching(TestCase):
    def test_minibatches_partition_rows(self):
        m = SparseCountMatrix.from_dense(np.ones((10, 2), dtype=int))
        batches = minibatches(m, 3, seed=0)
        self.assertEqual([len(b) for b in batches], [3, 3, 3, 1])
        self.assertEqual(sorted(np.concatenate(batches).tolist()), list(range(10)))
        again = minibatches(m, 3, seed=0)
        self.assertTrue(all(np.array_equal(a, b) for a, b in zip(batches, again)))

    def test_bad_batch_size(self):
        m = SparseCountMatrix.from_dense([[1]])
        self.assertRaises(ContractError, minibatches, m, 0, 0)

    def test_split_rows(self):
        groups = split_rows(100, (0.8, 0.1, 0.1), seed=4)
        self.assertEqual([len(g) for g in groups], [80, 10, 10])
        self.assertEqual(sorted(np.concatenate(groups).tolist()), list(range(100)))
        for group in groups:
            self.assertEqual(group.tolist(), sorted(group.tolist()))

    def test_split_rows_bad_fractions(self):
        self.assertRaises(ContractError, split_rows, 10, (0.8, 0.5), 0)
