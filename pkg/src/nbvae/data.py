"""Sparse count, binary, and feature matrices plus their file formats.

Rows are documents (or users, or samples) and columns are words (or
items, or labels). All matrices are backed by :mod:`scipy.sparse` CSR
storage with zeros never stored and column indices sorted within each
row. Matrices are immutable once constructed.

"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exc import ConfigurationError, ContractError, LoadError


__all__ = [
    "BinaryMatrix",
    "Dataset",
    "FeatureMatrix",
    "HeldoutSplit",
    "SparseCountMatrix",
    "load_binary",
    "load_bow",
    "load_dataset",
    "load_multilabel",
    "minibatches",
    "save_bow",
    "save_multilabel",
    "split_heldout",
    "split_rows",
]


log = logging.getLogger(__name__)


COUNT_DTYPE = np.uint32
TOTAL_DTYPE = np.int64
MAX_COUNT = int(np.iinfo(COUNT_DTYPE).max)


def _freeze(matrix: sp.csr_matrix) -> sp.csr_matrix:
    for array in (matrix.data, matrix.indices, matrix.indptr):
        array.flags.writeable = False
    return matrix


@dataclass(frozen=True, eq=False)
class SparseCountMatrix:

    """N rows of sparse, non-negative integer counts over V columns.

    Use :meth:`from_triplets` or :meth:`from_dense` to construct one;
    the constructor expects an already canonical CSR matrix.

    """

    matrix: sp.csr_matrix
    totals: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        matrix = self.matrix
        if not sp.isspmatrix_csr(matrix):
            raise ContractError("Expected a CSR matrix")
        if matrix.nnz and matrix.data.min() < 1:
            raise ContractError("Stored counts must be >= 1")
        totals = np.asarray(matrix.sum(axis=1, dtype=TOTAL_DTYPE)).ravel()
        totals.flags.writeable = False
        object.__setattr__(self, "totals", totals)
        self.check()

    def check(self):
        """Hook for subclasses to validate stored values."""

    @classmethod
    def from_triplets(cls, rows, cols, counts, shape):
        """Build a matrix from 0-based (row, col, count) triplets.

        Duplicate (row, col) pairs are summed. Zero counts are dropped.

        Raises:
            ContractError: A count (or a sum of duplicates) is negative
                or doesn't fit in :data:`COUNT_DTYPE`.

        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        matrix = sp.coo_matrix((counts, (rows, cols)), shape=shape).tocsr()
        matrix.sum_duplicates()
        if matrix.nnz and not 0 <= matrix.data.min() <= matrix.data.max() <= MAX_COUNT:
            raise ContractError(f"Counts must be in [0, {MAX_COUNT}]")
        return cls(_canonical(matrix, COUNT_DTYPE))

    @classmethod
    def from_dense(cls, array):
        array = np.asarray(array)
        if array.ndim != 2:
            raise ContractError(f"Expected a 2-D array; got {array.ndim} dimensions")
        if (array < 0).any():
            raise ContractError("Counts must be non-negative")
        matrix = sp.csr_matrix(array.astype(COUNT_DTYPE))
        return cls(_canonical(matrix, COUNT_DTYPE))

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def row(self, j):
        """Return the (column indices, counts) stored for row ``j``."""
        start, end = self.matrix.indptr[j], self.matrix.indptr[j + 1]
        return self.matrix.indices[start:end], self.matrix.data[start:end]

    def triplets(self) -> Iterator:
        """Yield 0-based (row, col, count) triplets in row-major order."""
        for j in range(self.n_rows):
            cols, counts = self.row(j)
            for v, count in zip(cols, counts):
                yield j, int(v), int(count)

    def to_dense(self, rows=None) -> np.ndarray:
        """Densify the selected rows (all rows by default) as float64."""
        matrix = self.matrix if rows is None else self.matrix[rows]
        return matrix.toarray().astype(np.float64)

    def select_rows(self, rows):
        """Return a matrix of the same type over the selected rows."""
        return self.__class__(_canonical(self.matrix[rows], self.matrix.dtype))

    def max_count(self) -> int:
        return int(self.matrix.data.max()) if self.nnz else 0


class BinaryMatrix(SparseCountMatrix):

    """A :class:`SparseCountMatrix` whose stored values are all 1."""

    def check(self):
        if self.nnz and self.matrix.data.max() != 1:
            raise ContractError("Binary matrix values must all be 1")

    @classmethod
    def from_triplets(cls, rows, cols, counts, shape):
        # Duplicates collapse to a single 1
        counts = SparseCountMatrix.from_triplets(rows, cols, counts, shape)
        return cls.from_counts(counts)

    @classmethod
    def from_dense(cls, array):
        return cls.from_counts(SparseCountMatrix.from_dense(array))

    @classmethod
    def from_counts(cls, counts: SparseCountMatrix) -> "BinaryMatrix":
        matrix = counts.matrix.copy()
        matrix.data = np.ones_like(matrix.data)
        return cls(_canonical(matrix, COUNT_DTYPE))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:

    """N rows of sparse real-valued features over D dimensions."""

    matrix: sp.csr_matrix

    def __post_init__(self):
        if not sp.isspmatrix_csr(self.matrix):
            raise ContractError("Expected a CSR matrix")
        if not np.isfinite(self.matrix.data).all():
            raise ContractError("Feature values must be finite")

    @classmethod
    def from_triplets(cls, rows, cols, values, shape):
        matrix = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (rows, cols)), shape=shape
        ).tocsr()
        return cls(_canonical(matrix, np.float64))

    @classmethod
    def from_dense(cls, array):
        matrix = sp.csr_matrix(np.asarray(array, dtype=np.float64))
        return cls(_canonical(matrix, np.float64))

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_dims(self) -> int:
        return self.matrix.shape[1]

    def row(self, j):
        start, end = self.matrix.indptr[j], self.matrix.indptr[j + 1]
        return self.matrix.indices[start:end], self.matrix.data[start:end]

    def to_dense(self, rows=None) -> np.ndarray:
        matrix = self.matrix if rows is None else self.matrix[rows]
        return matrix.toarray()

    def select_rows(self, rows):
        return self.__class__(_canonical(self.matrix[rows], np.float64))


def _canonical(matrix, dtype) -> sp.csr_matrix:
    matrix = sp.csr_matrix(matrix, dtype=dtype, copy=True)
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return _freeze(matrix)


@dataclass(frozen=True, eq=False)
class HeldoutSplit:
    observed: SparseCountMatrix
    heldout: SparseCountMatrix
    seed: int
    fraction: float


@dataclass(frozen=True, eq=False)
class Dataset:

    """Rows to model plus, for multi-label data, their features.

    ``modality`` is one of "counts", "binary", or "multilabel".

    """

    labels: SparseCountMatrix
    features: Optional[FeatureMatrix] = None
    modality: str = "counts"
    name: str = ""

    def __post_init__(self):
        if self.modality not in ("counts", "binary", "multilabel"):
            raise ContractError(f"Unknown modality: {self.modality}")
        if self.modality == "multilabel":
            if self.features is None:
                raise ContractError("Multi-label datasets need features")
            if self.features.n_rows != self.labels.n_rows:
                raise ContractError(
                    f"Feature rows ({self.features.n_rows}) and label rows "
                    f"({self.labels.n_rows}) differ"
                )

    @property
    def n_rows(self) -> int:
        return self.labels.n_rows

    def select_rows(self, rows) -> "Dataset":
        features = None if self.features is None else self.features.select_rows(rows)
        return Dataset(
            labels=self.labels.select_rows(rows),
            features=features,
            modality=self.modality,
            name=self.name,
        )


# Loading & saving -----------------------------------------------------


def _decoded_lines(path, fp, encoding="utf-8"):
    """Yield (1-based line number, text) from a file opened in binary mode."""
    for line_number, raw in enumerate(fp, 1):
        try:
            yield line_number, raw.decode(encoding)
        except UnicodeDecodeError as exc:
            raise LoadError(path, line_number, f"Not valid {encoding}: {exc.reason}")


def _read_header(path, lines, names):
    for line_number, line in lines:
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != len(names):
            raise LoadError(
                path, line_number, f"Expected header '{' '.join(names)}'; got {line!r}"
            )
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise LoadError(
                path, line_number, f"Header values must be integers: {line!r}"
            )
        if any(v < 0 for v in values):
            raise LoadError(path, line_number, "Header values must be non-negative")
        return line_number, values
    raise LoadError(path, 1, "File is empty; expected a header line")


def _load_triplets(path, cls):
    rows: List[int] = []
    cols: List[int] = []
    counts: List[int] = []
    with open(path, "rb") as fp:
        lines = _decoded_lines(path, fp)
        header_line, (n_rows, n_cols, nnz) = _read_header(
            path, lines, ("N", "V", "NNZ")
        )
        seen = 0
        for line_number, line in lines:
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise LoadError(
                    path, line_number, f"Expected 'docID wordID count'; got {line!r}"
                )
            try:
                doc, word, count = (int(p) for p in parts)
            except ValueError:
                raise LoadError(path, line_number, f"Non-integer value in {line!r}")
            if not 1 <= doc <= n_rows:
                raise LoadError(
                    path, line_number, f"Document ID {doc} outside [1, {n_rows}]"
                )
            if not 1 <= word <= n_cols:
                raise LoadError(
                    path, line_number, f"Word ID {word} outside [1, {n_cols}]"
                )
            if count < 1:
                raise LoadError(
                    path, line_number, f"Count must be positive; got {count}"
                )
            if count > MAX_COUNT:
                raise LoadError(
                    path, line_number, f"Count {count} is larger than {MAX_COUNT}"
                )
            rows.append(doc - 1)
            cols.append(word - 1)
            counts.append(count)
            seen += 1
    if seen != nnz:
        raise LoadError(
            path, header_line, f"Header declares {nnz} triplets; found {seen}"
        )
    log.debug("Loaded %d triplets from %s (%d x %d)", seen, path, n_rows, n_cols)
    try:
        return cls.from_triplets(rows, cols, counts, (n_rows, n_cols))
    except ContractError as exc:
        raise LoadError(path, header_line, f"Duplicate triplets overflow: {exc}")


def load_bow(path) -> SparseCountMatrix:
    """Load a bag-of-words file.

    The first line is ``N V NNZ``. Each of the following ``NNZ`` lines
    is ``docID wordID count`` with 1-based IDs. Duplicate (doc, word)
    triplets are summed.

    Raises:
        LoadError: On a malformed line, an ID outside the declared
            range, or a non-positive count. The message names the line.

    """
    return _load_triplets(path, SparseCountMatrix)


def load_binary(path) -> BinaryMatrix:
    """Load binary interactions stored in the bag-of-words format.

    Counts greater than 1 are clamped to 1 with a warning.

    """
    counts = _load_triplets(path, SparseCountMatrix)
    n_clamped = int((counts.matrix.data > 1).sum())
    if n_clamped:
        log.warning("Clamped %d counts > 1 to 1 in binary file %s", n_clamped, path)
    return BinaryMatrix.from_counts(counts)


def save_bow(m: SparseCountMatrix, path):
    """Write a matrix in the bag-of-words triplet format (1-based IDs)."""
    with open(path, "w") as fp:
        fp.write(f"{m.n_rows} {m.n_cols} {m.nnz}\n")
        for j, v, count in m.triplets():
            fp.write(f"{j + 1} {v + 1} {count}\n")


def load_multilabel(path):
    """Load a multi-label file into aligned (features, labels).

    The first line is ``N D L``. Each following line holds a
    comma-separated list of 0-based labels (possibly empty) followed by
    whitespace-separated ``index:value`` features with 0-based indices.

    Returns:
        (FeatureMatrix, BinaryMatrix)

    """
    label_rows: List[int] = []
    label_cols: List[int] = []
    feature_rows: List[int] = []
    feature_cols: List[int] = []
    feature_values: List[float] = []
    with open(path, "rb") as fp:
        lines = _decoded_lines(path, fp)
        header = _read_header(path, lines, ("N", "D", "L"))
        header_line, (n_rows, n_dims, n_labels) = header
        j = 0
        for line_number, line in lines:
            if not line.strip():
                continue
            if j >= n_rows:
                raise LoadError(path, line_number, f"More than {n_rows} rows")
            parts = line.split()
            if parts and ":" not in parts[0]:
                label_field, feature_fields = parts[0], parts[1:]
            else:
                label_field, feature_fields = "", parts
            for label in (lf for lf in label_field.split(",") if lf):
                try:
                    label_index = int(label)
                except ValueError:
                    raise LoadError(path, line_number, f"Bad label {label!r}")
                if not 0 <= label_index < n_labels:
                    raise LoadError(
                        path,
                        line_number,
                        f"Label {label_index} outside [0, {n_labels})",
                    )
                label_rows.append(j)
                label_cols.append(label_index)
            row_indices = []
            for feature in feature_fields:
                index, sep, value = feature.partition(":")
                try:
                    index_value = int(index)
                    real_value = float(value)
                except ValueError:
                    raise LoadError(path, line_number, f"Bad feature {feature!r}")
                if not sep:
                    raise LoadError(path, line_number, f"Bad feature {feature!r}")
                if not 0 <= index_value < n_dims:
                    raise LoadError(
                        path,
                        line_number,
                        f"Feature index {index_value} outside [0, {n_dims})",
                    )
                if not math.isfinite(real_value):
                    raise LoadError(
                        path, line_number, f"Non-finite feature {feature!r}"
                    )
                row_indices.append(index_value)
                feature_rows.append(j)
                feature_cols.append(index_value)
                feature_values.append(real_value)
            if len(set(row_indices)) != len(row_indices):
                raise LoadError(path, line_number, "Duplicate feature index")
            j += 1
    if j != n_rows:
        raise LoadError(path, header_line, f"Header declares {n_rows} rows; found {j}")
    features = FeatureMatrix.from_triplets(
        feature_rows, feature_cols, feature_values, (n_rows, n_dims)
    )
    labels = BinaryMatrix.from_triplets(
        label_rows, label_cols, np.ones(len(label_rows)), (n_rows, n_labels)
    )
    return features, labels


def save_multilabel(features: FeatureMatrix, labels: SparseCountMatrix, path):
    if features.n_rows != labels.n_rows:
        raise ContractError("Features and labels must have the same number of rows")
    with open(path, "w") as fp:
        fp.write(f"{features.n_rows} {features.n_dims} {labels.n_cols}\n")
        for j in range(features.n_rows):
            label_cols, _ = labels.row(j)
            cols, values = features.row(j)
            label_field = ",".join(str(int(v)) for v in label_cols)
            feature_field = " ".join(f"{int(i)}:{float(v)!r}" for i, v in zip(cols, values))
            fp.write(f"{label_field} {feature_field}\n")


def load_dataset(path, modality, name="") -> Dataset:
    """Load a file as a :class:`Dataset` of the given modality."""
    if modality == "counts":
        return Dataset(load_bow(path), modality=modality, name=name or str(path))
    if modality == "binary":
        return Dataset(load_binary(path), modality=modality, name=name or str(path))
    if modality == "multilabel":
        features, labels = load_multilabel(path)
        return Dataset(labels, features, modality=modality, name=name or str(path))
    raise ConfigurationError(f"Unknown data format: {modality}")


# Splitting & batching -------------------------------------------------


def split_heldout(m: SparseCountMatrix, fraction: float, seed: int) -> HeldoutSplit:
    """Split every row's word tokens into observed and heldout parts.

    Each of the ``y_vj`` tokens of word ``v`` in row ``j`` goes to the
    heldout part independently with probability ``fraction``, so the
    heldout count is drawn ``Binomial(y_vj, fraction)``. Entries are
    visited in row-major order so the result depends only on
    ``(m, fraction, seed)``.

    """
    if not 0 < fraction < 1:
        raise ContractError(f"Heldout fraction must be in (0, 1); got {fraction}")
    rng = np.random.default_rng(seed)
    source = m.matrix
    heldout_data = rng.binomial(source.data.astype(np.int64), fraction)
    observed_data = source.data.astype(np.int64) - heldout_data
    shape = source.shape

    def build(data):
        matrix = sp.csr_matrix(
            (data.astype(COUNT_DTYPE), source.indices.copy(), source.indptr.copy()),
            shape=shape,
        )
        return m.__class__(_canonical(matrix, COUNT_DTYPE))

    return HeldoutSplit(
        observed=build(observed_data),
        heldout=build(heldout_data),
        seed=seed,
        fraction=fraction,
    )


def minibatches(m, batch_size: int, seed: int) -> List[np.ndarray]:
    """Partition a seeded permutation of all row indices into batches.

    ``m`` is anything with an ``n_rows`` attribute.

    """
    if batch_size < 1:
        raise ContractError(f"Batch size must be >= 1; got {batch_size}")
    order = np.random.default_rng(seed).permutation(m.n_rows)
    return [order[i : i + batch_size] for i in range(0, m.n_rows, batch_size)]


def split_rows(n_rows: int, fractions: Sequence[float], seed: int) -> List[np.ndarray]:
    """Partition row indices into disjoint, sorted groups.

    ``fractions`` gives the share of rows for each group; the last
    group takes whatever rounding leaves over.

    """
    if not fractions or any(f < 0 for f in fractions) or sum(fractions) > 1 + 1e-9:
        raise ContractError(f"Invalid row split fractions: {fractions}")
    order = np.random.default_rng(seed).permutation(n_rows)
    bounds = np.round(np.cumsum(fractions) * n_rows).astype(np.int64)
    if math.isclose(sum(fractions), 1):
        bounds[-1] = n_rows
    starts = np.concatenate(([0], bounds[:-1]))
    return [np.sort(order[start:end]) for start, end in zip(starts, bounds)]
