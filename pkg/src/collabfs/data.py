"""Loading interaction and item-feature data into sparse matrices.

Two on-disk flavours are supported:

* raw inputs, filtered on load: an interactions file with rows
  ``user_id, item_id[, value]`` and a feature file whose rows are either
  ``item_id, feature[, category]`` (categorical mode) or
  ``item_id, text`` (textual mode);
* the canonical dataset directory written by :func:`write_dataset`
  (``interactions.tsv``, ``features.tsv`` plus the id tables
  ``users.tsv``, ``items.tsv``, ``feature_names.tsv`` and an optional
  ``categories.tsv``), which :func:`read_dataset` reproduces bit for bit.

Ids are indexed in order of first appearance. Files are UTF-8, tab- or
comma-separated, and a header row is detected by its first field naming a
column (``user_id``, ``item``, ...).
"""

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import EmptyDataset, EmptyFeatureSpace, ParseError, ShapeMismatch, UnknownItem
from .linalg import as_csr

HEADER_TOKENS = {
    "user", "user_id", "userid", "item", "item_id", "itemid",
    "feature", "feature_name", "token",
}
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class IngestConfig:
    min_feature_items: int = 2
    min_token_count: int = 10
    mode: str = "categorical"
    binarize: bool = True

    def __post_init__(self):
        if self.min_feature_items < 1:
            raise ValueError("min_feature_items must be >= 1")
        if self.min_token_count < 1:
            raise ValueError("min_token_count must be >= 1")
        if self.mode not in ("categorical", "textual"):
            raise ValueError(f"unknown ingest mode {self.mode!r}")


@dataclass(frozen=True)
class InteractionTable:
    matrix: sp.csr_matrix
    user_ids: Tuple[str, ...]
    item_ids: Tuple[str, ...]


@dataclass(frozen=True)
class FeatureTable:
    matrix: sp.csr_matrix
    item_ids: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    feature_categories: Optional[Dict[str, str]] = None


def _freeze(M):
    for a in (M.data, M.indices, M.indptr):
        a.setflags(write=False)
    return M


@dataclass(frozen=True, eq=False)
class Dataset:
    """Interactions ``R`` (users x items) and item features ``F`` (items x features)."""

    interactions: sp.csr_matrix
    features: sp.csr_matrix
    user_ids: Tuple[str, ...]
    item_ids: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    feature_categories: Optional[Dict[str, str]] = field(default=None)

    def __post_init__(self):
        R = as_csr(self.interactions)
        F = as_csr(self.features)
        if R.shape[1] != F.shape[0]:
            raise ShapeMismatch(
                f"interactions have {R.shape[1]} items but features have {F.shape[0]}"
            )
        if R.shape[0] != len(self.user_ids) or R.shape[1] != len(self.item_ids):
            raise ShapeMismatch("id tables do not match the interaction matrix")
        if F.shape[1] != len(self.feature_names):
            raise ShapeMismatch("feature name table does not match the feature matrix")
        for name, ids in (("user", self.user_ids), ("item", self.item_ids),
                          ("feature", self.feature_names)):
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {name} ids")
        if np.any(R.data <= 0):
            raise ValueError("interaction values must be positive")
        if np.any(F.data < 0):
            raise ValueError("feature values must be nonnegative")
        R.eliminate_zeros()
        F.eliminate_zeros()
        object.__setattr__(self, "interactions", _freeze(R))
        object.__setattr__(self, "features", _freeze(F))
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_users(self):
        return self.interactions.shape[0]

    @property
    def n_items(self):
        return self.interactions.shape[1]

    @property
    def n_features(self):
        return self.features.shape[1]

    def category_array(self):
        """Category label per feature column (``None`` where unknown)."""
        cats = self.feature_categories or {}
        return [cats.get(name) for name in self.feature_names]

    def equals(self, other) -> bool:
        def same(A, B):
            return (A.shape == B.shape and np.array_equal(A.indptr, B.indptr)
                    and np.array_equal(A.indices, B.indices)
                    and np.array_equal(A.data, B.data))

        return (
            same(self.interactions, other.interactions)
            and same(self.features, other.features)
            and self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and self.feature_names == other.feature_names
            and (self.feature_categories or {}) == (other.feature_categories or {})
        )


class _IdTable:
    def __init__(self, initial=()):
        self.index = {}
        for name in initial:
            self.add(name)

    def add(self, name):
        idx = self.index.get(name)
        if idx is None:
            idx = self.index[name] = len(self.index)
        return idx

    def names(self):
        return tuple(self.index)

    def __len__(self):
        return len(self.index)


def _detect_format(path, fmt):
    if fmt is not None:
        if fmt not in ("tsv", "csv"):
            raise ValueError(f"unknown format {fmt!r}")
        return fmt
    return "csv" if Path(path).suffix.lower() == ".csv" else "tsv"


def _read_rows(path, fmt=None):
    """Yield ``(lineno, fields)`` skipping blank lines and a detected header."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    fmt = _detect_format(path, fmt)
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            rows = ((i + 1, r) for i, r in enumerate(csv.reader(fh)))
        else:
            rows = (
                (i + 1, line.rstrip("\r\n").split("\t") if "\t" in line else line.split())
                for i, line in enumerate(fh)
            )
        first = True
        for lineno, fields in rows:
            fields = [f.strip() for f in fields]
            if not fields or all(f == "" for f in fields):
                continue
            if first:
                first = False
                if fields[0].lower() in HEADER_TOKENS:
                    continue
            yield lineno, fields


def load_interactions(path, fmt: Optional[str] = None) -> InteractionTable:
    """Parse ``user_id, item_id[, value]`` rows into a users x items CSR matrix.

    Missing values default to 1; duplicate pairs are summed. Rows with value
    0 are ignored, so users with no positive interaction never get a row.
    """
    users, items = _IdTable(), _IdTable()
    rows, cols, vals = [], [], []
    for lineno, fields in _read_rows(path, fmt):
        if len(fields) not in (2, 3):
            raise ParseError(f"expected 2 or 3 fields, got {len(fields)}", path, lineno)
        value = 1.0
        if len(fields) == 3 and fields[2] != "":
            try:
                value = float(fields[2])
            except ValueError:
                raise ParseError(f"bad value {fields[2]!r}", path, lineno) from None
            if not np.isfinite(value) or value < 0:
                raise ParseError(f"value must be finite and >= 0, got {fields[2]!r}",
                                 path, lineno)
        if value == 0:
            continue
        rows.append(users.add(fields[0]))
        cols.append(items.add(fields[1]))
        vals.append(value)
    if not vals:
        raise EmptyDataset(f"no interactions in {path}")
    R = sp.coo_matrix((vals, (rows, cols)), shape=(len(users), len(items)))
    return InteractionTable(as_csr(R), users.names(), items.names())


def _item_table(item_ids, allow_new_items, path):
    table = _IdTable(item_ids or ())
    strict = item_ids is not None and not allow_new_items

    def lookup(name, lineno):
        if strict and name not in table.index:
            raise UnknownItem(f"{path}:{lineno}: item {name!r} not in the interaction table")
        return table.add(name)

    return table, lookup


def _filter_columns(M, keep, names):
    keep = np.flatnonzero(keep)
    return as_csr(M[:, keep]), tuple(names[j] for j in keep)


def load_categorical_features(path, cfg: IngestConfig = IngestConfig(), item_ids=None,
                              allow_new_items=False, fmt=None) -> FeatureTable:
    """One-hot encode ``item_id, feature[, category]`` rows.

    Features present in fewer than ``cfg.min_feature_items`` items are
    dropped. With ``item_ids`` given, rows are aligned to that table and an
    unknown item raises :class:`UnknownItem` unless ``allow_new_items``.
    """
    items, lookup = _item_table(item_ids, allow_new_items, path)
    feats = _IdTable()
    categories = {}
    pairs = set()
    rows, cols = [], []
    for lineno, fields in _read_rows(path, fmt):
        if len(fields) not in (2, 3) or not fields[0] or not fields[1]:
            raise ParseError("expected item_id, feature[, category]", path, lineno)
        i = lookup(fields[0], lineno)
        j = feats.add(fields[1])
        if len(fields) == 3 and fields[2]:
            categories.setdefault(fields[1], fields[2])
        if (i, j) not in pairs:
            pairs.add((i, j))
            rows.append(i)
            cols.append(j)
    if not rows:
        raise EmptyFeatureSpace(f"no features in {path}")
    F = as_csr(sp.coo_matrix((np.ones(len(rows)), (rows, cols)),
                             shape=(len(items), len(feats))))
    df = np.diff(F.tocsc().indptr)
    F, names = _filter_columns(F, df >= cfg.min_feature_items, feats.names())
    if not names:
        raise EmptyFeatureSpace(
            f"no feature appears in at least {cfg.min_feature_items} items"
        )
    cats = {n: categories[n] for n in names if n in categories} or None
    return FeatureTable(F, items.names(), names, cats)


def tokenize(text: str) -> List[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 2."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if len(t) >= 2]


def load_textual_features(path, cfg: IngestConfig = IngestConfig(mode="textual"),
                          item_ids=None, allow_new_items=False, fmt=None) -> FeatureTable:
    """Count-vectorize ``item_id, text`` rows (texts concatenated per item).

    Tokens whose corpus-wide count is below ``cfg.min_token_count`` are
    discarded.
    """
    items, lookup = _item_table(item_ids, allow_new_items, path)
    vocab = _IdTable()
    counts: Dict[Tuple[int, int], int] = Counter()
    seen_rows = False
    for lineno, fields in _read_rows(path, fmt):
        if len(fields) < 1 or not fields[0]:
            raise ParseError("expected item_id, text", path, lineno)
        seen_rows = True
        i = lookup(fields[0], lineno)
        text = " ".join(fields[1:])
        for tok in tokenize(text):
            counts[(i, vocab.add(tok))] += 1
    if not seen_rows or not counts:
        raise EmptyFeatureSpace(f"no tokens in {path}")
    keys = list(counts)
    rows = [k[0] for k in keys]
    cols = [k[1] for k in keys]
    F = as_csr(sp.coo_matrix(([counts[k] for k in keys], (rows, cols)),
                             shape=(len(items), len(vocab))))
    totals = np.asarray(F.sum(axis=0)).ravel()
    F, names = _filter_columns(F, totals >= cfg.min_token_count, vocab.names())
    if not names:
        raise EmptyFeatureSpace(f"no token occurs at least {cfg.min_token_count} times")
    return FeatureTable(F, items.names(), names, None)


def _load_categories(path):
    cats = {}
    for lineno, fields in _read_rows(path):
        if len(fields) != 2:
            raise ParseError("expected feature, category", path, lineno)
        cats[fields[0]] = fields[1]
    return cats


def _pad_rows(M, n_rows):
    if M.shape[0] == n_rows:
        return M
    M = M.tocoo()
    return as_csr(sp.coo_matrix((M.data, (M.row, M.col)), shape=(n_rows, M.shape[1])))


def load_dataset(interactions_path, features_path, cfg: IngestConfig = IngestConfig(),
                 categories_path=None) -> Dataset:
    """Assemble a :class:`Dataset` from raw input files.

    Items that only occur in the feature file are appended after the
    interaction items (they are candidate cold items).
    """
    inter = load_interactions(interactions_path)
    loader = load_categorical_features if cfg.mode == "categorical" else load_textual_features
    feats = loader(features_path, cfg, item_ids=inter.item_ids, allow_new_items=True)
    n_items = len(feats.item_ids)
    R = _pad_rows(inter.matrix.T.tocsr(), n_items).T.tocsr()
    if cfg.binarize:
        R = R.copy()
        R.data[:] = 1.0
    cats = dict(feats.feature_categories or {})
    if categories_path is not None and Path(categories_path).exists():
        extra = _load_categories(categories_path)
        cats.update({k: v for k, v in extra.items() if k in set(feats.feature_names)})
    return Dataset(R, feats.matrix, inter.user_ids, feats.item_ids,
                   feats.feature_names, cats or None)


def load_dataset_dir(directory, cfg: IngestConfig = IngestConfig()) -> Dataset:
    """:func:`load_dataset` on ``interactions.tsv`` / ``features.tsv`` in a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no such dataset directory: {d}")
    return load_dataset(d / "interactions.tsv", d / "features.tsv", cfg, d / "categories.tsv")


def _fmt(x):
    return repr(float(x))


def write_dataset(dataset: Dataset, directory) -> Path:
    """Write the canonical layout; :func:`read_dataset` is its exact inverse."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    R = dataset.interactions
    with open(d / "interactions.tsv", "w", encoding="utf-8") as fh:
        fh.write("user_id\titem_id\tvalue\n")
        for u in range(R.shape[0]):
            lo, hi = R.indptr[u], R.indptr[u + 1]
            for j, v in zip(R.indices[lo:hi], R.data[lo:hi]):
                fh.write(f"{dataset.user_ids[u]}\t{dataset.item_ids[j]}\t{_fmt(v)}\n")
    F = dataset.features
    with open(d / "features.tsv", "w", encoding="utf-8") as fh:
        fh.write("item_id\tfeature\tvalue\n")
        for i in range(F.shape[0]):
            lo, hi = F.indptr[i], F.indptr[i + 1]
            for j, v in zip(F.indices[lo:hi], F.data[lo:hi]):
                fh.write(f"{dataset.item_ids[i]}\t{dataset.feature_names[j]}\t{_fmt(v)}\n")
    with open(d / "users.tsv", "w", encoding="utf-8") as fh:
        fh.write("user_id\n")
        fh.writelines(f"{name}\n" for name in dataset.user_ids)
    with open(d / "items.tsv", "w", encoding="utf-8") as fh:
        fh.write("item_id\n")
        fh.writelines(f"{name}\n" for name in dataset.item_ids)
    with open(d / "feature_names.tsv", "w", encoding="utf-8") as fh:
        fh.write("feature\n")
        fh.writelines(f"{name}\n" for name in dataset.feature_names)
    if dataset.feature_categories:
        with open(d / "categories.tsv", "w", encoding="utf-8") as fh:
            fh.write("feature\tcategory\n")
            for name in dataset.feature_names:
                if name in dataset.feature_categories:
                    fh.write(f"{name}\t{dataset.feature_categories[name]}\n")
    return d


def read_dataset(directory) -> Dataset:
    """Load a canonical dataset directory without any filtering."""
    d = Path(directory)
    if not (d / "interactions.tsv").exists():
        raise FileNotFoundError(f"no interactions.tsv in {d}")
    items = _IdTable(f[0] for _, f in _read_rows(d / "items.tsv")) \
        if (d / "items.tsv").exists() else _IdTable()
    feats = _IdTable(f[0] for _, f in _read_rows(d / "feature_names.tsv")) \
        if (d / "feature_names.tsv").exists() else _IdTable()
    users = _IdTable(f[0] for _, f in _read_rows(d / "users.tsv")) \
        if (d / "users.tsv").exists() else _IdTable()

    def triplets(path, row_table, col_table):
        rows, cols, vals = [], [], []
        for lineno, fields in _read_rows(path):
            if len(fields) != 3:
                raise ParseError("expected 3 fields", path, lineno)
            try:
                v = float(fields[2])
            except ValueError:
                raise ParseError(f"bad value {fields[2]!r}", path, lineno) from None
            rows.append(row_table.add(fields[0]))
            cols.append(col_table.add(fields[1]))
            vals.append(v)
        return rows, cols, vals

    r_rows, r_cols, r_vals = triplets(d / "interactions.tsv", users, items)
    if not r_vals:
        raise EmptyDataset(f"no interactions in {d}")
    f_rows, f_cols, f_vals = triplets(d / "features.tsv", items, feats)
    R = sp.coo_matrix((r_vals, (r_rows, r_cols)), shape=(len(users), len(items)))
    F = sp.coo_matrix((f_vals, (f_rows, f_cols)), shape=(len(items), len(feats)))
    cats = _load_categories(d / "categories.tsv") if (d / "categories.tsv").exists() else None
    return Dataset(as_csr(R), as_csr(F), users.names(), items.names(), feats.names(), cats)


def subset_items(dataset: Dataset, items: Sequence[int]) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Interaction columns and feature rows restricted to ``items``."""
    items = np.asarray(items, dtype=np.intp)
    return as_csr(dataset.interactions[:, items]), as_csr(dataset.features[items])
