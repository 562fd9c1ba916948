"""Sparse explicit-rating data: ingestion, cross-domain alignment, splits, statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .nncore import rng_stream

RATING_SCALE = (1.0, 5.0)
ALIGNED_MAGIC = "# darec-aligned v1"


class Rating(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int | None = None


@dataclass(frozen=True)
class RatingTriples:
    records: tuple[Rating, ...]

    def __len__(self) -> int:
        return len(self.records)

    def users(self) -> set[str]:
        return {r.user for r in self.records}


class DataError(ValueError):
    """Raised for malformed or inconsistent rating data."""


def ingest_csv(path, header: bool = False, scale: tuple[float, float] = RATING_SCALE) -> RatingTriples:
    """Parse ``user_id,item_id,rating[,timestamp]`` lines.

    A later line for the same (user, item) pair replaces the earlier one.
    """
    lo, hi = scale
    kept: dict[tuple[str, str], Rating] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) not in (3, 4):
                raise DataError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(row)}")
            user, item = row[0].strip(), row[1].strip()
            if not user or not item:
                raise DataError(f"{path}:{lineno}: empty user or item id")
            try:
                rating = float(row[2])
                ts = int(row[3]) if len(row) == 4 and row[3].strip() else None
            except ValueError:
                raise DataError(f"{path}:{lineno}: cannot parse {row!r}") from None
            if not np.isfinite(rating) or not lo <= rating <= hi:
                raise DataError(f"{path}:{lineno}: rating {rating} outside [{lo:g}, {hi:g}]")
            kept.pop((user, item), None)
            kept[(user, item)] = Rating(user, item, rating, ts)
    return RatingTriples(tuple(kept.values()))


class RatingMatrix:
    """users x items explicit ratings held as a CSR matrix.

    Stored entries are exactly the observed set; a separate structure-only
    matrix serves as the mask, so a stored value never doubles as "missing".
    """

    def __init__(self, csr: sp.csr_matrix, user_ids: Sequence[str], item_ids: Sequence[str]):
        csr = sp.csr_matrix(csr, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.shape != (len(user_ids), len(item_ids)):
            raise DataError(f"matrix shape {csr.shape} does not match id maps "
                            f"({len(user_ids)}, {len(item_ids)})")
        self.csr = csr
        self.user_ids = tuple(user_ids)
        self.item_ids = tuple(item_ids)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {it: i for i, it in enumerate(self.item_ids)}

    @classmethod
    def from_entries(cls, rows, cols, vals, user_ids, item_ids) -> "RatingMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keys = rows * max(len(item_ids), 1) + cols
        if len(np.unique(keys)) != len(keys):
            raise DataError("duplicate (user, item) entries")
        csr = sp.csr_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)),
                            shape=(len(user_ids), len(item_ids)))
        return cls(csr, user_ids, item_ids)

    @property
    def n_users(self) -> int:
        return self.csr.shape[0]

    @property
    def n_items(self) -> int:
        return self.csr.shape[1]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Observed entries as (rows, cols, values), sorted by row then column."""
        coo = self.csr.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data.copy()

    def subset(self, index: np.ndarray) -> "RatingMatrix":
        """Matrix with the same id maps holding only the entries at ``index``."""
        r, c, v = self.entries()
        return RatingMatrix.from_entries(r[index], c[index], v[index], self.user_ids, self.item_ids)

    def transpose(self) -> "RatingMatrix":
        return RatingMatrix(self.csr.T.tocsr(), self.item_ids, self.user_ids)

    def rows_dense(self, rows) -> tuple[np.ndarray, np.ndarray]:
        """Dense (values, mask) for the given row ordinals."""
        block = self.csr[np.asarray(rows)]
        values = block.toarray()
        pattern = block.copy()
        pattern.data = np.ones_like(pattern.data)
        return values, pattern.toarray()

    def user_vector(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= u < self.n_users:
            raise IndexError(f"user ordinal {u} out of range [0, {self.n_users})")
        values, mask = self.rows_dense([u])
        return values[0], mask[0]

    def item_vector(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= i < self.n_items:
            raise IndexError(f"item ordinal {i} out of range [0, {self.n_items})")
        col = self.csr[:, [i]].tocsc()
        values = col.toarray()[:, 0]
        mask = np.zeros(self.n_users)
        mask[col.indices] = 1.0
        return values, mask

    def row_counts(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    def __repr__(self) -> str:
        return f"RatingMatrix({self.n_users} users x {self.n_items} items, {self.nnz} ratings)"


class Stats(NamedTuple):
    users: int
    items: int
    ratings: int
    sparsity: float


def sparsity(n_users: int, n_items: int, n_ratings: int) -> float:
    if n_users <= 0 or n_items <= 0:
        raise DataError("sparsity undefined for a zero-dimension matrix")
    return 1.0 - n_ratings / (n_users * n_items)


def stats(m: RatingMatrix) -> Stats:
    return Stats(m.n_users, m.n_items, m.nnz, sparsity(m.n_users, m.n_items, m.nnz))


@dataclass(frozen=True)
class AlignedDataset:
    """Source and target matrices over one shared, identically ordered user set."""

    source: RatingMatrix
    target: RatingMatrix

    def __post_init__(self):
        if self.source.user_ids != self.target.user_ids:
            raise DataError("source and target must share one user index")

    @property
    def n_users(self) -> int:
        return self.source.n_users

    def domain(self, name: str) -> RatingMatrix:
        if name == "source":
            return self.source
        if name == "target":
            return self.target
        raise ValueError(f"unknown domain {name!r}")


def _counts(triples: RatingTriples) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in triples.records:
        counts[r.user] = counts.get(r.user, 0) + 1
    return counts


def _to_matrix(records: list[Rating], users: list[str]) -> RatingMatrix:
    uidx = {u: i for i, u in enumerate(users)}
    items = sorted({r.item for r in records})
    iidx = {it: i for i, it in enumerate(items)}
    rows = [uidx[r.user] for r in records]
    cols = [iidx[r.item] for r in records]
    vals = [r.rating for r in records]
    return RatingMatrix.from_entries(rows, cols, vals, users, items)


def align_domains(src: RatingTriples, tgt: RatingTriples, min_ratings: int = 5,
                  filter_before_intersection: bool = False) -> AlignedDataset:
    """Keep users present in both domains with at least ``min_ratings`` ratings in each.

    Items keep only if some kept user rated them; ordinals are rebuilt densely
    with ids in sorted order so the result does not depend on input order.
    With ``filter_before_intersection`` the per-domain threshold is applied to
    each domain's full user set first; the outcome is the same because a
    user's count in one domain does not depend on the other domain.
    """
    if min_ratings < 1:
        raise ValueError("min_ratings must be >= 1")
    cs, ct = _counts(src), _counts(tgt)
    if not set(cs) & set(ct):
        raise DataError("source and target share no users")
    if filter_before_intersection:
        s_ok = {u for u, n in cs.items() if n >= min_ratings}
        t_ok = {u for u, n in ct.items() if n >= min_ratings}
        shared = s_ok & t_ok
    else:
        shared = {u for u in set(cs) & set(ct) if cs[u] >= min_ratings and ct[u] >= min_ratings}
    if not shared:
        raise DataError("no users left after intersecting domains and applying min_ratings")
    users = sorted(shared)
    source = _to_matrix([r for r in src.records if r.user in shared], users)
    target = _to_matrix([r for r in tgt.records if r.user in shared], users)
    return AlignedDataset(source, target)


@dataclass(frozen=True)
class DomainSplit:
    """Indices into ``RatingMatrix.entries()`` order."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def check(self, n: int) -> None:
        allidx = np.concatenate([self.train, self.val, self.test])
        if len(allidx) != n or len(np.unique(allidx)) != n:
            raise DataError("split parts are not a disjoint cover of the observed entries")


@dataclass(frozen=True)
class Split:
    source: DomainSplit
    target: DomainSplit

    def domain(self, name: str) -> DomainSplit:
        return self.source if name == "source" else self.target


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5 + 1e-9))


def split_counts(n: int, train_frac: float, val_frac_of_train: float) -> tuple[int, int, int]:
    """(train, val, test) sizes: test is the rounded held-out share, val a share of the rest."""
    n_test = _half_up(n * (1.0 - train_frac))
    n_fit = n - n_test
    n_val = _half_up(n_fit * val_frac_of_train)
    return n_fit - n_val, n_val, n_test


def split(ds: AlignedDataset, train_frac: float = 0.9, val_frac_of_train: float = 0.1,
          seed: int = 0) -> Split:
    """Uniform random per-domain partition of observed entries into train/val/test."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    if not 0.0 <= val_frac_of_train < 1.0:
        raise ValueError("val_frac_of_train must lie in [0, 1)")
    parts = {}
    for name in ("source", "target"):
        n = ds.domain(name).nnz
        n_train, n_val, _ = split_counts(n, train_frac, val_frac_of_train)
        perm = rng_stream(seed, f"split.{name}").permutation(n)
        parts[name] = DomainSplit(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                                  np.sort(perm[n_train + n_val:]))
        parts[name].check(n)
    return Split(parts["source"], parts["target"])


def save_aligned(ds: AlignedDataset, path) -> None:
    """Write the portable aligned-dataset text file (layout documented in README)."""
    lines = [ALIGNED_MAGIC,
             f"users\t{ds.n_users}",
             f"source_items\t{ds.source.n_items}",
             f"target_items\t{ds.target.n_items}",
             f"source_ratings\t{ds.source.nnz}",
             f"target_ratings\t{ds.target.nnz}",
             "[users]"]
    lines += [f"{i}\t{u}" for i, u in enumerate(ds.source.user_ids)]
    for name in ("source", "target"):
        lines.append(f"[{name}_items]")
        lines += [f"{i}\t{it}" for i, it in enumerate(ds.domain(name).item_ids)]
    for name in ("source", "target"):
        lines.append(f"[{name}_ratings]")
        r, c, v = ds.domain(name).entries()
        lines += [f"{a}\t{b}\t{x:.17g}" for a, b, x in zip(r, c, v)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_aligned(path) -> AlignedDataset:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != ALIGNED_MAGIC:
        raise DataError(f"{path}: missing '{ALIGNED_MAGIC}' header")
    header: dict[str, int] = {}
    sections: dict[str, list[list[str]]] = {}
    current = None
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            key, _, val = line.partition("\t")
            try:
                header[key] = int(val)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad header line {line!r}") from None
        else:
            sections[current].append(line.split("\t"))

    def ids(section: str, expected: int) -> list[str]:
        rows = sections.get(section, [])
        if len(rows) != expected or [int(r[0]) for r in rows] != list(range(expected)):
            raise DataError(f"{path}: section [{section}] does not list ordinals 0..{expected - 1}")
        return [r[1] for r in rows]

    users = ids("users", header["users"])
    mats = {}
    for name in ("source", "target"):
        items = ids(f"{name}_items", header[f"{name}_items"])
        rows = sections.get(f"{name}_ratings", [])
        if len(rows) != header[f"{name}_ratings"]:
            raise DataError(f"{path}: [{name}_ratings] count does not match header")
        arr = np.array([[float(x) for x in r] for r in rows]).reshape(-1, 3)
        mats[name] = RatingMatrix.from_entries(arr[:, 0].astype(int), arr[:, 1].astype(int),
                                               arr[:, 2], users, items)
    return AlignedDataset(mats["source"], mats["target"])
