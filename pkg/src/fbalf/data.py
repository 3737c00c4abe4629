"""Rating file ingestion, degree filtering and train/test splitting.

A :class:`RatingDataset` stores ratings as three parallel arrays over dense
0-based user and item indices.  Splits keep the full index universe of the
parent dataset, so a train fold and its test fold can be fed to the same
model without re-indexing.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterator, NamedTuple, Sequence

import numpy as np

SEPARATORS = ("::", "\t", ",")


class ParseError(ValueError):
    """A malformed row in a rating file."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RatingTriple(NamedTuple):
    user: int
    item: int
    rating: float


@dataclass(frozen=True)
class IngestReport:
    rows: int = 0
    duplicates: int = 0
    blank: int = 0


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Sparse ratings over a dense user/item index universe.

    ``users``, ``items`` and ``ratings`` are aligned 1-D arrays.  ``user_ids``
    and ``item_ids`` map dense indices back to the external tokens.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    r_min: float
    r_max: float
    report: IngestReport = field(default_factory=IngestReport)
    cold: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def density(self) -> float:
        cells = self.n_users * self.n_items
        return len(self) / cells if cells else 0.0

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.r_min + self.r_max)

    def triples(self) -> Iterator[RatingTriple]:
        for u, i, r in zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()):
            yield RatingTriple(u, i, r)

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def by_user(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-user ``(items, ratings)`` with items in ascending index order."""
        order = np.lexsort((self.items, self.users))
        users = self.users[order]
        items = self.items[order]
        ratings = self.ratings[order]
        bounds = np.searchsorted(users, np.arange(self.n_users + 1))
        return [
            (items[bounds[u]:bounds[u + 1]], ratings[bounds[u]:bounds[u + 1]])
            for u in range(self.n_users)
        ]

    def subset(self, index: np.ndarray) -> "RatingDataset":
        """Triples at ``index``, keeping the same user/item universe."""
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            users=self.users[index],
            items=self.items[index],
            ratings=self.ratings[index],
            cold=None,
        )


@dataclass(frozen=True)
class SplitPlan:
    k: int
    seed: int
    folds: tuple[tuple[np.ndarray, np.ndarray], ...]

    def datasets(self, ds: RatingDataset, fold: int) -> tuple[RatingDataset, RatingDataset]:
        train_index, test_index = self.folds[fold]
        train = ds.subset(train_index)
        test = ds.subset(test_index)
        return train, mark_cold(train, test)


def _open(source) -> BinaryIO:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb")
    if isinstance(source, bytes):
        return io.BytesIO(source)
    return source


def parse_ratings(
    source,
    sep: str = "::",
    columns: Sequence[str] = ("user", "item", "rating"),
    header: bool = False,
    r_min: float | None = None,
    r_max: float | None = None,
    encoding: str = "latin-1",
) -> RatingDataset:
    """Read a delimited rating file.

    Parameters
    ----------
    source : path, bytes or binary stream
    sep : one of ``"::"``, tab or comma
    columns : names of the leading columns; must include ``user``, ``item``
        and ``rating``.  Any other names, and columns past the listed ones
        (e.g. a timestamp), are ignored.
    header : skip the first line
    r_min, r_max : override the rating bounds observed in the file

    External ids become dense indices in order of first appearance.  Only
    the first rating for a repeated (user, item) pair is kept; the number of
    dropped repeats is in ``report.duplicates``.
    """
    if sep not in SEPARATORS:
        raise ValueError(f"unsupported separator {sep!r}")
    columns = list(columns)
    try:
        cu, ci, cr = (columns.index(name) for name in ("user", "item", "rating"))
    except ValueError:
        raise ValueError("columns must name user, item and rating") from None
    width = max(cu, ci, cr) + 1

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    users: list[int] = []
    items: list[int] = []
    ratings: list[float] = []
    rows = duplicates = blank = 0

    stream = _open(source)
    try:
        for lineno, raw in enumerate(stream, start=1):
            if header and lineno == 1:
                continue
            line = raw.decode(encoding).strip()
            if not line:
                blank += 1
                continue
            parts = line.split(sep)
            if len(parts) < width:
                raise ParseError(lineno, f"expected at least {width} fields, got {len(parts)}")
            try:
                rating = float(parts[cr])
            except ValueError:
                raise ParseError(lineno, f"non-numeric rating {parts[cr]!r}") from None
            if not np.isfinite(rating):
                raise ParseError(lineno, f"non-finite rating {parts[cr]!r}")
            rows += 1
            u = user_index.setdefault(parts[cu].strip(), len(user_index))
            i = item_index.setdefault(parts[ci].strip(), len(item_index))
            if (u, i) in seen:
                duplicates += 1
                continue
            seen.add((u, i))
            users.append(u)
            items.append(i)
            ratings.append(rating)
    finally:
        if stream is not source:
            stream.close()

    values = np.asarray(ratings, dtype=np.float64)
    lo = r_min if r_min is not None else (float(values.min()) if len(values) else 0.0)
    hi = r_max if r_max is not None else (float(values.max()) if len(values) else 0.0)
    if len(values) and (values.min() < lo or values.max() > hi):
        raise ValueError(f"ratings fall outside the scale [{lo}, {hi}]")
    return RatingDataset(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        ratings=values,
        user_ids=tuple(user_index),
        item_ids=tuple(item_index),
        r_min=lo,
        r_max=hi,
        report=IngestReport(rows=rows, duplicates=duplicates, blank=blank),
    )


def from_arrays(users, items, ratings, r_min: float, r_max: float) -> RatingDataset:
    """Build a dataset from already dense integer indices.

    The universe is ``0..max(index)``; ids are the indices as strings.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    n_users = int(users.max()) + 1 if len(users) else 0
    n_items = int(items.max()) + 1 if len(items) else 0
    return RatingDataset(
        users=users,
        items=items,
        ratings=np.asarray(ratings, dtype=np.float64),
        user_ids=tuple(str(u) for u in range(n_users)),
        item_ids=tuple(str(i) for i in range(n_items)),
        r_min=float(r_min),
        r_max=float(r_max),
    )


def filter_min_degree(ds: RatingDataset, min_count: int) -> RatingDataset:
    """Drop users and items with fewer than ``min_count`` ratings.

    Removal is repeated until every surviving user and item meets the
    threshold, then indices are re-densified preserving relative order.
    """
    if min_count < 0:
        raise ValueError("min_count must be non-negative")
    keep = np.ones(len(ds), dtype=bool)
    while True:
        udeg = np.bincount(ds.users[keep], minlength=ds.n_users)
        ideg = np.bincount(ds.items[keep], minlength=ds.n_items)
        drop = keep & ((udeg[ds.users] < min_count) | (ideg[ds.items] < min_count))
        if not drop.any():
            break
        keep &= ~drop

    users = ds.users[keep]
    items = ds.items[keep]
    user_alive = np.zeros(ds.n_users, dtype=bool)
    user_alive[users] = True
    item_alive = np.zeros(ds.n_items, dtype=bool)
    item_alive[items] = True
    if min_count == 0:
        # users or items without any rating stay in the universe
        user_alive[:] = True
        item_alive[:] = True
    user_map = np.cumsum(user_alive) - 1
    item_map = np.cumsum(item_alive) - 1
    return replace(
        ds,
        users=user_map[users],
        items=item_map[items],
        ratings=ds.ratings[keep],
        user_ids=tuple(t for t, a in zip(ds.user_ids, user_alive) if a),
        item_ids=tuple(t for t, a in zip(ds.item_ids, item_alive) if a),
        cold=None,
    )


def mark_cold(train: RatingDataset, test: RatingDataset) -> RatingDataset:
    """Attach a mask of test triples whose user or item has no train rating."""
    known_users = np.zeros(test.n_users, dtype=bool)
    known_users[train.users] = True
    known_items = np.zeros(test.n_items, dtype=bool)
    known_items[train.items] = True
    cold = ~(known_users[test.users] & known_items[test.items])
    return replace(test, cold=cold)


def split_holdout(
    ds: RatingDataset, train_fraction: float = 0.8, seed: int = 0
) -> tuple[RatingDataset, RatingDataset]:
    """Seeded uniform train/test partition of the triples.

    The train side gets ``round(train_fraction * len(ds))`` triples.  The
    returned test set carries a ``cold`` mask (see :func:`mark_cold`).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_train = int(round(train_fraction * len(ds)))
    train = ds.subset(np.sort(order[:n_train]))
    test = ds.subset(np.sort(order[n_train:]))
    return train, mark_cold(train, test)


def make_kfold(ds: RatingDataset, k: int = 5, seed: int = 0) -> SplitPlan:
    """Shuffle once, cut into ``k`` near-equal contiguous chunks.

    Earlier chunks take the remainder, so 103 triples over 5 folds give
    test sizes 21, 21, 21, 20, 20.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(ds):
        raise ValueError(f"cannot make {k} folds from {len(ds)} triples")
    order = np.random.default_rng(seed).permutation(len(ds))
    chunks = np.array_split(order, k)
    folds = []
    for j, test in enumerate(chunks):
        train = np.concatenate([c for m, c in enumerate(chunks) if m != j])
        folds.append((np.sort(train), np.sort(test)))
    return SplitPlan(k=k, seed=seed, folds=tuple(folds))
