"""Observation sources, deduplication, dense indexing and the scan abstraction.

A source supports an unbounded number of independent sequential scans that
yield identical record sequences.  ``index_dataset`` makes one pass to assign
dense row/column indices in first-appearance order and to compute the
``DatasetProfile``; estimator passes then stream ``IndexedChunk`` batches.

File format: ``row_id,col_id,y,x1,...,xp`` (header optional), UTF-8, one
record per line, scientific notation accepted.  The intercept column is
synthesized by the reader and never stored in files, so the in-memory width
is p+1 for a file with p covariates.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Union

import numpy as np
import pandas as pd

from ._accum import DEFAULT_CHUNK_RECORDS
from .errors import (
    CrossedLmmError,
    DuplicateCellError,
    EmptyDatasetError,
    MalformedHeaderError,
    MissingInterceptError,
    NonFiniteError,
    ParseError,
    WidthMismatchError,
)
from .model import DatasetProfile, build_profile

HEADER_PREFIX = ("row_id", "col_id", "y")


@dataclass(frozen=True)
class RawChunk:
    """A parsed batch of records with original keys."""

    row_keys: np.ndarray
    col_keys: np.ndarray
    x: np.ndarray  # (n, width) float, intercept already prepended
    y: np.ndarray
    first_line: int  # 1-based line (or record position) of the first record


@dataclass(frozen=True)
class IndexedChunk:
    """A batch of records with dense row/column indices."""

    row_idx: np.ndarray
    col_idx: np.ndarray
    x: np.ndarray
    y: np.ndarray


class DedupPolicy(str, Enum):
    ASSUME_UNIQUE = "assume-unique"
    KEEP_LAST = "keep-last"
    KEEP_FIRST = "keep-first"
    ERROR = "error"


# --------------------------------------------------------------------------
# Sources
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSource:
    """Rescannable delimited file of observation tuples."""

    path: str
    p: int  # covariates stored in the file (intercept excluded)
    delimiter: str = ","
    has_header: bool = True

    @property
    def width(self) -> int:
        return self.p + 1

    def scan(self, chunk_records: int = DEFAULT_CHUNK_RECORDS) -> Iterator[RawChunk]:
        ncols = self.p + 3
        first_line = 2 if self.has_header else 1
        try:
            reader = pd.read_csv(
                self.path,
                sep=self.delimiter,
                header=None,
                skiprows=1 if self.has_header else 0,
                dtype=str,
                na_filter=False,
                chunksize=chunk_records,
                engine="c",
            )
            for frame in reader:
                yield self._parse_chunk(frame, ncols, first_line)
                first_line += len(frame)
        except pd.errors.ParserError as exc:
            raise ParseError(_line_from_pandas(exc, first_line), str(exc)) from exc
        except pd.errors.EmptyDataError:
            return

    def _parse_chunk(self, frame: pd.DataFrame, ncols: int, first_line: int) -> RawChunk:
        if frame.shape[1] != ncols:
            raise ParseError(
                first_line, f"expected {ncols} fields, saw {frame.shape[1]}"
            )
        cols = [frame.iloc[:, k].to_numpy(dtype=object) for k in range(ncols)]
        for k in (0, 1):
            bad = _bad_key_mask(cols[k])
            if bad.any():
                at = int(np.flatnonzero(bad)[0])
                raise ParseError(first_line + at, "empty or missing key field")
        n = len(frame)
        numeric = np.empty((n, ncols - 2), dtype=float)
        for k in range(2, ncols):
            numeric[:, k - 2] = _parse_numeric(cols[k], first_line)
        x = np.empty((n, self.width), dtype=float)
        x[:, 0] = 1.0
        x[:, 1:] = numeric[:, 1:]
        return RawChunk(
            row_keys=cols[0],
            col_keys=cols[1],
            x=x,
            y=numeric[:, 0],
            first_line=first_line,
        )


@dataclass(frozen=True)
class MemorySource:
    """In-memory observation arrays (x already carries the intercept)."""

    row_keys: np.ndarray
    col_keys: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise WidthMismatchError("x must be (n, width) aligned with y")
        if self.row_keys.shape[0] != self.y.shape[0] or self.col_keys.shape[0] != self.y.shape[0]:
            raise WidthMismatchError("key arrays must align with y")

    @property
    def width(self) -> int:
        return int(self.x.shape[1])

    def scan(self, chunk_records: int = DEFAULT_CHUNK_RECORDS) -> Iterator[RawChunk]:
        n = self.y.shape[0]
        for start in range(0, n, chunk_records):
            stop = min(start + chunk_records, n)
            yield RawChunk(
                row_keys=np.asarray(self.row_keys[start:stop], dtype=object),
                col_keys=np.asarray(self.col_keys[start:stop], dtype=object),
                x=self.x[start:stop],
                y=self.y[start:stop],
                first_line=start + 1,
            )


ScanSource = Union[CsvSource, MemorySource]


def open_source(
    path: str,
    p: int | None = None,
    delimiter: str = ",",
    has_header: bool = True,
) -> CsvSource:
    """Open a delimited file, validating the header and inferring p if absent."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise EmptyDatasetError(f"{path} is empty")
    fields = first.rstrip("\r\n").split(delimiter)
    if has_header:
        if len(fields) < 3 or tuple(fields[:3]) != HEADER_PREFIX:
            raise MalformedHeaderError(
                f"header must start with row_id{delimiter}col_id{delimiter}y, got {fields[:3]}"
            )
        inferred = len(fields) - 3
        if p is not None and p != inferred:
            raise MalformedHeaderError(f"header carries {inferred} covariates, expected {p}")
        p = inferred
    elif p is None:
        if len(fields) < 3:
            raise ParseError(1, f"expected at least 3 fields, saw {len(fields)}")
        p = len(fields) - 3
    return CsvSource(path=path, p=p, delimiter=delimiter, has_header=has_header)


def _bad_key_mask(keys: np.ndarray) -> np.ndarray:
    return pd.isna(keys) | (keys == "")


def _parse_numeric(raw: np.ndarray, first_line: int) -> np.ndarray:
    out = pd.to_numeric(pd.Series(raw), errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(out)
    if bad.any():
        at = int(np.flatnonzero(bad)[0])
        token = raw[at]
        if not isinstance(token, str) or token == "":  # short record, padded
            raise ParseError(first_line + at, "missing field")
        try:
            float(token)
        except ValueError:
            raise ParseError(first_line + at, f"cannot parse {token!r} as a number") from None
        raise NonFiniteError(f"line {first_line + at}: non-finite value {token!r}")
    return out


def _line_from_pandas(exc: Exception, default: int) -> int:
    import re

    m = re.search(r"line (\d+)", str(exc))
    return int(m.group(1)) if m else default


# --------------------------------------------------------------------------
# Indexing
# --------------------------------------------------------------------------


class _Indexer:
    """First-appearance dense index assignment with growing counts."""

    __slots__ = ("index", "counts")

    def __init__(self):
        self.index: dict = {}
        self.counts = np.zeros(0, dtype=np.int64)

    def assign(self, keys: np.ndarray) -> np.ndarray:
        codes, uniques = pd.factorize(keys)
        lut = np.empty(len(uniques), dtype=np.int64)
        idx = self.index
        for k, key in enumerate(uniques):
            lut[k] = idx.setdefault(key, len(idx))
        dense = lut[codes]
        if len(idx) > self.counts.shape[0]:
            grown = np.zeros(len(idx), dtype=np.int64)
            grown[: self.counts.shape[0]] = self.counts
            self.counts = grown
        self.counts += np.bincount(dense, minlength=self.counts.shape[0])
        return dense


@dataclass
class IndexedDataset:
    """A profiled source whose scans yield dense-indexed, deduplicated records."""

    source: ScanSource
    row_index: dict
    col_index: dict
    profile: DatasetProfile
    dedup_policy: DedupPolicy
    warnings: tuple[str, ...] = ()
    _keep_positions: np.ndarray | None = None
    _cache: tuple | None = None

    @property
    def width(self) -> int:
        return self.source.width

    def scan(self, chunk_records: int = DEFAULT_CHUNK_RECORDS) -> Iterator[IndexedChunk]:
        if self._cache is not None:
            row_idx, col_idx, x, y = self._cache
            n = y.shape[0]
            for start in range(0, n, chunk_records):
                stop = min(start + chunk_records, n)
                yield IndexedChunk(
                    row_idx=row_idx[start:stop],
                    col_idx=col_idx[start:stop],
                    x=x[start:stop],
                    y=y[start:stop],
                )
            return
        pos = 0
        for raw in self.source.scan(chunk_records):
            n = raw.y.shape[0]
            raw = self._apply_keep(raw, pos)
            pos += n
            if raw.y.shape[0] == 0:
                continue
            yield IndexedChunk(
                row_idx=_map_keys(raw.row_keys, self.row_index),
                col_idx=_map_keys(raw.col_keys, self.col_index),
                x=raw.x,
                y=raw.y,
            )

    def _apply_keep(self, raw: RawChunk, pos: int) -> RawChunk:
        if self._keep_positions is None:
            return raw
        n = raw.y.shape[0]
        lo = np.searchsorted(self._keep_positions, pos, side="left")
        hi = np.searchsorted(self._keep_positions, pos + n, side="left")
        sel = self._keep_positions[lo:hi] - pos
        return RawChunk(
            row_keys=raw.row_keys[sel],
            col_keys=raw.col_keys[sel],
            x=raw.x[sel],
            y=raw.y[sel],
            first_line=raw.first_line,
        )


def _map_keys(keys: np.ndarray, index: dict) -> np.ndarray:
    mapped = pd.Series(keys, dtype=object).map(index).to_numpy(dtype=float)
    if np.isnan(mapped).any():
        raise CrossedLmmError("scan produced a key unseen during indexing; source changed")
    return mapped.astype(np.int64)


def _validate_chunk(raw: RawChunk, width: int) -> None:
    if raw.x.shape[1] != width:
        raise WidthMismatchError(f"records carry width {raw.x.shape[1]}, expected {width}")
    finite = np.isfinite(raw.x).all(axis=1) & np.isfinite(raw.y)
    if not finite.all():
        at = int(np.flatnonzero(~finite)[0])
        raise NonFiniteError(f"record at line {raw.first_line + at} has a non-finite field")
    intercept_ok = raw.x[:, 0] == 1.0
    if not intercept_ok.all():
        at = int(np.flatnonzero(~intercept_ok)[0])
        raise MissingInterceptError(
            f"record at line {raw.first_line + at} has x[0] != 1"
        )


def index_dataset(
    source: ScanSource,
    dedup_policy: DedupPolicy = DedupPolicy.ASSUME_UNIQUE,
    chunk_records: int = DEFAULT_CHUNK_RECORDS,
) -> IndexedDataset:
    """Assign dense indices, compute the profile, and resolve duplicates.

    The default assume-unique policy skips duplicate tracking and runs in
    O(R+C) memory.  The other policies need O(#distinct cells) memory for
    the seen-cell map plus one extra pass to re-profile the surviving
    records.
    """
    keep: np.ndarray | None = None
    if dedup_policy != DedupPolicy.ASSUME_UNIQUE:
        keep = _dedup_positions(source, dedup_policy, chunk_records)

    rows = _Indexer()
    cols = _Indexer()
    pos = 0
    validate = keep is None  # with dedup, records were validated in the first pass
    for raw in source.scan(chunk_records):
        n = raw.y.shape[0]
        if validate:
            _validate_chunk(raw, source.width)
        if keep is not None:
            lo = np.searchsorted(keep, pos, side="left")
            hi = np.searchsorted(keep, pos + n, side="left")
            sel = keep[lo:hi] - pos
            rk, ck = raw.row_keys[sel], raw.col_keys[sel]
        else:
            rk, ck = raw.row_keys, raw.col_keys
        pos += n
        if rk.shape[0]:
            rows.assign(rk)
            cols.assign(ck)
    if not rows.index:
        raise EmptyDatasetError("source yielded no records")

    profile = build_profile(rows.counts[: len(rows.index)], cols.counts[: len(cols.index)])
    warnings = _degeneracy_flags(profile)
    ds = IndexedDataset(
        source=source,
        row_index=rows.index,
        col_index=cols.index,
        profile=profile,
        dedup_policy=dedup_policy,
        warnings=warnings,
        _keep_positions=keep,
    )
    if isinstance(source, MemorySource):
        ds._cache = _materialize_cache(ds, chunk_records)
    return ds


def _dedup_positions(
    source: ScanSource, policy: DedupPolicy, chunk_records: int
) -> np.ndarray:
    winners: dict = {}
    pos = 0
    for raw in source.scan(chunk_records):
        _validate_chunk(raw, source.width)
        for off, cell in enumerate(zip(raw.row_keys, raw.col_keys)):
            if cell in winners:
                if policy == DedupPolicy.ERROR:
                    raise DuplicateCellError(
                        f"cell {cell} repeated at line {raw.first_line + off}"
                    )
                if policy == DedupPolicy.KEEP_LAST:
                    winners[cell] = pos + off
            else:
                winners[cell] = pos + off
        pos += raw.y.shape[0]
    out = np.fromiter(winners.values(), dtype=np.int64, count=len(winners))
    out.sort()
    return out


def _degeneracy_flags(profile: DatasetProfile) -> tuple[str, ...]:
    flags = []
    if profile.r < 2:
        flags.append("degenerate-design: R < 2")
    if profile.c < 2:
        flags.append("degenerate-design: C < 2")
    if profile.eps_r > 0.5:
        flags.append("degenerate-design: eps_r > 1/2")
    if profile.eps_c > 0.5:
        flags.append("degenerate-design: eps_c > 1/2")
    return tuple(flags)


def _materialize_cache(ds: IndexedDataset, chunk_records: int) -> tuple:
    parts = list(ds.scan(chunk_records))
    return (
        np.concatenate([p.row_idx for p in parts]),
        np.concatenate([p.col_idx for p in parts]),
        np.concatenate([p.x for p in parts]),
        np.concatenate([p.y for p in parts]),
    )


def materialize(ds: IndexedDataset, max_records: int | None = None):
    """Collect all records of a dataset into dense arrays (small data only)."""
    if ds._cache is not None:
        row_idx, col_idx, x, y = ds._cache
    else:
        parts = list(ds.scan())
        row_idx = np.concatenate([p.row_idx for p in parts])
        col_idx = np.concatenate([p.col_idx for p in parts])
        x = np.concatenate([p.x for p in parts])
        y = np.concatenate([p.y for p in parts])
    if max_records is not None and y.shape[0] > max_records:
        raise CrossedLmmError(f"dataset has {y.shape[0]} records, guard is {max_records}")
    return row_idx, col_idx, x, y


def dataset_from_arrays(
    row_keys: np.ndarray,
    col_keys: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    dedup_policy: DedupPolicy = DedupPolicy.ASSUME_UNIQUE,
) -> IndexedDataset:
    """Index an in-memory dataset given raw key arrays."""
    src = MemorySource(
        row_keys=np.asarray(row_keys),
        col_keys=np.asarray(col_keys),
        x=np.ascontiguousarray(x, dtype=float),
        y=np.ascontiguousarray(y, dtype=float),
    )
    return index_dataset(src, dedup_policy)
