"""Record-oriented dataset files and the two measurement paths over them.

File layout (all integers little-endian):

    magic   8 bytes  b"PALMDS1\\x00"
    count   u64      number of records
    record  u32 length + raw bytes, repeated count times

A dataset is measured either as a whole (plain SHA3-256 over the file
bytes, for data that is loaded into protected memory up front) or as a
multiset hash folded record-by-record at the moment each record is
sampled from the mapping (for data that stays outside and is pulled in
lazily). The mapped path enforces an exactly-once epoch: every record
index must be sampled precisely one time before the digest can be
finalized, so a swapped or re-served record after measurement cannot go
unnoticed and a withheld record blocks finalization.
"""

from __future__ import annotations

import hashlib
import mmap
import os
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .encoding import Reader, u32, u64
from .errors import (
    DuplicateAccess,
    FormatError,
    IncompleteEpoch,
    IndexOutOfRange,
    ParamsMismatch,
)
from .msh import DEFAULT_PARAMS, MshAccumulator, MshDigest, MshParams

MAGIC = b"PALMDS1\x00"
HEADER_LEN = len(MAGIC) + 8


@dataclass(frozen=True)
class DatasetHash:
    """Measurement of a dataset: either one plain digest or a multiset digest."""

    kind: str  # "plain" | "multiset"
    plain: Optional[bytes] = None
    multiset: Optional[MshDigest] = None

    def encode(self) -> bytes:
        if self.kind == "plain":
            return self.plain
        return self.multiset.encode()

    def hex(self) -> str:
        return self.encode().hex()


def pack_records(records: Sequence[bytes]) -> bytes:
    """Serialize records into the container format."""
    out = bytearray(MAGIC)
    out += u64(len(records))
    for record in records:
        out += u32(len(record))
        out += record
    return bytes(out)


def write_dataset(path: str | os.PathLike, records: Sequence[bytes]) -> None:
    with open(path, "wb") as f:
        f.write(pack_records(records))


def unpack_records(data: bytes) -> tuple[bytes, ...]:
    """Parse container bytes back into records, validating the full layout."""
    r = Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("bad magic")
    count = r.u64()
    records = tuple(r.lp() for _ in range(count))
    r.expect_end()
    return records


class InMemoryDataset:
    """Dataset loaded whole; measured by one plain hash over the file bytes."""

    mode = "inmem"

    def __init__(self, records: tuple[bytes, ...], file_bytes: bytes):
        self.records = records
        self.file_bytes_hash = hashlib.sha3_256(file_bytes).digest()

    def __len__(self) -> int:
        return len(self.records)

    def dataset_hash(self) -> DatasetHash:
        return DatasetHash(kind="plain", plain=self.file_bytes_hash)


def load_in_memory(path: str | os.PathLike) -> InMemoryDataset:
    with open(path, "rb") as f:
        data = f.read()
    return InMemoryDataset(unpack_records(data), data)


class MappedDataset:
    """Dataset left on disk behind a memory mapping, measured at sample time.

    Opening scans only the length prefixes to build an offset index; record
    bytes are first read (and first measured) when sample_record pulls them.
    The access bitmap admits each index exactly once per epoch.
    """

    mode = "mapped"

    def __init__(self, path: str | os.PathLike, params: MshParams = DEFAULT_PARAMS):
        self.path = os.fspath(path)
        self.params = params
        self._file = open(self.path, "rb")
        try:
            self._map = mmap.mmap(self._file.fileno(), 0, access=mmap.ACCESS_READ)
        except Exception:
            self._file.close()
            raise
        self._spans = self._scan_index()
        self._seen = bytearray((len(self._spans) + 7) // 8)
        self._lock = threading.Lock()
        self.accumulator = MshAccumulator(params)

    def _scan_index(self) -> list[tuple[int, int]]:
        view = self._map
        if len(view) < HEADER_LEN or view[: len(MAGIC)] != MAGIC:
            raise FormatError("bad magic")
        count = int.from_bytes(view[len(MAGIC) : HEADER_LEN], "little")
        spans = []
        pos = HEADER_LEN
        end = len(view)
        for _ in range(count):
            if pos + 4 > end:
                raise FormatError("truncated record length")
            length = int.from_bytes(view[pos : pos + 4], "little")
            pos += 4
            if pos + length > end:
                raise FormatError("truncated record bytes")
            spans.append((pos, length))
            pos += length
        if pos != end:
            raise FormatError(f"{end - pos} trailing bytes after last record")
        return spans

    def __len__(self) -> int:
        return len(self._spans)

    def _claim(self, index: int) -> None:
        byte, bit = divmod(index, 8)
        with self._lock:
            if self._seen[byte] & (1 << bit):
                raise DuplicateAccess(f"record {index} already sampled this epoch")
            self._seen[byte] |= 1 << bit

    def sample_record(self, index: int, into: Optional[MshAccumulator] = None) -> bytes:
        """Read record bytes from the mapping and fold them into an accumulator.

        The fold happens on the bytes actually returned to the caller, at the
        time of the call; whatever the pipeline consumes is what got measured.
        """
        if not 0 <= index < len(self._spans):
            raise IndexOutOfRange(f"index {index} not in [0, {len(self._spans)})")
        self._claim(index)
        offset, length = self._spans[index]
        record = bytes(self._map[offset : offset + length])
        (into if into is not None else self.accumulator).insert(record)
        return record

    def missing_indices(self) -> list[int]:
        missing = []
        for index in range(len(self._spans)):
            byte, bit = divmod(index, 8)
            if not self._seen[byte] & (1 << bit):
                missing.append(index)
        return missing

    def close(self) -> None:
        self._map.close()
        self._file.close()

    def __enter__(self) -> "MappedDataset":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def finish_epoch(
    ds: MappedDataset, partials: Iterable[MshAccumulator] = ()
) -> DatasetHash:
    """Finalize a mapped epoch, merging any per-worker partial accumulators.

    Raises IncompleteEpoch unless every record index was sampled exactly once
    (duplicates were already rejected at sample time).
    """
    missing = ds.missing_indices()
    if missing:
        raise IncompleteEpoch(missing)
    total = ds.accumulator
    for partial in partials:
        total = total.merge(partial)
    if total.count != len(ds):
        # Bitmap says complete but the fold count disagrees: a partial was
        # double-merged or fed records from elsewhere.
        raise ParamsMismatch(
            f"accumulated {total.count} records for a {len(ds)}-record epoch"
        )
    return DatasetHash(kind="multiset", multiset=total.finalize())


def tamper_record(path: str | os.PathLike, index: int, new_bytes: bytes) -> None:
    """Rewrite one record in place on disk (test harness for tamper scenarios).

    The file is modified through the existing inode so already-open mappings
    observe the change, which is the situation mid-epoch tampering needs.
    """
    with open(path, "r+b") as f:
        data = f.read()
        records = list(unpack_records(data))
        if not 0 <= index < len(records):
            raise IndexOutOfRange(f"index {index} not in [0, {len(records)})")
        records[index] = new_bytes
        f.seek(0)
        f.write(pack_records(records))
        f.truncate()
