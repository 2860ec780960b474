"""Dataset manifests and embedding tables.

A manifest is line-delimited JSON, one record per line, with keys
``id``, ``source``, ``age``, ``features`` (a flat map of feature name to
state string) and an optional ``path`` pointing at the image file. Records
from several source datasets can be concatenated into one pool; ids must be
unique within a manifest and every record must carry the same set of
feature names.

Embedding tables pair manifest ids with float32 row vectors. On disk they
are a small binary format: a 16-byte header (magic ``FEMB``, format version,
row count, dimension, all little-endian u32 after the magic) followed by
count*dim little-endian float32 values in row-major order, with a text
sidecar listing one id per line in row order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DataError

MAGIC = b"FEMB"
FORMAT_VERSION = 1
DEFAULT_LABEL_RANGE = (0, 100)


class GroupKey(NamedTuple):
    """One demographic cell: an age crossed with one feature's state."""

    age: int
    feature: str
    state: str


@dataclass
class Record:
    """One labeled sample in a pool manifest."""

    id: str
    source: str
    age: int
    features: dict[str, str]
    path: str | None = None


def _parse_record(obj: object, line_no: int, label_range: tuple[int, int]) -> Record:
    if not isinstance(obj, dict):
        raise DataError(f"manifest record is not an object, line {line_no}")
    for key in ("id", "source", "age", "features"):
        if key not in obj:
            raise DataError(f"missing '{key}', line {line_no}")
    rid = obj["id"]
    if not isinstance(rid, str) or not rid:
        raise DataError(f"id must be a non-empty string, line {line_no}")
    source = obj["source"]
    if not isinstance(source, str) or not source:
        raise DataError(f"source must be a non-empty string, line {line_no}")
    age = obj["age"]
    # bool is an int subclass; reject it explicitly
    if isinstance(age, bool) or not isinstance(age, int):
        raise DataError(f"age must be an integer, line {line_no}")
    lo, hi = label_range
    if not lo <= age <= hi:
        raise DataError(f"age {age} out of range [{lo}, {hi}], line {line_no}")
    features = obj["features"]
    if not isinstance(features, dict):
        raise DataError(f"features must be an object, line {line_no}")
    for name, state in features.items():
        if not isinstance(name, str) or not name:
            raise DataError(f"feature names must be non-empty strings, line {line_no}")
        if not isinstance(state, str) or not state:
            raise DataError(
                f"feature '{name}' has a missing or non-string state, line {line_no}"
            )
    path = obj.get("path")
    if path is not None and not isinstance(path, str):
        raise DataError(f"path must be a string when present, line {line_no}")
    return Record(id=rid, source=source, age=age, features=dict(features), path=path)


def load_manifest(
    path: str, *, label_range: tuple[int, int] = DEFAULT_LABEL_RANGE
) -> list[Record]:
    """Load and validate a JSONL manifest, preserving file order.

    Raises DataError naming the offending line for malformed JSON, bad
    field types, out-of-range ages, duplicate ids, or records whose feature
    names differ from the first record's.
    """
    records: list[Record] = []
    seen: dict[str, int] = {}
    schema: frozenset[str] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON, line {line_no}: {exc.msg}") from exc
            rec = _parse_record(obj, line_no, label_range)
            if rec.id in seen:
                raise DataError(
                    f"duplicate id '{rec.id}', lines {seen[rec.id]} and {line_no}"
                )
            seen[rec.id] = line_no
            names = frozenset(rec.features)
            if schema is None:
                schema = names
            elif names != schema:
                raise DataError(
                    f"feature names {sorted(names)} differ from first record's "
                    f"{sorted(schema)}, line {line_no}"
                )
            records.append(rec)
    return records


def save_manifest(records: Iterable[Record], path: str) -> None:
    """Write records as JSONL with canonical key order (round-trips exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj: dict[str, object] = {
                "id": rec.id,
                "source": rec.source,
                "age": rec.age,
                "features": dict(sorted(rec.features.items())),
            }
            if rec.path is not None:
                obj["path"] = rec.path
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def group_counts(
    records: Sequence[Record],
) -> tuple[dict[GroupKey, int], dict[tuple[GroupKey, str], int]]:
    """Count records per (age, feature, state) and per (group, source).

    Keys come back sorted (age ascending, then feature and state
    lexicographic, then source), so iteration order is deterministic.
    """
    per_group: dict[GroupKey, int] = {}
    per_source: dict[tuple[GroupKey, str], int] = {}
    for rec in records:
        for feature, state in rec.features.items():
            key = GroupKey(rec.age, feature, state)
            per_group[key] = per_group.get(key, 0) + 1
            skey = (key, rec.source)
            per_source[skey] = per_source.get(skey, 0) + 1
    per_group = dict(sorted(per_group.items()))
    per_source = dict(sorted(per_source.items()))
    return per_group, per_source


@dataclass
class EmbeddingTable:
    """Float32 embedding rows keyed by id, in row order."""

    ids: tuple[str, ...]
    rows: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.ids = tuple(self.ids)
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise DataError(f"embedding rows must be 2-D, got shape {rows.shape}")
        if rows.shape[1] < 1:
            raise DataError("embedding dimension must be at least 1")
        if len(self.ids) != rows.shape[0]:
            raise DataError(
                f"id count {len(self.ids)} does not match row count {rows.shape[0]}"
            )
        if len(set(self.ids)) != len(self.ids):
            dupes = sorted({i for i in self.ids if self.ids.count(i) > 1})
            raise DataError(f"duplicate embedding ids: {dupes[:5]}")
        if rows.size and not np.isfinite(rows).all():
            raise DataError("embedding rows contain NaN or Inf")
        self.rows = rows

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.ids)


def save_embeddings(table: EmbeddingTable, bin_path: str, ids_path: str) -> None:
    """Write the binary table and its id sidecar."""
    header = struct.pack("<4sIII", MAGIC, FORMAT_VERSION, len(table), table.dim)
    payload = np.ascontiguousarray(table.rows, dtype="<f4").tobytes()
    with open(bin_path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    with open(ids_path, "w", encoding="utf-8") as fh:
        for rid in table.ids:
            fh.write(rid + "\n")


def load_embeddings(bin_path: str, ids_path: str) -> EmbeddingTable:
    """Read a binary embedding table, validating header, payload, and ids."""
    with open(bin_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise DataError(f"truncated header: {len(header)} bytes, expected 16")
        magic, version, count, dim = struct.unpack("<4sIII", header)
        if magic != MAGIC:
            raise DataError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported format version {version}")
        if dim < 1:
            raise DataError("embedding dimension must be at least 1")
        payload = fh.read()
    expected = count * dim * 4
    if len(payload) != expected:
        raise DataError(
            f"payload length mismatch: expected {expected} bytes, found {len(payload)}"
        )
    rows = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    with open(ids_path, "r", encoding="utf-8") as fh:
        ids = [line.rstrip("\n") for line in fh]
    while ids and ids[-1] == "":
        ids.pop()
    if any(not rid for rid in ids):
        raise DataError("ids file contains an empty id line")
    if len(ids) != count:
        raise DataError(f"ids file lists {len(ids)} ids, header says {count}")
    return EmbeddingTable(ids=tuple(ids), rows=rows)
