"""Interaction corpus handling: TSV ingestion, review cleaning, K-core
filtering, train/valid/test splitting with dense ID maps, and the REMB
binary review-embedding file format.

All functions are pure over immutable inputs and deterministic given their
seed arguments.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

REMB_MAGIC = b"REMB"
REMB_VERSION = 1

SPLIT_TRAIN = "train"
SPLIT_VALID = "valid"
SPLIT_TEST = "test"
SPLITS = (SPLIT_TRAIN, SPLIT_VALID, SPLIT_TEST)

DEFAULT_RATIOS = (0.8, 0.1, 0.1)


class CorpusError(ValueError):
    """Malformed input data or a violated corpus precondition."""


@dataclass(frozen=True)
class RawInteraction:
    """One observed user-item interaction, optionally carrying review text."""

    user_key: str
    item_key: str
    review_text: str | None = None

    def __post_init__(self) -> None:
        if not self.user_key or not self.item_key:
            raise CorpusError("user_key and item_key must be non-empty")


class Triple(NamedTuple):
    user_id: int
    item_id: int
    review_id: int | None
    split: str


@dataclass
class InteractionTable:
    """ID-mapped interactions with split tags.

    ``user_keys`` / ``item_keys`` are indexed by dense id; ``review_keys``
    maps review id to its ``"<user_key>::<item_key>"`` origin (review ids
    may be non-contiguous when the table was built from a pre-filter
    assignment, see :func:`assign_review_ids`).
    """

    num_users: int
    num_items: int
    triples: list[Triple]
    user_keys: list[str] = field(default_factory=list)
    item_keys: list[str] = field(default_factory=list)
    review_keys: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen_pairs: set[tuple[int, int]] = set()
        users_seen: set[int] = set()
        items_seen: set[int] = set()
        for t in self.triples:
            if not (0 <= t.user_id < self.num_users):
                raise CorpusError(f"user_id {t.user_id} out of range")
            if not (0 <= t.item_id < self.num_items):
                raise CorpusError(f"item_id {t.item_id} out of range")
            if t.review_id is not None and t.review_id < 0:
                raise CorpusError(f"negative review_id {t.review_id}")
            if t.split not in SPLITS:
                raise CorpusError(f"unknown split tag {t.split!r}")
            pair = (t.user_id, t.item_id)
            if pair in seen_pairs:
                raise CorpusError(f"duplicate (user, item) pair {pair}")
            seen_pairs.add(pair)
            users_seen.add(t.user_id)
            items_seen.add(t.item_id)
        if len(users_seen) != self.num_users or len(items_seen) != self.num_items:
            raise CorpusError("every user and item must appear in at least one triple")

    def triples_of(self, split: str) -> list[Triple]:
        return [t for t in self.triples if t.split == split]

    def user_items(self, split: str = SPLIT_TRAIN) -> list[set[int]]:
        """Per-user item sets for one split, indexed by user id."""
        out: list[set[int]] = [set() for _ in range(self.num_users)]
        for t in self.triples:
            if t.split == split:
                out[t.user_id].add(t.item_id)
        return out


@dataclass
class ReviewEmbeddingStore:
    """Review id -> d-dimensional vector map.

    Vectors are float32, matching the on-disk REMB precision, so that
    write/load round-trips are bit-exact. Pooling happens in float64.
    """

    dim: int
    vectors: dict[int, np.ndarray]

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise CorpusError("embedding dim must be >= 1")
        for rid, vec in self.vectors.items():
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (self.dim,):
                raise CorpusError(f"review {rid}: expected {self.dim} components, got {vec.shape}")
            if not np.isfinite(vec).all():
                raise CorpusError(f"review {rid}: non-finite component")
            self.vectors[rid] = vec

    def vector(self, review_id: int) -> np.ndarray:
        try:
            return self.vectors[review_id]
        except KeyError:
            raise CorpusError(f"review id {review_id} not in embedding store") from None

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, review_id: int) -> bool:
        return review_id in self.vectors


def load_interactions(path: str | Path) -> list[RawInteraction]:
    """Parse an interactions TSV: ``user_key<TAB>item_key[<TAB>review_text]``.

    An empty third field counts as an absent review. Raises
    :class:`CorpusError` with the offending line number on malformed lines
    and on an empty file.
    """
    rows: list[RawInteraction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise CorpusError(
                    f"{path}: line {lineno}: expected 2 or 3 tab-separated fields, got {len(fields)}"
                )
            user_key, item_key = fields[0], fields[1]
            if not user_key or not item_key:
                raise CorpusError(f"{path}: line {lineno}: empty user or item key")
            review = fields[2] if len(fields) == 3 and fields[2] else None
            rows.append(RawInteraction(user_key, item_key, review))
    if not rows:
        raise CorpusError(f"{path}: empty interactions file")
    return rows


def _has_letter(text: str) -> bool:
    return any(ch.isalpha() for ch in text)


def clean_reviews(rows: list[RawInteraction]) -> list[RawInteraction]:
    """Drop review texts that contain no Unicode letter; keep the interaction."""
    out: list[RawInteraction] = []
    for row in rows:
        if row.review_text is not None and not _has_letter(row.review_text):
            row = RawInteraction(row.user_key, row.item_key, None)
        out.append(row)
    return out


def kcore_filter(rows: list[RawInteraction], k: int) -> list[RawInteraction]:
    """Maximal subset where every surviving user and item has >= k interactions.

    Iterative deletion to fixpoint; may return an empty list.
    """
    if k < 1:
        raise CorpusError("k must be >= 1")
    cur = list(rows)
    while True:
        user_deg = Counter(r.user_key for r in cur)
        item_deg = Counter(r.item_key for r in cur)
        kept = [r for r in cur if user_deg[r.user_key] >= k and item_deg[r.item_key] >= k]
        if len(kept) == len(cur):
            return kept
        cur = kept


def assign_review_ids(rows: list[RawInteraction]) -> dict[tuple[str, str], int]:
    """Review ids in first-appearance order over rows that carry a review.

    The id of a review is a function of the cleaned row list only, so a
    table built from a filtered subset of ``rows`` still references the
    same ids as an embedding file produced from the full list.
    """
    ids: dict[tuple[str, str], int] = {}
    for row in rows:
        if row.review_text is None:
            continue
        key = (row.user_key, row.item_key)
        if key in ids:
            raise CorpusError(f"duplicate reviewed pair {key}")
        ids[key] = len(ids)
    return ids


def _allocate_counts(n: int, ratios: tuple[float, float, float]) -> list[int]:
    # largest-remainder apportionment, ties to the earlier split
    raw = [n * r for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    # no split may end up empty: steal from the largest
    while min(counts) == 0:
        counts[counts.index(max(counts))] -= 1
        counts[counts.index(min(counts))] += 1
    return counts


def split(
    rows: list[RawInteraction],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    review_ids: dict[tuple[str, str], int] | None = None,
) -> InteractionTable:
    """Tag each interaction train/valid/test and build dense ID maps.

    Deterministic given ``seed``. IDs are assigned in first-appearance
    order over the full input; users/items landing only in valid/test
    still get ids. ``review_ids`` may carry a pre-filter assignment (see
    :func:`assign_review_ids`); otherwise ids are assigned from ``rows``.
    """
    if len(rows) < 3:
        raise CorpusError("need at least 3 interactions to populate all splits")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise CorpusError("ratios must be 3 non-negative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"ratios must sum to 1, got {sum(ratios)}")

    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    for row in rows:
        user_ids.setdefault(row.user_key, len(user_ids))
        item_ids.setdefault(row.item_key, len(item_ids))
    if review_ids is None:
        review_ids = assign_review_ids(rows)

    n = len(rows)
    counts = _allocate_counts(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    tags: list[str] = [""] * n
    offset = 0
    for split_name, count in zip(SPLITS, counts):
        for pos in order[offset : offset + count]:
            tags[pos] = split_name
        offset += count

    triples: list[Triple] = []
    review_keys: dict[int, str] = {}
    for rowi, row in enumerate(rows):
        rid: int | None = None
        if row.review_text is not None:
            key = (row.user_key, row.item_key)
            if key not in review_ids:
                raise CorpusError(f"review id assignment is missing pair {key}")
            rid = review_ids[key]
            review_keys[rid] = f"{row.user_key}::{row.item_key}"
        triples.append(Triple(user_ids[row.user_key], item_ids[row.item_key], rid, tags[rowi]))

    return InteractionTable(
        num_users=len(user_ids),
        num_items=len(item_ids),
        triples=triples,
        user_keys=list(user_ids),
        item_keys=list(item_ids),
        review_keys=review_keys,
    )


# --- REMB binary format ----------------------------------------------------
# magic "REMB", u32 version=1, u32 dim, u64 count,
# then count records of (u64 review_id, dim x f32), little-endian.

_REMB_HEADER = struct.Struct("<4sIIQ")
_REMB_ID = struct.Struct("<Q")


def load_embedding_file(path: str | Path) -> ReviewEmbeddingStore:
    """Load and validate a REMB file."""
    data = Path(path).read_bytes()
    if len(data) < _REMB_HEADER.size:
        raise CorpusError(f"{path}: truncated header")
    magic, version, dim, count = _REMB_HEADER.unpack_from(data, 0)
    if magic != REMB_MAGIC:
        raise CorpusError(f"{path}: bad magic {magic!r}")
    if version != REMB_VERSION:
        raise CorpusError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise CorpusError(f"{path}: invalid dim {dim}")
    record_size = _REMB_ID.size + 4 * dim
    expected = _REMB_HEADER.size + record_size * count
    if len(data) != expected:
        raise CorpusError(f"{path}: expected {expected} bytes for {count} records, got {len(data)}")

    vectors: dict[int, np.ndarray] = {}
    offset = _REMB_HEADER.size
    for _ in range(count):
        (rid,) = _REMB_ID.unpack_from(data, offset)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset + _REMB_ID.size)
        if rid in vectors:
            raise CorpusError(f"{path}: duplicate review id {rid}")
        if not np.isfinite(vec).all():
            raise CorpusError(f"{path}: non-finite value in record for review id {rid}")
        vectors[rid] = vec.astype(np.float32)
        offset += record_size
    return ReviewEmbeddingStore(dim=dim, vectors=vectors)


def write_embedding_file(store: ReviewEmbeddingStore, path: str | Path) -> None:
    """Write a store as a REMB file (records sorted by review id)."""
    with open(path, "wb") as fh:
        fh.write(_REMB_HEADER.pack(REMB_MAGIC, REMB_VERSION, store.dim, len(store.vectors)))
        for rid in sorted(store.vectors):
            fh.write(_REMB_ID.pack(rid))
            fh.write(store.vectors[rid].astype("<f4").tobytes())


# --- prepared-directory interchange ----------------------------------------

USERS_MAP = "users.map.tsv"
ITEMS_MAP = "items.map.tsv"
REVIEWS_MAP = "reviews.map.tsv"
SPLIT_FILES = {SPLIT_TRAIN: "train.tsv", SPLIT_VALID: "valid.tsv", SPLIT_TEST: "test.tsv"}


def write_id_maps(table: InteractionTable, outdir: str | Path) -> None:
    outdir = Path(outdir)
    for name, keys in ((USERS_MAP, table.user_keys), (ITEMS_MAP, table.item_keys)):
        with open(outdir / name, "w", encoding="utf-8") as fh:
            for dense_id, key in enumerate(keys):
                fh.write(f"{dense_id}\t{key}\n")
    with open(outdir / REVIEWS_MAP, "w", encoding="utf-8") as fh:
        for rid in sorted(table.review_keys):
            fh.write(f"{rid}\t{table.review_keys[rid]}\n")


def write_split_files(table: InteractionTable, outdir: str | Path) -> None:
    outdir = Path(outdir)
    for split_name, fname in SPLIT_FILES.items():
        with open(outdir / fname, "w", encoding="utf-8") as fh:
            for t in table.triples:
                if t.split != split_name:
                    continue
                if t.review_id is None:
                    fh.write(f"{t.user_id}\t{t.item_id}\n")
                else:
                    fh.write(f"{t.user_id}\t{t.item_id}\t{t.review_id}\n")


def _read_map(path: Path) -> list[str]:
    keys: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            dense, key = line.rstrip("\r\n").split("\t", 1)
            keys[int(dense)] = key
    return [keys[i] for i in range(len(keys))]


def load_prepared(directory: str | Path) -> InteractionTable:
    """Rebuild an InteractionTable from a prepared output directory."""
    directory = Path(directory)
    user_keys = _read_map(directory / USERS_MAP)
    item_keys = _read_map(directory / ITEMS_MAP)
    review_keys: dict[int, str] = {}
    reviews_path = directory / REVIEWS_MAP
    if reviews_path.exists():
        with open(reviews_path, encoding="utf-8") as fh:
            for line in fh:
                rid, key = line.rstrip("\r\n").split("\t", 1)
                review_keys[int(rid)] = key

    triples: list[Triple] = []
    for split_name, fname in SPLIT_FILES.items():
        with open(directory / fname, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                fields = line.rstrip("\r\n").split("\t")
                if len(fields) not in (2, 3):
                    raise CorpusError(f"{fname}: line {lineno}: expected 2 or 3 fields")
                rid = int(fields[2]) if len(fields) == 3 else None
                triples.append(Triple(int(fields[0]), int(fields[1]), rid, split_name))

    return InteractionTable(
        num_users=len(user_keys),
        num_items=len(item_keys),
        triples=triples,
        user_keys=user_keys,
        item_keys=item_keys,
        review_keys=review_keys,
    )
