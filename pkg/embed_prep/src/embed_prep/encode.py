"""Offline review encoding: read an interactions TSV, clean review texts,
encode each distinct review with a sentence encoder, project to the target
dimension, and emit a REMB file plus the reviews.map.tsv sidecar.

Review ids follow first-appearance order over the cleaned rows, the same
convention the training engine uses, so the emitted file lines up with the
engine's tables regardless of how the engine later filters interactions.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .remb import write_remb


class EncodeError(RuntimeError):
    """Encoding failed after a retry; carries the offending review ids."""

    def __init__(self, message: str, review_ids: list[int]):
        super().__init__(message)
        self.review_ids = review_ids


@dataclass(frozen=True)
class Review:
    review_id: int
    user_key: str
    item_key: str
    text: str


@dataclass(frozen=True)
class EncodeJob:
    input_path: str
    model: str
    target_dim: int
    projection: str = "pca"  # pca | truncate
    batch_size: int = 32
    seed: int = 0
    output_path: str = "reviews.remb"

    def __post_init__(self) -> None:
        if self.target_dim < 1:
            raise ValueError("target_dim must be >= 1")
        if self.projection not in ("pca", "truncate"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def read_reviews(path: str | Path) -> list[Review]:
    """Parse the interactions TSV and enumerate cleaned reviews.

    A review whose text has no Unicode letter is treated as absent (the
    engine's cleaning rule); ids count only surviving reviews, in file order.
    """
    reviews: list[Review] = []
    seen_pairs: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\r\n").split("\t")
            if len(fields) not in (2, 3):
                raise ValueError(f"{path}: line {lineno}: expected 2 or 3 tab-separated fields")
            user_key, item_key = fields[0], fields[1]
            if not user_key or not item_key:
                raise ValueError(f"{path}: line {lineno}: empty user or item key")
            text = fields[2] if len(fields) == 3 else ""
            if not any(ch.isalpha() for ch in text):
                continue
            pair = (user_key, item_key)
            if pair in seen_pairs:
                raise ValueError(f"{path}: line {lineno}: duplicate reviewed pair {pair}")
            seen_pairs.add(pair)
            reviews.append(Review(len(reviews), user_key, item_key, text))
    return reviews


# --- encoders ---------------------------------------------------------------

_HASH_MODEL = re.compile(r"^hash(\d+)$")


class HashEncoder:
    """Deterministic offline stand-in: text -> seeded Gaussian vector.

    Useful for tests and air-gapped runs; the vector is a pure function of
    the text, so equal reviews encode equally.
    """

    def __init__(self, dim: int):
        self.dim = dim

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            out[row] = rng.normal(size=self.dim).astype(np.float32)
        return out


class SentenceEncoder:
    """Thin wrapper over a sentence-transformers model (lazy import)."""

    def __init__(self, model_name: str):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_name)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        return np.asarray(self._model.encode(texts, show_progress_bar=False), dtype=np.float32)


def resolve_encoder(model: str):
    match = _HASH_MODEL.match(model)
    if match:
        return HashEncoder(int(match.group(1)))
    return SentenceEncoder(model)


def encode_batches(reviews: list[Review], encoder, batch_size: int) -> np.ndarray:
    """Encode in batches; one retry per failed batch, then fail with the ids."""
    chunks: list[np.ndarray] = []
    for start in range(0, len(reviews), batch_size):
        batch = reviews[start : start + batch_size]
        texts = [r.text for r in batch]
        try:
            vecs = encoder.encode(texts)
        except Exception:
            try:
                vecs = encoder.encode(texts)
            except Exception as exc:
                ids = [r.review_id for r in batch]
                raise EncodeError(f"encoding failed twice for review ids {ids}: {exc}", ids) from exc
        vecs = np.asarray(vecs, dtype=np.float32)
        if vecs.shape != (len(batch), encoder.dim):
            raise EncodeError(
                f"encoder returned shape {vecs.shape}, expected {(len(batch), encoder.dim)}",
                [r.review_id for r in batch],
            )
        chunks.append(vecs)
    if not chunks:
        return np.zeros((0, encoder.dim), dtype=np.float32)
    return np.vstack(chunks)


# --- projection ---------------------------------------------------------------


def pca_project(vectors: np.ndarray, target_dim: int) -> np.ndarray:
    """Center, fit a full SVD on all vectors, keep the top components.

    Deterministic (no randomized solver). If the data rank is below
    target_dim the missing components are zero-padded.
    """
    x = vectors.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:target_dim]
    projected = centered @ components.T
    if projected.shape[1] < target_dim:
        pad = np.zeros((projected.shape[0], target_dim - projected.shape[1]))
        projected = np.hstack([projected, pad])
    return projected.astype(np.float32)


def project(vectors: np.ndarray, target_dim: int, mode: str) -> np.ndarray:
    native_dim = vectors.shape[1]
    if target_dim > native_dim:
        raise ValueError(f"target_dim {target_dim} exceeds encoder dim {native_dim}")
    if target_dim == native_dim:
        return vectors.astype(np.float32)  # no-op projection
    if mode == "truncate":
        return vectors[:, :target_dim].astype(np.float32)
    return pca_project(vectors, target_dim)


# --- job driver ----------------------------------------------------------------


@dataclass
class EncodeResult:
    reviews: list[Review]
    vectors: dict[int, np.ndarray] = field(default_factory=dict)
    output_path: str = ""
    map_path: str = ""


def encode(job: EncodeJob) -> EncodeResult:
    """Run the full job: read, encode, project, write REMB + reviews.map.tsv."""
    reviews = read_reviews(job.input_path)
    if not reviews:
        raise ValueError(f"{job.input_path}: no usable reviews after cleaning")
    encoder = resolve_encoder(job.model)
    raw = encode_batches(reviews, encoder, job.batch_size)
    projected = project(raw, job.target_dim, job.projection)

    vectors = {r.review_id: projected[k] for k, r in enumerate(reviews)}
    write_remb(vectors, job.target_dim, job.output_path)
    map_path = str(Path(job.output_path).with_name("reviews.map.tsv"))
    with open(map_path, "w", encoding="utf-8") as fh:
        for r in reviews:
            fh.write(f"{r.review_id}\t{r.user_key}::{r.item_key}\n")
    return EncodeResult(reviews=reviews, vectors=vectors, output_path=str(job.output_path), map_path=map_path)
