"""Offline review-text encoder: sentence embeddings, dimensionality
projection, and REMB file output for the recommender training engine."""

__version__ = "0.1.0"

from .encode import EncodeError, EncodeJob, EncodeResult, encode, read_reviews
from .remb import write_remb

__all__ = ["EncodeError", "EncodeJob", "EncodeResult", "encode", "read_reviews", "write_remb"]
