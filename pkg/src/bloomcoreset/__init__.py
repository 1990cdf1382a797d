"""Bloom-filter screening plus top-k refinement for open-set coreset sampling."""

__version__ = "0.1.0"

from .bench import BenchReport, SyntheticSpec, generate, oracle_coreset, run_bench
from .cbf import CountingBloomFilter, FilterStats, HashFamily, deserialize, hash_index, load_filter, sized_for
from .embedding_io import binarize, load_matrix, normalize, write_matrix
from .estimator import BloomCoresetSampler
from .exceptions import (
    BloomCoresetError,
    DataError,
    DimError,
    EmptyCandidateError,
    EmptyInputError,
    FormatError,
    IoError,
    TruncationError,
)
from .sampler import (
    CandidateSet,
    CoresetSelection,
    SamplerConfig,
    ScoreTable,
    build_fingerprint,
    refine,
    sample_coreset,
    score,
    screen,
)

__all__ = [
    "BenchReport",
    "BloomCoresetError",
    "BloomCoresetSampler",
    "CandidateSet",
    "CoresetSelection",
    "CountingBloomFilter",
    "DataError",
    "DimError",
    "EmptyCandidateError",
    "EmptyInputError",
    "FilterStats",
    "FormatError",
    "HashFamily",
    "IoError",
    "SamplerConfig",
    "ScoreTable",
    "SyntheticSpec",
    "TruncationError",
    "binarize",
    "build_fingerprint",
    "deserialize",
    "generate",
    "hash_index",
    "load_filter",
    "load_matrix",
    "normalize",
    "oracle_coreset",
    "refine",
    "run_bench",
    "sample_coreset",
    "score",
    "screen",
    "sized_for",
    "write_matrix",
]
