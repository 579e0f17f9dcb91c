"""PE featurization: structured header parsing, raw-byte statistics and
feature hashing, assembled into a fixed 2,381-dim vector."""

from .hashing import HASH_SEED, hash_bucket, murmur3_32
from .parser import ParseFailure, PeSummary, SectionInfo, parse_pe
from .rawstats import RawStats, raw_stats
from .vectorize import FEATURE_DIM, GROUP_DIMS, GROUP_OFFSETS, FeatureVector, vectorize

__all__ = [
    "HASH_SEED", "hash_bucket", "murmur3_32",
    "ParseFailure", "PeSummary", "SectionInfo", "parse_pe",
    "RawStats", "raw_stats",
    "FEATURE_DIM", "GROUP_DIMS", "GROUP_OFFSETS", "FeatureVector", "vectorize",
]
