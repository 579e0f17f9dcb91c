"""Statistics computed from raw bytes, independent of PE structure.

These survive arbitrarily corrupted headers, which is why the vectorizer
can always populate them even when structured parsing fails.
"""

from dataclasses import dataclass, field

import numpy as np

ENTROPY_WINDOW = 2048
ENTROPY_STRIDE = 1024

# Maximal runs of printable ASCII, length >= 5.
_PRINTABLE_LO = 0x20
_PRINTABLE_HI = 0x7E

import re

_RE_STRINGS = re.compile(rb"[\x20-\x7e]{5,}")
_RE_PATHS = re.compile(rb"c:\\", re.IGNORECASE)
_RE_URLS = re.compile(rb"https?://", re.IGNORECASE)
_RE_REGISTRY = re.compile(rb"HKEY_")
_RE_MZ = re.compile(rb"MZ")


@dataclass
class StringStats:
    n_strings: int = 0
    avg_length: float = 0.0
    n_chars: int = 0
    char_histogram: np.ndarray = field(default_factory=lambda: np.zeros(96, dtype=np.int64))
    char_entropy: float = 0.0
    n_paths: int = 0
    n_urls: int = 0
    n_registry: int = 0
    n_mz: int = 0


@dataclass
class RawStats:
    """Byte histogram, windowed byte-entropy histogram and string statistics."""

    byte_histogram: np.ndarray        # 256 counts, sums to len(data)
    byte_entropy_histogram: np.ndarray  # 256 counts: 16 entropy bins x 16 high-nibble bins
    strings: StringStats


def shannon_entropy(counts: np.ndarray) -> float:
    """Base-2 entropy of a count histogram; 0.0 for an empty histogram."""
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _entropy_window(block: np.ndarray) -> tuple[int, np.ndarray]:
    """Entropy bin index and high-nibble counts for one window."""
    c = np.bincount(block >> 4, minlength=16)
    # Nibble entropy spans [0, 4] bits; doubled to recover the [0, 8] byte scale.
    h = 2.0 * shannon_entropy(c)
    hbin = min(int(h * 2), 15)
    return hbin, c


def byte_entropy_histogram(data: bytes) -> np.ndarray:
    """Accumulate per-window high-nibble counts into a 16x16 (entropy, nibble) grid.

    Windows are ENTROPY_WINDOW bytes at ENTROPY_STRIDE offsets; input shorter
    than one window is treated as a single window.
    """
    grid = np.zeros((16, 16), dtype=np.int64)
    if len(data) == 0:
        return grid.reshape(-1)
    a = np.frombuffer(data, dtype=np.uint8)
    if a.size < ENTROPY_WINDOW:
        hbin, c = _entropy_window(a)
        grid[hbin] += c
    else:
        for start in range(0, a.size - ENTROPY_WINDOW + 1, ENTROPY_STRIDE):
            hbin, c = _entropy_window(a[start:start + ENTROPY_WINDOW])
            grid[hbin] += c
    return grid.reshape(-1)


def string_stats(data: bytes) -> StringStats:
    runs = _RE_STRINGS.findall(data)
    stats = StringStats(
        n_paths=len(_RE_PATHS.findall(data)),
        n_urls=len(_RE_URLS.findall(data)),
        n_registry=len(_RE_REGISTRY.findall(data)),
        n_mz=len(_RE_MZ.findall(data)),
    )
    if not runs:
        return stats
    lengths = [len(r) for r in runs]
    joined = np.frombuffer(b"".join(runs), dtype=np.uint8)
    hist = np.bincount(joined - _PRINTABLE_LO, minlength=96)
    stats.n_strings = len(runs)
    stats.avg_length = sum(lengths) / len(lengths)
    stats.n_chars = int(hist.sum())
    stats.char_histogram = hist
    stats.char_entropy = shannon_entropy(hist)
    return stats


def raw_stats(data: bytes) -> RawStats:
    """Compute all raw-byte statistics for `data` (empty input allowed)."""
    if len(data) == 0:
        byte_hist = np.zeros(256, dtype=np.int64)
    else:
        byte_hist = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256).astype(np.int64)
    return RawStats(
        byte_histogram=byte_hist,
        byte_entropy_histogram=byte_entropy_histogram(data),
        strings=string_stats(data),
    )
