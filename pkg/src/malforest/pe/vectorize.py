"""Fixed-layout 2,381-dimensional feature vector for PE files.

The layout follows the EMBER-v2 convention: nine contiguous blocks whose
dimensions sum to 2,381. (EMBER's own documentation describes "eight major
feature groups"; the published 2,381-dim layout actually contains nine
blocks once the raw byte histogram is counted separately. We follow the
layout, and flag rather than resolve the discrepancy.)

Hashed-block values use our own MurmurHash3-based folding (see hashing.py),
so vectors are reproducible across platforms but are not bit-compatible
with extractors built on scikit-learn's FeatureHasher.
"""

from dataclasses import dataclass

import numpy as np

from .hashing import hash_bucket
from .parser import (
    CHARACTERISTIC_BITS,
    DLL_CHARACTERISTIC_BITS,
    SECTION_CHARACTERISTIC_BITS,
    ParseFailure,
    PeSummary,
    flag_names,
    machine_name,
    optional_magic_name,
    parse_pe,
    subsystem_name,
)
from .rawstats import RawStats, raw_stats

GROUP_DIMS = [
    ("byte_histogram", 256),
    ("byte_entropy", 256),
    ("strings", 104),
    ("general", 10),
    ("header", 62),
    ("sections", 255),
    ("imports", 1280),
    ("exports", 128),
    ("data_directories", 30),
]

FEATURE_DIM = sum(d for _, d in GROUP_DIMS)
assert FEATURE_DIM == 2381

GROUP_OFFSETS: dict[str, tuple[int, int]] = {}
_off = 0
for _name, _dim in GROUP_DIMS:
    GROUP_OFFSETS[_name] = (_off, _dim)
    _off += _dim


@dataclass
class FeatureVector:
    values: np.ndarray  # float32, length FEATURE_DIM, finite

    @property
    def group_offsets(self) -> dict[str, tuple[int, int]]:
        return GROUP_OFFSETS

    def group(self, name: str) -> np.ndarray:
        start, dim = GROUP_OFFSETS[name]
        return self.values[start:start + dim]


def _normalized(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    return (counts / (total if total > 0 else 1.0)).astype(np.float32)


def _strings_block(stats: RawStats) -> np.ndarray:
    s = stats.strings
    divisor = float(s.n_chars) if s.n_chars > 0 else 1.0
    return np.hstack([
        [s.n_strings, s.avg_length, s.n_chars],
        np.asarray(s.char_histogram, dtype=np.float64) / divisor,
        [s.char_entropy, s.n_paths, s.n_urls, s.n_registry, s.n_mz],
    ]).astype(np.float32)


def _general_block(size: int, pe: PeSummary | None) -> np.ndarray:
    if pe is None:
        return np.array([size] + [0.0] * 9, dtype=np.float32)
    dirs = pe.data_directories
    return np.array([
        size,
        pe.sizeof_image,
        float(dirs[6][1] > 0),   # debug directory present
        len(pe.exports),
        len(pe.imports),
        float(dirs[5][1] > 0),   # base relocations
        float(dirs[2][1] > 0),   # resources
        float(dirs[4][1] > 0),   # certificate table
        float(dirs[9][1] > 0),   # TLS
        pe.n_symbols,
    ], dtype=np.float32)


def _header_block(pe: PeSummary) -> np.ndarray:
    return np.hstack([
        [pe.timestamp],
        hash_bucket([machine_name(pe.machine_type)], 10),
        hash_bucket(flag_names(pe.characteristics, CHARACTERISTIC_BITS), 10),
        hash_bucket([subsystem_name(pe.subsystem)], 10),
        hash_bucket(flag_names(pe.dll_characteristics, DLL_CHARACTERISTIC_BITS), 10),
        hash_bucket([optional_magic_name(pe.optional_magic)], 10),
        [pe.major_image_version, pe.minor_image_version,
         pe.major_linker_version, pe.minor_linker_version,
         pe.major_os_version, pe.minor_os_version,
         pe.major_subsystem_version, pe.minor_subsystem_version,
         pe.sizeof_code, pe.sizeof_headers, pe.sizeof_heap_commit],
    ]).astype(np.float32)


def _entry_section(pe: PeSummary):
    for s in pe.sections:
        span = max(s.virtual_size, s.size)
        if s.virtual_address <= pe.entry_point_rva < s.virtual_address + span:
            return s
    return None


def _sections_block(pe: PeSummary) -> np.ndarray:
    secs = pe.sections
    rx = sum(1 for s in secs
             if s.characteristics & 0x40000000 and s.characteristics & 0x20000000)
    w = sum(1 for s in secs if s.characteristics & 0x80000000)
    general = [len(secs),
               sum(1 for s in secs if s.size == 0),
               sum(1 for s in secs if s.name == ""),
               rx, w]
    entry = _entry_section(pe)
    entry_name = entry.name if entry is not None else ""
    entry_props = flag_names(entry.characteristics, SECTION_CHARACTERISTIC_BITS) if entry else []
    return np.hstack([
        general,
        hash_bucket([(s.name, s.size) for s in secs], 50),
        hash_bucket([(s.name, s.entropy) for s in secs], 50),
        hash_bucket([(s.name, s.virtual_size) for s in secs], 50),
        hash_bucket([entry_name], 50),
        hash_bucket(entry_props, 50),
    ]).astype(np.float32)


def _imports_block(pe: PeSummary) -> np.ndarray:
    libraries = sorted({dll.lower() for dll, _ in pe.imports})
    qualified = [f"{dll.lower()}:{func}" for dll, func in pe.imports]
    return np.hstack([
        hash_bucket(libraries, 256),
        hash_bucket(qualified, 1024),
    ]).astype(np.float32)


def _data_directories_block(pe: PeSummary) -> np.ndarray:
    out = np.zeros(30, dtype=np.float32)
    for i in range(15):
        rva, size = pe.data_directories[i]
        out[2 * i] = size
        out[2 * i + 1] = rva
    return out


def vectorize(data: bytes) -> FeatureVector:
    """Map raw bytes to the fixed 2,381-dim feature vector.

    Total: never raises, output is always finite. When header parsing fails
    the raw-byte blocks (histograms, strings, file size) are still populated
    and all structure-derived blocks are zero.
    """
    stats = raw_stats(data)
    parsed = parse_pe(data) if len(data) > 0 else ParseFailure("missing-dos-magic")
    pe = parsed if isinstance(parsed, PeSummary) else None

    blocks = [
        _normalized(stats.byte_histogram),
        _normalized(stats.byte_entropy_histogram),
        _strings_block(stats),
        _general_block(len(data), pe),
    ]
    if pe is None:
        for name in ("header", "sections", "imports", "exports", "data_directories"):
            blocks.append(np.zeros(GROUP_OFFSETS[name][1], dtype=np.float32))
    else:
        blocks.append(_header_block(pe))
        blocks.append(_sections_block(pe))
        blocks.append(_imports_block(pe))
        blocks.append(hash_bucket(pe.exports, 128).astype(np.float32))
        blocks.append(_data_directories_block(pe))

    values = np.concatenate(blocks)
    assert values.shape == (FEATURE_DIM,)
    values = np.nan_to_num(values, nan=0.0, posinf=np.finfo(np.float32).max,
                           neginf=np.finfo(np.float32).min)
    return FeatureVector(values=values)
