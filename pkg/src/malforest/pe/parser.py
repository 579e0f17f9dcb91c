"""Structured parsing of PE (Portable Executable) headers.

Parses the DOS stub, COFF header, optional header, data directories,
section table and the import/export tables directly from raw bytes.
Header-level failures are reported as ParseFailure values rather than
exceptions so that callers can degrade to raw-byte features; malformed
import/export structures degrade to empty lists without failing the
whole parse (corrupted directories are routine in malware corpora).
"""

import struct
from dataclasses import dataclass, field

from .rawstats import shannon_entropy
import numpy as np

DOS_MAGIC = b"MZ"
PE_MAGIC = b"PE\0\0"

OPT_MAGIC_PE32 = 0x10B
OPT_MAGIC_PE32_PLUS = 0x20B

N_DATA_DIRECTORIES = 16

# Upper bounds on table walks; crafted files can declare absurd counts.
_MAX_SECTIONS = 256
_MAX_IMPORT_DLLS = 1024
_MAX_IMPORT_FUNCS = 4096
_MAX_EXPORTS = 8192
_MAX_NAME_LEN = 256

MACHINE_NAMES = {
    0x0000: "UNKNOWN", 0x014C: "I386", 0x0162: "R3000", 0x0166: "R4000",
    0x0168: "R10000", 0x0184: "ALPHA", 0x01A2: "SH3", 0x01A6: "SH4",
    0x01C0: "ARM", 0x01C2: "THUMB", 0x01C4: "ARMNT", 0x0200: "IA64",
    0x0266: "MIPS16", 0x0366: "MIPSFPU", 0x0466: "MIPSFPU16",
    0x0EBC: "EBC", 0x8664: "AMD64", 0x9041: "M32R", 0xAA64: "ARM64",
    0x5032: "RISCV32", 0x5064: "RISCV64",
}

CHARACTERISTIC_BITS = [
    (0x0001, "RELOCS_STRIPPED"), (0x0002, "EXECUTABLE_IMAGE"),
    (0x0004, "LINE_NUMS_STRIPPED"), (0x0008, "LOCAL_SYMS_STRIPPED"),
    (0x0010, "AGGRESSIVE_WS_TRIM"), (0x0020, "LARGE_ADDRESS_AWARE"),
    (0x0080, "BYTES_REVERSED_LO"), (0x0100, "MACHINE_32BIT"),
    (0x0200, "DEBUG_STRIPPED"), (0x0400, "REMOVABLE_RUN_FROM_SWAP"),
    (0x0800, "NET_RUN_FROM_SWAP"), (0x1000, "SYSTEM"), (0x2000, "DLL"),
    (0x4000, "UP_SYSTEM_ONLY"), (0x8000, "BYTES_REVERSED_HI"),
]

SUBSYSTEM_NAMES = {
    0: "UNKNOWN", 1: "NATIVE", 2: "WINDOWS_GUI", 3: "WINDOWS_CUI",
    5: "OS2_CUI", 7: "POSIX_CUI", 8: "NATIVE_WINDOWS", 9: "WINDOWS_CE_GUI",
    10: "EFI_APPLICATION", 11: "EFI_BOOT_SERVICE_DRIVER",
    12: "EFI_RUNTIME_DRIVER", 13: "EFI_ROM", 14: "XBOX",
    16: "WINDOWS_BOOT_APPLICATION",
}

DLL_CHARACTERISTIC_BITS = [
    (0x0020, "HIGH_ENTROPY_VA"), (0x0040, "DYNAMIC_BASE"),
    (0x0080, "FORCE_INTEGRITY"), (0x0100, "NX_COMPAT"),
    (0x0200, "NO_ISOLATION"), (0x0400, "NO_SEH"), (0x0800, "NO_BIND"),
    (0x1000, "APPCONTAINER"), (0x2000, "WDM_DRIVER"), (0x4000, "GUARD_CF"),
    (0x8000, "TERMINAL_SERVER_AWARE"),
]

SECTION_CHARACTERISTIC_BITS = [
    (0x00000008, "TYPE_NO_PAD"), (0x00000020, "CNT_CODE"),
    (0x00000040, "CNT_INITIALIZED_DATA"), (0x00000080, "CNT_UNINITIALIZED_DATA"),
    (0x00000200, "LNK_INFO"), (0x00000800, "LNK_REMOVE"),
    (0x00001000, "LNK_COMDAT"), (0x00008000, "GPREL"),
    (0x01000000, "LNK_NRELOC_OVFL"), (0x02000000, "MEM_DISCARDABLE"),
    (0x04000000, "MEM_NOT_CACHED"), (0x08000000, "MEM_NOT_PAGED"),
    (0x10000000, "MEM_SHARED"), (0x20000000, "MEM_EXECUTE"),
    (0x40000000, "MEM_READ"), (0x80000000, "MEM_WRITE"),
]

# Named directories in PE header order; the 16th slot is reserved.
DATA_DIRECTORY_NAMES = [
    "EXPORT_TABLE", "IMPORT_TABLE", "RESOURCE_TABLE", "EXCEPTION_TABLE",
    "CERTIFICATE_TABLE", "BASE_RELOCATION_TABLE", "DEBUG", "ARCHITECTURE",
    "GLOBAL_PTR", "TLS_TABLE", "LOAD_CONFIG_TABLE", "BOUND_IMPORT", "IAT",
    "DELAY_IMPORT_DESCRIPTOR", "CLR_RUNTIME_HEADER",
]


def machine_name(value: int) -> str:
    return MACHINE_NAMES.get(value, f"MACHINE_{value:04X}")


def subsystem_name(value: int) -> str:
    return SUBSYSTEM_NAMES.get(value, f"SUBSYSTEM_{value}")


def optional_magic_name(value: int) -> str:
    return {OPT_MAGIC_PE32: "PE32", OPT_MAGIC_PE32_PLUS: "PE32_PLUS", 0x107: "ROM"}.get(
        value, f"MAGIC_{value:04X}")


def flag_names(value: int, table) -> list[str]:
    return [name for bit, name in table if value & bit]


@dataclass
class SectionInfo:
    name: str
    size: int            # SizeOfRawData
    virtual_size: int
    virtual_address: int
    characteristics: int
    entropy: float       # over raw section bytes, base 2, in [0, 8]
    pointer_to_raw: int = 0


@dataclass
class PeSummary:
    machine_type: int = 0
    timestamp: int = 0
    n_symbols: int = 0
    characteristics: int = 0
    optional_magic: int = 0
    subsystem: int = 0
    dll_characteristics: int = 0
    image_base: int = 0
    entry_point_rva: int = 0
    sizeof_code: int = 0
    sizeof_headers: int = 0
    sizeof_image: int = 0
    sizeof_heap_commit: int = 0
    major_linker_version: int = 0
    minor_linker_version: int = 0
    major_image_version: int = 0
    minor_image_version: int = 0
    major_os_version: int = 0
    minor_os_version: int = 0
    major_subsystem_version: int = 0
    minor_subsystem_version: int = 0
    sections: list[SectionInfo] = field(default_factory=list)
    imports: list[tuple[str, str]] = field(default_factory=list)
    exports: list[str] = field(default_factory=list)
    data_directories: list[tuple[int, int]] = field(default_factory=list)  # (rva, size) x16


@dataclass
class ParseFailure:
    stage: str
    detail: str = ""


def _zstring(data: bytes, offset: int, limit: int = _MAX_NAME_LEN) -> str:
    """ASCII NUL-terminated string at `offset`, lossily decoded."""
    if offset < 0 or offset >= len(data):
        return ""
    end = data.find(b"\0", offset, offset + limit)
    if end < 0:
        end = min(offset + limit, len(data))
    return data[offset:end].decode("ascii", errors="replace")


class _RvaMap:
    """Translate relative virtual addresses to file offsets via the section table."""

    word_size = 4

    def __init__(self, sections: list[SectionInfo], sizeof_headers: int):
        self._sections = sections
        self._hdr = sizeof_headers

    def to_offset(self, rva: int) -> int | None:
        for s in self._sections:
            span = max(s.virtual_size, s.size)
            if s.virtual_address <= rva < s.virtual_address + span:
                return s.pointer_to_raw + (rva - s.virtual_address)
        if 0 <= rva < self._hdr:
            return rva
        return None


def _parse_sections(data: bytes, offset: int, count: int) -> list[SectionInfo] | None:
    end = offset + 40 * count
    if end > len(data):
        return None
    sections = []
    for i in range(count):
        base = offset + 40 * i
        name_raw = data[base:base + 8]
        (vsize, vaddr, rawsize, rawptr) = struct.unpack_from("<IIII", data, base + 8)
        characteristics = struct.unpack_from("<I", data, base + 36)[0]
        name = name_raw.rstrip(b"\0").decode("ascii", errors="replace")
        raw = data[rawptr:rawptr + rawsize] if rawsize > 0 else b""
        if raw:
            counts = np.bincount(np.frombuffer(raw, dtype=np.uint8), minlength=256)
            ent = min(shannon_entropy(counts), 8.0)
        else:
            ent = 0.0
        info = SectionInfo(name=name, size=rawsize, virtual_size=vsize,
                           virtual_address=vaddr, characteristics=characteristics,
                           entropy=ent)
        info.pointer_to_raw = rawptr
        sections.append(info)
    return sections


def _parse_imports(data: bytes, rva_map: _RvaMap, table_rva: int) -> list[tuple[str, str]]:
    imports = []
    entry_size = 20
    for i in range(_MAX_IMPORT_DLLS):
        off = rva_map.to_offset(table_rva + i * entry_size)
        if off is None or off + entry_size > len(data):
            break
        ilt_rva, _, _, name_rva, iat_rva = struct.unpack_from("<IIIII", data, off)
        if ilt_rva == 0 and name_rva == 0 and iat_rva == 0:
            break
        name_off = rva_map.to_offset(name_rva)
        dll = _zstring(data, name_off) if name_off is not None else ""
        thunk_rva = ilt_rva or iat_rva
        if thunk_rva == 0:
            continue
        is_pe32_plus = rva_map.word_size == 8
        step = 8 if is_pe32_plus else 4
        ordinal_bit = 1 << (63 if is_pe32_plus else 31)
        for j in range(_MAX_IMPORT_FUNCS):
            toff = rva_map.to_offset(thunk_rva + j * step)
            if toff is None or toff + step > len(data):
                break
            value = int.from_bytes(data[toff:toff + step], "little")
            if value == 0:
                break
            if value & ordinal_bit:
                imports.append((dll, f"ordinal{value & 0xFFFF}"))
            else:
                hint_off = rva_map.to_offset(value & 0x7FFFFFFF)
                if hint_off is None:
                    continue
                imports.append((dll, _zstring(data, hint_off + 2)))
    return imports


def _parse_exports(data: bytes, rva_map: _RvaMap, table_rva: int) -> list[str]:
    off = rva_map.to_offset(table_rva)
    if off is None or off + 40 > len(data):
        return []
    (_, _, _, _, _, _, _, n_names, _, names_rva, _) = struct.unpack_from("<IIHHIIIIIII", data, off)
    names_off = rva_map.to_offset(names_rva)
    if names_off is None:
        return []
    exports = []
    for i in range(min(n_names, _MAX_EXPORTS)):
        ptr_off = names_off + 4 * i
        if ptr_off + 4 > len(data):
            break
        name_rva = struct.unpack_from("<I", data, ptr_off)[0]
        name_off = rva_map.to_offset(name_rva)
        if name_off is None:
            continue
        name = _zstring(data, name_off)
        if name:
            exports.append(name)
    return exports


def parse_pe(data: bytes):
    """Parse PE headers from raw bytes.

    Returns a PeSummary on success, or a ParseFailure naming the stage that
    failed (missing-dos-magic, truncated-headers, missing-pe-magic,
    section-table-overflow).
    """
    if len(data) < 2 or data[:2] != DOS_MAGIC:
        return ParseFailure("missing-dos-magic")
    if len(data) < 64:
        return ParseFailure("truncated-headers", "DOS header shorter than 64 bytes")
    e_lfanew = struct.unpack_from("<I", data, 0x3C)[0]
    if e_lfanew + 4 > len(data):
        return ParseFailure("truncated-headers", f"e_lfanew {e_lfanew:#x} beyond EOF")
    if data[e_lfanew:e_lfanew + 4] != PE_MAGIC:
        return ParseFailure("missing-pe-magic")
    coff_off = e_lfanew + 4
    if coff_off + 20 > len(data):
        return ParseFailure("truncated-headers", "COFF header beyond EOF")
    (machine, n_sections, timestamp, _sym_ptr, n_symbols,
     opt_size, characteristics) = struct.unpack_from("<HHIIIHH", data, coff_off)

    summary = PeSummary(
        machine_type=machine,
        timestamp=timestamp,
        n_symbols=n_symbols,
        characteristics=characteristics,
        data_directories=[(0, 0)] * N_DATA_DIRECTORIES,
    )

    opt_off = coff_off + 20
    if opt_off + opt_size > len(data):
        return ParseFailure("truncated-headers", "optional header beyond EOF")
    word_size = 4
    if opt_size >= 2:
        magic = struct.unpack_from("<H", data, opt_off)[0]
        summary.optional_magic = magic
        if magic == OPT_MAGIC_PE32 and opt_size >= 96:
            (_, maj_l, min_l, sizeof_code, _, _, entry, _, _, image_base,
             _sec_align, _file_align, maj_os, min_os, maj_img, min_img,
             maj_sub, min_sub, _, sizeof_image, sizeof_headers, _checksum,
             subsystem, dll_chars) = struct.unpack_from("<HBBIIIIIIIIIHHHHHHIIIIHH", data, opt_off)
            heap_commit = struct.unpack_from("<I", data, opt_off + 84)[0]
            n_dirs = struct.unpack_from("<I", data, opt_off + 92)[0]
            dirs_off = opt_off + 96
        elif magic == OPT_MAGIC_PE32_PLUS and opt_size >= 112:
            (_, maj_l, min_l, sizeof_code, _, _, entry, _, image_base,
             _sec_align, _file_align, maj_os, min_os, maj_img, min_img,
             maj_sub, min_sub, _, sizeof_image, sizeof_headers, _checksum,
             subsystem, dll_chars) = struct.unpack_from("<HBBIIIIIQIIHHHHHHIIIIHH", data, opt_off)
            heap_commit = struct.unpack_from("<Q", data, opt_off + 96)[0]
            n_dirs = struct.unpack_from("<I", data, opt_off + 108)[0]
            dirs_off = opt_off + 112
            word_size = 8
        else:
            magic = None
            n_dirs = 0
            dirs_off = opt_off
        if magic is not None:
            summary.major_linker_version = maj_l
            summary.minor_linker_version = min_l
            summary.sizeof_code = sizeof_code
            summary.entry_point_rva = entry
            summary.image_base = image_base
            summary.major_os_version = maj_os
            summary.minor_os_version = min_os
            summary.major_image_version = maj_img
            summary.minor_image_version = min_img
            summary.major_subsystem_version = maj_sub
            summary.minor_subsystem_version = min_sub
            summary.sizeof_image = sizeof_image
            summary.sizeof_headers = sizeof_headers
            summary.sizeof_heap_commit = heap_commit
            summary.subsystem = subsystem
            summary.dll_characteristics = dll_chars
            dirs = []
            for i in range(min(n_dirs, N_DATA_DIRECTORIES)):
                base = dirs_off + 8 * i
                if base + 8 > opt_off + opt_size or base + 8 > len(data):
                    break
                rva, size = struct.unpack_from("<II", data, base)
                dirs.append((rva, size))
            dirs.extend([(0, 0)] * (N_DATA_DIRECTORIES - len(dirs)))
            summary.data_directories = dirs

    if n_sections > _MAX_SECTIONS:
        return ParseFailure("section-table-overflow",
                            f"{n_sections} sections declared")
    sections = _parse_sections(data, opt_off + opt_size, n_sections)
    if sections is None:
        return ParseFailure("section-table-overflow",
                            f"section table for {n_sections} sections beyond EOF")
    summary.sections = sections

    rva_map = _RvaMap(sections, summary.sizeof_headers or opt_off + opt_size)
    rva_map.word_size = word_size
    import_rva, import_size = summary.data_directories[1]
    if import_rva and import_size:
        summary.imports = _parse_imports(data, rva_map, import_rva)
    export_rva, export_size = summary.data_directories[0]
    if export_rva and export_size:
        summary.exports = _parse_exports(data, rva_map, export_rva)
    return summary
