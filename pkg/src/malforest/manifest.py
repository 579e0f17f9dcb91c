"""Append-only pipeline manifest chaining artifact fingerprints.

Every stage invocation records its parameters, the content hashes of its
parent artifacts and of its outputs, forming a DAG. Re-running a stage
whose record and outputs are both intact is a no-op. Artifact files are
written via temp-and-rename before their manifest line is appended, so a
crash can lose at most the record of a completed stage (which then simply
re-runs); a partial trailing line is detected on load, reported and
skipped.
"""

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field

from . import __version__
from .errors import ConfigError, ManifestError

MANIFEST_NAME = "manifest.jsonl"


def hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_artifact(path) -> str:
    """Content hash of a file, or of a directory as its sorted
    (name, file-hash) listing."""
    if os.path.isdir(path):
        entries = []
        for root, _dirs, files in os.walk(path):
            for name in sorted(files):
                full = os.path.join(root, name)
                rel = os.path.relpath(full, path)
                entries.append((rel, hash_file(full)))
        h = hashlib.sha256()
        for rel, digest in sorted(entries):
            h.update(rel.encode("utf-8"))
            h.update(digest.encode("ascii"))
        return h.hexdigest()
    return hash_file(path)


@dataclass
class StageRecord:
    stage: str
    params: dict
    parents: dict      # name -> content hash
    outputs: dict      # path (workspace-relative or absolute) -> content hash
    tool_version: str = __version__

    def key(self) -> str:
        return json.dumps({"stage": self.stage, "params": self.params,
                           "parents": self.parents}, sort_keys=True)

    def to_json(self) -> str:
        return json.dumps({"stage": self.stage, "params": self.params,
                           "parents": self.parents, "outputs": self.outputs,
                           "tool_version": self.tool_version}, sort_keys=True)


@dataclass
class Manifest:
    path: str
    records: list[StageRecord] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def open(cls, workspace) -> "Manifest":
        path = os.path.join(workspace, MANIFEST_NAME)
        manifest = cls(path=path)
        if not os.path.exists(path):
            return manifest
        with open(path, "r", encoding="utf-8") as fh:
            content = fh.read()
        lines = content.split("\n")
        trailing = lines.pop() if lines and not content.endswith("\n") else ""
        for line_no, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                manifest.records.append(StageRecord(
                    stage=obj["stage"], params=obj["params"],
                    parents=obj["parents"], outputs=obj["outputs"],
                    tool_version=obj.get("tool_version", "")))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ManifestError(f"{path}:{line_no}: corrupt record "
                                    f"({exc})") from exc
        if trailing.strip():
            # partial write from an interrupted run: the artifact either
            # finished (stage will no-op next run via hash match after its
            # record is re-appended) or not (stage re-runs); either way the
            # torn line is safe to drop
            import sys
            print(f"warning: {path}: dropping partial trailing record "
                  f"({len(trailing)} bytes); the interrupted stage will re-run",
                  file=sys.stderr)
        return manifest

    def find(self, key: str) -> StageRecord | None:
        for record in reversed(self.records):
            if record.key() == key:
                return record
        return None

    def append(self, record: StageRecord) -> None:
        with self._lock:
            os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self.records.append(record)

    def validate_dag(self) -> None:
        known = set()
        for record in self.records:
            known.update(record.outputs.values())
        for record in self.records:
            for name, digest in record.parents.items():
                if digest not in known:
                    raise ManifestError(
                        f"stage {record.stage}: parent {name} ({digest[:12]}) "
                        "was not produced by any recorded stage")


def run_stage(manifest: Manifest, stage: str, params: dict,
              parent_paths: dict, output_paths: list, builder,
              force: bool = False) -> StageRecord:
    """Execute `builder` unless an identical stage already produced intact
    outputs. Parents are resolved to content hashes first; missing parents
    are configuration errors."""
    parents = {}
    for name, path in sorted(parent_paths.items()):
        if not os.path.exists(path):
            raise ConfigError(f"stage {stage}: parent artifact {name} "
                              f"missing at {path}")
        parents[name] = hash_artifact(path)
    probe = StageRecord(stage=stage, params=params, parents=parents, outputs={})
    existing = manifest.find(probe.key())
    if existing is not None and not force:
        intact = all(os.path.exists(p) and hash_artifact(p) == digest
                     for p, digest in existing.outputs.items())
        if intact:
            return existing
    builder()
    outputs = {}
    for path in output_paths:
        if not os.path.exists(path):
            raise ManifestError(f"stage {stage} did not produce {path}")
        outputs[str(path)] = hash_artifact(path)
    record = StageRecord(stage=stage, params=params, parents=parents,
                         outputs=outputs)
    manifest.append(record)
    return record
