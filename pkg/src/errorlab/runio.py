"""Deterministic result persistence: CSV/JSON writers, checksums, manifest.

Floats are written with ``repr`` (shortest round-trip form) and JSON keys
are sorted, so identical results serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OUTPUT_SCHEMA_VERSION = 1


def to_builtin(value):
    """Recursively convert numpy containers/scalars to plain Python."""
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {k: to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    return value


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def render_csv(header: list[str], rows, schema_version: int = OUTPUT_SCHEMA_VERSION) -> str:
    lines = [f"# schema_version={schema_version}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def render_json(payload, schema_version: int = OUTPUT_SCHEMA_VERSION) -> str:
    doc = dict(to_builtin(payload))
    doc.setdefault("schema_version", schema_version)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Provenance record for one CLI run.

    ``files`` maps every emitted output to its checksum; regenerating with
    the same config and seed reproduces those checksums exactly (only the
    wall-clock timings differ between reruns).
    """

    command: str
    config_hash: str
    artifact_version: str
    files: dict[str, str] = field(default_factory=dict)
    seed_labels: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    schema_version: int = OUTPUT_SCHEMA_VERSION

    def to_payload(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "artifact_version": self.artifact_version,
            "files": dict(sorted(self.files.items())),
            "seed_labels": sorted(self.seed_labels),
            "timings": self.timings,
            "schema_version": self.schema_version,
        }


def write_outputs(out_dir: Path, payloads: dict[str, str]) -> dict[str, str]:
    """Write rendered text files and return their checksums."""
    checksums = {}
    for name, text in payloads.items():
        path = out_dir / name
        path.write_text(text, encoding="utf-8")
        checksums[name] = sha256_text(text)
    return checksums
