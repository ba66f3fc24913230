"""Line-delimited record stores.

Every persisted artifact is a JSONL file whose first line is a header
carrying the format name and version; loaders reject anything else. Writers
emit the whole file in one pass (single-writer semantics).
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import MissingArtifactError, StoreError


def write_store(path: str | Path, format_name: str, records, version: int = 1) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": format_name, "version": version}) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_store(path: str | Path, format_name: str, version: int = 1,
               produced_by: str | None = None) -> list[dict]:
    path = Path(path)
    if not path.exists():
        hint = f"; run {produced_by!r} first" if produced_by else ""
        raise MissingArtifactError(f"missing store {path}{hint}")
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise StoreError(f"{path}: bad header line") from exc
        if header.get("format") != format_name:
            raise StoreError(f"{path}: format {header.get('format')!r}, expected {format_name!r}")
        if header.get("version") != version:
            raise StoreError(f"{path}: version {header.get('version')!r} unsupported")
        records = []
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StoreError(f"{path}:{lineno}: bad record") from exc
        return records
