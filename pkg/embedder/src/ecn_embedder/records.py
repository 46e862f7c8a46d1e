"""Minimal dataset readers: just (doc_id, entity_id, text) triples.

The exporter only needs entity texts. It reads the same published record
shapes as the consumer (XFUND json files, FUNSD annotation directories) and
follows the same entity id convention: ids are dense file-order positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator


@dataclass
class DocumentText:
    doc_id: str
    texts: list[str]  # index = entity id


def _entities_of(record: dict, key: str, where: str) -> list[str]:
    entities = record.get(key)
    if not isinstance(entities, list):
        raise ValueError(f"{where}: missing '{key}' entity array")
    texts = []
    for raw in entities:
        text = raw.get("text", "") if isinstance(raw, dict) else ""
        texts.append("" if text is None else str(text))
    return texts


def _iter_xfund_file(path: Path) -> Iterator[DocumentText]:
    payload = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(payload, dict) and isinstance(payload.get("documents"), list):
        records = payload["documents"]
    elif isinstance(payload, list):
        records = payload
    else:
        raise ValueError(f"{path}: expected a list of documents or a 'documents' key")
    for idx, record in enumerate(records):
        doc_id = str(record.get("id") or f"{path.stem}-{idx}")
        yield DocumentText(doc_id, _entities_of(record, "document", doc_id))


def _iter_funsd_dir(path: Path) -> Iterator[DocumentText]:
    annotations = path / "annotations" if (path / "annotations").is_dir() else path
    files = sorted(annotations.glob("*.json"))
    if not files:
        raise ValueError(f"{path}: no FUNSD annotation files found")
    for json_path in files:
        record = json.loads(json_path.read_text(encoding="utf-8"))
        yield DocumentText(json_path.stem, _entities_of(record, "form", json_path.stem))


def iter_document_texts(dataset: str | Path, source_format: str = "auto") -> Iterator[DocumentText]:
    """Yield per-document entity texts from an XFUND file or FUNSD directory."""
    path = Path(dataset)
    if source_format == "auto":
        source_format = "funsd" if path.is_dir() else "xfund"
    if source_format == "xfund":
        if path.is_dir():
            files = sorted(path.glob("*.json"))
            if not files:
                raise ValueError(f"{path}: no .json dataset files found")
            for file in files:
                yield from _iter_xfund_file(file)
        else:
            yield from _iter_xfund_file(path)
    elif source_format == "funsd":
        yield from _iter_funsd_dir(path)
    else:
        raise ValueError(f"unknown source format {source_format!r}")
