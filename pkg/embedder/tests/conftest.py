"""Test doubles and synthetic datasets for the exporter."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest


class StubEncoder:
    """Deterministic hash-based stand-in for a pretrained encoder.

    Same text -> same vector, empty text -> zero vector / zero count, token
    count = whitespace token count; enough structure to exercise the export
    and format paths without model weights.
    """

    def __init__(self, hidden_size: int = 8):
        self._hidden = hidden_size

    @property
    def hidden_size(self) -> int:
        return self._hidden

    def _vector(self, text: str) -> np.ndarray:
        if not text:
            return np.zeros(self._hidden)
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(seed).normal(size=self._hidden)

    def encode(self, texts) -> np.ndarray:
        if not texts:
            return np.zeros((0, self._hidden))
        return np.stack([self._vector(t) for t in texts])

    def count_tokens(self, text: str) -> int:
        return len(text.split())


@pytest.fixture()
def stub_encoder():
    return StubEncoder()


@pytest.fixture()
def xfund_dataset(tmp_path):
    """One XFUND-shaped file with two documents, including an empty text."""
    records = []
    for d in range(2):
        entities = []
        for i, text in enumerate(["Name:", "Jane Doe", "", f"note {d}"]):
            entities.append({
                "id": 10 * d + i,  # sparse source ids; exporter emits positions
                "text": text,
                "box": [10 * i, 10, 10 * i + 8, 20],
                "label": "question" if i % 2 == 0 else "answer",
                "linking": [],
            })
        records.append({"id": f"doc{d}", "img": {"width": 100, "height": 100},
                        "document": entities})
    path = tmp_path / "zz.train.json"
    path.write_text(json.dumps({"documents": records}), encoding="utf-8")
    return path


@pytest.fixture()
def funsd_dataset(tmp_path):
    root = tmp_path / "training_data"
    (root / "annotations").mkdir(parents=True)
    record = {"form": [
        {"id": 3, "text": "Question?", "box": [0, 0, 10, 10], "label": "question",
         "linking": [[3, 4]]},
        {"id": 4, "text": "Answer!", "box": [20, 0, 30, 10], "label": "answer",
         "linking": []},
    ]}
    (root / "annotations" / "0001.json").write_text(json.dumps(record), encoding="utf-8")
    (root / "pages.tsv").write_text("0001\t100\t100\n", encoding="utf-8")
    return root


def dataset_root() -> Path | None:
    import os

    root = os.environ.get("ECNRE_DATA_ROOT")
    if root and Path(root).is_dir():
        return Path(root)
    return None


requires_dataset = pytest.mark.skipif(
    dataset_root() is None,
    reason="needs the public dataset files (set ECNRE_DATA_ROOT)",
)


def load_reference_encoder():
    """The real multilingual encoder, or None when weights are unreachable."""
    try:
        from ecn_embedder.encoder import HFEncoder

        return HFEncoder("xlm-roberta-base")
    except Exception:
        return None
