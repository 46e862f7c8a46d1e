"""Sidecar file formats and node feature assembly.

Two tab-separated sidecar formats carry per-entity data produced offline:

* ``ecn-emb v1 <dim>`` header, then rows ``doc_id \\t entity_id \\t f1 ... f<dim>``
* ``ecn-tokcount v1`` header, then rows ``doc_id \\t entity_id \\t count``

Node features for the model are the concatenation ``[text | label | geometry]``
where the text block comes from an embedding sidecar, the label block from a
learned per-class embedding, and the geometry block is always the six values
(x0, y0, x1, y1, w, h) of the page-normalized box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .documents import EntityScope, TaskInstance, TaskSetting
from .errors import FeatureError, LayoutMismatchError, SidecarError
from .geometry import normalize_bbox

GEOM_DIM = 6

EMBEDDING_HEADER = "ecn-emb v1"
TOKEN_COUNT_HEADER = "ecn-tokcount v1"


@dataclass(frozen=True)
class FeatureLayout:
    """Width and composition of the node input vector.

    ``label_classes`` is 0 when the model may not see labels, otherwise the
    number of classes in scope (3 for HQA, 4 for OHQA). Geometry is always
    present. A trained checkpoint records its layout and refuses any other.
    """

    text_dim: int = 0
    label_classes: int = 0
    label_dim: int = 0

    def __post_init__(self) -> None:
        if self.text_dim < 0:
            raise ValueError("text_dim must be >= 0")
        if self.label_classes not in (0, 3, 4):
            raise ValueError("label_classes must be 0 (hidden), 3 (HQA) or 4 (OHQA)")
        if self.label_classes and self.label_dim <= 0:
            raise ValueError("label_dim must be positive when labels are visible")
        if not self.label_classes and self.label_dim:
            raise ValueError("label_dim without label_classes")

    @property
    def total_dim(self) -> int:
        return self.text_dim + (self.label_dim if self.label_classes else 0) + GEOM_DIM

    def to_dict(self) -> dict:
        return {
            "text_dim": self.text_dim,
            "label_classes": self.label_classes,
            "label_dim": self.label_dim,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureLayout":
        return cls(int(data["text_dim"]), int(data["label_classes"]), int(data["label_dim"]))


def derive_layout(setting: TaskSetting, text_dim: int = 0, label_dim: int = 16) -> FeatureLayout:
    if setting.use_labels:
        return FeatureLayout(text_dim, len(setting.entity_scope.classes), label_dim)
    return FeatureLayout(text_dim, 0, 0)


@dataclass
class EmbeddingTable:
    """Immutable (doc_id, entity_id) -> vector map with a fixed dimension."""

    dim: int
    vectors: dict[tuple[str, int], np.ndarray]

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, key: tuple[str, int]) -> bool:
        return key in self.vectors

    def get(self, doc_id: str, entity_id: int) -> np.ndarray:
        return self.vectors[(doc_id, entity_id)]


def _open_sidecar(path: Path):
    try:
        return path.open("r", encoding="utf-8")
    except OSError as exc:
        raise SidecarError(f"{path}: cannot open sidecar ({exc})") from exc


def load_embedding_sidecar(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    with _open_sidecar(path) as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split(" ")
        if len(parts) != 3 or " ".join(parts[:2]) != EMBEDDING_HEADER:
            raise SidecarError(f"{path}: bad header {header!r}, expected '{EMBEDDING_HEADER} <dim>'")
        try:
            dim = int(parts[2])
        except ValueError:
            raise SidecarError(f"{path}: non-integer dimension in header {header!r}") from None
        if dim <= 0:
            raise SidecarError(f"{path}: dimension must be positive, got {dim}")
        vectors: dict[tuple[str, int], np.ndarray] = {}
        for line_no, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2 + dim:
                raise SidecarError(
                    f"{path}:{line_no}: expected {2 + dim} fields for dim {dim}, got {len(fields)}"
                )
            key = _parse_key(fields[0], fields[1], path, line_no)
            if key in vectors:
                raise SidecarError(f"{path}:{line_no}: duplicate key {key}")
            try:
                vec = np.array([float(v) for v in fields[2:]], dtype=np.float64)
            except ValueError:
                raise SidecarError(f"{path}:{line_no}: non-numeric embedding value") from None
            if not np.isfinite(vec).all():
                raise SidecarError(f"{path}:{line_no}: non-finite embedding value")
            vectors[key] = vec
    return EmbeddingTable(dim, vectors)


def load_token_count_sidecar(path: str | Path) -> dict[tuple[str, int], int]:
    path = Path(path)
    with _open_sidecar(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != TOKEN_COUNT_HEADER:
            raise SidecarError(f"{path}: bad header {header!r}, expected {TOKEN_COUNT_HEADER!r}")
        counts: dict[tuple[str, int], int] = {}
        for line_no, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise SidecarError(f"{path}:{line_no}: expected 3 fields, got {len(fields)}")
            key = _parse_key(fields[0], fields[1], path, line_no)
            if key in counts:
                raise SidecarError(f"{path}:{line_no}: duplicate key {key}")
            try:
                count = int(fields[2])
            except ValueError:
                raise SidecarError(f"{path}:{line_no}: non-integer token count") from None
            if count < 0:
                raise SidecarError(f"{path}:{line_no}: negative token count")
            counts[key] = count
    return counts


def _parse_key(doc_field: str, entity_field: str, path: Path, line_no: int) -> tuple[str, int]:
    try:
        return doc_field, int(entity_field)
    except ValueError:
        raise SidecarError(f"{path}:{line_no}: non-integer entity id {entity_field!r}") from None


def write_embedding_sidecar(
    path: str | Path, dim: int, rows: Iterable[tuple[str, int, np.ndarray]]
) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{EMBEDDING_HEADER} {dim}\n")
        for doc_id, entity_id, vector in rows:
            values = "\t".join(format(float(v), ".17g") for v in vector)
            fh.write(f"{doc_id}\t{entity_id}\t{values}\n")


def write_token_count_sidecar(
    path: str | Path, rows: Iterable[tuple[str, int, int]]
) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(TOKEN_COUNT_HEADER + "\n")
        for doc_id, entity_id, count in rows:
            fh.write(f"{doc_id}\t{entity_id}\t{count}\n")


def token_counts_for_document(
    counts: Mapping[tuple[str, int], int], doc_id: str
) -> dict[int, int]:
    return {ent: c for (d, ent), c in counts.items() if d == doc_id}


# ---------------------------------------------------------------------------
# Node feature assembly


def geometry_block(instance: TaskInstance) -> np.ndarray:
    """(n, 6) matrix of normalized x0, y0, x1, y1, w, h per entity."""
    rows = np.zeros((instance.n_entities, GEOM_DIM), dtype=np.float64)
    for idx, box in enumerate(instance.boxes):
        nb = normalize_bbox(box, instance.page_width, instance.page_height)
        rows[idx] = (nb.x0, nb.y0, nb.x1, nb.y1, nb.w, nb.h)
    return rows


def text_block(instance: TaskInstance, table: EmbeddingTable) -> np.ndarray:
    rows = np.zeros((instance.n_entities, table.dim), dtype=np.float64)
    for idx, entity_id in enumerate(instance.entity_ids):
        key = (instance.doc_id, entity_id)
        if key not in table:
            raise FeatureError(
                f"{instance.doc_id}: no embedding for entity {entity_id} in the sidecar"
            )
        rows[idx] = table.get(*key)
    return rows


def label_indices(instance: TaskInstance, layout: FeatureLayout) -> np.ndarray:
    """Per-entity class index under the instance's scope ordering."""
    classes = list(instance.entity_scope.classes)
    if len(classes) != layout.label_classes:
        raise LayoutMismatchError(
            f"layout expects {layout.label_classes} label classes, instance scope "
            f"{instance.entity_scope.value} has {len(classes)}"
        )
    return np.array([classes.index(label) for label in instance.labels], dtype=np.intp)


def check_layout(instance: TaskInstance, layout: FeatureLayout,
                 table: EmbeddingTable | None) -> None:
    """Refuse instance/layout/sidecar combinations that do not line up."""
    if layout.text_dim and table is None:
        raise LayoutMismatchError("layout includes a text block but no embedding table given")
    if table is not None and not layout.text_dim:
        raise LayoutMismatchError("embedding table given but the layout has no text block")
    if table is not None and table.dim != layout.text_dim:
        raise LayoutMismatchError(
            f"embedding dimension {table.dim} != layout text_dim {layout.text_dim}"
        )
    if layout.label_classes and not instance.labels_visible:
        raise LayoutMismatchError("layout consumes labels but the task setting hides them")
    if instance.labels_visible and not layout.label_classes:
        raise LayoutMismatchError("instance offers labels but the layout was built without them")


def build_node_features(
    instance: TaskInstance,
    layout: FeatureLayout,
    table: EmbeddingTable | None = None,
    label_embedding: np.ndarray | None = None,
) -> np.ndarray:
    """Assemble the full (n, layout.total_dim) node feature matrix.

    The gradient-carrying path in the model composes the same blocks through
    the autodiff graph; this plain-numpy version backs inspection and tests.
    """
    check_layout(instance, layout, table)
    blocks = []
    if layout.text_dim:
        blocks.append(text_block(instance, table))
    if layout.label_classes:
        if label_embedding is None:
            raise FeatureError("layout consumes labels but no label embedding was given")
        if label_embedding.shape != (layout.label_classes, layout.label_dim):
            raise LayoutMismatchError(
                f"label embedding shape {label_embedding.shape} != "
                f"({layout.label_classes}, {layout.label_dim})"
            )
        blocks.append(label_embedding[label_indices(instance, layout)])
    blocks.append(geometry_block(instance))
    out = np.concatenate(blocks, axis=1)
    if not math.prod(out.shape) == instance.n_entities * layout.total_dim:
        raise FeatureError("node feature width drifted from the declared layout")
    return out
