"""Form-document corpus model: parsing, gold filtering, task settings, splits.

Supported input shapes:

* XFUND: a JSON file whose top level is either a list of document records or
  ``{"documents": [...]}``. Each record carries an image descriptor with
  ``width``/``height`` and a ``document`` array of entities with ``id``,
  ``text``, ``box`` = [x0, y0, x1, y1], ``label`` in {header, question,
  answer, other} and ``linking`` = list of [head_id, tail_id] pairs.
* FUNSD: one JSON file per document with a ``form`` array carrying the same
  entity fields; the page size comes from the paired image or a
  ``pages.tsv`` manifest (``stem \\t width \\t height``).

Parsing is lenient by default (degenerate boxes are clamped with a warning,
dangling links dropped) so the public datasets load unmodified; strict mode
turns every repair into an error.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError, ParseError

logger = logging.getLogger(__name__)

LANGUAGES = ("en", "zh", "ja", "es", "fr", "it", "de", "pt")
NON_ENGLISH = ("zh", "ja", "es", "fr", "it", "de", "pt")
TOKEN_LIMIT = 512


class Label(str, Enum):
    HEADER = "header"
    QUESTION = "question"
    ANSWER = "answer"
    OTHER = "other"


class EntityScope(str, Enum):
    """Which entity classes feed the model: HQA drops Other, OHQA keeps all."""

    HQA = "hqa"
    OHQA = "ohqa"

    @property
    def classes(self) -> tuple[Label, ...]:
        if self is EntityScope.HQA:
            return (Label.HEADER, Label.QUESTION, Label.ANSWER)
        return (Label.HEADER, Label.QUESTION, Label.ANSWER, Label.OTHER)


@dataclass(frozen=True)
class BBox:
    """Pixel box; origin top-left, corners ordered."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative coordinates: {self}")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"corners out of order: {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass
class Entity:
    id: int
    text: str
    bbox: BBox
    label: Label
    word_count: int | None = None


@dataclass(frozen=True)
class Relation:
    """A directed link from a question entity to an answer entity."""

    head: int
    tail: int

    def __post_init__(self) -> None:
        if self.head == self.tail:
            raise ValueError(f"self-link on entity {self.head}")


@dataclass
class Document:
    doc_id: str
    page_width: int
    page_height: int
    entities: list[Entity] = field(default_factory=list)
    relations: set[Relation] = field(default_factory=set)

    def label_of(self, entity_id: int) -> Label:
        return self.entities[entity_id].label

    def validate(self) -> None:
        ids = [e.id for e in self.entities]
        if ids != list(range(len(ids))):
            raise DataError(f"{self.doc_id}: entity ids not dense in file order")
        for r in self.relations:
            if not (0 <= r.head < len(ids)) or not (0 <= r.tail < len(ids)):
                raise DataError(f"{self.doc_id}: relation {r} references a missing entity")


@dataclass
class Corpus:
    language: str
    split: str
    documents: list[Document] = field(default_factory=list)


@dataclass(frozen=True)
class TaskSetting:
    """The three independent task axes: label visibility, scope, languages."""

    use_labels: bool = True
    entity_scope: EntityScope = EntityScope.HQA
    training_scope: str = "multilingual"  # a language code, or "multilingual"

    def __post_init__(self) -> None:
        if self.training_scope != "multilingual" and self.training_scope not in LANGUAGES:
            raise ValueError(f"unknown training scope {self.training_scope!r}")


@dataclass
class TaskInstance:
    """One document as the model sees it under a task setting.

    ``gold`` is expressed in positions of the scoped entity list;
    ``entity_ids`` maps those positions back to the document's dense ids so
    sidecar rows can be joined. Labels are always retained for evaluation
    bookkeeping; ``labels_visible`` says whether the model may consume them.
    """

    doc_id: str
    language: str
    page_width: int
    page_height: int
    entity_ids: list[int]
    texts: list[str]
    boxes: list[BBox]
    labels: list[Label]
    labels_visible: bool
    entity_scope: EntityScope
    gold: frozenset[tuple[int, int]]

    @property
    def n_entities(self) -> int:
        return len(self.entity_ids)


# ---------------------------------------------------------------------------
# Parsing


def _require(record: Mapping, key: str, where: str):
    if key not in record:
        raise ParseError(f"{where}: missing field '{key}'")
    return record[key]


def _parse_box(raw, page_width: int, page_height: int, where: str, strict: bool) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ParseError(f"{where}: field 'box' must be [x0, y0, x1, y1], got {raw!r}")
    try:
        x0, y0, x1, y1 = (int(v) for v in raw)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: non-integer coordinate in 'box' {raw!r}") from None
    degenerate = x0 > x1 or y0 > y1
    out_of_bounds = (
        min(x0, x1, y0, y1) < 0
        or max(x0, x1) > page_width
        or max(y0, y1) > page_height
    )
    if degenerate or out_of_bounds:
        if strict:
            raise ParseError(f"{where}: box {raw!r} is degenerate or outside the page")
        logger.warning("%s: clamping box %r to the page", where, raw)
        x0, x1 = sorted((max(0, min(x0, page_width)), max(0, min(x1, page_width))))
        y0, y1 = sorted((max(0, min(y0, page_height)), max(0, min(y1, page_height))))
    return BBox(x0, y0, x1, y1)


def _page_size(record: Mapping, where: str) -> tuple[int, int]:
    descriptor = record.get("img") or record.get("image")
    if isinstance(descriptor, Mapping) and "width" in descriptor and "height" in descriptor:
        return int(descriptor["width"]), int(descriptor["height"])
    if "width" in record and "height" in record:
        return int(record["width"]), int(record["height"])
    raise ParseError(f"{where}: missing image descriptor with 'width'/'height'")


def parse_document(
    record: Mapping,
    source_format: str = "xfund",
    *,
    doc_id: str | None = None,
    page_size: tuple[int, int] | None = None,
    strict: bool = False,
) -> Document:
    """Parse one raw dataset record into a :class:`Document`.

    Entity ids are remapped to dense indices preserving file order; every
    ``linking`` pair is retained raw (unfiltered) at this stage. FUNSD
    records (``form`` key) are converted to the XFUND shape on the fly.
    """
    if source_format not in ("xfund", "funsd"):
        raise ValueError(f"unknown source format {source_format!r}")
    if source_format == "funsd":
        raw_entities = _require(record, "form", doc_id or "<funsd record>")
        if page_size is None:
            page_size = _page_size(record, doc_id or "<funsd record>")
        name = doc_id or str(record.get("id", "funsd-doc"))
    else:
        name = doc_id or str(record.get("id") or record.get("uid") or "xfund-doc")
        raw_entities = _require(record, "document", name)
        if page_size is None:
            page_size = _page_size(record, name)
    page_width, page_height = page_size
    if page_width <= 0 or page_height <= 0:
        raise ParseError(f"{name}: page size must be positive, got {page_size}")
    if not isinstance(raw_entities, list):
        raise ParseError(f"{name}: entity array must be a list")

    entities: list[Entity] = []
    id_map: dict[object, int] = {}
    raw_links: list[tuple[object, object]] = []
    for position, raw in enumerate(raw_entities):
        where = f"{name}: entity {position}"
        if not isinstance(raw, Mapping):
            raise ParseError(f"{where}: expected an object, got {type(raw).__name__}")
        original_id = _require(raw, "id", where)
        if original_id in id_map:
            raise ParseError(f"{where}: duplicate entity id {original_id!r}")
        id_map[original_id] = position
        label_raw = _require(raw, "label", where)
        try:
            label = Label(str(label_raw).lower())
        except ValueError:
            raise ParseError(f"{where}: unknown label {label_raw!r}") from None
        bbox = _parse_box(_require(raw, "box", where), page_width, page_height, where, strict)
        text = raw.get("text", "")
        if text is None:
            text = ""
        words = raw.get("words")
        if isinstance(words, list):
            word_count = len(words)
        elif "word_count" in raw:
            word_count = int(raw["word_count"])
        else:
            word_count = None
        entities.append(Entity(position, str(text), bbox, label, word_count))
        for pair in raw.get("linking") or []:
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ParseError(f"{where}: malformed 'linking' entry {pair!r}")
            raw_links.append((pair[0], pair[1]))

    relations: set[Relation] = set()
    for head, tail in raw_links:
        if head not in id_map or tail not in id_map:
            if strict:
                raise ParseError(f"{name}: link ({head!r}, {tail!r}) references a missing entity")
            logger.warning("%s: dropping dangling link (%r, %r)", name, head, tail)
            continue
        if id_map[head] == id_map[tail]:
            if strict:
                raise ParseError(f"{name}: self-link on entity {head!r}")
            logger.warning("%s: dropping self-link on entity %r", name, head)
            continue
        relations.add(Relation(id_map[head], id_map[tail]))

    doc = Document(name, page_width, page_height, entities, relations)
    doc.validate()
    return doc


def document_to_record(doc: Document) -> dict:
    """Serialize a document back to the XFUND record shape (round-trips)."""
    by_head: dict[int, list[list[int]]] = {}
    for r in sorted(doc.relations, key=lambda r: (r.head, r.tail)):
        by_head.setdefault(r.head, []).append([r.head, r.tail])
    entities = []
    for e in doc.entities:
        item = {
            "id": e.id,
            "text": e.text,
            "box": [e.bbox.x0, e.bbox.y0, e.bbox.x1, e.bbox.y1],
            "label": e.label.value,
            "linking": by_head.get(e.id, []),
        }
        if e.word_count is not None:
            item["word_count"] = e.word_count
        entities.append(item)
    return {
        "id": doc.doc_id,
        "img": {"width": doc.page_width, "height": doc.page_height},
        "document": entities,
    }


# ---------------------------------------------------------------------------
# Gold filtering and task settings


def filter_gold_relations(doc: Document) -> Document:
    """Keep exactly the question->answer links; drop everything else."""
    gold = {
        r
        for r in doc.relations
        if doc.label_of(r.head) is Label.QUESTION and doc.label_of(r.tail) is Label.ANSWER
    }
    return replace(doc, relations=gold)


def apply_setting(corpus: Corpus, setting: TaskSetting) -> list[TaskInstance]:
    """Materialize a gold-filtered corpus under a task setting.

    HQA removes Other entities before graph construction (gold never touches
    them); OHQA keeps everything. Relations are re-indexed to positions in
    the scoped entity list.
    """
    instances = []
    for doc in corpus.documents:
        if setting.entity_scope is EntityScope.HQA:
            kept = [e for e in doc.entities if e.label is not Label.OTHER]
        else:
            kept = list(doc.entities)
        position = {e.id: idx for idx, e in enumerate(kept)}
        gold = set()
        for r in doc.relations:
            if r.head not in position or r.tail not in position:
                raise DataError(
                    f"{doc.doc_id}: relation {r} leaves scope {setting.entity_scope.value}; "
                    "was the corpus gold-filtered?"
                )
            gold.add((position[r.head], position[r.tail]))
        instances.append(
            TaskInstance(
                doc_id=doc.doc_id,
                language=corpus.language,
                page_width=doc.page_width,
                page_height=doc.page_height,
                entity_ids=[e.id for e in kept],
                texts=[e.text for e in kept],
                boxes=[e.bbox for e in kept],
                labels=[e.label for e in kept],
                labels_visible=setting.use_labels,
                entity_scope=setting.entity_scope,
                gold=frozenset(gold),
            )
        )
    return instances


# ---------------------------------------------------------------------------
# Token-limit splitting


@dataclass
class SplitResult:
    sub_documents: list[Document]
    lost_relations: int
    oversized_entities: list[int] = field(default_factory=list)


def split_by_token_limit(
    doc: Document, token_counts: Mapping[int, int], limit: int = TOKEN_LIMIT
) -> SplitResult:
    """Greedily pack entities in document order into chunks of <= limit tokens.

    A relation survives iff both endpoints land in the same chunk. An entity
    whose own count exceeds the limit occupies a chunk alone and is flagged.
    When no split is needed the document is returned as-is (identity split).
    """
    counts = []
    for e in doc.entities:
        if e.id not in token_counts:
            raise DataError(f"{doc.doc_id}: no token count for entity {e.id}")
        counts.append(int(token_counts[e.id]))

    chunks: list[list[Entity]] = [[]]
    oversized: list[int] = []
    budget = 0
    for e, c in zip(doc.entities, counts):
        if c > limit:
            oversized.append(e.id)
            if chunks[-1]:
                chunks.append([])
            chunks[-1].append(e)
            chunks.append([])
            budget = 0
            continue
        if budget + c > limit and chunks[-1]:
            chunks.append([])
            budget = 0
        chunks[-1].append(e)
        budget += c
    if len(chunks) > 1 and not chunks[-1]:
        chunks.pop()

    if len(chunks) == 1:
        return SplitResult([doc], 0, oversized)

    chunk_of = {e.id: k for k, chunk in enumerate(chunks) for e in chunk}
    subs = []
    kept = 0
    for k, chunk in enumerate(chunks):
        relations = {
            r for r in doc.relations if chunk_of[r.head] == k and chunk_of[r.tail] == k
        }
        kept += len(relations)
        subs.append(
            Document(f"{doc.doc_id}#{k}", doc.page_width, doc.page_height, list(chunk), relations)
        )
    return SplitResult(subs, len(doc.relations) - kept, oversized)


# ---------------------------------------------------------------------------
# Corpus loading


def _documents_of(payload, where: str) -> list:
    if isinstance(payload, list):
        return payload
    if isinstance(payload, Mapping) and isinstance(payload.get("documents"), list):
        return payload["documents"]
    raise ParseError(f"{where}: expected a list of documents or a 'documents' key")


def load_xfund_file(path: str | Path, *, strict: bool = False) -> list[Document]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    docs = []
    for idx, record in enumerate(_documents_of(payload, str(path))):
        fallback = f"{path.stem}-{idx}"
        if not isinstance(record, Mapping):
            raise ParseError(f"{path}: document {idx} is not an object")
        name = record.get("id") or fallback
        docs.append(parse_document(record, "xfund", doc_id=str(name), strict=strict))
    return docs


def _funsd_page_size(json_path: Path, manifest: Mapping[str, tuple[int, int]] | None):
    stem = json_path.stem
    if manifest and stem in manifest:
        return manifest[stem]
    images_dir = json_path.parent.parent / "images"
    for suffix in (".png", ".jpg", ".jpeg", ".tif", ".tiff"):
        image = images_dir / (stem + suffix)
        if image.exists():
            try:
                from PIL import Image

                with Image.open(image) as im:
                    return im.size
            except Exception as exc:  # pragma: no cover - depends on local files
                raise ParseError(f"{image}: cannot read page size ({exc})") from exc
    raise ParseError(
        f"{json_path}: no paired image or manifest entry for page size of '{stem}'"
    )


def _load_manifest(directory: Path) -> dict[str, tuple[int, int]] | None:
    manifest_path = directory / "pages.tsv"
    if not manifest_path.exists():
        return None
    manifest = {}
    for line_no, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{manifest_path}:{line_no}: expected 'stem\\twidth\\theight'")
        manifest[parts[0]] = (int(parts[1]), int(parts[2]))
    return manifest


def load_funsd_dir(path: str | Path, *, strict: bool = False) -> list[Document]:
    """Load a FUNSD split directory (annotations/*.json plus images/)."""
    path = Path(path)
    annotations = path / "annotations" if (path / "annotations").is_dir() else path
    files = sorted(annotations.glob("*.json"))
    if not files:
        raise ParseError(f"{path}: no FUNSD annotation files found")
    manifest = _load_manifest(path)
    docs = []
    for json_path in files:
        try:
            record = json.loads(json_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"{json_path}: {exc}") from exc
        size = _funsd_page_size(json_path, manifest)
        docs.append(
            parse_document(record, "funsd", doc_id=json_path.stem, page_size=size, strict=strict)
        )
    return docs


_FUNSD_SPLIT_DIRS = {"train": "training_data", "test": "testing_data"}


def load_corpus(
    data_root: str | Path, language: str, split: str, *, strict: bool = False
) -> Corpus:
    """Locate and parse one language/split under a dataset root.

    XFUND ships ``<lang>.<split>.json`` files, publishing its evaluation
    split as ``val``; both ``<lang>.test.json`` and ``<lang>.val.json``
    satisfy ``split="test"``. English may instead be a FUNSD directory tree
    (``training_data``/``testing_data``).
    """
    if language not in LANGUAGES:
        raise DataError(f"unknown language {language!r}")
    if split not in ("train", "test"):
        raise DataError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(data_root)
    candidates = [root / f"{language}.{split}.json"]
    if split == "test":
        candidates.append(root / f"{language}.val.json")
    for candidate in candidates:
        if candidate.exists():
            return Corpus(language, split, load_xfund_file(candidate, strict=strict))
    if language == "en":
        funsd = root / _FUNSD_SPLIT_DIRS[split]
        if funsd.is_dir():
            return Corpus("en", split, load_funsd_dir(funsd, strict=strict))
    raise DataError(
        f"no data for language '{language}' split '{split}' under {root} "
        f"(looked for {', '.join(str(c.name) for c in candidates)})"
    )


def gold_filter_corpus(corpus: Corpus) -> Corpus:
    return Corpus(
        corpus.language,
        corpus.split,
        [filter_gold_relations(d) for d in corpus.documents],
    )


def corpus_summary(corpus: Corpus) -> dict:
    """Document/entity/link counts used by the ingest command."""
    gold = gold_filter_corpus(corpus)
    return {
        "language": corpus.language,
        "split": corpus.split,
        "documents": len(corpus.documents),
        "entities": sum(len(d.entities) for d in corpus.documents),
        "raw_links": sum(len(d.relations) for d in corpus.documents),
        "gold_relations": sum(len(d.relations) for d in gold.documents),
    }
