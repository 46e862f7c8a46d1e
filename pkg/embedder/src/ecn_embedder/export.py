"""Export jobs writing the two sidecar formats the consumer package reads.

Formats (the interface between the packages):

* ``ecn-emb v1 <dim>`` header, then ``doc_id \\t entity_id \\t f1 ... f<dim>``
* ``ecn-tokcount v1`` header, then ``doc_id \\t entity_id \\t count``

Entity text is embedded standalone (no page context). An empty text yields
a zero vector and a zero count without touching the model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .encoder import Encoder
from .records import iter_document_texts

logger = logging.getLogger(__name__)

EMBEDDING_HEADER = "ecn-emb v1"
TOKEN_COUNT_HEADER = "ecn-tokcount v1"


@dataclass
class ExportJob:
    dataset: str
    source_format: str = "auto"  # xfund | funsd | auto
    embeddings_path: str | None = None
    token_counts_path: str | None = None


def export_embeddings(job: ExportJob, encoder: Encoder) -> int:
    """Write one mean-pooled vector per entity; returns the row count."""
    if not job.embeddings_path:
        raise ValueError("job has no embeddings_path")
    dim = encoder.hidden_size
    rows = 0
    with Path(job.embeddings_path).open("w", encoding="utf-8") as fh:
        fh.write(f"{EMBEDDING_HEADER} {dim}\n")
        for doc in iter_document_texts(job.dataset, job.source_format):
            vectors = encoder.encode(doc.texts)
            if vectors.shape != (len(doc.texts), dim):
                raise ValueError(
                    f"{doc.doc_id}: encoder returned {vectors.shape}, "
                    f"expected ({len(doc.texts)}, {dim})"
                )
            for entity_id, vector in enumerate(vectors):
                values = "\t".join(format(float(v), ".9g") for v in vector)
                fh.write(f"{doc.doc_id}\t{entity_id}\t{values}\n")
                rows += 1
    logger.info("wrote %d embedding rows (dim %d) to %s", rows, dim, job.embeddings_path)
    return rows


def export_token_counts(job: ExportJob, encoder: Encoder) -> int:
    """Write one subword token count per entity; returns the row count."""
    if not job.token_counts_path:
        raise ValueError("job has no token_counts_path")
    rows = 0
    with Path(job.token_counts_path).open("w", encoding="utf-8") as fh:
        fh.write(TOKEN_COUNT_HEADER + "\n")
        for doc in iter_document_texts(job.dataset, job.source_format):
            for entity_id, text in enumerate(doc.texts):
                fh.write(f"{doc.doc_id}\t{entity_id}\t{encoder.count_tokens(text)}\n")
                rows += 1
    logger.info("wrote %d token-count rows to %s", rows, job.token_counts_path)
    return rows
