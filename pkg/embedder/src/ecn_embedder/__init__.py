"""Offline exporter: entity text embeddings and token counts as sidecar files."""

from .encoder import Encoder, HFEncoder
from .export import ExportJob, export_embeddings, export_token_counts
from .records import DocumentText, iter_document_texts

__version__ = "0.1.0"

__all__ = [
    "DocumentText",
    "Encoder",
    "ExportJob",
    "HFEncoder",
    "export_embeddings",
    "export_token_counts",
    "iter_document_texts",
]
