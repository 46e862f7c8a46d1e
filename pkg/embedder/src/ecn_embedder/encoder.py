"""Pretrained-encoder wrapper: mean-pooled last-layer vectors, token counts.

Pooling is fixed to the mean of the last hidden layer over real (unmasked)
tokens; the CLS vector is deliberately not offered. Token counts are the
subword counts of the bare entity text (no special tokens), which is what a
length-limited encoder actually spends its window on.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np


class Encoder(Protocol):
    """What the export jobs need from a text encoder."""

    @property
    def hidden_size(self) -> int: ...

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...

    def count_tokens(self, text: str) -> int: ...


class HFEncoder:
    """A transformers encoder (e.g. xlm-roberta-base, bert-base-multilingual-cased)."""

    def __init__(self, model_name: str, device: str = "cpu",
                 batch_size: int = 32, max_length: int = 512):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.model_name = model_name
        self.batch_size = batch_size
        self.max_length = max_length
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name).to(device).eval()
        self.device = device

    @property
    def hidden_size(self) -> int:
        return int(self.model.config.hidden_size)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        """Mean of the last hidden layer over attention-masked tokens."""
        out = np.zeros((len(texts), self.hidden_size), dtype=np.float64)
        todo = [(i, t) for i, t in enumerate(texts) if t]  # empty text stays zero
        torch = self._torch
        with torch.no_grad():
            for start in range(0, len(todo), self.batch_size):
                chunk = todo[start:start + self.batch_size]
                batch = self.tokenizer(
                    [t for _, t in chunk],
                    padding=True,
                    truncation=True,
                    max_length=self.max_length,
                    return_tensors="pt",
                ).to(self.device)
                hidden = self.model(**batch).last_hidden_state
                mask = batch["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
                for (row, _), vec in zip(chunk, pooled.cpu().numpy()):
                    out[row] = vec
        return out

    def count_tokens(self, text: str) -> int:
        if not text:
            return 0
        return len(self.tokenizer(text, add_special_tokens=False)["input_ids"])
