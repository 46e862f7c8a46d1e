"""Published-corpus statistics; these run only when the datasets are mounted.

Expected counts are the published per-language relation totals for the full
(unsplit) documents. Token-count-dependent splits are covered by the
exporter package, which owns the reference tokenizer.
"""

from __future__ import annotations

import pytest

from conftest import data_root, requires_dataset
from ecnre import documents as docs

TRAIN_GOLD = {
    "en": 3129, "zh": 4621, "ja": 3819, "es": 4239,
    "fr": 3425, "it": 4927, "de": 3982, "pt": 5414,
}
TEST_GOLD = {
    "en": 814, "zh": 1728, "ja": 1208, "es": 1215,
    "fr": 1281, "it": 1597, "de": 1299, "pt": 1933,
}


def gold_count(language: str, split: str) -> int:
    corpus = docs.gold_filter_corpus(docs.load_corpus(data_root(), language, split))
    return sum(len(d.relations) for d in corpus.documents)


@requires_dataset
@pytest.mark.parametrize("language,expected", sorted(TRAIN_GOLD.items()))
def test_train_gold_relation_counts(language, expected):
    assert gold_count(language, "train") == expected


@requires_dataset
@pytest.mark.parametrize("language,expected", sorted(TEST_GOLD.items()))
def test_test_gold_relation_counts(language, expected):
    assert gold_count(language, "test") == expected


@requires_dataset
def test_total_train_relations():
    total = sum(gold_count(lang, "train") for lang in docs.LANGUAGES)
    assert total == 33556
