"""Shared builders: synthetic form documents, random instances, FD helpers."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from ecnre import documents as docs
from ecnre import model, sidecars
from ecnre.autodiff import Tensor
from ecnre.model import EcnConfig, EcnParams, forward_tensors
from ecnre.training import _pair_loss

HQA_LABELS = (docs.Label.HEADER, docs.Label.QUESTION, docs.Label.ANSWER)


def make_form(doc_id: str, n_rows: int, seed: int, page: int = 1000) -> docs.Document:
    """A header plus n_rows of question/answer pairs with jittered boxes."""
    rng = np.random.default_rng(seed)
    entities = [docs.Entity(0, "FORM", docs.BBox(300, 20, 700, 70), docs.Label.HEADER)]
    relations = set()
    idx = 1
    for row in range(n_rows):
        y = 100 + 85 * row + int(rng.integers(0, 20))
        q_width = int(rng.integers(150, 280))
        a_width = int(rng.integers(150, 300))
        question = docs.Entity(
            idx, f"Question {row}", docs.BBox(40, y, 40 + q_width, y + 50), docs.Label.QUESTION
        )
        answer = docs.Entity(
            idx + 1, f"Answer {row}", docs.BBox(360, y, 360 + a_width, y + 50), docs.Label.ANSWER
        )
        entities.extend([question, answer])
        relations.add(docs.Relation(question.id, answer.id))
        idx += 2
    return docs.Document(doc_id, page, page, entities, relations)


def make_corpus(language: str = "fr", n_docs: int = 3, seed: int = 0) -> docs.Corpus:
    return docs.Corpus(
        language,
        "train",
        [make_form(f"{language}-doc{i}", 4 + i % 3, seed + i) for i in range(n_docs)],
    )


def random_task_instance(
    rng: np.random.Generator,
    n: int,
    use_labels: bool,
    scope: docs.EntityScope,
    text_dim: int = 0,
    language: str = "fr",
):
    """A random page under a task setting, plus a matching embedding table."""
    pool = list(docs.Label) if scope is docs.EntityScope.OHQA else list(HQA_LABELS)
    entities = []
    for i in range(n):
        x0 = int(rng.integers(0, 800))
        y0 = int(rng.integers(0, 800))
        width = int(rng.integers(20, 180))
        height = int(rng.integers(20, 180))
        label = pool[int(rng.integers(len(pool)))]
        entities.append(
            docs.Entity(i, f"text {i}", docs.BBox(x0, y0, x0 + width, y0 + height), label)
        )
    doc = docs.Document("rand", 1000, 1000, entities, set())
    setting = docs.TaskSetting(use_labels, scope, language)
    instance = docs.apply_setting(docs.Corpus(language, "train", [doc]), setting)[0]
    m = instance.n_entities
    gold = set()
    if m >= 2:
        for _ in range(max(1, m // 2)):
            i, j = rng.choice(m, size=2, replace=False)
            gold.add((int(i), int(j)))
    instance.gold = frozenset(gold)
    table = None
    if text_dim:
        vectors = {
            ("rand", eid): rng.normal(size=text_dim) for eid in instance.entity_ids
        }
        table = sidecars.EmbeddingTable(text_dim, vectors)
    layout = sidecars.derive_layout(setting, text_dim, label_dim=3)
    return instance, layout, table


def loss_value(gi, params: EcnParams, pos_weight: float = 1.0) -> float:
    """Forward-only loss with parameters frozen out of the autodiff graph."""
    frozen = EcnParams(
        params.config, params.layout, params.seed,
        {name: Tensor(t.data) for name, t in params.items()},
    )
    _, probs = forward_tensors(gi, frozen)
    return float(_pair_loss(Tensor(probs.data), gi.gold, pos_weight).data)


def finite_difference_gradients(gi, params: EcnParams, pos_weight: float = 1.0,
                                step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of the loss for every parameter element."""
    out = {}
    for name, tensor in params.items():
        flat = tensor.data.ravel()
        grad = np.zeros_like(flat)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            upper = loss_value(gi, params, pos_weight)
            flat[idx] = original - step
            lower = loss_value(gi, params, pos_weight)
            flat[idx] = original
            grad[idx] = (upper - lower) / (2.0 * step)
        out[name] = grad.reshape(tensor.data.shape)
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-4) -> float:
    """Worst-case |a - f| / max(|a|, |f|, floor) over all parameters.

    The floor turns the comparison into an absolute tolerance for elements
    whose gradient magnitude sits below it, where central differences are
    dominated by rounding noise.
    """
    worst = 0.0
    for name in analytic:
        a = analytic[name].ravel()
        f = numeric[name].ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def small_config() -> EcnConfig:
    return EcnConfig(node_dim=4, edge_dim=4, layers=2, stacked_convolutions=2)


def jitter_params(params: EcnParams, rng: np.random.Generator, scale: float = 0.1) -> EcnParams:
    """Move parameters to a generic point for gradient checking.

    Freshly initialized biases are exactly zero, a symmetric point where edge
    representations can collapse to exact zero rows and park downstream relu
    inputs right on the kink (parameter-dependent, so finite differences see
    a one-sided slope there). Jittering every tensor makes such coincidences
    measure-zero.
    """
    for _, tensor in params.items():
        tensor.data = tensor.data + rng.uniform(-scale, scale, size=tensor.data.shape)
    return params


def relu_margin(gi, params: EcnParams) -> float:
    """Smallest nonzero |pre-activation| seen by relu during one forward pass.

    Central differences are only a valid oracle where the loss is smooth
    within +-step of the operating point; an activation sitting closer to the
    relu kink than the step size straddles two linear regimes and produces a
    bogus difference quotient. Structural zeros (empty-neighborhood sums) are
    parameter-independent and therefore harmless, so they are ignored.
    """
    from ecnre import model as model_module

    margins = [np.inf]
    original = model_module._ACTIVATIONS["relu"]

    def spy(t):
        magnitudes = np.abs(np.asarray(t.data))
        nonzero = magnitudes[magnitudes > 0.0]
        if nonzero.size:
            margins.append(float(nonzero.min()))
        return original(t)

    model_module._ACTIVATIONS["relu"] = spy
    try:
        forward_tensors(gi, params)
    finally:
        model_module._ACTIVATIONS["relu"] = original
    return min(margins)


def data_root() -> Path | None:
    """Real-dataset root for reproduction tests, if one is mounted."""
    root = os.environ.get("ECNRE_DATA_ROOT")
    if root and Path(root).is_dir():
        return Path(root)
    local = Path(__file__).resolve().parent.parent / "data"
    if local.is_dir() and any(local.glob("*.json")):
        return local
    return None


requires_dataset = pytest.mark.skipif(
    data_root() is None,
    reason="needs the public dataset files (set ECNRE_DATA_ROOT or populate ./data)",
)
