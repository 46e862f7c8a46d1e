"""The edge convolution network with learnt edge embeddings.

One layer keeps a node's own projected representation separated from its
aggregated neighborhood: with mu = node projection and e the current edge
representation,

    mu_i    = h_i  W_node + b_node
    conv_k(i) = sum over neighbors j of (W_k (e_ij W_edge_in + b_edge_in)) * mu_j
    h'_i    = act(mu_i ++ conv_1(i) ++ ... ++ conv_K(i))
    e'_ij   = act(e_ij W_edge_out + b_edge_out)

(elementwise product, ++ concatenation), so the layer output width is
(K + 1) * node_dim regardless of the input width. A final decoder scores
every ordered node pair through a two-layer feed-forward map over the
concatenated pair representation, sigmoid-ed into a probability.

Neighbor gathering and aggregation are expressed as one-hot matrix products.
That keeps every reduction's summation order fixed by edge-array position,
which makes the forward pass exactly equivariant under node permutations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .documents import TaskInstance
from .errors import DataError, LayoutMismatchError
from .geometry import (
    EDGE_FEATURE_DIM,
    directed_edge_arrays,
    line_of_sight_graph,
    normalize_bbox,
)
from .sidecars import (
    EmbeddingTable,
    FeatureLayout,
    check_layout,
    geometry_block,
    label_indices,
    text_block,
)

CHECKPOINT_TAG = "ecn-ckpt v1"

_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class EcnConfig:
    """Architecture hyperparameters; defaults are the monolingual selection."""

    node_dim: int = 128
    edge_dim: int = 128
    layers: int = 6
    stacked_convolutions: int = 6
    decoder_hidden: int | None = None  # None: use node_dim
    nonlinearity: str = "relu"
    threshold: float = 0.5

    def __post_init__(self) -> None:
        for name in ("node_dim", "edge_dim", "layers", "stacked_convolutions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.decoder_hidden is not None and self.decoder_hidden < 1:
            raise ValueError("decoder_hidden must be >= 1")
        if self.nonlinearity not in _ACTIVATIONS:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must lie in [0, 1]")

    @classmethod
    def monolingual(cls, **overrides) -> "EcnConfig":
        return cls(**overrides)

    @classmethod
    def multilingual(cls, **overrides) -> "EcnConfig":
        overrides.setdefault("node_dim", 256)
        overrides.setdefault("stacked_convolutions", 8)
        return cls(**overrides)

    @property
    def hidden_dim(self) -> int:
        return self.decoder_hidden if self.decoder_hidden is not None else self.node_dim

    @property
    def output_dim(self) -> int:
        return (self.stacked_convolutions + 1) * self.node_dim


class EcnParams:
    """All trainable tensors plus the config/layout/seed they belong to."""

    def __init__(
        self,
        config: EcnConfig,
        layout: FeatureLayout,
        seed: int,
        tensors: dict[str, Tensor],
    ):
        self.config = config
        self.layout = layout
        self.seed = seed
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "EcnParams":
        cloned = {
            name: Tensor(t.data.copy(), requires_grad=True) for name, t in self.tensors.items()
        }
        return EcnParams(self.config, self.layout, self.seed, cloned)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape if shape is not None else (fan_in, fan_out))


def parameter_names(config: EcnConfig, layout: FeatureLayout) -> set[str]:
    names = set()
    for layer in range(config.layers):
        names.update({f"conv{layer}.node_w", f"conv{layer}.node_b",
                      f"conv{layer}.edge_in_w", f"conv{layer}.edge_in_b",
                      f"conv{layer}.edge_out_w", f"conv{layer}.edge_out_b"})
        names.update(f"conv{layer}.stack{k}_w" for k in range(config.stacked_convolutions))
    names.update({"decoder.head_w", "decoder.tail_w", "decoder.hidden_b",
                  "decoder.out_w", "decoder.out_b"})
    if layout.label_classes:
        names.add("label_embedding")
    return names


def init_params(config: EcnConfig, layout: FeatureLayout, seed: int) -> EcnParams:
    """Fan-aware uniform weights, zero biases; deterministic for a seed."""
    rng = np.random.default_rng(seed)
    d, de, K = config.node_dim, config.edge_dim, config.stacked_convolutions
    tensors: dict[str, Tensor] = {}

    def param(name: str, array: np.ndarray) -> None:
        tensors[name] = Tensor(array, requires_grad=True)

    node_in = layout.total_dim
    edge_in = EDGE_FEATURE_DIM
    for layer in range(config.layers):
        param(f"conv{layer}.node_w", _glorot(rng, node_in, d))
        param(f"conv{layer}.node_b", np.zeros(d))
        param(f"conv{layer}.edge_in_w", _glorot(rng, edge_in, d))
        param(f"conv{layer}.edge_in_b", np.zeros(d))
        for k in range(K):
            param(f"conv{layer}.stack{k}_w", _glorot(rng, d, d))
        param(f"conv{layer}.edge_out_w", _glorot(rng, edge_in, de))
        param(f"conv{layer}.edge_out_b", np.zeros(de))
        node_in = config.output_dim
        edge_in = de

    hidden = config.hidden_dim
    param("decoder.head_w", _glorot(rng, 2 * config.output_dim, hidden,
                                    shape=(config.output_dim, hidden)))
    param("decoder.tail_w", _glorot(rng, 2 * config.output_dim, hidden,
                                    shape=(config.output_dim, hidden)))
    param("decoder.hidden_b", np.zeros(hidden))
    param("decoder.out_w", _glorot(rng, hidden, 1))
    param("decoder.out_b", np.zeros(1))
    if layout.label_classes:
        param(
            "label_embedding",
            _glorot(rng, layout.label_classes, layout.label_dim),
        )
    return EcnParams(config, layout, seed, tensors)


# ---------------------------------------------------------------------------
# Graph instances


@dataclass
class GraphInstance:
    """A task instance with features and adjacency materialized for the model."""

    doc_id: str
    language: str
    n: int
    text: np.ndarray | None
    geometry: np.ndarray
    label_ids: np.ndarray | None
    dst: np.ndarray
    src: np.ndarray
    edge_inputs: np.ndarray
    gold: frozenset[tuple[int, int]]
    entity_ids: list[int]

    @property
    def n_directed_edges(self) -> int:
        return len(self.dst)


def prepare_graph_instance(
    instance: TaskInstance,
    layout: FeatureLayout,
    table: EmbeddingTable | None = None,
) -> GraphInstance:
    """Build node feature blocks and the line-of-sight adjacency for one page."""
    check_layout(instance, layout, table)
    boxes = [
        normalize_bbox(b, instance.page_width, instance.page_height) for b in instance.boxes
    ]
    adjacency = line_of_sight_graph(boxes)
    dst, src, edge_inputs = directed_edge_arrays(boxes, adjacency)
    return GraphInstance(
        doc_id=instance.doc_id,
        language=instance.language,
        n=instance.n_entities,
        text=text_block(instance, table) if layout.text_dim else None,
        geometry=geometry_block(instance),
        label_ids=label_indices(instance, layout) if layout.label_classes else None,
        dst=dst,
        src=src,
        edge_inputs=edge_inputs,
        gold=instance.gold,
        entity_ids=list(instance.entity_ids),
    )


def _one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(indices), width), dtype=np.float64)
    out[np.arange(len(indices)), indices] = 1.0
    return out


def _check_instance(gi: GraphInstance, params: EcnParams) -> None:
    layout = params.layout
    has_text = gi.text is not None
    if bool(layout.text_dim) != has_text or (has_text and gi.text.shape[1] != layout.text_dim):
        raise LayoutMismatchError(
            f"{gi.doc_id}: instance text block does not match checkpoint layout {layout}"
        )
    has_labels = gi.label_ids is not None
    if bool(layout.label_classes) != has_labels:
        raise LayoutMismatchError(
            f"{gi.doc_id}: instance label visibility does not match checkpoint layout {layout}"
        )
    if has_labels and gi.label_ids.max(initial=-1) >= layout.label_classes:
        raise LayoutMismatchError(f"{gi.doc_id}: label index outside checkpoint layout {layout}")


def node_input(gi: GraphInstance, params: EcnParams) -> Tensor:
    """Concatenate [text | label embedding | geometry] into the input tensor."""
    _check_instance(gi, params)
    blocks: list[Tensor] = []
    if gi.text is not None:
        blocks.append(Tensor(gi.text))
    if gi.label_ids is not None:
        lookup = Tensor(_one_hot(gi.label_ids, params.layout.label_classes))
        blocks.append(lookup @ params["label_embedding"])
    blocks.append(Tensor(gi.geometry))
    return blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=1)


def ecn_layer(
    h: Tensor,
    e: Tensor,
    select: Tensor,
    incidence: Tensor,
    params: EcnParams,
    layer: int,
) -> tuple[Tensor, Tensor]:
    """One edge-conditioned convolution layer plus the edge representation update.

    ``select`` is the (directed-edge x node) one-hot picking each edge's
    neighbor row; ``incidence`` the (node x directed-edge) one-hot summing
    messages at each edge's collecting node. Isolated nodes receive the empty
    sum (zeros), so their output is act(mu ++ 0).
    """
    act = _ACTIVATIONS[params.config.nonlinearity]
    mu = h @ params[f"conv{layer}.node_w"] + params[f"conv{layer}.node_b"]
    projected = e @ params[f"conv{layer}.edge_in_w"] + params[f"conv{layer}.edge_in_b"]
    mu_neighbor = select @ mu
    parts = [mu]
    for k in range(params.config.stacked_convolutions):
        messages = (projected @ params[f"conv{layer}.stack{k}_w"]) * mu_neighbor
        parts.append(incidence @ messages)
    h_next = act(ad.concat(parts, axis=1))
    e_next = act(e @ params[f"conv{layer}.edge_out_w"] + params[f"conv{layer}.edge_out_b"])
    return h_next, e_next


def run_convolutions(gi: GraphInstance, params: EcnParams) -> Tensor:
    """Apply the full convolution stack, returning final node representations."""
    h = node_input(gi, params)
    e = Tensor(gi.edge_inputs)
    select = Tensor(_one_hot(gi.src, gi.n))
    incidence = Tensor(_one_hot(gi.dst, gi.n).T)
    for layer in range(params.config.layers):
        h, e = ecn_layer(h, e, select, incidence, params, layer)
    return h


def pair_probabilities(h: Tensor, params: EcnParams) -> Tensor:
    """Score every ordered node pair: sigmoid(FFN(h_i ++ h_j)) as an (n, n) grid.

    The first decoder layer is applied in split form (head half + tail half),
    which is algebraically the concatenation form but never materializes the
    (n^2, 2 * width) pair matrix. The diagonal is computed but meaningless.
    """
    n = h.shape[0]
    hidden = params.config.hidden_dim
    act = _ACTIVATIONS[params.config.nonlinearity]
    head = h @ params["decoder.head_w"]
    tail = h @ params["decoder.tail_w"]
    grid = act(
        ad.reshape(head, (n, 1, hidden))
        + ad.reshape(tail, (1, n, hidden))
        + params["decoder.hidden_b"]
    )
    logits = ad.reshape(grid, (n * n, hidden)) @ params["decoder.out_w"] + params["decoder.out_b"]
    return ad.sigmoid(ad.reshape(logits, (n, n)))


def forward_tensors(gi: GraphInstance, params: EcnParams) -> tuple[Tensor, Tensor]:
    h = run_convolutions(gi, params)
    return h, pair_probabilities(h, params)


@dataclass
class PairScores:
    """Probabilities for all ordered entity pairs of one document."""

    matrix: np.ndarray  # (n, n); the diagonal carries no meaning

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def score(self, head: int, tail: int) -> float:
        if head == tail:
            raise ValueError("no score for a self-pair")
        return float(self.matrix[head, tail])

    def as_vector(self) -> np.ndarray:
        """Off-diagonal scores, row-major; length n * (n - 1)."""
        mask = ~np.eye(self.n, dtype=bool)
        return self.matrix[mask]

    def pairs(self) -> Iterator[tuple[int, int, float]]:
        for i in range(self.n):
            for j in range(self.n):
                if i != j:
                    yield i, j, float(self.matrix[i, j])


def forward(gi: GraphInstance, params: EcnParams) -> tuple[np.ndarray, PairScores]:
    """Inference-only forward pass: final node matrix and all pair scores."""
    h, probs = forward_tensors(gi, params)
    return h.data, PairScores(probs.data)


def predict(scores: PairScores, threshold: float) -> set[tuple[int, int]]:
    """Emit every ordered pair whose probability reaches the threshold."""
    hits = np.argwhere(scores.matrix >= threshold)
    return {(int(i), int(j)) for i, j in hits if i != j}


def predict_relations(
    gi: GraphInstance, params: EcnParams, threshold: float | None = None
) -> set[tuple[int, int]]:
    if threshold is None:
        threshold = params.config.threshold
    _, scores = forward(gi, params)
    return predict(scores, threshold)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str | Path, params: EcnParams) -> None:
    meta = {
        "format": CHECKPOINT_TAG,
        "config": asdict(params.config),
        "layout": params.layout.to_dict(),
        "seed": params.seed,
    }
    arrays = {name: t.data for name, t in params.items()}
    with Path(path).open("wb") as fh:
        np.savez(fh, __meta__=json.dumps(meta), **arrays)


def load_checkpoint(path: str | Path) -> EcnParams:
    path = Path(path)
    try:
        payload = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
    with payload:
        if "__meta__" not in payload:
            raise DataError(f"{path}: not a model checkpoint (missing metadata)")
        meta = json.loads(str(payload["__meta__"]))
        if meta.get("format") != CHECKPOINT_TAG:
            raise DataError(
                f"{path}: unsupported checkpoint tag {meta.get('format')!r}, "
                f"expected {CHECKPOINT_TAG!r}"
            )
        config = EcnConfig(**meta["config"])
        layout = FeatureLayout.from_dict(meta["layout"])
        tensors = {
            name: Tensor(payload[name], requires_grad=True)
            for name in payload.files
            if name != "__meta__"
        }
    params = EcnParams(config, layout, int(meta["seed"]), tensors)
    if set(tensors) != parameter_names(config, layout):
        raise DataError(f"{path}: checkpoint tensors do not match the declared config")
    return params
