"""Scikit-learn style front door for the relation extractor.

``RelationExtractor`` wraps graph preparation, training and prediction behind
the usual ``fit`` / ``predict`` / ``get_params`` surface so the model slots
into sklearn tooling (clone, grid search over the hyperparameters). Samples
are :class:`~ecnre.documents.TaskInstance` objects; targets are sets of
(head, tail) index pairs and default to each instance's own gold set.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .documents import TaskInstance
from .evaluation import evaluate
from .model import (
    EcnConfig,
    PairScores,
    forward,
    predict,
    prepare_graph_instance,
)
from .sidecars import EmbeddingTable, FeatureLayout
from .training import TrainConfig, train


def check_task_instances(X) -> list[TaskInstance]:
    """Validate a sample collection: non-empty, homogeneous task axes."""
    instances = list(X)
    if not instances:
        raise ValueError("X must contain at least one TaskInstance")
    for idx, inst in enumerate(instances):
        if not isinstance(inst, TaskInstance):
            raise TypeError(f"X[{idx}] is {type(inst).__name__}, expected TaskInstance")
    first = instances[0]
    for idx, inst in enumerate(instances):
        if inst.labels_visible != first.labels_visible:
            raise ValueError(f"X[{idx}] mixes label visibility within one collection")
        if inst.entity_scope != first.entity_scope:
            raise ValueError(f"X[{idx}] mixes entity scopes within one collection")
    return instances


def check_targets(instances: Sequence[TaskInstance], y) -> list[TaskInstance]:
    """Optionally override each instance's gold set with an explicit target."""
    if y is None:
        return list(instances)
    targets = list(y)
    if len(targets) != len(instances):
        raise ValueError(f"X has {len(instances)} samples but y has {len(targets)}")
    overridden = []
    for inst, target in zip(instances, targets):
        pairs = frozenset((int(h), int(t)) for h, t in target)
        for h, t in pairs:
            if not (0 <= h < inst.n_entities and 0 <= t < inst.n_entities):
                raise ValueError(f"{inst.doc_id}: target pair ({h}, {t}) out of range")
        overridden.append(replace(inst, gold=pairs))
    return overridden


class RelationExtractor(BaseEstimator):
    """Edge-convolution relation extractor with the published training regime.

    The constructor defaults are the selected monolingual hyperparameters;
    pass ``node_dim=256, stacked_convolutions=8`` for the multilingual ones.
    """

    def __init__(
        self,
        node_dim: int = 128,
        edge_dim: int = 128,
        layers: int = 6,
        stacked_convolutions: int = 6,
        decoder_hidden: int | None = None,
        nonlinearity: str = "relu",
        threshold: float = 0.5,
        label_dim: int = 16,
        learning_rate: float = 5e-4,
        epochs: int = 400,
        pos_weight: float = 1.0,
        shuffle: bool = True,
        grad_clip: float | None = None,
        weight_decay: float = 0.0,
        lr_decay: float = 1.0,
        seed: int = 0,
    ):
        self.node_dim = node_dim
        self.edge_dim = edge_dim
        self.layers = layers
        self.stacked_convolutions = stacked_convolutions
        self.decoder_hidden = decoder_hidden
        self.nonlinearity = nonlinearity
        self.threshold = threshold
        self.label_dim = label_dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.pos_weight = pos_weight
        self.shuffle = shuffle
        self.grad_clip = grad_clip
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.seed = seed

    def _model_config(self) -> EcnConfig:
        return EcnConfig(
            node_dim=self.node_dim,
            edge_dim=self.edge_dim,
            layers=self.layers,
            stacked_convolutions=self.stacked_convolutions,
            decoder_hidden=self.decoder_hidden,
            nonlinearity=self.nonlinearity,
            threshold=self.threshold,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            pos_weight=self.pos_weight,
            seed=self.seed,
            shuffle=self.shuffle,
            grad_clip=self.grad_clip,
            weight_decay=self.weight_decay,
            lr_decay=self.lr_decay,
        )

    def _layout(self, sample: TaskInstance, embeddings: EmbeddingTable | None) -> FeatureLayout:
        text_dim = embeddings.dim if embeddings is not None else 0
        if sample.labels_visible:
            return FeatureLayout(text_dim, len(sample.entity_scope.classes), self.label_dim)
        return FeatureLayout(text_dim, 0, 0)

    def fit(self, X, y=None, embeddings: EmbeddingTable | None = None):
        instances = check_targets(check_task_instances(X), y)
        layout = self._layout(instances[0], embeddings)
        graphs = [prepare_graph_instance(inst, layout, embeddings) for inst in instances]
        params, record = train(graphs, layout, self._model_config(), self._train_config())
        self.layout_ = layout
        self.params_ = params
        self.history_ = record
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError("this RelationExtractor has not been fitted yet")

    def _graphs(self, X, embeddings):
        self._check_fitted()
        return [
            prepare_graph_instance(inst, self.layout_, embeddings)
            for inst in check_task_instances(X)
        ]

    def predict_scores(self, X, embeddings: EmbeddingTable | None = None) -> list[PairScores]:
        return [forward(g, self.params_)[1] for g in self._graphs(X, embeddings)]

    def predict(self, X, embeddings: EmbeddingTable | None = None) -> list[set]:
        return [predict(s, self.threshold) for s in self.predict_scores(X, embeddings)]

    def score(self, X, y=None, embeddings: EmbeddingTable | None = None) -> float:
        """Micro-averaged relation F1 against y (or the instances' gold)."""
        self._check_fitted()
        instances = check_targets(check_task_instances(X), y)
        graphs = [
            prepare_graph_instance(inst, self.layout_, embeddings) for inst in instances
        ]
        pooled = evaluate(self.params_, graphs, self.threshold)
        return pooled.f1

    def evaluate(self, X, embeddings: EmbeddingTable | None = None):
        """Pooled Metrics (tp/fp/fn and P/R/F1) on a collection."""
        graphs = self._graphs(X, embeddings)
        return evaluate(self.params_, graphs, self.threshold)
