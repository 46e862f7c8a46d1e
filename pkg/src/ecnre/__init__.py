"""Relation extraction on form documents with an edge convolution network."""

from .documents import (
    BBox,
    Corpus,
    Document,
    Entity,
    EntityScope,
    Label,
    Relation,
    TaskInstance,
    TaskSetting,
    apply_setting,
    filter_gold_relations,
    load_corpus,
    parse_document,
    split_by_token_limit,
)
from .errors import (
    DataError,
    EcnreError,
    FeatureError,
    LayoutMismatchError,
    NumericError,
    ParseError,
    SidecarError,
)
from .estimator import RelationExtractor
from .evaluation import (
    EvalReport,
    Metrics,
    corrected_recall,
    evaluate,
    multi_run,
    relation_prf,
    render_report,
)
from .geometry import (
    Adjacency,
    NormalizedBBox,
    area_ratios,
    box_distances,
    edge_features,
    line_of_sight_graph,
    normalize_bbox,
)
from .model import (
    EcnConfig,
    EcnParams,
    GraphInstance,
    PairScores,
    forward,
    init_params,
    load_checkpoint,
    predict,
    prepare_graph_instance,
    save_checkpoint,
)
from .sidecars import (
    EmbeddingTable,
    FeatureLayout,
    build_node_features,
    derive_layout,
    load_embedding_sidecar,
    load_token_count_sidecar,
)
from .training import TrainConfig, adam_step, bce_loss, gradients, train

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
