"""Label embedding trees built from stochastic triplet orderings of labeled
point clouds, with tree-descent (set-valued) classification, error-flow
graphs and sublabel analysis."""

from .classify import (
    KNNNodeClassifier,
    LabelSet,
    NewLabelResult,
    TreeDescender,
    classify_batch,
    descend,
    embed_new_label,
    train_node_classifier,
)
from .dataset import (
    Dataset,
    DataError,
    SyntheticSpec,
    balanced_topology,
    generate_synthetic,
    load_csv,
    split_stratified,
    standardize,
)
from .evalgraph import (
    ConfusionMatrix,
    ErrorFlowMatrix,
    PredictiveGraph,
    build_graph,
    cross_validate,
    error_flow,
    export_dot,
)
from .hierarchy import Dendrogram, agglomerate, cut, export_newick, parse_newick, tree_distance
from .ordering import (
    DissimMatrix,
    DominanceMatrix,
    PairIndex,
    build_dominance_full,
    build_dominance_sparse,
    default_T,
    densify_transitive,
    dissimilarity_from_dominance,
    pair_index,
)
from .sublabel import SublabelMap, discover_sublabels, fine_pipeline, relabel

__version__ = "0.1.0"
