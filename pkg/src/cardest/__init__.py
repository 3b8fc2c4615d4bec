"""Transferable multi-table cardinality estimation.

Pipeline: load a schema and data into a Catalog, build a StatsStore of
fixed-length distributions, generate workloads with exact oracles,
featurize queries into set-structured tokens, train the two-stage
attention estimator, and score estimators with Q-ERROR / P-ERROR.
"""

from .catalog import (
    Catalog,
    ColumnData,
    JoinEdge,
    TableMeta,
    ingest_table,
    join_graph,
    load_catalog,
    load_schema,
    save_catalog,
    schema_from_dict,
)
from .errors import CardestError, ModelError, QueryError, SchemaError, StatsError
from .featurize import FeatureBundle, baseline_estimate, featurize
from .queryir import Predicate, QuerySpec, canonicalize, parse_query, print_query, sub_queries
from .stats import (
    Distribution,
    SpaceSavingSummary,
    StatsStore,
    build_category_summary,
    build_histogram,
    build_stats,
    heuristic_estimates,
    load_stats,
    predicate_selectivity,
    save_stats,
    scaling_factor_distribution,
    update_distribution,
)
from .workload import (
    WorkloadRecord,
    brute_force_cardinality,
    enumerate_connected_subgraphs,
    generate_query,
    generate_workload,
    read_workload,
    true_cardinality,
    write_workload,
)
from .evaluate import (
    ErrorReport,
    Plan,
    evaluate,
    optimal_plan,
    p_error,
    plan_cost,
    q_error,
)
from .model import (
    Corpus,
    ModelConfig,
    Parameters,
    TrainConfig,
    attention_block,
    embed,
    estimator_fn,
    finetune,
    init_model,
    load_checkpoint,
    mse_loss,
    predict_log_card,
    save_checkpoint,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
