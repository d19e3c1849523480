"""Target-specific training-set search and budgeted pruning over image embeddings."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Budget,
    EmbeddingRecord,
    SourcePool,
    TargetSet,
    ingest_dataset,
    load_target,
    merge_pools,
    read_pool,
    write_binary,
    write_csv,
    write_pool,
)
from .stats import GaussianStats, accumulate, fid, mean_cov, merge_stats, trace_sqrt_product  # noqa: E402
from .clustering import ClusterPartition, id_average, kmeans  # noqa: E402
from .search import SearchResult, cluster_fids, greedy_search  # noqa: E402
from .pruning import PruneResult, fps_prune, kcenter_radius, sample_identities  # noqa: E402
from .analysis import CompositionReport, composition, pearson  # noqa: E402

__all__ = [
    "Budget", "EmbeddingRecord", "SourcePool", "TargetSet", "ingest_dataset", "load_target",
    "merge_pools", "read_pool", "write_binary", "write_csv", "write_pool",
    "GaussianStats", "accumulate", "fid", "mean_cov", "merge_stats", "trace_sqrt_product",
    "ClusterPartition", "id_average", "kmeans",
    "SearchResult", "cluster_fids", "greedy_search",
    "PruneResult", "fps_prune", "kcenter_radius", "sample_identities",
    "CompositionReport", "composition", "pearson",
]
