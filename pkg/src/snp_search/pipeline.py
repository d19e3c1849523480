"""End-to-end search / prune runs and the selection manifest.

Both the CLI and the HTTP service go through ``run_search`` and
``run_prune``; everything they emit is built here so the two surfaces
produce byte-identical manifests for the same configuration.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional

from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import composition
from .clustering import DEFAULT_CLUSTERS, id_average, kmeans
from .core import SourcePool, TargetSet, ingest_dataset, load_target, local_identity, merge_pools
from .errors import ConfigError, DataFormatError
from .pruning import fps_prune, kcenter_radius, sample_identities
from .search import SearchResult, greedy_search
from .stats import COVARIANCE_DENOMINATOR, GaussianStats, fid

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TRACE_NAME = "trace.csv"
REPORT_NAME = "search_report.json"
PARTITION_NAME = "partition.csv"

CONVENTIONS = {
    "covariance_denominator": COVARIANCE_DENOMINATOR,
    "statistics_precision": "float64",
    "kmeans_init": "k-means++",
    "kmeans_max_iter": 300,
    "cluster_metric": "squared_euclidean",
    "cluster_feature_normalization": "none",
    "fps_metric": "euclidean",
    "rng": "splitmix64",
    "identity_namespace": "(dataset_index << 40) | local_id",
}


def worker_count() -> int:
    """Worker cap from SNP_THREADS (default: CPU count)."""
    raw = os.environ.get("SNP_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"SNP_THREADS must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError(f"SNP_THREADS must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


# -- budget parsing -------------------------------------------------------------


def parse_count(text: str, what: str) -> tuple[str, float]:
    """``"120"`` -> ("abs", 120); ``"2%"`` -> ("pct", 2.0)."""
    s = str(text).strip()
    try:
        if s.endswith("%"):
            p = float(s[:-1])
            if not 0 < p <= 100:
                raise ValueError
            return "pct", p
        v = int(s)
        if v < 1:
            raise ValueError
        return "abs", v
    except ValueError:
        raise ConfigError(f"{what} must be a positive integer or a percentage in (0, 100], got {text!r}") from None


def resolve_ids(text: str, pool_identities: int) -> int:
    kind, v = parse_count(text, "--ids")
    if kind == "abs":
        return int(v)
    return max(1, math.floor(v / 100 * pool_identities))


def resolve_images(text: str, n_sampled: int, universe: int) -> int:
    """Percentages are of the images of the sampled identities, floored at one per identity."""
    kind, v = parse_count(text, "--images")
    if kind == "abs":
        return int(v)
    return max(n_sampled, math.floor(v / 100 * universe))


# -- configuration --------------------------------------------------------------


@dataclass
class RunConfig:
    pools: list[tuple[str, str]]
    target: str
    clusters: int = DEFAULT_CLUSTERS
    ids: str | None = None
    images: str | None = None
    seed_cluster: int = 0
    seed_ids: int = 0
    seed_fps: int = 0
    out: str | None = None
    format: str | None = None
    dump_partition: bool = False
    from_manifest: str | None = None

    @property
    def budgeted(self) -> bool:
        return self.ids is not None or self.images is not None

    def validate(self, need_budget: bool = False) -> None:
        if not self.pools and not self.from_manifest:
            raise ConfigError("at least one --pool name=path is required")
        for name, path in self.pools:
            if not name:
                raise ConfigError(f"pool {path!r} needs a name (use --pool name=path)")
            if not Path(path).is_file():
                raise ConfigError(f"pool file not found: {path}")
        if not self.target:
            raise ConfigError("--target is required")
        if not Path(self.target).is_file():
            raise ConfigError(f"target file not found: {self.target}")
        if self.from_manifest and not Path(self.from_manifest).is_file():
            raise ConfigError(f"manifest not found: {self.from_manifest}")
        if self.clusters < 1:
            raise ConfigError(f"--clusters must be >= 1, got {self.clusters}")
        if self.format is not None and self.format not in ("binary", "csv"):
            raise ConfigError(f"--format must be binary or csv, got {self.format!r}")
        for seed in (self.seed_cluster, self.seed_ids, self.seed_fps):
            if not 0 <= seed < 2**64:
                raise ConfigError(f"seeds must be unsigned 64-bit integers, got {seed}")
        if need_budget:
            if self.ids is None or self.images is None:
                raise ConfigError("prune needs both --ids and --images")
            ki, vi = parse_count(self.ids, "--ids")
            km, vm = parse_count(self.images, "--images")
            if ki == km == "abs" and vm < vi:
                raise ConfigError(f"image budget m={int(vm)} is smaller than identity budget n={int(vi)}")

    def echo(self) -> dict[str, Any]:
        """Config as embedded in the manifest (enough to re-run)."""
        return {
            "pools": [{"name": n, "path": p} for n, p in self.pools],
            "target": self.target,
            "format": self.format,
            "clusters": self.clusters,
            "budget": None if not self.budgeted else {"ids": self.ids, "images": self.images},
            "seeds": {"cluster": self.seed_cluster, "ids": self.seed_ids, "fps": self.seed_fps},
            "conventions": dict(CONVENTIONS),
        }

    @classmethod
    def from_echo(cls, echo: dict[str, Any], **overrides: Any) -> "RunConfig":
        budget = echo.get("budget") or {}
        seeds = echo.get("seeds") or {}
        cfg = cls(
            pools=[(p["name"], p["path"]) for p in echo["pools"]],
            target=echo["target"],
            clusters=int(echo.get("clusters", DEFAULT_CLUSTERS)),
            ids=budget.get("ids"),
            images=budget.get("images"),
            seed_cluster=int(seeds.get("cluster", 0)),
            seed_ids=int(seeds.get("ids", 0)),
            seed_fps=int(seeds.get("fps", 0)),
            format=echo.get("format"),
        )
        for k, v in overrides.items():
            setattr(cfg, k, v)
        return cfg


# -- loading --------------------------------------------------------------------


def load_pool(pools: list[tuple[str, str]], fmt: str | None = None, threads: int = 1) -> SourcePool:
    def one(spec: tuple[str, str]) -> SourcePool:
        name, path = spec
        return ingest_dataset(path, name, fmt)

    if threads > 1 and len(pools) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(one, pools))
    else:
        parts = [one(p) for p in pools]
    return merge_pools(parts)


@dataclass
class RunOutput:
    manifest: dict[str, Any]
    trace: list[tuple[int, int, float]]
    search_report: dict[str, Any]
    partition_rows: list[tuple[int, int]] = field(default_factory=list)


def _pool_summary(pool: SourcePool) -> dict[str, Any]:
    return {
        "datasets": list(pool.datasets),
        "records": len(pool),
        "identities": pool.num_identities,
        "dimension": pool.dimension,
    }


def _selected_entries(pool: SourcePool, indices) -> list[dict[str, Any]]:
    out = []
    for i in indices:
        i = int(i)
        ident = int(pool.identity_ids[i])
        out.append({
            "dataset": pool.datasets[int(pool.dataset_ids[i])],
            "identity": ident,
            "local_identity": local_identity(ident),
            "image_key": pool.image_keys[i],
        })
    return out


def _search_summary(result: SearchResult, pool: SourcePool) -> dict[str, Any]:
    n_images = int(sum(len(pool.id_index[i]) for i in result.identity_ids))
    return {
        "clusters_effective": result.partition.J if result.partition else None,
        "kmeans_iterations": result.partition.iterations if result.partition else None,
        "merged_clusters": [{"cluster": a, "into": b} for a, b in result.merged_clusters],
        "cluster_fids": [{"cluster": c, "fid": f} for c, f in result.cluster_fids],
        "trace": [{"step": k, "cluster": c, "fid": f} for k, (c, f) in enumerate(result.trace, start=1)],
        "selected_clusters": list(result.selected_clusters),
        "best_fid": result.best_fid,
        "identity_count": len(result.identity_ids),
        "image_count": n_images,
        "identity_ids": list(result.identity_ids),
    }


def _manifest(command: str, config: RunConfig, pool: SourcePool, target: TargetSet,
              search: dict[str, Any], prune: dict[str, Any] | None, comp: dict[str, Any],
              selected: list[dict[str, Any]]) -> dict[str, Any]:
    return {
        "toolkit": {"name": "snp-search", "version": __version__},
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "config": config.echo(),
        "pool": _pool_summary(pool),
        "target": {"records": len(target), "dimension": target.dimension},
        "search": search,
        "prune": prune,
        "composition": comp,
        "selected": selected,
    }


PoolLoader = Callable[[list[tuple[str, str]], Optional[str], int], SourcePool]


def _load_inputs(config: RunConfig, threads: int, loader: PoolLoader | None = None) -> tuple[SourcePool, TargetSet]:
    try:
        pool = (loader or load_pool)(config.pools, config.format, threads)
        target = load_target(config.target, config.format)
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {exc}") from None
    if pool.dimension != target.dimension:
        raise DataFormatError(f"pool dimension {pool.dimension} != target dimension {target.dimension}")
    return pool, target


def _search(config: RunConfig, pool: SourcePool, target: TargetSet, threads: int) -> SearchResult:
    points = id_average(pool)
    if len(points) < config.clusters:
        raise ConfigError(f"--clusters {config.clusters} exceeds the {len(points)} identities in the pool")
    partition = kmeans(points, config.clusters, config.seed_cluster)
    return greedy_search(pool, partition, target, threads)


def output_from_manifest(manifest: dict[str, Any], partition_rows=()) -> RunOutput:
    """Trace rows and the search report are views of the manifest's search section."""
    search = manifest["search"]
    report = {
        "trace": search["trace"],
        "selected_clusters": search["selected_clusters"],
        "best_fid": search["best_fid"],
        "identity_count": search["identity_count"],
        "composition": search["composition"],
    }
    trace = [(t["step"], t["cluster"], t["fid"]) for t in search["trace"]]
    return RunOutput(manifest, trace, report, list(partition_rows))


def run_search(config: RunConfig, loader: PoolLoader | None = None) -> RunOutput:
    config.validate()
    threads = worker_count()
    with threadpool_limits(limits=threads):
        pool, target = _load_inputs(config, threads, loader)
        result = _search(config, pool, target, threads)
        selected = pool.images_of(result.identity_ids)
        comp = composition(pool, selected, achieved_fid=result.best_fid).to_dict()
    search = _search_summary(result, pool)
    search["composition"] = comp
    manifest = _manifest("search", config, pool, target, search, None, comp, _selected_entries(pool, selected))
    rows = list(result.partition.assignment.items()) if config.dump_partition and result.partition else []
    return output_from_manifest(manifest, rows)


def read_manifest(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read manifest {path}: {exc}") from None


def _check_compatible(config: RunConfig, prior: dict[str, Any]) -> None:
    echo = prior.get("config", {})
    mine = config.echo()
    for key in ("pools", "target", "format", "clusters", "seeds"):
        a = echo.get(key)
        b = mine.get(key)
        if key == "seeds":
            a, b = (a or {}).get("cluster"), b["cluster"]
        if a != b:
            raise ConfigError(f"--from-manifest was produced with a different {key}: {a!r} vs {b!r}")


def run_prune(config: RunConfig, prior: dict[str, Any] | None = None,
              loader: PoolLoader | None = None) -> RunOutput:
    """Search (or reuse a prior search manifest) then prune to the budget."""
    config.validate(need_budget=True)
    if prior is None and config.from_manifest:
        prior = read_manifest(config.from_manifest)
    if prior is not None:
        _check_compatible(config, prior)
    threads = worker_count()
    with threadpool_limits(limits=threads):
        pool, target = _load_inputs(config, threads, loader)
        if prior is not None:
            search = prior["search"]
            identity_ids = [int(i) for i in search["identity_ids"]]
            unknown = [i for i in identity_ids if i not in pool.id_index]
            if unknown:
                raise DataFormatError(f"manifest identity {unknown[0]} not present in the pool")
        else:
            result = _search(config, pool, target, threads)
            search = _search_summary(result, pool)
            search["composition"] = composition(pool, pool.images_of(result.identity_ids),
                                                achieved_fid=result.best_fid).to_dict()
            identity_ids = result.identity_ids

        n = resolve_ids(config.ids, pool.num_identities)
        ids = sample_identities(identity_ids, n, config.seed_ids)
        universe = pool.images_of(ids)
        m = resolve_images(config.images, len(ids), len(universe))
        if m < n:
            raise ConfigError(f"image budget m={m} is smaller than identity budget n={n}")
        pruned = fps_prune(pool, ids, m, config.seed_fps)
        radius = kcenter_radius(pool, pruned.selected, pruned.universe)
        pruned_fid = None
        if len(pruned.selected) >= 2:
            pruned_fid = fid(GaussianStats.from_array(pool.descriptors[pruned.selected]),
                             GaussianStats.from_array(target.descriptors))
        budget = {"n": n, "m": m}
        comp = composition(pool, pruned.selected, achieved_fid=pruned_fid, budget=budget).to_dict()
        prune = {
            "n": n,
            "m": m,
            "identities_available": len(identity_ids),
            "id_sample": list(pruned.id_sample),
            "universe_size": len(pruned.universe),
            "seed_images": [{"identity": i, "record": r, "image_key": pool.image_keys[r]}
                            for i, r in pruned.seed_images.items()],
            "fps_order": list(pruned.fps_order),
            "selected_count": len(pruned.selected),
            "cover_radius": radius,
            "pruned_fid": pruned_fid,
        }
        selected = _selected_entries(pool, pruned.selected)
    manifest = _manifest("prune", config, pool, target, search, prune, comp, selected)
    return output_from_manifest(manifest)


# -- output ----------------------------------------------------------------------


def dumps_manifest(manifest: dict[str, Any]) -> str:
    return json.dumps(manifest, indent=2, ensure_ascii=False) + "\n"


def write_outputs(out_dir: str | Path, output: RunOutput) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_NAME).write_text(dumps_manifest(output.manifest), encoding="utf-8")
    (out / REPORT_NAME).write_text(json.dumps(output.search_report, indent=2) + "\n", encoding="utf-8")
    with open(out / TRACE_NAME, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "cluster", "fid"])
        for step, c, f in output.trace:
            w.writerow([step, c, repr(float(f))])
    if output.partition_rows:
        with open(out / PARTITION_NAME, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["identity", "cluster"])
            w.writerows(output.partition_rows)
    return out / MANIFEST_NAME


def fid_between(path_a: str | Path, path_b: str | Path, fmt: str | None = None) -> float:
    """FID between two embedding files (identity labels ignored)."""
    for p in (path_a, path_b):
        if not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")
    a = load_target(path_a, fmt)
    b = load_target(path_b, fmt)
    if a.dimension != b.dimension:
        raise DataFormatError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    with threadpool_limits(limits=worker_count()):
        return fid(GaussianStats.from_array(a.descriptors), GaussianStats.from_array(b.descriptors))


def strip_volatile(manifest: dict[str, Any]) -> dict[str, Any]:
    """Manifest minus fields excluded from determinism checks."""
    return {k: v for k, v in manifest.items() if k != "created_at"}


__all__ = [
    "RunConfig", "RunOutput", "run_search", "run_prune", "write_outputs", "fid_between",
    "read_manifest", "strip_volatile", "dumps_manifest", "worker_count", "load_pool",
]
