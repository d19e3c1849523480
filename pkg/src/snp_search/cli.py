"""``snp`` command line.

Subcommands run in-process by default; ``--server URL`` sends ``fid``,
``search`` and ``prune`` to a running ``snp serve`` instead and writes the
returned manifest locally.

Exit codes: 0 ok, 1 configuration error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .analysis import correlate, load_correlation_csv
from .core import write_pool
from .errors import ConfigError, DataFormatError, NumericError, SnPError
from .pipeline import (
    RunConfig,
    fid_between,
    load_pool,
    output_from_manifest,
    read_manifest,
    run_prune,
    run_search,
    worker_count,
    write_outputs,
)

log = logging.getLogger("snp_search")


def _pool_arg(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected name=path, got {text!r}")
    return name, path


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pool", action="append", type=_pool_arg, default=[], metavar="NAME=PATH",
                   help="source dataset file (repeatable)")
    p.add_argument("--target", help="target embedding file")
    p.add_argument("--clusters", type=int, default=None, metavar="J", help="k-means cluster count (default 50)")
    p.add_argument("--seed-cluster", type=int, default=None)
    p.add_argument("--out", default="snp_out", help="output directory")
    p.add_argument("--format", choices=["binary", "csv"], default=None,
                   help="input format (default: by extension, .csv or binary)")
    p.add_argument("--config", metavar="MANIFEST", help="re-run with the config embedded in a manifest")
    p.add_argument("--server", metavar="URL", help="run on a snp service instead of in-process")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snp", description="Target-specific training-set search and pruning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and merge embedding files into one binary pool")
    p.add_argument("--pool", action="append", type=_pool_arg, default=[], metavar="NAME=PATH", required=True)
    p.add_argument("--format", choices=["binary", "csv"], default=None)
    p.add_argument("--out", default="snp_out", help="output directory (writes pool.snpe)")

    p = sub.add_parser("fid", help="FID between two embedding files")
    p.add_argument("path_a")
    p.add_argument("path_b")
    p.add_argument("--format", choices=["binary", "csv"], default=None)
    p.add_argument("--server", metavar="URL")

    p = sub.add_parser("search", help="cluster the pool and pick the FID-minimising prefix")
    _add_run_args(p)
    p.add_argument("--dump-partition", action="store_true", help="also write partition.csv")

    p = sub.add_parser("prune", help="search, then prune to a budget of n identities and m images")
    _add_run_args(p)
    p.add_argument("--ids", help="identity budget n, absolute or p%% of pool identities")
    p.add_argument("--images", help="image budget m, absolute or p%% of the sampled identities' images")
    p.add_argument("--seed-ids", type=int, default=None)
    p.add_argument("--seed-fps", type=int, default=None)
    p.add_argument("--from-manifest", metavar="MANIFEST", help="reuse the search result of a prior manifest")

    p = sub.add_parser("report", help="print the composition of a manifest's selection")
    p.add_argument("manifest")
    p.add_argument("--json", action="store_true", help="print the composition as JSON")

    p = sub.add_parser("correlate", help="Pearson correlations over a label,fid,num_ids,score CSV")
    p.add_argument("csv")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_echo(read_manifest(args.config)["config"])
    else:
        cfg = RunConfig(pools=[], target=args.target or "")
        cfg.clusters = 50
    if args.pool:
        cfg.pools = list(args.pool)
    if args.target:
        cfg.target = args.target
    if args.clusters is not None:
        cfg.clusters = args.clusters
    if args.seed_cluster is not None:
        cfg.seed_cluster = args.seed_cluster
    if args.format is not None:
        cfg.format = args.format
    for attr in ("ids", "images", "seed_ids", "seed_fps", "from_manifest", "dump_partition"):
        value = getattr(args, attr, None)
        if value not in (None, False):
            setattr(cfg, attr, value)
    cfg.out = args.out
    return cfg


# -- thin client ------------------------------------------------------------------


def _post(server: str, route: str, payload: dict) -> dict:
    import httpx

    try:
        resp = httpx.post(server.rstrip("/") + route, json=payload, timeout=None)
    except httpx.HTTPError as exc:
        raise ConfigError(f"cannot reach server {server}: {exc}") from None
    body = resp.json()
    if resp.status_code >= 400:
        code = body.get("exit_code") if isinstance(body, dict) else None
        cls = {1: ConfigError, 2: DataFormatError, 3: NumericError}.get(code, ConfigError)
        detail = body.get("detail") if isinstance(body, dict) else body
        raise cls(f"server: {detail}")
    return body


def _request(cfg: RunConfig, budget: bool) -> dict:
    payload = {
        "pools": [{"name": n, "path": str(Path(p).resolve())} for n, p in cfg.pools],
        "target": str(Path(cfg.target).resolve()) if cfg.target else "",
        "clusters": cfg.clusters,
        "seed_cluster": cfg.seed_cluster,
        "format": cfg.format,
    }
    if budget:
        payload.update(ids=cfg.ids, images=cfg.images, seed_ids=cfg.seed_ids, seed_fps=cfg.seed_fps)
        if cfg.from_manifest:
            payload["prior_manifest"] = read_manifest(cfg.from_manifest)
    return payload


# -- commands ----------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    for _, path in args.pool:
        if not Path(path).is_file():
            raise ConfigError(f"pool file not found: {path}")
    pool = load_pool(args.pool, args.format, worker_count())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pool(pool, out / "pool.snpe", "binary")
    print(f"{len(pool)} records, {pool.num_identities} identities, d={pool.dimension} -> {out / 'pool.snpe'}")
    for k, name in enumerate(pool.datasets):
        n = int((pool.dataset_ids == k).sum())
        print(f"  {name}: {n} records")
    return 0


def cmd_fid(args: argparse.Namespace) -> int:
    if args.server:
        value = _post(args.server, "/fid", {"a": str(Path(args.path_a).resolve()),
                                            "b": str(Path(args.path_b).resolve()), "format": args.format})["fid"]
    else:
        value = fid_between(args.path_a, args.path_b, args.format)
    print(f"{value:.6f}")
    return 0


def _run(args: argparse.Namespace, budget: bool) -> int:
    cfg = _config_from_args(args)
    if args.server:
        cfg.validate(need_budget=budget)
        manifest = _post(args.server, "/prune" if budget else "/search", _request(cfg, budget))
        output = output_from_manifest(manifest)
    else:
        output = run_prune(cfg) if budget else run_search(cfg)
    path = write_outputs(cfg.out, output)
    m = output.manifest
    line = f"best_fid={m['search']['best_fid']:.6f} identities={m['search']['identity_count']}"
    if budget:
        line += f" pruned: {m['prune']['selected_count']} images / {len(m['prune']['id_sample'])} identities"
    print(f"{line} -> {path}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    comp = read_manifest(args.manifest)["composition"]
    if args.json:
        print(json.dumps(comp, indent=2))
        return 0
    print(f"{'dataset':<24} {'images':>8} {'img%':>7} {'ids':>7} {'id%':>7}")
    for d in comp["datasets"]:
        print(f"{d['name']:<24} {d['images']:>8} {100 * d['image_fraction']:>6.2f}% "
              f"{d['identities']:>7} {100 * d['identity_fraction']:>6.2f}%")
    print(f"{'total':<24} {comp['total_images']:>8} {'':>7} {comp['total_identities']:>7}")
    if comp.get("achieved_fid") is not None:
        print(f"achieved FID: {comp['achieved_fid']:.6f}")
    return 0


def cmd_correlate(args: argparse.Namespace) -> int:
    if not Path(args.csv).is_file():
        raise ConfigError(f"file not found: {args.csv}")
    result = correlate(load_correlation_csv(args.csv))
    for k, v in result.items():
        print(f"{k}: {v:.6f}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("snp_search.service:app", host=args.host, port=args.port)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "fid": cmd_fid,
    "search": lambda a: _run(a, False),
    "prune": lambda a: _run(a, True),
    "report": cmd_report,
    "correlate": cmd_correlate,
    "serve": cmd_serve,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="snp: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SnPError as exc:
        print(f"snp: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"snp: error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except UnicodeDecodeError as exc:
        print(f"snp: error: input is not valid UTF-8: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
