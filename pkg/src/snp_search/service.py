"""HTTP service: keeps merged source pools in memory and answers target queries.

Run with ``snp serve`` or ``uvicorn snp_search.service:app``. File paths in
requests are resolved on the server host.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .analysis import CorrelationRow, correlate
from .core import SourcePool
from .errors import ConfigError, DataFormatError, NumericError, SnPError
from .pipeline import RunConfig, fid_between, load_pool, run_prune, run_search
from .schemas import (
    CorrelateRequest,
    CorrelateResponse,
    ErrorResponse,
    FidRequest,
    FidResponse,
    PruneRequest,
    SearchRequest,
    SelectionManifest,
)

STATUS = {ConfigError: 400, DataFormatError: 422, NumericError: 500}


class PoolCache:
    """Merged pools keyed by (name, path, mtime, size) of every part."""

    def __init__(self, capacity: int = 4) -> None:
        self.capacity = capacity
        self._items: dict[tuple, SourcePool] = {}
        self._lock = threading.Lock()
        self.hits = 0

    def _key(self, pools: list[tuple[str, str]], fmt: Optional[str]) -> tuple:
        parts = []
        for name, path in pools:
            st = Path(path).stat()
            parts.append((name, str(Path(path).resolve()), st.st_mtime_ns, st.st_size))
        return (fmt, tuple(parts))

    def load(self, pools: list[tuple[str, str]], fmt: Optional[str], threads: int) -> SourcePool:
        key = self._key(pools, fmt)
        with self._lock:
            if key in self._items:
                self.hits += 1
                return self._items[key]
        pool = load_pool(pools, fmt, threads)
        with self._lock:
            if len(self._items) >= self.capacity:
                self._items.pop(next(iter(self._items)))
            self._items[key] = pool
        return pool

    def __len__(self) -> int:
        return len(self._items)


def _config(req: SearchRequest) -> RunConfig:
    cfg = RunConfig(
        pools=[(p.name, p.path) for p in req.pools],
        target=req.target,
        clusters=req.clusters,
        seed_cluster=req.seed_cluster,
        format=req.format,
    )
    if isinstance(req, PruneRequest):
        cfg.ids, cfg.images = req.ids, req.images
        cfg.seed_ids, cfg.seed_fps = req.seed_ids, req.seed_fps
    return cfg


def create_app(cache: PoolCache | None = None) -> FastAPI:
    app = FastAPI(title="snp-search", version=__version__)
    app.state.pools = cache or PoolCache()

    @app.exception_handler(SnPError)
    async def _snp_error(request: Request, exc: SnPError) -> JSONResponse:
        status = next((code for cls, code in STATUS.items() if isinstance(exc, cls)), 422)
        body = ErrorResponse(kind=type(exc).__name__, detail=str(exc), exit_code=exc.exit_code)
        return JSONResponse(status_code=status, content=body.model_dump())

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__, "cached_pools": len(app.state.pools)}

    @app.post("/fid", response_model=FidResponse)
    def fid_endpoint(req: FidRequest) -> FidResponse:
        return FidResponse(fid=fid_between(req.a, req.b, req.format))

    @app.post("/search", response_model=SelectionManifest)
    def search_endpoint(req: SearchRequest) -> dict:
        return run_search(_config(req), loader=app.state.pools.load).manifest

    @app.post("/prune", response_model=SelectionManifest)
    def prune_endpoint(req: PruneRequest) -> dict:
        return run_prune(_config(req), prior=req.prior_manifest, loader=app.state.pools.load).manifest

    @app.post("/correlate", response_model=CorrelateResponse)
    def correlate_endpoint(req: CorrelateRequest) -> CorrelateResponse:
        rows = [CorrelationRow(r.label, r.fid, r.num_ids, r.score) for r in req.rows]
        return CorrelateResponse(**correlate(rows), n=len(rows))

    return app


app = create_app()
