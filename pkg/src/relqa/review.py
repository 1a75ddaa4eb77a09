"""Human-filtering service for benchmark candidates.

State lives in two files: the candidate pool (JSON lines, written by the
bench builder) and an append-only decision log beside it. Every keep/reject
is one log line, flushed before the request is acknowledged; startup replays
the log over the pool, so a crash at any point loses at most the unflushed
tail and never corrupts state.
"""

from __future__ import annotations

import json
import logging
import threading
from datetime import datetime, timezone
from pathlib import Path

from .bench import (
    InsufficientPool,
    SUBSET_ORDER,
    effective_status,
    finalize,
    read_pool,
    write_benchmark,
)
from .errors import PipelineError

logger = logging.getLogger(__name__)

REVIEW_SUBSETS = (*SUBSET_ORDER, "unclassified")
_ACTION_STATUS = {"keep": "kept", "reject": "rejected"}

PLACEHOLDER_SVG = (
    '<svg xmlns="http://www.w3.org/2000/svg" width="320" height="240">'
    '<rect width="100%" height="100%" fill="#d0d0d0"/>'
    '<text x="160" y="124" text-anchor="middle" font-family="sans-serif" '
    'font-size="16" fill="#555">image unavailable</text></svg>'
)

_IMAGE_TYPES = {
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


class UnknownCandidate(PipelineError):
    pass


class StorageError(PipelineError):
    pass


class ReviewStore:
    """Pool + decision log with last-write-wins semantics.

    Reads serve from an immutable snapshot that is swapped wholesale on each
    write, so GET handlers never take the write lock.
    """

    def __init__(self, pool_path: str | Path, log_path: str | Path | None = None):
        self.pool_path = Path(pool_path)
        self.log_path = (
            Path(log_path) if log_path else self.pool_path.parent / "decisions.jsonl"
        )
        self.pool = read_pool(self.pool_path)
        self._by_id = {c.candidate_id: c for c in self.pool}
        self._lock = threading.Lock()
        statuses = {c.candidate_id: c.review_status for c in self.pool}
        torn_tail = self._replay(statuses)
        self._snapshot = dict(statuses)
        self._log_fh = open(self.log_path, "a", encoding="utf-8")
        if torn_tail:
            # terminate the partial line so new appends start clean
            self._log_fh.write("\n")
            self._log_fh.flush()

    def _replay(self, statuses: dict[str, str]) -> bool:
        if not self.log_path.exists():
            return False
        raw = self.log_path.read_bytes()
        lines = raw.split(b"\n")
        applied = 0
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                rec = json.loads(line.decode("utf-8"))
                candidate_id = rec["candidate_id"]
                status = _ACTION_STATUS[rec["action"]]
            except (
                json.JSONDecodeError,
                UnicodeDecodeError,
                KeyError,
                TypeError,
            ) as exc:
                if i == len(lines) - 1:
                    logger.warning("dropping torn trailing log line: %s", exc)
                else:
                    logger.warning("skipping bad log line %d: %s", i + 1, exc)
                continue
            if candidate_id not in self._by_id:
                logger.warning("log references unknown candidate %r", candidate_id)
                continue
            statuses[candidate_id] = status
            applied += 1
        logger.info("replayed %d decisions from %s", applied, self.log_path)
        return bool(raw) and not raw.endswith(b"\n")

    # -- queries (lock-free over the snapshot) ------------------------------

    def status_of(self, candidate_id: str) -> str:
        snapshot = self._snapshot
        if candidate_id not in snapshot:
            raise UnknownCandidate(candidate_id)
        return snapshot[candidate_id]

    def progress(self) -> dict[str, dict[str, int]]:
        snapshot = self._snapshot
        out = {
            subset: {"total": 0, "kept": 0, "rejected": 0, "pending": 0}
            for subset in REVIEW_SUBSETS
        }
        for cand in self.pool:
            counts = out[cand.proposed_subset]
            counts["total"] += 1
            counts[snapshot[cand.candidate_id]] += 1
        return out

    def list_candidates(self, subset: str, offset: int = 0, limit: int = 50) -> dict:
        if subset not in REVIEW_SUBSETS:
            raise UnknownCandidate(f"unknown subset {subset!r}")
        snapshot = self._snapshot
        visible = [
            cand
            for cand in self.pool
            if cand.proposed_subset == subset
            and snapshot[cand.candidate_id] in ("pending", "kept")
        ]
        page = visible[offset : offset + limit]
        return {
            "subset": subset,
            "total": len(visible),
            "offset": offset,
            "limit": limit,
            "candidates": [
                {
                    "candidate_id": cand.candidate_id,
                    "image_id": cand.image_id,
                    "image_url": f"/images/{cand.image_id}",
                    "question": cand.question,
                    "answer": cand.answer,
                    "gt_label": cand.gt_label,
                    "status": snapshot[cand.candidate_id],
                }
                for cand in page
            ],
        }

    def decisions_map(self) -> dict[str, str]:
        return dict(self._snapshot)

    # -- mutation ------------------------------------------------------------

    def record(self, candidate_id: str, action: str, reviewer: str = "") -> tuple[str, bool]:
        """Apply one decision. Returns (status, changed); identical repeats
        change nothing and append nothing."""
        if action not in _ACTION_STATUS:
            raise StorageError(f"unknown action {action!r}")
        with self._lock:
            if candidate_id not in self._by_id:
                raise UnknownCandidate(candidate_id)
            new_status = _ACTION_STATUS[action]
            current = self._snapshot[candidate_id]
            if current == new_status:
                return new_status, False
            rec = {
                "candidate_id": candidate_id,
                "action": action,
                "reviewer": reviewer,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            }
            try:
                self._log_fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
                self._log_fh.flush()
            except OSError as exc:
                raise StorageError(f"cannot append decision: {exc}") from exc
            updated = dict(self._snapshot)
            updated[candidate_id] = new_status
            self._snapshot = updated
            return new_status, True

    def close(self):
        self._log_fh.close()


def build_app(store: ReviewStore, images_root: str | Path | None = None, cors_origin: str = "*"):
    """Assemble the HTTP app over a store. Import cost of the web stack is
    paid here, not at package import."""
    from fastapi import FastAPI
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="candidate review")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[cors_origin] if cors_origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    images_root = Path(images_root) if images_root else None

    @app.get("/subsets")
    def subsets():
        return list(REVIEW_SUBSETS)

    @app.get("/subsets/{subset}/candidates")
    def candidates(subset: str, offset: int = 0, limit: int = 50):
        try:
            return store.list_candidates(subset, max(offset, 0), max(min(limit, 500), 1))
        except UnknownCandidate as exc:
            return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.get("/images/{image_id}")
    def image(image_id: str):
        if images_root is not None and "/" not in image_id and ".." not in image_id:
            for ext in ("", *_IMAGE_TYPES):
                path = images_root / f"{image_id}{ext}"
                if path.is_file():
                    media = _IMAGE_TYPES.get(path.suffix.lower(), "application/octet-stream")
                    return Response(content=path.read_bytes(), media_type=media)
        return Response(content=PLACEHOLDER_SVG, media_type="image/svg+xml")

    @app.post("/decisions")
    def decisions(body: dict):
        candidate_id = body.get("candidate_id")
        action = body.get("action")
        reviewer = body.get("reviewer", "")
        if not isinstance(candidate_id, str) or action not in _ACTION_STATUS:
            return JSONResponse(
                status_code=400,
                content={"error": "body must carry candidate_id and action keep|reject"},
            )
        try:
            status, changed = store.record(candidate_id, action, reviewer)
        except UnknownCandidate:
            return JSONResponse(
                status_code=404, content={"error": f"unknown candidate {candidate_id!r}"}
            )
        return {"candidate_id": candidate_id, "status": status, "changed": changed}

    @app.get("/progress")
    def progress():
        return store.progress()

    @app.post("/finalize")
    def finalize_endpoint(body: dict):
        try:
            n_per_subset = int(body["n_per_subset"])
            seed = int(body["seed"])
        except (KeyError, TypeError, ValueError):
            return JSONResponse(
                status_code=400,
                content={"error": "body must carry integer n_per_subset and seed"},
            )
        n_positive = int(body.get("n_positive") or 3 * n_per_subset)
        try:
            bench = finalize(
                store.pool, store.decisions_map(), n_per_subset, n_positive, seed
            )
        except InsufficientPool as exc:
            return JSONResponse(
                status_code=409,
                content={
                    "error": "insufficient_pool",
                    "subset": exc.subset,
                    "have": exc.have,
                    "need": exc.need,
                },
            )
        out_path = store.pool_path.parent / "benchmark.jsonl"
        count = write_benchmark(bench, out_path)
        return {"path": str(out_path), "count": count}

    return app


def serve(
    pool_path: str,
    images_root: str | None = None,
    host: str = "127.0.0.1",
    port: int = 8321,
    log_path: str | None = None,
):
    import uvicorn

    store = ReviewStore(pool_path, log_path)
    app = build_app(store, images_root)
    logger.info("review service on %s:%d over %s", host, port, pool_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")
