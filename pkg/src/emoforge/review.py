"""Manual review: the decision state machine, the append-only log, and the
HTTP service backing the review frontend.

State machine: pending -> accepted | rejected, nothing else. The first
decision for a record wins; later ones are conflicts. Service restarts
recover exact state by replaying reviews.log over the base manifest.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from emoforge.dataset import (
    DatasetError,
    Manifest,
    PairRecord,
    gate_candidate,
)

DECISIONS = ("accepted", "rejected")


class ReviewConflict(Exception):
    """A decision already exists for this record (first one wins)."""


class UnknownRecord(KeyError):
    pass


@dataclass(frozen=True)
class ReviewDecision:
    target_id: str
    decision: str
    reviewer: str
    timestamp: float

    def __post_init__(self):
        if self.decision not in DECISIONS:
            raise DatasetError(
                f"decision must be one of {DECISIONS}, got {self.decision!r}"
            )


def _decision_line(d: ReviewDecision) -> str:
    return json.dumps(
        {
            "target_id": d.target_id,
            "decision": d.decision,
            "reviewer": d.reviewer,
            "timestamp": d.timestamp,
        }
    )


def read_reviews(path: Path) -> Iterator[ReviewDecision]:
    if not path.exists():
        return
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            yield ReviewDecision(
                target_id=data["target_id"],
                decision=data["decision"],
                reviewer=data["reviewer"],
                timestamp=float(data["timestamp"]),
            )


def apply_decision(manifest: Manifest, decision: ReviewDecision) -> PairRecord:
    """Mutate in-memory state only; raises on conflicts and unknown ids."""
    rec = manifest.record_by_target(decision.target_id)
    if rec is None:
        raise UnknownRecord(decision.target_id)
    if rec.review_status != "pending":
        raise ReviewConflict(
            f"record {decision.target_id} already {rec.review_status}"
        )
    if decision.decision == "accepted":
        gate = gate_candidate(rec.scores)
        if not gate.passed:
            raise DatasetError(
                f"cannot accept {decision.target_id}: gate violated "
                f"({'; '.join(gate.reasons)})"
            )
    rec.review_status = decision.decision
    return rec


def append_review(manifest: Manifest, decision: ReviewDecision) -> PairRecord:
    """Apply and durably log a decision (the single-writer commit point)."""
    rec = apply_decision(manifest, decision)
    manifest.reviews_path.parent.mkdir(parents=True, exist_ok=True)
    with manifest.reviews_path.open("a", encoding="utf-8") as fh:
        fh.write(_decision_line(decision) + "\n")
    return rec


def replay_reviews(manifest: Manifest) -> int:
    """Fold the review log into manifest state; returns decisions applied.

    Replay is strict: a log produced by this module can never contain
    conflicts or unknown ids, so any such entry means corruption.
    """
    applied = 0
    for decision in read_reviews(manifest.reviews_path):
        apply_decision(manifest, decision)
        applied += 1
    return applied


# --- HTTP service -----------------------------------------------------------


def build_app(manifest: Manifest, *, ui_dir: Path | None = None):
    """FastAPI app over a loaded manifest.

    Endpoints:
      GET  /queue?limit=k   pending review items, FIFO by creation order
      GET  /pair/{id}       full record plus image URLs
      GET  /image/{id}      PNG bytes
      POST /decision        {"id": ..., "decision": "accept"|"reject",
                             "reviewer": ...}
    """
    from fastapi import FastAPI, HTTPException, Request
    from fastapi.responses import FileResponse, JSONResponse

    app = FastAPI(title="emoforge review service")

    def item_payload(rec: PairRecord) -> dict:
        gate = gate_candidate(rec.scores)
        return {
            "id": rec.target_id,
            "source_id": rec.source_id,
            "emotion": rec.emotion.value,
            "instruction": rec.instruction,
            "factor_summary": rec.factor_summary,
            "source_image": f"/image/{rec.source_id}",
            "candidate_image": f"/image/{rec.target_id}",
            "scores": {
                "clip_i": rec.scores.clip_i,
                "clip_t": rec.scores.clip_t,
                "emotion_score": rec.scores.emotion_score,
                "aesthetic": rec.scores.aesthetic,
            },
            "gate_reasons": list(gate.reasons),
            "status": rec.review_status,
        }

    @app.get("/queue")
    def queue(limit: int = 50):
        items = [item_payload(r) for r in manifest.pending()[: max(limit, 0)]]
        return {"items": items, "pending_total": len(manifest.pending())}

    @app.get("/pair/{pair_id}")
    def pair(pair_id: str):
        rec = manifest.record_by_target(pair_id)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"unknown pair {pair_id}")
        return item_payload(rec)

    @app.get("/image/{image_id}")
    def image(image_id: str):
        path = manifest.images_dir / f"{image_id}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown image {image_id}")
        return FileResponse(path, media_type="image/png")

    @app.post("/decision")
    async def decision(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be JSON")
        pair_id = body.get("id")
        verb = body.get("decision")
        reviewer = body.get("reviewer", "anonymous")
        mapping = {"accept": "accepted", "reject": "rejected"}
        if not pair_id or verb not in mapping:
            raise HTTPException(
                status_code=400,
                detail="need {'id': ..., 'decision': 'accept'|'reject'}",
            )
        try:
            rec = append_review(
                manifest,
                ReviewDecision(
                    target_id=pair_id,
                    decision=mapping[verb],
                    reviewer=str(reviewer),
                    timestamp=time.time(),
                ),
            )
        except UnknownRecord:
            raise HTTPException(status_code=404, detail=f"unknown pair {pair_id}")
        except ReviewConflict as exc:
            current = manifest.record_by_target(pair_id)
            return JSONResponse(
                status_code=409,
                content={"detail": str(exc), "status": current.review_status},
            )
        return {"id": rec.target_id, "status": rec.review_status}

    if ui_dir is not None and (ui_dir / "index.html").exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(manifest: Manifest, port: int, *, host: str = "127.0.0.1",
          ui_dir: Path | None = None) -> None:
    import uvicorn

    uvicorn.run(build_app(manifest, ui_dir=ui_dir), host=host, port=port,
                log_level="warning")
