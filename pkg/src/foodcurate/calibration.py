"""Human calibration: the second manual pass that fixes category assignments.

Reviewers confirm, reassign, or remove flagged images.  Every verdict is
appended to a JSON-Lines decision log; the manifest state is a pure fold over
that log, so the log is the source of truth and replays are idempotent.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .manifest import STATUS_ACTIVE, ImageRecord, Manifest

ACTION_CONFIRM = "confirm"
ACTION_REASSIGN = "reassign"
ACTION_REMOVE = "remove"
ACTIONS = (ACTION_CONFIRM, ACTION_REASSIGN, ACTION_REMOVE)

DEFAULT_REMOVE_REASON = "reviewer_removed"


class CalibrationError(ValueError):
    pass


class UnknownImageError(CalibrationError):
    pass


class InactiveImageError(CalibrationError):
    pass


@dataclass(frozen=True)
class CalibrationDecision:
    """One reviewer verdict; later decisions on the same image supersede."""

    image_id: str
    action: str
    category_id: int | None = None
    reason: str | None = None
    reviewer: str = "anonymous"
    timestamp: str = ""

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise CalibrationError(f"unknown action {self.action!r}")
        if self.action == ACTION_REASSIGN and self.category_id is None:
            raise CalibrationError("reassign needs a target category_id")

    def to_obj(self) -> dict:
        obj = {
            "image_id": self.image_id,
            "action": self.action,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }
        if self.category_id is not None:
            obj["category_id"] = self.category_id
        if self.reason is not None:
            obj["reason"] = self.reason
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "CalibrationDecision":
        return cls(
            image_id=obj["image_id"],
            action=obj["action"],
            category_id=obj.get("category_id"),
            reason=obj.get("reason"),
            reviewer=obj.get("reviewer", "anonymous"),
            timestamp=obj.get("timestamp", ""),
        )


def now_timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def decision_log_path(manifest_path: str | Path) -> Path:
    p = Path(manifest_path)
    return p.with_name(p.name + ".decisions.jsonl")


def append_decision(log_path: str | Path, d: CalibrationDecision) -> None:
    """Append one decision line; the log is append-only and never rewritten."""
    with open(log_path, "a", encoding="utf-8") as f:
        f.write(json.dumps(d.to_obj(), separators=(",", ":")) + "\n")
        f.flush()
        os.fsync(f.fileno())


def load_decisions(log_path: str | Path) -> list[CalibrationDecision]:
    path = Path(log_path)
    if not path.exists():
        return []
    out = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(CalibrationDecision.from_obj(json.loads(line)))
            except (json.JSONDecodeError, KeyError, CalibrationError) as exc:
                raise CalibrationError(f"{path} line {i}: {exc}") from exc
    return out


def apply_decision(m: Manifest, d: CalibrationDecision) -> None:
    """Strict application: unknown images and inactive targets are errors.

    confirm leaves the record untouched; reassign moves it to an existing
    category; remove marks it removed at the calibrate stage.
    """
    record = None
    for r in m.records:
        if r.id == d.image_id:
            record = r
            break
    if record is None:
        raise UnknownImageError(f"unknown image {d.image_id!r}")
    if record.status != STATUS_ACTIVE:
        raise InactiveImageError(f"image {d.image_id!r} is not active")
    if d.action == ACTION_REASSIGN:
        m.category_by_id(d.category_id)  # raises on unknown target
        record.category_id = d.category_id
    elif d.action == ACTION_REMOVE:
        record.mark_removed("calibrate", d.reason or DEFAULT_REMOVE_REASON)


def replay_decisions(m: Manifest, decisions: Iterable[CalibrationDecision]) -> int:
    """Tolerant fold used to rebuild state from the log; returns decisions applied.

    Decisions whose image is missing or no longer active are skipped, which
    makes replaying the same log a second time a no-op.
    """
    applied = 0
    by_id = {r.id: r for r in m.records}
    for d in decisions:
        record = by_id.get(d.image_id)
        if record is None or record.status != STATUS_ACTIVE:
            continue
        apply_decision(m, d)
        applied += 1
    return applied


def decided_ids(decisions: Iterable[CalibrationDecision]) -> set[str]:
    return {d.image_id for d in decisions}


def calibration_queue(
    m: Manifest,
    decisions: Sequence[CalibrationDecision] = (),
    category_id: int | None = None,
    limit: int | None = None,
) -> list[dict]:
    """Undecided active images, most suspect first (lowest foodness score, then id)."""
    done = decided_ids(decisions)
    items = [
        r
        for r in m.active_records()
        if r.id not in done and (category_id is None or r.category_id == category_id)
    ]
    items.sort(key=lambda r: (r.foodness_score if r.foodness_score is not None else -1.0, r.id))
    if limit is not None:
        items = items[:limit]
    return [
        {
            "image_id": r.id,
            "category_id": r.category_id,
            "category": m.category_by_id(r.category_id).name,
            "thumbnail_url": f"/api/image/{r.id}",
            "foodness_score": r.foodness_score,
        }
        for r in items
    ]


def progress(m: Manifest, decisions: Sequence[CalibrationDecision]) -> dict:
    """Review progress: total reviewable, decided, removed, reassigned."""
    final: dict[str, CalibrationDecision] = {}
    for d in decisions:
        final[d.image_id] = d
    total = sum(
        1
        for r in m.records
        if r.status == STATUS_ACTIVE or (r.removal is not None and r.removal.stage == "calibrate")
    )
    return {
        "total": total,
        "decided": len(final),
        "removed": sum(1 for d in final.values() if d.action == ACTION_REMOVE),
        "reassigned": sum(1 for d in final.values() if d.action == ACTION_REASSIGN),
    }
