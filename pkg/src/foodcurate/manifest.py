"""Durable record of every image's journey through the curation pipeline.

The manifest is a UTF-8 JSON Lines file: a header object first, then one
line per image record, then trailing stage-report lines tagged with
``"kind": "stage_report"``.  Removed images are kept with an attribution of
which stage dropped them and why, so per-stage counts stay auditable.
Serialization is byte-stable: identical manifests produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .dedup import HashTriple

SCHEMA_VERSION = 1

#: Pipeline stages in their mandatory execution order.
STAGES = ("ingest", "format", "dedup", "foodness", "calibrate", "export")

STATUS_ACTIVE = "active"
STATUS_REMOVED = "removed"


class ManifestError(ValueError):
    """Raised on parse failures and invariant violations, naming the culprit."""


@dataclass
class CategoryRecord:
    """One food category: id, display name, coarse group, and query synonyms."""

    id: int
    name: str
    group: str = ""
    synonyms: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.name:
            raise ManifestError(f"category {self.id} has an empty name")


@dataclass(frozen=True)
class Removal:
    """Stage that removed a record plus the reason it gave."""

    stage: str
    reason: str


@dataclass
class ImageRecord:
    """Per-image provenance and pipeline state.

    ``id`` is the first 16 hex chars of the SHA-256 of the original file
    bytes, so re-ingesting the same files yields the same ids.  Width and
    height are 0 until the formatting stage decodes the file.
    """

    id: str
    category_id: int
    source_path: str
    width: int = 0
    height: int = 0
    byte_size: int = 0
    status: str = STATUS_ACTIVE
    removal: Removal | None = None
    hash: HashTriple | None = None
    foodness_score: float | None = None

    def __post_init__(self) -> None:
        if (self.status == STATUS_REMOVED) != (self.removal is not None):
            raise ManifestError(
                f"record {self.id!r}: status {self.status!r} inconsistent with removal"
            )

    def mark_removed(self, stage: str, reason: str) -> None:
        self.status = STATUS_REMOVED
        self.removal = Removal(stage, reason)


@dataclass
class StageReport:
    """Conservation accounting for one stage: input = kept + removed."""

    stage: str
    input_count: int
    kept_count: int
    removed_count: int
    reasons: dict[str, int] = field(default_factory=dict)


@dataclass
class Manifest:
    dataset_name: str
    categories: list[CategoryRecord] = field(default_factory=list)
    records: list[ImageRecord] = field(default_factory=list)
    history: list[StageReport] = field(default_factory=list)

    def category_by_id(self, category_id: int) -> CategoryRecord:
        for c in self.categories:
            if c.id == category_id:
                return c
        raise ManifestError(f"unknown category id {category_id}")

    def record_by_id(self, image_id: str) -> ImageRecord:
        for r in self.records:
            if r.id == image_id:
                return r
        raise ManifestError(f"unknown image id {image_id!r}")

    def active_records(self) -> list[ImageRecord]:
        return [r for r in self.records if r.status == STATUS_ACTIVE]

    def completed_stages(self) -> list[str]:
        return [h.stage for h in self.history]


def content_id(data: bytes) -> str:
    """Stable image id: first 16 hex chars of the SHA-256 of the file bytes."""
    return hashlib.sha256(data).hexdigest()[:16]


def _record_to_obj(r: ImageRecord) -> dict:
    obj = {
        "id": r.id,
        "category_id": r.category_id,
        "source_path": r.source_path,
        "width": r.width,
        "height": r.height,
        "byte_size": r.byte_size,
        "status": r.status,
    }
    if r.removal is not None:
        obj["removal"] = {"stage": r.removal.stage, "reason": r.removal.reason}
    if r.hash is not None:
        obj["hash"] = r.hash.to_hex()
    if r.foodness_score is not None:
        obj["foodness_score"] = r.foodness_score
    return obj


def _record_from_obj(obj: dict, line_no: int) -> ImageRecord:
    try:
        removal = None
        if "removal" in obj:
            removal = Removal(obj["removal"]["stage"], obj["removal"]["reason"])
        h = HashTriple.from_hex(obj["hash"]) if "hash" in obj else None
        return ImageRecord(
            id=obj["id"],
            category_id=obj["category_id"],
            source_path=obj["source_path"],
            width=obj.get("width", 0),
            height=obj.get("height", 0),
            byte_size=obj.get("byte_size", 0),
            status=obj.get("status", STATUS_ACTIVE),
            removal=removal,
            hash=h,
            foodness_score=obj.get("foodness_score"),
        )
    except (KeyError, TypeError, ManifestError) as exc:
        raise ManifestError(f"line {line_no}: bad image record: {exc}") from exc


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True)


def save_manifest(m: Manifest, path: str | Path) -> None:
    """Write atomically (temp file + rename); identical manifests yield identical bytes."""
    path = Path(path)
    lines = [
        _dumps(
            {
                "dataset_name": m.dataset_name,
                "schema_version": SCHEMA_VERSION,
                "categories": [
                    {"id": c.id, "name": c.name, "group": c.group, "synonyms": c.synonyms}
                    for c in m.categories
                ],
            }
        )
    ]
    lines.extend(_dumps(_record_to_obj(r)) for r in m.records)
    for h in m.history:
        lines.append(
            _dumps(
                {
                    "kind": "stage_report",
                    "stage": h.stage,
                    "input_count": h.input_count,
                    "kept_count": h.kept_count,
                    "removed_count": h.removed_count,
                    "reasons": dict(sorted(h.reasons.items())),
                }
            )
        )
    data = ("\n".join(lines) + "\n").encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate a manifest file.

    Raises ManifestError with the offending line number on parse failures and
    with the record id on invariant violations (duplicate ids, dangling
    category references).  Accounting-level checks (balance, chaining) are
    data, not load errors: see :func:`verify_accounting`.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        raw_lines = f.read().splitlines()
    if not raw_lines:
        raise ManifestError(f"{path}: empty file, expected a header line")

    def parse(line: str, line_no: int) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {line_no}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ManifestError(f"line {line_no}: expected a JSON object")
        return obj

    header = parse(raw_lines[0], 1)
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"line 1: unsupported schema_version {header.get('schema_version')!r}"
        )
    try:
        categories = [
            CategoryRecord(
                id=c["id"],
                name=c["name"],
                group=c.get("group", ""),
                synonyms=list(c.get("synonyms", [])),
            )
            for c in header["categories"]
        ]
        m = Manifest(dataset_name=header["dataset_name"], categories=categories)
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"line 1: bad header: {exc}") from exc
    cat_ids = [c.id for c in categories]
    if len(set(cat_ids)) != len(cat_ids):
        raise ManifestError("line 1: duplicate category ids")

    seen: set[str] = set()
    in_reports = False
    for i, line in enumerate(raw_lines[1:], start=2):
        if not line.strip():
            continue
        obj = parse(line, i)
        if obj.get("kind") == "stage_report":
            in_reports = True
            try:
                m.history.append(
                    StageReport(
                        stage=obj["stage"],
                        input_count=obj["input_count"],
                        kept_count=obj["kept_count"],
                        removed_count=obj["removed_count"],
                        reasons=dict(obj.get("reasons", {})),
                    )
                )
            except KeyError as exc:
                raise ManifestError(f"line {i}: bad stage report: {exc}") from exc
            continue
        if in_reports:
            raise ManifestError(f"line {i}: image record after stage reports")
        rec = _record_from_obj(obj, i)
        if rec.id in seen:
            raise ManifestError(f"line {i}: duplicate record id {rec.id!r}")
        if rec.category_id not in set(cat_ids):
            raise ManifestError(
                f"record {rec.id!r}: unknown category id {rec.category_id}"
            )
        seen.add(rec.id)
        m.records.append(rec)
    return m


#: Stages whose removals are attributed on the records themselves (ingest
#: skips happen before records exist, export removes nothing).
RECORD_ATTRIBUTED_STAGES = ("format", "dedup", "foodness", "calibrate")


def verify_accounting(m: Manifest) -> list[str]:
    """Check conservation, chaining, and record attribution; violations are data.

    Returns an empty list iff every stage report balances (input = kept +
    removed, reasons sum to removed), consecutive reports chain, and, when
    image records are present, per-stage removal counts recomputed from the
    records match the reports.
    """
    violations: list[str] = []
    for h in m.history:
        if h.input_count != h.kept_count + h.removed_count:
            violations.append(
                f"stage {h.stage}: input {h.input_count} != kept {h.kept_count}"
                f" + removed {h.removed_count}"
            )
        reason_total = sum(h.reasons.values())
        if reason_total != h.removed_count:
            violations.append(
                f"stage {h.stage}: reasons sum {reason_total} != removed {h.removed_count}"
            )
    for prev, nxt in zip(m.history, m.history[1:]):
        if prev.kept_count != nxt.input_count:
            violations.append(
                f"chain break: {prev.stage} kept {prev.kept_count} but"
                f" {nxt.stage} input {nxt.input_count}"
            )
    if m.records:
        by_stage: dict[str, dict[str, int]] = {}
        for r in m.records:
            if r.removal is not None:
                stage_counts = by_stage.setdefault(r.removal.stage, {})
                stage_counts[r.removal.reason] = stage_counts.get(r.removal.reason, 0) + 1
        for h in m.history:
            if h.stage not in RECORD_ATTRIBUTED_STAGES:
                continue
            recorded = by_stage.get(h.stage, {})
            if sum(recorded.values()) != h.removed_count:
                violations.append(
                    f"stage {h.stage}: report removed {h.removed_count} but records"
                    f" show {sum(recorded.values())}"
                )
            elif recorded != h.reasons:
                violations.append(f"stage {h.stage}: reason breakdown mismatch")
    return violations
