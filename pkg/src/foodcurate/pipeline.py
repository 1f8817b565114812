"""Stage orchestration: runs each curation stage against the manifest.

Stages execute in a fixed order (ingest, format, dedup, foodness, calibrate,
export) and every run appends one stage report.  The manifest is written with
a temp-file-plus-rename, so a crash at any point leaves either the previous
manifest or the completed one on disk, never a torn file; re-running after a
crash reproduces a clean run byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import foodness as foodness_mod
from .calibration import decision_log_path, load_decisions
from .dedup import (
    DEFAULT_THRESHOLD,
    find_duplicate_clusters,
    hash_triple,
    max_pairwise_distance,
)
from .imaging import (
    DEFAULT_MIN_SIDE,
    PixelImage,
    Rejection,
    decode_and_validate,
    decode_image,
)
from .manifest import (
    STAGES,
    CategoryRecord,
    ImageRecord,
    Manifest,
    ManifestError,
    StageReport,
    content_id,
    load_manifest,
    save_manifest,
)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")

DEFAULT_EXPORT_FLOOR = 400


class PipelineError(RuntimeError):
    pass


class StageOrderError(PipelineError):
    """A stage was requested before its predecessors completed (or twice)."""


@dataclass
class PipelineConfig:
    """Inputs and knobs for a full pipeline run.

    roots maps category id to the directory holding that category's raw
    images.  Categories must be declared before ingestion.
    """

    dataset_name: str
    categories: list[CategoryRecord] = field(default_factory=list)
    roots: dict[int, str] = field(default_factory=dict)
    min_side: int = DEFAULT_MIN_SIDE
    dedup_threshold: int = DEFAULT_THRESHOLD
    foodness_scorer: str | None = None
    foodness_accept: float = 0.5
    calibration_port: int = 8765
    export_dir: str = "export"
    export_floor: int = DEFAULT_EXPORT_FLOOR

    def __post_init__(self) -> None:
        if self.min_side < 1:
            raise PipelineError(f"min_side must be >= 1, got {self.min_side}")
        if self.dedup_threshold < 0:
            raise PipelineError(f"dedup_threshold must be >= 0, got {self.dedup_threshold}")
        if not 0.0 <= self.foodness_accept <= 1.0:
            raise PipelineError(f"foodness_accept out of [0, 1]: {self.foodness_accept}")
        ids = [c.id for c in self.categories]
        if len(set(ids)) != len(ids):
            raise PipelineError("duplicate category ids in config")
        for cid in self.roots:
            if cid not in set(ids):
                raise PipelineError(f"root declared for unknown category {cid}")

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        categories = [
            CategoryRecord(
                id=c["id"],
                name=c["name"],
                group=c.get("group", ""),
                synonyms=list(c.get("synonyms", [])),
            )
            for c in obj.get("categories", [])
        ]
        roots = {int(k): v for k, v in obj.get("roots", {}).items()}
        return cls(
            dataset_name=obj["dataset_name"],
            categories=categories,
            roots=roots,
            min_side=obj.get("min_side", DEFAULT_MIN_SIDE),
            dedup_threshold=obj.get("dedup_threshold", DEFAULT_THRESHOLD),
            foodness_scorer=obj.get("foodness_scorer"),
            foodness_accept=obj.get("foodness_accept", 0.5),
            calibration_port=obj.get("calibration_port", 8765),
            export_dir=obj.get("export_dir", "export"),
            export_floor=obj.get("export_floor", DEFAULT_EXPORT_FLOOR),
        )


def load_record_image(record: ImageRecord) -> PixelImage:
    """Decode a record's source file, trusting it passed the format stage."""
    return decode_image(Path(record.source_path).read_bytes())


def check_stage_order(m: Manifest | None, stage: str, force: bool = False) -> None:
    """Enforce the fixed stage order against the manifest history."""
    if stage not in STAGES:
        raise StageOrderError(f"unknown stage {stage!r}")
    done = [] if m is None else m.completed_stages()
    want = STAGES.index(stage)
    expected = list(STAGES[:want])
    if stage in done and not force:
        raise StageOrderError(f"stage {stage!r} already ran; use force to redo it")
    if done[: len(expected)] != expected:
        raise StageOrderError(
            f"stage {stage!r} needs {expected} completed first, history is {done}"
        )


def stage_ingest(config: PipelineConfig) -> Manifest:
    """Scan category roots and create the manifest; ids are content digests.

    Files whose bytes duplicate an already-ingested file are skipped and
    counted, since ids are content-addressed and must stay unique.
    """
    m = Manifest(dataset_name=config.dataset_name, categories=list(config.categories))
    seen: set[str] = set()
    files_seen = 0
    reasons: dict[str, int] = {}
    for cid in sorted(config.roots):
        root = Path(config.roots[cid])
        if not root.is_dir():
            raise PipelineError(f"category {cid} root {root} is not a directory")
        paths = sorted(
            p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
        )
        for p in paths:
            files_seen += 1
            try:
                data = p.read_bytes()
            except OSError:
                reasons["unreadable"] = reasons.get("unreadable", 0) + 1
                continue
            image_id = content_id(data)
            if image_id in seen:
                reasons["duplicate_file_bytes"] = reasons.get("duplicate_file_bytes", 0) + 1
                continue
            seen.add(image_id)
            m.records.append(
                ImageRecord(
                    id=image_id,
                    category_id=cid,
                    source_path=str(p),
                    byte_size=len(data),
                )
            )
    removed = sum(reasons.values())
    m.history.append(
        StageReport(
            stage="ingest",
            input_count=files_seen,
            kept_count=files_seen - removed,
            removed_count=removed,
            reasons=reasons,
        )
    )
    return m


def stage_format(m: Manifest, min_side: int = DEFAULT_MIN_SIDE) -> StageReport:
    """Decode every active record, fill dimensions, drop invalid files."""
    active = m.active_records()
    reasons: dict[str, int] = {}
    for r in active:
        try:
            data = Path(r.source_path).read_bytes()
        except OSError:
            r.mark_removed("format", "unreadable")
            reasons["unreadable"] = reasons.get("unreadable", 0) + 1
            continue
        out = decode_and_validate(data, min_side=min_side)
        if isinstance(out, Rejection):
            r.mark_removed("format", out.reason)
            reasons[out.reason] = reasons.get(out.reason, 0) + 1
            continue
        r.width, r.height = out.width, out.height
    removed = sum(reasons.values())
    report = StageReport(
        stage="format",
        input_count=len(active),
        kept_count=len(active) - removed,
        removed_count=removed,
        reasons=reasons,
    )
    m.history.append(report)
    return report


def stage_dedup(
    m: Manifest, threshold: int = DEFAULT_THRESHOLD, clusters_out: str | Path | None = None
) -> StageReport:
    """Hash every active image, cluster near-duplicates per category, keep one each."""
    active = m.active_records()
    for r in active:
        if r.hash is None:
            r.hash = hash_triple(load_record_image(r))
    by_category: dict[int, list[ImageRecord]] = {}
    for r in active:
        by_category.setdefault(r.category_id, []).append(r)
    removed = 0
    cluster_lines = []
    for cid in sorted(by_category):
        records = by_category[cid]
        for cluster in find_duplicate_clusters(records, threshold=threshold):
            members = {r.id: r for r in records}
            cluster_lines.append(
                {
                    "category_id": cid,
                    "member_ids": cluster.member_ids,
                    "keeper_id": cluster.keeper_id,
                    "max_pairwise_distance": max_pairwise_distance(
                        [members[i] for i in cluster.member_ids]
                    ),
                }
            )
            for image_id in cluster.member_ids:
                if image_id != cluster.keeper_id:
                    members[image_id].mark_removed("dedup", "near_duplicate")
                    removed += 1
    if clusters_out is not None:
        with open(clusters_out, "w", encoding="utf-8") as f:
            for line in cluster_lines:
                f.write(json.dumps(line, separators=(",", ":")) + "\n")
    report = StageReport(
        stage="dedup",
        input_count=len(active),
        kept_count=len(active) - removed,
        removed_count=removed,
        reasons={"near_duplicate": removed} if removed else {},
    )
    m.history.append(report)
    return report


def _load_scorer(path: str) -> foodness_mod.FoodnessScorer:
    if path.endswith(".csv"):
        return foodness_mod.load_scores_csv(path)
    return foodness_mod.load_baseline(path)


def stage_foodness(
    m: Manifest,
    scorer: foodness_mod.FoodnessScorer | str,
    accept_threshold: float = 0.5,
) -> StageReport:
    if isinstance(scorer, str):
        scorer = _load_scorer(scorer)
    report = foodness_mod.filter_stage(
        m, scorer, accept_threshold=accept_threshold, image_provider=load_record_image
    )
    m.history.append(report)
    return report


def stage_calibrate_finalize(m: Manifest, manifest_path: str | Path) -> StageReport:
    """Close the calibration stage: fold any unapplied log entries, then account.

    The live server applies decisions as they arrive; this replays the log
    (a no-op for already-applied entries) and appends the stage report.
    """
    from .calibration import replay_decisions

    decisions = load_decisions(decision_log_path(manifest_path))
    replay_decisions(m, decisions)
    foodness_report = next(h for h in m.history if h.stage == "foodness")
    reasons: dict[str, int] = {}
    for r in m.records:
        if r.removal is not None and r.removal.stage == "calibrate":
            reasons[r.removal.reason] = reasons.get(r.removal.reason, 0) + 1
    removed = sum(reasons.values())
    report = StageReport(
        stage="calibrate",
        input_count=foodness_report.kept_count,
        kept_count=foodness_report.kept_count - removed,
        removed_count=removed,
        reasons=reasons,
    )
    m.history.append(report)
    return report


def stage_export(
    m: Manifest, out_dir: str | Path, floor: int = DEFAULT_EXPORT_FLOOR
) -> tuple[StageReport, dict]:
    """Copy active images to out/<category_name>/<id>.jpg; re-encode non-JPEG sources.

    Returns the (nothing-removed) stage report and a summary with per-category
    counts and a list of categories below the size floor.
    """
    active = m.active_records()
    if not m.records:
        raise PipelineError("cannot export an empty manifest")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts: dict[int, int] = {}
    for r in active:
        category = m.category_by_id(r.category_id)
        target_dir = out / category.name
        target_dir.mkdir(parents=True, exist_ok=True)
        target = target_dir / f"{r.id}.jpg"
        data = Path(r.source_path).read_bytes()
        if data[:2] == b"\xff\xd8":  # already JPEG: copy bytes verbatim
            target.write_bytes(data)
        else:
            from PIL import Image
            import io

            with Image.open(io.BytesIO(data)) as im:
                im.convert("RGB").save(target, format="JPEG", quality=95)
        counts[r.category_id] = counts.get(r.category_id, 0) + 1
    summary = {
        "total_exported": len(active),
        "per_category": {
            m.category_by_id(cid).name: n for cid, n in sorted(counts.items())
        },
        "below_floor": sorted(
            m.category_by_id(cid).name
            for cid in {c.id for c in m.categories}
            if counts.get(cid, 0) < floor
        ),
        "floor": floor,
    }
    with open(out / "export_summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    report = StageReport(
        stage="export",
        input_count=len(active),
        kept_count=len(active),
        removed_count=0,
        reasons={},
    )
    m.history.append(report)
    return report, summary


def revert_stage(m: Manifest, stage: str) -> None:
    """Undo the most recent stage so force-reruns equal a clean run."""
    if not m.history or m.history[-1].stage != stage:
        raise StageOrderError(f"can only force-rerun the most recent stage, not {stage!r}")
    m.history.pop()
    for r in m.records:
        if r.removal is not None and r.removal.stage == stage:
            r.status = "active"
            r.removal = None
        if stage == "foodness":
            r.foodness_score = None
        if stage == "dedup":
            r.hash = None


def run_stage(
    config: PipelineConfig,
    stage: str,
    manifest_path: str | Path,
    force: bool = False,
    clusters_out: str | Path | None = None,
) -> StageReport:
    """Run one stage end to end: order check, execute, atomic manifest write."""
    manifest_path = Path(manifest_path)
    if stage == "ingest":
        m = load_manifest(manifest_path) if manifest_path.exists() else None
        check_stage_order(m, stage, force=force)
        if m is not None and m.completed_stages() != ["ingest"]:
            raise StageOrderError("cannot force re-ingest once later stages have run")
        m = stage_ingest(config)
        save_manifest(m, manifest_path)
        return m.history[-1]
    try:
        m = load_manifest(manifest_path)
    except FileNotFoundError:
        raise StageOrderError(f"stage {stage!r} needs an ingested manifest first")
    check_stage_order(m, stage, force=force)
    if force and stage in m.completed_stages():
        revert_stage(m, stage)
    if stage == "format":
        report = stage_format(m, min_side=config.min_side)
    elif stage == "dedup":
        report = stage_dedup(m, threshold=config.dedup_threshold, clusters_out=clusters_out)
    elif stage == "foodness":
        if config.foodness_scorer is None:
            raise PipelineError("foodness stage needs a scorer path in the config")
        report = stage_foodness(
            m, config.foodness_scorer, accept_threshold=config.foodness_accept
        )
    elif stage == "calibrate":
        report = stage_calibrate_finalize(m, manifest_path)
    elif stage == "export":
        report, _ = stage_export(m, config.export_dir, floor=config.export_floor)
    else:
        raise StageOrderError(f"unknown stage {stage!r}")
    save_manifest(m, manifest_path)
    return report
