import numpy as np
import pytest

from foodcurate.dedup import HashTriple
from foodcurate.manifest import (
    CategoryRecord,
    ImageRecord,
    Manifest,
    ManifestError,
    StageReport,
    content_id,
    load_manifest,
    save_manifest,
    verify_accounting,
)

from conftest import build_manifest


def paper_counts_history() -> list[StageReport]:
    """Stage reports carrying the published pipeline totals."""
    return [
        StageReport("ingest", 226_809, 226_809, 0, {}),
        StageReport("format", 226_809, 226_791, 18, {"truncated": 10, "undersized": 8}),
        StageReport("dedup", 226_791, 212_765, 14_026, {"near_duplicate": 14_026}),
        StageReport("foodness", 212_765, 211_536, 1_229, {"non_food": 1_229}),
        StageReport("calibrate", 211_536, 209_861, 1_675, {"miscategorized": 1_675}),
    ]


class TestRoundTrip:
    def test_header_only_file_loads_empty(self, tmp_manifest_path):
        save_manifest(Manifest("empty", [CategoryRecord(1, "laksa")]), tmp_manifest_path)
        m = load_manifest(tmp_manifest_path)
        assert m.dataset_name == "empty"
        assert m.records == [] and m.history == []
        assert m.categories[0].name == "laksa"

    def test_duplicate_id_error_names_record(self, tmp_manifest_path):
        lines = [
            '{"dataset_name":"d","schema_version":1,"categories":[{"id":1,"name":"x"}]}',
            '{"id":"a","category_id":1,"source_path":"p"}',
            '{"id":"a","category_id":1,"source_path":"q"}',
        ]
        tmp_manifest_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError, match="'a'"):
            load_manifest(tmp_manifest_path)

    def test_round_trip_is_identity(self, tmp_manifest_path):
        m = build_manifest(n_records=100, seed=3)
        m.records[7].hash = HashTriple(2**63 + 5, 12345, 2**64 - 1)
        m.records[9].foodness_score = 0.625
        save_manifest(m, tmp_manifest_path)
        back = load_manifest(tmp_manifest_path)
        assert back.dataset_name == m.dataset_name
        assert back.categories == m.categories
        assert len(back.records) == 100
        for a, b in zip(m.records, back.records):
            assert (a.id, a.category_id, a.source_path, a.width, a.height) == (
                b.id,
                b.category_id,
                b.source_path,
                b.width,
                b.height,
            )
            assert (a.byte_size, a.status, a.removal, a.hash, a.foodness_score) == (
                b.byte_size,
                b.status,
                b.removal,
                b.hash,
                b.foodness_score,
            )
        assert back.history == m.history

    def test_save_is_byte_deterministic(self, tmp_path):
        m = build_manifest(n_records=25, seed=5)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_manifest(m, p1)
        save_manifest(m, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_removal_reasons_survive_round_trip(self, tmp_manifest_path):
        m = build_manifest(n_records=10, seed=1)
        m.records[0].mark_removed("dedup", "near_duplicate: kept 00000009")
        save_manifest(m, tmp_manifest_path)
        back = load_manifest(tmp_manifest_path)
        assert back.records[0].removal.reason == "near_duplicate: kept 00000009"

    def test_parse_error_reports_line_number(self, tmp_manifest_path):
        tmp_manifest_path.write_text(
            '{"dataset_name":"d","schema_version":1,"categories":[]}\n{broken\n'
        )
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(tmp_manifest_path)

    def test_unknown_category_rejected(self, tmp_manifest_path):
        lines = [
            '{"dataset_name":"d","schema_version":1,"categories":[{"id":1,"name":"x"}]}',
            '{"id":"a","category_id":9,"source_path":"p"}',
        ]
        tmp_manifest_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError, match="category id 9"):
            load_manifest(tmp_manifest_path)

    def test_record_after_reports_rejected(self, tmp_manifest_path):
        lines = [
            '{"dataset_name":"d","schema_version":1,"categories":[{"id":1,"name":"x"}]}',
            '{"kind":"stage_report","stage":"ingest","input_count":1,"kept_count":1,'
            '"removed_count":0,"reasons":{}}',
            '{"id":"a","category_id":1,"source_path":"p"}',
        ]
        tmp_manifest_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError, match="after stage reports"):
            load_manifest(tmp_manifest_path)


class TestInvariants:
    def test_status_removal_consistency_enforced(self):
        with pytest.raises(ManifestError):
            ImageRecord(id="x", category_id=1, source_path="p", status="removed")

    def test_empty_category_name_rejected(self):
        with pytest.raises(ManifestError):
            CategoryRecord(id=1, name="")

    def test_content_id_is_stable_prefix(self):
        assert content_id(b"hello") == content_id(b"hello")
        assert len(content_id(b"hello")) == 16
        assert content_id(b"hello") != content_id(b"hello2")


class TestAccounting:
    def test_published_counts_balance(self):
        m = Manifest("fixture", [])
        m.history = paper_counts_history()
        assert verify_accounting(m) == []

    @pytest.mark.parametrize("stage_idx", range(5))
    @pytest.mark.parametrize("field", ["input_count", "kept_count", "removed_count"])
    def test_any_single_count_perturbation_fails(self, stage_idx, field):
        m = Manifest("fixture", [])
        m.history = paper_counts_history()
        setattr(m.history[stage_idx], field, getattr(m.history[stage_idx], field) + 1)
        assert verify_accounting(m) != []

    def test_reason_sum_mismatch_detected(self):
        m = Manifest("fixture", [])
        m.history = paper_counts_history()
        m.history[1].reasons["truncated"] = 11
        violations = verify_accounting(m)
        assert any("reasons sum" in v for v in violations)

    def test_chain_break_detected(self):
        m = Manifest("fixture", [])
        m.history = [
            StageReport("ingest", 100, 100, 0, {}),
            StageReport("format", 99, 99, 0, {}),
        ]
        violations = verify_accounting(m)
        assert any("chain break" in v for v in violations)

    def test_record_attribution_checked_against_reports(self):
        m = build_manifest(n_records=10, seed=2)  # 2 removed at format
        assert verify_accounting(m) == []
        m.records[0].mark_removed("format", "truncated")  # now records disagree
        assert any("format" in v for v in verify_accounting(m))

    def test_reason_breakdown_mismatch_detected(self):
        m = build_manifest(n_records=10, seed=2)
        # same totals, different reason label
        for r in m.records:
            if r.removal is not None:
                r.removal = type(r.removal)("format", "undersized")
        violations = verify_accounting(m)
        assert any("breakdown" in v for v in violations)
