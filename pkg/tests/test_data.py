import json
import struct

import numpy as np
import pytest

from presel.data import (
    FEATURE_MAGIC,
    FEATURE_VERSION,
    FeatureWriter,
    LossRecord,
    SampleRecord,
    SelectionEntry,
    build_manifest,
    build_selection,
    load_features,
    load_losses,
    load_manifest,
    load_selection,
    save_features,
    save_losses,
    save_manifest,
    save_selection,
    validate_inputs,
)
from presel.errors import (
    DuplicateId,
    EmptyDataset,
    EmptyResponse,
    InvalidLogprob,
    MalformedRecord,
    NonFiniteFeature,
    RowCountMismatch,
    ZeroNormFeature,
)

from conftest import manifest_from


def write_lines(path, objs):
    with open(path, "w") as fh:
        for obj in objs:
            fh.write(json.dumps(obj) + "\n")


class TestManifest:
    def test_three_line_file(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_lines(
            path,
            [
                {"sample_id": "a", "task_ids": ["A"]},
                {"sample_id": "b", "task_ids": ["A"]},
                {"sample_id": "c", "task_ids": ["B"]},
            ],
        )
        m = load_manifest(path)
        assert m.image_count == 3
        assert m.tasks == {"A": (0, 1), "B": (2,)}

    def test_duplicate_sample_id(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_lines(
            path,
            [
                {"sample_id": "a", "task_ids": ["A"]},
                {"sample_id": "a", "task_ids": ["B"]},
            ],
        )
        with pytest.raises(DuplicateId):
            load_manifest(path)

    def test_multi_task_membership(self):
        m = manifest_from([("x", ["A", "B"]), ("y", ["B"])])
        assert 0 in m.tasks["A"] and 0 in m.tasks["B"]

    def test_empty_task_ids(self):
        with pytest.raises(MalformedRecord):
            build_manifest([SampleRecord("a", ())])

    def test_repeated_task_in_record(self):
        with pytest.raises(MalformedRecord):
            build_manifest([SampleRecord("a", ("A", "A"))])

    def test_all_text_only_is_empty(self):
        with pytest.raises(EmptyDataset):
            build_manifest([SampleRecord("a", ("A",), text_only=True)])

    def test_text_only_has_no_feature_row(self):
        m = manifest_from([("a", ["A"]), ("b", ["share"], False, True), ("c", ["A"])])
        assert m.image_count == 2
        assert m.row_of_record == (0, -1, 1)
        assert m.record_of_row(1).sample_id == "c"

    def test_task_index_partition_with_overlap(self):
        no_overlap = manifest_from([("a", ["A"]), ("b", ["B"])])
        assert sum(len(v) for v in no_overlap.tasks.values()) == len(no_overlap.records)
        overlap = manifest_from([("a", ["A", "B"]), ("b", ["B"])])
        assert sum(len(v) for v in overlap.tasks.values()) > len(overlap.records)

    def test_roundtrip_bytes(self, tmp_path):
        # arbitrary input formatting, canonical writer output is a fixed point
        path = tmp_path / "m.jsonl"
        write_lines(
            path,
            [
                {"task_ids": ["A", "B"], "sample_id": "a", "is_reference": True},
                {"sample_id": "b", "task_ids": ["B"], "text_only": False},
            ],
        )
        m1 = load_manifest(path)
        out1 = tmp_path / "m1.jsonl"
        out2 = tmp_path / "m2.jsonl"
        save_manifest(m1, out1)
        save_manifest(load_manifest(out1), out2)
        assert out1.read_bytes() == out2.read_bytes()


class TestFeatures:
    def test_header_and_payload(self, tmp_path, tiny_manifest):
        rows = np.arange(16, dtype=np.float32).reshape(4, 4) + 1
        path = tmp_path / "f.bin"
        save_features(rows, path)
        assert path.stat().st_size == 24 + 4 * 16
        # tiny_manifest has 5 image samples -> mismatch
        with pytest.raises(RowCountMismatch):
            load_features(path, tiny_manifest)
        fm = load_features(path, None)
        assert fm.n == 4 and fm.d == 4
        assert np.array_equal(np.asarray(fm.rows), rows)

    def test_three_by_four_matches_manifest(self, tmp_path):
        m = manifest_from([("a", ["A"]), ("b", ["A"]), ("c", ["B"])])
        path = tmp_path / "f.bin"
        save_features(np.ones((3, 4), dtype=np.float32), path)
        fm = load_features(path, m)
        assert (fm.n, fm.d) == (3, 4)

    def test_row_count_mismatch(self, tmp_path):
        m = manifest_from([("a", ["A"]), ("b", ["A"]), ("c", ["B"])])
        path = tmp_path / "f.bin"
        save_features(np.ones((2, 4), dtype=np.float32), path)
        with pytest.raises(RowCountMismatch):
            load_features(path, m)

    def test_nan_payload(self, tmp_path):
        rows = np.ones((3, 4), dtype=np.float32)
        rows[1, 2] = np.nan
        path = tmp_path / "f.bin"
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sIQI", FEATURE_MAGIC, FEATURE_VERSION, 3, 4))
            fh.write(rows.tobytes())
        with pytest.raises(NonFiniteFeature):
            load_features(path, None)

    def test_zero_row(self, tmp_path):
        rows = np.ones((3, 4), dtype=np.float32)
        rows[2] = 0.0
        path = tmp_path / "f.bin"
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sIQI", FEATURE_MAGIC, FEATURE_VERSION, 3, 4))
            fh.write(rows.tobytes())
        with pytest.raises(ZeroNormFeature):
            load_features(path, None)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "f.bin"
        save_features(np.ones((3, 4), dtype=np.float32), path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(RowCountMismatch):
            load_features(path, None)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 24)
        with pytest.raises(MalformedRecord):
            load_features(path, None)

    def test_writer_enforces_declared_rows(self, tmp_path):
        with pytest.raises(RowCountMismatch):
            with FeatureWriter(tmp_path / "f.bin", 3, 2) as w:
                w.write(np.ones((2, 2), dtype=np.float32))

    def test_mmap_and_eager_agree(self, tmp_path, rng):
        rows = rng.standard_normal((10, 3)).astype(np.float32)
        path = tmp_path / "f.bin"
        save_features(rows, path)
        a = load_features(path, None, mmap=True)
        b = load_features(path, None, mmap=False)
        assert np.array_equal(np.asarray(a.rows), np.asarray(b.rows))


class TestLosses:
    def test_token_level(self, tmp_path):
        path = tmp_path / "l.jsonl"
        write_lines(
            path,
            [
                {
                    "sample_id": "a",
                    "token_logprobs_with_q": [-1.0, -2.0],
                    "token_logprobs_without_q": [-2.0, -4.0],
                }
            ],
        )
        (rec,) = load_losses(path)
        assert rec.has_token_level
        assert rec.token_logprobs_with_q == (-1.0, -2.0)

    def test_aggregated(self, tmp_path):
        path = tmp_path / "l.jsonl"
        write_lines(path, [{"sample_id": "a", "nll_with_q": 3.0, "nll_without_q": 2.0}])
        (rec,) = load_losses(path)
        assert not rec.has_token_level
        assert rec.nll_with_q == 3.0

    @pytest.mark.parametrize(
        "record,err",
        [
            ({"sample_id": "a", "token_logprobs_with_q": [0.5], "token_logprobs_without_q": [-1.0]}, InvalidLogprob),
            ({"sample_id": "a", "token_logprobs_with_q": [], "token_logprobs_without_q": []}, EmptyResponse),
            ({"sample_id": "a", "token_logprobs_with_q": [-1.0], "token_logprobs_without_q": [-1.0, -2.0]}, MalformedRecord),
            ({"sample_id": "a", "nll_with_q": -1.0, "nll_without_q": 2.0}, MalformedRecord),
            ({"sample_id": "a"}, MalformedRecord),
            ({"sample_id": "a", "nll_with_q": 1.0}, MalformedRecord),
        ],
    )
    def test_invalid_records(self, tmp_path, record, err):
        path = tmp_path / "l.jsonl"
        write_lines(path, [record])
        with pytest.raises(err):
            load_losses(path)

    def test_duplicate(self, tmp_path):
        path = tmp_path / "l.jsonl"
        write_lines(
            path,
            [
                {"sample_id": "a", "nll_with_q": 1.0, "nll_without_q": 2.0},
                {"sample_id": "a", "nll_with_q": 1.0, "nll_without_q": 2.0},
            ],
        )
        with pytest.raises(DuplicateId):
            load_losses(path)

    def test_roundtrip_bytes(self, tmp_path):
        records = [
            LossRecord("a", token_logprobs_with_q=(-1.5, 0.0), token_logprobs_without_q=(-2.0, -0.25)),
            LossRecord("b", nll_with_q=0.125, nll_without_q=1.0),
        ]
        p1, p2 = tmp_path / "l1.jsonl", tmp_path / "l2.jsonl"
        save_losses(records, p1)
        save_losses(load_losses(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSelectionManifest:
    def entries(self):
        return [
            SelectionEntry("r0", "A", None, None, "reference"),
            SelectionEntry("s0", "A", 2, 0.75, "selected"),
        ]

    def test_roundtrip_bytes(self, tmp_path):
        sel = build_selection(self.entries(), {"strategy": "task_importance", "seed": 7})
        p1, p2 = tmp_path / "s1.jsonl", tmp_path / "s2.jsonl"
        save_selection(sel, p1)
        save_selection(load_selection(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_duplicate_entry(self):
        entries = self.entries() + [SelectionEntry("s0", "B", 1, 0.5, "selected")]
        with pytest.raises(DuplicateId):
            build_selection(entries, {})

    def test_reference_must_be_bare(self):
        with pytest.raises(MalformedRecord):
            build_selection([SelectionEntry("r0", "A", 1, None, "reference")], {})

    def test_selected_needs_cluster_fields(self):
        with pytest.raises(MalformedRecord):
            build_selection([SelectionEntry("s0", "A", None, None, "selected")], {})
        # ...except under the random baseline, which never clusters
        build_selection([SelectionEntry("s0", "A", None, None, "selected")], {"strategy": "random"})


class TestValidateInputs:
    def features_for(self, manifest, d=4):
        rows = np.ones((manifest.image_count, d), dtype=np.float32)
        from presel.data import FeatureMatrix

        return FeatureMatrix(n=manifest.image_count, d=d, rows=rows)

    def test_consistent_inputs_clean(self, tiny_manifest):
        losses = [
            LossRecord("s1", nll_with_q=1.0, nll_without_q=2.0),
            LossRecord("s4", nll_with_q=1.0, nll_without_q=2.0),
        ]
        report = validate_inputs(tiny_manifest, self.features_for(tiny_manifest), losses)
        assert report.clean

    def test_orphan_loss(self, tiny_manifest):
        losses = [LossRecord("x", nll_with_q=1.0, nll_without_q=2.0)]
        report = validate_inputs(tiny_manifest, None, losses)
        assert report.orphan_loss_ids == ("x",)

    def test_no_reference_task_listed(self):
        m = manifest_from([("a", ["A"], True), ("b", ["C"])])
        report = validate_inputs(m, None, [LossRecord("a", nll_with_q=1.0, nll_without_q=2.0)])
        assert report.no_reference_tasks == ("C",)

    def test_missing_and_non_reference(self, tiny_manifest):
        losses = [LossRecord("s0", nll_with_q=1.0, nll_without_q=2.0)]
        report = validate_inputs(tiny_manifest, None, losses)
        assert report.non_reference_loss_ids == ("s0",)
        assert set(report.missing_loss_refs) == {"s1", "s4"}
