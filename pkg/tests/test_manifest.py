import time

import numpy as np
import pytest

from poseforge.errors import DataError
from poseforge.geometry import Pose2D, Pose3D
from poseforge.manifest import (DatasetManifest, SampleRecord, load_manifest,
                                manifest_hash, save_manifest)


def record(i, rng, provenance="real", **kwargs):
    gt2d = Pose2D.all_visible(rng.normal(200.0, 60.0, (16, 2)))
    gt3d = Pose3D.all_visible(rng.normal(0.0, 0.3, (24, 3)) + [0, 0, 5.0])
    defaults = dict(sample_id=f"r{i:04d}", gt2d=gt2d,
                    bbox=(10.0, 20.0, 80.0, 120.0), gt3d=gt3d,
                    caption="a person moves", provenance=provenance)
    if provenance == "synthesized":
        defaults.update(source_challenging="c0", source_reference="n0")
    defaults.update(kwargs)
    return SampleRecord(**defaults)


class TestSampleRecord:
    def test_bbox_positive_area(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DataError, match="positive area"):
            record(0, rng, bbox=(0.0, 0.0, 0.0, 5.0))

    def test_synthesized_needs_source_refs(self):
        rng = np.random.default_rng(1)
        with pytest.raises(DataError, match="source refs"):
            record(0, rng, provenance="synthesized", source_challenging=None)

    def test_provenance_enum(self):
        rng = np.random.default_rng(2)
        with pytest.raises(DataError, match="provenance"):
            record(0, rng, provenance="dreamt")


class TestManifestIO:
    def _manifest(self, n=5, seed=0):
        rng = np.random.default_rng(seed)
        records = [record(i, rng) for i in range(n)]
        records.append(record(n, rng, provenance="synthesized"))
        return DatasetManifest(tuple(records), skeleton_ref="default-24",
                               config_hash="abc123", meta={"note": 1})

    def test_round_trip_bitwise(self, tmp_path):
        manifest = self._manifest()
        path = tmp_path / "data.jsonl"
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        assert manifest_hash(loaded) == manifest_hash(manifest)
        assert loaded.config_hash == "abc123"
        assert loaded.meta == {"note": 1}
        for a, b in zip(loaded.records, manifest.records):
            assert a.sample_id == b.sample_id
            assert np.array_equal(a.gt2d.joints, b.gt2d.joints)
            assert np.array_equal(a.gt3d.joints, b.gt3d.joints)
            assert a.bbox == b.bbox

    def test_save_is_deterministic(self, tmp_path):
        manifest = self._manifest()
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_manifest(manifest, p1)
        save_manifest(manifest, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_bbox_rejected_with_field_path(self, tmp_path):
        manifest = self._manifest(2)
        path = tmp_path / "data.jsonl"
        save_manifest(manifest, path)
        lines = path.read_text().splitlines()
        import json
        row = json.loads(lines[1])
        del row["bbox"]
        lines[1] = json.dumps(row, sort_keys=True)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match=r"missing field 'bbox'"):
            load_manifest(path)

    def test_header_count_mismatch(self, tmp_path):
        manifest = self._manifest(3)
        path = tmp_path / "data.jsonl"
        save_manifest(manifest, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError, match="declares"):
            load_manifest(path)

    def test_duplicate_ids_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(DataError, match="duplicate"):
            DatasetManifest((record(1, rng), record(1, rng)))

    def test_invalid_json_line_diagnosed(self, tmp_path):
        manifest = self._manifest(1)
        path = tmp_path / "data.jsonl"
        save_manifest(manifest, path)
        with open(path, "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(DataError, match=":4"):
            load_manifest(path)

    def test_not_a_manifest(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text('{"format": "something-else"}\n')
        with pytest.raises(DataError):
            load_manifest(path)

    def test_large_round_trip_under_two_seconds(self, tmp_path):
        rng = np.random.default_rng(4)
        records = tuple(record(i, rng) for i in range(10_000))
        manifest = DatasetManifest(records)
        path = tmp_path / "big.jsonl"
        t0 = time.time()
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        elapsed = time.time() - t0
        assert len(loaded) == 10_000
        assert elapsed < 2.0, f"round trip took {elapsed:.2f}s"
