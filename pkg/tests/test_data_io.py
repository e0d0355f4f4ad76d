import os

import pytest

from emofusion import data_io
from emofusion.data_io import bundles_equal, dump_model, load_dataset, load_model, parse_model, save_model
from emofusion.errors import ConfigError, DataError, IntegrityError, VersionError

from conftest import random_bundle


def put_image(folder, name, rng, boxes=None, descriptors=None):
    folder.mkdir(parents=True, exist_ok=True)
    path = folder / f"{name}.ppm"
    data_io.write_image(path, rng.uniform(0, 255, (24, 32, 3)))
    if boxes is not None:
        data_io.write_faces(path.with_suffix(".faces"), boxes)
    if descriptors is not None:
        data_io.write_descriptors(path.with_suffix(".labels"), descriptors)
    return path


class TestLoadDataset:
    def test_counts_single_class(self, tmp_path, rng):
        for i in range(3):
            put_image(tmp_path / "train" / "positive", f"img{i}", rng)
        manifest = load_dataset(tmp_path, "train")
        assert manifest.class_counts == (3, 0, 0)
        assert manifest.missing_faces == 3 and manifest.missing_labels == 3

    def test_sidecars(self, tmp_path, rng):
        put_image(tmp_path / "val" / "negative", "a", rng, [(0, 0, 5, 5), (3, 4, 6, 7)], {"Funeral", "rain"})
        (record,) = load_dataset(tmp_path, "val").records
        assert record.face_boxes == ((0, 0, 5, 5), (3, 4, 6, 7))
        assert record.descriptors == {"funeral", "rain"}
        assert record.label == 2

    def test_order_is_lexicographic_by_id(self, tmp_path, rng):
        put_image(tmp_path / "s" / "neutral", "b", rng)
        put_image(tmp_path / "s" / "positive", "c", rng)
        put_image(tmp_path / "s" / "negative", "a", rng)
        ids = [r.image_id for r in load_dataset(tmp_path, "s")]
        assert ids == ["a", "b", "c"]
        assert ids == [r.image_id for r in load_dataset(tmp_path, "s")]

    def test_unreadable_image_skipped(self, tmp_path, rng, caplog):
        put_image(tmp_path / "s" / "neutral", "good", rng)
        (tmp_path / "s" / "neutral" / "bad.png").write_bytes(b"not an image")
        manifest = load_dataset(tmp_path, "s")
        assert [r.image_id for r in manifest] == ["good"] and manifest.skipped == 1
        assert "unreadable" in caplog.text

    def test_empty_split(self, tmp_path):
        (tmp_path / "s" / "positive").mkdir(parents=True)
        with pytest.raises(DataError):
            load_dataset(tmp_path, "s")

    def test_duplicate_ids(self, tmp_path, rng):
        put_image(tmp_path / "s" / "neutral", "x", rng)
        put_image(tmp_path / "s" / "positive", "x", rng)
        with pytest.raises(DataError):
            load_dataset(tmp_path, "s")

    def test_gaf_split_sizes_when_present(self):
        root = os.environ.get("GAF_ROOT")
        if not root:
            pytest.skip("GAF dataset not available locally")
        sizes = [len(load_dataset(root, s)) for s in ("train", "val", "test")]
        assert sizes == [3633, 2065, 772]


class TestModelFile:
    def test_round_trip(self, tmp_path, rng):
        bundle = random_bundle(rng)
        save_model(bundle, tmp_path / "m.emf")
        assert bundles_equal(load_model(tmp_path / "m.emf"), bundle)

    def test_partial_bundles(self, rng):
        for cnn, bn in ((True, False), (False, True), (False, False)):
            bundle = random_bundle(rng, cnn, bn)
            assert bundles_equal(parse_model(dump_model(bundle)), bundle)

    def test_deterministic_bytes(self, rng):
        bundle = random_bundle(rng)
        assert dump_model(bundle) == dump_model(bundle)

    def test_corrupt_byte(self, rng):
        data = bytearray(dump_model(random_bundle(rng)))
        data[len(data) // 2] ^= 0x01
        with pytest.raises(IntegrityError):
            parse_model(bytes(data))

    def test_truncated(self, rng):
        data = dump_model(random_bundle(rng))
        with pytest.raises(IntegrityError):
            parse_model(data[:-5])
        with pytest.raises(IntegrityError):
            parse_model(data[:10])

    def test_old_version_refused(self, rng):
        with pytest.raises(VersionError):
            parse_model(dump_model(random_bundle(rng), version=0))


class TestConfig:
    def test_parse(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nseed = 4\nper-class=21  # trailing\n\n")
        assert data_io.read_config(path) == {"seed": "4", "per_class": "21"}

    def test_bad_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed 4\n")
        with pytest.raises(ConfigError):
            data_io.read_config(path)
