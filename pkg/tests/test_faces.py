import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emofusion.data_io import SampleRecord, write_faces, write_image
from emofusion.errors import EmptyFaceError, NoFacesError
from emofusion.faces import (
    RecordFaceProvider,
    SidecarFaceProvider,
    aggregate_faces,
    face_source_load,
    min_max,
    preprocess,
)


class TestPreprocess:
    def test_midpoint(self):
        img = np.full((8, 8, 3), 110.0)
        img[0, 0, 0], img[7, 7, 2] = 10.0, 210.0
        crop = preprocess(img, (0, 0, 8, 8), size=8)
        assert crop.pixels[3, 3, 1] == 0.5

    def test_constant_crop(self):
        crop = preprocess(np.full((20, 20, 3), 77.0), (2, 2, 10, 10))
        assert crop.pixels.shape == (64, 64, 3) and not crop.pixels.any()

    def test_resize_shape_and_range(self, rng):
        crop = preprocess(rng.uniform(0, 255, (200, 200, 3)), (10, 20, 128, 128))
        assert crop.pixels.shape == (64, 64, 3)
        assert crop.pixels.min() == 0.0 and crop.pixels.max() == 1.0

    def test_idempotent_on_normalized_crop(self, rng):
        pixels = min_max(rng.random((64, 64, 3)))
        again = preprocess(pixels, (0, 0, 64, 64)).pixels
        assert np.abs(again - pixels).max() < 1e-9

    def test_clamped_box(self, rng):
        img = rng.uniform(0, 255, (50, 40, 3))
        crop = preprocess(img, (30, 40, 20, 20))
        assert crop.clamped and crop.source_box == (30, 40, 10, 10)
        np.testing.assert_allclose(crop.pixels, preprocess(img, (30, 40, 10, 10)).pixels)

    def test_empty_box(self):
        with pytest.raises(EmptyFaceError):
            preprocess(np.zeros((10, 10, 3)), (20, 20, 5, 5))

    def test_grayscale_input(self, rng):
        assert preprocess(rng.random((30, 30)), (0, 0, 30, 30)).pixels.shape == (64, 64, 3)


class TestAggregate:
    def test_single(self):
        cls, mean = aggregate_faces([[0.2, 0.5, 0.3]])
        assert cls == 1
        np.testing.assert_array_equal(mean, [0.2, 0.5, 0.3])

    def test_two_faces(self):
        cls, mean = aggregate_faces([[0.7, 0.2, 0.1], [0.2, 0.5, 0.3]])
        assert cls == 0
        np.testing.assert_allclose(mean, [0.45, 0.35, 0.2], atol=1e-15)

    def test_tie(self):
        assert aggregate_faces([[1 / 3] * 3] * 3)[0] == 0

    def test_no_faces(self):
        with pytest.raises(NoFacesError):
            aggregate_faces(np.zeros((0, 3)))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_invariance_and_validity(self, seed):
        rng = np.random.default_rng(seed)
        outs = rng.dirichlet(np.ones(3), size=int(rng.integers(1, 9)))
        cls, mean = aggregate_faces(outs)
        cls2, mean2 = aggregate_faces(outs[rng.permutation(len(outs))])
        assert cls == cls2 and np.allclose(mean, mean2, atol=1e-15)
        assert abs(mean.sum() - 1) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_duplicate_face_pulls_mean(self, seed):
        rng = np.random.default_rng(seed)
        outs = rng.dirichlet(np.ones(3), size=int(rng.integers(1, 6)))
        face = outs[int(rng.integers(len(outs)))]
        prev = np.abs(aggregate_faces(outs)[1] - face)
        for _ in range(4):
            outs = np.vstack([outs, face])
            cur = np.abs(aggregate_faces(outs)[1] - face)
            assert (cur <= prev + 1e-15).all()
            prev = cur


class TestFaceSource:
    @pytest.fixture
    def image(self, tmp_path, rng):
        path = tmp_path / "img01.ppm"
        write_image(path, rng.uniform(0, 255, (60, 80, 3)))
        return path

    def test_sidecar_boxes_in_order(self, image):
        boxes = [(0, 0, 20, 20), (30, 10, 25, 30), (50, 20, 10, 10)]
        write_faces(image.with_suffix(".faces"), boxes)
        batch = face_source_load(SampleRecord("img01", image), SidecarFaceProvider())
        assert batch.K == 3
        assert [f.source_box for f in batch.faces] == boxes

    def test_empty_sidecar(self, image):
        write_faces(image.with_suffix(".faces"), [])
        record = SampleRecord("img01", image)
        assert face_source_load(record, SidecarFaceProvider()).K == 0

    def test_missing_sidecar(self, image, caplog):
        record = SampleRecord("img01", image)
        assert face_source_load(record, SidecarFaceProvider()).K == 0
        assert "no face sidecar" in caplog.text

    def test_out_of_bounds_box_is_clamped(self, image):
        record = SampleRecord(
            "img01", image, ((70, 50, 30, 30), (0, 0, 10, 10)))
        batch = face_source_load(record, RecordFaceProvider())
        assert batch.K == 2
        assert batch.faces[0].source_box == (70, 50, 10, 10)

    def test_sidecar_directory(self, image, tmp_path):
        side = tmp_path / "side"
        side.mkdir()
        write_faces(side / "img01.faces", [(1, 1, 5, 5)])
        record = SampleRecord("img01", image)
        assert face_source_load(record, SidecarFaceProvider(side)).K == 1
