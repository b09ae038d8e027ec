import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from PIL import Image

from ncadiff import (
    ConfigurationError,
    DatasetSpec,
    SeedStream,
    SyntheticSpec,
    export_png,
    ingest,
    load_png,
    make_synthetic,
)
from ncadiff.data import split_of


class TestNormalization:
    def test_byte_endpoints(self):
        from ncadiff.data import bytes_to_unit

        got = bytes_to_unit(np.array([0, 255], dtype=np.uint8))
        assert got[0] == -1.0
        assert got[1] == 1.0

    def test_export_endpoints(self, tmp_path):
        img = torch.tensor([-1.0, 0.0, 1.0]).view(1, 1, 3).expand(3, 1, 3)
        path = export_png(img, tmp_path / "e.png")
        arr = np.asarray(Image.open(path))
        assert list(arr[0, :, 0]) == [0, 128, 255]

    @given(values=st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=3, max_size=3))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_quantization_bound(self, values, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("roundtrip")
        img = torch.tensor(values, dtype=torch.float32).view(3, 1, 1).expand(3, 4, 4)
        back = load_png(export_png(img, tmp / "x.png"))
        assert (back - img).abs().max() <= 1.0 / 127.5

    def test_nan_rejected(self, tmp_path):
        img = torch.zeros(3, 4, 4)
        img[0, 0, 0] = float("nan")
        with pytest.raises(ConfigurationError):
            export_png(img, tmp_path / "bad.png")


class TestSplit:
    def test_deterministic(self):
        for name in ("a.png", "sub/dir/b.png", "c.png"):
            assert split_of(name, (0.8, 0.1, 0.1)) == split_of(name, (0.8, 0.1, 0.1))

    def test_proportions(self):
        names = [f"img_{i:05d}.png" for i in range(2000)]
        counts = {"train": 0, "val": 0, "test": 0}
        for name in names:
            counts[split_of(name, (0.8, 0.1, 0.1))] += 1
        assert abs(counts["train"] / 2000 - 0.8) < 0.02
        assert abs(counts["val"] / 2000 - 0.1) < 0.02
        assert abs(counts["test"] / 2000 - 0.1) < 0.02


def write_folder(root, count=6, size=96, start=0):
    gen = torch.Generator().manual_seed(0)
    for i in range(start, start + count):
        img = torch.rand(3, size, size, generator=gen) * 2 - 1
        export_png(img, root / f"img_{i:03d}.png")


class TestImageFolder:
    def test_patch_grid_count(self, tmp_path):
        write_folder(tmp_path, count=1, size=256)
        spec = DatasetSpec(root=str(tmp_path), patch_size=64, split=(0.0, 0.0, 1.0))
        data = ingest(spec)
        assert data.images("test").shape == (16, 3, 64, 64)

    def test_rescan_is_identical(self, tmp_path):
        write_folder(tmp_path, count=8, size=32)
        spec = DatasetSpec(root=str(tmp_path), patch_size=16)
        a, b = ingest(spec), ingest(spec)
        assert {s: [p.name for p in a.files[s]] for s in a.files} == \
               {s: [p.name for p in b.files[s]] for s in b.files}

    def test_adding_files_keeps_existing_assignments(self, tmp_path):
        write_folder(tmp_path, count=8, size=32)
        spec = DatasetSpec(root=str(tmp_path), patch_size=16)
        before = {p.name: s for s in ("train", "val", "test") for p in ingest(spec).files[s]}
        write_folder(tmp_path, count=4, size=32, start=100)
        after = {p.name: s for s in ("train", "val", "test") for p in ingest(spec).files[s]}
        for name, split in before.items():
            assert after[name] == split

    def test_unreadable_skipped_with_warning(self, tmp_path, caplog):
        write_folder(tmp_path, count=3, size=32)
        (tmp_path / "broken.png").write_bytes(b"not a png at all")
        with caplog.at_level(logging.WARNING, logger="ncadiff.data"):
            data = ingest(DatasetSpec(root=str(tmp_path), patch_size=16))
        assert data.skipped == 1
        assert any("broken.png" in r.message for r in caplog.records)

    def test_empty_is_fatal(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ingest(DatasetSpec(root=str(tmp_path), patch_size=16))

    def test_train_batch_deterministic_and_cropped(self, tmp_path):
        write_folder(tmp_path, count=6, size=48)
        spec = DatasetSpec(root=str(tmp_path), patch_size=16, split=(1.0, 0.0, 0.0))
        data = ingest(spec)
        a = data.train_batch(5, SeedStream(3))
        b = data.train_batch(5, SeedStream(3))
        assert torch.equal(a, b)
        assert a.shape == (5, 3, 16, 16)

    def test_downscale_factor(self, tmp_path):
        write_folder(tmp_path, count=1, size=64)
        spec = DatasetSpec(root=str(tmp_path), patch_size=16,
                           split=(0.0, 0.0, 1.0), downscale_factor=4)
        data = ingest(spec)
        assert data.images("test").shape == (1, 3, 16, 16)


class TestSynthetic:
    def test_bicolor_exact_complement(self):
        data = make_synthetic(SyntheticSpec(kind="bicolor-halves", size=16, count=12, seed=2))
        for img in data.tensor:
            left = img[:, :, :8]
            right = img[:, :, 8:]
            assert torch.equal(right, -left)  # complement (1-c) in unit space
            unit_left = (left + 1.0) / 2.0
            unit_right = (right + 1.0) / 2.0
            assert torch.allclose(unit_left + unit_right, torch.ones_like(unit_left))

    def test_blobs_regeneration_identical(self):
        spec = SyntheticSpec(kind="blobs", size=12, count=10, seed=9)
        a = make_synthetic(spec)
        b = make_synthetic(spec)
        assert torch.equal(a.tensor, b.tensor)

    def test_values_in_range(self):
        for kind in ("blobs", "bicolor-halves"):
            data = make_synthetic(SyntheticSpec(kind=kind, size=10, count=20, seed=0))
            assert data.tensor.min() >= -1.0 and data.tensor.max() <= 1.0
            assert data.tensor.dtype == torch.float32

    def test_splits_partition(self):
        data = make_synthetic(SyntheticSpec(kind="blobs", size=8, count=100, seed=0))
        sizes = [data.images(s).shape[0] for s in ("train", "val", "test")]
        assert sizes == [80, 10, 10]

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            make_synthetic(SyntheticSpec(kind="stripes"))


class TestDatasetSpec:
    def test_exactly_one_source(self):
        with pytest.raises(ConfigurationError):
            DatasetSpec(root=None, synthetic=None).validate()
        with pytest.raises(ConfigurationError):
            DatasetSpec(root="x", synthetic=SyntheticSpec()).validate()

    def test_split_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            DatasetSpec(root="x", split=(0.5, 0.2, 0.2)).validate()
