"""Unit tests for the dataset manifest and batch sampling."""

import pytest
import torch

from vhs2hd.dataset import (
    FrameCache,
    build_manifest,
    default_manifest_path,
    load_manifest,
    sample_batch,
    split_items,
)
from vhs2hd.degradation import DegradationConfig
from vhs2hd.errors import EmptySourceError, FrameSizeError

from tests.conftest import write_images


class TestSplit:
    """Tests for the per-domain split."""

    def test_exact_95_5(self):
        """100 items at 0.95 give exactly 95 train and 5 test."""
        refs = ["X/%03d.png" % i for i in range(100)]
        split = split_items(refs, 0.95, seed=0, domain_index=0)
        assert list(split.values()).count("train") == 95
        assert list(split.values()).count("test") == 5

    def test_deterministic(self):
        refs = ["Y/%03d.png" % i for i in range(30)]
        assert split_items(refs, 0.8, 5, 1) == split_items(refs, 0.8, 5, 1)

    def test_at_least_one_train(self):
        """Tiny domains keep one training item."""
        split = split_items(["X/a.png", "X/b.png"], 0.1, 0, 0)
        assert list(split.values()).count("train") == 1


class TestBuildManifest:
    """Tests for build_manifest."""

    def test_counts_and_default_path(self, image_dirs):
        x_dir, y_dir = image_dirs
        manifest = build_manifest(x_dir, y_dir, train_frac=0.5, seed=1)
        assert manifest.counts() == {"X": {"train": 3, "test": 3}, "Y": {"train": 3, "test": 3}}
        assert default_manifest_path(x_dir).is_file()
        assert load_manifest(default_manifest_path(x_dir)) == manifest

    def test_items_sorted_and_z_shares_y(self, image_dirs):
        x_dir, y_dir = image_dirs
        manifest = build_manifest(x_dir, y_dir, train_frac=1.0)
        refs = manifest.items("X", None)
        assert refs == sorted(refs)
        assert manifest.items("Z", "train") == manifest.items("Y", "train")
        assert manifest.path_of(refs[0]) == x_dir.resolve() / refs[0].split("/", 1)[1]

    def test_rerun_identical(self, image_dirs, tmp_path):
        """Same inputs and seed give byte-identical manifests."""
        x_dir, y_dir = image_dirs
        build_manifest(x_dir, y_dir, seed=3, manifest_path=tmp_path / "a.json")
        build_manifest(x_dir, y_dir, seed=3, manifest_path=tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_empty_test_split_warns(self, image_dirs):
        x_dir, y_dir = image_dirs
        manifest = build_manifest(x_dir, y_dir, train_frac=1.0)
        assert len(manifest.warnings) == 2

    def test_missing_domain(self, image_dirs, tmp_path):
        """A missing directory names its domain."""
        x_dir, _ = image_dirs
        with pytest.raises(EmptySourceError, match="Domain Y"):
            build_manifest(x_dir, tmp_path / "absent")

    def test_empty_domain(self, image_dirs, tmp_path):
        x_dir, _ = image_dirs
        (tmp_path / "empty").mkdir()
        with pytest.raises(EmptySourceError):
            build_manifest(x_dir, tmp_path / "empty")


class TestSampleBatch:
    """Tests for sample_batch."""

    @pytest.fixture
    def manifest(self, image_dirs, tmp_path):
        x_dir, y_dir = image_dirs
        return build_manifest(x_dir, y_dir, train_frac=1.0, manifest_path=tmp_path / "m.json")

    def test_shape_and_range(self, manifest):
        batch = sample_batch(manifest, "X", 3, 16, torch.Generator().manual_seed(0))
        assert batch.shape == (3, 3, 16, 16)
        assert batch.min() >= -1.0 and batch.max() <= 1.0

    def test_seeded(self, manifest):
        """Same generator state, same batch; workers do not change it."""
        a = sample_batch(manifest, "Y", 4, 16, torch.Generator().manual_seed(9))
        b = sample_batch(manifest, "Y", 4, 16, torch.Generator().manual_seed(9), workers=2)
        assert torch.equal(a, b)

    def test_generator_advances(self, manifest):
        g = torch.Generator().manual_seed(9)
        a = sample_batch(manifest, "Y", 2, 16, g)
        b = sample_batch(manifest, "Y", 2, 16, g)
        assert not torch.equal(a, b)

    def test_z_pairs_aligned(self, manifest):
        """Z batches come as (z, y) with identical windows."""
        z, y = sample_batch(manifest, "Z", 2, 16, torch.Generator().manual_seed(0), hflip=False)
        assert z.shape == y.shape == (2, 3, 16, 16)
        assert not torch.equal(z, y)
        assert float(z.diff(dim=-1).abs().mean()) < float(y.diff(dim=-1).abs().mean())

    def test_z_without_restore(self, image_dirs, tmp_path):
        x_dir, y_dir = image_dirs
        manifest = build_manifest(
            x_dir, y_dir, train_frac=1.0,
            cfg=DegradationConfig(restore_size=False), manifest_path=tmp_path / "m.json",
        )
        z, y = sample_batch(manifest, "Z", 1, 16, torch.Generator().manual_seed(0))
        assert z.shape == (1, 3, 4, 4)
        assert y.shape == (1, 3, 16, 16)

    def test_crop_too_large(self, manifest):
        with pytest.raises(FrameSizeError):
            sample_batch(manifest, "X", 1, 64, torch.Generator().manual_seed(0))

    def test_empty_split(self, manifest):
        with pytest.raises(EmptySourceError):
            sample_batch(manifest, "X", 1, 16, torch.Generator(), split="test")


class TestFrameCache:
    """Tests for FrameCache."""

    def test_lru_capacity(self, image_dirs, tmp_path):
        x_dir, y_dir = image_dirs
        manifest = build_manifest(x_dir, y_dir, train_frac=1.0, manifest_path=tmp_path / "m.json")
        cache = FrameCache(manifest, capacity=2)
        refs = manifest.items("X", None)
        first = cache.get("X", refs[0])
        assert cache.get("X", refs[0]) is first
        for ref in refs[1:4]:
            cache.get("X", ref)
        assert len(cache._entries) == 2
        assert cache.get("X", refs[0]) is not first

    def test_y_cropped_to_scale(self, tmp_path):
        """Y frames are cropped to a multiple of the scale factor."""
        write_images(tmp_path / "X", 1, 32, 32)
        write_images(tmp_path / "Y", 1, 50, 42)
        manifest = build_manifest(tmp_path / "X", tmp_path / "Y", train_frac=1.0)
        cache = FrameCache(manifest)
        ref = manifest.items("Y", None)[0]
        assert cache.get("Y", ref).shape == (3, 48, 40)
        assert cache.get("Z", ref).shape == (3, 48, 40)
