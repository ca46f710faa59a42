"""
Tests for the datasets module.
"""

import numpy as np
import pytest

from pgn_gan_lab.datasets import (
    INDEX_FILE,
    DatasetError,
    EmptyDatasetError,
    ImageDataset,
    ImageDatasetError,
    SyntheticDataset,
    SyntheticKind,
    bar_images,
    grid25_centers,
    ring8_centers,
    sample_real,
    write_image_dataset,
)
from pgn_gan_lab.checkpoint import write_tensor_file


class TestSyntheticDataset:
    """Tests for the 2-D mixtures."""

    def test_ring8_centers(self):
        """Test eight centers at radius 2."""
        centers = ring8_centers()
        assert centers.shape == (8, 2)
        np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 2.0)

    def test_grid25_centers(self):
        """Test the 5x5 integer grid."""
        centers = grid25_centers()
        assert centers.shape == (25, 2)
        assert set(centers[:, 0]) == {-2.0, -1.0, 0.0, 1.0, 2.0}

    def test_kind_from_string(self):
        """Test dataset names."""
        assert SyntheticKind.from_string("Ring8") is SyntheticKind.RING8
        assert SyntheticKind.from_string("moons") is None

    @pytest.mark.parametrize("kind", [SyntheticKind.RING8, SyntheticKind.GRID25])
    def test_mixture_samples_lie_near_centers(self, kind):
        """Test that every sample is within 6 std of some center."""
        dataset = SyntheticDataset(kind)
        samples = dataset.sample(2000, np.random.default_rng(0))
        distances = np.linalg.norm(samples[:, None, :] - dataset.centers[None], axis=2)
        assert samples.shape == (2000, 2)
        assert np.all(distances.min(axis=1) <= 6.0 * dataset.std)

    def test_swissroll_is_bounded_and_deterministic(self):
        """Test the swiss roll range and reproducibility."""
        dataset = SyntheticDataset(SyntheticKind.SWISSROLL)
        a = dataset.sample(500, np.random.default_rng(1))
        b = dataset.sample(500, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)
        assert np.all(np.abs(a) <= 2.2)
        assert dataset.n_modes == 0

    def test_ring8_mean_is_near_origin(self):
        """Test that a million ring8 samples average to the origin."""
        dataset = SyntheticDataset(SyntheticKind.RING8)
        samples = sample_real(dataset, 1_000_000, np.random.default_rng(0)).numpy()
        assert np.all(np.abs(samples.mean(axis=0)) <= 0.01)

    def test_zero_std_gives_exact_centers(self):
        """Test that std=0 puts every sample on a center."""
        dataset = SyntheticDataset(SyntheticKind.GRID25, std=0.0)
        samples = sample_real(dataset, 500, np.random.default_rng(2)).numpy()
        centers = {tuple(center) for center in dataset.centers}
        assert all(tuple(point) in centers for point in samples)

    @pytest.mark.parametrize(
        "kind", [SyntheticKind.RING8, SyntheticKind.GRID25, SyntheticKind.SWISSROLL]
    )
    def test_same_seed_same_batch(self, kind):
        """Test that equal seeds give identical batches."""
        dataset = SyntheticDataset(kind)
        a = sample_real(dataset, 64, np.random.default_rng(7)).numpy()
        b = sample_real(dataset, 64, np.random.default_rng(7)).numpy()
        c = sample_real(dataset, 64, np.random.default_rng(8)).numpy()
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_sample_real_requires_positive_count(self):
        """Test that a batch needs at least one sample."""
        with pytest.raises(DatasetError):
            sample_real(SyntheticDataset(SyntheticKind.RING8), 0, np.random.default_rng(0))


class TestImageDataset:
    """Tests for image sets on disk."""

    def test_write_and_load(self, tmp_path):
        """Test that written images load back unchanged."""
        images = bar_images(5, np.random.default_rng(0), channels=1, size=8)
        write_image_dataset(tmp_path, images)
        dataset = ImageDataset.load(tmp_path)
        assert len(dataset) == 5
        assert dataset.sample_shape == (1, 8, 8)
        np.testing.assert_array_equal(dataset.images, images)
        assert sample_real(dataset, 3, np.random.default_rng(1)).shape == (3, 1, 8, 8)

    def test_missing_index(self, tmp_path):
        """Test loading a directory without an index file."""
        with pytest.raises(ImageDatasetError):
            ImageDataset.load(tmp_path)

    def test_empty_index(self, tmp_path):
        """Test that an index listing nothing is an empty dataset."""
        (tmp_path / INDEX_FILE).write_text("# no images\n")
        with pytest.raises(EmptyDatasetError):
            ImageDataset.load(tmp_path)

    def test_mismatched_shapes(self, tmp_path):
        """Test that all images must share a shape."""
        write_tensor_file(tmp_path / "a.pgnt", [("image", np.zeros((1, 4, 4)))])
        write_tensor_file(tmp_path / "b.pgnt", [("image", np.zeros((1, 5, 5)))])
        (tmp_path / INDEX_FILE).write_text("a.pgnt\nb.pgnt\n")
        with pytest.raises(ImageDatasetError):
            ImageDataset.load(tmp_path)

    def test_values_out_of_range(self, tmp_path):
        """Test that pixels must lie in [-1, 1]."""
        write_image_dataset(tmp_path, 2.0 * np.ones((1, 1, 4, 4)))
        with pytest.raises(ImageDatasetError):
            ImageDataset.load(tmp_path)

    def test_unreadable_image(self, tmp_path):
        """Test that a corrupt image file is reported."""
        (tmp_path / "a.pgnt").write_bytes(b"garbage")
        (tmp_path / INDEX_FILE).write_text("a.pgnt\n")
        with pytest.raises(ImageDatasetError):
            ImageDataset.load(tmp_path)

    def test_bar_images(self):
        """Test that each bar image holds exactly one bright bar."""
        images = bar_images(20, np.random.default_rng(3), channels=2, size=6)
        assert images.shape == (20, 2, 6, 6)
        assert set(np.unique(images)) == {-1.0, 1.0}
        np.testing.assert_array_equal((images == 1.0).sum(axis=(1, 2, 3)), 2 * 6)
