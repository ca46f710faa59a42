"""
Training data: synthetic 2-D mixtures and small image sets.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from sklearn.datasets import make_swiss_roll

from .autodiff import Tensor
from .checkpoint import CheckpointError, read_tensor_file, write_tensor_file

logger = logging.getLogger(__name__)

INDEX_FILE = "index.txt"
RING_RADIUS = 2.0
# Raw swiss-roll coordinates reach magnitude 4.5 * pi; this maps them into [-2, 2].
SWISSROLL_SCALE = 2.0 / 14.13717


class DatasetError(Exception):
    """Base exception for dataset errors."""

    pass


class EmptyDatasetError(DatasetError):
    """The dataset contains no samples."""

    pass


class ImageDatasetError(DatasetError):
    """An image file is unreadable or inconsistent with the others."""

    pass


class SyntheticKind(Enum):
    RING8 = "ring8"
    GRID25 = "grid25"
    SWISSROLL = "swissroll"

    @classmethod
    def from_string(cls, name: str) -> Optional["SyntheticKind"]:
        name = name.strip().lower()
        for kind in cls:
            if kind.value == name:
                return kind
        return None


def ring8_centers(radius: float = RING_RADIUS) -> np.ndarray:
    """Eight points evenly spaced on a circle."""
    angles = np.arange(8) * (2.0 * np.pi / 8)
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def grid25_centers() -> np.ndarray:
    """The 5x5 integer grid {-2, ..., 2}^2."""
    axis = np.arange(-2, 3, dtype=np.float64)
    xs, ys = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)


@dataclass(frozen=True)
class SyntheticDataset:
    """Gaussian mixture (ring8, grid25) or noisy swiss roll in the plane."""

    kind: SyntheticKind
    std: float = 0.02

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return (2,)

    @property
    def centers(self) -> np.ndarray:
        if self.kind is SyntheticKind.RING8:
            return ring8_centers()
        if self.kind is SyntheticKind.GRID25:
            return grid25_centers()
        return np.zeros((0, 2))

    @property
    def n_modes(self) -> int:
        return len(self.centers)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind is SyntheticKind.SWISSROLL:
            seed = int(rng.integers(0, 2**31 - 1))
            points, _ = make_swiss_roll(n_samples=n, noise=0.0, random_state=seed)
            base = points[:, [0, 2]] * SWISSROLL_SCALE
        else:
            centers = self.centers
            base = centers[rng.integers(0, len(centers), size=n)]
        return base + self.std * rng.standard_normal((n, 2))


@dataclass
class ImageDataset:
    """Images shaped (N, C, H, W) with values in [-1, 1]."""

    directory: Path
    images: np.ndarray
    entries: List[str] = field(default_factory=list)

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    @property
    def centers(self) -> np.ndarray:
        return np.zeros((0,) + self.sample_shape)

    @property
    def n_modes(self) -> int:
        return 0

    @property
    def std(self) -> float:
        return 0.0

    def __len__(self) -> int:
        return self.images.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.images[rng.integers(0, len(self), size=n)]

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "ImageDataset":
        """
        Load every image listed in the directory's index file.

        Raises:
            EmptyDatasetError: If the index lists no images.
            ImageDatasetError: If an image is unreadable, has a different
                shape from the first one, or lies outside [-1, 1].
        """
        directory = Path(directory)
        index = directory / INDEX_FILE
        if not index.is_file():
            raise ImageDatasetError(f"No {INDEX_FILE} in {directory}")
        entries = [
            line.strip()
            for line in index.read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("#")
        ]
        if not entries:
            raise EmptyDatasetError(f"{index} lists no images")

        images = []
        for entry in entries:
            try:
                _, records = read_tensor_file(directory / entry)
            except (OSError, CheckpointError) as e:
                raise ImageDatasetError(f"Cannot read image '{entry}': {e}") from e
            if len(records) != 1 or records[0][1].ndim != 3:
                raise ImageDatasetError(f"'{entry}' must hold exactly one (C, H, W) tensor")
            image = records[0][1]
            if images and image.shape != images[0].shape:
                raise ImageDatasetError(
                    f"'{entry}' has shape {image.shape}; expected {images[0].shape}"
                )
            if not np.all(np.abs(image) <= 1.0):
                raise ImageDatasetError(f"'{entry}' has values outside [-1, 1]")
            images.append(image)

        logger.info("Loaded %d images of shape %s from %s", len(images), images[0].shape, directory)
        return cls(directory, np.stack(images), entries)


Dataset = Union[SyntheticDataset, ImageDataset]


def write_image_dataset(directory: Union[str, Path], images: np.ndarray) -> Path:
    """Write images (N, C, H, W) as one tensor file each plus the index file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, image in enumerate(np.asarray(images, dtype=np.float64)):
        name = f"image_{i:05d}.pgnt"
        write_tensor_file(directory / name, [("image", image)])
        names.append(name)
    (directory / INDEX_FILE).write_text("\n".join(names) + "\n", encoding="utf-8")
    return directory


def bar_images(n: int, rng: np.random.Generator, channels: int = 1, size: int = 8) -> np.ndarray:
    """Dark images with one bright horizontal or vertical bar each."""
    images = -np.ones((n, channels, size, size))
    positions = rng.integers(0, size, size=n)
    vertical = rng.random(n) < 0.5
    for i in range(n):
        if vertical[i]:
            images[i, :, :, positions[i]] = 1.0
        else:
            images[i, :, positions[i], :] = 1.0
    return images


def sample_real(dataset: Dataset, n: int, rng: np.random.Generator) -> Tensor:
    """
    Draw ``n`` samples (with replacement for image sets).

    Raises:
        DatasetError: If ``n`` is not positive.
        EmptyDatasetError: If an image set is empty.
    """
    if n < 1:
        raise DatasetError(f"Sample count must be positive, got {n}")
    if isinstance(dataset, ImageDataset) and len(dataset) == 0:
        raise EmptyDatasetError(f"Image set {dataset.directory} is empty")
    return Tensor._wrap(dataset.sample(n, rng))
