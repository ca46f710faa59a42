"""
Sample export: CSV for 2-D points, PGM/PPM for images.
"""

import csv
from pathlib import Path
from typing import List, Union

import numpy as np

PathLike = Union[str, Path]


class ExportError(Exception):
    """Samples cannot be written in any supported format."""

    pass


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Map values in [-1, 1] linearly onto 0..255."""
    scaled = np.rint((np.clip(image, -1.0, 1.0) + 1.0) * 127.5)
    return scaled.astype(np.uint8)


def write_points_csv(path: PathLike, points: np.ndarray) -> Path:
    """One ``x,y`` row per point, no header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for x, y in np.asarray(points, dtype=np.float64).reshape(-1, 2):
            writer.writerow((repr(float(x)), repr(float(y))))
    return path


def write_pgm(path: PathLike, channel: np.ndarray) -> Path:
    """Binary P5 grayscale image from an (H, W) array in [-1, 1]."""
    height, width = channel.shape
    path = Path(path)
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + to_bytes(channel).tobytes())
    return path


def write_ppm(path: PathLike, image: np.ndarray) -> Path:
    """Binary P6 color image from a (3, H, W) array in [-1, 1]."""
    _, height, width = image.shape
    pixels = to_bytes(np.transpose(image, (1, 2, 0)))
    path = Path(path)
    path.write_bytes(f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def write_images(directory: PathLike, images: np.ndarray) -> List[Path]:
    """
    Write (N, C, H, W) images: PPM for 3 channels, otherwise one PGM per channel.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, image in enumerate(images):
        if image.shape[0] == 3:
            written.append(write_ppm(directory / f"sample_{i:05d}.ppm", image))
            continue
        for c, channel in enumerate(image):
            suffix = "" if image.shape[0] == 1 else f"_c{c}"
            written.append(write_pgm(directory / f"sample_{i:05d}{suffix}.pgm", channel))
    return written


def export_samples(path: PathLike, samples: np.ndarray) -> Path:
    """
    Write samples to ``path``: a CSV file for points, a directory for images.

    Raises:
        ExportError: If the samples are neither (N, 2) nor (N, C, H, W).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2 and samples.shape[1] == 2:
        return write_points_csv(path, samples)
    if samples.ndim == 4:
        write_images(path, samples)
        return Path(path)
    raise ExportError(f"Cannot export samples of shape {samples.shape}")
