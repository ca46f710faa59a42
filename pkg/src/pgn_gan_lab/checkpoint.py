"""
Binary tensor files and training checkpoints.

File layout (little-endian):
    magic "PGN1" | u32 version | u64 step | u64 tensor count
    per tensor: u32 name length | UTF-8 name | u32 rank | u64 extents | f64 data
    u32 CRC32 of everything before it
"""

import logging
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from .autodiff import Tensor
from .nn import ParameterStore
from .optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"PGN1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
_U32 = struct.Struct("<I")
_CRC = struct.Struct("<I")
_MASK64 = (1 << 64) - 1

RNG_RECORD = "rng/pcg64"
CONFIG_RECORD = "config/text"

Record = Tuple[str, np.ndarray]
PathLike = Union[str, Path]


class CheckpointError(Exception):
    """Base exception for checkpoint errors."""

    pass


class CheckpointVersionError(CheckpointError):
    """The file is not a tensor file of a supported version."""

    pass


class CheckpointTruncatedError(CheckpointError):
    """The file ends before its declared content."""

    pass


class CheckpointCorruptError(CheckpointError):
    """The checksum or structure of the file is wrong."""

    pass


class CheckpointMismatchError(CheckpointError):
    """A checkpoint does not fit the networks it is loaded into."""

    pass


def encode_tensors(records: List[Record], step: int = 0) -> bytes:
    """Serialize named float64 arrays."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, step, len(records))]
    for name, array in records:
        encoded_name = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f8")
        parts.append(_U32.pack(len(encoded_name)))
        parts.append(encoded_name)
        parts.append(_U32.pack(data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointTruncatedError(
                f"File ends while reading {what} at byte {self.offset} "
                f"({len(self.payload)} bytes total)"
            )
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct, what: str) -> Tuple[Any, ...]:
        return fmt.unpack(self.take(fmt.size, what))


def decode_tensors(payload: bytes) -> Tuple[int, List[Record]]:
    """
    Parse a tensor file.

    Returns:
        (step, records) with records in file order.

    Raises:
        CheckpointVersionError: Wrong magic or version.
        CheckpointTruncatedError: The payload is shorter than declared.
        CheckpointCorruptError: Checksum mismatch or trailing bytes.
    """
    reader = _Reader(payload)
    magic, version, step, count = reader.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise CheckpointVersionError(f"Not a tensor file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"Unsupported format version {version}; expected {FORMAT_VERSION}"
        )

    records: List[Record] = []
    for index in range(count):
        (name_length,) = reader.unpack(_U32, f"name length of tensor {index}")
        name = reader.take(name_length, f"name of tensor {index}").decode("utf-8", "replace")
        (rank,) = reader.unpack(_U32, f"rank of '{name}'")
        shape = struct.unpack(f"<{rank}Q", reader.take(8 * rank, f"shape of '{name}'"))
        size = math.prod(shape)
        data = reader.take(8 * size, f"data of '{name}'")
        array = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)
        records.append((name, array))

    (stored_crc,) = reader.unpack(_CRC, "checksum")
    if reader.offset != len(payload):
        raise CheckpointCorruptError(
            f"{len(payload) - reader.offset} unexpected trailing bytes after checksum"
        )
    actual_crc = zlib.crc32(payload[: -_CRC.size]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointCorruptError(
            f"Checksum mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})"
        )
    return step, records


def write_tensor_file(path: PathLike, records: List[Record], step: int = 0) -> None:
    """Write a tensor file atomically through a temporary sibling."""
    path = Path(path)
    temporary = path.with_name(path.name + ".tmp")
    temporary.write_bytes(encode_tensors(records, step))
    os.replace(temporary, path)


def read_tensor_file(path: PathLike) -> Tuple[int, List[Record]]:
    return decode_tensors(Path(path).read_bytes())


def encode_rng_state(state: Dict[str, Any]) -> np.ndarray:
    """Pack a PCG64 bit-generator state into six 64-bit words stored as f64 bits."""
    if state.get("bit_generator") != "PCG64":
        raise CheckpointError(f"Unsupported bit generator {state.get('bit_generator')}")
    inner = state["state"]
    words = [
        inner["state"] >> 64,
        inner["state"] & _MASK64,
        inner["inc"] >> 64,
        inner["inc"] & _MASK64,
        int(state["has_uint32"]),
        int(state["uinteger"]),
    ]
    return np.array(words, dtype=np.uint64).view(np.float64)


def decode_rng_state(array: np.ndarray) -> Dict[str, Any]:
    words = [int(word) for word in np.ascontiguousarray(array, dtype=np.float64).view(np.uint64)]
    if len(words) != 6:
        raise CheckpointCorruptError(f"RNG record has {len(words)} words; expected 6")
    return {
        "bit_generator": "PCG64",
        "state": {"state": (words[0] << 64) | words[1], "inc": (words[2] << 64) | words[3]},
        "has_uint32": words[4],
        "uinteger": words[5],
    }


def encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def decode_text(array: np.ndarray) -> str:
    return bytes(np.asarray(array, dtype=np.float64).astype(np.uint8)).decode("utf-8")


@dataclass
class Checkpoint:
    """
    Complete training state after ``step`` generator updates.

    Attributes:
        step: Completed generator steps.
        generator: Generator parameters.
        discriminator: Discriminator parameters and power-iteration vectors.
        ema: Averaged generator parameters.
        g_adam: Generator optimizer state.
        d_adam: Discriminator optimizer state.
        rng_state: Training bit-generator state.
        config_text: Echo of the run configuration.
        extra: Records with names this version does not interpret; written
            back unchanged on save.
    """

    step: int
    generator: ParameterStore
    discriminator: ParameterStore
    ema: ParameterStore
    g_adam: AdamState
    d_adam: AdamState
    rng_state: Dict[str, Any]
    config_text: str = ""
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_records(self) -> List[Record]:
        records: List[Record] = []
        for prefix, store in (
            ("generator", self.generator),
            ("discriminator", self.discriminator),
            ("ema", self.ema),
        ):
            records.extend((f"{prefix}/param/{n}", t.data) for n, t in store.params.items())
            records.extend((f"{prefix}/vector/{n}", u) for n, u in store.vectors.items())
        for prefix, state in (("g_adam", self.g_adam), ("d_adam", self.d_adam)):
            records.extend((f"{prefix}/m/{n}", m) for n, m in state.m.items())
            records.extend((f"{prefix}/v/{n}", v) for n, v in state.v.items())
            records.append((f"{prefix}/t", np.array(float(state.t))))
        records.append((RNG_RECORD, encode_rng_state(self.rng_state)))
        records.append((CONFIG_RECORD, encode_text(self.config_text)))
        records.extend(self.extra.items())
        return records

    @classmethod
    def from_records(cls, step: int, records: List[Record]) -> "Checkpoint":
        stores: Dict[str, ParameterStore] = {
            prefix: ParameterStore({}, {}) for prefix in ("generator", "discriminator", "ema")
        }
        adams = {"g_adam": AdamState(), "d_adam": AdamState()}
        rng_state = None
        config_text = ""
        extra: Dict[str, np.ndarray] = {}
        for name, array in records:
            head, _, rest = name.partition("/")
            kind, _, key = rest.partition("/")
            if head in stores and kind == "param":
                stores[head].params[key] = Tensor._wrap(array)
            elif head in stores and kind == "vector":
                stores[head].vectors[key] = array
            elif head in adams and kind in ("m", "v"):
                getattr(adams[head], kind)[key] = array
            elif head in adams and rest == "t":
                adams[head].t = int(array.reshape(-1)[0])
            elif name == RNG_RECORD:
                rng_state = decode_rng_state(array)
            elif name == CONFIG_RECORD:
                config_text = decode_text(array)
            else:
                extra[name] = array
        if rng_state is None:
            raise CheckpointCorruptError(f"Checkpoint has no '{RNG_RECORD}' record")
        if not stores["generator"].params or not stores["discriminator"].params:
            raise CheckpointCorruptError("Checkpoint has no network parameters")
        return cls(
            step=step,
            generator=stores["generator"],
            discriminator=stores["discriminator"],
            ema=stores["ema"],
            g_adam=adams["g_adam"],
            d_adam=adams["d_adam"],
            rng_state=rng_state,
            config_text=config_text,
            extra=extra,
        )

    def check_compatible(
        self, generator: ParameterStore, discriminator: ParameterStore
    ) -> None:
        """
        Raise CheckpointMismatchError unless parameter names and shapes match.
        """
        for label, stored, expected in (
            ("generator", self.generator, generator),
            ("discriminator", self.discriminator, discriminator),
            ("ema", self.ema, generator),
        ):
            if stored.shapes() != expected.shapes():
                raise CheckpointMismatchError(
                    f"{label} parameters {stored.shapes()} do not match the network "
                    f"{expected.shapes()}"
                )
        if set(self.discriminator.vectors) != set(discriminator.vectors):
            raise CheckpointMismatchError(
                "Discriminator power-iteration vectors do not match the normalizer"
            )


def save_checkpoint(checkpoint: Checkpoint, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_tensor_file(path, checkpoint.to_records(), checkpoint.step)
    logger.debug("Wrote checkpoint for step %d to %s", checkpoint.step, path)
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: If the file is missing, malformed or incomplete.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    step, records = read_tensor_file(path)
    logger.debug("Read %d tensors (step %d) from %s", len(records), step, path)
    return Checkpoint.from_records(step, records)
