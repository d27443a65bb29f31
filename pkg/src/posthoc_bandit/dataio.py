"""IDX dataset parsing and the line-delimited interaction log format."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import Interaction

_UBYTE = 0x08


class IdxError(ValueError):
    """Malformed IDX file."""


class BadMagicError(IdxError):
    pass


class TruncatedPayloadError(IdxError):
    pass


class DimensionMismatchError(IdxError):
    pass


class LogFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX buffer into an array of the declared shape."""
    if len(data) < 4:
        raise BadMagicError("file shorter than the 4-byte magic number")
    if data[0] != 0 or data[1] != 0:
        raise BadMagicError(f"magic must start with two zero bytes, got {data[:2].hex()}")
    if data[2] != _UBYTE:
        raise BadMagicError(f"unsupported element type 0x{data[2]:02x}; only unsigned bytes (0x08) are accepted")
    ndim = data[3]
    if ndim == 0:
        raise BadMagicError("IDX file declares zero dimensions")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedPayloadError(f"header needs {header} bytes, file has {len(data)}")
    dims = tuple(int(d) for d in np.frombuffer(data, dtype=">u4", count=ndim, offset=4))
    size = math.prod(dims)
    payload = len(data) - header
    if payload < size:
        raise TruncatedPayloadError(f"payload has {payload} bytes, dimensions {dims} need {size}")
    if payload > size:
        raise DimensionMismatchError(f"payload has {payload} bytes, dimensions {dims} need only {size}")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only uint8 arrays can be encoded")
    head = bytes([0, 0, _UBYTE, array.ndim]) + np.asarray(array.shape, dtype=">u4").tobytes()
    return head + np.ascontiguousarray(array).tobytes()


def read_idx_images(path: str | Path) -> np.ndarray:
    """Images as rows of a float matrix, row-major flattened and scaled to [0, 1]."""
    raw = parse_idx(Path(path).read_bytes())
    if raw.ndim != 3:
        raise DimensionMismatchError(f"image file must be 3-dimensional, got shape {raw.shape}")
    return raw.reshape(raw.shape[0], -1).astype(np.float64) / 255.0


def read_idx_labels(path: str | Path, expected_count: int | None = None) -> np.ndarray:
    raw = parse_idx(Path(path).read_bytes())
    if raw.ndim != 1:
        raise DimensionMismatchError(f"label file must be 1-dimensional, got shape {raw.shape}")
    if expected_count is not None and raw.shape[0] != expected_count:
        raise DimensionMismatchError(f"{raw.shape[0]} labels for {expected_count} images")
    if raw.size and raw.max() >= 10:
        raise IdxError(f"label {int(raw.max())} outside [0, 10)")
    return raw.astype(np.int64)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist(data_dir: str | Path, split: str) -> tuple[np.ndarray, np.ndarray]:
    images_name, labels_name = MNIST_FILES[split]
    data_dir = Path(data_dir)
    images = read_idx_images(data_dir / images_name)
    labels = read_idx_labels(data_dir / labels_name, expected_count=images.shape[0])
    return images, labels


# --- interaction logs -------------------------------------------------------

_REQUIRED = ("context", "action", "loss")


def _vector(values) -> list[float]:
    return [float(v) for v in values]


def interaction_to_record(x: Interaction, step: int | None = None) -> dict:
    record: dict = {"step": x.step if step is None else step, "context": _vector(x.context),
                    "action": x.action, "loss": x.loss}
    if x.posthoc is not None:
        record["posthoc"] = _vector(x.posthoc)
    if x.full_loss is not None:
        record["full_loss"] = _vector(x.full_loss)
    if x.propensity is not None:
        record["propensity"] = x.propensity
    if x.group_key is not None:
        record["group_key"] = x.group_key
    return record


def record_to_interaction(record: dict) -> Interaction:
    missing = [f for f in _REQUIRED if f not in record]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    if isinstance(record["action"], bool) or not isinstance(record["action"], int):
        raise ValueError("action must be an integer")
    group = record.get("group_key")
    return Interaction(
        context=np.array(record["context"], dtype=np.float64),
        action=record["action"],
        loss=record["loss"],
        posthoc=None if record.get("posthoc") is None else np.array(record["posthoc"], dtype=np.float64),
        full_loss=None if record.get("full_loss") is None else np.array(record["full_loss"], dtype=np.float64),
        propensity=record.get("propensity"),
        group_key=None if group is None else str(group),
        step=record.get("step"),
    )


def write_interaction_log(path: str | Path, interactions: Iterable[Interaction]) -> None:
    """One JSON object per line. Floats use the shortest round-tripping repr of binary64."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, x in enumerate(interactions):
            fh.write(json.dumps(interaction_to_record(x, x.step if x.step is not None else i),
                                allow_nan=False, separators=(",", ":")))
            fh.write("\n")


def iter_interaction_log(path: str | Path) -> Iterator[Interaction]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise ValueError("record is not an object")
                yield record_to_interaction(record)
            except (ValueError, TypeError) as exc:
                raise LogFormatError(lineno, str(exc)) from exc


def read_interaction_log(path: str | Path) -> list[Interaction]:
    # materialise fully so a malformed line rejects the whole log
    return list(iter_interaction_log(path))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
