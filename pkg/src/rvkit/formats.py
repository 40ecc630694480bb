"""Bit-exact file containers: LPC1 clouds, RIMG channel grids, JSONL records."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geom import Box3D
from .postprocess import Detection

LPC1_MAGIC = b"LPC1"
RIMG_MAGIC = b"RIMG"
RIMG_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("u1")}


@contextmanager
def atomic_write(path: str | Path, mode: str = "wb"):
    """Write to a temp file in the target directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_lpc1(path, positions, intensity, elongation) -> None:
    positions = np.asarray(positions, dtype="<f4")
    records = np.column_stack(
        [positions, np.asarray(intensity, dtype="<f4"), np.asarray(elongation, dtype="<f4")]
    ).astype("<f4")
    with atomic_write(path) as f:
        f.write(LPC1_MAGIC)
        f.write(struct.pack("<I", len(records)))
        f.write(records.tobytes())


def read_lpc1(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != LPC1_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0 (expected LPC1)")
    (count,) = struct.unpack_from("<I", data, 4)
    expected = 8 + count * 20
    if len(data) < expected:
        raise FormatError(f"{path}: truncated payload (need {expected} bytes, have {len(data)})")
    records = np.frombuffer(data, dtype="<f4", count=count * 5, offset=8).reshape(count, 5)
    pos = records[:, :3].astype(np.float64)
    return pos, records[:, 3].astype(np.float64), records[:, 4].astype(np.float64)


def _channel_payload(array: np.ndarray) -> tuple[int, bytes]:
    if array.dtype == bool:
        return 2, array.astype("u1").tobytes()
    if np.issubdtype(array.dtype, np.integer):
        return 1, array.astype("<i4").tobytes()
    return 0, array.astype("<f4").tobytes()


def write_rimg(path, shape: tuple[int, int], channels: list[tuple[str, np.ndarray]]) -> None:
    """Named-channel container; dtypes: 0 = f32, 1 = i32, 2 = u8 boolean."""
    m, n = shape
    with atomic_write(path) as f:
        f.write(RIMG_MAGIC)
        f.write(struct.pack("<HIII", RIMG_VERSION, m, n, len(channels)))
        for name, array in channels:
            if array.shape != (m, n):
                raise ValueError(f"channel {name!r} has shape {array.shape}, grid is {m}x{n}")
            raw = name.encode("utf-8")
            if len(raw) > 255:
                raise ValueError("channel name too long")
            code, payload = _channel_payload(np.ascontiguousarray(array))
            f.write(struct.pack("<B", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", code))
            f.write(payload)


def read_rimg(path) -> tuple[tuple[int, int], dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != RIMG_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0 (expected RIMG)")
    version, m, n, n_channels = struct.unpack_from("<HIII", data, 4)
    if version != RIMG_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = 4 + struct.calcsize("<HIII")
    channels: dict[str, np.ndarray] = {}
    for _ in range(n_channels):
        try:
            (name_len,) = struct.unpack_from("<B", data, offset)
            offset += 1
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (code,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dtype = _DTYPE_CODES[code]
        except (struct.error, KeyError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: corrupt channel header at offset {offset}") from exc
        count = m * n
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: truncated channel {name!r} at offset {offset}")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(m, n)
        if code == 2:
            arr = arr.astype(bool)
        channels[name] = arr
        offset += nbytes
    return (m, n), channels


_BOX_FIELDS = ("cx", "cy", "cz", "l", "w", "h", "yaw")


def _fmt(x: float) -> float:
    return float(f"{x:.6f}")


def write_boxes_jsonl(path, boxes: list[Box3D]) -> None:
    with atomic_write(path, "w") as f:
        for b in boxes:
            rec = {k: _fmt(getattr(b, k)) for k in _BOX_FIELDS}
            rec["class"] = b.class_id
            rec["instance"] = b.instance_id
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_boxes_jsonl(path) -> list[Box3D]:
    boxes = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        boxes.append(
            Box3D(
                *(rec[k] for k in _BOX_FIELDS),
                class_id=int(rec["class"]),
                instance_id=int(rec["instance"]),
            )
        )
    return boxes


def write_detections_jsonl(path, dets: list[Detection]) -> None:
    with atomic_write(path, "w") as f:
        for d in dets:
            rec = {k: _fmt(getattr(d.box, k)) for k in _BOX_FIELDS}
            rec["class"] = d.class_id
            rec["score"] = _fmt(d.score)
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def write_instances_json(path, instance_ids: np.ndarray) -> None:
    with atomic_write(path, "w") as f:
        json.dump([int(i) for i in instance_ids], f)


def read_instances_json(path) -> np.ndarray:
    return np.asarray(json.loads(Path(path).read_text()), dtype=np.int64)


def write_panoptic_jsonl(path, semantic: np.ndarray, instance: np.ndarray, valid: np.ndarray) -> None:
    """One record per valid pixel: row, col, class, instance."""
    rows, cols = np.nonzero(valid)
    with atomic_write(path, "w") as f:
        for r, c in zip(rows.tolist(), cols.tolist()):
            f.write(
                json.dumps(
                    {"row": r, "col": c, "class": int(semantic[r, c]), "instance": int(instance[r, c])},
                    sort_keys=True,
                )
                + "\n"
            )
