"""On-disk formats and the procedural dataset generator.

Two little-endian binary containers:

ORNC dataset file
    magic ``ORNC`` | version u32 | count u32 | channels u32 | height u32 |
    width u32 | num_classes u32 | count*C*H*W pixel bytes (u8, row-major) |
    count label bytes (u8). Exactly 28 + count*C*H*W + count bytes.

UORP checkpoint file
    magic ``UORP`` | version u32 | config blob (u32 length + canonical
    ``key=value`` lines, keys sorted) | repeated tensor records of
    [name_len u16 | name utf-8 | rank u8 | extents u32*rank | float32 data].
    Optimizer moments ride along under ``opt.m.`` / ``opt.v.`` prefixes.

Pixels are stored as u8 and normalized to [0, 1] (divide by 255) at load
time. Both formats are platform-independent byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import rng

__all__ = [
    "FormatError",
    "DatasetInfo",
    "write_dataset",
    "read_dataset_info",
    "iter_batches",
    "load_dataset",
    "generate_synthetic_dataset",
    "save_checkpoint",
    "load_checkpoint",
]

DATASET_MAGIC = b"ORNC"
CHECKPOINT_MAGIC = b"UORP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4s6I")  # magic + version, count, C, H, W, num_classes


class FormatError(ValueError):
    """Malformed or truncated container file."""


@dataclass(frozen=True)
class DatasetInfo:
    count: int
    channels: int
    height: int
    width: int
    num_classes: int

    @property
    def image_bytes(self) -> int:
        return self.channels * self.height * self.width


# ----------------------------------------------------------------------
# ORNC dataset container
# ----------------------------------------------------------------------


def write_dataset(path, images: np.ndarray, labels: np.ndarray, num_classes: int) -> None:
    """Write a (N, C, H, W) u8 image block plus N u8 labels."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if images.ndim != 4 or labels.shape != (images.shape[0],):
        raise FormatError(f"bad arrays: images {images.shape}, labels {labels.shape}")
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"label {labels.max()} >= num_classes {num_classes}")
    n, c, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, FORMAT_VERSION, n, c, h, w, num_classes))
        fh.write(images.tobytes())
        fh.write(labels.tobytes())


def read_dataset_info(path) -> DatasetInfo:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header, {len(header)} < {_HEADER.size} bytes")
        magic, version, n, c, h, w, num_classes = _HEADER.unpack(header)
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        info = DatasetInfo(n, c, h, w, num_classes)
        fh.seek(0, 2)
        actual = fh.tell()
    expected = _HEADER.size + n * info.image_bytes + n
    if actual != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {actual}")
    return info


def iter_batches(path, batch_size: int) -> Iterator[tuple[np.ndarray, np.ndarray, int]]:
    """Stream (images in [0,1] float64, labels, start_index) batches.

    Reads one batch of pixel bytes at a time; the final partial batch is
    delivered. Labels for the whole file are small and read up front.
    """
    info = read_dataset_info(path)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size + info.count * info.image_bytes)
        labels = np.frombuffer(fh.read(info.count), dtype=np.uint8)
        fh.seek(_HEADER.size)
        for start in range(0, info.count, batch_size):
            n = min(batch_size, info.count - start)
            raw = fh.read(n * info.image_bytes)
            block = np.frombuffer(raw, dtype=np.uint8).reshape(
                n, info.channels, info.height, info.width
            )
            yield block.astype(np.float64) / 255.0, labels[start : start + n].astype(np.int64), start


def load_dataset(path) -> tuple[np.ndarray, np.ndarray, DatasetInfo]:
    """Whole-file convenience load: ([0,1] float images, int labels, info)."""
    info = read_dataset_info(path)
    batches = list(iter_batches(path, batch_size=max(1, info.count)))
    if not batches:
        return (
            np.zeros((0, info.channels, info.height, info.width)),
            np.zeros(0, dtype=np.int64),
            info,
        )
    images = np.concatenate([b[0] for b in batches])
    labels = np.concatenate([b[1] for b in batches])
    return images, labels, info


# ----------------------------------------------------------------------
# procedural dataset
# ----------------------------------------------------------------------

_SHAPE_FAMILIES = (
    "disc",
    "square",
    "cross",
    "rings",
    "stripes_0",
    "stripes_45",
    "stripes_90",
    "stripes_135",
)


def _bilinear_field(seed: int, image_index: int, h: int, w: int, coarse: int = 7) -> np.ndarray:
    """Smooth background texture: bilinear upsampling of a coarse random grid."""
    cells = rng.uniform(seed, image_index, 0xB6, np.arange(coarse * coarse, dtype=np.uint64))
    grid = cells.reshape(coarse, coarse)
    ys = np.linspace(0.0, coarse - 1.0, h)
    xs = np.linspace(0.0, coarse - 1.0, w)
    y0 = np.clip(ys.astype(int), 0, coarse - 2)
    x0 = np.clip(xs.astype(int), 0, coarse - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x0 + 1] * fx
    bottom = grid[y0 + 1][:, x0] * (1 - fx) + grid[y0 + 1][:, x0 + 1] * fx
    return top * (1 - fy) + bottom * fy


def _shape_mask(family: str, h: int, w: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    dist = np.sqrt(dy**2 + dx**2)
    if family == "disc":
        return dist <= radius
    if family == "square":
        return np.maximum(np.abs(dy), np.abs(dx)) <= radius
    if family == "cross":
        arm = radius / 3.0
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | (
            (np.abs(dx) <= arm) & (np.abs(dy) <= radius)
        )
    if family == "rings":
        return ((dist >= 0.55 * radius) & (dist <= radius)) | (dist <= 0.25 * radius)
    if family.startswith("stripes"):
        angle = np.deg2rad(float(family.split("_")[1]))
        coord = np.cos(angle) * dx + np.sin(angle) * dy
        period = max(4.0, radius / 2.0)
        in_box = np.maximum(np.abs(dy), np.abs(dx)) <= radius
        return in_box & (np.mod(coord, period) < period / 2.0)
    raise ValueError(f"unknown family {family!r}")


def _marker_positions(height: int, width: int) -> list[tuple[int, int]]:
    """Fixed bright 2x2 calibration markers shared by every image."""
    m = 3
    return [
        (m, m),
        (m, width - m - 2),
        (height - m - 2, m),
        (height - m - 2, width - m - 2),
        (m, width // 2 - 1),
        (height - m - 2, width // 2 - 1),
    ]


def generate_synthetic_dataset(
    count: int, height: int, width: int, classes: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic labeled images: one shape family per class on a
    textured background with bright calibration markers.

    Class k draws its foreground intensity from a band increasing in k, so
    the 2-class variant is separable by a plain pixel-mean threshold while
    higher class counts still require shape information. Six fixed-position
    markers guarantee every image has bright, high-frequency content for the
    distortion bank to act on; their positions never vary, so they stay
    reconstructable from heavily distorted inputs. Returns
    (u8 images (N,1,H,W), u8 labels).
    """
    if not 2 <= classes <= 8:
        raise ValueError(f"classes must be in 2..8, got {classes}")
    images = np.zeros((count, 1, height, width), dtype=np.uint8)
    labels = (np.arange(count) % classes).astype(np.uint8)
    markers = _marker_positions(height, width)
    for i in range(count):
        k = int(labels[i])
        img = 0.05 + 0.30 * _bilinear_field(seed, i, height, width)

        # foreground shape: family fixed by class, geometry jittered per image
        jitter = rng.uniform(seed, i, 0x51, np.arange(4, dtype=np.uint64))
        cy = height / 2.0 + (jitter[0] - 0.5) * 0.3 * height
        cx = width / 2.0 + (jitter[1] - 0.5) * 0.3 * width
        radius = (0.30 + 0.12 * jitter[2]) * min(height, width)
        base = 0.35 + 0.55 * (k / (classes - 1))
        intensity = np.clip(base + (jitter[3] - 0.5) * 0.12, 0.0, 1.0)
        mask = _shape_mask(_SHAPE_FAMILIES[k % len(_SHAPE_FAMILIES)], height, width, cy, cx, radius)
        img[mask] = intensity

        for my, mx in markers:
            img[my : my + 2, mx : mx + 2] = 0.92

        images[i, 0] = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return images, labels


# ----------------------------------------------------------------------
# UORP checkpoint container
# ----------------------------------------------------------------------


def save_checkpoint(path, config: dict[str, str], tensors: dict[str, np.ndarray]) -> None:
    blob = "".join(f"{k}={config[k]}\n" for k in sorted(config)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, array in tensors.items():
            encoded = name.encode("utf-8")
            data = np.ascontiguousarray(array, dtype="<f4")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte 0")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, 8)
    offset = 12
    config: dict[str, str] = {}
    for line in raw[offset : offset + blob_len].decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            config[key] = value
    offset += blob_len
    tensors: dict[str, np.ndarray] = {}
    while offset < len(raw):
        try:
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            array = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape)
            offset += 4 * size
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: truncated tensor record at byte {offset}: {exc}") from None
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = array.copy()
    return config, tensors
