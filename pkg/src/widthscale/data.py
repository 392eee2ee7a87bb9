"""Desk-scale datasets: synthetic generators and a little-endian tensor file.

Dataset file layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"WSDS"
    4       2     format version (uint16) = 1
    6       1     dtype code (uint8): 1 = float32, 2 = float64
    7       1     ndim of one sample (uint8)
    8       4     num_classes (uint32)
    12      4     n_train (uint32)
    16      4     n_val (uint32)
    20      4*nd  sample shape (uint32 each)
    ...           x_train  (n_train * prod(shape) values, C order)
    ...           y_train  (n_train int32)
    ...           x_val    (n_val * prod(shape) values)
    ...           y_val    (n_val int32)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError, SchemaError

MAGIC = b"WSDS"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


@dataclass(frozen=True, eq=False)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int

    def __post_init__(self):
        for name in ("y_train", "y_val"):
            y = getattr(self, name)
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise DomainError(f"{name} labels must lie in [0, {self.num_classes})")
        if len(self.x_train) != len(self.y_train) or len(self.x_val) != len(self.y_val):
            raise DomainError("features and labels differ in length")
        if self.x_train.shape[1:] != self.x_val.shape[1:]:
            raise DomainError("train and validation samples differ in shape")

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.x_train.shape[1:])

    def train_split(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x_train, self.y_train

    def val_split(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x_val, self.y_val


def make_blobs(n_train=2000, n_val=500, n_features=32, num_classes=8, spread=1.0,
               separation=0.8, seed=0) -> Dataset:
    """Isotropic Gaussian blobs around random class centers."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(num_classes, n_features)) * separation / math.sqrt(2)

    def draw(n):
        y = np.arange(n) % num_classes
        rng.shuffle(y)
        x = centers[y] + rng.normal(scale=spread, size=(n, n_features))
        return x, y.astype(np.int64)

    xt, yt = draw(n_train)
    xv, yv = draw(n_val)
    return Dataset(xt, yt, xv, yv, num_classes)


def make_textures(n_train=1000, n_val=250, size=16, channels=3, num_classes=4, noise=0.5,
                  seed=0) -> Dataset:
    """Procedural oriented gratings; class c has orientation pi * c / num_classes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    colors = rng.uniform(0.2, 1.0, size=(num_classes, channels))

    def draw(n):
        y = np.arange(n) % num_classes
        rng.shuffle(y)
        theta = np.pi * y / num_classes + rng.normal(scale=0.05, size=n)
        freq = rng.uniform(2.0, 4.0, size=n) * 2 * np.pi
        phase = rng.uniform(0, 2 * np.pi, size=n)
        proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
        wave = np.sin(freq[:, None, None] * proj + phase[:, None, None])
        x = colors[y][:, :, None, None] * wave[:, None]
        x = x + rng.normal(scale=noise, size=x.shape)
        return x, y.astype(np.int64)

    xt, yt = draw(n_train)
    xv, yv = draw(n_val)
    return Dataset(xt, yt, xv, yv, num_classes)


def save_dataset(data: Dataset, path: str | Path, dtype="float64") -> None:
    dt = np.dtype(dtype)
    if dt not in _CODES:
        raise DomainError(f"unsupported dtype {dtype}")
    shape = data.sample_shape
    header = struct.pack("<4sHBBIII", MAGIC, FORMAT_VERSION, _CODES[dt], len(shape),
                         data.num_classes, len(data.x_train), len(data.x_val))
    header += struct.pack(f"<{len(shape)}I", *shape)
    le = dt.newbyteorder("<")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(data.x_train, dtype=le).tobytes())
        f.write(np.ascontiguousarray(data.y_train, dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(data.x_val, dtype=le).tobytes())
        f.write(np.ascontiguousarray(data.y_val, dtype="<i4").tobytes())


def load_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    fixed = struct.calcsize("<4sHBBIII")
    if len(raw) < fixed:
        raise ParseError("dataset file truncated in header")
    magic, version, code, ndim, num_classes, n_train, n_val = struct.unpack_from("<4sHBBIII", raw)
    if magic != MAGIC:
        raise SchemaError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported dataset format version {version}")
    if code not in _DTYPES:
        raise ParseError(f"unknown dtype code {code}")
    offset = fixed
    shape = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    dt = _DTYPES[code]
    per = math.prod(shape)
    need = offset + (n_train + n_val) * (per * dt.itemsize + 4)
    if len(raw) != need:
        raise ParseError(f"dataset file has {len(raw)} bytes, header implies {need}")

    def take(count, dtype):
        nonlocal offset
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += count * np.dtype(dtype).itemsize
        return arr

    xt = take(n_train * per, dt).reshape((n_train, *shape)).astype(np.float64)
    yt = take(n_train, "<i4").astype(np.int64)
    xv = take(n_val * per, dt).reshape((n_val, *shape)).astype(np.float64)
    yv = take(n_val, "<i4").astype(np.int64)
    return Dataset(xt, yt, xv, yv, num_classes)


def synthetic_for(arch, seed=0, **kwargs) -> Dataset:
    """Default synthetic dataset matching an architecture's input."""
    from .arch import Family

    if arch.family is Family.DENSE:
        return make_blobs(n_features=arch.input_shape[0], num_classes=arch.num_classes, seed=seed, **kwargs)
    c, h, w = arch.input_shape
    if h != w:
        raise DomainError("texture generator makes square images")
    return make_textures(size=h, channels=c, num_classes=arch.num_classes, seed=seed, **kwargs)
