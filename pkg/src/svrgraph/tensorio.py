"""Weight containers, model manifests and IDX datasets.

The tensor container is an 8-byte little-endian header length, a JSON
header ``{name: {"dtype", "shape", "data_offsets"}}`` and the raw
little-endian, row-major tensor bytes (the safetensors layout, so exports
from common frameworks load unchanged). The manifest describing the layer
graph lives in a separate JSON file.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DTYPES = {"F32": np.dtype("<f4"), "F64": np.dtype("<f8")}
ACTIVATIONS = ("relu", "identity")
HEADS = ("argmax", "none")
LAYER_KINDS = ("fc", "conv")


class FormatError(ValueError):
    """Malformed container, manifest or dataset file."""


class ShapeMismatchError(ValueError):
    """A tensor does not have the shape its manifest declares."""


@dataclass(frozen=True)
class Pooling:
    kind: str = "max"
    window: int = 2

    def __post_init__(self):
        if self.kind not in ("max", "avg"):
            raise FormatError(f"unknown pooling kind {self.kind!r}")
        if self.window < 1:
            raise FormatError("pooling window must be >= 1")


@dataclass(frozen=True)
class LayerSpec:
    """One linear map. ``spatial`` marks an fc layer fed by a flattened conv output."""

    name: str
    kind: str
    in_dim: int
    out_dim: int
    kernel: int | None = None
    pooling_after: Pooling | None = None
    spatial: int | None = None
    scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise FormatError(f"unknown layer kind {self.kind!r} for layer {self.name!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise FormatError(f"layer {self.name!r} must have positive dimensions")
        if self.kind == "fc":
            if self.kernel is not None or self.pooling_after is not None:
                raise FormatError(f"fc layer {self.name!r} cannot carry kernel or pooling fields")
            if self.spatial is not None and (self.spatial < 1 or self.in_dim % self.spatial):
                raise FormatError(f"fc layer {self.name!r}: spatial must divide in_dim")
        else:
            if self.kernel is None or self.kernel < 1:
                raise FormatError(f"conv layer {self.name!r} needs a kernel size >= 1")
            if self.spatial is not None:
                raise FormatError(f"conv layer {self.name!r} cannot declare spatial")
        if self.scale is not None and len(self.scale) != self.out_dim:
            raise FormatError(f"layer {self.name!r}: scale vector must have out_dim entries")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "fc":
            return (self.out_dim, self.in_dim)
        return (self.out_dim, self.in_dim, self.kernel, self.kernel)

    @property
    def channels_in(self) -> int:
        """Feature/channel count shared with the previous layer."""
        if self.kind == "fc" and self.spatial:
            return self.in_dim // self.spatial
        return self.in_dim

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}
        if self.kernel is not None:
            d["kernel"] = self.kernel
        if self.pooling_after is not None:
            d["pooling_after"] = {"kind": self.pooling_after.kind, "window": self.pooling_after.window}
        if self.spatial is not None:
            d["spatial"] = self.spatial
        if self.scale is not None:
            d["scale"] = list(self.scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        try:
            pooling = d.get("pooling_after")
            if pooling is not None:
                pooling = Pooling(**pooling) if isinstance(pooling, dict) else Pooling()
            scale = d.get("scale")
            return cls(
                name=str(d["name"]),
                kind=d["kind"],
                in_dim=int(d["in_dim"]),
                out_dim=int(d["out_dim"]),
                kernel=None if d.get("kernel") is None else int(d["kernel"]),
                pooling_after=pooling,
                spatial=None if d.get("spatial") is None else int(d["spatial"]),
                scale=None if scale is None else tuple(float(v) for v in scale),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"invalid layer entry {d!r}: {exc}") from exc


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer graph: ``head(A_n . act . ... . act . A_0)``."""

    layers: tuple[LayerSpec, ...]
    activation: str = "relu"
    head: str = "argmax"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise FormatError("a model needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise FormatError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise FormatError(f"unknown head {self.head!r}")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise FormatError("layer names must be unique")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.channels_in:
                raise ShapeMismatchError(
                    f"layer {nxt.name!r} expects {nxt.channels_in} inputs but {prev.name!r} produces {prev.out_dim}"
                )
            if nxt.kind == "fc" and prev.kind == "conv" and not nxt.spatial:
                raise FormatError(f"fc layer {nxt.name!r} after a conv layer must declare 'spatial'")

    def __len__(self) -> int:
        return len(self.layers)

    @classmethod
    def mlp(cls, widths, activation: str = "relu", head: str = "argmax") -> "ModelSpec":
        """Bias-free fc stack from a width list such as ``[784, 40, 40, 40, 10]``."""
        widths = list(widths)
        layers = [
            LayerSpec(f"fc{i}", "fc", int(a), int(b)) for i, (a, b) in enumerate(zip(widths, widths[1:]))
        ]
        return cls(tuple(layers), activation, head)

    def to_dict(self) -> dict:
        return {"layers": [layer.to_dict() for layer in self.layers], "activation": self.activation, "head": self.head}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        if not isinstance(d, dict) or "layers" not in d:
            raise FormatError("manifest must be an object with a 'layers' list")
        layers = tuple(LayerSpec.from_dict(x) for x in d["layers"])
        return cls(layers, d.get("activation", "relu"), d.get("head", "argmax"))


@dataclass
class WeightStore:
    """Layer name -> float64 weight tensor."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value) -> None:
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self.tensors.items()})

    def for_spec(self, spec: ModelSpec) -> list[np.ndarray]:
        return [self.tensors[layer.name] for layer in spec.layers]


def validate_store(spec: ModelSpec, store: WeightStore) -> None:
    for layer in spec.layers:
        if layer.name not in store:
            raise ShapeMismatchError(f"no tensor for layer {layer.name!r}")
        w = store[layer.name]
        if tuple(w.shape) != layer.weight_shape:
            raise ShapeMismatchError(
                f"layer {layer.name!r}: declared shape {layer.weight_shape}, tensor has {tuple(w.shape)}"
            )
        if not np.all(np.isfinite(w)):
            raise FormatError(f"layer {layer.name!r} contains non-finite values")


def fold_scales(spec: ModelSpec, store: WeightStore) -> WeightStore:
    """Multiply each layer's optional per-output scale vector into its weights."""
    out = store.copy()
    for layer in spec.layers:
        if layer.scale is not None:
            s = np.asarray(layer.scale).reshape((-1,) + (1,) * (out[layer.name].ndim - 1))
            out[layer.name] = out[layer.name] * s
    return out


# -- tensor container ------------------------------------------------------------


def write_tensors(path, tensors: dict[str, np.ndarray], dtype: str = "F64", metadata: dict | None = None) -> None:
    if dtype not in DTYPES:
        raise FormatError(f"unsupported dtype token {dtype!r}")
    np_dtype = DTYPES[dtype]
    header: dict = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=np_dtype).tobytes()
        header[name] = {"dtype": dtype, "shape": list(np.shape(arr)), "data_offsets": [offset, offset + len(data)]}
        blobs.append(data)
        offset += len(data)
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    raw += b" " * (-len(raw) % 8)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read every tensor of a container, converted to float64."""
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise FormatError("container shorter than its 8-byte header length")
    (n,) = struct.unpack("<Q", buf[:8])
    if 8 + n > len(buf):
        raise FormatError("header length exceeds file size")
    try:
        header = json.loads(buf[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed container header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("container header must be a JSON object")
    data = memoryview(buf)[8 + n :]
    out = {}
    for name, info in header.items():
        if name == "__metadata__":
            continue
        try:
            dt = DTYPES[info["dtype"]]
            shape = tuple(int(s) for s in info["shape"])
            begin, end = (int(v) for v in info["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad header entry for {name!r}") from exc
        count = int(np.prod(shape, dtype=np.int64))
        if not 0 <= begin <= end <= len(data) or end - begin != count * dt.itemsize:
            raise FormatError(f"tensor {name!r}: offsets [{begin}, {end}) inconsistent with shape/data")
        out[name] = np.frombuffer(data[begin:end], dtype=dt).reshape(shape).astype(np.float64)
    return out


def load_model(container_path, manifest_path, fold_scale: bool = False) -> tuple[ModelSpec, WeightStore]:
    """Load a (ModelSpec, WeightStore) pair and validate shapes against the manifest."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    spec = ModelSpec.from_dict(manifest)
    tensors = read_tensors(container_path)
    store = WeightStore({layer.name: tensors[layer.name] for layer in spec.layers if layer.name in tensors})
    validate_store(spec, store)
    return spec, (fold_scales(spec, store) if fold_scale else store)


def save_model(spec: ModelSpec, store: WeightStore, container_path, manifest_path, dtype: str = "F64") -> None:
    validate_store(spec, store)
    write_tensors(container_path, {layer.name: store[layer.name] for layer in spec.layers}, dtype=dtype)
    Path(manifest_path).write_text(json.dumps(spec.to_dict(), indent=2))


# -- IDX ----------------------------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _read_maybe_gz(path) -> bytes:
    raw = Path(path).read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def read_idx_images(path) -> np.ndarray:
    buf = _read_maybe_gz(path)
    if len(buf) < 16:
        raise FormatError("IDX image file truncated")
    magic, count, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES:
        raise FormatError(f"bad IDX image magic 0x{magic:08x}")
    if len(buf) < 16 + count * rows * cols:
        raise FormatError("IDX image file truncated")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = _read_maybe_gz(path)
    if len(buf) < 8:
        raise FormatError("IDX label file truncated")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS:
        raise FormatError(f"bad IDX label magic 0x{magic:08x}")
    if len(buf) < 8 + count:
        raise FormatError("IDX label file truncated")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8).copy()


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images scaled to [0, 1] (count x rows x cols) and integer labels."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS, labels.shape[0]))
        fh.write(labels.tobytes())


DATASET_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_idx_pair(directory, split: str) -> tuple[Path, Path] | None:
    """Locate the standard MNIST-style file pair (plain or .gz) for ``split``."""
    directory = Path(directory)
    names = DATASET_FILES[split]
    found = []
    for stem in names:
        for candidate in (directory / stem, directory / f"{stem}.gz"):
            if candidate.exists():
                found.append(candidate)
                break
        else:
            return None
    return found[0], found[1]


def load_idx_dir(directory) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(train_x, train_y, test_x, test_y) from a directory holding the four IDX files."""
    pairs = [find_idx_pair(directory, split) for split in ("train", "test")]
    if any(p is None for p in pairs):
        raise FileNotFoundError(f"IDX train/test files not found under {directory}")
    (xtr, ytr), (xte, yte) = (load_idx(*p) for p in pairs)
    return xtr, ytr, xte, yte
