"""Binary interchange format and registry for per-image feature matrices.

The ``DFV1`` layout is the contract between this package and external
activation exporters. Byte layout, little-endian throughout, no padding:

    offset  size          field
    0       4             magic ``DFV1``
    4       2             u16 version (currently 1)
    6       1             u8 model-name length ``n``
    7       n             model name, UTF-8
    7+n     4             u32 layer id
    11+n    4             u32 feature dimension ``dim``
    15+n    8             u64 row count ``count``
    23+n    8*count       u64 row ids, strictly increasing
    ...     4*count*dim   f32 feature rows, row-major

Row ids tie feature rows to dataset image ids so that several feature
streams can be joined per image without ambiguity.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptIndexError,
    DimensionError,
    FormatError,
    RegistryError,
    TruncationError,
)

MAGIC = b"DFV1"
VERSION = 1
_HEAD = struct.Struct("<4sHB")
_TAIL = struct.Struct("<IIQ")

#: Feature dimensions of the known (model, layer) activation taps.
KNOWN_LAYER_DIMS = {
    ("alexnet", 4): 18432,
    ("alexnet", 5): 4096,
    ("alexnet", 7): 4096,
    ("vgg16", 5): 18432,
    ("vgg16", 6): 4096,
    ("vgg16", 7): 4096,
}

#: Reduction targets applied when a known raw dimension is PCA-compressed.
PCA_TARGETS = {18432: 2500, 4096: 1000}


@dataclass
class FeatureFile:
    """One feature matrix plus the provenance needed to join it by image."""

    model_name: str
    layer_id: int
    ids: np.ndarray  # (count,) u64, strictly increasing
    rows: np.ndarray  # (count, dim) f32

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.uint64)
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2:
            raise DimensionError(f"rows must be 2-D, got shape {self.rows.shape}")
        if self.ids.shape != (self.rows.shape[0],):
            raise DimensionError(
                f"{self.ids.shape[0]} ids for {self.rows.shape[0]} rows"
            )
        if self.ids.size > 1 and not np.all(self.ids[1:] > self.ids[:-1]):
            raise CorruptIndexError("row ids must be strictly increasing")
        if len(self.model_name.encode("utf-8")) > 255:
            raise FormatError("model name longer than 255 bytes")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureFile):
            return NotImplemented
        return (
            self.model_name == other.model_name
            and self.layer_id == other.layer_id
            and np.array_equal(self.ids, other.ids)
            and self.rows.shape == other.rows.shape
            and np.array_equal(
                self.rows.view(np.uint32), other.rows.view(np.uint32)
            )
        )


def write_features(ff: FeatureFile, path) -> None:
    """Serialize ``ff`` at ``path`` in the DFV1 layout."""
    name = ff.model_name.encode("utf-8")
    blob = bytearray()
    blob += _HEAD.pack(MAGIC, VERSION, len(name))
    blob += name
    blob += _TAIL.pack(ff.layer_id, ff.dim, ff.count)
    blob += ff.ids.astype("<u8").tobytes()
    blob += ff.rows.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def read_features(path) -> FeatureFile:
    """Parse a DFV1 file, validating magic, version, and size arithmetic."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEAD.size:
        raise TruncationError(f"{path}: {len(blob)} bytes is shorter than any header")
    magic, version, name_len = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    fixed_end = _HEAD.size + name_len + _TAIL.size
    if len(blob) < fixed_end:
        raise TruncationError(f"{path}: header truncated")
    try:
        name = blob[_HEAD.size : _HEAD.size + name_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: model name is not valid UTF-8") from exc
    layer_id, dim, count = _TAIL.unpack_from(blob, _HEAD.size + name_len)
    expected = fixed_end + 8 * count + 4 * count * dim
    if len(blob) != expected:
        raise TruncationError(
            f"{path}: {len(blob)} bytes, header arithmetic requires {expected}"
        )
    ids = np.frombuffer(blob, dtype="<u8", count=count, offset=fixed_end)
    if ids.size > 1 and not np.all(ids[1:] > ids[:-1]):
        raise CorruptIndexError(f"{path}: row ids are not strictly increasing")
    rows = np.frombuffer(
        blob, dtype="<f4", count=count * dim, offset=fixed_end + 8 * count
    ).reshape(count, dim)
    return FeatureFile(name, layer_id, ids.copy(), rows.copy())


@dataclass
class RegistryReport:
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class FeatureRegistry:
    """Maps (model, layer) to the on-disk feature files of both splits."""

    SPLITS = ("train", "test")

    def __init__(self):
        self._entries = {}

    def register(self, model_name: str, layer_id: int, split: str, path) -> None:
        if split not in self.SPLITS:
            raise RegistryError(f"unknown split '{split}'")
        self._entries.setdefault((model_name, layer_id), {})[split] = os.fspath(path)

    def entries(self):
        return dict(self._entries)

    def path(self, model_name: str, layer_id: int, split: str) -> str:
        entry = self._entries.get((model_name, layer_id))
        if entry is None or split not in entry:
            raise RegistryError(
                f"no registered features for ({model_name}, {layer_id}) split '{split}'"
            )
        return entry[split]

    def load(self, model_name: str, layer_id: int, split: str) -> FeatureFile:
        path = self.path(model_name, layer_id, split)
        if not os.path.exists(path):
            raise RegistryError(
                f"feature file missing for ({model_name}, {layer_id}) "
                f"split '{split}': {path}"
            )
        ff = read_features(path)
        if (ff.model_name, ff.layer_id) != (model_name, layer_id):
            raise RegistryError(
                f"{path} holds ({ff.model_name}, {ff.layer_id}), "
                f"registered as ({model_name}, {layer_id})"
            )
        return ff

    def scan_directory(self, root) -> "FeatureRegistry":
        """Register every ``<root>/<split>/*.dfv1`` file found on disk."""
        for split in self.SPLITS:
            split_dir = os.path.join(os.fspath(root), split)
            if not os.path.isdir(split_dir):
                continue
            for fname in sorted(os.listdir(split_dir)):
                if not fname.endswith(".dfv1"):
                    continue
                path = os.path.join(split_dir, fname)
                ff = read_features(path)
                self.register(ff.model_name, ff.layer_id, split, path)
        return self


_READ_ERRORS = (FormatError, TruncationError, CorruptIndexError, OSError)


def validate_registry(reg: FeatureRegistry) -> RegistryReport:
    """Check split consistency and the known-layer dimension table.

    Never raises: every problem becomes a line in the report so one pass
    surfaces all of them.
    """
    report = RegistryReport()
    for (model, layer), paths in sorted(reg.entries().items()):
        dims = {}
        for split, path in sorted(paths.items()):
            try:
                dims[split] = read_features(path).dim
            except _READ_ERRORS as exc:
                report.violations.append(f"({model}, {layer}) {split}: {exc}")
        if len(set(dims.values())) > 1:
            report.violations.append(
                f"({model}, {layer}): dim differs across splits {dims}"
            )
        known = KNOWN_LAYER_DIMS.get((model, layer))
        for split, dim in sorted(dims.items()):
            if known is None:
                report.notes.append(
                    f"({model}, {layer}) {split}: unregistered dimension {dim}"
                )
            elif dim != known:
                report.violations.append(
                    f"({model}, {layer}) {split}: dim {dim}, expected {known}"
                )
    return report
