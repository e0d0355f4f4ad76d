"""Dataset layout, sidecar annotations, images and model bundle files.

Dataset layout::

    root/<split>/<positive|neutral|negative>/<image_id>.<ppm|png|jpg>
                                            /<image_id>.faces    JSON list of {"x","y","w","h"}
                                            /<image_id>.labels   one descriptor per line

Model bundle layout (all integers little-endian)::

    b"EMOFUSN\\0" | u16 version | u8 endianness tag ('<') |
    repeated sections: u32 name length, name, u64 payload length, payload |
    32-byte SHA-256 of everything before it

The "meta" section is UTF-8 JSON; every array is its own ``array:<key>``
section holding an ``.npy`` payload, so floats round-trip bit for bit.
"""
import hashlib
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError, IntegrityError, VersionError
from .labels import CLASSES, NUM_CLASSES

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".png", ".jpg", ".jpeg")
FACES_SUFFIX = ".faces"
LABELS_SUFFIX = ".labels"

MAGIC = b"EMOFUSN\0"
FORMAT_VERSION = 1
_DIGEST = 32


# --------------------------------------------------------------------------
# images and sidecars
# --------------------------------------------------------------------------

def read_image(path):
    """RGB image as a float64 (H, W, 3) array of 0..255 values."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def write_image(path, pixels):
    arr = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def read_faces(path):
    records = json.loads(Path(path).read_text())
    return [(int(r["x"]), int(r["y"]), int(r["w"]), int(r["h"])) for r in records]


def write_faces(path, boxes):
    records = [dict(zip("xywh", map(int, box))) for box in boxes]
    Path(path).write_text(json.dumps(records) + "\n")


def normalize_descriptor(text):
    return " ".join(text.strip().lower().split())


def read_descriptors(path):
    lines = (normalize_descriptor(line) for line in Path(path).read_text().splitlines())
    return frozenset(line for line in lines if line)


def write_descriptors(path, descriptors):
    Path(path).write_text("".join(f"{d}\n" for d in sorted(descriptors)))


# --------------------------------------------------------------------------
# dataset manifests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleRecord:
    image_id: str
    image_path: Path
    face_boxes: tuple = ()
    descriptors: frozenset = frozenset()
    label: int = None

    def __post_init__(self):
        if self.label is not None and self.label not in range(NUM_CLASSES):
            raise DataError(f"{self.image_id}: label {self.label} outside 0..{NUM_CLASSES - 1}")

    def sidecar(self, suffix):
        return Path(self.image_path).with_suffix(suffix)


@dataclass
class DatasetManifest:
    split: str
    records: list
    skipped: int = 0
    missing_faces: int = 0
    missing_labels: int = 0

    def __post_init__(self):
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate image ids in split {self.split!r}")

    @property
    def class_counts(self):
        counts = [0] * NUM_CLASSES
        for r in self.records:
            if r.label is not None:
                counts[r.label] += 1
        return tuple(counts)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _readable(path):
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (OSError, UnidentifiedImageError) as exc:
        log.warning("skipping unreadable image %s: %s", path, exc)
        return False


def load_dataset(root, split):
    """Scan ``root/split/<class>/`` into a manifest ordered by image id."""
    base = Path(root) / split
    records = []
    skipped = missing_faces = missing_labels = 0
    for label, name in enumerate(CLASSES):
        class_dir = base / name
        if not class_dir.is_dir():
            continue
        for path in sorted(class_dir.iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            if not _readable(path):
                skipped += 1
                continue
            faces_path = path.with_suffix(FACES_SUFFIX)
            labels_path = path.with_suffix(LABELS_SUFFIX)
            boxes = ()
            if faces_path.exists():
                boxes = tuple(read_faces(faces_path))
            else:
                missing_faces += 1
            descriptors = frozenset()
            if labels_path.exists():
                descriptors = read_descriptors(labels_path)
            else:
                missing_labels += 1
            records.append(SampleRecord(path.stem, path, boxes, descriptors, label))
    if not records:
        raise DataError(f"split {split!r} under {root} contains no readable images")
    if missing_faces or missing_labels:
        log.warning("split %s: %d images without .faces, %d without .labels",
                    split, missing_faces, missing_labels)
    records.sort(key=lambda r: r.image_id)
    return DatasetManifest(split, records, skipped, missing_faces, missing_labels)


def record_from_image(path, label=None):
    """A record for a single image with whatever sidecars sit beside it."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image {path} does not exist")
    faces_path = path.with_suffix(FACES_SUFFIX)
    labels_path = path.with_suffix(LABELS_SUFFIX)
    boxes = tuple(read_faces(faces_path)) if faces_path.exists() else ()
    descriptors = read_descriptors(labels_path) if labels_path.exists() else frozenset()
    return SampleRecord(path.stem, path, boxes, descriptors, label)


# --------------------------------------------------------------------------
# key=value configuration
# --------------------------------------------------------------------------

def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    config = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        config[key.replace("-", "_")] = value
    return config


def write_config(path, config):
    Path(path).write_text("".join(f"{k} = {config[k]}\n" for k in sorted(config)))


# --------------------------------------------------------------------------
# model bundles
# --------------------------------------------------------------------------

@dataclass
class ModelBundle:
    """Everything needed for inference; any component may be absent.

    ``cnn_params`` maps names like ``"conv1.w"`` to arrays, ``layers`` is a
    list of layer dicts and ``optimizer`` the training configuration dict.
    The Bayes part is the vocabulary list, the (D, 3) table of
    P(descriptor present | class), the class prior and the optional 3x3
    CNN evidence table.
    """

    cnn_params: dict = None
    layers: list = None
    input_shape: tuple = None
    optimizer: dict = None
    vocabulary: list = None
    cpt: np.ndarray = None
    prior: np.ndarray = None
    cnn_cpt: np.ndarray = None
    smoothing: float = None
    presence_only: bool = False
    extra: dict = field(default_factory=dict)

    _ARRAYS = ("cpt", "prior", "cnn_cpt")

    def to_meta(self):
        return {
            "layers": self.layers,
            "input_shape": list(self.input_shape) if self.input_shape is not None else None,
            "optimizer": self.optimizer,
            "vocabulary": self.vocabulary,
            "smoothing": self.smoothing,
            "presence_only": self.presence_only,
            "cnn_param_names": sorted(self.cnn_params) if self.cnn_params is not None else None,
            "extra": self.extra,
        }


def _section(name, payload):
    key = name.encode()
    return struct.pack("<I", len(key)) + key + struct.pack("<Q", len(payload)) + payload


def _npy_bytes(array):
    buf = io.BytesIO()
    arr = np.asarray(array)
    np.save(buf, arr.astype(arr.dtype.newbyteorder("<")), allow_pickle=False)
    return buf.getvalue()


def dump_model(bundle, version=FORMAT_VERSION):
    parts = [MAGIC, struct.pack("<HB", version, ord("<"))]
    meta = json.dumps(bundle.to_meta(), sort_keys=True).encode()
    parts.append(_section("meta", meta))
    for name in ModelBundle._ARRAYS:
        value = getattr(bundle, name)
        if value is not None:
            parts.append(_section("array:" + name, _npy_bytes(value)))
    for name in sorted(bundle.cnn_params or {}):
        parts.append(_section("param:" + name, _npy_bytes(bundle.cnn_params[name])))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_model(bundle, path):
    data = dump_model(bundle)
    Path(path).write_bytes(data)
    return len(data)


def parse_model(data):
    header = len(MAGIC) + 3
    if len(data) < header + _DIGEST:
        raise IntegrityError("model file is truncated")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("model file checksum mismatch (corrupt or truncated)")
    if body[:len(MAGIC)] != MAGIC:
        raise IntegrityError("not a model bundle (bad magic)")
    version, endian = struct.unpack_from("<HB", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionError(f"model format version {version} is not supported (reader is v{FORMAT_VERSION})")
    if endian != ord("<"):
        raise IntegrityError(f"unsupported endianness tag {chr(endian)!r}")
    pos, sections = header, {}
    while pos < len(body):
        try:
            (n,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4:pos + 4 + n].decode()
            (size,) = struct.unpack_from("<Q", body, pos + 4 + n)
        except (struct.error, UnicodeDecodeError) as exc:
            raise IntegrityError(f"malformed section at byte {pos}") from exc
        start = pos + 12 + n
        if start + size > len(body):
            raise IntegrityError(f"section {name!r} runs past the end of the file")
        sections[name] = body[start:start + size]
        pos = start + size
    meta = json.loads(sections.pop("meta"))

    def array(payload):
        return np.load(io.BytesIO(payload), allow_pickle=False)

    params = None
    if meta["cnn_param_names"] is not None:
        params = {name: array(sections["param:" + name]) for name in meta["cnn_param_names"]}
    arrays = {name: array(sections["array:" + name]) if "array:" + name in sections else None
              for name in ModelBundle._ARRAYS}
    return ModelBundle(
        cnn_params=params,
        layers=meta["layers"],
        input_shape=tuple(meta["input_shape"]) if meta["input_shape"] is not None else None,
        optimizer=meta["optimizer"],
        vocabulary=meta["vocabulary"],
        smoothing=meta["smoothing"],
        presence_only=meta["presence_only"],
        extra=meta["extra"],
        **arrays,
    )


def load_model(path):
    return parse_model(Path(path).read_bytes())


def bundles_equal(a, b):
    """Bit-exact equality of two bundles, arrays included."""
    if a.to_meta() != b.to_meta():
        return False
    for name in ModelBundle._ARRAYS:
        x, y = getattr(a, name), getattr(b, name)
        if (x is None) != (y is None):
            return False
        if x is not None and (x.dtype != y.dtype or x.shape != y.shape or x.tobytes() != y.tobytes()):
            return False
    for name in a.cnn_params or {}:
        x, y = a.cnn_params[name], b.cnn_params[name]
        if x.dtype != y.dtype or x.shape != y.shape or x.tobytes() != y.tobytes():
            return False
    return True
