"""Bottom-up path: face crops, their preprocessing and per-image aggregation."""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data_io import FACES_SUFFIX, read_faces, read_image
from .errors import EmptyFaceError, NoFacesError
from .labels import argmax

log = logging.getLogger(__name__)

CROP_SIZE = 64


@dataclass(frozen=True)
class FaceCrop:
    pixels: np.ndarray
    source_box: tuple
    clamped: bool = False


@dataclass(frozen=True)
class FaceBatch:
    faces: tuple = ()

    @property
    def K(self):
        return len(self.faces)

    def stack(self):
        if not self.faces:
            return np.empty((0, CROP_SIZE, CROP_SIZE, 3))
        return np.stack([f.pixels for f in self.faces])


def clamp_box(box, height, width):
    x, y, w, h = (int(v) for v in box)
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, width), min(y + h, height)
    return x0, y0, x1 - x0, y1 - y0


def min_max(pixels):
    """Rescale to [0, 1] using the array's own extremes; constant input -> zeros."""
    lo, hi = pixels.min(), pixels.max()
    if hi <= lo:
        return np.zeros_like(pixels, dtype=np.float64)
    return (pixels - lo) / (hi - lo)


def resize_bilinear(pixels, size=CROP_SIZE):
    h, w = pixels.shape[:2]
    if (h, w) == (size, size):
        return np.array(pixels, dtype=np.float64)
    return ndimage.zoom(np.asarray(pixels, dtype=np.float64), (size / h, size / w, 1),
                        order=1, grid_mode=True, mode="nearest")


def preprocess(image, box, size=CROP_SIZE):
    """Crop ``box = (x, y, w, h)`` from ``image``, resize and min-max normalize.

    Boxes reaching outside the image are clamped (logged); a box with no area
    left raises :class:`EmptyFaceError`.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    height, width = image.shape[:2]
    clamped = clamp_box(box, height, width)
    if clamped[2] < 1 or clamped[3] < 1:
        raise EmptyFaceError(f"face box {tuple(box)} is empty inside a {width}x{height} image")
    was_clamped = clamped != tuple(int(v) for v in box)
    if was_clamped:
        log.warning("face box %s clamped to %s", tuple(box), clamped)
    x, y, w, h = clamped
    crop = resize_bilinear(image[y:y + h, x:x + w], size)
    return FaceCrop(min_max(crop), clamped, was_clamped)


def aggregate_faces(outputs):
    """Mean of per-face class distributions and its argmax.

    ``outputs`` holds one softmax output per face, shape (K, 3).
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.ndim != 2 or outputs.shape[0] == 0:
        raise NoFacesError("no face outputs to aggregate")
    mean = outputs.mean(axis=0)
    return argmax(mean), mean


class RecordFaceProvider:
    """Boxes already attached to a record (read by ``load_dataset``)."""

    def boxes(self, record):
        return list(record.face_boxes)


class SidecarFaceProvider:
    """Boxes read from ``<image_id>.faces`` in ``directory`` or beside the image."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else None

    def boxes(self, record):
        if self.directory is not None:
            path = self.directory / (record.image_id + FACES_SUFFIX)
        else:
            path = Path(record.image_path).with_suffix(FACES_SUFFIX)
        if not path.exists():
            log.warning("no face sidecar for %s", record.image_id)
            return None
        return read_faces(path)


def face_source_load(record, provider=None, image=None):
    """FaceBatch for a record, in the order the provider lists the boxes."""
    provider = provider or RecordFaceProvider()
    boxes = provider.boxes(record)
    if not boxes:
        return FaceBatch()
    if image is None:
        image = read_image(record.image_path)
    faces = []
    for box in boxes:
        try:
            faces.append(preprocess(image, box))
        except EmptyFaceError as exc:
            log.warning("%s: %s", record.image_id, exc)
    return FaceBatch(tuple(faces))
