"""Synthetic faces and group-photo corpora for tests and demos.

Each emotion has a face template that differs in mouth shape, brow angle and
tint.  A corpus is a directory tree in the ``load_dataset`` layout whose
images hold several such faces; with probability ``label_noise`` a face shows
a template of another class.  Scene descriptors come from per-class pools and
match the image's class with probability ``descriptor_fidelity``.
"""
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data_io import write_descriptors, write_faces, write_image
from .labels import CLASSES, NUM_CLASSES

DESCRIPTOR_POOLS = (
    ("party", "wedding", "smile", "festival", "friendship", "celebration",
     "fun", "dance", "birthday", "holiday"),
    ("meeting", "conference", "convocation", "classroom", "office",
     "seminar", "lecture", "audience", "presentation", "institution"),
    ("funeral", "protest", "riot", "police", "mourning", "demonstration",
     "conflict", "military", "disaster", "strike"),
)
SHARED_DESCRIPTORS = ("people", "group", "event", "crowd", "team", "social")

_TINTS = np.array([[1.0, 0.85, 0.55], [0.8, 0.8, 0.8], [0.55, 0.7, 1.0]])


def face_template(label, rng, size=64, noise=8.0):
    """One 0..255 RGB face of class ``label`` with random jitter."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size / 2 + rng.uniform(-2, 2)
    cx = size / 2 + rng.uniform(-2, 2)
    r = size * rng.uniform(0.40, 0.46)
    face = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
    img = np.full((size, size, 3), 40.0) + rng.uniform(-10, 10)
    skin = 200.0 * _TINTS[label] * rng.uniform(0.9, 1.1)
    img[face] = skin

    dark = np.zeros((size, size), dtype=bool)
    for side in (-1, 1):
        ex, ey = cx + side * r * 0.38, cy - r * 0.25
        dark |= ((yy - ey) ** 2 + (xx - ex) ** 2) < (r * 0.11) ** 2
        # brows: raised outer ends for positive, flat for neutral, inner raised for negative
        slope = (-0.35, 0.0, 0.35)[label] * side
        bx = xx - ex
        brow_y = ey - r * 0.28 + slope * bx
        dark |= (np.abs(yy - brow_y) < r * 0.05) & (np.abs(bx) < r * 0.2)
    mx = xx - cx
    curve = (0.9, 0.0, -0.9)[label]
    mouth_y = cy + r * 0.45 + curve * (mx / r) ** 2 * r - curve * 0.15 * r
    dark |= (np.abs(yy - mouth_y) < r * 0.07) & (np.abs(mx) < r * 0.5)
    img[dark & face] = 25.0
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0, 255)


def face_set(per_class, seed=0, size=64):
    """Preprocessed-style faces in [0, 1] with labels, ``per_class`` of each class."""
    rng = np.random.default_rng(seed)
    faces, labels = [], []
    for label in range(NUM_CLASSES):
        for _ in range(per_class):
            img = face_template(label, rng, size)
            lo, hi = img.min(), img.max()
            faces.append((img - lo) / (hi - lo))
            labels.append(label)
    return np.stack(faces), np.array(labels)


def _descriptors(label, rng, count, fidelity):
    chosen = set()
    for _ in range(count):
        c = label if rng.random() < fidelity else rng.choice(
            [k for k in range(NUM_CLASSES) if k != label])
        chosen.add(rng.choice(DESCRIPTOR_POOLS[c]))
    chosen.update(rng.choice(SHARED_DESCRIPTORS, size=rng.integers(1, 3), replace=False))
    return {str(d) for d in chosen}


def scene(label, rng, faces_per_image=3, label_noise=0.2, image_size=160):
    """A group image, its face boxes and the class shown by each face."""
    img = np.empty((image_size, image_size, 3))
    base = rng.uniform(60, 200, size=3)
    ramp = np.linspace(-30, 30, image_size)[:, None, None]
    img[:] = base + ramp * rng.uniform(-1, 1, size=3)
    img += rng.normal(0, 6, img.shape)
    boxes, shown = [], []
    cell = image_size // 2
    slots = rng.permutation(4)[:faces_per_image]
    for slot in slots:
        size = int(rng.integers(40, 60))
        x0 = (slot % 2) * cell + int(rng.integers(0, cell - size + 1))
        y0 = (slot // 2) * cell + int(rng.integers(0, cell - size + 1))
        face_label = label
        if rng.random() < label_noise:
            face_label = int(rng.choice([k for k in range(NUM_CLASSES) if k != label]))
        face = face_template(face_label, rng)
        img[y0:y0 + size, x0:x0 + size] = ndimage.zoom(
            face, (size / 64, size / 64, 1), order=1, grid_mode=True, mode="nearest")
        boxes.append((x0, y0, size, size))
        shown.append(face_label)
    return np.clip(img, 0, 255), boxes, shown


def write_corpus(root, sizes=None, seed=0, faces_per_image=3, label_noise=0.2,
                 descriptor_fidelity=0.9, descriptors_per_image=3, no_face_fraction=0.0):
    """Write a labelled corpus under ``root`` in the ``load_dataset`` layout.

    ``sizes`` maps split name to image count, split evenly over classes.
    """
    sizes = sizes or {"train": 150, "val": 60, "test": 90}
    rng = np.random.default_rng(seed)
    root = Path(root)
    for split, count in sizes.items():
        for i in range(count):
            label = i % NUM_CLASSES
            folder = root / split / CLASSES[label]
            folder.mkdir(parents=True, exist_ok=True)
            k = 0 if rng.random() < no_face_fraction else faces_per_image
            img, boxes, _ = scene(label, rng, k, label_noise)
            stem = folder / f"{split}_{i:04d}"
            write_image(stem.with_suffix(".ppm"), img)
            write_faces(stem.with_suffix(".faces"), boxes)
            write_descriptors(stem.with_suffix(".labels"),
                              _descriptors(label, rng, descriptors_per_image, descriptor_fidelity))
    return root
