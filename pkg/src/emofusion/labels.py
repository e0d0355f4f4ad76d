"""Emotion classes and the global argmax rule."""
import numpy as np

CLASSES = ("positive", "neutral", "negative")
NUM_CLASSES = len(CLASSES)


def class_index(name):
    try:
        return CLASSES.index(name.lower())
    except ValueError:
        raise ValueError(f"unknown emotion class {name!r}") from None


def argmax(dist):
    """Index of the largest entry; ties go to the lowest index."""
    # np.argmax already returns the first maximal index
    return int(np.argmax(np.asarray(dist)))


def one_hot(labels, num_classes=NUM_CLASSES):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out
