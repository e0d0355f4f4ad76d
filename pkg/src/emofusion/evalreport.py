"""Accuracy and confusion matrices for the BN-only, CNN-only and fused classifiers."""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .bayes import count_descriptors
from .errors import ConfigError
from .labels import CLASSES, NUM_CLASSES, argmax
from .pipeline import face_vote, fuse

MODES = ("bn", "cnn", "ensemble")


def confusion_matrix(true, predicted):
    cm = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return cm


@dataclass
class EvalReport:
    mode: str
    confusion: np.ndarray
    fallback_count: int = 0
    excluded_count: int = 0
    split: str = ""

    @property
    def total(self):
        return int(self.confusion.sum())

    @property
    def accuracy(self):
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def precision(self):
        col = self.confusion.sum(axis=0)
        return np.divide(np.diag(self.confusion), col, out=np.zeros(NUM_CLASSES), where=col > 0)

    @property
    def recall(self):
        row = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), row, out=np.zeros(NUM_CLASSES), where=row > 0)

    @property
    def normalized(self):
        row = self.confusion.sum(axis=1, keepdims=True)
        return np.divide(self.confusion, row, out=np.zeros(self.confusion.shape), where=row > 0)


def _require(model, mode):
    if mode not in MODES:
        raise ConfigError(f"unknown evaluation mode {mode!r}; expected one of {MODES}")
    if mode in ("bn", "ensemble") and model.bayes is None:
        raise ConfigError(f"mode {mode!r} needs a fitted Bayes model")
    if mode in ("cnn", "ensemble") and model.net is None:
        raise ConfigError(f"mode {mode!r} needs a trained CNN")
    if mode == "ensemble" and model.cnn_cpt is None:
        raise ConfigError("mode 'ensemble' needs a calibrated CNN evidence table")


def evaluate_modes(manifest, model, modes=MODES, provider=None, average=False):
    """One :class:`EvalReport` per mode; face outputs are computed once per record.

    Records without a face fall back to the BN posterior in ensemble mode and
    to the prior's argmax in CNN mode; both are counted as fallbacks.  With
    ``average`` the ensemble averages the BN posterior and the mean face
    distribution instead of using the CNN evidence node.
    """
    for mode in modes:
        if mode == "ensemble" and average:
            if model.bayes is None or model.net is None:
                raise ConfigError("averaging needs both a Bayes model and a CNN")
        else:
            _require(model, mode)
    needs_faces = any(m in ("cnn", "ensemble") for m in modes)
    prior_class = argmax(model.bayes.prior) if model.bayes is not None else 0
    true, excluded = [], 0
    preds = {m: [] for m in modes}
    fallbacks = dict.fromkeys(modes, 0)
    for record in manifest:
        if record.label is None:
            excluded += 1
            continue
        true.append(record.label)
        vote = face_vote(record, model.net, provider) if needs_faces else (0, None, None)
        k, cnn_class, mean = vote
        bn_post = None
        for mode in modes:
            if mode == "bn":
                bn_post = model.bayes.posterior(record.descriptors)
                preds[mode].append(argmax(bn_post))
            elif mode == "cnn":
                if k == 0:
                    fallbacks[mode] += 1
                    preds[mode].append(prior_class)
                else:
                    preds[mode].append(cnn_class)
            elif average:
                bn = model.bayes.posterior(record.descriptors) if bn_post is None else bn_post
                if k == 0:
                    fallbacks[mode] += 1
                    preds[mode].append(argmax(bn))
                else:
                    preds[mode].append(argmax((bn + mean) / 2.0))
            else:
                if k == 0:
                    fallbacks[mode] += 1
                post, _ = fuse(model, record.descriptors, vote)
                preds[mode].append(argmax(post))
    return [EvalReport(m, confusion_matrix(true, preds[m]), fallbacks[m], excluded, manifest.split)
            for m in modes]


def evaluate(manifest, model, mode, provider=None, average=False):
    return evaluate_modes(manifest, model, (mode,), provider, average)[0]


def descriptor_histogram(manifest, vocab):
    """``[(descriptor, (n_positive, n_neutral, n_negative)), ...]`` by descending total."""
    counts = count_descriptors([r for r in manifest if r.label is not None], vocab).present
    rows = [(d, tuple(int(v) for v in counts[i])) for i, d in enumerate(vocab.entries)]
    rows.sort(key=lambda row: (-sum(row[1]), row[0]))
    return rows


def histogram_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("descriptor",) + CLASSES + ("total",))
    for descriptor, counts in rows:
        writer.writerow((descriptor,) + counts + (sum(counts),))
    return buf.getvalue()


def _matrix_lines(matrix, fmt):
    width = max(len(c) for c in CLASSES) + 2
    lines = [" " * width + "".join(c.rjust(width) for c in CLASSES)]
    for name, row in zip(CLASSES, matrix):
        lines.append(name.ljust(width) + "".join(fmt(v).rjust(width) for v in row))
    return lines


def render_report(reports):
    """``(text, csv_text)`` for a list of reports; identical input gives identical bytes."""
    reports = list(reports)
    lines = []
    if reports:
        r0 = reports[0]
        lines.append(f"split: {r0.split}  evaluated: {r0.total}  excluded (unlabelled): {r0.excluded_count}")
        lines.append("")
    lines.append(f"{'mode':<10}{'accuracy %':>12}{'fallbacks':>12}")
    for r in reports:
        lines.append(f"{r.mode:<10}{100 * r.accuracy:>12.2f}{r.fallback_count:>12d}")
    for r in reports:
        lines += ["", f"[{r.mode}] confusion matrix (rows: true, columns: predicted)"]
        lines += _matrix_lines(r.confusion, str)
        lines += ["", f"[{r.mode}] row-normalized"]
        lines += _matrix_lines(r.normalized, lambda v: f"{v:.2f}")
        lines += ["", f"[{r.mode}] per class  precision  recall"]
        for name, p, rc in zip(CLASSES, r.precision, r.recall):
            lines.append(f"  {name:<10}{p:>10.4f}{rc:>8.4f}")
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("mode", "true", "predicted", "count", "row_fraction"))
    for r in reports:
        norm = r.normalized
        for i, t in enumerate(CLASSES):
            for j, p in enumerate(CLASSES):
                writer.writerow((r.mode, t, p, int(r.confusion[i, j]), f"{norm[i, j]:.6f}"))
    writer.writerow(())
    writer.writerow(("mode", "accuracy", "evaluated", "fallbacks", "excluded"))
    for r in reports:
        writer.writerow((r.mode, f"{r.accuracy:.6f}", r.total, r.fallback_count, r.excluded_count))
    return text, buf.getvalue()
