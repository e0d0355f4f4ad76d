"""Top-down path: Bernoulli naive Bayes over scene descriptors, plus fusion.

The network is a class root with one binary child per vocabulary descriptor
and, optionally, one three-valued child holding the CNN's aggregated
prediction.  For this tree the belief-propagation posterior at the root is
exactly prior times the product of the children's likelihoods, which is what
:func:`posterior` computes (in log space, since ~800 factors underflow).
"""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FitError
from .labels import CLASSES, NUM_CLASSES, argmax
from .data_io import normalize_descriptor


def _descriptors_of(item):
    return getattr(item, "descriptors", item)


@dataclass(frozen=True)
class DescriptorVocabulary:
    entries: tuple = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(normalize_descriptor(e) for e in self.entries)
        if len(set(entries)) != len(entries):
            raise ConfigError("vocabulary entries must be unique")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(entries)})

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, descriptor):
        return normalize_descriptor(descriptor) in self._index

    def index(self, descriptor):
        return self._index.get(normalize_descriptor(descriptor))

    def encode(self, descriptors):
        """Presence mask over the vocabulary and the number of unknown descriptors."""
        mask = np.zeros(len(self.entries), dtype=bool)
        unknown = 0
        for d in {normalize_descriptor(d) for d in descriptors}:
            i = self._index.get(d)
            if i is None:
                unknown += 1
            else:
                mask[i] = True
        return mask, unknown


def build_vocabulary(records, min_count=1):
    """Every descriptor seen in at least ``min_count`` records, sorted."""
    records = list(records)
    if not records:
        raise DataError("cannot build a vocabulary from an empty training set")
    counts = Counter()
    for r in records:
        counts.update({normalize_descriptor(d) for d in _descriptors_of(r)})
    return DescriptorVocabulary(tuple(sorted(d for d, n in counts.items() if n >= min_count and d)))


@dataclass(frozen=True)
class DescriptorCounts:
    """``present[i, y]`` = images of class y carrying descriptor i."""

    present: np.ndarray
    class_totals: np.ndarray

    @property
    def absent(self):
        return self.class_totals[None, :] - self.present


def count_descriptors(records, vocab):
    present = np.zeros((len(vocab), NUM_CLASSES), dtype=np.int64)
    totals = np.zeros(NUM_CLASSES, dtype=np.int64)
    for r in records:
        if r.label is None:
            raise DataError(f"record {r.image_id} has no label")
        totals[r.label] += 1
        mask, _ = vocab.encode(r.descriptors)
        present[mask, r.label] += 1
    return DescriptorCounts(present, totals)


@dataclass(frozen=True)
class BernoulliCpt:
    """``table[i, y]`` = P(descriptor i present | class y)."""

    table: np.ndarray
    smoothing: float = 0.0


def fit_mle(records, vocab, smoothing=1.0):
    """Smoothed maximum-likelihood tables.

    P(x_i = true | y) = (N_t + a) / (N_t + N_f + 2a), and the class prior is
    (n_y + a) / (n + 3a).  Returns ``(cpt, prior, counts)``.
    """
    if smoothing < 0:
        raise ConfigError("smoothing must be non-negative")
    records = list(records)
    counts = count_descriptors(records, vocab)
    totals = counts.class_totals
    if smoothing == 0 and (totals == 0).any():
        missing = [CLASSES[c] for c in np.flatnonzero(totals == 0)]
        raise FitError(f"no training images for {missing}; unsmoothed estimates are undefined")
    table = (counts.present + smoothing) / (totals[None, :] + 2.0 * smoothing)
    prior = (totals + smoothing) / (totals.sum() + NUM_CLASSES * smoothing)
    return BernoulliCpt(table, smoothing), prior, counts


def integrate_cnn_node(confusion, smoothing=0.0):
    """Row-normalized confusion counts: row y is P(CNN predicts c | true class y)."""
    confusion = np.asarray(confusion, dtype=np.float64)
    if confusion.shape != (NUM_CLASSES, NUM_CLASSES) or (confusion < 0).any():
        raise DataError(f"confusion must be a non-negative {NUM_CLASSES}x{NUM_CLASSES} matrix")
    rows = confusion + smoothing
    sums = rows.sum(axis=1, keepdims=True)
    if (sums <= 0).any():
        bad = [CLASSES[c] for c in np.flatnonzero(sums[:, 0] <= 0)]
        raise FitError(f"confusion rows {bad} are empty; use smoothing > 0")
    return rows / sums


def log_joint(present, table, prior, cnn_evidence=None, cnn_cpt=None, presence_only=False):
    """Unnormalized log P(y, evidence) for each class."""
    present = np.asarray(present, dtype=bool)
    table = np.asarray(table, dtype=np.float64)
    if table.shape != (present.size, NUM_CLASSES):
        raise ConfigError(f"table shape {table.shape} does not match {present.size} descriptors")
    with np.errstate(divide="ignore"):
        out = np.log(np.asarray(prior, dtype=np.float64))
        out = out + np.log(table[present]).sum(axis=0)
        if not presence_only:
            out = out + np.log1p(-table[~present]).sum(axis=0)
        if cnn_evidence is not None:
            if cnn_cpt is None:
                raise ConfigError("CNN evidence given but the model has no CNN evidence table")
            column = np.asarray(cnn_cpt, dtype=np.float64)[:, int(cnn_evidence)]
            # dividing by the column max leaves the posterior unchanged and makes
            # an uninformative (constant) column contribute exactly zero
            top = column.max()
            out = out + (np.log(column / top) if top > 0 else np.full(NUM_CLASSES, -np.inf))
    return out


def posterior(present, table, prior, cnn_evidence=None, cnn_cpt=None, presence_only=False):
    """P(y | evidence) from a presence mask over the vocabulary.

    Every descriptor contributes P(present|y) or P(absent|y); with
    ``presence_only`` absent descriptors are skipped.  ``cnn_evidence`` is the
    CNN's predicted class index, scored through ``cnn_cpt[y, class]``.
    """
    lj = log_joint(present, table, prior, cnn_evidence, cnn_cpt, presence_only)
    top = lj.max()
    if not np.isfinite(top):
        raise DataError("the evidence has zero probability under every class")
    p = np.exp(lj - top)
    return p / p.sum()


@dataclass(frozen=True)
class NaiveBayes:
    vocabulary: DescriptorVocabulary
    cpt: BernoulliCpt
    prior: np.ndarray
    cnn_cpt: np.ndarray = None
    presence_only: bool = False

    @classmethod
    def fit(cls, records, vocabulary=None, smoothing=1.0, presence_only=False, min_count=1):
        records = list(records)
        vocabulary = vocabulary or build_vocabulary(records, min_count)
        cpt, prior, _ = fit_mle(records, vocabulary, smoothing)
        return cls(vocabulary, cpt, prior, presence_only=presence_only)

    def with_cnn_node(self, confusion, smoothing=0.0):
        return NaiveBayes(self.vocabulary, self.cpt, self.prior,
                          integrate_cnn_node(confusion, smoothing), self.presence_only)

    def posterior(self, descriptors, cnn_class=None):
        if self.vocabulary is None:
            raise ConfigError("the model has no vocabulary")
        mask, _ = self.vocabulary.encode(descriptors)
        return posterior(mask, self.cpt.table, self.prior, cnn_class, self.cnn_cpt, self.presence_only)

    def classify(self, descriptors, cnn_class=None):
        return argmax(self.posterior(descriptors, cnn_class))


def classify(descriptors, model, cnn_class=None):
    return model.classify(descriptors, cnn_class)
