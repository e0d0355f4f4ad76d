"""Whole-image prediction: faces through the CNN, descriptors and CNN vote through Bayes."""
from dataclasses import dataclass

import numpy as np

from .bayes import BernoulliCpt, DescriptorVocabulary, NaiveBayes, posterior
from .data_io import ModelBundle
from .errors import ConfigError, DataError
from .faces import aggregate_faces, face_source_load
from .labels import argmax
from .nn import ConvNet, LayerSpec


@dataclass
class FusionModel:
    """Runtime view of a :class:`ModelBundle`; either part may be missing."""

    net: ConvNet = None
    bayes: NaiveBayes = None

    @classmethod
    def from_bundle(cls, bundle):
        net = bayes = None
        if bundle.cnn_params is not None:
            layers = [LayerSpec(**d) for d in bundle.layers]
            net = ConvNet(layers, bundle.cnn_params, bundle.input_shape)
        if bundle.vocabulary is not None:
            bayes = NaiveBayes(
                DescriptorVocabulary(tuple(bundle.vocabulary)),
                BernoulliCpt(bundle.cpt, bundle.smoothing),
                bundle.prior,
                bundle.cnn_cpt,
                bundle.presence_only,
            )
        return cls(net, bayes)

    @property
    def cnn_cpt(self):
        return None if self.bayes is None else self.bayes.cnn_cpt


def update_bundle(bundle, net=None, bayes=None, cnn_cpt=None, optimizer=None):
    """Copy of ``bundle`` with the given components replaced."""
    bundle = ModelBundle(**{k: getattr(bundle, k) for k in bundle.__dataclass_fields__})
    if net is not None:
        bundle.cnn_params = dict(net.params)
        bundle.layers = [spec.to_dict() for spec in net.layers]
        bundle.input_shape = tuple(net.input_shape)
        bundle.optimizer = optimizer
    if bayes is not None:
        bundle.vocabulary = list(bayes.vocabulary.entries)
        bundle.cpt = bayes.cpt.table
        bundle.smoothing = bayes.cpt.smoothing
        bundle.prior = bayes.prior
        bundle.presence_only = bayes.presence_only
        bundle.cnn_cpt = bayes.cnn_cpt
    if cnn_cpt is not None:
        bundle.cnn_cpt = np.asarray(cnn_cpt, dtype=np.float64)
    return bundle


@dataclass(frozen=True)
class Prediction:
    label: int
    posterior: np.ndarray
    cnn_class: int = None
    face_count: int = 0
    unknown_descriptors: int = 0
    face_distribution: np.ndarray = None


def face_vote(record, net, provider=None, image=None):
    """``(K, cnn_class, mean_distribution)`` for a record; K=0 gives Nones."""
    batch = face_source_load(record, provider, image)
    if batch.K == 0:
        return 0, None, None
    cnn_class, mean = aggregate_faces(net.predict_proba(batch.stack()))
    return batch.K, cnn_class, mean


def fuse(model, descriptors, vote):
    """Posterior over classes given descriptors and a ``face_vote`` result."""
    k, cnn_class, _ = vote
    mask, unknown = model.bayes.vocabulary.encode(descriptors)
    evidence = cnn_class if k > 0 else None
    if evidence is not None and model.cnn_cpt is None:
        raise ConfigError("the model has no CNN evidence table; run calibration first")
    bayes = model.bayes
    post = posterior(mask, bayes.cpt.table, bayes.prior, evidence, bayes.cnn_cpt, bayes.presence_only)
    return post, unknown


def predict(record, model, provider=None, image=None):
    """Fused prediction for one record.

    With no detected faces the CNN node is left out of the network entirely.
    """
    if model.bayes is None:
        raise ConfigError("prediction needs a fitted Bayes model")
    try:
        vote = face_vote(record, model.net, provider, image) if model.net is not None else (0, None, None)
        post, unknown = fuse(model, record.descriptors, vote)
    except DataError as exc:
        raise DataError(f"{record.image_id}: {exc}") from exc
    return Prediction(argmax(post), post, vote[1], vote[0], unknown, vote[2])
