"""Group-level emotion recognition from face crops and scene descriptors."""
from .bayes import DescriptorVocabulary, NaiveBayes, build_vocabulary, fit_mle, integrate_cnn_node
from .data_io import ModelBundle, load_dataset, load_model, save_model
from .labels import CLASSES
from .nn import ConvNet, LayerSpec, canonical_layers
from .pipeline import FusionModel, predict
from .train import OptimizerConfig, init_network, train_cnn

__version__ = "0.1.0"

__all__ = [
    "CLASSES", "ConvNet", "DescriptorVocabulary", "FusionModel", "LayerSpec", "ModelBundle",
    "NaiveBayes", "OptimizerConfig", "build_vocabulary", "canonical_layers", "fit_mle",
    "init_network", "integrate_cnn_node", "load_dataset", "load_model", "predict",
    "save_model", "train_cnn",
]
