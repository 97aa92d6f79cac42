"""Model zoo: the embedding+LSTM classifier and its baselines."""

from .forest import DecisionTree, RandomForestModel
from .nets import (
    Cnn1dClassifier,
    EmbedConfig,
    EmbeddingMLP,
    LSTMClassifier,
    LogisticRegressionModel,
    MLPClassifier,
    build_input_sequence,
)
from .train import (
    MODEL_KINDS,
    TrainConfig,
    build_model,
    fit_model,
    predict_proba,
)

__all__ = [
    "Cnn1dClassifier",
    "DecisionTree",
    "EmbedConfig",
    "EmbeddingMLP",
    "LSTMClassifier",
    "LogisticRegressionModel",
    "MLPClassifier",
    "MODEL_KINDS",
    "RandomForestModel",
    "TrainConfig",
    "build_input_sequence",
    "build_model",
    "fit_model",
    "predict_proba",
]
