from .base import N_CLASSES, Classifier, softmax
from .classifiers import (
    ConstantClassifier,
    ExternalPredictions,
    LevelsOracle,
    Metrics,
    evaluate,
    export_predictions,
    load_external_predictions,
    make_levels_oracle,
    metrics_from_predictions,
    predict_instances,
    write_misclassified,
)
from .convnet import (
    ConvNet,
    ConvNetConfig,
    TrainingDiverged,
    load_checkpoint,
    loss_and_grads,
    save_checkpoint,
    train_convnet,
)


def predict_proba(model: Classifier, w):
    """Class probabilities for one window or a batch."""
    return model.predict_proba(w)
