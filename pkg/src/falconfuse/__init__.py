"""falconfuse: dual-backbone concatenated-feature image classifier.

A from-scratch NumPy stack: reverse-mode autodiff tensor core, a
ConvNeXt-style branch and an EfficientNet-style branch fused by feature
concatenation into a 3-class softmax head, plus the data pipeline,
metrics, training protocol, and CLI around it.

Submodule imports are lazy so the CLI can pin BLAS thread counts before
numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "tensor",
    "Parameter": "tensor",
    "no_grad": "tensor",
    "backward": "tensor",
    "AdamHyper": "optim",
    "AdamState": "optim",
    "adam_step": "optim",
    "ConvNeXtConfig": "convnext",
    "MBConvSpec": "efficientnet",
    "EfficientNetConfig": "efficientnet",
    "compound_scale": "efficientnet",
    "ModelConfig": "fusion",
    "FusionModel": "fusion",
    "build_model": "fusion",
    "CLASS_NAMES": "data",
    "DatasetManifest": "data",
    "Batch": "data",
    "load_dataset": "data",
    "stratified_split": "data",
    "preprocess": "data",
    "batches": "data",
    "synth_generate": "synth",
    "confusion_matrix": "metrics",
    "classification_report": "metrics",
    "roc_curve": "metrics",
    "TrainConfig": "training",
    "TrainingHistory": "training",
    "EvaluationReport": "training",
    "train": "training",
    "evaluate": "training",
    "compare_models": "training",
    "save_checkpoint": "checkpoint",
    "load_checkpoint": "checkpoint",
}

__all__ = sorted(_EXPORTS) + ["ops", "errors", "gradcheck"]


def __getattr__(name):
    if name in _EXPORTS:
        module = import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    if name in ("ops", "errors", "gradcheck", "tensor", "optim"):
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
