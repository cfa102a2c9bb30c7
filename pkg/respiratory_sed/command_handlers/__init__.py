"""Command handler package exports."""

from .evaluate import register_evaluate
from .inspect import register_inspect
from .predict import register_predict
from .prepare import register_prepare
from .train import register_train

__all__ = [
    "register_evaluate",
    "register_inspect",
    "register_predict",
    "register_prepare",
    "register_train",
]
