"""Disentangled dual-consistency multi-view clustering."""

import json

from ._core import (
    ConfigError,
    Model,
    NumericalFailure,
    accuracy,
    cli,
    kmeans,
    load_dataset,
    normalize,
    nmi,
    purity,
    save_dataset,
    synth,
)
from ._core import _train

__all__ = [
    "ConfigError",
    "Model",
    "NumericalFailure",
    "accuracy",
    "cli",
    "kmeans",
    "load_dataset",
    "normalize",
    "nmi",
    "purity",
    "save_dataset",
    "synth",
    "losses",
    "train",
]


def train(views, labels=None, on_epoch=None, **config):
    """Trains a model on `views` (list of n x D_v arrays).

    Keyword arguments use the config-file keys of the command-line tool,
    e.g. ``train(views, labels, pretrain_epochs=10, hidden=[64, 32])``.
    Returns ``(model, trace)`` where trace holds one dict per epoch.
    """
    return _train(list(views), labels, json.dumps(config), on_epoch)


def losses(model, views, epoch=0, batch=0, **config):
    """Loss terms of one full-batch step, with the trainer's noise for (epoch, batch)."""
    return model._losses(list(views), json.dumps(config), epoch, batch)
