"""Input checks shared by the estimator wrappers and the command line."""
from __future__ import annotations

import numpy as np

from .errors import ContractError
from .pipeline.views import ViewSet


def check_view_set(views, require_labels=False, name="views"):
    if not isinstance(views, ViewSet):
        raise ContractError(f"{name} must be a ViewSet, got {type(views).__name__}")
    if not (np.all(np.isfinite(views.images)) and np.all(np.isfinite(views.depths))):
        raise ContractError(f"{name}: images and depths must be finite")
    if views.images.min() < 0 or views.images.max() > 1:
        raise ContractError(f"{name}: images must lie in [0, 1]")
    if require_labels and views.labels is None:
        raise ContractError(f"{name}: semantic labels are required")
    return views


def check_scenes(scenes, require_labels=False):
    """Normalise to a list of ``(source, novel or None)`` pairs."""
    if isinstance(scenes, ViewSet):
        scenes = [(scenes, None)]
    out = []
    for item in scenes:
        source, novel = item if isinstance(item, tuple) else (item, None)
        check_view_set(source, require_labels, "source")
        if novel is not None:
            check_view_set(novel, False, "novel")
        out.append((source, novel))
    if not out:
        raise ContractError("at least one scene is required")
    return out


def check_positive(value, name, integer=False):
    if integer and int(value) != value:
        raise ContractError(f"{name} must be an integer, got {value!r}")
    if not value > 0:
        raise ContractError(f"{name} must be positive, got {value!r}")
    return int(value) if integer else float(value)


def check_non_negative(value, name):
    if not value >= 0:
        raise ContractError(f"{name} must be non-negative, got {value!r}")
    return float(value)


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        from sklearn.exceptions import NotFittedError
        raise NotFittedError(f"{type(estimator).__name__} is not fitted; call fit() first")
