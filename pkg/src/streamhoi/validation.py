"""Input validation helpers used by the public entry points.

Estimators and functional ops funnel array arguments through these so that
shape and finiteness failures surface as clear errors at the boundary instead
of NaNs deep inside a scan.
"""

import numpy as np
import torch

from .exceptions import ConfigurationError, NumericalError, ShapeError


def as_float_tensor(x, name, dtype=None):
    """Convert array-like input to a floating torch tensor."""
    if isinstance(x, torch.Tensor):
        t = x
    else:
        try:
            t = torch.as_tensor(np.asarray(x))
        except (TypeError, ValueError) as exc:
            raise ShapeError(f"{name} is not array-like: {exc}") from exc
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    if dtype is not None:
        t = t.to(dtype)
    return t


def check_finite(t, name):
    """Raise NumericalError if the tensor contains NaN or Inf."""
    if isinstance(t, torch.Tensor):
        bad = not bool(torch.isfinite(t).all())
    else:
        bad = not np.isfinite(np.asarray(t)).all()
    if bad:
        raise NumericalError(f"{name} contains NaN or Inf")
    return t


def check_ndim(t, name, ndim):
    if t.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dims, got shape {tuple(t.shape)}")
    return t


def check_dim(t, name, axis, size):
    if t.shape[axis] != size:
        raise ShapeError(
            f"{name} must have size {size} on axis {axis}, got shape {tuple(t.shape)}"
        )
    return t


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_choice(value, name, choices):
    if value not in choices:
        raise ConfigurationError(
            f"{name} must be one of {sorted(choices)}, got {value!r}"
        )
    return value


def check_fraction(value, name, low=0.0, high=1.0):
    value = float(value)
    if not np.isfinite(value) or not (low <= value <= high):
        raise ConfigurationError(f"{name} must be in [{low}, {high}], got {value}")
    return value


def check_motion_array(frames, name="frames"):
    """Validate a (T, D) pose-vector sequence and return it as float64 ndarray."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be (T, D), got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericalError(f"{name} contains NaN or Inf")
    return arr


def check_label_array(labels, name="labels", n_classes=None):
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-d, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == arr.astype(int)):
            arr = arr.astype(np.int64)
        else:
            raise ShapeError(f"{name} must be integer class ids")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ShapeError(f"{name} contains negative class ids")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ShapeError(f"{name} contains ids >= n_classes={n_classes}")
    return arr
