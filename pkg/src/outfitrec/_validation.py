"""Input validation helpers in the style of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ValidationError


def check_colors(X, *, name="colors", allow_empty=False, lab=True):
    """Return ``X`` as a float64 ``(n, 3)`` array of colours.

    A single triple is promoted to shape ``(1, 3)``.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.size == 0 and allow_empty:
        return arr.reshape(0, 3)
    try:
        arr = check_array(arr, dtype=np.float64, ensure_2d=True, input_name=name)
    except ValueError as exc:
        raise ValidationError(str(exc), field=name) from None
    if arr.shape[1] != 3:
        raise ValidationError(f"expected 3 components per colour, got {arr.shape[1]}", field=name)
    if lab:
        L = arr[:, 0]
        if np.any((L < 0) | (L > 100)):
            raise ValidationError("L must lie in [0, 100]", field=name)
        if np.any(np.abs(arr[:, 1:]) > 128):
            raise ValidationError("a and b must lie in [-128, 128]", field=name)
    return arr


def check_rgb(X, *, name="rgb"):
    arr = np.asarray(X)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError("expected an (n, 3) array of sRGB triples", field=name)
    if arr.dtype != np.uint8:
        if not np.all(np.isfinite(arr)) or np.any((arr < 0) | (arr > 255)):
            raise ValidationError("sRGB components must lie in [0, 255]", field=name)
    return arr.astype(np.float64)


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValidationError(f"must be an integer >= {minimum}, got {value!r}", field=name)
    return int(value)


def check_unit_interval(value, name, *, open_left=False):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"must be a real number, got {value!r}", field=name) from None
    lo_ok = value > 0 if open_left else value >= 0
    if not (lo_ok and value <= 1):
        bracket = "(" if open_left else "["
        raise ValidationError(f"must lie in {bracket}0, 1], got {value}", field=name)
    return value


def check_index(value, size, name="index"):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"must be an integer, got {value!r}", field=name)
    if not 0 <= value < size:
        raise ValidationError(f"{value} out of range [0, {size})", field=name)
    return int(value)
