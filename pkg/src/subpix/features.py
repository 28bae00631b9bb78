"""Feature volumes and their whitening variants (F, ZF, NF, ZNF)."""

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError, StateError
from .tensor import CLAMP, DEFAULT_DTYPE, PatchWindow, patch

DEGENERATE_NORM = 1e-12


class Whitening(enum.Enum):
    RAW = "raw"
    ZERO_MEAN = "zero_mean"
    NORMALIZED = "normalized"
    ZERO_MEAN_NORMALIZED = "zero_mean_normalized"

    @property
    def zero_mean(self):
        return self in (Whitening.ZERO_MEAN, Whitening.ZERO_MEAN_NORMALIZED)

    @property
    def normalized(self):
        return self in (Whitening.NORMALIZED, Whitening.ZERO_MEAN_NORMALIZED)


@dataclass(frozen=True)
class FeatureVolume:
    """Per-pixel feature vectors of an image.

    Attributes
    ----------
    data : numpy.ndarray, shape (rows, cols, K)
    whitening : Whitening
    window : PatchWindow
        Window the features were gathered with.
    valid : numpy.ndarray of bool, shape (rows, cols)
        False for vectors that could not be normalized.
    """

    data: np.ndarray
    whitening: Whitening
    window: PatchWindow
    valid: np.ndarray

    @property
    def shape(self):
        return self.data.shape[:-1]

    @property
    def n_features(self):
        return self.data.shape[-1]


def build_feature_volume(image, window, border=CLAMP, dtype=DEFAULT_DTYPE):
    """Patch a grayscale (rank 2) or color (rank 3) image into a raw volume."""
    image = np.asarray(image)
    if image.ndim not in (2, 3):
        raise ArgumentError(f"expected a rank 2 or 3 image, got rank {image.ndim}")
    if window.ndim != 2:
        raise ArgumentError("feature volumes are built with 2D windows")
    data = patch(image.astype(dtype, copy=False), window, border)
    valid = np.ones(data.shape[:-1], dtype=bool)
    return FeatureVolume(data, Whitening.RAW, window, valid)


def whiten_vectors(data, mode):
    """Whiten the trailing axis of ``data``.

    Returns the whitened float64 array and a boolean mask that is False
    where normalization hit a vector with norm below the degeneracy
    threshold. Degenerate vectors are returned as zeros.
    """
    mode = Whitening(mode)
    x = np.asarray(data, dtype=np.float64)
    valid = np.ones(x.shape[:-1], dtype=bool)
    if mode.zero_mean:
        x = x - x.mean(axis=-1, keepdims=True)
    if mode.normalized:
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        valid = norm[..., 0] >= DEGENERATE_NORM
        x = np.divide(x, norm, out=np.zeros_like(x), where=norm >= DEGENERATE_NORM)
    return x, valid


def whiten(fv, mode):
    """Return a copy of a raw volume whitened with ``mode``.

    Raises
    ------
    StateError
        If ``fv`` is already whitened.
    """
    mode = Whitening(mode)
    if fv.whitening is not Whitening.RAW:
        raise StateError(f"volume is already whitened ({fv.whitening.value})")
    x, valid = whiten_vectors(fv.data, mode)
    return replace(fv, data=x.astype(fv.data.dtype), whitening=mode, valid=fv.valid & valid)
