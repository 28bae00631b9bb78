"""Dense buffers and the patching operator.

Buffers are plain numpy arrays in row-major layout. The patching operator
gathers, for every pixel ``p``, the values ``image[p + offset]`` for each
offset of a window and stacks them along a trailing feature axis.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, EmptyDomainError

DEFAULT_DTYPE = np.float32


@dataclass(frozen=True)
class Border:
    """How samples falling outside the image are handled by `patch`.

    ``kind`` is one of ``"clamp"`` (edge replication), ``"constant"`` (fill
    with ``value``) or ``"reject"`` (drop output pixels whose window leaves
    the image).
    """

    kind: str = "clamp"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("clamp", "constant", "reject"):
            raise ArgumentError(f"unknown border policy {self.kind!r}")

    @classmethod
    def constant(cls, value=0.0):
        return cls("constant", float(value))


CLAMP = Border("clamp")
REJECT = Border("reject")


@dataclass(frozen=True)
class PatchWindow:
    """Offsets gathered by the patching operator.

    Attributes
    ----------
    offsets : numpy.ndarray, shape (K, l)
        Integer spatial offset of every output feature channel.
    channel : numpy.ndarray, shape (K,)
        Image channel read by every output feature channel. Channel 0 is
        used for images without a channel axis.
    """

    offsets: np.ndarray
    channel: np.ndarray = field(default=None)

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.intp)
        if offsets.ndim == 1:
            offsets = offsets[:, None]
        if offsets.ndim != 2 or offsets.shape[0] == 0:
            raise ArgumentError("a window needs a non-empty list of offset vectors")
        channel = self.channel
        if channel is None:
            channel = np.zeros(offsets.shape[0], dtype=np.intp)
        channel = np.asarray(channel, dtype=np.intp)
        if channel.shape != (offsets.shape[0],) or np.any(channel < 0):
            raise ArgumentError("channel indices must be non-negative, one per offset")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "channel", channel)

    @property
    def ndim(self):
        """Number of spatial (non-collapsed) dimensions."""
        return self.offsets.shape[1]

    @property
    def size(self):
        """Number of output feature channels."""
        return self.offsets.shape[0]

    @property
    def n_channels(self):
        return int(self.channel.max()) + 1

    def margins(self):
        """Per-dimension ``(before, after)`` reach of the window."""
        lo = np.maximum(-self.offsets.min(axis=0), 0)
        hi = np.maximum(self.offsets.max(axis=0), 0)
        return [(int(a), int(b)) for a, b in zip(lo, hi)]


def make_square_window(side, channels=1):
    """Centered ``side x side`` window over ``channels`` image channels.

    Offsets are enumerated row-major, with the image channel varying
    fastest.
    """
    if int(side) != side or side < 1 or side % 2 == 0:
        raise ArgumentError(f"window side must be a positive odd integer, got {side}")
    if int(channels) != channels or channels < 1:
        raise ArgumentError(f"channels must be a positive integer, got {channels}")
    r = side // 2
    offsets, channel = [], []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            for c in range(channels):
                offsets.append((dy, dx))
                channel.append(c)
    return PatchWindow(np.array(offsets), np.array(channel))


def patch(image, window, border=CLAMP):
    """Apply the patching operator.

    Parameters
    ----------
    image : numpy.ndarray
        Array whose first ``window.ndim`` axes are spatial. At most one extra
        trailing axis holds image channels.
    window : PatchWindow
    border : Border

    Returns
    -------
    numpy.ndarray
        Shape ``spatial + (window.size,)``, where ``spatial`` is the input
        spatial shape, shrunk by the window margins under ``REJECT``.
        ``out[p, k] == image[p + offsets[k], channel[k]]``.
    """
    image = np.asarray(image)
    l = window.ndim
    if image.ndim == l:
        image = image[..., None]
    if image.ndim != l + 1:
        raise ArgumentError(
            f"window has {l} spatial dims but image has rank {image.ndim}")
    if window.n_channels > image.shape[-1]:
        raise ArgumentError(
            f"window reads channel {window.n_channels - 1} of a "
            f"{image.shape[-1]}-channel image")

    spatial = image.shape[:l]
    margins = window.margins()
    if border.kind == "reject":
        out_shape = tuple(n - a - b for n, (a, b) in zip(spatial, margins))
        if any(n <= 0 for n in out_shape):
            raise EmptyDomainError(
                f"window with margins {margins} does not fit in image {spatial}")
        padded = image
        origin = margins
    else:
        out_shape = spatial
        pad = margins + [(0, 0)]
        if border.kind == "clamp":
            padded = np.pad(image, pad, mode="edge")
        else:
            padded = np.pad(image, pad, mode="constant", constant_values=border.value)
        origin = margins

    out = np.empty(out_shape + (window.size,), dtype=image.dtype)
    for k, (off, ch) in enumerate(zip(window.offsets, window.channel)):
        sl = tuple(slice(o + a, o + a + n) for o, a, n in zip(off, [m[0] for m in origin], out_shape))
        out[..., k] = padded[sl + (ch,)]
    return out
