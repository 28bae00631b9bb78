"""Readers and writers for images, PFM disparity maps and .flo flow fields.

Every ``parse_*`` function takes raw bytes and either returns a value or
raises `FormatError`; the ``read_*`` functions add file access on top.
Invalid ground-truth cells are kept as stored and reported through a
``valid`` mask.
"""

import io as _io
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

FLO_MAGIC = 202021.25
FLO_INVALID = 1e9
PLAUSIBLE = 1e4
_WS = b" \t\r\n"


@dataclass(frozen=True)
class GroundTruthField:
    """Disparity or flow values (rows, cols, n) with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def masked(self):
        """Values as float64 with NaN in invalid cells."""
        out = self.values.astype(np.float64)
        out[~self.valid] = np.nan
        return out


@dataclass(frozen=True)
class PfmImage:
    data: np.ndarray
    scale: float
    little_endian: bool

    @property
    def valid(self):
        v = np.isfinite(self.data) & (np.abs(self.data) <= PLAUSIBLE)
        return v if v.ndim == 2 else v.all(axis=-1)

    def as_field(self):
        data = self.data if self.data.ndim == 3 else self.data[..., None]
        return GroundTruthField(data, self.valid)


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError:
        raise
    except Exception as exc:  # e.g. embedded NUL in the path
        raise OSError(str(exc)) from exc


def _tokens(buf, start, count):
    """Read ``count`` whitespace-separated ASCII tokens (skipping ``#``
    comments). Returns the tokens and the offset of the byte following the
    single whitespace character after the last token."""
    out = []
    i = start
    n = len(buf)
    while len(out) < count:
        while i < n and buf[i] in _WS:
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i] not in b"\r\n":
                i += 1
            continue
        j = i
        while j < n and buf[j] not in _WS and j - i < 32:
            j += 1
        if j == i or j >= n:
            raise FormatError("truncated header", i)
        if buf[j] not in _WS:
            raise FormatError("header token too long", i)
        out.append((buf[i:j].decode("ascii", "replace"), i))
        i = j
    return out, i + 1


def _int_token(tok, what):
    text, off = tok
    if not re.fullmatch(r"[0-9]+", text):
        raise FormatError(f"bad {what} {text!r}", off)
    value = int(text)
    if value <= 0 or value > 1 << 20:
        raise FormatError(f"{what} out of range: {value}", off)
    return value


# PFM ----------------------------------------------------------------------

def parse_pfm(buf):
    buf = bytes(buf)
    magic = buf[:2]
    if magic not in (b"PF", b"Pf"):
        raise FormatError("not a PFM file: magic must be 'PF' or 'Pf'", 0)
    if len(buf) < 3 or buf[2] not in _WS:
        raise FormatError("missing whitespace after magic", 2)
    channels = 3 if magic == b"PF" else 1
    toks, data_start = _tokens(buf, 3, 3)
    width = _int_token(toks[0], "width")
    height = _int_token(toks[1], "height")
    text, off = toks[2]
    try:
        scale = float(text)
    except ValueError:
        raise FormatError(f"bad scale {text!r}", off) from None
    if not np.isfinite(scale) or scale == 0:
        raise FormatError(f"scale must be finite and non-zero, got {text!r}", off)
    little = scale < 0
    nbytes = width * height * channels * 4
    if len(buf) - data_start < nbytes:
        raise FormatError(
            f"truncated payload: expected {nbytes} bytes, found {len(buf) - data_start}",
            data_start)
    data = np.frombuffer(buf, dtype="<f4" if little else ">f4", count=width * height * channels,
                         offset=data_start)
    shape = (height, width, channels) if channels == 3 else (height, width)
    data = np.flipud(data.reshape(shape)).astype(np.float32)
    return PfmImage(np.ascontiguousarray(data), abs(scale), little)


def read_pfm(path):
    """Read a PFM file into a top-down float32 array plus its scale."""
    return parse_pfm(_read_bytes(path))


def encode_pfm(data, scale=1.0, little_endian=True):
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[-1] == 1:
        data = data[..., 0]
    if data.ndim == 2:
        magic = "Pf"
    elif data.ndim == 3 and data.shape[-1] == 3:
        magic = "PF"
    else:
        raise ValueError(f"PFM stores 1 or 3 channels, got shape {data.shape}")
    if not scale > 0:
        raise ValueError("scale must be positive; endianness is set separately")
    height, width = data.shape[:2]
    header = f"{magic}\n{width} {height}\n{-scale if little_endian else scale}\n".encode()
    payload = np.flipud(data).astype("<f4" if little_endian else ">f4").tobytes()
    return header + payload


def write_pfm(path, data, scale=1.0, little_endian=True):
    Path(path).write_bytes(encode_pfm(data, scale, little_endian))


# .flo ---------------------------------------------------------------------

def parse_flo(buf):
    buf = bytes(buf)
    if len(buf) < 12:
        raise FormatError("truncated .flo header", len(buf))
    (magic,) = struct.unpack("<f", buf[:4])
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"bad .flo magic {magic!r}, expected {FLO_MAGIC}", 0)
    width, height = struct.unpack("<ii", buf[4:12])
    if not (0 < width <= 1 << 20 and 0 < height <= 1 << 20):
        raise FormatError(f"bad .flo dimensions {width}x{height}", 4)
    nbytes = width * height * 8
    if len(buf) - 12 != nbytes:
        raise FormatError(
            f"payload size {len(buf) - 12} does not match header ({nbytes} bytes)", 12)
    values = np.frombuffer(buf, dtype="<f4", offset=12).reshape(height, width, 2)
    values = values.astype(np.float32)
    valid = np.all(np.isfinite(values) & (np.abs(values) <= FLO_INVALID), axis=-1)
    valid &= np.all(np.abs(np.where(np.isfinite(values), values, 0)) <= PLAUSIBLE, axis=-1)
    return GroundTruthField(values, valid)


def read_flo(path):
    """Read a Middlebury .flo file; values are (u, v) = (dx, dy) per pixel."""
    return parse_flo(_read_bytes(path))


def encode_flo(values):
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 3 or values.shape[-1] != 2:
        raise ValueError(f".flo stores (rows, cols, 2) fields, got shape {values.shape}")
    height, width = values.shape[:2]
    return struct.pack("<fii", FLO_MAGIC, width, height) + values.tobytes()


def write_flo(path, values):
    Path(path).write_bytes(encode_flo(values))


# images -------------------------------------------------------------------

def parse_pnm(buf):
    """Parse binary (P5/P6) or ASCII (P2/P3) PGM/PPM with 8- or 16-bit samples."""
    buf = bytes(buf)
    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError("not a PGM/PPM file", 0)
    channels = 3 if magic in (b"P3", b"P6") else 1
    toks, data_start = _tokens(buf, 2, 3)
    width = _int_token(toks[0], "width")
    height = _int_token(toks[1], "height")
    maxval = _int_token(toks[2], "maxval")
    if maxval > 65535:
        raise FormatError(f"unsupported maxval {maxval}", toks[2][1])
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        dtype = ">u2" if maxval > 255 else "u1"
        nbytes = count * np.dtype(dtype).itemsize
        if len(buf) - data_start < nbytes:
            raise FormatError("truncated pixel data", data_start)
        raw = np.frombuffer(buf, dtype=dtype, count=count, offset=data_start)
    else:
        fields = buf[data_start - 1:].split()
        if len(fields) < count:
            raise FormatError("truncated pixel data", data_start)
        try:
            raw = np.array([int(x) for x in fields[:count]], dtype=np.int64)
        except ValueError:
            raise FormatError("non-numeric sample", data_start) from None
    if raw.max(initial=0) > maxval:
        raise FormatError("sample exceeds maxval", data_start)
    shape = (height, width, channels) if channels == 3 else (height, width)
    return (raw.reshape(shape).astype(np.float64) / maxval).astype(np.float32)


def parse_png(buf):
    from PIL import Image

    try:
        with Image.open(_io.BytesIO(bytes(buf))) as im:
            im.load()
            mode = im.mode
            if mode in ("1", "L", "P"):
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            elif mode in ("I;16", "I;16B", "I;16L"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode == "I":
                arr = np.asarray(im, dtype=np.float64)
                arr = arr / (65535.0 if arr.max(initial=0) > 255 else 255.0)
            elif mode in ("RGB", "RGBA", "LA"):
                arr = np.asarray(im.convert("RGB" if mode != "LA" else "L"),
                                 dtype=np.float64) / 255.0
            else:
                raise FormatError(f"unsupported image mode {mode}")
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"unreadable image: {exc}") from None
    return arr.astype(np.float32)


def parse_image(buf):
    buf = bytes(buf)
    if buf[:2] in (b"P2", b"P3", b"P5", b"P6"):
        return parse_pnm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return parse_png(buf)
    raise FormatError("unsupported image format (expected PGM, PPM or PNG)", 0)


def read_image(path):
    """Read an 8/16-bit PGM, PPM or PNG image scaled to [0, 1] float32."""
    return parse_image(_read_bytes(path))


def encode_pnm(image, maxval=65535):
    """Encode a [0, 1] image as binary PGM (rank 2) or PPM (rank 3)."""
    image = np.asarray(image, dtype=np.float64)
    magic = b"P5" if image.ndim == 2 else b"P6"
    q = np.rint(np.clip(image, 0.0, 1.0) * maxval)
    data = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    height, width = image.shape[:2]
    return magic + f"\n{width} {height}\n{maxval}\n".encode() + data


def write_pnm(path, image, maxval=65535):
    Path(path).write_bytes(encode_pnm(image, maxval))
