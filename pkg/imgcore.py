"""
    Image tensors: validation, sRGB to CIELAB conversion, PNG reading and the raw
    tensor file format ("rtf").

    An image tensor is a ``numpy.ndarray`` of shape ``(H, W, C)`` holding 64-bit
    reals in ``[0, 1]``. Tensors built by this module are read-only so that they
    can be shared between threads.
"""

import json
import logging

import cv2
import numpy as np
from PIL                        import Image, UnidentifiedImageError
from skimage.color              import rgb2lab

from errors                     import (ImageReadError, PayloadLengthError, ShapeError,
                                        TensorFormatError, UnsupportedColorTypeError)

logger = logging.getLogger(__name__)

# D65 reference white, 2 degree observer
LAB_ILLUMINANT = "D65"
LAB_OBSERVER = "2"

### Raw Tensor Format ###
RTF_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}



def as_image_tensor(data, copy=True):
    """
        Return a validated, read-only image tensor built from ``data``.

        Parameters
        ----------
        data: :class:`array_like`
            values of shape ``(H, W, C)``.
        copy: :class:`bool, optional`
            whether to copy ``data`` even when it already is a float64 array.

        Returns
        -------
        img: :class:`numpy.ndarray`
            a float64 array of shape ``(H, W, C)`` with values in ``[0, 1]``.

        Raises
        ------
        ShapeError:
            ``data`` is not three dimensional or has an empty axis.
        ValueError:
            ``data`` holds values outside of ``[0, 1]`` or non-finite values.
    """

    img = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    if img.ndim != 3 or min(img.shape) < 1:
        raise ShapeError(f"image tensor must have shape (H, W, C), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image tensor holds non-finite values")
    if img.min() < 0 or img.max() > 1:
        raise ValueError("image tensor values must lie in [0, 1]")

    img.setflags(write=False)
    return img

def to_rgb(img):
    """
        Return a three channel view of ``img``; single channel images are
        replicated into neutral grays.

        Raises
        ------
        ShapeError:
            ``img`` has neither 1 nor 3 channels.
    """

    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError(f"expected 1 or 3 channels, got shape {img.shape}")
    if img.shape[2] == 1:
        return np.repeat(img, 3, axis=2)
    return img



### Color Conversion ###
def srgb_to_lab(img):
    """
        Convert an sRGB image tensor to CIELAB through linear RGB and XYZ (D65).

        Parameters
        ----------
        img: :class:`numpy.ndarray`
            an image tensor with ``C = 3``.

        Returns
        -------
        lab: :class:`numpy.ndarray`
            an array of shape ``(H, W, 3)`` holding ``(L, a, b)`` per pixel, with
            ``L`` in ``[0, 100]``.

        Raises
        ------
        ShapeError:
            ``img`` does not have exactly 3 channels.
    """

    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"srgb_to_lab expects C = 3, got shape {img.shape}")

    return rgb2lab(img, illuminant=LAB_ILLUMINANT, observer=LAB_OBSERVER, channel_axis=-1)



### PNG Files ###
def load_png(path):
    """
        Read an 8-bit or 16-bit RGB or RGBA PNG file into an image tensor with
        ``C = 3``. Alpha channels are dropped, not composited.

        Parameters
        ----------
        path: :class:`str`
            the file path.

        Returns
        -------
        img: :class:`numpy.ndarray`
            the image tensor, intensities divided by the bit-depth maximum.

        Raises
        ------
        ImageReadError:
            the file cannot be opened or is not a PNG file.
        UnsupportedColorTypeError:
            the PNG is not RGB or RGBA (grayscale, palette, ...).
    """

    try:
        with Image.open(path) as png:
            if png.format != "PNG":
                raise ImageReadError(f"'{path}' is not a PNG file")
            # Pillow reports the color type of 16-bit files as RGB/RGBA too
            mode = png.mode
            if mode not in ("RGB", "RGBA"):
                raise UnsupportedColorTypeError(
                    f"'{path}' has unsupported color type '{mode}' (RGB/RGBA only)"
                )
            png.verify()
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            UnidentifiedImageError) as error:
        raise ImageReadError(f"Could not read '{path}': {error}") from error
    except (OSError, SyntaxError) as error:
        if isinstance(error, ImageReadError):
            raise
        raise ImageReadError(f"Could not decode '{path}': {error}") from error

    # Pillow truncates 16-bit color samples, OpenCV keeps the stored depth
    data = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if data is None or data.ndim != 3 or data.shape[2] not in (3, 4):
        raise ImageReadError(f"Could not decode '{path}'")

    bit_max = np.iinfo(data.dtype).max
    # BGR(A) to RGB
    rgb = data[..., 2::-1].astype(np.float64)
    return as_image_tensor(rgb / bit_max, copy=False)

def save_png(img, path):
    """
        Write an image tensor as an 8-bit RGB PNG file (single channel tensors are
        written as neutral grays).
    """

    rgb = to_rgb(np.asarray(img, dtype=np.float64))
    data = np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")



### Raw Tensor Files ###
def write_rtf(array, path, dtype="f32"):
    """
        Write ``array`` using the raw tensor format: a one line JSON header
        ``{"shape":[...],"dtype":"f32"|"i32"}``, a newline byte, then the
        little-endian payload in row-major order.

        Raises
        ------
        TensorFormatError:
            ``dtype`` is not a supported payload type.
    """

    if dtype not in RTF_DTYPES:
        raise TensorFormatError(f"Unsupported rtf dtype '{dtype}'")

    array = np.asarray(array)
    header = json.dumps({"shape": [int(d) for d in array.shape], "dtype": dtype},
                        separators=(",", ":"))
    payload = np.ascontiguousarray(array, dtype=RTF_DTYPES[dtype]).tobytes()

    with open(path, "wb") as rtf_file:
        rtf_file.write(header.encode("ascii") + b"\n")
        rtf_file.write(payload)

def read_rtf(path):
    """
        Read a raw tensor file.

        Returns
        -------
        array: :class:`numpy.ndarray`
            the payload reshaped to the header's shape, float64 for ``f32`` files
            and int64 for ``i32`` files.
        dtype: :class:`str`
            the header's dtype tag.

        Raises
        ------
        ImageReadError:
            the file cannot be opened.
        TensorFormatError:
            the header is missing, is not valid JSON or declares an invalid
            shape or dtype.
        PayloadLengthError:
            the payload length does not match the declared shape.
    """

    try:
        with open(path, "rb") as rtf_file:
            raw = rtf_file.read()
    except OSError as error:
        raise ImageReadError(f"Could not read '{path}': {error}") from error

    newline = raw.find(b"\n")
    if newline < 0:
        raise TensorFormatError(f"'{path}' has no header line")

    try:
        header = json.loads(raw[:newline].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise TensorFormatError(f"'{path}' has a malformed header: {error}") from error

    if not isinstance(header, dict):
        raise TensorFormatError(f"'{path}' header must be a JSON object")

    shape = header.get("shape")
    dtype = header.get("dtype")
    if (not isinstance(shape, list) or not shape or
            not all(isinstance(d, int) and not isinstance(d, bool) and d > 0
                    for d in shape)):
        raise TensorFormatError(f"'{path}' declares an invalid shape {shape!r}")
    if dtype not in RTF_DTYPES:
        raise TensorFormatError(f"'{path}' declares an unsupported dtype {dtype!r}")

    payload = raw[newline + 1:]
    expected = int(np.prod(shape)) * RTF_DTYPES[dtype].itemsize
    if len(payload) != expected:
        raise PayloadLengthError(
            f"'{path}' payload has {len(payload)} bytes, shape {shape} needs {expected}"
        )

    array = np.frombuffer(payload, dtype=RTF_DTYPES[dtype]).reshape(shape)
    if dtype == "f32":
        return array.astype(np.float64), dtype
    return array.astype(np.int64), dtype

def save_raw_tensor(img, path):
    write_rtf(img, path, dtype="f32")

def load_raw_tensor(path):
    """
        Read an image tensor saved by ``save_raw_tensor``. Values that are exactly
        representable as 32-bit reals round-trip bit-exactly.

        Raises
        ------
        TensorFormatError:
            the file is not an ``f32`` tensor of shape ``(H, W, C)`` or holds
            values outside of ``[0, 1]``.
    """

    array, dtype = read_rtf(path)
    if dtype != "f32" or array.ndim != 3:
        raise TensorFormatError(
            f"'{path}' is not an image tensor (dtype {dtype}, shape {array.shape})"
        )

    try:
        return as_image_tensor(array, copy=False)
    except ValueError as error:
        raise TensorFormatError(f"'{path}': {error}") from error
