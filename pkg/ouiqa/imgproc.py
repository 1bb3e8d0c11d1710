# coding: utf-8
"""Raster substrate of ouiqa: decoding and encoding of PNG and binary PPM
(P6) files, deterministic cropping and bilinear resizing.

Images are kept in memory as :class:`Image` instances, whose samples are
floating values in [0, 1] with shape ``(height, width, 3)``. Every function
in this module returns images whose samples are clamped to that range.
"""

from typing import NamedTuple, Union
import io
import os
import re

import numpy as np
from PIL import Image as PILImage  # type: ignore
from scipy import ndimage  # type: ignore

from .model import remove_namedtuple_defaultdoc

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

# P6 header: magic, width, height and maxval separated by whitespace or
# comments, and a single whitespace byte before the raster
_SEP = rb"(?:\s|#[^\n]*\n)+"
_PPM_HEADER = re.compile(rb"P6" + _SEP + rb"(\d+)" + _SEP + rb"(\d+)" + _SEP + rb"(\d+)\s")

PathLike = Union[str, "os.PathLike[str]"]


class ImageError(ValueError):
    """Base class of the errors raised while decoding or handling images"""


class UnreadableImageError(ImageError):
    """The file cannot be read"""


class UnsupportedFormatError(ImageError):
    """The file is not a PNG nor a binary PPM, or uses an unsupported depth"""


class CorruptHeaderError(ImageError):
    """The file has a known magic, but its header or payload is broken"""


class CropSizeError(ImageError):
    """The requested crop does not fit in the image"""


@remove_namedtuple_defaultdoc
class Image(NamedTuple):
    """Decoded RGB raster."""

    data: np.ndarray
    """numpy.ndarray: float64 samples in [0, 1], shape ``(height, width, 3)``,
        row-major and channel-interleaved."""

    @property
    def width(self) -> int:
        """int: number of columns."""
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        """int: number of rows."""
        return int(self.data.shape[0])

    @property
    def channels(self) -> int:
        """int: always 3."""
        return 3

    def __repr__(self):
        return "<Image {}x{}>".format(self.width, self.height)


def make_image(data: np.ndarray) -> Image:
    """Builds an :class:`Image` from an array, clamping the samples to [0, 1].

    Raises:
        ValueError: if the array is not ``(height, width, 3)`` with positive
            dimensions.
    """
    array = np.asarray(data, dtype=np.float64)
    if array.ndim != 3 or array.shape[2] != 3 or array.shape[0] < 1 or array.shape[1] < 1:
        raise ValueError("Image data must have shape (H, W, 3), got {}".format(array.shape))
    return Image(np.clip(array, 0.0, 1.0))


def load_image(path: PathLike) -> Image:
    """Reads a PNG or binary PPM (P6) file.

    Args:
        path: name of the file.

    Returns:
        The decoded image, with the 8-bit samples mapped to [0, 1] by v/255.

    Raises:
        UnreadableImageError: if the file cannot be read.
        UnsupportedFormatError: if the file is neither PNG nor P6.
        CorruptHeaderError: if the header or the payload is broken.
    """
    try:
        with open(path, "rb") as stream:
            content = stream.read()
    except OSError as excep:
        raise UnreadableImageError("Cannot read {}: {}".format(path, excep)) from excep
    return decode_image(content, name=str(path))


def decode_image(content: bytes, name: str = "<bytes>") -> Image:
    """Decodes the bytes of a PNG or P6 file. See :func:`load_image`."""
    if not content:
        raise UnreadableImageError("{}: empty file".format(name))
    if content.startswith(PNG_MAGIC):
        return _decode_png(content, name)
    if content[:2] == b"P6":
        return decode_ppm(content, name)
    if content[:1] == b"P" and content[1:2].isdigit():
        raise UnsupportedFormatError(
            "{}: unsupported netpbm variant {}".format(name, content[:2].decode("ascii"))
        )
    raise UnsupportedFormatError("{}: unknown image format".format(name))


def decode_ppm(content: bytes, name: str = "<bytes>") -> Image:
    """Decodes a binary PPM (P6) with maxval 255."""
    match = _PPM_HEADER.match(content)
    if match is None:
        raise CorruptHeaderError("{}: malformed P6 header".format(name))
    width, height, maxval = (int(group) for group in match.groups())
    if width == 0 or height == 0:
        raise CorruptHeaderError("{}: zero-sized raster {}x{}".format(name, width, height))
    if maxval != 255:
        raise UnsupportedFormatError(
            "{}: only maxval 255 is supported, got {}".format(name, maxval)
        )
    start = match.end()
    size = width * height * 3
    payload = content[start : start + size]
    if len(payload) < size:
        raise CorruptHeaderError(
            "{}: truncated raster ({} of {} bytes)".format(name, len(payload), size)
        )
    raster = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(raster.astype(np.float64) / 255.0)


def _decode_png(content: bytes, name: str) -> Image:
    try:
        with PILImage.open(io.BytesIO(content)) as pil_image:
            pil_image.load()
            if pil_image.mode.startswith("I") or pil_image.mode == "F":
                raise UnsupportedFormatError(
                    "{}: unsupported PNG sample depth (mode {})".format(name, pil_image.mode)
                )
            # Alpha, palette and grayscale are all flattened to RGB
            raster = np.asarray(pil_image.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as excep:
        raise CorruptHeaderError("{}: corrupt PNG ({})".format(name, excep)) from excep
    return Image(raster.astype(np.float64) / 255.0)


def to_bytes(img: Image) -> np.ndarray:
    """Quantizes the samples of an image to uint8, rounding half up."""
    return np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_ppm(img: Image) -> bytes:
    """Encodes an image as binary PPM with the canonical header
    ``P6\\n<width> <height>\\n255\\n``."""
    header = "P6\n{} {}\n255\n".format(img.width, img.height).encode("ascii")
    return header + to_bytes(img).tobytes()


def save_image(img: Image, path: PathLike) -> None:
    """Writes the image as ``.ppm`` (P6) or ``.png``, depending on the extension.

    Raises:
        UnsupportedFormatError: for any other extension.
    """
    extension = os.path.splitext(str(path))[1].lower()
    if extension == ".ppm":
        with open(path, "wb") as stream:
            stream.write(encode_ppm(img))
    elif extension == ".png":
        PILImage.fromarray(to_bytes(img)).save(path, format="PNG")
    else:
        raise UnsupportedFormatError("Cannot write images with extension {!r}".format(extension))


def random_crop(img: Image, size: int, seed: int) -> Image:
    """Extracts a ``size`` x ``size`` sub-image at a seeded random offset.

    The offset is drawn from ``numpy.random.default_rng(seed)``: first the
    top row, ``integers(0, height - size + 1)``, then the left column,
    ``integers(0, width - size + 1)``.

    Raises:
        CropSizeError: if ``size`` is not positive or exceeds the image.
    """
    if size < 1 or size > min(img.width, img.height):
        raise CropSizeError(
            "Crop size {} does not fit in a {}x{} image".format(size, img.width, img.height)
        )
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, img.height - size + 1))
    left = int(rng.integers(0, img.width - size + 1))
    return Image(img.data[top : top + size, left : left + size].copy())


def resize_shortest_side(img: Image, target: int) -> Image:
    """Bilinear resize so that the shortest side becomes ``target`` pixels.

    The aspect ratio is kept (the longest side is rounded half up), and the
    sampling grid is aligned on pixel centers. Images whose shortest side
    already equals ``target`` are returned unchanged.

    Raises:
        ValueError: if ``target`` is not positive.
    """
    if target < 1:
        raise ValueError("Resize target must be positive, got {}".format(target))
    height, width = img.height, img.width
    short = min(height, width)
    if short == target:
        return img
    # round half up, in integer arithmetic
    new_height = (2 * height * target + short) // (2 * short)
    new_width = (2 * width * target + short) // (2 * short)
    rows = _source_coordinates(height, new_height)
    cols = _source_coordinates(width, new_width)
    grid = np.meshgrid(rows, cols, indexing="ij")
    channels = [
        ndimage.map_coordinates(img.data[..., c], grid, order=1, mode="nearest")
        for c in range(3)
    ]
    return Image(np.clip(np.stack(channels, axis=-1), 0.0, 1.0))


def _source_coordinates(size: int, new_size: int) -> np.ndarray:
    scale = size / new_size
    coords = (np.arange(new_size) + 0.5) * scale - 0.5
    return np.clip(coords, 0.0, size - 1.0)


def luma(data: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an ``(..., 3)`` array."""
    return data[..., 0] * 0.299 + data[..., 1] * 0.587 + data[..., 2] * 0.114


__all__ = [
    "Image",
    "ImageError",
    "UnreadableImageError",
    "UnsupportedFormatError",
    "CorruptHeaderError",
    "CropSizeError",
    "make_image",
    "load_image",
    "decode_image",
    "decode_ppm",
    "encode_ppm",
    "save_image",
    "random_crop",
    "resize_shortest_side",
]
