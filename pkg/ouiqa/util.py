"""Utility functions shared by the ouiqa modules: seed splitting, string
hashing, schema validation, YAML reading and small binary/text I/O helpers"""

from typing import Any, Callable, Dict, IO, Tuple, Type, Union
import gzip
import io
import os.path
import struct

import numpy as np
from jsonschema import validate  # type: ignore

# To use ruamel.yaml instead of pyyaml:
from ruamel.yaml import YAML  # type: ignore

yaml = YAML(typ="safe")
yaml.safe_load = yaml.load

SeedKey = Union[int, str]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(text: str) -> int:
    """Returns the 64-bit FNV-1a hash of the UTF-8 encoding of ``text``."""
    value = _FNV_OFFSET
    for byte in text.encode("utf8"):
        value ^= byte
        value = (value * _FNV_PRIME) & _MASK64
    return value


def derive_seed(*keys: SeedKey) -> int:
    """Splits a new 64-bit seed from a sequence of keys.

    Integer keys are used as entropy words, string keys are first hashed
    with :func:`fnv1a_64`. The keys feed a :class:`numpy.random.SeedSequence`
    and two 32-bit words of its state are combined in a single seed, so that
    the same keys give the same seed on every platform and in every thread.

    Args:
        keys: non-negative integers or strings. At least one is required.

    Returns:
        A seed in ``[0, 2**64)``.

    Raises:
        ValueError: if no keys are given or some integer key is negative.
    """
    if not keys:
        raise ValueError("derive_seed() requires at least one key")
    entropy = []
    for key in keys:
        if isinstance(key, str):
            entropy.append(fnv1a_64(key))
        else:
            key = int(key)
            if key < 0:
                raise ValueError("Seed keys must be non-negative, got {}".format(key))
            entropy.append(key)
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def parse_seed(value: Union[int, str]) -> int:
    """Converts a seed serialized as a decimal string (or an int) to int.

    Raises:
        ValueError: if the value is not a valid 64-bit unsigned integer.
    """
    seed = int(value)
    if not 0 <= seed <= _MASK64:
        raise ValueError("Seed out of the 64-bit range: {}".format(value))
    return seed


def get_schema() -> Dict[str, Any]:
    """Returns ouiqa's json schema which can be used to validate the
    configuration and distortion registry files"""

    path_to_schema = os.path.join(os.path.dirname(__file__), "ouiqa.schema.yaml")
    with open(path_to_schema) as schema_file:
        schema = yaml.safe_load(schema_file)
    return schema


def validate_against(data: Any, definition: str) -> None:
    """Validates ``data`` against one of the definitions of ouiqa's schema.

    Args:
        data: the result of reading some YAML file.
        definition: name of the entry under ``definitions`` in the schema,
            e.g. ``"Config"`` or ``"Registry"``.

    Raises:
        jsonschema.exceptions.ValidationError: if the data does not validate.
    """
    schema = get_schema()
    sub_schema = {
        "$schema": schema["$schema"],
        "definitions": schema["definitions"],
        "allOf": [{"$ref": "#/definitions/{}".format(definition)}],
    }
    validate(data, sub_schema)


def read_yaml(filename: str) -> Any:
    """Reads a ``.yaml`` or ``.yaml.gz`` file and returns its content."""
    with open_text(filename, "r", kind="yaml") as stream:
        return yaml.safe_load(stream)


def open_text(filename: str, mode: str = "r", kind: str = "yaml") -> IO[str]:
    """Opens a text file which has extension ``.kind`` or ``.kind.gz``.

    Compressed files are written with a zero timestamp, so that the same
    content always produces the same bytes.

    Raises:
        ValueError: if the file has not the expected extension.
    """
    _open = _get_open_function_from_extension(filename, kind)
    if _open is gzip.open:
        raw = gzip.GzipFile(filename, mode=mode + "b", mtime=0)
        return io.TextIOWrapper(raw, encoding="utf8", newline="\n")
    return open(filename, mode=mode + "t", encoding="utf8", newline="\n")


def resolve_relative_to(filename: str, relative_to: str) -> str:
    """Returns the absolute path of ``filename``, considered relative to the
    directory which contains ``relative_to``.

    Examples:
        * ``resolve_relative_to("img.png", "corpus/manifest.jsonl")``
            gives the absolute path of ``"corpus/img.png"``
        * absolute filenames are returned unchanged.
    """
    if os.path.isabs(filename):
        return filename
    path_to_input = os.path.abspath(relative_to)
    return os.path.normpath(os.path.join(os.path.dirname(path_to_input), filename))


class BinaryReader:
    """Sequential reader of little-endian binary payloads.

    Every read failure (truncation, bad utf8) is reported with the
    exception class given to the constructor, so that each file format
    raises its own error.
    """

    def __init__(self, content: bytes, error: Type[Exception], name: str = "") -> None:
        self.content = content
        self.error = error
        self.name = name
        self.position = 0

    def take(self, fmt: str) -> Tuple[Any, ...]:
        """Unpacks ``fmt`` (a :mod:`struct` format) at the current position."""
        size = struct.calcsize(fmt)
        if self.position + size > len(self.content):
            raise self.error("{}: truncated payload".format(self.name))
        values = struct.unpack_from(fmt, self.content, self.position)
        self.position += size
        return values

    def take_bytes(self, size: int) -> bytes:
        """Returns the next ``size`` raw bytes."""
        if self.position + size > len(self.content):
            raise self.error("{}: truncated payload".format(self.name))
        chunk = self.content[self.position : self.position + size]
        self.position += size
        return chunk

    def take_string(self) -> str:
        """Reads an u16 length followed by that many UTF-8 bytes."""
        (length,) = self.take("<H")
        try:
            return self.take_bytes(length).decode("utf8")
        except UnicodeDecodeError as excep:
            raise self.error("{}: invalid utf8 string".format(self.name)) from excep

    def take_floats(self, count: int) -> np.ndarray:
        """Reads ``count`` little-endian float32 values as float64."""
        chunk = self.take_bytes(4 * count)
        return np.frombuffer(chunk, dtype="<f4").astype(np.float64)

    def at_end(self) -> bool:
        """True if every byte of the payload was consumed."""
        return self.position == len(self.content)


def pack_string(text: str) -> bytes:
    """Packs a string as an u16 length followed by its UTF-8 bytes."""
    data = text.encode("utf8")
    if len(data) > 0xFFFF:
        raise ValueError("String too long to be packed: {!r}".format(text[:40]))
    return struct.pack("<H", len(data)) + data


def pack_floats(values: np.ndarray) -> bytes:
    """Packs an array as little-endian float32, row-major."""
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def _get_open_function_from_extension(filename: str, kind: str = "yaml") -> Callable:
    """Returns the function open is the extension is ``kind`` or
    'gzip.open' if it is ``kind``.gz'; otherwise, raises ValueError
    """
    if filename.endswith(".{}.gz".format(kind)):
        return gzip.open
    elif filename.endswith(".{}".format(kind)):
        return open
    else:
        raise ValueError("Invalid filename. Should be .{} or .{}.gz".format(kind, kind))


__all__ = [
    "fnv1a_64",
    "derive_seed",
    "parse_seed",
    "get_schema",
    "validate_against",
    "read_yaml",
    "open_text",
    "resolve_relative_to",
]
