# coding: utf-8
"""Text prompts describing distorted images, and their embeddings.

A prompt follows the template::

    This photo has {a distortion|multiple distortions} such as {names}.
    The quality is {adjective}. This image shows {caption}.

(in a single line). Prompts are embedded without any language model: each
token is mapped to a fixed pseudo-random unit vector, seeded by the FNV-1a
hash of the token, and the sentence embedding is a position-weighted mean
with extra weight on the quality adjective. Precomputed embeddings can
also be read from (and written to) binary ``HRQE`` files.
"""

from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Tuple
import functools
import re
import struct

import numpy as np

from .model import remove_namedtuple_defaultdoc
from .distort import Recipe, RecipeError
from .util import BinaryReader, fnv1a_64, pack_floats, pack_string

ADJECTIVES = ("excellent", "good", "average", "poor", "bad")
"""Quality adjectives, from the least to the most severe."""

DEFAULT_CAPTION = "an image"
DEFAULT_TEXT_WIDTH = 64
MIN_TEXT_WIDTH = 8
ADJECTIVE_WEIGHT = 2.0

EMBEDDINGS_MAGIC = b"HRQE"
EMBEDDINGS_VERSION = 1
_NORM_TOLERANCE = 1e-6

PROMPT_GRAMMAR = re.compile(
    r"^This photo has (?P<clause>a distortion|multiple distortions) such as (?P<names>.+?)\. "
    r"The quality is (?P<adjective>{})\. This image shows (?P<caption>.*)\.$".format(
        "|".join(ADJECTIVES)
    ),
    re.DOTALL,
)
_TOKEN = re.compile(r"[a-z0-9]+")


class SeverityRangeError(ValueError):
    """The severity is not in [0, 1]"""


class EmbeddingFileError(ValueError):
    """The embeddings file is malformed or has an unexpected width"""


@remove_namedtuple_defaultdoc
class Prompt(NamedTuple):
    """A rendered prompt and its parts."""

    distortion_names: Tuple[str, ...]
    """Tuple[str, ...]: registry ids of the steps, in application order."""

    quality_adjective: str
    """str: one of :data:`ADJECTIVES`."""

    caption: str
    """str: semantic caption of the image."""

    rendered: str
    """str: the full prompt."""


@remove_namedtuple_defaultdoc
class PromptEmbedding(NamedTuple):
    """Unit-norm embedding of a prompt."""

    vector: np.ndarray
    """numpy.ndarray: float vector of width D_text and unit norm."""

    @property
    def width(self) -> int:
        """int: D_text."""
        return len(self.vector)


def severity_adjective(severity: float) -> str:
    """Quality adjective of a severity, by equal bins of width 0.2; the top
    bin includes 1.0.

    Raises:
        SeverityRangeError: if ``severity`` is not in [0, 1].
    """
    if not 0.0 <= severity <= 1.0:
        raise SeverityRangeError("Severity {} out of [0, 1]".format(severity))
    return ADJECTIVES[min(int(severity * len(ADJECTIVES)), len(ADJECTIVES) - 1)]


def render_prompt(names: Iterable[str], adjective: str, caption: str) -> str:
    """Fills the template."""
    names = list(names)
    clause = "a distortion" if len(names) == 1 else "multiple distortions"
    spoken = ", ".join(name.replace("-", " ") for name in names)
    return "This photo has {} such as {}. The quality is {}. This image shows {}.".format(
        clause, spoken, adjective, caption
    )


def build_prompt(recipe: Recipe, caption: str = DEFAULT_CAPTION) -> Prompt:
    """Prompt of a recipe. The adjective derives from the recipe severity
    (its maximum level).

    Raises:
        RecipeError: if the recipe has no steps.
    """
    if not recipe.steps:
        raise RecipeError("Cannot build the prompt of an empty recipe")
    names = tuple(step.kind for step in recipe.steps)
    adjective = severity_adjective(recipe.severity)
    return Prompt(names, adjective, caption, render_prompt(names, adjective, caption))


def parse_prompt(rendered: str) -> Tuple[str, List[str], str, str]:
    """Splits a rendered prompt in (clause, spoken names, adjective, caption).

    Raises:
        ValueError: if the text does not follow the template.
    """
    match = PROMPT_GRAMMAR.match(rendered)
    if match is None:
        raise ValueError("Not a quality prompt: {!r}".format(rendered))
    return (
        match.group("clause"),
        match.group("names").split(", "),
        match.group("adjective"),
        match.group("caption"),
    )


@functools.lru_cache(maxsize=4096)
def token_vector(token: str, width: int = DEFAULT_TEXT_WIDTH, vocab_seed: int = 0) -> np.ndarray:
    """Fixed unit vector of a token: a standard normal draw of
    ``default_rng(fnv1a_64(token) ^ vocab_seed)``, normalized. The result is
    read-only."""
    rng = np.random.default_rng(fnv1a_64(token) ^ int(vocab_seed))
    vector = rng.standard_normal(width)
    vector /= np.linalg.norm(vector)
    vector.setflags(write=False)
    return vector


def tokenize(text: str) -> List[str]:
    """Lowercase alphanumeric tokens of a text."""
    return _TOKEN.findall(text.lower())


def embed_text(
    text: str,
    adjective: Optional[str] = None,
    text_width: int = DEFAULT_TEXT_WIDTH,
    vocab_seed: int = 0,
) -> PromptEmbedding:
    """Embeds a text.

    The token at position ``p`` (from 0) has weight ``1/sqrt(1+p)``; the
    weighted mean of the token vectors is computed, the vector of
    ``adjective`` (if any) is added with weight :data:`ADJECTIVE_WEIGHT`,
    and the result is normalized.

    Raises:
        ValueError: if ``text_width`` is below :data:`MIN_TEXT_WIDTH` or the
            text has no tokens.
    """
    if text_width < MIN_TEXT_WIDTH:
        raise ValueError(
            "Text width must be at least {}, got {}".format(MIN_TEXT_WIDTH, text_width)
        )
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("Cannot embed a text without tokens: {!r}".format(text))
    weights = 1.0 / np.sqrt(1.0 + np.arange(len(tokens)))
    vectors = np.array([token_vector(token, text_width, vocab_seed) for token in tokens])
    embedding = weights @ vectors / weights.sum()
    if adjective is not None:
        embedding = embedding + ADJECTIVE_WEIGHT * token_vector(adjective, text_width, vocab_seed)
    return PromptEmbedding(embedding / np.linalg.norm(embedding))


def embed_prompt(
    prompt: Prompt, text_width: int = DEFAULT_TEXT_WIDTH, vocab_seed: int = 0
) -> PromptEmbedding:
    """Embedding of a prompt, stressing its quality adjective. Same inputs
    always give the same vector."""
    return embed_text(prompt.rendered, prompt.quality_adjective, text_width, vocab_seed)


def embed_rendered(
    rendered: str, text_width: int = DEFAULT_TEXT_WIDTH, vocab_seed: int = 0
) -> PromptEmbedding:
    """Like :func:`embed_prompt` for a rendered prompt; texts which do not
    follow the template are embedded without adjective emphasis."""
    try:
        _, _, adjective, _ = parse_prompt(rendered)
    except ValueError:
        adjective = None
    return embed_text(rendered, adjective, text_width, vocab_seed)


###############################################################################
# HRQE files
###############################################################################
def embeddings_bytes(table: Mapping[str, PromptEmbedding]) -> bytes:
    """Serializes a table of embeddings, in the order of the mapping.

    Layout (little endian): magic ``HRQE``, u32 version, u32 count, u32
    width, then per row the u16-prefixed UTF-8 id and ``width`` float32.

    Raises:
        EmbeddingFileError: if the rows have different widths.
    """
    widths = {embedding.width for embedding in table.values()}
    if len(widths) > 1:
        raise EmbeddingFileError("Embeddings of different widths: {}".format(sorted(widths)))
    width = widths.pop() if widths else 0
    chunks = [EMBEDDINGS_MAGIC, struct.pack("<III", EMBEDDINGS_VERSION, len(table), width)]
    for key, embedding in table.items():
        chunks.append(pack_string(key))
        chunks.append(pack_floats(embedding.vector))
    return b"".join(chunks)


def save_embeddings(filename: str, table: Mapping[str, PromptEmbedding]) -> None:
    """Writes :func:`embeddings_bytes` to a file."""
    with open(filename, "wb") as stream:
        stream.write(embeddings_bytes(table))


def embeddings_from_bytes(
    content: bytes, expected_width: Optional[int] = None, name: str = "<embeddings>"
) -> Dict[str, PromptEmbedding]:
    """Inverse of :func:`embeddings_bytes`. Rows whose norm is not 1 within
    1e-6 are normalized.

    Raises:
        EmbeddingFileError: on bad magic or version, truncated or trailing
            data, or a width different from ``expected_width``.
    """
    if content[:4] != EMBEDDINGS_MAGIC:
        raise EmbeddingFileError("{}: bad magic, not an embeddings file".format(name))
    reader = BinaryReader(content, EmbeddingFileError, name)
    reader.take_bytes(4)
    version, count, width = reader.take("<III")
    if version != EMBEDDINGS_VERSION:
        raise EmbeddingFileError("{}: unsupported version {}".format(name, version))
    if count and expected_width is not None and width != expected_width:
        raise EmbeddingFileError(
            "{}: embeddings of width {}, expected {}".format(name, width, expected_width)
        )
    table = {}
    for _ in range(count):
        key = reader.take_string()
        vector = reader.take_floats(width)
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise EmbeddingFileError("{}: row {!r} is all zeros".format(name, key))
        if abs(norm - 1.0) > _NORM_TOLERANCE:
            vector = vector / norm
        table[key] = PromptEmbedding(vector)
    if not reader.at_end():
        raise EmbeddingFileError("{}: trailing bytes after {} rows".format(name, count))
    return table


def load_embeddings(
    filename: str, expected_width: Optional[int] = None
) -> Dict[str, PromptEmbedding]:
    """Reads a HRQE file. See :func:`embeddings_from_bytes`."""
    with open(filename, "rb") as stream:
        content = stream.read()
    return embeddings_from_bytes(content, expected_width, filename)


__all__ = [
    "ADJECTIVES",
    "SeverityRangeError",
    "EmbeddingFileError",
    "Prompt",
    "PromptEmbedding",
    "severity_adjective",
    "build_prompt",
    "parse_prompt",
    "embed_text",
    "embed_prompt",
    "embed_rendered",
    "save_embeddings",
    "load_embeddings",
]
