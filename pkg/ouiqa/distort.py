# coding: utf-8
"""Image degradation model: a registry of distortion kinds grouped in seven
categories, continuous severity levels obtained by interpolating the
five-row parameter tables, seeded recipe sampling and sequential
application of the recipe steps.

Typical use::

    recipe = sample_recipe(rng_seed=42, max_steps=7, sigma_off=0.3)
    degraded = degrade(image, recipe)
    print(recipe.severity)

All randomness comes from explicit seeds, so that ``(image, recipe)``
always produces bit-identical results, whatever the thread doing the work.
"""

from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    Iterator,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)
from collections import OrderedDict
from functools import lru_cache
import logging
import math
import os.path

import numpy as np
from jsonschema import exceptions as schema_exceptions  # type: ignore
from scipy import fft, ndimage  # type: ignore

from .model import remove_namedtuple_defaultdoc
from .imgproc import Image, luma
from .features import colorfulness, laplacian_energy
from .util import derive_seed, parse_seed, read_yaml, validate_against

logger = logging.getLogger(__name__)

CATEGORIES = (
    "brightness-change",
    "blur",
    "spatial",
    "color",
    "compression",
    "noise",
    "sharpness-contrast",
)
"""The seven distortion categories."""

MAX_STEPS = 7
"""Maximum number of steps of a recipe (one per category)."""

LEVELS = 5
"""Number of rows of every parameter table."""

DEFAULT_REGISTRY = os.path.join(os.path.dirname(__file__), "distortions.yaml")


class DistortError(ValueError):
    """Base class of the errors raised by this module"""


class UnknownKindError(DistortError, KeyError):
    """The distortion kind is not in the registry"""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class RegistryError(DistortError):
    """The registry file is malformed or incomplete"""


class RecipeError(DistortError):
    """The recipe (or one of its steps) is not valid"""


###############################################################################
# Entities
###############################################################################
@remove_namedtuple_defaultdoc
class DistortionKind(NamedTuple):
    """One registry entry."""

    id: str
    """str: stable identifier, e.g. ``"gaussian-blur"``."""

    category: str
    """str: one of :data:`CATEGORIES`."""

    operation: str
    """str: name of the function in :data:`OPERATIONS` which implements it."""

    param_table: Tuple[Mapping[str, float], ...]
    """Tuple[Mapping[str, float], ...]: five rows of named parameters,
        ordered by increasing severity."""

    stochastic: bool
    """bool: whether the operation consumes the step seed."""

    integer_params: Tuple[str, ...] = ()
    """Tuple[str, ...]: parameters rounded half up after interpolation."""

    energy_statistic: str = "deviation"
    """str: statistic of :data:`ENERGY_STATISTICS` monotone in the level."""

    energy_direction: str = "increasing"
    """str: ``"increasing"`` or ``"decreasing"``."""


@remove_namedtuple_defaultdoc
class DistortionStep(NamedTuple):
    """A distortion kind applied at a continuous level."""

    kind: str
    """str: id of the :class:`DistortionKind`."""

    level: float
    """float: continuous severity level in [1, 5]."""


@remove_namedtuple_defaultdoc
class Recipe(NamedTuple):
    """Ordered and seeded list of distortion steps. Use :func:`make_recipe`
    to build one, so that the severity is computed and checked."""

    steps: Tuple[DistortionStep, ...]
    """Tuple[:class:`DistortionStep`, ...]: steps in application order."""

    seed: int
    """int: 64-bit seed from which the per-step seeds are split."""

    severity: float
    """float: normalized maximum step level, in [0, 1]."""


###############################################################################
# Operations. Each one receives the (H, W, 3) samples, the step seed and the
# parameters of one row, and returns new samples (clamped by the caller)
###############################################################################
def _brightness(data: np.ndarray, seed: int, offset: float) -> np.ndarray:
    return data + offset


def _gaussian_blur(data: np.ndarray, seed: int, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return data.copy()
    return ndimage.gaussian_filter(data, sigma=(sigma, sigma, 0), mode="reflect")


def motion_kernel(length: float) -> np.ndarray:
    """Horizontal motion kernel of (possibly fractional) ``length`` taps.

    The kernel has unit weights on the central ``2r + 1`` taps, with
    ``r = floor((length - 1) / 2)``, plus the fractional remainder on the two
    outer taps, so that its support grows continuously with ``length``.
    """
    half = max(length - 1.0, 0.0) / 2.0
    radius = int(math.floor(half))
    frac = half - radius
    taps = np.ones(2 * radius + 1)
    if frac > 0:
        taps = np.concatenate(([frac], taps, [frac]))
    return taps / taps.sum()


def _motion_blur(data: np.ndarray, seed: int, length: float) -> np.ndarray:
    return ndimage.correlate1d(data, motion_kernel(length), axis=1, mode="reflect")


def block_means(channel: np.ndarray, factor: float) -> np.ndarray:
    """Replaces each cell of a ``factor``-sized grid of a 2D array by its mean.

    The number of cells along each axis is ``size / factor`` rounded half up
    (at least one), so that non-integer factors are accepted.
    """
    height, width = channel.shape
    cells_h = max(1, int(math.floor(height / factor + 0.5)))
    cells_w = max(1, int(math.floor(width / factor + 0.5)))
    row_cell = (np.arange(height) * cells_h) // height
    col_cell = (np.arange(width) * cells_w) // width
    labels = (row_cell[:, None] * cells_w + col_cell[None, :]).ravel()
    sums = np.bincount(labels, weights=channel.ravel(), minlength=cells_h * cells_w)
    counts = np.bincount(labels, minlength=cells_h * cells_w)
    return (sums / counts)[labels].reshape(height, width)


def _pixelate(data: np.ndarray, seed: int, factor: float) -> np.ndarray:
    return np.stack([block_means(data[..., c], factor) for c in range(3)], axis=-1)


def _jitter(data: np.ndarray, seed: int, displacement: float) -> np.ndarray:
    height, width = data.shape[:2]
    rng = np.random.default_rng(seed)
    offsets = rng.standard_normal((2, height, width)) * displacement
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    coords = [rows + offsets[0], cols + offsets[1]]
    return np.stack(
        [
            ndimage.map_coordinates(data[..., c], coords, order=1, mode="reflect")
            for c in range(3)
        ],
        axis=-1,
    )


def _saturation(data: np.ndarray, seed: int, factor: float) -> np.ndarray:
    gray = luma(data)[..., None]
    return gray + factor * (data - gray)


def _quantize(data: np.ndarray, seed: int, bins: int) -> np.ndarray:
    steps = max(int(bins) - 1, 1)
    return np.floor(data * steps + 0.5) / steps


_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCBCR_INV = np.linalg.inv(_YCBCR)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])


def rgb_to_ycbcr(data: np.ndarray) -> np.ndarray:
    """Full-range (JFIF) YCbCr, with chroma centered at 0.5."""
    return data @ _YCBCR.T + _CHROMA_OFFSET


def ycbcr_to_rgb(data: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_ycbcr`."""
    return (data - _CHROMA_OFFSET) @ _YCBCR_INV.T


# Quantization tables of the IJG reference encoder (quality 50)
_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
_CHROMA_TABLE = np.full((8, 8), 99.0)
_CHROMA_TABLE[:4, :4] = [
    [17, 18, 24, 47],
    [18, 21, 26, 66],
    [24, 26, 56, 99],
    [47, 66, 99, 99],
]


def quantization_table(base: np.ndarray, quality: int) -> np.ndarray:
    """Scales a quality-50 table to ``quality`` (1..100) with the IJG rule."""
    quality = min(max(int(quality), 1), 100)
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.maximum(np.floor((base * scale + 50.0) / 100.0), 1.0)


def _blockwise(channel: np.ndarray, table: np.ndarray) -> np.ndarray:
    height, width = channel.shape
    pad_h, pad_w = (-height) % 8, (-width) % 8
    padded = np.pad(channel, ((0, pad_h), (0, pad_w)), mode="edge")
    rows, cols = padded.shape[0] // 8, padded.shape[1] // 8
    blocks = padded.reshape(rows, 8, cols, 8).transpose(0, 2, 1, 3)
    coefficients = fft.dctn(blocks, axes=(-2, -1), norm="ortho")
    coefficients = np.round(coefficients / table) * table
    blocks = fft.idctn(coefficients, axes=(-2, -1), norm="ortho")
    restored = blocks.transpose(0, 2, 1, 3).reshape(padded.shape)
    return restored[:height, :width]


def _block_quantization(data: np.ndarray, seed: int, quality: int) -> np.ndarray:
    ycc = rgb_to_ycbcr(data) * 255.0 - 128.0
    tables = (
        quantization_table(_LUMA_TABLE, quality),
        quantization_table(_CHROMA_TABLE, quality),
        quantization_table(_CHROMA_TABLE, quality),
    )
    restored = np.stack([_blockwise(ycc[..., c], tables[c]) for c in range(3)], axis=-1)
    return ycbcr_to_rgb((restored + 128.0) / 255.0)


def _chroma_subsampling(data: np.ndarray, seed: int, factor: float) -> np.ndarray:
    ycc = rgb_to_ycbcr(data)
    for c in (1, 2):
        ycc[..., c] = block_means(ycc[..., c], factor)
    return ycbcr_to_rgb(ycc)


def _gaussian_noise(data: np.ndarray, seed: int, sigma: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return data + rng.normal(0.0, sigma, size=data.shape)


def _impulse_noise(data: np.ndarray, seed: int, probability: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    hit = rng.random(data.shape) < probability
    salt = rng.random(data.shape) < 0.5
    result = data.copy()
    result[hit & salt] = 1.0
    result[hit & ~salt] = 0.0
    return result


def _contrast(data: np.ndarray, seed: int, factor: float) -> np.ndarray:
    mean = data.mean(axis=(0, 1), keepdims=True)
    return mean + factor * (data - mean)


def _unsharp_mask(data: np.ndarray, seed: int, amount: float, radius: float) -> np.ndarray:
    blurred = ndimage.gaussian_filter(data, sigma=(radius, radius, 0), mode="reflect")
    return data + amount * (data - blurred)


OPERATIONS: Dict[str, Tuple[Callable[..., np.ndarray], Tuple[str, ...]]] = {
    "brightness": (_brightness, ("offset",)),
    "gaussian_blur": (_gaussian_blur, ("sigma",)),
    "motion_blur": (_motion_blur, ("length",)),
    "pixelate": (_pixelate, ("factor",)),
    "jitter": (_jitter, ("displacement",)),
    "saturation": (_saturation, ("factor",)),
    "quantize": (_quantize, ("bins",)),
    "block_quantization": (_block_quantization, ("quality",)),
    "chroma_subsampling": (_chroma_subsampling, ("factor",)),
    "gaussian_noise": (_gaussian_noise, ("sigma",)),
    "impulse_noise": (_impulse_noise, ("probability",)),
    "contrast": (_contrast, ("factor",)),
    "unsharp_mask": (_unsharp_mask, ("amount", "radius")),
}
"""Operation name -> (function, names of its parameters)."""


###############################################################################
# Energy statistics, used to check that every kind is monotone in its level
###############################################################################
def _deviation(reference: np.ndarray, distorted: np.ndarray) -> float:
    return float(np.mean((distorted - reference) ** 2))


ENERGY_STATISTICS: Dict[str, Callable[[np.ndarray, np.ndarray], float]] = {
    "mean_intensity": lambda reference, distorted: float(distorted.mean()),
    "laplacian_energy": lambda reference, distorted: laplacian_energy(luma(distorted)),
    "deviation": _deviation,
    "colorfulness": lambda reference, distorted: colorfulness(distorted),
    "luma_std": lambda reference, distorted: float(np.std(luma(distorted))),
}


def energy_statistic(kind: DistortionKind, reference: Image, distorted: Image) -> float:
    """Evaluates the energy statistic declared by ``kind`` on a distorted image.

    Args:
        kind: the distortion kind, which names the statistic.
        reference: the image before the distortion (used by ``deviation``).
        distorted: the image after the distortion.
    """
    return ENERGY_STATISTICS[kind.energy_statistic](reference.data, distorted.data)


###############################################################################
# Registry
###############################################################################
class DistortionRegistry(Mapping[str, DistortionKind]):
    """Immutable collection of :class:`DistortionKind`, indexed by id.

    Usage::

        registry = load_registry()
        kind = registry["gaussian-blur"]
        registry.ids_in("blur")   # ('gaussian-blur', 'motion-blur')
    """

    def __init__(self, kinds: Iterable[DistortionKind]) -> None:
        self._kinds: Dict[str, DistortionKind] = OrderedDict()
        for kind in kinds:
            if kind.id in self._kinds:
                raise RegistryError("Duplicated distortion kind {!r}".format(kind.id))
            self._kinds[kind.id] = kind

    def __getitem__(self, kind_id: str) -> DistortionKind:
        try:
            return self._kinds[kind_id]
        except KeyError:
            raise UnknownKindError("Unknown distortion kind {!r}".format(kind_id)) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._kinds)

    def __len__(self) -> int:
        return len(self._kinds)

    def __repr__(self):
        return "<DistortionRegistry with {} kinds>".format(len(self))

    def categories(self) -> Tuple[str, ...]:
        """Sorted categories having at least one kind."""
        return tuple(sorted({kind.category for kind in self._kinds.values()}))

    def ids_in(self, category: str) -> Tuple[str, ...]:
        """Sorted ids of the kinds of ``category``."""
        return tuple(sorted(k.id for k in self._kinds.values() if k.category == category))

    def check_coverage(self, minimum: int = 2) -> None:
        """Checks that every one of the seven categories has ``minimum`` kinds.

        Raises:
            RegistryError: naming the first incomplete category.
        """
        for category in CATEGORIES:
            found = len(self.ids_in(category))
            if found < minimum:
                raise RegistryError(
                    "Category {!r} has {} kinds, at least {} required".format(
                        category, found, minimum
                    )
                )


def registry_from_dict(data: Mapping[str, Any], name: str = "<registry>") -> DistortionRegistry:
    """Builds a registry from the content of a registry YAML file.

    Raises:
        RegistryError: if the content does not validate against the
            ``Registry`` schema, or the rows do not match the parameters of
            the operation.
    """
    try:
        validate_against(data, "Registry")
    except schema_exceptions.ValidationError as excep:
        raise RegistryError("{}: {}".format(name, excep.message)) from excep

    kinds = []
    for entry in data["Distortion_kinds"]:
        _, expected = OPERATIONS[entry["operation"]]
        rows = tuple({key: float(value) for key, value in row.items()} for row in entry["levels"])
        for row in rows:
            if set(row) != set(expected):
                raise RegistryError(
                    "{}: kind {!r} has parameters {}, operation {!r} expects {}".format(
                        name, entry["id"], sorted(row), entry["operation"], sorted(expected)
                    )
                )
        integer_params = tuple(entry.get("integer_params", ()))
        unknown = set(integer_params) - set(expected)
        if unknown:
            raise RegistryError(
                "{}: kind {!r} declares unknown integer parameters {}".format(
                    name, entry["id"], sorted(unknown)
                )
            )
        kinds.append(
            DistortionKind(
                id=entry["id"],
                category=entry["category"],
                operation=entry["operation"],
                param_table=rows,
                stochastic=entry["stochastic"],
                integer_params=integer_params,
                energy_statistic=entry["energy"]["statistic"],
                energy_direction=entry["energy"]["direction"],
            )
        )
    return DistortionRegistry(kinds)


def load_registry(path: Optional[str] = None) -> DistortionRegistry:
    """Reads a registry file (``.yaml`` or ``.yaml.gz``).

    Args:
        path: the file to read. If omitted, the registry shipped with
            ouiqa is read and checked for coverage of the seven categories.

    Raises:
        RegistryError: if the file is malformed.
    """
    if path is None:
        return default_registry()
    return registry_from_dict(read_yaml(path), name=path)


@lru_cache(maxsize=None)
def default_registry() -> DistortionRegistry:
    """The registry shipped with ouiqa (cached)."""
    registry = registry_from_dict(read_yaml(DEFAULT_REGISTRY), name=DEFAULT_REGISTRY)
    registry.check_coverage()
    logger.debug("Loaded %d distortion kinds from %s", len(registry), DEFAULT_REGISTRY)
    return registry


def _resolve(
    kind: Union[str, DistortionKind], registry: Optional[DistortionRegistry]
) -> DistortionKind:
    if isinstance(kind, DistortionKind):
        return kind
    return (registry or default_registry())[kind]


###############################################################################
# Levels, steps and recipes
###############################################################################
def level_params(
    kind: Union[str, DistortionKind],
    level: float,
    registry: Optional[DistortionRegistry] = None,
) -> Dict[str, float]:
    """Parameters of a kind at a continuous level.

    For integer levels the table row is returned exactly. Otherwise each
    parameter is linearly interpolated between rows ``floor(level)`` and
    ``ceil(level)``, and integer parameters are rounded half up.

    Args:
        kind: a :class:`DistortionKind` or its id.
        level: value in [1, 5].
        registry: registry used to resolve ids (the default one if omitted).

    Raises:
        UnknownKindError: if the id is not in the registry.
        RecipeError: if the level is out of range.
    """
    kind = _resolve(kind, registry)
    if not 1.0 <= level <= LEVELS:
        raise RecipeError("Level {} out of range [1, {}]".format(level, LEVELS))
    low = int(math.floor(level))
    high = int(math.ceil(level))
    frac = level - low
    row_low = kind.param_table[low - 1]
    row_high = kind.param_table[high - 1]
    params = {}
    for name, value in row_low.items():
        if frac:
            value = value + frac * (row_high[name] - value)
        if name in kind.integer_params:
            value = int(math.floor(value + 0.5))
        params[name] = value
    return params


def apply_kind(
    img: Image, kind: Union[str, DistortionKind], params: Mapping[str, float], seed: int,
    registry: Optional[DistortionRegistry] = None,
) -> Image:
    """Applies a distortion kind with explicit parameters.

    This is the low level entry point used by :func:`apply_step`. It also
    allows identity parameterizations (e.g. a brightness offset of 0), which
    are not in any table row.

    Raises:
        UnknownKindError: if the id is not in the registry.
        RecipeError: if ``params`` does not match the operation.
    """
    kind = _resolve(kind, registry)
    function, expected = OPERATIONS[kind.operation]
    if set(params) != set(expected):
        raise RecipeError(
            "Kind {!r} expects parameters {}, got {}".format(
                kind.id, sorted(expected), sorted(params)
            )
        )
    data = function(img.data, seed, **params)
    return Image(np.clip(data, 0.0, 1.0))


def apply_step(
    img: Image, step: DistortionStep, step_seed: int, registry: Optional[DistortionRegistry] = None
) -> Image:
    """Applies one step, with the parameters of :func:`level_params`.

    Stochastic kinds draw their randomness from ``step_seed`` only.
    The result has the same dimensions and is clamped to [0, 1].
    """
    kind = _resolve(step.kind, registry)
    return apply_kind(img, kind, level_params(kind, step.level), step_seed)


def step_seed(recipe_seed: int, index: int) -> int:
    """Seed of the step at position ``index`` of a recipe."""
    return derive_seed(recipe_seed, "step", index)


def degrade(img: Image, recipe: Recipe, registry: Optional[DistortionRegistry] = None) -> Image:
    """Applies the steps of the recipe in order, each one with the seed
    given by :func:`step_seed`."""
    for index, step in enumerate(recipe.steps):
        img = apply_step(img, step, step_seed(recipe.seed, index), registry)
    return img


def severity(recipe: Union[Recipe, Sequence[DistortionStep]]) -> float:
    """Severity label of a recipe: ``(max level - 1) / 4``.

    Raises:
        RecipeError: if the recipe has no steps.
    """
    steps = recipe.steps if isinstance(recipe, Recipe) else recipe
    if not steps:
        raise RecipeError("Severity of an empty recipe is undefined")
    return (max(step.level for step in steps) - 1.0) / (LEVELS - 1)


def make_recipe(
    steps: Sequence[Union[DistortionStep, Tuple[str, float]]],
    seed: int = 0,
    registry: Optional[DistortionRegistry] = None,
) -> Recipe:
    """Builds a :class:`Recipe`, checking its steps and computing its severity.

    Raises:
        RecipeError: if there are no steps, more than :data:`MAX_STEPS`, or
            some level is out of [1, 5].
        UnknownKindError: if some kind is not in the registry.
    """
    checked = []
    for step in steps:
        step = DistortionStep(str(step[0]), float(step[1]))
        _resolve(step.kind, registry)
        if not 1.0 <= step.level <= LEVELS:
            raise RecipeError(
                "Level {} of {!r} out of range [1, {}]".format(step.level, step.kind, LEVELS)
            )
        checked.append(step)
    if len(checked) > MAX_STEPS:
        raise RecipeError("A recipe has at most {} steps, got {}".format(MAX_STEPS, len(checked)))
    return Recipe(tuple(checked), parse_seed(seed), severity(checked))


def sample_recipe(
    rng_seed: int,
    max_steps: int = MAX_STEPS,
    sigma_off: float = 0.3,
    registry: Optional[DistortionRegistry] = None,
) -> Recipe:
    """Draws a random recipe.

    The draws, all from ``numpy.random.default_rng(rng_seed)``, are: the
    number of steps ``integers(1, max_steps + 1)``; that many distinct
    categories ``choice(categories, count, replace=False)`` over the sorted
    categories; then, per chosen category, the kind ``choice`` over its
    sorted ids, the base level ``integers(1, 6)`` and the offset
    ``normal(0, sigma_off)``. The level is ``clip(base + offset, 1, 5)``.

    Args:
        rng_seed: 64-bit seed; it is also the seed of the recipe.
        max_steps: maximum number of steps, in [1, :data:`MAX_STEPS`].
        sigma_off: standard deviation of the level offset.
        registry: the kinds to draw from (the default registry if omitted).

    Raises:
        RecipeError: if ``max_steps`` is out of range.
    """
    if not 1 <= max_steps <= MAX_STEPS:
        raise RecipeError("max_steps must be in [1, {}], got {}".format(MAX_STEPS, max_steps))
    registry = registry or default_registry()
    categories = registry.categories()
    rng = np.random.default_rng(rng_seed)
    count = min(int(rng.integers(1, max_steps + 1)), len(categories))
    chosen = rng.choice(len(categories), size=count, replace=False)
    steps = []
    for index in chosen:
        ids = registry.ids_in(categories[int(index)])
        kind_id = ids[int(rng.choice(len(ids)))]
        base = int(rng.integers(1, LEVELS + 1))
        offset = float(rng.normal(0.0, sigma_off))
        level = min(max(base + offset, 1.0), float(LEVELS))
        steps.append(DistortionStep(kind_id, level))
    return Recipe(tuple(steps), parse_seed(rng_seed), severity(steps))


def parse_step(text: str) -> DistortionStep:
    """Parses ``"kind:level"``, e.g. ``"gaussian-blur:3.0"``.

    Raises:
        RecipeError: if the text is malformed.
    """
    kind, sep, level = text.rpartition(":")
    try:
        if not sep or not kind:
            raise ValueError(text)
        return DistortionStep(kind, float(level))
    except ValueError:
        raise RecipeError("Invalid step {!r}, expected KIND:LEVEL".format(text)) from None


def recipe_to_dict(recipe: Recipe) -> Dict[str, Any]:
    """Serializable form of a recipe; the seed is a decimal string."""
    return {
        "seed": str(recipe.seed),
        "severity": recipe.severity,
        "steps": [{"kind": step.kind, "level": step.level} for step in recipe.steps],
    }


def recipe_from_dict(
    data: Mapping[str, Any], registry: Optional[DistortionRegistry] = None
) -> Recipe:
    """Inverse of :func:`recipe_to_dict`. The severity is recomputed.

    Raises:
        RecipeError: if the data is malformed.
    """
    try:
        steps = [(step["kind"], step["level"]) for step in data["steps"]]
        seed = parse_seed(data["seed"])
    except (KeyError, TypeError, ValueError) as excep:
        raise RecipeError("Malformed recipe: {}".format(excep)) from excep
    return make_recipe(steps, seed, registry)


__all__ = [
    "CATEGORIES",
    "MAX_STEPS",
    "DistortError",
    "UnknownKindError",
    "RegistryError",
    "RecipeError",
    "DistortionKind",
    "DistortionStep",
    "Recipe",
    "DistortionRegistry",
    "OPERATIONS",
    "load_registry",
    "default_registry",
    "level_params",
    "apply_kind",
    "apply_step",
    "step_seed",
    "degrade",
    "severity",
    "make_recipe",
    "sample_recipe",
    "parse_step",
    "recipe_to_dict",
    "recipe_from_dict",
    "energy_statistic",
]
