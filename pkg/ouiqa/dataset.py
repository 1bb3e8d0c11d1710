# coding: utf-8
"""Corpus ingestion and deterministic training batches.

:func:`build_manifest` turns a directory of pristine images into a
JSON-lines manifest with ``V`` records per image. Each record stores the
seeds of its crop and of its distortion recipe, split from the master seed
with the image path and the variant index, so the degraded samples are
regenerated on the fly, exactly, when the batches are assembled by
:class:`BatchStream`.

The first line of the manifest is a header with the schema version and the
settings used to build it; every other line is one record. Seeds are
written as decimal strings and keys are sorted, so that the same inputs
always give the same bytes.
"""

from typing import Any, Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
import json
import logging
import math
import os
import os.path

import numpy as np
from jsonschema import ValidationError  # type: ignore

from .model import remove_namedtuple_defaultdoc
from .imgproc import Image, ImageError, load_image, random_crop, save_image
from .distort import (
    DistortError,
    DistortionRegistry,
    MAX_STEPS,
    Recipe,
    default_registry,
    degrade,
    load_registry,
    recipe_from_dict,
    recipe_to_dict,
    sample_recipe,
)
from .features import GridError, PatchFeatureGrid, extract_patch_features, stack_patches
from .prompts import (
    DEFAULT_CAPTION,
    DEFAULT_TEXT_WIDTH,
    PromptEmbedding,
    build_prompt,
    embed_rendered,
)
from .scorer import BatchRecord
from .util import (
    derive_seed,
    open_text,
    parse_seed,
    read_yaml,
    resolve_relative_to,
    validate_against,
)

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "ouiqa-manifest"
MANIFEST_VERSION = 1
IMAGE_EXTENSIONS = (".png", ".ppm")
CAPTIONS_FILE = "captions.yaml"
STRATA = 4


class EmptyCorpusError(ValueError):
    """The corpus holds no decodable image"""


class ManifestError(ValueError):
    """The manifest file is malformed"""


class RecordLoadError(RuntimeError):
    """Some record could not be turned into a training sample"""

    def __init__(self, record_id: str, message: str) -> None:
        super().__init__("Record {!r}: {}".format(record_id, message))
        self.record_id = record_id


@remove_namedtuple_defaultdoc
class DatasetSettings(NamedTuple):
    """Settings used to build a manifest and its samples."""

    crop_size: int = 64
    """int: side of the square training crops."""
    grid_rows: int = 8
    """int: patch rows of the feature grid."""
    grid_cols: int = 8
    """int: patch columns of the feature grid."""
    variants: int = 5
    """int: distorted samples (V) per pristine image."""
    max_steps: int = MAX_STEPS
    """int: maximum number of steps of the sampled recipes."""
    sigma_off: float = 0.3
    """float: standard deviation of the level offsets."""
    master_seed: int = 0
    """int: seed from which every record seed is split."""
    text_width: int = DEFAULT_TEXT_WIDTH
    """int: width of the prompt embeddings."""
    vocab_seed: int = 0
    """int: seed of the token vectors of the prompt embedder."""
    registry: Optional[str] = None
    """str: distortion registry file (None, the default registry)."""


@remove_namedtuple_defaultdoc
class ManifestRecord(NamedTuple):
    """One distorted training sample, described by its seeds."""

    record_id: str
    """str: ``"<relative image path>#<variant>"``."""
    source_path: str
    """str: image path, relative to the manifest file."""
    crop_seed: int
    """int: seed of :func:`ouiqa.imgproc.random_crop`."""
    recipe: Recipe
    """:class:`ouiqa.distort.Recipe`: distortions applied to the crop."""
    severity: float
    """float: severity label, equal to ``recipe.severity``."""
    prompt: str
    """str: rendered quality prompt."""
    caption: str
    """str: semantic caption of the source image."""
    variant_index: int
    """int: variant number, in ``[0, V)``."""


@remove_namedtuple_defaultdoc
class Manifest(NamedTuple):
    """Contents of a manifest file."""

    filename: str
    """str: path of the manifest file (source paths are relative to it)."""
    settings: DatasetSettings
    """:class:`DatasetSettings`: settings it was built with."""
    records: Tuple[ManifestRecord, ...]
    """Tuple[:class:`ManifestRecord`, ...]: records, in corpus order."""

    def source_of(self, record: ManifestRecord) -> str:
        """Absolute path of the image of a record."""
        return resolve_relative_to(record.source_path, self.filename)

    def registry(self) -> DistortionRegistry:
        """The registry the recipes refer to."""
        if self.settings.registry is None:
            return default_registry()
        return load_registry(resolve_relative_to(self.settings.registry, self.filename))


@remove_namedtuple_defaultdoc
class BuildSummary(NamedTuple):
    """Outcome of :func:`build_manifest`."""

    filename: str
    """str: manifest written."""
    images: int
    """int: images used."""
    records: int
    """int: records written."""
    skipped: Tuple[str, ...]
    """Tuple[str, ...]: files skipped because they could not be used."""


###############################################################################
# Manifest building
###############################################################################
def find_images(corpus_dir: str) -> List[str]:
    """Image files under ``corpus_dir``, as sorted relative paths with ``/``
    separators."""
    found = []
    for root, dirs, files in os.walk(corpus_dir):
        dirs.sort()
        for name in files:
            if name.lower().endswith(IMAGE_EXTENSIONS):
                path = os.path.relpath(os.path.join(root, name), corpus_dir)
                found.append(path.replace(os.sep, "/"))
    return sorted(found)


def read_captions(corpus_dir: str) -> Dict[str, str]:
    """Reads ``captions.yaml`` (``relative path: caption``) from the corpus,
    if present.

    Raises:
        ManifestError: if the file does not map names to strings.
    """
    path = os.path.join(corpus_dir, CAPTIONS_FILE)
    if not os.path.exists(path):
        return {}
    captions = read_yaml(path) or {}
    try:
        validate_against(captions, "Captions")
    except ValidationError as excep:
        raise ManifestError("{}: {}".format(path, excep.message)) from excep
    return dict(captions)


def _settings_to_dict(settings: DatasetSettings) -> Dict[str, Any]:
    data = settings._asdict()
    data["master_seed"] = str(settings.master_seed)
    data["vocab_seed"] = str(settings.vocab_seed)
    return data


def _settings_from_dict(data: Mapping[str, Any]) -> DatasetSettings:
    values = dict(data)
    values["master_seed"] = parse_seed(values["master_seed"])
    values["vocab_seed"] = parse_seed(values["vocab_seed"])
    return DatasetSettings(**values)


def _record_to_json(record: ManifestRecord) -> str:
    return json.dumps(
        {
            "id": record.record_id,
            "source": record.source_path,
            "variant": record.variant_index,
            "crop_seed": str(record.crop_seed),
            "recipe": recipe_to_dict(record.recipe),
            "severity": record.severity,
            "prompt": record.prompt,
            "caption": record.caption,
        },
        sort_keys=True,
    )


def _materialized_name(record_id: str) -> str:
    relpath, _, variant = record_id.rpartition("#")
    stem = os.path.splitext(relpath)[0].replace("/", "_")
    return "{}_v{}.png".format(stem, variant)


def build_manifest(
    corpus_dir: str,
    settings: DatasetSettings,
    out_path: str,
    materialize_dir: Optional[str] = None,
    jobs: int = 1,
    registry: Optional[DistortionRegistry] = None,
) -> BuildSummary:
    """Writes the manifest of a corpus.

    For each image (in sorted path order) and variant ``v``, the crop seed is
    ``derive_seed(master_seed, path, "crop", v)`` and the recipe is sampled
    with ``derive_seed(master_seed, path, "recipe", v)``. Files which cannot
    be decoded, or are smaller than the crop, are skipped with a warning.

    Args:
        corpus_dir: directory of pristine ``.png`` / ``.ppm`` images.
        settings: dataset settings.
        out_path: manifest to write, ``.jsonl`` or ``.jsonl.gz``.
        materialize_dir: if given, every degraded crop is also written
            there as PNG.
        jobs: number of worker threads. The output does not depend on it.
        registry: distortion registry (by default the one named in
            ``settings``, or the default registry).

    Returns:
        A :class:`BuildSummary`.

    Raises:
        EmptyCorpusError: if no image of the corpus can be used.
    """
    if registry is None:
        registry = load_registry(settings.registry) if settings.registry else default_registry()
    out_dir = os.path.dirname(os.path.abspath(out_path))
    if settings.registry is not None:
        settings = settings._replace(
            registry=os.path.relpath(os.path.abspath(settings.registry), out_dir)
        )
    captions = read_captions(corpus_dir)
    paths = find_images(corpus_dir)
    if materialize_dir is not None:
        os.makedirs(materialize_dir, exist_ok=True)

    def records_of(relpath: str) -> Optional[List[ManifestRecord]]:
        full_path = os.path.join(corpus_dir, relpath)
        source_path = os.path.relpath(os.path.abspath(full_path), out_dir).replace(os.sep, "/")
        try:
            img = load_image(full_path)
            records = []
            for variant in range(settings.variants):
                record_id = "{}#{}".format(relpath, variant)
                crop_seed = derive_seed(settings.master_seed, relpath, "crop", variant)
                crop = random_crop(img, settings.crop_size, crop_seed)
                recipe = sample_recipe(
                    derive_seed(settings.master_seed, relpath, "recipe", variant),
                    settings.max_steps,
                    settings.sigma_off,
                    registry,
                )
                caption = captions.get(
                    relpath, captions.get(os.path.basename(relpath), DEFAULT_CAPTION)
                )
                prompt = build_prompt(recipe, caption)
                if materialize_dir is not None:
                    save_image(
                        degrade(crop, recipe, registry),
                        os.path.join(materialize_dir, _materialized_name(record_id)),
                    )
                records.append(
                    ManifestRecord(
                        record_id=record_id,
                        source_path=source_path,
                        crop_seed=crop_seed,
                        recipe=recipe,
                        severity=recipe.severity,
                        prompt=prompt.rendered,
                        caption=caption,
                        variant_index=variant,
                    )
                )
            return records
        except ImageError as excep:
            logger.warning("Skipping %s: %s", full_path, excep)
            return None

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(records_of, paths))

    skipped = tuple(path for path, records in zip(paths, results) if records is None)
    used = [records for records in results if records is not None]
    if not used:
        raise EmptyCorpusError(
            "No usable image in {} ({} files skipped)".format(corpus_dir, len(skipped))
        )

    count = 0
    with open_text(out_path, "w", kind="jsonl") as stream:
        header = {
            "schema": MANIFEST_SCHEMA,
            "version": MANIFEST_VERSION,
            "settings": _settings_to_dict(settings),
        }
        stream.write(json.dumps(header, sort_keys=True) + "\n")
        for records in used:
            for record in records:
                stream.write(_record_to_json(record) + "\n")
                count += 1
    logger.info("Wrote %d records of %d images to %s", count, len(used), out_path)
    return BuildSummary(out_path, len(used), count, skipped)


###############################################################################
# Manifest reading
###############################################################################
def read_manifest(filename: str, registry: Optional[DistortionRegistry] = None) -> Manifest:
    """Reads a manifest written by :func:`build_manifest`.

    Recipes are rebuilt from their steps and their severity is checked
    against the stored one.

    Raises:
        ManifestError: if the header or some record is malformed.
    """
    try:
        with open_text(filename, "r", kind="jsonl") as stream:
            lines = [line for line in stream.read().split("\n") if line.strip()]
    except (OSError, EOFError) as excep:
        raise ManifestError("Cannot read manifest {}: {}".format(filename, excep)) from excep
    if not lines:
        raise ManifestError("{}: empty manifest".format(filename))
    try:
        header = json.loads(lines[0])
        if header.get("schema") != MANIFEST_SCHEMA or header.get("version") != MANIFEST_VERSION:
            raise ManifestError(
                "{}: unknown manifest schema {!r} version {!r}".format(
                    filename, header.get("schema"), header.get("version")
                )
            )
        settings = _settings_from_dict(header["settings"])
    except (ValueError, KeyError, TypeError) as excep:
        if isinstance(excep, ManifestError):
            raise
        raise ManifestError("{}: malformed header ({})".format(filename, excep)) from excep

    if registry is None:
        registry = (
            load_registry(resolve_relative_to(settings.registry, filename))
            if settings.registry
            else default_registry()
        )
    records = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            data = json.loads(line)
            recipe = recipe_from_dict(data["recipe"], registry)
            record = ManifestRecord(
                record_id=data["id"],
                source_path=data["source"],
                crop_seed=parse_seed(data["crop_seed"]),
                recipe=recipe,
                severity=float(data["severity"]),
                prompt=data["prompt"],
                caption=data["caption"],
                variant_index=int(data["variant"]),
            )
        except (ValueError, KeyError, TypeError) as excep:
            raise ManifestError(
                "{}:{}: malformed record ({})".format(filename, number, excep)
            ) from excep
        if abs(record.severity - recipe.severity) > 1e-12:
            raise ManifestError(
                "{}:{}: severity {} does not match its recipe ({})".format(
                    filename, number, record.severity, recipe.severity
                )
            )
        if not 0 <= record.variant_index < settings.variants:
            raise ManifestError(
                "{}:{}: variant {} out of [0, {})".format(
                    filename, number, record.variant_index, settings.variants
                )
            )
        records.append(record)
    return Manifest(filename, settings, tuple(records))


###############################################################################
# Batches
###############################################################################
def stratified_order(severities: Sequence[float], seed: int) -> List[int]:
    """Shuffles the records and interleaves the severity quartiles.

    Records are permuted with ``default_rng(seed)``, split in four strata by
    rank of ``(severity, shuffled position)``, and taken round-robin from
    the strata, each of which keeps the shuffled order.
    """
    n = len(severities)
    permutation = np.random.default_rng(seed).permutation(n)
    ranked = sorted(range(n), key=lambda position: (severities[permutation[position]], position))
    strata: List[List[int]] = [[] for _ in range(STRATA)]
    for rank, position in enumerate(ranked):
        strata[rank * STRATA // n].append(position)
    for stratum in strata:
        stratum.sort()
    order = []
    cursors = [0] * STRATA
    while len(order) < n:
        for index, stratum in enumerate(strata):
            if cursors[index] < len(stratum):
                order.append(int(permutation[stratum[cursors[index]]]))
                cursors[index] += 1
    return order


def _diverse(batch: Sequence[int], severities: Sequence[float]) -> bool:
    return len(batch) < 2 or len({severities[i] for i in batch}) >= 2


def repair_batches(batches: List[List[int]], severities: Sequence[float]) -> List[List[int]]:
    """Swaps records between batches until every batch of two or more
    records holds at least two distinct severities, when possible."""
    if len(set(severities)) < 2:
        return batches
    for batch in batches:
        if _diverse(batch, severities):
            continue
        value = severities[batch[0]]
        swapped = False
        for other in batches:
            if other is batch:
                continue
            for position, candidate in enumerate(other):
                if severities[candidate] == value:
                    continue
                rest = other[:position] + other[position + 1 :]
                if len(other) >= 2 and not any(severities[i] != value for i in rest):
                    continue
                other[position], batch[-1] = batch[-1], candidate
                swapped = True
                break
            if swapped:
                break
        if not swapped:
            logger.warning("Could not diversify a batch of severity %s", value)
    return batches


class BatchStream:
    """Deterministic stream of training batches over a manifest.

    Epochs count from 1. The record order of epoch ``e`` is
    :func:`stratified_order` keyed by ``derive_seed(master_seed, "epoch", e)``;
    it is cut in batches of ``batch_size`` and repaired by
    :func:`repair_batches`, so every record appears exactly once per epoch.
    Samples are prepared by a pool of ``jobs`` threads and returned in
    batch order; their features are cached across epochs.
    """

    def __init__(
        self,
        manifest: Manifest,
        batch_size: int,
        registry: Optional[DistortionRegistry] = None,
        jobs: int = 1,
        prompt_table: Optional[Mapping[str, PromptEmbedding]] = None,
    ) -> None:
        if not manifest.records:
            raise ManifestError("{}: the manifest has no records".format(manifest.filename))
        if batch_size < 1:
            raise ValueError("Batch size must be positive, got {}".format(batch_size))
        self.manifest = manifest
        self.batch_size = batch_size
        self.registry = registry or manifest.registry()
        self.jobs = max(1, jobs)
        self.prompt_table = prompt_table
        self.severities = [record.severity for record in manifest.records]
        self._features: Dict[int, PatchFeatureGrid] = {}
        self._prompts: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.manifest.records)

    @property
    def steps_per_epoch(self) -> int:
        """int: number of batches of an epoch."""
        return math.ceil(len(self) / self.batch_size)

    def epoch_batches(self, epoch: int) -> List[List[int]]:
        """Record indices of every batch of an epoch."""
        settings = self.manifest.settings
        order = stratified_order(self.severities, derive_seed(settings.master_seed, "epoch", epoch))
        size = self.batch_size
        batches = [order[start : start + size] for start in range(0, len(order), size)]
        return repair_batches(batches, self.severities)

    def _prepare(self, index: int) -> BatchRecord:
        record = self.manifest.records[index]
        settings = self.manifest.settings
        if index not in self._features:
            try:
                img = load_image(self.manifest.source_of(record))
                crop = random_crop(img, settings.crop_size, record.crop_seed)
                degraded = degrade(crop, record.recipe, self.registry)
                self._features[index] = extract_patch_features(
                    degraded, settings.grid_rows, settings.grid_cols
                )
            except (ImageError, DistortError, GridError) as excep:
                raise RecordLoadError(record.record_id, str(excep)) from excep
        if index not in self._prompts:
            if self.prompt_table is not None:
                if record.record_id not in self.prompt_table:
                    raise RecordLoadError(record.record_id, "no precomputed prompt embedding")
                self._prompts[index] = self.prompt_table[record.record_id].vector
            else:
                embedding = embed_rendered(record.prompt, settings.text_width, settings.vocab_seed)
                self._prompts[index] = embedding.vector
        return BatchRecord(
            record_id=record.record_id,
            features=self._features[index],
            severity=record.severity,
            prompt_emb=self._prompts[index],
        )

    def load_records(self, indices: Sequence[int]) -> List[BatchRecord]:
        """Prepares the samples of some records, in the given order.

        Raises:
            RecordLoadError: naming the first record which failed.
        """
        if self.jobs == 1 or len(indices) < 2:
            return [self._prepare(index) for index in indices]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(self._prepare, indices))

    def batch(self, epoch: int, step: int) -> List[BatchRecord]:
        """Batch number ``step`` (from 0) of ``epoch`` (from 1)."""
        batches = self.epoch_batches(epoch)
        if not 0 <= step < len(batches):
            raise IndexError(
                "Epoch {} has {} batches, asked for {}".format(epoch, len(batches), step)
            )
        return self.load_records(batches[step])

    def epoch(self, epoch: int) -> Iterator[List[BatchRecord]]:
        """Yields the batches of an epoch, in order."""
        for indices in self.epoch_batches(epoch):
            yield self.load_records(indices)

    def feature_matrix(self) -> np.ndarray:
        """All the patch vectors of every record, for input normalization."""
        records = self.load_records(range(len(self)))
        return stack_patches([record.features for record in records])


def next_batch(
    manifest: Manifest,
    batch_size: int,
    epoch: int,
    step: int,
    registry: Optional[DistortionRegistry] = None,
    jobs: int = 1,
) -> List[BatchRecord]:
    """Batch ``step`` of ``epoch`` of the manifest. See :class:`BatchStream`."""
    return BatchStream(manifest, batch_size, registry, jobs).batch(epoch, step)


def degraded_sample(
    manifest: Manifest, record: ManifestRecord, registry: Optional[DistortionRegistry] = None
) -> Image:
    """The degraded crop of a record."""
    img = load_image(manifest.source_of(record))
    crop = random_crop(img, manifest.settings.crop_size, record.crop_seed)
    return degrade(crop, record.recipe, registry or manifest.registry())


__all__ = [
    "EmptyCorpusError",
    "ManifestError",
    "RecordLoadError",
    "DatasetSettings",
    "ManifestRecord",
    "Manifest",
    "BuildSummary",
    "build_manifest",
    "read_manifest",
    "BatchStream",
    "next_batch",
]
