# coding: utf-8
"""Training loop and gradient verification.

:class:`Trainer` drives the optimization: for each position yielded by a
:class:`TrainingSchedule` it runs the forward pass on the next batch of a
:class:`ouiqa.dataset.BatchStream`, evaluates :func:`ouiqa.losses.total_loss`,
back-propagates and applies one AdamW update, logging a
:class:`ouiqa.losses.LossBreakdown` per step.

:func:`grad_check` compares the analytic gradient of the final objective
with central finite differences over every trainable scalar.
"""

from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple
import collections.abc
import csv
import logging

import numpy as np

from .model import remove_namedtuple_defaultdoc
from .features import FEATURE_WIDTH, PatchFeatureGrid
from .scorer import (
    TRAINABLE,
    BatchRecord,
    OptimizerSettings,
    OptimizerState,
    ScorerParams,
    adamw_step,
    backward,
    cosine_lr,
    forward,
    init_optimizer,
    init_params,
    with_input_normalization,
)
from .losses import LossBreakdown, LossSettings, total_loss
from .dataset import BatchStream
from .util import derive_seed

logger = logging.getLogger(__name__)

GradientFunction = Callable[..., Tuple[float, Dict[str, np.ndarray]]]

LOG_COLUMNS = ("step", "epoch", "lr") + LossBreakdown._fields
"""Columns of the training log."""

RELATIVE_ERROR_FLOOR = 1e-2


@remove_namedtuple_defaultdoc
class SchedulePosition(NamedTuple):
    """Where the training loop is."""

    epoch: int
    """int: epoch, from 1."""
    step: int
    """int: batch number inside the epoch, from 0."""
    global_step: int
    """int: optimizer step, from 0."""
    fraction: float
    """float: ``(step + 1) / steps_per_epoch``."""


class TrainingSchedule(collections.abc.Iterable):  # pylint: disable=too-few-public-methods
    """Iterable over the positions of a training run of ``epochs`` epochs
    of ``steps_per_epoch`` batches."""

    def __init__(self, epochs: int, steps_per_epoch: int) -> None:
        if epochs < 1 or steps_per_epoch < 1:
            raise ValueError("A schedule needs at least one epoch and one step per epoch")
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch

    @property
    def total_steps(self) -> int:
        """int: number of optimizer steps."""
        return self.epochs * self.steps_per_epoch

    def __iter__(self) -> Iterator[SchedulePosition]:
        return (
            SchedulePosition(
                epoch,
                step,
                (epoch - 1) * self.steps_per_epoch + step,
                (step + 1) / self.steps_per_epoch,
            )
            for epoch in range(1, self.epochs + 1)
            for step in range(self.steps_per_epoch)
        )


@remove_namedtuple_defaultdoc
class TrainingResult(NamedTuple):
    """Outcome of :meth:`Trainer.train`."""

    params: ScorerParams
    """:class:`ouiqa.scorer.ScorerParams`: trained parameters."""
    state: OptimizerState
    """:class:`ouiqa.scorer.OptimizerState`: final optimizer state."""
    log: Tuple[Tuple, ...]
    """Tuple[Tuple, ...]: one row per step, with the :data:`LOG_COLUMNS`."""


class Trainer:
    """Optimizes a scorer over a batch stream.

    The input standardization of the scorer is fitted on every patch of the
    manifest before the first step of a fresh run, unless
    :meth:`fit_normalization` was already called. Pair-of-pairs subsampling at
    global step ``t`` uses ``derive_seed(seed, "combos", t)``.
    """

    def __init__(
        self,
        stream: BatchStream,
        params: ScorerParams,
        loss_settings: LossSettings,
        optimizer_settings: OptimizerSettings,
        seed: int = 0,
    ) -> None:
        self.stream = stream
        self.params = params
        self.loss_settings = loss_settings
        self.optimizer_settings = optimizer_settings
        self.seed = seed
        self.normalized = False

    def fit_normalization(self) -> ScorerParams:
        """Fits the input standardization buffers on the whole manifest."""
        self.params = with_input_normalization(self.params, self.stream.feature_matrix())
        self.normalized = True
        return self.params

    def train(
        self, schedule: Iterator[SchedulePosition], state: Optional[OptimizerState] = None
    ) -> TrainingResult:
        """Runs the optimization.

        Args:
            schedule: positions to visit, usually a :class:`TrainingSchedule`
                (or a subclass reporting progress).
            state: optimizer state to resume from; a fresh one by default.

        Raises:
            ouiqa.dataset.RecordLoadError: if some record cannot be loaded.
        """
        if state is None:
            if not self.normalized:
                self.fit_normalization()
            state = init_optimizer(self.params.trainable(), self.optimizer_settings)
        params = self.params
        log = []
        epoch_batches: Dict[int, List[List[int]]] = {}
        for position in schedule:
            if position.epoch not in epoch_batches:
                epoch_batches.clear()
                epoch_batches[position.epoch] = self.stream.epoch_batches(position.epoch)
            batch = self.stream.load_records(epoch_batches[position.epoch][position.step])
            lr = cosine_lr(
                state.step,
                state.settings.total_steps,
                state.settings.lr0,
                state.settings.lr_min,
            )
            breakdown, grads = _loss_and_gradient(
                params,
                batch,
                position.epoch,
                self.loss_settings,
                position.fraction,
                derive_seed(self.seed, "combos", position.global_step),
            )
            params, state = adamw_step(params, grads, state)
            if not np.isfinite(breakdown.total):
                raise FloatingPointError(
                    "Non-finite loss at step {} of epoch {}".format(position.step, position.epoch)
                )
            log.append((position.global_step, position.epoch, lr) + tuple(breakdown))
            logger.debug(
                "epoch %d step %d lr %.3g total %.6f",
                position.epoch,
                position.step,
                lr,
                breakdown.total,
            )
        self.params = params
        return TrainingResult(params, state, tuple(log))


def write_training_log(rows: Sequence[Tuple], filename: str) -> None:
    """Writes the training log as CSV with the :data:`LOG_COLUMNS`."""
    with open(filename, "w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([_log_value(value) for value in row])


def _log_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def read_training_log(filename: str) -> List[Dict[str, float]]:
    """Reads a log written by :func:`write_training_log`."""
    with open(filename, newline="") as stream:
        return [{key: float(value) for key, value in row.items()} for row in csv.DictReader(stream)]


###############################################################################
# Gradient verification
###############################################################################
def _loss_and_gradient(
    params: ScorerParams,
    batch: Sequence[BatchRecord],
    epoch: int,
    settings: LossSettings,
    fraction: float,
    seed: int,
) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
    forwarded = forward(params, batch)
    breakdown, grads = total_loss(params, forwarded, epoch, settings, fraction, seed)
    return breakdown, backward(
        params,
        forwarded,
        grads.q,
        grads.emb_hat,
        grads.tau_emb,
        grads.tau_align,
        grads.text_w,
        grads.text_b,
    )


def full_gradient(
    params: ScorerParams,
    batch: Sequence[BatchRecord],
    epoch: int = 3,
    settings: LossSettings = LossSettings(),
    fraction: float = 1.0,
    seed: int = 0,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Final objective and its analytic gradient for every trainable tensor."""
    breakdown, grads = _loss_and_gradient(params, batch, epoch, settings, fraction, seed)
    return breakdown.total, grads


def loss_value(
    params: ScorerParams,
    batch: Sequence[BatchRecord],
    epoch: int = 3,
    settings: LossSettings = LossSettings(),
    fraction: float = 1.0,
    seed: int = 0,
) -> float:
    """Final objective only."""
    breakdown, _ = total_loss(params, forward(params, batch), epoch, settings, fraction, seed)
    return breakdown.total


def numeric_gradient(
    loss: Callable[[ScorerParams], float], params: ScorerParams, epsilon: float = 1e-4
) -> Dict[str, np.ndarray]:
    """Central finite differences of ``loss`` for every trainable scalar."""
    grads = {}
    for name in TRAINABLE:
        value = np.array(getattr(params, name), dtype=np.float64)
        grad = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + epsilon
            plus = loss(params._replace(**{name: value.copy()}))
            value[index] = original - epsilon
            minus = loss(params._replace(**{name: value.copy()}))
            value[index] = original
            grad[index] = (plus - minus) / (2.0 * epsilon)
        grads[name] = grad
    return grads


def relative_errors(
    analytic: Dict[str, np.ndarray], numeric: Dict[str, np.ndarray]
) -> Dict[str, float]:
    """Worst ``|a - n| / max(|a|, |n|, 1e-2)`` of each tensor."""
    errors = {}
    for name in TRAINABLE:
        a = np.asarray(analytic[name], dtype=np.float64)
        n = np.asarray(numeric[name], dtype=np.float64)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), RELATIVE_ERROR_FLOOR)
        errors[name] = float((np.abs(a - n) / scale).max()) if a.size else 0.0
    return errors


def grad_check(
    params: ScorerParams,
    batch: Sequence[BatchRecord],
    epsilon: float = 1e-4,
    epoch: int = 3,
    settings: LossSettings = LossSettings(),
    fraction: float = 1.0,
    seed: int = 0,
    gradient_fn: Optional[GradientFunction] = None,
) -> float:
    """Worst relative error between the analytic gradient of the final
    objective and central finite differences, over every trainable scalar.

    Args:
        params: point where the gradient is checked.
        batch: nonempty batch (prompt embeddings needed when alignment is on).
        epsilon: finite-difference step.
        epoch: epoch passed to the objective (3 gives the final weights).
        settings: loss settings.
        fraction: position inside the epoch.
        seed: pair-of-pairs subsampling seed.
        gradient_fn: replaces :func:`full_gradient`, with the same signature.

    Raises:
        ValueError: if the batch is empty.
    """
    if not batch:
        raise ValueError("grad_check() requires a nonempty batch")
    gradient_fn = gradient_fn or full_gradient
    _, analytic = gradient_fn(params, batch, epoch, settings, fraction, seed)

    def loss(candidate: ScorerParams) -> float:
        return loss_value(candidate, batch, epoch, settings, fraction, seed)

    errors = relative_errors(analytic, numeric_gradient(loss, params, epsilon))
    worst = max(errors, key=errors.get)
    logger.debug("Gradient check: worst error %.3g in %s", errors[worst], worst)
    return errors[worst]


def _label_pattern(q: np.ndarray) -> Tuple[Tuple[bool, ...], Tuple[bool, ...]]:
    """Signs of every score difference and of every difference of score gaps."""
    first, second = np.triu_indices(len(q), k=1)
    diffs = q[first] - q[second]
    gaps = np.abs(diffs)
    one, other = np.triu_indices(len(gaps), k=1)
    gap_diffs = gaps[one] - gaps[other]
    return tuple(diffs > 0) + tuple(diffs == 0), tuple(gap_diffs > 0) + tuple(gap_diffs == 0)


def labels_are_stable(
    params: ScorerParams, batch: Sequence[BatchRecord], epsilon: float = 1e-4
) -> bool:
    """Whether no score-based pair label or kink changes when any trainable
    scalar moves by ``epsilon`` either way."""

    def pattern(candidate: ScorerParams):
        return _label_pattern(np.array([r.score for r in forward(candidate, batch)]))

    reference = pattern(params)
    for name in TRAINABLE:
        value = np.array(getattr(params, name), dtype=np.float64)
        for index in np.ndindex(value.shape):
            original = value[index]
            for shifted in (original + epsilon, original - epsilon):
                value[index] = shifted
                if pattern(params._replace(**{name: value.copy()})) != reference:
                    return False
            value[index] = original
    return True


def random_check_problem(
    seed: int,
    batch_size: int = 4,
    patches: int = 4,
    hidden: int = 6,
    embed: int = 4,
    text_width: int = 8,
    attempts: int = 100,
) -> Tuple[ScorerParams, List[BatchRecord], LossSettings]:
    """A small random problem for :func:`grad_check`.

    The attention query and the decision layer are drawn at random (not
    zero). Draws are repeated until :func:`labels_are_stable` holds for
    steps of ``1e-4``. The score threshold is zero and subsampling is
    disabled, so every term of the objective is smooth around the
    returned point.

    Raises:
        RuntimeError: if no suitable draw is found after ``attempts`` tries.
    """
    rng = np.random.default_rng(seed)
    base = init_params("small", FEATURE_WIDTH, text_width, seed, hidden=hidden, embed=embed)
    for _ in range(attempts):
        params = base._replace(
            attn=rng.normal(0.0, 0.5, size=embed),
            w_dec=rng.normal(0.0, 1.0, size=embed),
            b_dec=np.array(rng.normal(0.0, 0.5)),
            log_tau_emb=np.array(rng.uniform(-0.3, 0.3)),
            tau_align=np.array(rng.uniform(0.5, 2.0)),
        )
        batch = []
        for index in range(batch_size):
            prompt = rng.normal(size=text_width)
            batch.append(
                BatchRecord(
                    record_id="check-{}".format(index),
                    features=PatchFeatureGrid(
                        rng.normal(size=(patches, FEATURE_WIDTH)), 1, patches
                    ),
                    severity=float(rng.uniform(0.0, 1.0)),
                    prompt_emb=prompt / np.linalg.norm(prompt),
                )
            )
        if labels_are_stable(params, batch):
            return params, batch, LossSettings(t_q=0.0, combo_cap=None)
    raise RuntimeError("No stable check problem for seed {}".format(seed))


__all__ = [
    "LOG_COLUMNS",
    "SchedulePosition",
    "TrainingSchedule",
    "TrainingResult",
    "Trainer",
    "write_training_log",
    "read_training_log",
    "full_gradient",
    "numeric_gradient",
    "grad_check",
    "random_check_problem",
    "labels_are_stable",
]
