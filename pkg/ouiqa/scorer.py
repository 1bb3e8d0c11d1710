# coding: utf-8
"""Trainable quality scorer.

Each record is a grid of patch features. The scorer standardizes them,
encodes every patch with a two-layer perceptron (K -> H -> D, softplus in
between), pools the encoded patches with softmax attention against a
learned query vector to obtain the embedding F, and maps it to the score
``q = sigmoid(w_dec . F + b_dec)``. The normalized embedding
``F / ||F||`` is used by the embedding and alignment losses, which also
own the projection to the text space (``text_w``, ``text_b``) and two
temperatures.

This module also provides the analytic backward pass, the AdamW optimizer
with a cosine learning-rate schedule and the binary checkpoint format::

    params = init_params("small", seed=0)
    batch = forward(params, batch)
    grads = backward(params, batch, grad_q, grad_emb_hat)
    params, state = adamw_step(params, grads, state)
    save_checkpoint("model.hrqm", params, state)
"""

from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple
import logging
import math
import struct

import numpy as np
from scipy.special import expit  # type: ignore

from .model import remove_namedtuple_defaultdoc
from .features import FEATURE_WIDTH, PatchFeatureGrid
from .util import BinaryReader, pack_floats, pack_string

logger = logging.getLogger(__name__)

PRESETS: Dict[str, Tuple[int, int]] = {"small": (64, 32), "base": (256, 128)}
"""Preset id -> (hidden width H, embedding width D)."""

DEFAULT_TEXT_WIDTH = 64
TAU_ALIGN_INIT = math.log(1.0 / 0.07)
TAU_ALIGN_RANGE = (0.0, math.log(100.0))

TRAINABLE = (
    "w1",
    "b1",
    "w2",
    "b2",
    "attn",
    "w_dec",
    "b_dec",
    "text_w",
    "text_b",
    "log_tau_emb",
    "tau_align",
)
"""Names of the trainable tensors, in checkpoint order."""

TEMPERATURES = ("log_tau_emb", "tau_align")
"""Trainable tensors excluded from weight decay."""

BUFFERS = ("in_mean", "in_scale")
"""Non-trainable input standardization tensors."""

CHECKPOINT_MAGIC = b"HRQM"
CHECKPOINT_VERSION = 1

_NORM_FLOOR = 1e-12


class ScorerError(ValueError):
    """Base class of the errors raised by this module"""


class ShapeMismatchError(ScorerError):
    """Some array has not the shape expected by the parameters"""


class MissingForwardError(ScorerError):
    """Backward was called on records which were not forwarded"""


class CheckpointError(ScorerError):
    """The checkpoint file is malformed"""


###############################################################################
# Parameters
###############################################################################
@remove_namedtuple_defaultdoc
class ScorerParams(NamedTuple):
    """All the tensors of the scorer."""

    preset: str
    """str: ``"small"``, ``"base"`` or ``"custom"``."""

    w1: np.ndarray
    """numpy.ndarray: first encoder layer, shape (K, H)."""
    b1: np.ndarray
    """numpy.ndarray: shape (H,)."""
    w2: np.ndarray
    """numpy.ndarray: second encoder layer, shape (H, D)."""
    b2: np.ndarray
    """numpy.ndarray: shape (D,)."""
    attn: np.ndarray
    """numpy.ndarray: attention query, shape (D,)."""
    w_dec: np.ndarray
    """numpy.ndarray: decision layer, shape (D,)."""
    b_dec: np.ndarray
    """numpy.ndarray: decision bias, shape ()."""
    text_w: np.ndarray
    """numpy.ndarray: projection to the text space, shape (D, D_text)."""
    text_b: np.ndarray
    """numpy.ndarray: shape (D_text,)."""
    log_tau_emb: np.ndarray
    """numpy.ndarray: logarithm of the embedding temperature, shape ()."""
    tau_align: np.ndarray
    """numpy.ndarray: log-scale of the alignment logits, shape (), clamped to
        :data:`TAU_ALIGN_RANGE` by the optimizer."""
    in_mean: np.ndarray
    """numpy.ndarray: feature means subtracted before encoding, shape (K,)."""
    in_scale: np.ndarray
    """numpy.ndarray: feature scales dividing after centering, shape (K,)."""

    @property
    def feature_width(self) -> int:
        """int: K."""
        return int(self.w1.shape[0])

    @property
    def hidden_width(self) -> int:
        """int: H."""
        return int(self.w1.shape[1])

    @property
    def embed_width(self) -> int:
        """int: D."""
        return int(self.w2.shape[1])

    @property
    def text_width(self) -> int:
        """int: D_text."""
        return int(self.text_w.shape[1])

    @property
    def tau_emb(self) -> float:
        """float: the (positive) embedding temperature."""
        return float(np.exp(self.log_tau_emb))

    def trainable(self) -> Dict[str, np.ndarray]:
        """The trainable tensors, by name."""
        return {name: getattr(self, name) for name in TRAINABLE}

    def __repr__(self):
        return "<ScorerParams {} K={} H={} D={} D_text={}>".format(
            self.preset, self.feature_width, self.hidden_width, self.embed_width, self.text_width
        )


def init_params(
    preset: str = "small",
    feature_width: int = FEATURE_WIDTH,
    text_width: int = DEFAULT_TEXT_WIDTH,
    seed: int = 0,
    hidden: Optional[int] = None,
    embed: Optional[int] = None,
) -> ScorerParams:
    """Seeded initialization.

    Affine maps are drawn uniformly in ``+-1/sqrt(fan_in)``; the attention
    query and the decision layer start at zero (uniform attention, q = 0.5);
    ``tau_emb`` starts at 1 and ``tau_align`` at ``ln(1/0.07)``.

    Args:
        preset: ``"small"`` or ``"base"``.
        feature_width: K.
        text_width: D_text.
        seed: seed of the generator.
        hidden: overrides H of the preset (the preset becomes ``"custom"``).
        embed: overrides D of the preset (the preset becomes ``"custom"``).

    Raises:
        ValueError: for an unknown preset or non-positive widths.
    """
    if preset not in PRESETS:
        raise ValueError("Unknown preset {!r}, expected one of {}".format(preset, sorted(PRESETS)))
    preset_hidden, preset_embed = PRESETS[preset]
    hidden = hidden or preset_hidden
    embed = embed or preset_embed
    if (hidden, embed) != (preset_hidden, preset_embed):
        preset = "custom"
    if min(feature_width, text_width, hidden, embed) < 1:
        raise ValueError("All the widths must be positive")

    rng = np.random.default_rng(seed)

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ScorerParams(
        preset=preset,
        w1=uniform(feature_width, (feature_width, hidden)),
        b1=uniform(feature_width, (hidden,)),
        w2=uniform(hidden, (hidden, embed)),
        b2=uniform(hidden, (embed,)),
        attn=np.zeros(embed),
        w_dec=np.zeros(embed),
        b_dec=np.array(0.0),
        text_w=uniform(embed, (embed, text_width)),
        text_b=uniform(embed, (text_width,)),
        log_tau_emb=np.array(0.0),
        tau_align=np.array(TAU_ALIGN_INIT),
        in_mean=np.zeros(feature_width),
        in_scale=np.ones(feature_width),
    )


def with_input_normalization(params: ScorerParams, features: np.ndarray) -> ScorerParams:
    """Fits the standardization buffers on a ``(n, K)`` array of patch
    features. Constant features keep a unit scale."""
    if features.ndim != 2 or features.shape[1] != params.feature_width:
        raise ShapeMismatchError(
            "Expected features of width {}, got shape {}".format(
                params.feature_width, features.shape
            )
        )
    deviation = features.std(axis=0)
    return params._replace(
        in_mean=features.mean(axis=0), in_scale=np.where(deviation > 0, deviation, 1.0)
    )


###############################################################################
# Forward and backward
###############################################################################
class ForwardCache(NamedTuple):
    """Intermediate values of the forward pass of one record."""

    z: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    e: np.ndarray
    alpha: np.ndarray
    norm: float


@remove_namedtuple_defaultdoc
class BatchRecord(NamedTuple):
    """One training (or scoring) sample."""

    record_id: str
    """str: id of the manifest record (or image path)."""

    features: PatchFeatureGrid
    """:class:`.PatchFeatureGrid`: the patch features."""

    severity: float
    """float: severity label d in [0, 1] (nan when unknown)."""

    prompt_emb: Optional[np.ndarray] = None
    """numpy.ndarray: unit prompt embedding of width D_text."""

    embedding: Optional[np.ndarray] = None
    """numpy.ndarray: F, set by :func:`forward`."""

    embedding_hat: Optional[np.ndarray] = None
    """numpy.ndarray: F / ||F||, set by :func:`forward`."""

    score: Optional[float] = None
    """float: q in (0, 1), set by :func:`forward`."""

    cache: Optional[ForwardCache] = None
    """:class:`ForwardCache`: values needed by :func:`backward`."""

    @property
    def attention(self) -> np.ndarray:
        """numpy.ndarray: the attention weights over the patches."""
        if self.cache is None:
            raise MissingForwardError("Record {!r} was not forwarded".format(self.record_id))
        return self.cache.alpha


def softplus(x: np.ndarray) -> np.ndarray:
    """Numerically stable ``log(1 + exp(x))``."""
    return np.logaddexp(0.0, x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    shifted = np.exp(x - x.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def _forward_one(params: ScorerParams, record: BatchRecord) -> BatchRecord:
    patches = record.features.patches
    if patches.ndim != 2 or patches.shape[1] != params.feature_width:
        raise ShapeMismatchError(
            "Record {!r} has features of width {}, the scorer expects {}".format(
                record.record_id, patches.shape[-1], params.feature_width
            )
        )
    z = (patches - params.in_mean) / params.in_scale
    a1 = z @ params.w1 + params.b1
    h1 = softplus(a1)
    e = h1 @ params.w2 + params.b2
    alpha = softmax(e @ params.attn)
    embedding = alpha @ e
    norm = float(np.linalg.norm(embedding))
    embedding_hat = embedding / max(norm, _NORM_FLOOR)
    score = float(expit(embedding @ params.w_dec + params.b_dec))
    return record._replace(
        embedding=embedding,
        embedding_hat=embedding_hat,
        score=score,
        cache=ForwardCache(z, a1, h1, e, alpha, norm),
    )


def forward(params: ScorerParams, batch: Sequence[BatchRecord]) -> List[BatchRecord]:
    """Computes the embeddings and scores of every record.

    Returns:
        New records with ``embedding``, ``embedding_hat``, ``score`` and
        ``cache`` filled. The result of each record does not depend on the
        other records of the batch.

    Raises:
        ShapeMismatchError: if some feature grid has not width K.
    """
    return [_forward_one(params, record) for record in batch]


def scores_of(batch: Sequence[BatchRecord]) -> np.ndarray:
    """Scores of forwarded records, as an array."""
    return np.array([_forwarded(record).score for record in batch], dtype=np.float64)


def embeddings_of(batch: Sequence[BatchRecord]) -> np.ndarray:
    """Normalized embeddings of forwarded records, shape (N, D)."""
    return np.array([_forwarded(record).embedding_hat for record in batch], dtype=np.float64)


def severities_of(batch: Sequence[BatchRecord]) -> np.ndarray:
    """Severity labels of the records."""
    return np.array([record.severity for record in batch], dtype=np.float64)


def prompts_of(batch: Sequence[BatchRecord]) -> np.ndarray:
    """Prompt embeddings of the records, shape (N, D_text)."""
    missing = [record.record_id for record in batch if record.prompt_emb is None]
    if missing:
        raise ShapeMismatchError("Records without prompt embedding: {}".format(missing[:5]))
    return np.array([record.prompt_emb for record in batch], dtype=np.float64)


def _forwarded(record: BatchRecord) -> BatchRecord:
    if record.cache is None:
        raise MissingForwardError("Record {!r} was not forwarded".format(record.record_id))
    return record


def backward(
    params: ScorerParams,
    batch: Sequence[BatchRecord],
    grad_q: np.ndarray,
    grad_emb_hat: np.ndarray,
    grad_tau_emb: float = 0.0,
    grad_tau_align: float = 0.0,
    grad_text_w: Optional[np.ndarray] = None,
    grad_text_b: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """Gradients of a loss with respect to every trainable tensor.

    Args:
        params: the parameters used by the forward pass.
        batch: the forwarded records.
        grad_q: dL/dq, shape (N,).
        grad_emb_hat: dL/dF_hat, shape (N, D).
        grad_tau_emb: dL/dtau_emb (with respect to the temperature itself,
            not its logarithm).
        grad_tau_align: dL/dtau_align.
        grad_text_w: dL/dtext_w, if the loss uses the projection.
        grad_text_b: dL/dtext_b, if the loss uses the projection.

    Returns:
        A dictionary with one gradient per name of :data:`TRAINABLE`.

    Raises:
        MissingForwardError: if some record was not forwarded.
        ShapeMismatchError: if the upstream gradients do not match the batch.
    """
    grad_q = np.asarray(grad_q, dtype=np.float64)
    grad_emb_hat = np.asarray(grad_emb_hat, dtype=np.float64)
    if grad_q.shape != (len(batch),) or grad_emb_hat.shape != (len(batch), params.embed_width):
        raise ShapeMismatchError(
            "Upstream gradients of shapes {} and {} do not match a batch of {} records".format(
                grad_q.shape, grad_emb_hat.shape, len(batch)
            )
        )
    grads = {name: np.zeros_like(getattr(params, name), dtype=np.float64) for name in TRAINABLE}
    for index, record in enumerate(batch):
        cache = _forwarded(record).cache
        assert cache is not None
        q = record.score
        grad_logit = grad_q[index] * q * (1.0 - q)
        grads["w_dec"] += grad_logit * record.embedding
        grads["b_dec"] += grad_logit

        # Through the normalization F_hat = F / ||F||
        f_hat = record.embedding_hat
        g_hat = grad_emb_hat[index]
        grad_f = grad_logit * params.w_dec
        grad_f = grad_f + (g_hat - f_hat * (f_hat @ g_hat)) / max(cache.norm, _NORM_FLOOR)

        # Through the attention pooling F = sum_p alpha_p e_p
        grad_e = np.outer(cache.alpha, grad_f)
        grad_alpha = cache.e @ grad_f
        grad_attn_logits = cache.alpha * (grad_alpha - cache.alpha @ grad_alpha)
        grad_e += np.outer(grad_attn_logits, params.attn)
        grads["attn"] += grad_attn_logits @ cache.e

        # Through the encoder
        grads["w2"] += cache.h1.T @ grad_e
        grads["b2"] += grad_e.sum(axis=0)
        grad_a1 = (grad_e @ params.w2.T) * expit(cache.a1)
        grads["w1"] += cache.z.T @ grad_a1
        grads["b1"] += grad_a1.sum(axis=0)

    grads["log_tau_emb"] = np.array(grad_tau_emb * params.tau_emb)
    grads["tau_align"] = np.array(float(grad_tau_align))
    if grad_text_w is not None:
        grads["text_w"] = np.array(grad_text_w, dtype=np.float64)
    if grad_text_b is not None:
        grads["text_b"] = np.array(grad_text_b, dtype=np.float64)
    return grads


def predict(
    params: ScorerParams, grids: Sequence[PatchFeatureGrid]
) -> Tuple[np.ndarray, np.ndarray]:
    """Scores and normalized embeddings of several feature grids."""
    records = [
        BatchRecord(record_id=str(index), features=grid, severity=float("nan"))
        for index, grid in enumerate(grids)
    ]
    records = forward(params, records)
    return scores_of(records), embeddings_of(records)


###############################################################################
# Optimization
###############################################################################
@remove_namedtuple_defaultdoc
class OptimizerSettings(NamedTuple):
    """Hyperparameters of AdamW and of the cosine schedule."""

    lr0: float = 5e-3
    """float: initial learning rate."""
    lr_min: float = 1e-4
    """float: learning rate at the end of the schedule."""
    total_steps: int = 1000
    """int: length of the cosine schedule."""
    weight_decay: float = 1e-5
    """float: decoupled weight decay."""
    beta1: float = 0.9
    """float: decay of the first moment."""
    beta2: float = 0.999
    """float: decay of the second moment."""
    eps: float = 1e-8
    """float: added to the denominator."""


@remove_namedtuple_defaultdoc
class OptimizerState(NamedTuple):
    """Moments of AdamW, mirroring the shapes of the trainable tensors."""

    m: Dict[str, np.ndarray]
    """Dict[str, numpy.ndarray]: first moments."""
    v: Dict[str, np.ndarray]
    """Dict[str, numpy.ndarray]: second moments."""
    step: int
    """int: number of updates already done."""
    settings: OptimizerSettings
    """:class:`OptimizerSettings`: hyperparameters."""


def cosine_lr(step: int, total: int, lr0: float, lr_min: float) -> float:
    """Cosine annealing from ``lr0`` (step 0) to ``lr_min`` (step ``total``),
    constant afterwards.

    Raises:
        ValueError: if ``step`` is negative or ``total`` is not positive.
    """
    if step < 0 or total <= 0:
        raise ValueError("cosine_lr() requires step >= 0 and total > 0")
    progress = min(step, total) / total
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * progress))


def init_optimizer(
    tensors: Mapping[str, np.ndarray], settings: OptimizerSettings
) -> OptimizerState:
    """Zero moments for every tensor of ``tensors`` (e.g. ``params.trainable()``)."""
    return OptimizerState(
        m={name: np.zeros_like(value, dtype=np.float64) for name, value in tensors.items()},
        v={name: np.zeros_like(value, dtype=np.float64) for name, value in tensors.items()},
        step=0,
        settings=settings,
    )


def adamw_update(
    tensors: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    decay_exempt: Sequence[str] = (),
) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """One AdamW update of a set of named tensors.

    The learning rate is ``cosine_lr(state.step, ...)``. Moments are bias
    corrected, and the weight decay (decoupled from the gradient) shrinks
    every tensor but those in ``decay_exempt``.

    Raises:
        ShapeMismatchError: if some gradient or moment does not match its tensor.
    """
    settings = state.settings
    lr = cosine_lr(state.step, settings.total_steps, settings.lr0, settings.lr_min)
    t = state.step + 1
    bias_correction1 = 1.0 - settings.beta1 ** t
    bias_correction2 = 1.0 - settings.beta2 ** t
    step_size = lr / bias_correction1

    updated, new_m, new_v = {}, {}, {}
    for name, value in tensors.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != np.shape(value) or state.m[name].shape != np.shape(value):
            raise ShapeMismatchError(
                "Gradient of {!r} has shape {}, expected {}".format(
                    name, grad.shape, np.shape(value)
                )
            )
        m = settings.beta1 * state.m[name] + (1.0 - settings.beta1) * grad
        v = settings.beta2 * state.v[name] + (1.0 - settings.beta2) * grad * grad
        denominator = np.sqrt(v) / math.sqrt(bias_correction2) + settings.eps
        value = np.asarray(value, dtype=np.float64)
        if settings.weight_decay and name not in decay_exempt:
            value = value * (1.0 - lr * settings.weight_decay)
        updated[name] = value - step_size * m / denominator
        new_m[name], new_v[name] = m, v
    return updated, state._replace(m=new_m, v=new_v, step=t)


def adamw_step(
    params: ScorerParams, grads: Mapping[str, np.ndarray], state: OptimizerState
) -> Tuple[ScorerParams, OptimizerState]:
    """AdamW update of the trainable tensors of the scorer.

    Temperatures are not decayed, and ``tau_align`` is clamped to
    :data:`TAU_ALIGN_RANGE` after the update.
    """
    updated, state = adamw_update(params.trainable(), grads, state, decay_exempt=TEMPERATURES)
    updated["tau_align"] = np.clip(updated["tau_align"], *TAU_ALIGN_RANGE)
    return params._replace(**updated), state


###############################################################################
# Checkpoints
###############################################################################
def _pack_tensors(tensors: Sequence[Tuple[str, np.ndarray]]) -> List[bytes]:
    chunks = [struct.pack("<I", len(tensors))]
    for name, value in tensors:
        value = np.asarray(value)
        chunks.append(pack_string(name))
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack("<{}I".format(value.ndim), *value.shape))
        chunks.append(pack_floats(value))
    return chunks


def _read_tensors(reader: BinaryReader) -> Dict[str, np.ndarray]:
    (count,) = reader.take("<I")
    tensors = {}
    for _ in range(count):
        name = reader.take_string()
        (ndim,) = reader.take("<B")
        shape = reader.take("<{}I".format(ndim))
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = reader.take_floats(size).reshape(shape)
    return tensors


def checkpoint_bytes(params: ScorerParams, state: Optional[OptimizerState] = None) -> bytes:
    """Serializes the parameters (and optionally the optimizer state).

    Layout (little endian): magic ``HRQM``, u32 version, u16-prefixed preset
    id, a tensor block with every tensor of :data:`TRAINABLE` and
    :data:`BUFFERS`, and an u8 flag. If the flag is 1 it is followed by the
    u64 step, the u64 schedule length, six f64 hyperparameters
    (lr0, lr_min, weight_decay, beta1, beta2, eps) and the tensor blocks of
    the first and second moments. A tensor block is an u32 count followed,
    per tensor, by its u16-prefixed name, u8 ndim, u32 dims and float32 data.
    """
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), pack_string(params.preset)]
    chunks += _pack_tensors([(name, getattr(params, name)) for name in TRAINABLE + BUFFERS])
    if state is None:
        chunks.append(struct.pack("<B", 0))
    else:
        s = state.settings
        chunks.append(struct.pack("<B", 1))
        chunks.append(struct.pack("<QQ", state.step, s.total_steps))
        chunks.append(struct.pack("<6d", s.lr0, s.lr_min, s.weight_decay, s.beta1, s.beta2, s.eps))
        chunks += _pack_tensors([(name, state.m[name]) for name in TRAINABLE])
        chunks += _pack_tensors([(name, state.v[name]) for name in TRAINABLE])
    return b"".join(chunks)


def stored_params(params: ScorerParams) -> ScorerParams:
    """The parameters as a checkpoint stores them: every tensor rounded to
    float32. Scores of the result equal those of the reloaded checkpoint."""
    return params._replace(
        **{
            name: np.asarray(getattr(params, name), dtype=np.float32).astype(np.float64)
            for name in TRAINABLE + BUFFERS
        }
    )


def save_checkpoint(
    filename: str, params: ScorerParams, state: Optional[OptimizerState] = None
) -> ScorerParams:
    """Writes :func:`checkpoint_bytes` to a file.

    Returns:
        :func:`stored_params` of ``params``, which score exactly as the
        checkpoint once reloaded.
    """
    with open(filename, "wb") as stream:
        stream.write(checkpoint_bytes(params, state))
    return stored_params(params)


def _check_shapes(params: ScorerParams, name: str) -> ScorerParams:
    k, h, d, t = params.feature_width, params.hidden_width, params.embed_width, params.text_width
    expected = {
        "w1": (k, h),
        "b1": (h,),
        "w2": (h, d),
        "b2": (d,),
        "attn": (d,),
        "w_dec": (d,),
        "b_dec": (),
        "text_w": (d, t),
        "text_b": (t,),
        "log_tau_emb": (),
        "tau_align": (),
        "in_mean": (k,),
        "in_scale": (k,),
    }
    for tensor, shape in expected.items():
        if getattr(params, tensor).shape != shape:
            raise CheckpointError(
                "{}: tensor {!r} has shape {}, expected {}".format(
                    name, tensor, getattr(params, tensor).shape, shape
                )
            )
    return params


def checkpoint_from_bytes(
    content: bytes, name: str = "<checkpoint>"
) -> Tuple[ScorerParams, Optional[OptimizerState]]:
    """Inverse of :func:`checkpoint_bytes`.

    Raises:
        CheckpointError: on bad magic, unknown version, truncated payload,
            missing tensors or inconsistent shapes.
    """
    if content[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("{}: bad magic, not a scorer checkpoint".format(name))
    reader = BinaryReader(content, CheckpointError, name)
    reader.take_bytes(4)
    (version,) = reader.take("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError("{}: unsupported checkpoint version {}".format(name, version))
    preset = reader.take_string()
    tensors = _read_tensors(reader)
    missing = [key for key in TRAINABLE + BUFFERS if key not in tensors]
    if missing:
        raise CheckpointError("{}: missing tensors {}".format(name, missing))
    params = _check_shapes(
        ScorerParams(preset=preset, **{key: tensors[key] for key in TRAINABLE + BUFFERS}), name
    )
    (has_state,) = reader.take("<B")
    state = None
    if has_state:
        step, total_steps = reader.take("<QQ")
        lr0, lr_min, weight_decay, beta1, beta2, eps = reader.take("<6d")
        settings = OptimizerSettings(lr0, lr_min, int(total_steps), weight_decay, beta1, beta2, eps)
        m = _read_tensors(reader)
        v = _read_tensors(reader)
        for moments in (m, v):
            for key in TRAINABLE:
                if key not in moments or moments[key].shape != getattr(params, key).shape:
                    raise CheckpointError(
                        "{}: optimizer moments of {!r} do not match".format(name, key)
                    )
        state = OptimizerState(m=m, v=v, step=int(step), settings=settings)
    if not reader.at_end():
        raise CheckpointError("{}: trailing bytes after the checkpoint".format(name))
    return params, state


def load_checkpoint(filename: str) -> Tuple[ScorerParams, Optional[OptimizerState]]:
    """Reads a checkpoint file. See :func:`checkpoint_from_bytes`.

    Raises:
        FileNotFoundError: if the file does not exist.
        CheckpointError: if it is malformed.
    """
    with open(filename, "rb") as stream:
        content = stream.read()
    params, state = checkpoint_from_bytes(content, filename)
    logger.debug("Loaded %r from %s", params, filename)
    return params, state


__all__ = [
    "PRESETS",
    "TRAINABLE",
    "ScorerError",
    "ShapeMismatchError",
    "MissingForwardError",
    "CheckpointError",
    "ScorerParams",
    "BatchRecord",
    "OptimizerSettings",
    "OptimizerState",
    "init_params",
    "with_input_normalization",
    "forward",
    "backward",
    "predict",
    "cosine_lr",
    "init_optimizer",
    "adamw_update",
    "adamw_step",
    "stored_params",
    "save_checkpoint",
    "load_checkpoint",
]
