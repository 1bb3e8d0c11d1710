# coding: utf-8
"""Training objective of the scorer.

Every loss is a pure function returning its value together with the
analytic gradients with respect to its inputs. The pieces are:

* the ranking objective: a pair-of-pairs RankNet loss on score gaps,
  supervised by which of two pairs has the greater severity gap, plus a
  monotonicity regularizer which makes scores decrease with severity
  (:func:`ranking_loss`). Plain pairwise RankNet and a margin ranking loss
  are provided as baselines;
* the embedding objective: a pair-of-pairs loss on exponentiated embedding
  similarities, supervised by score gaps, plus a covariance penalty
  (:func:`embdist_loss`);
* a symmetric InfoNCE image-text alignment loss (:func:`align_loss`);
* their scheduled combination (:func:`total_loss`).

Pair-based losses use only pairs whose gap exceeds a threshold, and skip
the pair-of-pairs whose two gaps are equal.
"""

from typing import NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.special import expit  # type: ignore

from .model import remove_namedtuple_defaultdoc
from .scorer import (
    BatchRecord,
    ScorerParams,
    embeddings_of,
    prompts_of,
    scores_of,
    severities_of,
    softmax,
)

logger = logging.getLogger(__name__)

RANKING_VARIANTS = ("pair-of-pairs", "margin", "pairwise")
_NORM_FLOOR = 1e-12


class LossInputError(ValueError):
    """The inputs of some loss have inconsistent sizes or widths"""


###############################################################################
# Pair sets
###############################################################################
@remove_namedtuple_defaultdoc
class PairSet(NamedTuple):
    """Pairs of batch positions whose gap exceeds a threshold."""

    pairs: np.ndarray
    """numpy.ndarray: integer array of shape (M, 2), with i < j in each row,
        in lexicographic order."""

    gaps: np.ndarray
    """numpy.ndarray: ``|v_i - v_j|`` of each pair, shape (M,)."""

    threshold: float
    """float: gaps are strictly greater than this value."""

    def __len__(self):
        return len(self.pairs)


@remove_namedtuple_defaultdoc
class PairOfPairsSet(NamedTuple):
    """Labelled combinations of two pairs of a :class:`PairSet`."""

    first: np.ndarray
    """numpy.ndarray: index (in the pair set) of the first pair of each combo."""

    second: np.ndarray
    """numpy.ndarray: index of the second pair, always greater than ``first``."""

    labels: np.ndarray
    """numpy.ndarray: 1.0 if the first pair wins according to the rule, else 0.0."""

    sampled_from: int
    """int: number of combos available before subsampling."""

    sample_seed: int
    """int: seed used for the subsampling."""

    def __len__(self):
        return len(self.labels)

    def combos(self, pairs: PairSet):
        """The combos as a list of ``((i, j), (k, l), y)``."""
        return [
            (tuple(pairs.pairs[a]), tuple(pairs.pairs[b]), int(y))
            for a, b, y in zip(self.first, self.second, self.labels)
        ]


def _as_vector(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 1:
        raise LossInputError("{} must be a vector, got shape {}".format(name, array.shape))
    return array


def build_pairs(values: Sequence[float], threshold: float) -> PairSet:
    """All the pairs ``(i, j)``, ``i < j``, with ``|v_i - v_j| > threshold``.

    Fewer than two values give an empty set.
    """
    values = _as_vector(values, "values")
    rows, cols = np.triu_indices(len(values), k=1)
    gaps = np.abs(values[rows] - values[cols])
    keep = gaps > threshold
    return PairSet(
        pairs=np.stack([rows[keep], cols[keep]], axis=1).astype(np.int64).reshape(-1, 2),
        gaps=gaps[keep],
        threshold=float(threshold),
    )


def build_pair_of_pairs(
    pair_set: PairSet, rule: str = "greater", combo_cap: Optional[int] = None, seed: int = 0
) -> PairOfPairsSet:
    """Combines the pairs of ``pair_set`` two by two.

    Args:
        pair_set: the valid pairs.
        rule: ``"greater"`` labels a combo 1 when the first gap is the greater
            one (ranking use), ``"less"`` when it is the smaller one
            (embedding use). Combos with equal gaps are skipped.
        combo_cap: maximum number of combos. When more are available, a
            uniform sample of this size, drawn with ``default_rng(seed)``
            and kept in enumeration order, is used.
        seed: seed of the subsampling.
    """
    if rule not in ("greater", "less"):
        raise ValueError("Unknown pair-of-pairs rule {!r}".format(rule))
    first, second = np.triu_indices(len(pair_set), k=1)
    gap_a = pair_set.gaps[first]
    gap_b = pair_set.gaps[second]
    keep = gap_a != gap_b
    first, second, gap_a, gap_b = first[keep], second[keep], gap_a[keep], gap_b[keep]
    labels = (gap_a > gap_b) if rule == "greater" else (gap_a < gap_b)
    available = len(first)
    if combo_cap is not None and available > combo_cap:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(available, combo_cap, replace=False))
        first, second, labels = first[chosen], second[chosen], labels[chosen]
    return PairOfPairsSet(
        first=first.astype(np.int64),
        second=second.astype(np.int64),
        labels=labels.astype(np.float64),
        sampled_from=available,
        sample_seed=seed,
    )


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Elementwise binary cross-entropy of a logit, in softplus form."""
    return np.logaddexp(0.0, logits) - targets * logits


def _pair_of_pairs_bce(logits: np.ndarray, combos: PairOfPairsSet) -> Tuple[float, np.ndarray]:
    """Mean of ``BCE(x_a, y) + BCE(x_b, 1-y)`` over ``2|S|``; returns the
    value and the gradient with respect to the per-pair logits."""
    grad = np.zeros_like(logits)
    if len(combos) == 0:
        return 0.0, grad
    x_a, x_b = logits[combos.first], logits[combos.second]
    y = combos.labels
    denominator = 2.0 * len(combos)
    loss = float((bce_with_logits(x_a, y) + bce_with_logits(x_b, 1.0 - y)).sum() / denominator)
    np.add.at(grad, combos.first, (expit(x_a) - y) / denominator)
    np.add.at(grad, combos.second, (expit(x_b) - (1.0 - y)) / denominator)
    return loss, grad


def _check_same_length(q: np.ndarray, d: np.ndarray) -> None:
    if len(q) != len(d):
        raise LossInputError("Got {} scores and {} severities".format(len(q), len(d)))


def _is_empty(values: np.ndarray, threshold: float, combos: bool) -> bool:
    """True if a pair-based loss over ``values`` has nothing to supervise."""
    pair_set = build_pairs(values, threshold)
    if not combos:
        return len(pair_set) == 0
    return len(build_pair_of_pairs(pair_set)) == 0


###############################################################################
# Ranking objective
###############################################################################
def ranknet_loss(
    q: Sequence[float],
    d: Sequence[float],
    t_d: float = 0.1,
    combo_cap: Optional[int] = 512,
    seed: int = 0,
) -> Tuple[float, np.ndarray]:
    """Pair-of-pairs RankNet loss.

    Pairs are filtered by severity gap ``|d_i - d_j| > t_d``. Each combo of
    two pairs is labelled ``y = 1`` if the first pair has the greater
    severity gap, and the absolute score gaps ``|q_i - q_j|`` are used as
    logits: ``BCE(dq_ij, y) + BCE(dq_kl, 1 - y)``, averaged over ``2|S|``.
    The subgradient of ``|.|`` at 0 is 0.

    Returns:
        ``(loss, dL/dq)``; ``(0, zeros)`` when there are no combos.
    """
    q, d = _as_vector(q, "q"), _as_vector(d, "d")
    _check_same_length(q, d)
    pair_set = build_pairs(d, t_d)
    combos = build_pair_of_pairs(pair_set, "greater", combo_cap, seed)
    grad_q = np.zeros_like(q)
    if len(combos) == 0:
        return 0.0, grad_q
    i, j = pair_set.pairs[:, 0], pair_set.pairs[:, 1]
    diff = q[i] - q[j]
    loss, grad_gap = _pair_of_pairs_bce(np.abs(diff), combos)
    signed = grad_gap * np.sign(diff)
    np.add.at(grad_q, i, signed)
    np.add.at(grad_q, j, -signed)
    return loss, grad_q


def mreg_loss(q: Sequence[float], d: Sequence[float]) -> Tuple[float, np.ndarray]:
    """Monotonicity regularizer: mean over the ``N(N-1)`` ordered pairs
    ``i != j`` of ``log(1 + exp((q_i - q_j)(d_i - d_j)))``.

    Raises:
        LossInputError: with fewer than two samples.
    """
    q, d = _as_vector(q, "q"), _as_vector(d, "d")
    _check_same_length(q, d)
    n = len(q)
    if n < 2:
        raise LossInputError("mreg_loss() requires at least 2 samples")
    dq = q[:, None] - q[None, :]
    dd = d[:, None] - d[None, :]
    products = dq * dd
    off_diagonal = ~np.eye(n, dtype=bool)
    count = n * (n - 1)
    loss = float(np.logaddexp(0.0, products)[off_diagonal].sum() / count)
    weights = np.where(off_diagonal, expit(products) * dd, 0.0)
    grad_q = 2.0 * weights.sum(axis=1) / count
    return loss, grad_q


def pairwise_ranknet_loss(
    q: Sequence[float], d: Sequence[float], t_d: float = 0.1
) -> Tuple[float, np.ndarray]:
    """Classic RankNet on single pairs: ``BCE(q_i - q_j, d_i < d_j)``,
    averaged over the pairs with severity gap above ``t_d``."""
    q, d = _as_vector(q, "q"), _as_vector(d, "d")
    _check_same_length(q, d)
    pair_set = build_pairs(d, t_d)
    grad_q = np.zeros_like(q)
    if len(pair_set) == 0:
        return 0.0, grad_q
    i, j = pair_set.pairs[:, 0], pair_set.pairs[:, 1]
    logits = q[i] - q[j]
    targets = (d[i] < d[j]).astype(np.float64)
    loss = float(bce_with_logits(logits, targets).mean())
    grad = (expit(logits) - targets) / len(pair_set)
    np.add.at(grad_q, i, grad)
    np.add.at(grad_q, j, -grad)
    return loss, grad_q


def margin_ranking_loss(
    q: Sequence[float], d: Sequence[float], t_d: float = 0.1, margin: float = 0.1
) -> Tuple[float, np.ndarray]:
    """Hinge ranking: mean of ``max(0, margin - (q_better - q_worse))`` over
    the pairs with severity gap above ``t_d``, the better sample being the
    less distorted one."""
    q, d = _as_vector(q, "q"), _as_vector(d, "d")
    _check_same_length(q, d)
    pair_set = build_pairs(d, t_d)
    grad_q = np.zeros_like(q)
    if len(pair_set) == 0:
        return 0.0, grad_q
    i, j = pair_set.pairs[:, 0], pair_set.pairs[:, 1]
    better = np.where(d[i] < d[j], i, j)
    worse = np.where(d[i] < d[j], j, i)
    slack = margin - (q[better] - q[worse])
    loss = float(np.maximum(slack, 0.0).mean())
    active = (slack > 0).astype(np.float64) / len(pair_set)
    np.add.at(grad_q, better, -active)
    np.add.at(grad_q, worse, active)
    return loss, grad_q


def ranking_loss(
    q: Sequence[float],
    d: Sequence[float],
    t_d: float = 0.1,
    lambda_mreg: float = 1.0,
    combo_cap: Optional[int] = 512,
    seed: int = 0,
    variant: str = "pair-of-pairs",
    margin: float = 0.1,
) -> Tuple[float, np.ndarray]:
    """``L_rank + lambda_mreg * L_mreg``, where ``L_rank`` is the
    pair-of-pairs RankNet loss or one of the baseline ``variant`` s."""
    if variant == "pair-of-pairs":
        loss, grad_q = ranknet_loss(q, d, t_d, combo_cap, seed)
    elif variant == "pairwise":
        loss, grad_q = pairwise_ranknet_loss(q, d, t_d)
    elif variant == "margin":
        loss, grad_q = margin_ranking_loss(q, d, t_d, margin)
    else:
        raise ValueError(
            "Unknown ranking variant {!r}, expected one of {}".format(variant, RANKING_VARIANTS)
        )
    if lambda_mreg:
        reg, grad_reg = mreg_loss(q, d)
        loss += lambda_mreg * reg
        grad_q = grad_q + lambda_mreg * grad_reg
    return loss, grad_q


###############################################################################
# Embedding objective
###############################################################################
def _as_matrix(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 2:
        raise LossInputError("{} must be a matrix, got shape {}".format(name, array.shape))
    return array


def edist_loss(
    emb_hat: np.ndarray,
    q: Sequence[float],
    t_q: float = 0.05,
    tau_emb: float = 1.0,
    combo_cap: Optional[int] = 512,
    seed: int = 0,
) -> Tuple[float, np.ndarray, float]:
    """Embedding-distance consistency loss.

    The logit of pair ``(i, j)`` is ``exp(F_i . F_j / tau_emb)`` over the
    normalized embeddings. Pairs are filtered by score gap above ``t_q``,
    and a combo is labelled 1 if the first pair has the smaller score gap
    (closer quality, so the embeddings should be more similar). Scores act
    only as labels, they receive no gradient.

    Returns:
        ``(loss, dL/dF_hat, dL/dtau_emb)``.
    """
    emb_hat, q = _as_matrix(emb_hat, "emb_hat"), _as_vector(q, "q")
    if len(emb_hat) != len(q):
        raise LossInputError("Got {} embeddings and {} scores".format(len(emb_hat), len(q)))
    pair_set = build_pairs(q, t_q)
    combos = build_pair_of_pairs(pair_set, "less", combo_cap, seed)
    grad_emb = np.zeros_like(emb_hat)
    if len(combos) == 0:
        return 0.0, grad_emb, 0.0
    i, j = pair_set.pairs[:, 0], pair_set.pairs[:, 1]
    dots = np.einsum("pd,pd->p", emb_hat[i], emb_hat[j])
    similarity = np.exp(dots / tau_emb)
    loss, grad_similarity = _pair_of_pairs_bce(similarity, combos)
    grad_dots = grad_similarity * similarity / tau_emb
    np.add.at(grad_emb, i, grad_dots[:, None] * emb_hat[j])
    np.add.at(grad_emb, j, grad_dots[:, None] * emb_hat[i])
    grad_tau = float(-(grad_similarity * similarity * dots).sum() / tau_emb ** 2)
    return loss, grad_emb, grad_tau


def cov_loss(emb_hat: np.ndarray) -> Tuple[float, np.ndarray]:
    """Squared Frobenius norm of the off-diagonal part of the sample
    covariance of the embeddings, divided by ``D**2``.

    Raises:
        LossInputError: with fewer than two samples.
    """
    emb_hat = _as_matrix(emb_hat, "emb_hat")
    n, width = emb_hat.shape
    if n < 2:
        raise LossInputError("cov_loss() requires at least 2 samples")
    centered = emb_hat - emb_hat.mean(axis=0)
    covariance = centered.T @ centered / (n - 1)
    off_diagonal = covariance - np.diag(np.diag(covariance))
    loss = float((off_diagonal ** 2).sum() / width ** 2)
    # Columns of the centered matrix sum to zero, so no extra centering term
    grad = 4.0 * centered @ off_diagonal / (width ** 2 * (n - 1))
    return loss, grad


def embdist_loss(
    emb_hat: np.ndarray,
    q: Sequence[float],
    t_q: float = 0.05,
    tau_emb: float = 1.0,
    lambda_cov: float = 0.01,
    combo_cap: Optional[int] = 512,
    seed: int = 0,
) -> Tuple[float, np.ndarray, float]:
    """``L_edist + lambda_cov * L_cov``, with the gradients of
    :func:`edist_loss`."""
    loss, grad_emb, grad_tau = edist_loss(emb_hat, q, t_q, tau_emb, combo_cap, seed)
    if lambda_cov:
        reg, grad_reg = cov_loss(emb_hat)
        loss += lambda_cov * reg
        grad_emb = grad_emb + lambda_cov * grad_reg
    return loss, grad_emb, grad_tau


###############################################################################
# Image-text alignment
###############################################################################
@remove_namedtuple_defaultdoc
class AlignGradients(NamedTuple):
    """Gradients of :func:`align_loss`."""

    emb_hat: np.ndarray
    """numpy.ndarray: dL/dF_hat, shape (N, D)."""
    text_w: np.ndarray
    """numpy.ndarray: dL/dtext_w, shape (D, D_text)."""
    text_b: np.ndarray
    """numpy.ndarray: dL/dtext_b, shape (D_text,)."""
    tau_align: float
    """float: dL/dtau_align."""


def align_loss(
    emb_hat: np.ndarray,
    text_hat: np.ndarray,
    text_w: np.ndarray,
    text_b: np.ndarray,
    tau_align: float,
) -> Tuple[float, AlignGradients]:
    """Symmetric InfoNCE between projected image embeddings and prompt
    embeddings.

    The image embeddings are projected (``F_hat @ text_w + text_b``) and
    re-normalized; the logits are ``s = exp(tau_align) * P_hat @ T_hat.T``
    and matched pairs lie on the diagonal. The loss is the mean of the
    row-wise and column-wise cross-entropies.

    Raises:
        LossInputError: if the projected width differs from the text width,
            or the number of rows differ.
    """
    emb_hat, text_hat = _as_matrix(emb_hat, "emb_hat"), _as_matrix(text_hat, "text_hat")
    n = len(emb_hat)
    if n < 1 or len(text_hat) != n:
        raise LossInputError("align_loss() requires as many prompts as images, at least one")
    if text_w.shape[1] != text_hat.shape[1] or text_w.shape[0] != emb_hat.shape[1]:
        raise LossInputError(
            "Projection of shape {} does not map width {} to prompt width {}".format(
                text_w.shape, emb_hat.shape[1], text_hat.shape[1]
            )
        )
    projected = emb_hat @ text_w + text_b
    norms = np.maximum(np.linalg.norm(projected, axis=1, keepdims=True), _NORM_FLOOR)
    projected_hat = projected / norms
    scale = float(np.exp(tau_align))
    logits = scale * projected_hat @ text_hat.T

    by_rows = softmax(logits, axis=1)
    by_cols = softmax(logits, axis=0)
    diagonal = np.arange(n)
    matched = np.log(by_rows[diagonal, diagonal]) + np.log(by_cols[diagonal, diagonal])
    loss = float(-matched.sum() / (2 * n))
    identity = np.eye(n)
    grad_logits = ((by_rows - identity) + (by_cols - identity)) / (2 * n)

    grad_tau = float((grad_logits * logits).sum())
    grad_hat = scale * grad_logits @ text_hat
    radial = np.einsum("nd,nd->n", projected_hat, grad_hat)[:, None]
    grad_projected = (grad_hat - projected_hat * radial) / norms
    return loss, AlignGradients(
        emb_hat=grad_projected @ text_w.T,
        text_w=emb_hat.T @ grad_projected,
        text_b=grad_projected.sum(axis=0),
        tau_align=grad_tau,
    )


###############################################################################
# Final objective
###############################################################################
@remove_namedtuple_defaultdoc
class LossSettings(NamedTuple):
    """Weights, thresholds and switches of the final objective."""

    lambda_rank: float = 1.0
    """float: weight of the ranking objective."""
    lambda_mreg: float = 1.0
    """float: weight of the monotonicity regularizer inside the ranking objective."""
    lambda_align: float = 0.3
    """float: weight of the alignment loss."""
    lambda_emb: float = 0.5
    """float: final weight of the embedding objective (see :func:`lambda_emb_schedule`)."""
    lambda_cov: float = 0.01
    """float: weight of the covariance penalty inside the embedding objective."""
    t_d: float = 0.1
    """float: severity-gap threshold of the ranking pairs."""
    t_q: float = 0.05
    """float: score-gap threshold of the embedding pairs."""
    combo_cap: Optional[int] = 512
    """int: maximum number of pair-of-pairs per loss and batch (None, no cap)."""
    ranking: str = "pair-of-pairs"
    """str: ``"pair-of-pairs"``, ``"margin"`` or ``"pairwise"``."""
    margin: float = 0.1
    """float: margin of the ``"margin"`` variant."""
    align: bool = True
    """bool: whether the alignment loss takes part."""
    embdist: bool = True
    """bool: whether the embedding objective takes part."""


@remove_namedtuple_defaultdoc
class LossBreakdown(NamedTuple):
    """Values of every component of the final objective for one batch."""

    ranknet: float
    """float: pair-of-pairs RankNet value (or that of the ranking variant)."""
    mreg: float
    """float: monotonicity regularizer."""
    ranking: float
    """float: ``ranknet + lambda_mreg * mreg``."""
    edist: float
    """float: embedding-distance consistency."""
    cov: float
    """float: covariance penalty."""
    embdist: float
    """float: ``edist + lambda_cov * cov``."""
    align: float
    """float: alignment loss."""
    total: float
    """float: ``lambda_rank * ranking + lambda_align * align + lambda_emb * embdist``."""
    lambda_rank: float
    """float: weight in effect."""
    lambda_mreg: float
    """float: weight in effect."""
    lambda_align: float
    """float: weight in effect (0 when the alignment loss is disabled)."""
    lambda_emb: float
    """float: scheduled weight in effect (0 when the embedding objective is disabled)."""
    lambda_cov: float
    """float: weight in effect."""
    empty_rank_pairs: bool
    """bool: the ranking loss had no pairs to supervise."""
    empty_emb_pairs: bool
    """bool: the embedding loss had no pairs to supervise."""

    def recomputed_total(self) -> float:
        """The total, recomputed from the components and the weights."""
        return (
            self.lambda_rank * self.ranking
            + self.lambda_align * self.align
            + self.lambda_emb * self.embdist
        )


@remove_namedtuple_defaultdoc
class LossGradients(NamedTuple):
    """Gradients of the final objective with respect to the quantities
    consumed by :func:`ouiqa.scorer.backward`."""

    q: np.ndarray
    """numpy.ndarray: dL/dq, shape (N,)."""
    emb_hat: np.ndarray
    """numpy.ndarray: dL/dF_hat, shape (N, D)."""
    tau_emb: float
    """float: dL/dtau_emb."""
    tau_align: float
    """float: dL/dtau_align."""
    text_w: np.ndarray
    """numpy.ndarray: dL/dtext_w."""
    text_b: np.ndarray
    """numpy.ndarray: dL/dtext_b."""


def lambda_emb_schedule(final: float, epoch: int, fraction: float = 1.0) -> float:
    """Weight of the embedding objective.

    Zero during the first epoch, linear ramp during the second one
    (``final * fraction``, where ``fraction`` is ``(s+1)/S`` at step ``s``
    of ``S``), and ``final`` from the third epoch on. Epochs count from 1.
    """
    if epoch < 1:
        raise ValueError("Epochs count from 1, got {}".format(epoch))
    if epoch == 1:
        return 0.0
    if epoch == 2:
        return final * min(max(fraction, 0.0), 1.0)
    return final


def ablation_settings(config: int, base: Optional[LossSettings] = None) -> LossSettings:
    """Loss settings of the ablation configurations.

    1: ranking only; 2: ranking and embedding; 3: ranking and alignment;
    4: everything.
    """
    base = base or LossSettings()
    table = {1: (False, False), 2: (False, True), 3: (True, False), 4: (True, True)}
    if config not in table:
        raise ValueError("Ablation configurations are 1 to 4, got {}".format(config))
    align, embdist = table[config]
    return base._replace(align=align, embdist=embdist)


def total_loss(
    params: ScorerParams,
    batch: Sequence[BatchRecord],
    epoch: int,
    settings: LossSettings = LossSettings(),
    fraction: float = 1.0,
    seed: int = 0,
) -> Tuple[LossBreakdown, LossGradients]:
    """Final objective on a forwarded batch.

    ``L = lambda_rank * L_ranking + lambda_align * L_align + lambda_emb * L_embdist``
    with ``lambda_emb`` given by :func:`lambda_emb_schedule`. Batches of a
    single record contribute only through the alignment loss.

    Args:
        params: parameters used by the forward pass (temperatures and projection).
        batch: forwarded records; prompt embeddings are needed when the
            alignment loss is enabled.
        epoch: current epoch, from 1.
        settings: weights and switches.
        fraction: position inside the epoch, ``(s+1)/S``.
        seed: seed of the pair-of-pairs subsampling.

    Returns:
        The breakdown and the gradients of the total.
    """
    if settings.ranking not in RANKING_VARIANTS:
        raise ValueError("Unknown ranking variant {!r}".format(settings.ranking))
    q = scores_of(batch)
    d = severities_of(batch)
    emb_hat = embeddings_of(batch)
    n = len(batch)
    tau_emb = params.tau_emb
    lambda_align = settings.lambda_align if settings.align else 0.0
    lambda_emb = 0.0
    if settings.embdist:
        lambda_emb = lambda_emb_schedule(settings.lambda_emb, epoch, fraction)

    grad_q = np.zeros(n)
    grad_emb = np.zeros_like(emb_hat)
    grad_tau_emb = grad_tau_align = 0.0
    grad_text_w = np.zeros_like(params.text_w)
    grad_text_b = np.zeros_like(params.text_b)

    ranking = ranknet = mreg = edist = cov = align = 0.0
    empty_rank = empty_emb = True
    if n >= 2:
        ranking, grad_ranking = ranking_loss(
            q,
            d,
            settings.t_d,
            settings.lambda_mreg,
            settings.combo_cap,
            seed,
            settings.ranking,
            settings.margin,
        )
        mreg, _ = mreg_loss(q, d)
        ranknet = ranking - settings.lambda_mreg * mreg
        empty_rank = _is_empty(d, settings.t_d, settings.ranking == "pair-of-pairs")
        grad_q += settings.lambda_rank * grad_ranking

        if settings.embdist:
            edist, grad_edist, grad_tau = edist_loss(
                emb_hat, q, settings.t_q, tau_emb, settings.combo_cap, seed
            )
            empty_emb = _is_empty(q, settings.t_q, True)
            cov, grad_cov = cov_loss(emb_hat)
            grad_emb += lambda_emb * (grad_edist + settings.lambda_cov * grad_cov)
            grad_tau_emb += lambda_emb * grad_tau
    embdist = edist + settings.lambda_cov * cov

    if settings.align:
        align, grads = align_loss(
            emb_hat, prompts_of(batch), params.text_w, params.text_b, float(params.tau_align)
        )
        grad_emb += lambda_align * grads.emb_hat
        grad_text_w += lambda_align * grads.text_w
        grad_text_b += lambda_align * grads.text_b
        grad_tau_align += lambda_align * grads.tau_align

    breakdown = LossBreakdown(
        ranknet=ranknet,
        mreg=mreg,
        ranking=ranking,
        edist=edist,
        cov=cov,
        embdist=embdist,
        align=align,
        total=settings.lambda_rank * ranking + lambda_align * align + lambda_emb * embdist,
        lambda_rank=settings.lambda_rank,
        lambda_mreg=settings.lambda_mreg,
        lambda_align=lambda_align,
        lambda_emb=lambda_emb,
        lambda_cov=settings.lambda_cov,
        empty_rank_pairs=empty_rank,
        empty_emb_pairs=empty_emb,
    )
    if empty_rank and n >= 2:
        logger.debug("Batch without ranking pairs (severities %s)", d)
    return breakdown, LossGradients(
        q=grad_q,
        emb_hat=grad_emb,
        tau_emb=grad_tau_emb,
        tau_align=grad_tau_align,
        text_w=grad_text_w,
        text_b=grad_text_b,
    )


__all__ = [
    "RANKING_VARIANTS",
    "LossInputError",
    "PairSet",
    "PairOfPairsSet",
    "LossSettings",
    "LossBreakdown",
    "LossGradients",
    "build_pairs",
    "build_pair_of_pairs",
    "ranknet_loss",
    "mreg_loss",
    "pairwise_ranknet_loss",
    "margin_ranking_loss",
    "ranking_loss",
    "edist_loss",
    "cov_loss",
    "embdist_loss",
    "align_loss",
    "lambda_emb_schedule",
    "ablation_settings",
    "total_loss",
]
