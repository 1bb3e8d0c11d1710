# coding: utf-8
"""Evaluation of predicted quality scores.

Correlation with reference scores (:func:`srocc`, :func:`plcc`), separation
between the score distributions of two image sets (:func:`overlap`), and
export of scores, embeddings and reports to CSV, SVG and JSON files.
"""

from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple
import csv
import json
import logging
import os
import os.path

import numpy as np
from scipy.stats import pearsonr, rankdata  # type: ignore

from .model import remove_namedtuple_defaultdoc

logger = logging.getLogger(__name__)

DEFAULT_BINS = 50
REPORT_SCHEMA = "ouiqa-report"
REPORT_VERSION = 1

SCORES_FILE = "scores.csv"
EMBEDDINGS_FILE = "embeddings.csv"
FIGURE_FILE = "overlap.svg"
REPORT_FILE = "report.json"

SVG_OPEN = '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}">'
SVG_POLYGON = '<polygon class="{0}" fill="{1}" fill-opacity="0.4" stroke="{1}" points="{2}"/>'
SVG_TEXT = '<text id="overlap" x="{}" y="{}" data-overlap="{!r}">overlap = {!r} ({} bins)</text>'
COLORS = {"high": "#1f77b4", "low": "#d62728"}


class EvaluationError(ValueError):
    """Base class of the errors of this module"""


class UndefinedCorrelationError(EvaluationError):
    """The correlation is undefined for the given inputs"""


class EmptySetError(EvaluationError):
    """Some score set is empty"""


###############################################################################
# Metrics
###############################################################################
def _paired(pred: Sequence[float], ref: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    pred_array = np.asarray(pred, dtype=np.float64)
    ref_array = np.asarray(ref, dtype=np.float64)
    if pred_array.shape != ref_array.shape or pred_array.ndim != 1:
        raise EvaluationError(
            "Predictions and references must be vectors of the same length, "
            "got shapes {} and {}".format(pred_array.shape, ref_array.shape)
        )
    if len(pred_array) < 3:
        raise UndefinedCorrelationError(
            "At least 3 samples are needed, got {}".format(len(pred_array))
        )
    return pred_array, ref_array


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("Correlation of a constant input is undefined")
    return float(np.clip(pearsonr(x, y)[0], -1.0, 1.0))


def plcc(pred: Sequence[float], ref: Sequence[float]) -> float:
    """Pearson linear correlation coefficient (no prior nonlinear fitting).

    Raises:
        UndefinedCorrelationError: with fewer than 3 samples or a constant input.
    """
    return _pearson(*_paired(pred, ref))


def srocc(pred: Sequence[float], ref: Sequence[float]) -> float:
    """Spearman rank-order correlation coefficient.

    Without ties it is ``1 - 6 sum(d_i**2) / (N (N**2 - 1))`` over the rank
    differences ``d_i``; with ties, the Pearson correlation of the average
    ranks, which reduces to the former when there are no ties.

    Raises:
        UndefinedCorrelationError: with fewer than 3 samples or when every
            value of some input is tied.
    """
    pred_array, ref_array = _paired(pred, ref)
    pred_ranks = rankdata(pred_array)
    ref_ranks = rankdata(ref_array)
    n = len(pred_ranks)
    distinct = len(np.unique(pred_array)), len(np.unique(ref_array))
    if min(distinct) == 1:
        raise UndefinedCorrelationError("Rank correlation of an all-tied input is undefined")
    if distinct == (n, n):
        differences = pred_ranks - ref_ranks
        return float(1.0 - 6.0 * (differences ** 2).sum() / (n * (n * n - 1)))
    return _pearson(pred_ranks, ref_ranks)


@remove_namedtuple_defaultdoc
class HistogramSpec(NamedTuple):
    """Binning used to compare two score distributions."""

    bins: int
    """int: number of bins."""
    low: float
    """float: left edge of the first bin."""
    high: float
    """float: right edge of the last bin."""

    def edges(self) -> np.ndarray:
        """Bin edges, as :func:`numpy.histogram` computes them."""
        return np.histogram_bin_edges([], bins=self.bins, range=(self.low, self.high))

    def normalized(self, values: Sequence[float]) -> np.ndarray:
        """Histogram of ``values`` divided by their count."""
        counts, _ = np.histogram(values, bins=self.bins, range=(self.low, self.high))
        return counts / len(values)


def histogram_spec(
    first: Sequence[float], second: Sequence[float], bins: int = DEFAULT_BINS
) -> HistogramSpec:
    """Bins over the pooled range of two sets. A constant pool gets a unit
    range centered on its value.

    Raises:
        EmptySetError: if some set is empty.
        ValueError: if ``bins`` is below 2.
    """
    if len(first) == 0 or len(second) == 0:
        raise EmptySetError("Both score sets must be nonempty")
    if bins < 2:
        raise EvaluationError("At least 2 bins are needed, got {}".format(bins))
    pooled = np.concatenate(
        [np.asarray(first, dtype=np.float64), np.asarray(second, dtype=np.float64)]
    )
    low, high = float(pooled.min()), float(pooled.max())
    if low == high:
        low, high = low - 0.5, high + 0.5
    return HistogramSpec(int(bins), low, high)


def overlap(high: Sequence[float], low: Sequence[float], bins: int = DEFAULT_BINS) -> float:
    """Histogram intersection of two score sets: the sum over the bins of the
    minimum of their normalized histograms, in [0, 1].

    Raises:
        EmptySetError: if some set is empty.
    """
    spec = histogram_spec(high, low, bins)
    return float(np.minimum(spec.normalized(high), spec.normalized(low)).sum())


###############################################################################
# Reports
###############################################################################
@remove_namedtuple_defaultdoc
class ScoreSummary(NamedTuple):
    """Descriptive statistics of a score set."""

    n: int
    """int: number of scores."""
    mean: float
    """float: mean."""
    std: float
    """float: population standard deviation."""
    min: float
    """float: minimum."""
    max: float
    """float: maximum."""


def summarize(values: Sequence[float]) -> ScoreSummary:
    """Summary of a nonempty set of scores."""
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise EmptySetError("Cannot summarize an empty set")
    return ScoreSummary(
        int(array.size),
        float(array.mean()),
        float(array.std()),
        float(array.min()),
        float(array.max()),
    )


@remove_namedtuple_defaultdoc
class EvalReport(NamedTuple):
    """Outcome of an evaluation or of a separation analysis."""

    n: int
    """int: number of scored images."""
    srocc: Optional[float] = None
    """float: rank correlation with the references (None if not computed)."""
    plcc: Optional[float] = None
    """float: linear correlation with the references (None if not computed)."""
    summaries: Mapping[str, ScoreSummary] = {}
    """Mapping[str, :class:`ScoreSummary`]: per-set score summaries."""
    overlap_fraction: Optional[float] = None
    """float: histogram intersection of the two sets (None if not computed)."""
    histogram: Optional[HistogramSpec] = None
    """:class:`HistogramSpec`: binning used for ``overlap_fraction``."""
    notes: Tuple[str, ...] = ()
    """Tuple[str, ...]: remarks, e.g. omitted outputs."""

    def to_dict(self) -> Dict[str, Any]:
        """JSON-serializable form, with schema name and version."""
        return {
            "schema": REPORT_SCHEMA,
            "version": REPORT_VERSION,
            "n": self.n,
            "srocc": self.srocc,
            "plcc": self.plcc,
            "summaries": {name: summary._asdict() for name, summary in self.summaries.items()},
            "overlap_fraction": self.overlap_fraction,
            "histogram": None if self.histogram is None else self.histogram._asdict(),
            "notes": list(self.notes),
        }


def evaluate(pred: Sequence[float], ref: Sequence[float], name: str = "all") -> EvalReport:
    """Correlations of predicted scores with reference scores (higher is
    better for both)."""
    return EvalReport(
        n=len(pred),
        srocc=srocc(pred, ref),
        plcc=plcc(pred, ref),
        summaries={name: summarize(pred)},
    )


def separation_report(
    high: Sequence[float], low: Sequence[float], bins: int = DEFAULT_BINS
) -> EvalReport:
    """Overlap between the scores of a high-quality and a low-quality set."""
    spec = histogram_spec(high, low, bins)
    return EvalReport(
        n=len(high) + len(low),
        summaries={"high": summarize(high), "low": summarize(low)},
        overlap_fraction=float(np.minimum(spec.normalized(high), spec.normalized(low)).sum()),
        histogram=spec,
    )


###############################################################################
# Exports
###############################################################################
@remove_namedtuple_defaultdoc
class ScoreRow(NamedTuple):
    """One line of the scores CSV."""

    record_id: str
    """str: record id or image path."""
    severity: float
    """float: severity label (nan when unknown)."""
    score: float
    """float: predicted quality q."""


def write_scores_csv(rows: Sequence[ScoreRow], filename: str) -> None:
    """Writes ``id,severity,q`` lines, floats in their shortest exact form."""
    with open(filename, "w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(("id", "severity", "q"))
        for row in rows:
            writer.writerow((row.record_id, repr(float(row.severity)), repr(float(row.score))))


def read_scores_csv(filename: str) -> List[ScoreRow]:
    """Inverse of :func:`write_scores_csv`.

    Raises:
        EvaluationError: if the header is not the expected one.
    """
    with open(filename, newline="") as stream:
        reader = csv.reader(stream)
        if next(reader, None) != ["id", "severity", "q"]:
            raise EvaluationError("{}: not a scores file".format(filename))
        return [ScoreRow(line[0], float(line[1]), float(line[2])) for line in reader if line]


def write_embeddings_csv(embeddings: Sequence[Tuple[str, np.ndarray]], filename: str) -> None:
    """Writes ``id,e0,...,e{D-1}`` lines, for external projection."""
    width = len(embeddings[0][1])
    with open(filename, "w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["id"] + ["e{}".format(k) for k in range(width)])
        for key, vector in embeddings:
            writer.writerow([key] + [repr(float(value)) for value in vector])


def _histogram_polygon(fractions: np.ndarray, edges: np.ndarray, scale_x, scale_y) -> str:
    points = [(edges[0], 0.0)]
    for fraction, left, right in zip(fractions, edges[:-1], edges[1:]):
        points.append((left, fraction))
        points.append((right, fraction))
    points.append((edges[-1], 0.0))
    return " ".join("{:.2f},{:.2f}".format(scale_x(x), scale_y(y)) for x, y in points)


def overlap_svg(report: EvalReport, high: Sequence[float], low: Sequence[float]) -> str:
    """SVG 1.1 figure with the normalized histograms of both sets, as two
    polygons, and the overlap fraction as annotation."""
    if report.histogram is None or report.overlap_fraction is None:
        raise EvaluationError("The report has no separation analysis to draw")
    spec = report.histogram
    edges = spec.edges()
    high_fractions = spec.normalized(high)
    low_fractions = spec.normalized(low)
    width, height, margin = 640, 360, 40
    top = max(high_fractions.max(), low_fractions.max())

    def scale_x(x):
        return margin + (x - spec.low) / (spec.high - spec.low) * (width - 2 * margin)

    def scale_y(y):
        return height - margin - y / top * (height - 2 * margin)

    def polygon(fractions):
        return _histogram_polygon(fractions, edges, scale_x, scale_y)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        SVG_OPEN.format(width, height),
        SVG_POLYGON.format("high", COLORS["high"], polygon(high_fractions)),
        SVG_POLYGON.format("low", COLORS["low"], polygon(low_fractions)),
        SVG_TEXT.format(
            margin, margin / 2, report.overlap_fraction, report.overlap_fraction, spec.bins
        ),
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def export_report(
    report: EvalReport,
    scores: Sequence[ScoreRow],
    embeddings: Sequence[Tuple[str, np.ndarray]],
    out_dir: str,
    sets: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
) -> Tuple[EvalReport, Dict[str, str]]:
    """Writes the outputs of an evaluation to ``out_dir``.

    The files are the scores CSV, the embeddings CSV (omitted, with a note in
    the report, when there are no embeddings), the overlap figure (when the
    report holds a separation analysis and ``sets`` gives the high and low
    scores) and the JSON report.

    Returns:
        The report as written (with its notes) and the written files by kind.
    """
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    files["scores"] = os.path.join(out_dir, SCORES_FILE)
    write_scores_csv(scores, files["scores"])

    notes = list(report.notes)
    if embeddings:
        files["embeddings"] = os.path.join(out_dir, EMBEDDINGS_FILE)
        write_embeddings_csv(embeddings, files["embeddings"])
    else:
        notes.append("embeddings omitted: no embeddings were given")

    if sets is not None and report.overlap_fraction is not None:
        files["figure"] = os.path.join(out_dir, FIGURE_FILE)
        with open(files["figure"], "w") as stream:
            stream.write(overlap_svg(report, *sets))

    report = report._replace(notes=tuple(notes))
    files["report"] = os.path.join(out_dir, REPORT_FILE)
    with open(files["report"], "w") as stream:
        json.dump(report.to_dict(), stream, indent=2, sort_keys=True)
        stream.write("\n")
    logger.info("Exported %s", ", ".join(sorted(files.values())))
    return report, files


__all__ = [
    "EvaluationError",
    "UndefinedCorrelationError",
    "EmptySetError",
    "HistogramSpec",
    "ScoreSummary",
    "EvalReport",
    "ScoreRow",
    "plcc",
    "srocc",
    "overlap",
    "histogram_spec",
    "summarize",
    "evaluate",
    "separation_report",
    "write_scores_csv",
    "read_scores_csv",
    "export_report",
]
