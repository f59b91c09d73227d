"""Segment-aware evaluation of time-series anomaly detectors.

Point-wise scores misrepresent detectors on anomalies that span intervals,
so precision and recall are computed over maximal runs of flagged steps.
Each segment contributes a detection term (was it hit at all?) and a
portion term (how much of it overlaps), mixed by a weight ``theta``:

    precision = mean over predicted segments p of
                theta * [p overlaps truth] + (1 - theta) * |p & truth| / |p|
    recall    = mean over truth segments g of
                theta * [g is hit] + (1 - theta) * |g & pred| / |g|

with theta = 0.5 by default.  Their harmonic mean is the headline score.
Conventions: empty predictions against nonempty truth score 0 precision;
empty truth yields recall 1; both empty yields 1 and 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qtsad.errors import InputError

LabelSegments = list[tuple[int, int]]  # inclusive, sorted, disjoint


def segments_from_pointwise(flags: np.ndarray) -> LabelSegments:
    """Maximal runs of True as inclusive (start, end) pairs."""
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return []
    padded = np.concatenate([[False], flags, [False]])
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _validate_segments(segments: LabelSegments, what: str) -> None:
    prev_end = None
    for start, end in segments:
        if start > end:
            raise InputError(f"{what} segment ({start}, {end}) has start > end")
        if prev_end is not None and start <= prev_end:
            raise InputError(f"{what} segments must be sorted and disjoint")
        prev_end = end


def _overlap_length(segment: tuple[int, int], others: LabelSegments) -> int:
    start, end = segment
    total = 0
    for s, e in others:
        if s > end:
            break
        total += max(0, min(end, e) - max(start, s) + 1)
    return total


def etap(pred: LabelSegments, truth: LabelSegments, theta: float = 0.5) -> float:
    """Segment-aware precision in [0, 1]."""
    _validate_segments(pred, "predicted")
    _validate_segments(truth, "truth")
    if not pred:
        return 1.0 if not truth else 0.0
    total = 0.0
    for seg in pred:
        ov = _overlap_length(seg, truth)
        length = seg[1] - seg[0] + 1
        total += theta * (1.0 if ov else 0.0) + (1.0 - theta) * ov / length
    return total / len(pred)


def etar(pred: LabelSegments, truth: LabelSegments, theta: float = 0.5) -> float:
    """Segment-aware recall in [0, 1]; equals etap with roles swapped."""
    _validate_segments(pred, "predicted")
    _validate_segments(truth, "truth")
    if not truth:
        return 1.0
    total = 0.0
    for seg in truth:
        ov = _overlap_length(seg, pred)
        length = seg[1] - seg[0] + 1
        total += theta * (1.0 if ov else 0.0) + (1.0 - theta) * ov / length
    return total / len(truth)


def taf1(etap_value: float, etar_value: float) -> float:
    """Harmonic mean of the segment-aware precision and recall."""
    if etap_value + etar_value == 0:
        return 0.0
    return 2.0 * etap_value * etar_value / (etap_value + etar_value)


def point_prf(flags: np.ndarray, labels: np.ndarray) -> tuple[float, float, float]:
    """Point-wise (precision, recall, f1); zero where a denominator vanishes."""
    flags = np.asarray(flags, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if flags.shape != labels.shape:
        raise InputError(f"length mismatch: {flags.shape} vs {labels.shape}")
    tp = int(np.sum(flags & labels))
    fp = int(np.sum(flags & ~labels))
    fn = int(np.sum(~flags & labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class MetricReport:
    etap: float
    etar: float
    taf1: float
    point_precision: float
    point_recall: float
    point_f1: float

    def as_dict(self) -> dict[str, float]:
        return {
            "etap": self.etap,
            "etar": self.etar,
            "taf1": self.taf1,
            "point_precision": self.point_precision,
            "point_recall": self.point_recall,
            "point_f1": self.point_f1,
        }


REPORT_FIELDS = (
    "etap",
    "etar",
    "taf1",
    "point_precision",
    "point_recall",
    "point_f1",
)


def evaluate_flags(flags: np.ndarray, labels: np.ndarray, theta: float = 0.5) -> MetricReport:
    """Full report for point-wise prediction flags against point-wise labels."""
    pred = segments_from_pointwise(flags)
    truth = segments_from_pointwise(labels)
    p = etap(pred, truth, theta)
    r = etar(pred, truth, theta)
    pp, pr, pf = point_prf(flags, labels)
    return MetricReport(p, r, taf1(p, r), pp, pr, pf)


def write_report_csv(report: MetricReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(REPORT_FIELDS) + "\n")
        fh.write(",".join(repr(getattr(report, f)) for f in REPORT_FIELDS) + "\n")


def format_report_table(report: MetricReport) -> str:
    """Fixed-width summary table, headline columns first."""
    lines = [
        f"{'TaF1':>8} {'eTaP':>8} {'eTaR':>8}",
        f"{report.taf1:8.4f} {report.etap:8.4f} {report.etar:8.4f}",
        "",
        f"point precision {report.point_precision:.4f}",
        f"point recall    {report.point_recall:.4f}",
        f"point f1        {report.point_f1:.4f}",
    ]
    return "\n".join(lines)
