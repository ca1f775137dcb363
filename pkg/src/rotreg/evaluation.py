"""Rotation-error metrics and report generation.

Everything internal is radians and meters; degrees appear only in the
human-readable summary block and the exported curve CSV. Report files
round-trip exactly: machine sections serialize floats with `repr`, so
read(write(report)) == report bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import so3
from .data import ObjectModel
from .errors import DataError
from .geometry import CameraIntrinsics, project

REPORT_FORMAT = "rotreg-eval-report-v1"

LOW_OCCLUSION_BOUNDARY = 0.2


@dataclass
class EvalRecord:
    """Per-frame outcome; `flagged` marks an occlusion factor clamped due to
    inconsistent pixel counts."""

    frame_id: str
    angle_error: float
    occlusion_factor: float
    add: Optional[float] = None
    flagged: bool = False


@dataclass
class BinStats:
    count: int
    mean: Optional[float]
    ci95: Optional[float]


@dataclass
class EvalReport:
    records: list
    accuracy_curve: list
    bins: dict
    add_accuracy: Optional[float] = None


def angle_error(r_hat, r) -> float:
    """Geodesic distance between predicted and true rotation, radians."""
    return so3.geodesic_loss(r_hat, r)


def add_metric(model: ObjectModel, rot, t, rot_hat, t_hat) -> float:
    """Mean displacement of the model points between the two poses."""
    pts = model.points
    if len(pts) == 0:
        raise DataError("ADD needs a non-empty model")
    a = pts @ np.asarray(rot).T + np.asarray(t)
    b = pts @ np.asarray(rot_hat).T + np.asarray(t_hat)
    return float(np.linalg.norm(a - b, axis=1).mean())


def add_correct(add: float, threshold: float) -> bool:
    """Strictly-smaller-than semantics; a value at the threshold fails."""
    return add < threshold


def occlusion_factor(mask_pixels: int, projected_pixels: int) -> float:
    """O = 1 - visible/projected, clamped to 0 when the mask overcounts.

    Callers should flag records where mask_pixels > projected_pixels.
    """
    if projected_pixels == 0:
        raise DataError("occlusion factor undefined for an empty projection")
    if mask_pixels > projected_pixels:
        return 0.0
    return 1.0 - mask_pixels / projected_pixels


def project_model_pixels(model: ObjectModel, rot, t, intr: CameraIntrinsics) -> int:
    """Distinct in-bounds pixels hit by the posed model's projection."""
    pts = model.points @ np.asarray(rot).T + np.asarray(t)
    uv = project(pts, intr)
    px = np.floor(uv + 0.5).astype(np.int64)
    inside = (px[:, 0] >= 0) & (px[:, 0] < intr.width) & (px[:, 1] >= 0) & (px[:, 1] < intr.height)
    return len(np.unique(px[inside], axis=0))


def bin_by_occlusion(records: Sequence[EvalRecord]) -> dict:
    """Split at O = 0.2 (boundary goes to moderate) and summarize each side
    with the mean angle error and a normal-approximation 95% CI half-width.

    The CI is absent for bins with fewer than 2 records.
    """
    out = {}
    for name, members in (
        ("low", [r for r in records if r.occlusion_factor < LOW_OCCLUSION_BOUNDARY]),
        ("moderate", [r for r in records if r.occlusion_factor >= LOW_OCCLUSION_BOUNDARY]),
    ):
        if not members:
            out[name] = BinStats(count=0, mean=None, ci95=None)
            continue
        errors = np.array([r.angle_error for r in members])
        ci = None
        if len(errors) >= 2:
            ci = 1.96 * errors.std(ddof=1) / math.sqrt(len(errors))
        out[name] = BinStats(count=len(errors), mean=float(errors.mean()), ci95=ci)
    return out


def accuracy_curve(records: Sequence[EvalRecord], thresholds: Sequence[float]) -> list:
    """Fraction of records with angle error strictly below each threshold."""
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    errors = np.array([r.angle_error for r in records])
    out = []
    for t in thresholds:
        frac = float((errors < t).mean()) if len(errors) else 0.0
        out.append((float(t), frac))
    return out


def make_report(
    records: Sequence[EvalRecord],
    thresholds: Sequence[float],
    add_threshold: Optional[float] = None,
) -> EvalReport:
    adds = [r.add for r in records if r.add is not None]
    add_accuracy = None
    if add_threshold is not None and adds:
        add_accuracy = sum(add_correct(a, add_threshold) for a in adds) / len(adds)
    return EvalReport(
        records=list(records),
        accuracy_curve=accuracy_curve(records, thresholds),
        bins=bin_by_occlusion(records),
        add_accuracy=add_accuracy,
    )


def _fmt(value) -> str:
    return "-" if value is None else repr(float(value))


def _parse(text: str) -> Optional[float]:
    return None if text == "-" else float(text)


def summary_lines(report: EvalReport) -> list[str]:
    """Human-oriented per-bin degrees summary."""
    lines = ["occlusion bin | count | mean error (deg) | 95% CI (deg)"]
    for name in ("low", "moderate"):
        stats = report.bins[name]
        mean = "-" if stats.mean is None else f"{math.degrees(stats.mean):.2f}"
        ci = "-" if stats.ci95 is None else f"{math.degrees(stats.ci95):.2f}"
        lines.append(f"{name} | {stats.count} | {mean} | {ci}")
    if report.add_accuracy is not None:
        lines.append(f"ADD accuracy: {report.add_accuracy:.4f}")
    return lines


def write_report(report: EvalReport, path, header_lines: Sequence[str] = ()):
    """Versioned structured-text report; `header_lines` become ignored
    comments, the machine sections round-trip exactly."""
    lines = [REPORT_FORMAT]
    comments = [*header_lines, "", "summary (normal-approximation CI):", *summary_lines(report)]
    lines.extend(f"# {c}".rstrip() for c in comments)
    lines.append("[records]")
    for r in report.records:
        if any(ch.isspace() for ch in r.frame_id):
            raise ValueError(f"frame id {r.frame_id!r} must not contain whitespace")
        lines.append(
            f"{r.frame_id} {_fmt(r.angle_error)} {_fmt(r.occlusion_factor)} {_fmt(r.add)} {int(r.flagged)}"
        )
    lines.append("[curve]")
    for threshold, fraction in report.accuracy_curve:
        lines.append(f"{_fmt(threshold)} {_fmt(fraction)}")
    lines.append("[bins]")
    for name in ("low", "moderate"):
        stats = report.bins[name]
        lines.append(f"{name} {stats.count} {_fmt(stats.mean)} {_fmt(stats.ci95)}")
    lines.append("[add_accuracy]")
    lines.append(_fmt(report.add_accuracy))
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> EvalReport:
    raw = Path(path).read_text().splitlines()
    if not raw or raw[0] != REPORT_FORMAT:
        raise DataError(f"{path} is not a {REPORT_FORMAT} file")
    section = None
    records = []
    curve = []
    bins = {}
    add_accuracy = None
    for line in raw[1:]:
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        fields = line.split()
        if section == "records":
            records.append(
                EvalRecord(
                    frame_id=fields[0],
                    angle_error=float(fields[1]),
                    occlusion_factor=float(fields[2]),
                    add=_parse(fields[3]),
                    flagged=bool(int(fields[4])),
                )
            )
        elif section == "curve":
            curve.append((float(fields[0]), float(fields[1])))
        elif section == "bins":
            bins[fields[0]] = BinStats(count=int(fields[1]), mean=_parse(fields[2]), ci95=_parse(fields[3]))
        elif section == "add_accuracy":
            add_accuracy = _parse(fields[0])
        else:
            raise DataError(f"unexpected content outside sections in {path}: {line!r}")
    return EvalReport(records=records, accuracy_curve=curve, bins=bins, add_accuracy=add_accuracy)


def write_curve_csv(report: EvalReport, path, header_lines: Sequence[str] = ()):
    """Two-column CSV (threshold_degrees, fraction) for external plotting."""
    lines = [f"# {h}" for h in header_lines]
    lines.append("threshold_degrees,fraction")
    for threshold, fraction in report.accuracy_curve:
        lines.append(f"{math.degrees(threshold):.6f},{fraction:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")
