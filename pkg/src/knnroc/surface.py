"""ROC surface evaluation over a grid of cut pairs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data import CutPair, Dataset
from .errors import NumericalError, ValidationError
from .estimate import EstimatorSpec, prepare
from .estimates import TcfEstimate


@dataclass(frozen=True)
class GridSpec:
    """Either ``m`` empirical quantiles of ``t`` or an explicit list of cut pairs."""

    quantiles: int | None = None
    cuts: tuple[CutPair, ...] | None = None

    def __post_init__(self):
        if (self.quantiles is None) == (self.cuts is None):
            raise ValidationError("grid needs exactly one of quantiles or cuts")
        if self.quantiles is not None and self.quantiles < 2:
            raise ValidationError("quantile grid needs m >= 2")

    @classmethod
    def parse(cls, text: str, read_file=None) -> "GridSpec":
        """``quantile:m`` or ``file:cuts.csv`` (header ``c1,c2``)."""
        kind, _, arg = text.partition(":")
        if kind == "quantile":
            try:
                return cls(quantiles=int(arg))
            except ValueError:
                raise ValidationError(f"malformed quantile grid {text!r}") from None
        if kind == "file":
            reader = read_file or (lambda p: open(p, encoding="utf-8").read())
            return cls(cuts=parse_cut_file(reader(arg)))
        raise ValidationError(f"grid must be quantile:m or file:path, got {text!r}")


def parse_cut_file(text: str) -> tuple[CutPair, ...]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["c1", "c2"]:
        raise ValidationError("cut file needs header c1,c2")
    cuts = []
    for row_no, row in enumerate(rows[1:], start=2):
        if not any(c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ValidationError(f"expected 2 columns, row {row_no}")
        try:
            c1, c2 = float(row[0]), float(row[1])
        except ValueError:
            raise ValidationError(f"malformed number, row {row_no}") from None
        try:
            cuts.append(CutPair(c1, c2))
        except ValidationError as exc:
            raise ValidationError(f"{exc}, row {row_no}") from None
    return tuple(cuts)


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    cut_pairs: tuple[CutPair, ...]
    points: tuple[TcfEstimate, ...]
    estimator: str
    monotone_envelope: bool = False
    duplicate_quantiles: int = 0
    skipped: tuple[str, ...] = field(default_factory=tuple)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["c1", "c2", "tcf1", "tcf2", "tcf3"])
        for p in self.points:
            w.writerow([repr(p.cut.c1), repr(p.cut.c2), *(repr(float(x)) for x in p.tcf)])
        return out.getvalue()


def quantile_cuts(t: np.ndarray, m: int) -> tuple[tuple[CutPair, ...], int]:
    """All ordered pairs of ``m`` empirical quantiles; returns (pairs, duplicates dropped)."""
    probs = np.arange(1, m + 1) / (m + 1)
    q = np.quantile(np.asarray(t, dtype=float), probs)
    uniq = np.unique(q)
    pairs = tuple(CutPair(float(uniq[i]), float(uniq[j])) for i in range(uniq.size) for j in range(i + 1, uniq.size))
    return pairs, int(q.size - uniq.size)


def roc_surface(dataset: Dataset, spec: EstimatorSpec, grid: GridSpec) -> SurfaceGrid:
    """One TCF triple per cut pair, sharing a single weight matrix.

    Pairs where the estimator cannot be evaluated are skipped and noted.
    """
    dup = 0
    if grid.quantiles is not None:
        cuts, dup = quantile_cuts(dataset.t, grid.quantiles)
    else:
        cuts = grid.cuts
    prepared = prepare(dataset, spec)
    points, kept, skipped = [], [], []
    for cut in cuts:
        try:
            points.append(prepared.tcf(cut))
            kept.append(cut)
        except NumericalError as exc:
            skipped.append(f"({cut.c1}, {cut.c2}): {exc}")
    return SurfaceGrid(tuple(kept), tuple(points), spec.label, False, dup, tuple(skipped))
