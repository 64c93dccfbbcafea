"""Dataset representation, CSV ingestion/serialization and verification subsampling.

A dataset holds, for each of ``n`` units, the diagnostic test result ``t``,
a vector of ``p`` continuous covariates ``a``, the verification flag ``v``
and the disease class ``d`` in ``{1, 2, 3}`` (present only when ``v == 1``).
Arrays are stored column-wise and frozen after construction.
"""

from __future__ import annotations

import csv
import io
import operator
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import ValidationError

N_CLASSES = 3


@dataclass(frozen=True)
class Unit:
    t: float
    a: tuple[float, ...]
    v: int
    d: int | None = None

    def __post_init__(self):
        if self.v not in (0, 1):
            raise ValidationError(f"v must be 0 or 1, got {self.v!r}")
        if self.v == 0 and self.d is not None:
            raise ValidationError("label present for unverified unit")
        if self.v == 1 and self.d not in (1, 2, 3):
            raise ValidationError(f"verified unit needs a label in {{1,2,3}}, got {self.d!r}")


@dataclass(frozen=True)
class CutPair:
    c1: float
    c2: float

    def __post_init__(self):
        if not (np.isfinite(self.c1) and np.isfinite(self.c2)):
            raise ValidationError("cut points must be finite")
        if not self.c1 < self.c2:
            raise ValidationError(f"cut points need c1 < c2, got ({self.c1}, {self.c2})")

    @classmethod
    def parse(cls, text: str) -> "CutPair":
        parts = text.split(",")
        if len(parts) != 2:
            raise ValidationError(f"cut pair must look like 'c1,c2', got {text!r}")
        try:
            return cls(float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise ValidationError(f"malformed cut pair {text!r}") from exc

    def __iter__(self):
        return iter((self.c1, self.c2))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of units.

    ``d`` uses 0 for a missing label; use :meth:`onehot` for the
    indicator matrix ``D`` (all-zero rows for unverified units).
    """

    t: np.ndarray
    a: np.ndarray
    v: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        a = np.asarray(self.a, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        v = np.asarray(self.v)
        d = np.asarray(self.d)
        n = t.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one unit")
        if a.ndim != 2 or a.shape[0] != n or a.shape[1] < 1:
            raise ValidationError(f"covariates must have shape (n, p>=1); got {a.shape} for n={n}")
        if v.shape != (n,) or d.shape != (n,):
            raise ValidationError("v and d must be length-n vectors")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a))):
            raise ValidationError("test results and covariates must be finite")
        if not np.all((v == 0) | (v == 1)):
            raise ValidationError("v must be 0/1")
        v = v.astype(np.int8)
        d = d.astype(np.int8)
        if np.any((v == 0) & (d != 0)):
            raise ValidationError("label present for unverified unit")
        if np.any((v == 1) & ~np.isin(d, (1, 2, 3))):
            raise ValidationError("verified units need a label in {1,2,3}")
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "v", _frozen(v))
        object.__setattr__(self, "d", _frozen(d))

    @classmethod
    def from_units(cls, units: Iterable[Unit]) -> "Dataset":
        units = list(units)
        if not units:
            raise ValidationError("dataset must contain at least one unit")
        p = len(units[0].a)
        if any(len(u.a) != p for u in units):
            raise ValidationError("all units must share the same covariate dimension")
        return cls(
            t=np.array([u.t for u in units], dtype=float),
            a=np.array([u.a for u in units], dtype=float).reshape(len(units), p),
            v=np.array([u.v for u in units]),
            d=np.array([0 if u.d is None else u.d for u in units]),
        )

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def p(self) -> int:
        return self.a.shape[1]

    @property
    def verified(self) -> np.ndarray:
        return self.v == 1

    @property
    def n_verified(self) -> int:
        return int(self.v.sum())

    @property
    def units(self) -> list[Unit]:
        return list(self)

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Unit]:
        for i in range(self.n):
            yield Unit(
                t=float(self.t[i]),
                a=tuple(float(x) for x in self.a[i]),
                v=int(self.v[i]),
                d=int(self.d[i]) if self.v[i] else None,
            )

    def features(self) -> np.ndarray:
        """Joint ``(t, a1..ap)`` feature matrix used by neighbor searches."""
        return np.column_stack([self.t, self.a])

    def onehot(self) -> np.ndarray:
        out = np.zeros((self.n, N_CLASSES))
        ver = np.flatnonzero(self.verified)
        out[ver, self.d[ver] - 1] = 1.0
        return out

    def class_counts(self) -> np.ndarray:
        """Verified unit counts per class, length 3."""
        return np.bincount(self.d[self.verified], minlength=N_CLASSES + 1)[1:]

    def take(self, idx: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.t[idx], self.a[idx], self.v[idx], self.d[idx])

    def with_verification(self, v: np.ndarray) -> "Dataset":
        """Copy with a new verification vector; labels are blanked where ``v == 0``."""
        v = np.asarray(v).astype(np.int8)
        d = np.where(v == 1, self.d, 0)
        return Dataset(self.t, self.a, v, d)

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.d, other.d)
        )


# --------------------------------------------------------------------------- CSV


def _read_text(source: IO | bytes | str) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_float(cell: str, what: str, row: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ValidationError(f"malformed number {cell!r} in column {what}, row {row}") from None
    if not np.isfinite(value):
        raise ValidationError(f"non-finite value {cell!r} in column {what}, row {row}")
    return value


def load_dataset(source: IO | bytes | str) -> Dataset:
    """Parse CSV text with header ``t,a1..ap,v,d`` into a :class:`Dataset`.

    Row numbers in error messages are 1-based file lines, so the first data
    row is row 2.
    """
    text = _read_text(source)
    rows = list(csv.reader(io.StringIO(text)))
    while rows and not any(c.strip() for c in rows[-1]):
        rows.pop()
    if not rows:
        raise ValidationError("empty input: header row is mandatory")
    header = [h.strip() for h in rows[0]]
    p = len(header) - 3
    expected = ["t"] + [f"a{j}" for j in range(1, p + 1)] + ["v", "d"]
    if p < 1 or header != expected:
        raise ValidationError(
            f"header must be t,a1..ap,v,d with p>=1; got {','.join(header)!r}"
        )
    t, a, v, d = [], [], [], []
    for row_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(
                f"expected {len(header)} columns, found {len(row)}, row {row_no}"
            )
        cells = [c.strip() for c in row]
        t.append(_parse_float(cells[0], "t", row_no))
        a.append([_parse_float(c, f"a{j}", row_no) for j, c in enumerate(cells[1:-2], start=1)])
        if cells[-2] not in ("0", "1"):
            raise ValidationError(f"v must be 0 or 1, got {cells[-2]!r}, row {row_no}")
        vi = int(cells[-2])
        label = cells[-1]
        if vi == 0:
            if label != "":
                raise ValidationError(f"label present for unverified unit, row {row_no}")
            di = 0
        else:
            if label == "":
                raise ValidationError(f"label missing for verified unit, row {row_no}")
            if label not in ("1", "2", "3"):
                raise ValidationError(f"label must be 1, 2 or 3, got {label!r}, row {row_no}")
            di = int(label)
        v.append(vi)
        d.append(di)
    if not t:
        raise ValidationError("dataset must contain at least one unit")
    return Dataset(np.array(t), np.array(a).reshape(len(t), p), np.array(v), np.array(d))


def serialize(dataset: Dataset) -> str:
    """CSV text in the same schema accepted by :func:`load_dataset`.

    Floats are written with ``repr`` so that a round trip is bit-exact.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["t"] + [f"a{j}" for j in range(1, dataset.p + 1)] + ["v", "d"])
    for i in range(dataset.n):
        writer.writerow(
            [repr(float(dataset.t[i]))]
            + [repr(float(x)) for x in dataset.a[i]]
            + [int(dataset.v[i]), int(dataset.d[i]) if dataset.v[i] else ""]
        )
    return out.getvalue()


# ---------------------------------------------------------------------- validate


@dataclass(frozen=True)
class ValidationReport:
    n: int
    verified_counts: tuple[int, int, int]
    verification_rate: float
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.warnings


def validate(dataset: Dataset, cut: CutPair) -> ValidationReport:
    counts = tuple(int(c) for c in dataset.class_counts())
    warnings = [f"class {k} has 0 verified units" for k, c in enumerate(counts, start=1) if c == 0]
    lo, hi = float(dataset.t.min()), float(dataset.t.max())
    for name, c in (("c1", cut.c1), ("c2", cut.c2)):
        if c < lo:
            warnings.append(f"{name} is below observed test range")
        elif c > hi:
            warnings.append(f"{name} exceeds observed test range")
    return ValidationReport(
        n=dataset.n,
        verified_counts=counts,
        verification_rate=dataset.n_verified / dataset.n,
        warnings=tuple(warnings),
    )


# ------------------------------------------------------------ selection process

_OPS = {">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le}
_TERM = re.compile(
    r"^(?P<coef>[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*\*\s*I\(\s*(?P<var>t|a\d+)\s*"
    r"(?P<op>>=|<=|>|<)\s*(?P<thr>[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*\)$"
)
_PROB_TOL = 1e-12


@dataclass(frozen=True)
class IndicatorTerm:
    coef: float
    variable: str
    op: str
    threshold: float


@dataclass(frozen=True)
class SelectionRule:
    """Verification probability ``b0 + sum_m b_m * I(x_m op threshold_m)``."""

    intercept: float
    terms: tuple[IndicatorTerm, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "SelectionRule":
        """Parse e.g. ``"0.05 + 0.35*I(t>0.87) + 0.25*I(a1>0.30)"``.

        ``"1"`` and ``"0"`` give the always/never verify rules.
        """
        compact = text.replace(" ", "")
        if not compact:
            raise ValidationError("empty selection rule")
        pieces = re.split(r"\+(?![^(]*\))", compact)
        intercept = 0.0
        terms = []
        for piece in pieces:
            if not piece:
                raise ValidationError(f"malformed selection rule {text!r}")
            m = _TERM.match(piece)
            if m:
                terms.append(
                    IndicatorTerm(float(m["coef"]), m["var"], m["op"], float(m["thr"]))
                )
                continue
            try:
                intercept += float(piece)
            except ValueError:
                raise ValidationError(f"cannot parse selection term {piece!r}") from None
        return cls(intercept, tuple(terms))

    def probabilities(self, dataset: Dataset) -> np.ndarray:
        prob = np.full(dataset.n, self.intercept)
        for term in self.terms:
            if term.variable == "t":
                x = dataset.t
            else:
                j = int(term.variable[1:])
                if not 1 <= j <= dataset.p:
                    raise ValidationError(f"rule references {term.variable} but p={dataset.p}")
                x = dataset.a[:, j - 1]
            prob = prob + term.coef * _OPS[term.op](x, term.threshold)
        bad = np.flatnonzero((prob < -_PROB_TOL) | (prob > 1 + _PROB_TOL))
        if bad.size:
            raise ValidationError(
                f"selection probability outside [0,1] for {bad.size} units "
                f"(first: unit {bad[0] + 1}, p={prob[bad[0]]:.6g})"
            )
        # only absorbs summation round-off, real violations raised above
        return np.clip(prob, 0.0, 1.0)


def subsample_verification(
    dataset: Dataset, rule: SelectionRule | str, seed: int
) -> Dataset:
    """Mimic verification bias on a fully verified dataset.

    Each unit is kept verified with the probability given by ``rule``;
    labels are blanked for units that end up unverified.
    """
    if isinstance(rule, str):
        rule = SelectionRule.parse(rule)
    if dataset.n_verified != dataset.n:
        raise ValidationError("subsampling requires a fully verified input dataset")
    prob = rule.probabilities(dataset)
    rng = np.random.default_rng(seed)
    v = (rng.random(dataset.n) < prob).astype(np.int8)
    return dataset.with_verification(v)
