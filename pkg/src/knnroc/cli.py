"""Command-line interface.

Exit codes: 0 success, 1 invalid input or arguments, 2 numerical failure.
Errors are written to stderr as a JSON object; outputs are written
atomically so a failed run never leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import warnings

import numpy as np

from . import __version__
from .bootstrap import bootstrap_covariance
from .data import CutPair, SelectionRule, load_dataset, serialize, subsample_verification, validate
from .errors import NumericalError, ValidationError
from .estimate import EstimatorSpec, asymptotic_covariance, prepare
from .estimates import EstimatorTag
from .neighbors import Metric, MetricKind, NeighborOrder, select_k_curve
from .simulation import load_simulation_config
from .surface import GridSpec, roc_surface
from .variance import DEFAULT_K_BAR, confidence_ellipsoid

SCHEMA = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, out: str | None) -> None:
    if out:
        _write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps({"schema": SCHEMA, **obj}, indent=2, sort_keys=True) + "\n"


def _read_input(path: str):
    try:
        with open(path, "rb") as fh:
            return load_dataset(fh.read())
    except OSError as exc:
        raise ValidationError(f"cannot read input: {exc}") from None


def _matrix(m):
    return None if m is None else [[float(x) for x in row] for row in np.asarray(m)]


def _vector(v):
    return None if v is None else [float(x) for x in v]


def _add_estimator_args(p, with_variance=True):
    p.add_argument("--input", required=True)
    p.add_argument("--estimator", required=True, choices=[t.value for t in EstimatorTag])
    group = p.add_mutually_exclusive_group()
    group.add_argument("--k", type=int)
    group.add_argument("--select-k", action="store_true")
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--metric", default="euclidean", choices=[m.value for m in MetricKind])
    p.add_argument("--disease-formula")
    p.add_argument("--verification-formula")
    p.add_argument("--clamp-propensity", action="store_true")
    p.add_argument("--k-bar", type=int, default=DEFAULT_K_BAR)
    if with_variance:
        p.add_argument("--variance", choices=["asymptotic", "bootstrap", "none"])
        p.add_argument("--b", type=int, default=500)
        p.add_argument("--seed", type=int, default=0)


def _spec(args, dataset):
    metric = Metric.parse(args.metric)
    tag = EstimatorTag(args.estimator)
    k = args.k
    selection = None
    if tag is EstimatorTag.KNN:
        if args.select_k:
            selection = select_k_curve(dataset, metric, min(args.k_max, dataset.n_verified - 1))
            k = selection.k_star
        elif k is None:
            raise ValidationError("knn needs --k N or --select-k")
    spec = EstimatorSpec(
        tag, k=k if tag is EstimatorTag.KNN else None, metric=metric,
        disease_formula=args.disease_formula, verification_formula=args.verification_formula,
        clamp_propensity=args.clamp_propensity, k_bar=args.k_bar,
    )
    return spec, selection


def _estimate_with_variance(args, dataset, cut, default_variance):
    spec, selection = _spec(args, dataset)
    mode = getattr(args, "variance", None) or default_variance(spec)
    order = NeighborOrder(dataset, spec.metric) if spec.tag is EstimatorTag.KNN else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        prepared = prepare(dataset, spec, order=order)
        est = prepared.tcf(cut)
        extra = {}
        if mode == "asymptotic":
            est = est.with_covariance(asymptotic_covariance(prepared, cut, order=order))
        elif mode == "bootstrap":
            boot = bootstrap_covariance(dataset, spec, cut, args.b, args.seed)
            est = est.with_covariance(boot.covariance)
            extra = {"bootstrap_b": boot.b, "bootstrap_failures": boot.failures, "seed": boot.seed}
    notes = [str(w.message) for w in caught]
    return spec, est, mode, selection, extra, notes


def _default_variance(spec):
    return "asymptotic" if spec.tag in (EstimatorTag.KNN, EstimatorTag.COMPLETE) else "none"


def cmd_estimate(args):
    dataset = _read_input(args.input)
    cut = CutPair.parse(args.cut)
    spec, est, mode, selection, extra, notes = _estimate_with_variance(args, dataset, cut, _default_variance)
    report = validate(dataset, cut)
    payload = {
        "estimator": spec.tag.value,
        "k": spec.k,
        "cut": [cut.c1, cut.c2],
        "tcf": _vector(est.tcf),
        "covariance": _matrix(est.covariance),
        "sd": _vector(est.sd),
        "out_of_range": est.out_of_range,
        "variance": mode,
        "warnings": list(report.warnings) + notes,
        **extra,
    }
    if selection is not None:
        payload["k_selection"] = list(selection.criterion)
    _emit(_json(payload), args.out)


def cmd_surface(args):
    dataset = _read_input(args.input)
    spec, _ = _spec(args, dataset)
    grid = GridSpec.parse(args.grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        surface = roc_surface(dataset, spec, grid)
    _write_atomic(args.out, surface.to_csv())
    sys.stdout.write(_json({
        "points": len(surface.points),
        "duplicate_quantiles": surface.duplicate_quantiles,
        "skipped": list(surface.skipped),
        "out": args.out,
    }))


def cmd_select_k(args):
    dataset = _read_input(args.input)
    sel = select_k_curve(dataset, Metric.parse(args.metric), args.k_max)
    _emit(_json({"k_star": sel.k_star, "criterion": list(sel.criterion), "metric": args.metric}), args.out)


def cmd_ellipsoid(args):
    dataset = _read_input(args.input)
    cut = CutPair.parse(args.cut)
    _, est, mode, _, _, notes = _estimate_with_variance(args, dataset, cut, lambda s: "asymptotic")
    if mode == "none":
        raise ValidationError("an ellipsoid needs a covariance; use asymptotic or bootstrap variance")
    ell = confidence_ellipsoid(est, args.level)
    _emit(_json({
        "center": _vector(ell.center),
        "covariance": _matrix(ell.covariance),
        "cholesky": _matrix(ell.cholesky),
        "radius2": ell.radius2,
        "level": ell.level,
        "warnings": notes,
    }), args.out)


def cmd_simulate(args):
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = load_simulation_config(fh.read())
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from None
    table = cfg.run(workers=args.workers)
    _write_atomic(args.out, table.to_csv())


def cmd_subsample(args):
    dataset = _read_input(args.input)
    out = subsample_verification(dataset, SelectionRule.parse(args.rule), args.seed)
    _write_atomic(args.out, serialize(out))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knnroc", description="Three-class ROC surface estimation under verification bias")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="TCF triple at one cut pair")
    _add_estimator_args(p)
    p.add_argument("--cut", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("surface", help="TCF triples over a grid of cut pairs")
    _add_estimator_args(p, with_variance=False)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("select-k", help="choose the neighbourhood size")
    p.add_argument("--input", required=True)
    p.add_argument("--metric", default="euclidean", choices=[m.value for m in MetricKind])
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("ellipsoid", help="confidence ellipsoid for the TCF triple")
    _add_estimator_args(p)
    p.add_argument("--cut", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ellipsoid)

    p = sub.add_parser("simulate", help="Monte Carlo table from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("subsample", help="impose a verification mechanism on complete data")
    p.add_argument("--input", required=True)
    p.add_argument("--rule", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsample)
    return parser


def _attach_cut_values(argv: list[str]) -> list[str]:
    """Let ``--cut -1,-0.5`` through; argparse would read the value as a flag."""
    out = []
    it = iter(argv)
    for arg in it:
        if arg == "--cut":
            value = next(it, None)
            out.append(arg if value is None else f"--cut={value}")
        else:
            out.append(arg)
    return out


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"schema": SCHEMA, "error": {"type": kind, "message": message}}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        argv = sys.argv[1:] if argv is None else list(argv)
        args = build_parser().parse_args(_attach_cut_values(argv))
        args.func(args)
    except ValidationError as exc:
        return _fail("validation", str(exc), 1)
    except NumericalError as exc:
        msg = str(exc)
        if "variance" in msg and "bootstrap" not in msg:
            msg += "; consider --variance bootstrap"
        return _fail("numerical", msg, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
