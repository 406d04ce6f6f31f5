"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
Reports are written as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import formats
from .embedding import TrainConfig, train
from .evaluation import METHODS, brute_force_knn, run_benchmark
from .formats import FormatError
from .pipeline import IndexConfig, load_index, query, save_index, build_index, two_stage_query
from .projection import ProjectionConfig, ProjectionMode, project
from .qcore import DissimilarityKind, QExponent, distance_matrix

log = logging.getLogger("qsearch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _q(text: str) -> QExponent:
    try:
        return QExponent.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _q_list(text: str) -> List[QExponent]:
    return [_q(t) for t in text.split(",") if t.strip()]


def _kinds() -> List[str]:
    return [k.value for k in DissimilarityKind]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qsearch", description="q-metric projection, embedding and VP-tree search")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("project", help="project a dataset or matrix into a q-metric (QMAT out)")
    s.add_argument("--input", required=True, help="QVEC, QSET or QMAT file")
    s.add_argument("--dissimilarity", choices=_kinds(), default="euclidean")
    s.add_argument("--q", type=_q, required=True)
    s.add_argument("--mode", choices=[m.value for m in ProjectionMode], default="exact")
    s.add_argument("--knn", type=int, default=10)
    s.add_argument("--iters", type=int, default=3)
    s.add_argument("--output", required=True)

    s = sub.add_parser("train", help="train an embedding on projected targets (QMLP out)")
    s.add_argument("--input", required=True, help="QVEC file")
    s.add_argument("--targets", required=True, help="QMAT file")
    s.add_argument("--q", type=_q, required=True)
    s.add_argument("--dim-out", type=int)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)

    s = sub.add_parser("build-index", help="project, train and index a dataset (QIDX out)")
    s.add_argument("--input", required=True, help="QVEC or QSET file")
    s.add_argument("--dissimilarity", choices=_kinds(), default="euclidean")
    s.add_argument("--q", type=_q, required=True)
    s.add_argument("--subset-size", type=int, default=1000)
    s.add_argument("--mode", choices=[m.value for m in ProjectionMode], default="exact")
    s.add_argument("--knn", type=int, default=10)
    s.add_argument("--iters", type=int, default=3)
    s.add_argument("--dim-out", type=int)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)

    s = sub.add_parser("query", help="search an index")
    s.add_argument("--index", required=True)
    s.add_argument("--queries", required=True, help="QVEC or QSET file")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--two-stage-K", dest="two_stage_K", type=int)
    s.add_argument("--output", required=True)

    s = sub.add_parser("ground-truth", help="exact k-NN by exhaustive scan")
    s.add_argument("--data", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--dissimilarity", choices=_kinds(), default="euclidean")
    s.add_argument("--output", required=True)

    s = sub.add_parser("bench", help="benchmark a search method over a q sweep")
    s.add_argument("--data", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--q-sweep", type=_q_list, default=[QExponent(1.0)])
    s.add_argument("--method", choices=METHODS, required=True)
    s.add_argument("--dissimilarity", choices=_kinds(), default="euclidean")
    s.add_argument("--two-stage-K", dest="two_stage_K", type=int)
    s.add_argument("--subset-size", type=int, default=1000)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--repetitions", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    return p


def _write_lines(path: str, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec if isinstance(rec, str) else json.dumps(rec, sort_keys=True))
            fh.write("\n")


def _points(path: str, kind: str):
    pts = formats.read_points(path)
    sparse = isinstance(pts, list)
    if sparse != DissimilarityKind.parse(kind).sparse:
        want = "QSET" if not sparse else "QVEC"
        raise FormatError(f"{path}: {kind} needs a {want} file")
    return pts if sparse else pts.astype(np.float64)


def _cmd_project(a) -> int:
    data = formats.read_bytes(a.input)
    if data[:4] == b"QMAT":
        D, _ = formats.loads_qmat(data)
    else:
        D = distance_matrix(_points(a.input, a.dissimilarity), a.dissimilarity)
    cfg = ProjectionConfig(a.q, ProjectionMode(a.mode), a.knn, a.iters)
    formats.write_bytes(a.output, formats.dumps_qmat(project(D, cfg)))
    return EXIT_OK


def _cmd_train(a) -> int:
    X = formats.loads_qvec(formats.read_bytes(a.input)).astype(np.float64)
    T, tq = formats.loads_qmat(formats.read_bytes(a.targets))
    if tq != a.q:
        log.warning("targets were projected at q=%s, training at q=%s", tq, a.q)
    params, report = train(X, T, TrainConfig(q=a.q, epochs=a.epochs, output_dim=a.dim_out, seed=a.seed))
    formats.write_bytes(a.output, formats.dumps_qmlp(params))
    if report.stress:
        log.info("final stress %.6g, triangle %.6g", report.stress[-1], report.triangle[-1])
    return EXIT_OK


def _cmd_build(a) -> int:
    data = _points(a.input, a.dissimilarity)
    cfg = IndexConfig(
        kind=a.dissimilarity,
        q=a.q,
        projection=ProjectionConfig(a.q, ProjectionMode(a.mode), a.knn, a.iters),
        training=TrainConfig(q=a.q, epochs=a.epochs, output_dim=a.dim_out, seed=a.seed),
        subset_size=a.subset_size,
        embedding_dim=a.dim_out,
        seed=a.seed,
    )
    save_index(build_index(data, cfg), a.output)
    return EXIT_OK


def _cmd_query(a) -> int:
    index = load_index(a.index)
    queries = _points(a.queries, index.config.kind.value)
    rows = []
    for i, x in enumerate(queries):
        r = two_stage_query(index, x, a.k, a.two_stage_K) if a.two_stage_K else query(index, x, a.k)
        rows.append(
            {
                "query": i,
                "ids": r.ids.tolist(),
                "distances": r.distances.tolist(),
                "comparisons": r.comparisons,
                "preprocess_seconds": r.preprocess_seconds,
                "search_seconds": r.search_seconds,
            }
        )
    _write_lines(a.output, rows)
    return EXIT_OK


def _cmd_ground_truth(a) -> int:
    data = _points(a.data, a.dissimilarity)
    queries = _points(a.queries, a.dissimilarity)
    gt = brute_force_knn(data, queries, a.k, a.dissimilarity)
    _write_lines(
        a.output,
        ({"query": i, "ids": ids.tolist(), "distances": d.tolist()} for i, (ids, d) in enumerate(zip(gt.ids, gt.distances))),
    )
    return EXIT_OK


def _cmd_bench(a) -> int:
    data = _points(a.data, a.dissimilarity)
    queries = _points(a.queries, a.dissimilarity)
    extra = {"subset_size": a.subset_size}
    if a.method in ("one-stage", "two-stage"):
        extra["training"] = None
    reports = []
    for q in a.q_sweep:
        cfg = dict(extra)
        if "training" in cfg:
            cfg["training"] = TrainConfig(q=q, epochs=a.epochs, seed=a.seed)
        reports += run_benchmark(
            a.method, data, queries, a.k, [q], a.dissimilarity, a.repetitions, a.two_stage_K, cfg, a.seed
        )
    _write_lines(a.output, (r.to_json() for r in reports))
    return EXIT_OK


_COMMANDS = {
    "project": _cmd_project,
    "train": _cmd_train,
    "build-index": _cmd_build,
    "query": _cmd_query,
    "ground-truth": _cmd_ground_truth,
    "bench": _cmd_bench,
}


def dispatch(argv: Sequence[str]) -> int:
    try:
        args = build_parser().parse_args(list(argv))
    except UsageError as exc:
        print(f"qsearch: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ArithmeticError as exc:
        print(f"qsearch: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError, ValueError, KeyError) as exc:
        print(f"qsearch: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv: Optional[Sequence[str]] = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
