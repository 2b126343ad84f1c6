"""Command line front end: ``topoguard <subcommand> ...``.

Every subcommand prints one JSON object on stdout.  Exit codes: 0 ok,
1 constraint violations or lost topology, 2 malformed input file, 3 error
bound violated, 4 non-convergence, 5 unsupported configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import synthetic
from .bound import vulnerability_stats
from .compressor import (
    BlobFormatError,
    BoundViolationError,
    CompressedBlob,
    EditLogCorruptionError,
    EditLogFormatError,
    absolute_bound,
    apply_edit_log,
    compress,
    decompress,
    deserialize_edit_log,
    ingest,
    serialize_edit_log,
)
from .constraints import Mode, check_constraints
from .corrector import CorrectionConfig, NonConvergenceError, UnsupportedConfigError, correct
from .distsim import run_distributed_correction
from .grid import FieldFormatError, ScalarField, load_field, save_field
from .metrics import build_report
from .topology import build_reference, compute_topology

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_FORMAT = 2
EXIT_BOUND = 3
EXIT_NONCONVERGENCE = 4
EXIT_UNSUPPORTED = 5


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}, expected e.g. 64,64,32")
    if len(dims) not in (2, 3) or min(dims) <= 0:
        raise argparse.ArgumentTypeError("dims must be 2 or 3 positive integers")
    return dims


def _emit(obj: dict, path: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def _bound_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--rel-eb", type=float, help="error bound relative to the value range")
    g.add_argument("--abs-eb", type=float, help="absolute error bound")


def _correction_args(p: argparse.ArgumentParser) -> None:
    _bound_args(p)
    p.add_argument("--steps", type=int, default=5, help="edit steps before the lossless fallback")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.REFORMULATED.value)
    p.add_argument("--max-iter-override", type=int, default=None)


def _config(args) -> CorrectionConfig:
    return CorrectionConfig(
        rel_eb=args.rel_eb,
        abs_eb=args.abs_eb,
        steps=args.steps,
        mode=args.mode,
        max_iter_override=args.max_iter_override,
    )


def _as_f8(field: ScalarField) -> ScalarField:
    # edits are float64 exact; narrowing would break the step/clamp encoding
    return ScalarField(field.dims, field.values, "f8")


def _result_stats(res, elapsed: float) -> dict:
    return {
        "iterations": res.iterations,
        "edit_rounds": res.edit_rounds,
        "theoretical_bound": res.theoretical_bound,
        "d_max": res.d_max,
        "xi_abs": res.xi_abs,
        "edited_vertices": len(res.edits),
        "violations_per_iteration": res.violation_counts,
        "histogram": res.histogram,
        "seconds": elapsed,
    }


def cmd_gen(args) -> int:
    kind = {"gaussian": "gaussian", "monotone": "monotone", "cascade": "cascade"}[args.kind]
    if kind == "cascade":
        field = synthetic.cascade_1d(args.length, args.gap)
    else:
        field = synthetic.generate(kind, args.dims, seed=args.seed, k=args.k)
    field = ScalarField(field.dims, field.values, args.dtype)
    save_field(field, args.out)
    _emit({"out": args.out, "dims": list(field.dims), "dtype": field.dtype})
    return EXIT_OK


def cmd_compress(args) -> int:
    field = load_field(args.field)
    blob = compress(field, rel_eb=args.rel_eb, abs_eb=args.abs_eb)
    data = blob.to_bytes()
    Path(args.out).write_bytes(data)
    orig = field.size * (4 if field.dtype == "f4" else 8)
    _emit({"out": args.out, "xi_abs": blob.xi_abs, "bytes": len(data), "cr": orig / len(data)})
    return EXIT_OK


def cmd_decompress(args) -> int:
    blob = CompressedBlob.from_bytes(Path(args.blob).read_bytes())
    field = decompress(blob)
    out = {"out": args.out, "xi_abs": blob.xi_abs}
    if args.edits:
        log = deserialize_edit_log(Path(args.edits).read_bytes())
        field = _as_f8(apply_edit_log(field, log))
        out["edited_vertices"] = len(log)
    save_field(field, args.out)
    _emit(out)
    return EXIT_OK


def cmd_ingest(args) -> int:
    f, fhat = load_field(args.orig), load_field(args.decomp)
    xi = args.abs_eb if args.abs_eb is not None else absolute_bound(f, args.rel_eb)
    err = ingest(f, fhat, xi)
    _emit({"max_error": err, "xi_abs": xi, "ok": True})
    return EXIT_OK


def cmd_correct(args) -> int:
    f, fhat = load_field(args.orig), load_field(args.decomp)
    t0 = time.perf_counter()
    res = correct(f, fhat, _config(args))
    stats = _result_stats(res, time.perf_counter() - t0)
    if args.out_edits:
        data = serialize_edit_log(res.edits)
        Path(args.out_edits).write_bytes(data)
        stats["edit_bytes"] = len(data)
    if args.out_field:
        save_field(_as_f8(res.g), args.out_field)
    _emit(stats, args.stats)
    return EXIT_OK


def cmd_verify(args) -> int:
    f, g = load_field(args.orig), load_field(args.cand)
    found = check_constraints(build_reference(f), g, args.mode)
    hist: dict[str, int] = {}
    for v in found:
        hist[v.reason.name] = hist.get(v.reason.name, 0) + 1
    _emit(
        {
            "ok": not found,
            "violations": len(found),
            "histogram": hist,
            "sample": [
                {"target": v.target, "witness": v.witness, "reason": v.reason.name}
                for v in found[: args.limit]
            ],
        }
    )
    return EXIT_OK if not found else EXIT_VIOLATIONS


def cmd_bound(args) -> int:
    f, fhat = load_field(args.orig), load_field(args.decomp)
    xi = args.abs_eb if args.abs_eb is not None else absolute_bound(f, args.rel_eb)
    ingest(f, fhat, xi)
    _emit(vulnerability_stats(f, fhat, xi, steps=args.steps), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    f, fhat = load_field(args.orig), load_field(args.decomp)
    cfg = _config(args)
    t1 = None
    if args.baseline and args.ranks > 1:
        _, base = run_distributed_correction(f, fhat, cfg, 1)
        t1 = base.parallel_time
    t0 = time.perf_counter()
    res, sim = run_distributed_correction(f, fhat, cfg, args.ranks, t1=t1)
    out = _result_stats(res, time.perf_counter() - t0)
    out["simulation"] = sim.to_dict()
    if args.out_field:
        save_field(_as_f8(res.g), args.out_field)
    if args.out_edits:
        Path(args.out_edits).write_bytes(serialize_edit_log(res.edits))
    _emit(out, args.stats)
    return EXIT_OK


def _report_dict(f, g, blob_bytes, edits, orig_bytes, extra=None) -> dict:
    rep = build_report(f, g, orig_bytes=orig_bytes, blob_bytes=blob_bytes, edits=edits, **(extra or {}))
    out = rep.to_dict()
    out["preserved"] = rep.preserved
    return out


def cmd_report(args) -> int:
    f, g = load_field(args.orig), load_field(args.cand)
    blob_bytes = Path(args.blob).stat().st_size if args.blob else None
    edits = deserialize_edit_log(Path(args.edits).read_bytes()) if args.edits else None
    orig_bytes = f.size * (4 if f.dtype == "f4" else 8)
    out = _report_dict(f, g, blob_bytes, edits, orig_bytes)
    if args.csv:
        _append_csv(args.csv, out)
    _emit(out, args.out)
    return EXIT_OK


def _append_csv(path: str, row: dict) -> None:
    flat = {k: v for k, v in row.items() if not isinstance(v, dict)}
    p = Path(path)
    new = not p.exists()
    with p.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(flat))
        if new:
            w.writeheader()
        w.writerow(flat)


def cmd_pipeline(args) -> int:
    if args.field:
        f = load_field(args.field)
    else:
        f = synthetic.generate(args.gen, args.dims, seed=args.seed, k=args.k)
    cfg = _config(args)
    blob = compress(f, rel_eb=args.rel_eb, abs_eb=args.abs_eb)
    blob_bytes = len(blob.to_bytes())
    fhat = decompress(blob)
    t0 = time.perf_counter()
    if args.ranks > 1:
        res, sim = run_distributed_correction(f, fhat, cfg, args.ranks)
    else:
        res, sim = correct(f, fhat, cfg), None
    elapsed = time.perf_counter() - t0
    orig_bytes = f.size * (4 if f.dtype == "f4" else 8)
    out = _report_dict(
        f,
        res.g,
        blob_bytes,
        res.edits,
        orig_bytes,
        {"iterations": res.iterations, "theoretical_bound": res.theoretical_bound, "histogram": res.histogram},
    )
    out["xi_abs"] = res.xi_abs
    out["max_error"] = float(np.max(np.abs(f.values - res.g.values)))
    out["seconds"] = elapsed
    if sim is not None:
        out["simulation"] = sim.to_dict()
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        save_field(f, d / "orig.excf")
        (d / "compressed.excz").write_bytes(blob.to_bytes())
        (d / "edits.exce").write_bytes(serialize_edit_log(res.edits))
        save_field(_as_f8(res.g), d / "corrected.excf")
        (d / "report.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    _emit(out)
    ok = out["preserved"] and out["max_error"] <= res.xi_abs
    return EXIT_OK if ok else EXIT_VIOLATIONS


def cmd_topo(args) -> int:
    f = load_field(args.field)
    t = compute_topology(f)
    vals = f.values
    kinds = {1: "min", 2: "max", 4: "join_saddle", 8: "split_saddle"}
    cps = [
        {
            "vertex": int(v),
            "value": float(vals[v]),
            "types": [name for bit, name in kinds.items() if t.flags[v] & bit],
        }
        for v in np.flatnonzero(t.flags)
    ]

    def edges(eg):
        return [{"saddle": s, "extremum": m} for s, m in sorted(eg.edges)]

    def arcs(tree):
        return [{"from": a, "to": b, "root": (a, b) == tree.root_arc} for a, b in sorted(tree.arcs)]

    _emit(
        {
            "dims": list(f.dims),
            "critical_points": cps,
            "eg_join": edges(t.eg_join),
            "eg_split": edges(t.eg_split),
            "join_tree": arcs(t.tree_join),
            "split_tree": arcs(t.tree_split),
        },
        args.out,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topoguard", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic field")
    p.add_argument("--kind", choices=["gaussian", "monotone", "cascade"], default="gaussian")
    p.add_argument("--dims", type=_dims, default=(64, 64))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=8, help="number of Gaussian bumps")
    p.add_argument("--length", type=int, default=5, help="cascade length")
    p.add_argument("--gap", type=float, default=1.0, help="cascade spacing")
    p.add_argument("--dtype", choices=["f4", "f8"], default="f8")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compress", help="error-bounded compression")
    p.add_argument("--field", required=True)
    _bound_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decompress a blob, optionally applying an edit log")
    p.add_argument("--blob", required=True)
    p.add_argument("--edits")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("ingest", help="check an externally decompressed field against the bound")
    p.add_argument("--orig", required=True)
    p.add_argument("--decomp", required=True)
    _bound_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("correct", help="run the serial corrector")
    p.add_argument("--orig", required=True)
    p.add_argument("--decomp", required=True)
    _correction_args(p)
    p.add_argument("--out-edits")
    p.add_argument("--out-field")
    p.add_argument("--stats")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("verify", help="list constraint violations of a candidate field")
    p.add_argument("--orig", required=True)
    p.add_argument("--cand", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.REFORMULATED.value)
    p.add_argument("--limit", type=int, default=20, help="violations listed in the sample")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bound", help="vulnerability graph statistics and the iteration bound")
    p.add_argument("--orig", required=True)
    p.add_argument("--decomp", required=True)
    _bound_args(p)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("simulate", help="run the partitioned correction simulator")
    p.add_argument("--orig", required=True)
    p.add_argument("--decomp", required=True)
    _correction_args(p)
    p.add_argument("--ranks", type=int, default=1)
    p.add_argument("--baseline", action="store_true", help="also time one rank to fill the efficiencies")
    p.add_argument("--out-field")
    p.add_argument("--out-edits")
    p.add_argument("--stats")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="recalls and compression ratios")
    p.add_argument("--orig", required=True)
    p.add_argument("--cand", required=True)
    p.add_argument("--blob")
    p.add_argument("--edits")
    p.add_argument("--csv", help="append a flat row to this CSV file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="generate or load, compress, correct and report in one go")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--field")
    src.add_argument("--gen", choices=["gaussian", "monotone"], default="gaussian")
    p.add_argument("--dims", type=_dims, default=(64, 64))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=8)
    _correction_args(p)
    p.add_argument("--ranks", type=int, default=1)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("topo", help="dump critical points, extremum graphs and merge trees")
    p.add_argument("--field", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_topo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FieldFormatError, BlobFormatError, EditLogFormatError, EditLogCorruptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except BoundViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BOUND
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except UnsupportedConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
