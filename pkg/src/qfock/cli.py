"""``qfock`` command line: identity suite, norm scans, moments, ultracontractivity.

Tables go to stdout. With ``--out-dir`` (or ``QFOCK_OUTPUT_DIR``) they are
also written as ``<command>-<hash>.csv|jsonl`` next to a ``manifest.json``;
the hash covers the manifest without its timestamp, so equal manifests give
equal file names and byte-identical tables.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .combinatorics import DomainError, check_q, constants
from .fockspace import QContext
from .identities import SUITE, run_suite
from .inequalities import (
    MAX_MOMENT_SIZE,
    degree_cut_for,
    haagerup_ratio,
    moment_bound_check,
    ultracontractivity_experiment,
)
from .moments import StarWord, circular_moment, trace_moment
from .qcircular import HoloPolynomial

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MAX_WORD_LENGTH = 16
T_RANGE = (0.1, 10.0)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting and output
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def _json_value(v):
    if isinstance(v, float):
        # 17 significant digits, kept as a JSON number when finite
        return float(format(v, ".17g")) if math.isfinite(v) else format(v, ".17g")
    return v


def render(columns, rows, fmt: str) -> str:
    buf = io.StringIO()
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    else:
        for r in rows:
            buf.write(json.dumps({c: _json_value(r[c]) for c in columns}, separators=(",", ":")) + "\n")
    return buf.getvalue()


def manifest_for(command: str, params: dict, fmt: str) -> dict:
    return {
        "command": command,
        "parameters": params,
        "version": __version__,
        "seed": params.get("seeds", params.get("seed", 0)),
        "format": fmt,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def manifest_hash(manifest: dict) -> str:
    core = {k: v for k, v in manifest.items() if k != "timestamp"}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _atomic_write(path: str, text: str):
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(args, command: str, params: dict, columns, rows, out=None) -> str | None:
    """Print the table; write it (and the manifest) when an output dir is set."""
    text = render(columns, rows, args.format)
    (out or sys.stdout).write(text)
    out_dir = args.out_dir or os.environ.get("QFOCK_OUTPUT_DIR")
    if not out_dir:
        return None
    os.makedirs(out_dir, exist_ok=True)
    man = manifest_for(command, params, args.format)
    h = manifest_hash(man)
    ext = "csv" if args.format == "csv" else "jsonl"
    path = os.path.join(out_dir, f"{command}-{h}.{ext}")
    _atomic_write(path, text)
    _atomic_write(os.path.join(out_dir, "manifest.json"), json.dumps({**man, "hash": h, "output": os.path.basename(path)}, indent=2, sort_keys=True) + "\n")
    return path


def _run_jobs(fn, jobs, n_jobs: int):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs))


# ---------------------------------------------------------------------------
# argument parsing helpers
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list:
    text = text.strip()
    return [float(v) for v in text.split(",") if v.strip()] if text else []


def _int_list(text: str) -> list:
    text = text.strip()
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _q(text: str) -> float:
    q = float(text)
    check_q(q)
    return q


def _q_list(text: str) -> list:
    out = _float_list(text)
    for q in out:
        check_q(q)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    if args.d < 1 or args.max_n < 0 or args.trunc < 1:
        raise UsageError("need d >= 1, max-n >= 0, trunc >= 1")
    if args.trunc < args.max_n:
        raise UsageError(f"trunc={args.trunc} must be at least max-n={args.max_n}")
    names = args.only.split(",") if args.only else None
    if names:
        unknown = [n for n in names if n not in SUITE]
        if unknown:
            raise UsageError(f"unknown identities: {', '.join(unknown)}")
    ctx = QContext(args.q, args.d, args.trunc)
    rep = run_suite(ctx, args.max_n, names)
    rows = [
        {"identity": k, "q": args.q, "d": args.d, "trunc": args.trunc, "residual": v, "passed": v < args.tol}
        for k, v in rep.residuals.items()
    ]
    params = {"q": args.q, "d": args.d, "max_n": args.max_n, "trunc": args.trunc, "tol": args.tol, "only": args.only}
    emit(args, "verify", params, ["identity", "q", "d", "trunc", "residual", "passed"], rows)
    return EXIT_OK if rep.passed(args.tol) else EXIT_FAIL


def _haagerup_job(job):
    q, d, n, seed, offsets, tol = job
    if d == 1:
        h = HoloPolynomial.power(n)
    else:
        h = HoloPolynomial.random_homogeneous(d, n, seed=seed)
    ladder = [n + o for o in offsets]
    res = haagerup_ratio(QContext(q, d, max(ladder)), h, ladder=ladder, tol=tol, seed=seed)
    return {
        "q": q,
        "d": d,
        "n": n,
        "seed": seed,
        "trunc": res.parameters["trunc"],
        "ratio": res.observed["ratio"],
        "ratio_over_sqrt": res.observed["ratio_over_sqrt"],
        "lower_bound": res.bounds.get("lower"),
        "upper_bound": res.bounds["upper"],
        "convergence_delta": res.convergence["delta"],
        "satisfied": res.ok,
    }


def cmd_haagerup(args) -> int:
    qs = _q_list(args.q)
    offsets = _int_list(args.trunc_ladder)
    seeds = _int_list(args.seeds)
    if not offsets or min(offsets) < 0:
        raise UsageError("trunc-ladder needs non-negative offsets")
    if max(offsets) < 2:
        raise UsageError("the top ladder rung must be at least n + 2")
    if args.d < 1 or args.n_min < 0 or not seeds:
        raise UsageError("need d >= 1, n-min >= 0 and at least one seed")
    jobs = sorted(
        (q, args.d, n, seed, tuple(offsets), args.tol)
        for q in qs
        for n in range(args.n_min, args.n_max + 1)
        for seed in (seeds[:1] if args.d == 1 else seeds)
    )
    rows = _run_jobs(_haagerup_job, jobs, args.jobs)
    params = {
        "q": qs,
        "d": args.d,
        "n_min": args.n_min,
        "n_max": args.n_max,
        "trunc_ladder": offsets,
        "seeds": seeds,
        "tol": args.tol,
    }
    cols = ["q", "d", "n", "seed", "trunc", "ratio", "ratio_over_sqrt", "lower_bound", "upper_bound", "convergence_delta", "satisfied"]
    emit(args, "haagerup", params, cols, rows)
    return EXIT_OK


def cmd_moments(args) -> int:
    if (args.word is None) == (args.pattern is None):
        raise UsageError("give exactly one of --word or --pattern")
    rows = []
    if args.word is not None:
        try:
            sw = StarWord.parse(args.word)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if len(sw) > MAX_WORD_LENGTH:
            raise UsageError(f"word length {len(sw)} exceeds the enumeration budget {MAX_WORD_LENGTH}")
        label, bound = str(sw), None
    else:
        try:
            m, n = (int(v) for v in args.pattern.split(","))
        except ValueError:
            raise UsageError("--pattern expects m,n") from None
        if m < 0 or n < 0:
            raise UsageError("pattern sizes must be non-negative")
        if m * n > MAX_MOMENT_SIZE:
            raise UsageError(f"pattern m*n={m * n} exceeds the enumeration budget {MAX_MOMENT_SIZE}")
        sw = StarWord.pattern(m, n)
        label = f"({n}*,{n})^{m}"
        bound = moment_bound_check(args.q, m, n)
    comb = circular_moment(args.q, sw)
    if len(sw) == 0 or len(sw) % 2:
        tr = comb
    else:
        tr = trace_moment(QContext(args.q, max(sw.d, 1), max(len(sw) // 2, 1)), sw)
    rows.append(
        {
            "pattern": label,
            "q": args.q,
            "combinatorial": comb,
            "trace": tr,
            "delta": abs(comb - tr),
            "bound_rhs": bound.bounds["rhs"] if bound else None,
            "satisfied": bound.ok if bound else None,
        }
    )
    cols = ["pattern", "q", "combinatorial", "trace", "delta", "bound_rhs", "satisfied"]
    params = {"q": args.q, "word": args.word, "pattern": args.pattern}
    emit(args, "moments", params, cols, rows)
    return EXIT_OK


def _ultra_job(job):
    q, t, cut = job
    res = ultracontractivity_experiment(QContext(q, 1, 1), t, cut)
    return {
        "q": q,
        "t": t,
        "degree_cut": res.parameters["degree_cut"],
        "psi_norm_sq": res.observed["psi_norm_sq"],
        "analytic_psi": res.observed["analytic_psi"],
        "lower_bound": res.bounds["alpha_over_t"],
        "observed": res.observed["ratio"],
        "upper_bound": res.bounds["beta_over_t"],
        "proven_upper": res.bounds["proven_upper"],
        "coefficient_error": res.observed["coefficient_error"],
        "satisfied": res.ok,
    }


def cmd_ultra(args) -> int:
    ts = _float_list(args.t)
    lo, hi = T_RANGE
    bad = [t for t in ts if not lo <= t <= hi]
    if bad:
        raise UsageError(f"t values {bad} outside [{lo}, {hi}]")
    if args.degree_cut is not None:
        for t in ts:
            if math.exp(-2 * args.degree_cut * t) >= 1e-12:
                raise UsageError(f"degree-cut {args.degree_cut} too small for t={t} (need {degree_cut_for(t)})")
    jobs = sorted((args.q, t, args.degree_cut) for t in ts)
    rows = _run_jobs(_ultra_job, jobs, args.jobs)
    cols = ["t", "psi_norm_sq", "analytic_psi", "lower_bound", "observed", "upper_bound", "satisfied"]
    params = {"q": args.q, "t": ts, "degree_cut": args.degree_cut}
    emit(args, "ultra", params, cols, rows)
    return EXIT_OK


def cmd_constants(args) -> int:
    k = constants(args.q)
    row = k.as_dict()
    emit(args, "constants", {"q": args.q}, list(row), [row])
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qfock", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qfock {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    common.add_argument("--out-dir", default=None, help="also write <command>-<hash> and manifest.json here")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="run the identity suite")
    v.add_argument("--q", type=float, required=True)
    v.add_argument("--d", type=int, default=2)
    v.add_argument("--max-n", type=int, default=4)
    v.add_argument("--trunc", type=int, default=8)
    v.add_argument("--tol", type=float, default=1e-10)
    v.add_argument("--only", default=None, help="comma-separated subset of: " + ", ".join(SUITE))
    v.set_defaults(func=cmd_verify)

    h = sub.add_parser("haagerup", parents=[common], help="operator/L2 norm ratios of degree-n polynomials")
    h.add_argument("--q", default="0", help="comma-separated q values")
    h.add_argument("--d", type=int, default=1)
    h.add_argument("--n-min", type=int, default=1)
    h.add_argument("--n-max", type=int, default=4)
    h.add_argument("--trunc-ladder", default="4,6,8", help="truncation offsets above n")
    h.add_argument("--seeds", default="0")
    h.add_argument("--tol", type=float, default=1e-10)
    h.add_argument("--jobs", type=int, default=1)
    h.set_defaults(func=cmd_haagerup)

    m = sub.add_parser("moments", parents=[common], help="joint moments by pairings and by trace")
    m.add_argument("--q", type=_q, required=True)
    m.add_argument("--word", default=None, help='star-word such as "1* 2* 1 2"')
    m.add_argument("--pattern", default=None, help="m,n for ((c*)^n c^n)^m")
    m.set_defaults(func=cmd_moments)

    u = sub.add_parser("ultra", parents=[common], help="1/t rate test of the dilation semigroup")
    u.add_argument("--q", type=_q, required=True)
    u.add_argument("--t", default="0.5,1.0", help="comma-separated t values in [0.1, 10]")
    u.add_argument("--degree-cut", type=int, default=None)
    u.add_argument("--jobs", type=int, default=1)
    u.set_defaults(func=cmd_ultra)

    c = sub.add_parser("constants", parents=[common], help="print C_q, b_q, D1, D2, A, A'")
    c.add_argument("--q", type=_q, required=True)
    c.set_defaults(func=cmd_constants)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if hasattr(args, "q") and isinstance(args.q, float):
            check_q(args.q)
        return args.func(args)
    except (UsageError, DomainError, ValueError, IndexError) as exc:
        print(f"qfock {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
