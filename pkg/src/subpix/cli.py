"""Command-line drivers: ``stereo``, ``flow``, ``table`` and ``synth``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 internal error.

Stereo inputs follow the Middlebury convention ``left[x] = right[x - disp]``
with positive disparities; flow inputs follow the .flo convention
``frame1[p] = frame2[p + (u, v)]`` with ``u`` along columns.
"""

import argparse
import csv
import io as _io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .cost import CostKind, SearchRange
from .errors import ArgumentError, FormatError, SubpixError, UndefinedResultError
from .evaluation import evaluate
from .matching import INTERP_ORDERS, METHODS_1D, METHODS_2D, match
from .refine1d import Status
from .synth import make_shifted_pair, make_texture
from .tensor import CLAMP, REJECT

BORDERS = {"clamp": CLAMP, "reject": REJECT}

REPORT_VERSION = "subpix-report v1"
COLUMNS = ("method", "cost", "window", "mae_px", "snr_db", "md_px", "runtime_ms", "status")
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(ArgumentError):
    pass


@dataclass
class RunConfig:
    command: str
    cost: str = "zncc"
    window: int = 5
    method: str = "barycentric-split"
    search: tuple = ((0, 16),)
    interp: str = "before"
    threshold: float = 1.0
    seed: int = 0
    timing: bool = False
    threads: int = None
    border: str = "clamp"

    def validate(self):
        ndim = 1 if self.command == "stereo" else 2
        table = METHODS_1D if ndim == 1 else METHODS_2D
        if self.method not in table:
            raise UsageError(f"method {self.method!r} is not available for {self.command}; "
                             f"choose from {', '.join(sorted(table))}")
        if len(self.search) != ndim:
            raise UsageError(f"{self.command} needs a {ndim}D search range")
        if self.window < 1 or self.window % 2 == 0:
            raise UsageError(f"window side must be odd and positive, got {self.window}")
        if self.threshold <= 0:
            raise UsageError("inlier threshold must be positive")
        if self.border not in BORDERS:
            raise UsageError(f"border must be one of {', '.join(BORDERS)}")
        return self


# report formatting ---------------------------------------------------------

def _fmt(x):
    if x is None:
        return "NA"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.6f}"
    return str(x)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return _fmt(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def render_csv(rows):
    buf = _io.StringIO()
    buf.write(f"# {REPORT_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in COLUMNS])
    return buf.getvalue()


def render_json(rows, extra=None):
    doc = {"version": REPORT_VERSION, "rows": rows}
    if extra:
        doc.update(extra)
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


# single runs -------------------------------------------------------------

@dataclass
class PairData:
    source: np.ndarray
    target: np.ndarray
    gt: np.ndarray  # in the internal convention, (rows, cols, n), NaN where invalid
    name: str = ""


def load_stereo(left, right, gt_path):
    source, target = io.read_image(left), io.read_image(right)
    field_ = io.read_pfm(gt_path).as_field()
    gt = -field_.masked()[..., :1]
    return PairData(source, target, gt, str(left))


def load_flow(frame1, frame2, gt_path):
    source, target = io.read_image(frame1), io.read_image(frame2)
    field_ = io.read_flo(gt_path)
    uv = field_.masked()
    return PairData(source, target, uv[..., ::-1].copy(), str(frame1))


def _check_shapes(pair):
    if pair.source.shape != pair.target.shape:
        raise UsageError(f"image shapes differ: {pair.source.shape} vs {pair.target.shape}")
    if pair.gt.shape[:2] != pair.source.shape[:2]:
        raise UsageError(f"ground truth is {pair.gt.shape[:2]}, images are "
                         f"{pair.source.shape[:2]}")


def run_pair(pair, cfg):
    """Match, refine and evaluate one pair. Returns (MatchResult, EvalReport, ms)."""
    _check_shapes(pair)
    t0 = time.perf_counter()
    result = match(pair.source, pair.target, SearchRange(cfg.search), cfg.cost, cfg.window,
                   cfg.method, cfg.interp, BORDERS[cfg.border], threads=cfg.threads)
    ms = (time.perf_counter() - t0) * 1e3
    report = evaluate(result.d_hat, result.d_round, pair.gt, cfg.threshold, result.valid)
    return result, report, ms


def _row(cfg, report, ms, status="ok", stereo=True):
    return {
        "method": cfg.method, "cost": cfg.cost, "window": cfg.window,
        "mae_px": report.mae if report and stereo else None,
        "snr_db": report.snr_db if report and stereo else None,
        "md_px": report.md if report else None,
        "runtime_ms": round(ms, 3) if cfg.timing and ms is not None else None,
        "status": status,
    }


def stereo_search(dmin, dmax):
    """Internal column offsets for Middlebury disparities in [dmin, dmax]."""
    if dmin > dmax:
        raise UsageError(f"empty disparity range [{dmin}, {dmax}]")
    return ((-dmax, -dmin),)


def cmd_stereo(args):
    cfg = _config(args, "stereo", stereo_search(*args.disp_range))
    pair = load_stereo(args.left, args.right, args.gt)
    result, report, ms = run_pair(pair, cfg)
    row = _row(cfg, report, ms)
    disp = -result.d_hat[..., 0]
    outputs = {}
    if args.out:
        outputs[args.out] = io.encode_pfm(np.where(np.isfinite(disp), disp, np.inf))
    _report_outputs(outputs, args, [row], report, result)
    _write_all(outputs)
    _print_summary(row)
    return EXIT_OK


def cmd_flow(args):
    cfg = _config(args, "flow", _flow_search(args))
    pair = load_flow(args.frame1, args.frame2, args.gt)
    result, report, ms = run_pair(pair, cfg)
    row = _row(cfg, report, ms, stereo=False)
    outputs = {}
    if args.out:
        uv = result.d_hat[..., ::-1]
        outputs[args.out] = io.encode_flo(np.where(np.isfinite(uv), uv, 1e10))
    _report_outputs(outputs, args, [row], report, result)
    _write_all(outputs)
    _print_summary(row)
    return EXIT_OK


def _report_outputs(outputs, args, rows, report, result):
    if args.report_csv:
        outputs[args.report_csv] = render_csv(rows).encode()
    if args.report_json:
        detail = dict(rows[0], n_inliers=report.n_inliers, rmse_px=report.rmse,
                      snr_linear=report.snr_linear, bin_table=report.bin_table,
                      status_counts=result.status_counts())
        outputs[args.report_json] = render_json([detail]).encode()
    if args.status_pgm:
        outputs[args.status_pgm] = io.encode_pnm(result.status.astype(np.float64) / 255.0, 255)


def _write_all(outputs):
    for path in outputs:
        parent = Path(path).parent
        if not parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {parent}")
    for path, data in outputs.items():
        Path(path).write_bytes(data)


def _print_summary(row):
    print(", ".join(f"{c}={_fmt(row[c])}" for c in COLUMNS))


def _flow_search(args):
    if args.row_range or args.col_range:
        r = args.row_range or (-args.search_radius, args.search_radius)
        c = args.col_range or (-args.search_radius, args.search_radius)
        return (tuple(r), tuple(c))
    return SearchRange.symmetric(args.search_radius, 2).bounds


def _config(args, command, search):
    return RunConfig(command=command, cost=args.cost, window=args.window, method=args.method,
                     search=tuple(tuple(b) for b in search), interp=args.interp,
                     threshold=args.threshold, seed=getattr(args, "seed", 0),
                     timing=args.timing, border=args.border).validate()


# table -----------------------------------------------------------------------

def cmd_table(args):
    stereo = args.mode == "stereo"
    search = stereo_search(*args.disp_range) if stereo else _flow_search(args)
    loader = load_stereo if stereo else load_flow
    pairs = [loader(*p) for p in args.pair]
    methods = args.methods or (["parabola", "barycentric-split"] if stereo
                               else ["separable-parabola", "queen-split"])
    rows, details = [], []
    for cost in args.costs:
        for window in args.windows:
            for method in methods:
                cfg = RunConfig("stereo" if stereo else "flow", cost, window, method, search,
                                args.interp, args.threshold, args.seed, args.timing,
                                border=args.border)
                row, detail = _table_cell(cfg, pairs, stereo)
                rows.append(row)
                details.append(detail)
    outputs = {args.out: render_csv(rows).encode()} if args.out else {}
    if args.report_json:
        outputs[args.report_json] = render_json(details).encode()
    _write_all(outputs)
    if not args.out:
        sys.stdout.write(render_csv(rows))
    return EXIT_OK


def _table_cell(cfg, pairs, stereo):
    try:
        cfg.validate()
        reports, total_ms = [], 0.0
        for pair in pairs:
            _, report, ms = run_pair(pair, cfg)
            reports.append(report)
            total_ms += ms
    except (SubpixError, ValueError) as exc:
        row = _row(cfg, None, None, status=f"error:{type(exc).__name__}", stereo=stereo)
        return row, dict(row, message=str(exc))
    agg = _aggregate(reports, stereo)
    row = {"method": cfg.method, "cost": cfg.cost, "window": cfg.window,
           "mae_px": agg["mae_px"], "snr_db": agg["snr_db"], "md_px": agg["md_px"],
           "runtime_ms": round(total_ms, 3) if cfg.timing else None, "status": "ok"}
    detail = dict(row, snr_db_of_mean=agg["snr_db_of_mean"],
                  per_pair=[dict(name=p.name, n_inliers=r.n_inliers, mae_px=r.mae, md_px=r.md,
                                 snr_db=r.snr_db, snr_linear=r.snr_linear,
                                 bin_table=r.bin_table)
                            for p, r in zip(pairs, reports)])
    return row, detail


def _aggregate(reports, stereo):
    """Mean over pairs; SNR as the mean of per-pair dB (headline) and as the
    dB of the mean linear ratio."""
    md = float(np.mean([r.md for r in reports]))
    if not stereo:
        return {"mae_px": None, "snr_db": None, "md_px": md, "snr_db_of_mean": None}
    mae = float(np.mean([r.mae for r in reports]))
    dbs = np.array([r.snr_db for r in reports])
    lin = np.array([r.snr_linear for r in reports])
    snr_db = float(np.mean(dbs)) if np.all(np.isfinite(dbs)) else float(np.min(dbs))
    mean_lin = float(np.nanmean(lin)) if np.any(np.isfinite(lin)) else float("nan")
    db_of_mean = 10 * math.log10(mean_lin) if mean_lin > 0 else float("-inf")
    return {"mae_px": mae, "snr_db": snr_db, "md_px": md, "snr_db_of_mean": db_of_mean}


# synth -----------------------------------------------------------------------

def cmd_synth(args):
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    stereo = args.mode == "stereo"
    if args.shifts:
        shifts = _read_shifts(args.shifts, 1 if stereo else 2)
    else:
        size = (args.count,) if stereo else (args.count, 2)
        shifts = rng.uniform(0.0, 1.0, size) if stereo else rng.uniform(-1.0, 1.0, size)
        shifts = shifts.astype(np.float32).astype(np.float64)
    if args.base:
        base = io.read_image(args.base)
    else:
        base = make_texture(tuple(args.shape), seed=args.seed, smoothness=args.smoothness)
    files = {}
    manifest = []
    for i, s in enumerate(np.atleast_1d(shifts)):
        s = np.atleast_1d(s).astype(np.float64)
        # stereo: left[x] = right[x - disp]; flow: frame1[p] = frame2[p + (v, u)]
        pair = make_shifted_pair(base, -s[0] if stereo else s[::-1], args.noise, rng)
        name = f"pair_{i:03d}"
        if stereo:
            names = ("left.pgm", "right.pgm", "disp.pfm")
            truth = io.encode_pfm(np.full(pair.source.shape[:2], s[0], dtype=np.float32))
        else:
            names = ("frame1.pgm", "frame2.pgm", "flow.flo")
            truth = io.encode_flo(np.broadcast_to(s.astype(np.float32),
                                                  pair.source.shape[:2] + (2,)))
        files[out / name / names[0]] = io.encode_pnm(pair.source)
        files[out / name / names[1]] = io.encode_pnm(pair.target)
        files[out / name / names[2]] = truth
        manifest.append({"name": name, "shift": [float(x) for x in s],
                         "files": [f"{name}/{n}" for n in names]})
    files[out / "manifest.json"] = (json.dumps(
        {"mode": args.mode, "seed": args.seed, "noise_sigma": args.noise, "pairs": manifest},
        indent=2) + "\n").encode()
    out.mkdir(parents=True, exist_ok=True)
    for path, data in files.items():
        path.parent.mkdir(exist_ok=True)
        path.write_bytes(data)
    print(f"wrote {len(manifest)} pairs to {out}")
    return EXIT_OK


def _read_shifts(path, n):
    try:
        values = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    except ValueError as exc:
        raise FormatError(f"bad shift file {path}: {exc}") from None
    if values.shape[1] != n:
        raise UsageError(f"shift file needs {n} column(s), found {values.shape[1]}")
    return values[:, 0] if n == 1 else values


# parser ----------------------------------------------------------------------

def _common(p, stereo):
    p.add_argument("--cost", default="zncc", choices=[k.value for k in CostKind])
    p.add_argument("--window", type=int, default=5, help="odd window side")
    p.add_argument("--interp", default="before", choices=INTERP_ORDERS,
                   help="interpolate features before or after normalization")
    p.add_argument("--threshold", type=float, default=1.0,
                   help="inlier threshold on the discrete match, px")
    p.add_argument("--timing", action="store_true", help="report runtimes")
    p.add_argument("--seed", type=int, default=0)
    _border(p)
    if stereo:
        p.add_argument("--disp-range", type=int, nargs=2, default=(0, 16),
                       metavar=("MIN", "MAX"), help="disparity search range")
    else:
        p.add_argument("--search-radius", type=int, default=3)
        p.add_argument("--row-range", type=int, nargs=2, metavar=("LO", "HI"))
        p.add_argument("--col-range", type=int, nargs=2, metavar=("LO", "HI"))


def _border(p):
    p.add_argument("--border", default="clamp", choices=sorted(BORDERS),
                   help="clamp: replicate edge pixels; reject: only match pixels whose "
                   "windows and candidates fit in the image")


def _outputs(p):
    p.add_argument("--report-csv")
    p.add_argument("--report-json")
    p.add_argument("--status-pgm", help="write per-pixel status codes as an 8-bit PGM")


def build_parser():
    parser = argparse.ArgumentParser(prog="subpix", description="Subpixel matching refinement "
                                     "and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stereo", help="refine and evaluate a rectified stereo pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--gt", required=True, help="ground-truth disparity (PFM)")
    p.add_argument("--method", default="barycentric-split", choices=sorted(METHODS_1D))
    p.add_argument("--out", help="refined disparity (PFM)")
    _common(p, True)
    _outputs(p)
    p.set_defaults(func=cmd_stereo)

    p = sub.add_parser("flow", help="refine and evaluate an optical flow pair")
    p.add_argument("--frame1", required=True)
    p.add_argument("--frame2", required=True)
    p.add_argument("--gt", required=True, help="ground-truth flow (.flo)")
    p.add_argument("--method", default="queen-split", choices=sorted(METHODS_2D))
    p.add_argument("--out", help="refined flow (.flo)")
    _common(p, False)
    _outputs(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("table", help="methods x windows x costs grid")
    p.add_argument("--mode", choices=("stereo", "flow"), default="stereo")
    p.add_argument("--pair", nargs=3, action="append", required=True,
                   metavar=("SRC", "TGT", "GT"))
    p.add_argument("--methods", nargs="+")
    p.add_argument("--windows", nargs="+", type=int, default=[5])
    p.add_argument("--costs", nargs="+", default=["zncc"], choices=[k.value for k in CostKind])
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.add_argument("--report-json")
    p.add_argument("--interp", default="before", choices=INTERP_ORDERS)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    _border(p)
    p.add_argument("--disp-range", type=int, nargs=2, default=(0, 16), metavar=("MIN", "MAX"))
    p.add_argument("--search-radius", type=int, default=3)
    p.add_argument("--row-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--col-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("synth", help="write synthetic pairs with known shifts")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=("stereo", "flow"), default="stereo")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--shifts", help="text file with one shift per line (u v for flow)")
    p.add_argument("--shape", type=int, nargs=2, default=(64, 96), metavar=("ROWS", "COLS"))
    p.add_argument("--smoothness", type=float, default=1.5)
    p.add_argument("--base", help="base image instead of a procedural texture")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (OSError, FormatError) as exc:
        print(f"subpix: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except UndefinedResultError as exc:
        print(f"subpix: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArgumentError as exc:
        print(f"subpix: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # invariant violations and bugs
        print(f"subpix: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
