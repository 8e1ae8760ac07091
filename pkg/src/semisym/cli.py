"""Command-line front end: classify charts, dump tensors, audit the corpus.

Every command builds a plain JSON-able report first; table output is rendered
from that report alone, so ``semisym render report.json`` reproduces the table
of the run that wrote it.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import exprjet as ej
from .classify import (
    DEFAULT_TOL,
    ClassifyError,
    Tolerances,
    audit_implications,
    check_components,
    check_expectations,
    get_spec,
    run_registry,
    tensor_recipe,
)
from .corpus import ChartError, MetricChart, chart_points, corpus_paths, default_samples, find_chart
from .tensor import TensorError

SCHEMA = 1
DUMP_REL_FLOOR = 1e-12
NUMERIC_ERRORS = (TensorError, ej.ExprError, ZeroDivisionError, FloatingPointError,
                  ValueError, np.linalg.LinAlgError)


class RunError(Exception):
    """Failure with chart (and point) context; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    charts: tuple[str, ...]
    conditions: tuple[str, ...] = ()
    tol: Tolerances = DEFAULT_TOL
    points: int | None = None
    seed: int | None = None
    fmt: str = "table"
    out: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if min(self.tol.zero, self.tol.fit, self.tol.f_match) <= 0:
            raise RunError("tolerances must be positive")
        if self.points is not None and self.points < 1:
            raise RunError("--points must be at least 1")
        if self.jobs < 1:
            raise RunError("--jobs must be at least 1")
        for name in self.conditions:
            try:
                get_spec(name)
            except ClassifyError as exc:
                raise RunError(str(exc)) from None


def _chart_refs(refs: Sequence[str]) -> tuple[str, ...]:
    if not refs or list(refs) == ["corpus"]:
        return tuple(str(p) for p in corpus_paths())
    return tuple(refs)


def _load(ref: str) -> MetricChart:
    try:
        return find_chart(ref)
    except (ChartError, FileNotFoundError, OSError) as exc:
        raise RunError(f"{ref}: {exc}") from None


def _points(chart: MetricChart, cfg: RunConfig) -> list[tuple[float, ...]]:
    try:
        if cfg.seed is not None:
            return default_samples(chart, cfg.points or 8, cfg.seed)
        return chart_points(chart, cfg.points)
    except ChartError as exc:
        raise RunError(f"chart {chart.name}: {exc}") from None


def _locate_failure(chart: MetricChart, points, exc: Exception) -> RunError:
    for p in points:
        try:
            chart.bundle(p)
        except NUMERIC_ERRORS as inner:
            return RunError(f"chart {chart.name}: point {tuple(p)}: {inner}")
    return RunError(f"chart {chart.name}: {exc}")


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


def classify_chart(ref: str, cfg: RunConfig) -> dict[str, Any]:
    chart = _load(ref)
    points = _points(chart, cfg)
    try:
        reports = run_registry(chart, points, cfg.conditions or None, cfg.tol)
        expectations = [e for e in check_expectations(chart, reports, cfg.tol)
                        if not cfg.conditions or e.condition in cfg.conditions]
        components = check_components(chart, points, cfg.tol.f_match) if not cfg.conditions else []
    except NUMERIC_ERRORS as exc:
        raise _locate_failure(chart, points, exc) from None
    exp_json = [{"condition": e.condition, "expected": e.expected, "actual": e.actual,
                 "verdict_ok": e.verdict_ok, "f_ok": e.f_ok, "f_max_rel_err": e.f_max_rel_err,
                 "ok": e.ok} for e in expectations]
    comp_json = [{"tensor": c.tensor, "index": list(c.index), "max_rel_err": c.max_rel_err,
                  "ok": c.ok} for c in components]
    ok = all(e["ok"] for e in exp_json) and all(c["ok"] for c in comp_json)
    return {
        "chart": chart.name,
        "file": Path(chart.source).name,
        "dim": chart.dim,
        "signature": chart.signature,
        "params": dict(chart.params),
        "points": [list(p) for p in points],
        "conditions": [r.to_json() for r in reports.values()],
        "expectations": exp_json,
        "components": comp_json,
        "ok": ok,
    }


def _classify_job(args: tuple[str, RunConfig]) -> dict[str, Any]:
    return classify_chart(*args)


def _map_charts(fn, cfg: RunConfig) -> list[dict[str, Any]]:
    jobs = [(ref, cfg) for ref in cfg.charts]
    if cfg.jobs == 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(fn, jobs))


def _tol_json(tol: Tolerances) -> dict[str, float]:
    return {"zero": tol.zero, "fit": tol.fit, "f_match": tol.f_match}


def cmd_classify(cfg: RunConfig) -> tuple[dict[str, Any], int]:
    charts = _map_charts(_classify_job, cfg)
    report = {
        "schema": SCHEMA,
        "command": "classify",
        "version": __version__,
        "tolerances": _tol_json(cfg.tol),
        "points": cfg.points,
        "seed": cfg.seed,
        "charts": charts,
        "ok": all(c["ok"] for c in charts),
    }
    return report, 0 if report["ok"] else 1


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


def audit_chart(ref: str, cfg: RunConfig) -> dict[str, Any]:
    chart = _load(ref)
    points = _points(chart, cfg)
    try:
        reports = run_registry(chart, points, None, cfg.tol)
    except NUMERIC_ERRORS as exc:
        raise _locate_failure(chart, points, exc) from None
    findings = audit_implications(reports, chart, cfg.tol)
    return {"chart": chart.name, "dim": chart.dim, "signature": chart.signature,
            "findings": [{"arrow": f.arrow, "ok": f.ok, "message": f.message} for f in findings]}


def _audit_job(args: tuple[str, RunConfig]) -> dict[str, Any]:
    return audit_chart(*args)


def cmd_audit(cfg: RunConfig, dim: int | None = None, signature: str | None = None
              ) -> tuple[dict[str, Any], int]:
    if dim is not None or signature is not None:
        keep = []
        for ref in cfg.charts:
            c = _load(ref)
            if (dim is None or c.dim == dim) and (signature is None or c.signature == signature):
                keep.append(ref)
        cfg = RunConfig(tuple(keep), cfg.conditions, cfg.tol, cfg.points, cfg.seed,
                        cfg.fmt, cfg.out, cfg.jobs)
    charts = _map_charts(_audit_job, cfg)
    summary: dict[str, dict[str, int]] = {}
    for c in charts:
        for f in c["findings"]:
            row = summary.setdefault(f["arrow"], {"checked": 0, "violated": 0})
            row["checked"] += 1
            row["violated"] += not f["ok"]
    violations = sum(r["violated"] for r in summary.values())
    report = {
        "schema": SCHEMA,
        "command": "audit",
        "version": __version__,
        "tolerances": _tol_json(cfg.tol),
        "points": cfg.points,
        "seed": cfg.seed,
        "charts": charts,
        "summary": [{"arrow": k, **v} for k, v in sorted(summary.items())],
        "violations": violations,
    }
    return report, 0 if violations == 0 else 1


# ---------------------------------------------------------------------------
# dump
# ---------------------------------------------------------------------------

TENSOR_NAMES = {
    "g": lambda b: b.g,
    "ginv": lambda b: b.g_inv,
    "riemann": lambda b: b.R4,
    "ricci": lambda b: b.Ric,
    "scalar": lambda b: b.kappa,
    "ricci2": lambda b: b.Ric2,
    "weyl": lambda b: b.C4,
    "conharmonic": lambda b: b.K4,
    "concircular": lambda b: b.W4,
    "projective04": lambda b: b.P4,
    "projective13": lambda b: b.P13,
    "gaussian": lambda b: b.G4,
    "nabla_r": lambda b: b.dR,
    "nabla_s": lambda b: b.dS,
}


def _parse_at(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise RunError(f"--at expects comma-separated numbers, got {text!r}") from None


def cmd_dump(ref: str, tensor: str, at: str | None, tol: Tolerances = DEFAULT_TOL
             ) -> tuple[dict[str, Any], int]:
    chart = _load(ref)
    if at is None:
        point = chart_points(chart)[0]
    else:
        point = _parse_at(at)
        if len(point) != chart.dim:
            raise RunError(f"chart {chart.name}: --at needs {chart.dim} coordinates, got {len(point)}")
    try:
        b = chart.bundle(point)
        if tensor == "gamma":
            data, mag, variance = b.gamma, np.abs(b.gamma), ("up", "down", "down")
        else:
            getter = TENSOR_NAMES.get(tensor)
            try:
                t = getter(b) if getter else tensor_recipe(b, tensor)
            except ClassifyError:
                raise RunError(f"unknown tensor {tensor!r}") from None
            data, mag, variance = t.data, t.mag, t.variance
    except NUMERIC_ERRORS as exc:
        raise RunError(f"chart {chart.name}: point {point}: {exc}") from None
    report = {
        "schema": SCHEMA,
        "command": "dump",
        "version": __version__,
        "chart": chart.name,
        "point": list(point),
        "tensor": tensor,
        "variance": list(variance),
        "shape": list(np.shape(data)),
        "data": np.asarray(data).tolist(),
        "mag": np.asarray(mag).tolist(),
        "tol_zero": tol.zero,
    }
    return report, 0


def nonzero_components(data, mag, tol_zero: float) -> list[tuple[tuple[int, ...], float]]:
    """Components above both the norm floor and their own cancellation level."""
    data = np.asarray(data, dtype=float)
    mag = np.asarray(mag, dtype=float)
    norm = float(np.sqrt(np.sum(data * data)))
    if norm == 0:
        return []
    keep = (np.abs(data) > DUMP_REL_FLOOR * norm) & (np.abs(data) > tol_zero * mag)
    if data.ndim == 0:
        return [((), float(data))] if bool(keep) else []
    return [(tuple(int(i) for i in idx), float(data[idx])) for idx in zip(*np.nonzero(keep))]


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(refs: Sequence[str]) -> tuple[dict[str, Any], int]:
    rows = []
    for ref in refs:
        try:
            c = find_chart(ref)
            rows.append({"ref": ref, "ok": True, "chart": c.name, "dim": c.dim,
                         "signature": c.signature, "points": len(c.sample_points),
                         "expected": len(c.expected), "components": len(c.components)})
        except (ChartError, FileNotFoundError, OSError) as exc:
            rows.append({"ref": ref, "ok": False, "error": str(exc)})
    report = {"schema": SCHEMA, "command": "validate", "version": __version__, "charts": rows}
    return report, 0 if all(r["ok"] for r in rows) else 1


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _g(x: float | None) -> str:
    if x is None:
        return "-"
    return f"{x:.6g}"


def _median_f(cond: dict[str, Any]) -> str:
    recs = [r for r in cond["records"]
            if r["on_defining_set"] and not r["trivial"] and r["coefficients"]]
    if not recs:
        return "-"
    ncoef = min(len(r["coefficients"]) for r in recs)
    meds = [statistics.median(r["coefficients"][i] for r in recs) for i in range(min(ncoef, 3))]
    return ",".join(_g(m) for m in meds) + (",..." if ncoef > 3 else "")


def _max_resid(cond: dict[str, Any]) -> str:
    vals = [r["residual_rel"] for r in cond["records"] if r["on_defining_set"]]
    return _g(max(vals)) if vals else "-"


def render_classify(report: dict[str, Any]) -> str:
    lines = []
    for c in report["charts"]:
        lines.append(f"chart {c['chart']}  dim {c['dim']}  {c['signature']}  "
                     f"{len(c['points'])} points")
        expected = {e["condition"]: e for e in c["expectations"]}
        lines.append(f"  {'condition':24} {'verdict':22} {'expected':22} {'median f':24} "
                     f"{'max resid':10} check")
        for cond in c["conditions"]:
            e = expected.get(cond["condition"])
            check = "" if e is None else ("ok" if e["ok"] else "MISMATCH")
            lines.append(f"  {cond['condition']:24} {cond['verdict']:22} "
                         f"{(e['expected'] if e else ''):22} {_median_f(cond):24} "
                         f"{_max_resid(cond):10} {check}".rstrip())
        for comp in c["components"]:
            idx = ",".join(str(i) for i in comp["index"])
            lines.append(f"  component {comp['tensor']}[{idx}]  max rel err "
                         f"{_g(comp['max_rel_err'])}  {'ok' if comp['ok'] else 'MISMATCH'}")
        n_ok = sum(e["ok"] for e in c["expectations"])
        lines.append(f"  expectations {n_ok}/{len(c['expectations'])} matched, components "
                     f"{sum(x['ok'] for x in c['components'])}/{len(c['components'])}")
        lines.append("")
    lines.append("all expectations matched" if report["ok"] else "expectation mismatch")
    return "\n".join(lines) + "\n"


def render_audit(report: dict[str, Any]) -> str:
    lines = [f"audit over {len(report['charts'])} charts", f"  {'arrow':60} checked violated"]
    for row in report["summary"]:
        lines.append(f"  {row['arrow']:60} {row['checked']:7d} {row['violated']:8d}")
    for c in report["charts"]:
        for f in c["findings"]:
            if not f["ok"]:
                lines.append(f"  VIOLATION {c['chart']}: {f['arrow']} {f['message']}".rstrip())
    lines.append(f"{report['violations']} violations")
    return "\n".join(lines) + "\n"


def render_dump(report: dict[str, Any]) -> str:
    name = report["tensor"]
    head = f"{name} on {report['chart']} at ({', '.join(_g(x) for x in report['point'])})"
    comps = nonzero_components(report["data"], report["mag"], report["tol_zero"])
    if not comps:
        return f"{head}\nall components zero\n"
    lines = [head]
    for idx, v in comps:
        label = ",".join(str(i + 1) for i in idx)
        lines.append(f"{name}[{label}] = {v:.12g}")
    return "\n".join(lines) + "\n"


def render_validate(report: dict[str, Any]) -> str:
    lines = []
    for r in report["charts"]:
        if r["ok"]:
            lines.append(f"ok       {r['chart']:24} dim {r['dim']}  {r['signature']:16} "
                         f"{r['points']} points, {r['expected']} expectations, "
                         f"{r['components']} components")
        else:
            lines.append(f"invalid  {r['ref']}: {r['error']}")
    return "\n".join(lines) + "\n"


RENDERERS = {"classify": render_classify, "audit": render_audit, "dump": render_dump,
             "validate": render_validate}


def render(report: dict[str, Any]) -> str:
    if report.get("schema") != SCHEMA:
        raise RunError(f"unsupported report schema {report.get('schema')!r}")
    try:
        return RENDERERS[report["command"]](report)
    except KeyError as exc:
        raise RunError(f"malformed report: missing {exc}") from None


def to_json(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol-zero", type=float, default=DEFAULT_TOL.zero)
    p.add_argument("--tol-fit", type=float, default=DEFAULT_TOL.fit)
    p.add_argument("--tol-f-match", type=float, default=DEFAULT_TOL.f_match)
    p.add_argument("--points", type=int, default=None, metavar="N",
                   help="sample count (default: the chart's frozen points)")
    p.add_argument("--seed", type=int, default=None, metavar="S",
                   help="draw N fresh points from the sampling boxes with this seed")
    p.add_argument("--jobs", type=int, default=1, help="charts processed in parallel")


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.add_argument("--out", default=None, metavar="PATH")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semisym", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="run registry conditions on charts")
    p.add_argument("charts", nargs="*", help="chart names or paths (default: whole corpus)")
    p.add_argument("--conditions", default="", help="comma-separated condition names")
    _add_run_flags(p)
    _add_output_flags(p)

    p = sub.add_parser("audit", help="check implication arrows over charts")
    p.add_argument("charts", nargs="*", help="chart names or paths (default: whole corpus)")
    p.add_argument("--dim", type=int, default=None, help="only charts of this dimension")
    p.add_argument("--signature", default=None, help="only charts of this signature")
    _add_run_flags(p)
    _add_output_flags(p)

    p = sub.add_parser("dump", help="print tensor components at a point")
    p.add_argument("chart")
    p.add_argument("tensor", help=f"one of {', '.join(['gamma', *TENSOR_NAMES])} or a recipe")
    p.add_argument("--at", default=None, help="comma-separated coordinates")
    p.add_argument("--tol-zero", type=float, default=DEFAULT_TOL.zero)
    _add_output_flags(p)

    p = sub.add_parser("validate", help="load charts and report schema errors")
    p.add_argument("charts", nargs="*", help="chart names or paths (default: whole corpus)")
    _add_output_flags(p)

    p = sub.add_parser("render", help="re-render a JSON report as a table")
    p.add_argument("report")
    p.add_argument("--out", default=None, metavar="PATH")

    sub.add_parser("list", help="list corpus charts")
    return parser


def _config(args) -> RunConfig:
    conditions = tuple(c.strip() for c in getattr(args, "conditions", "").split(",") if c.strip())
    return RunConfig(_chart_refs(args.charts), conditions,
                     Tolerances(args.tol_zero, args.tol_fit, args.tol_f_match),
                     args.points, args.seed, args.format, args.out, args.jobs)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _run(args) -> int:
    if args.command == "list":
        for path in corpus_paths():
            c = find_chart(str(path))
            print(f"{c.name:24} dim {c.dim}  {c.signature}")
        return 0
    if args.command == "render":
        try:
            report = json.loads(Path(args.report).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RunError(f"{args.report}: {exc}") from None
        _emit(render(report), args.out)
        return 0
    if args.command == "classify":
        report, code = cmd_classify(_config(args))
    elif args.command == "audit":
        report, code = cmd_audit(_config(args), args.dim, args.signature)
    elif args.command == "dump":
        report, code = cmd_dump(args.chart, args.tensor, args.at,
                                Tolerances(zero=args.tol_zero))
    else:
        report, code = cmd_validate(_chart_refs(args.charts))
    _emit(to_json(report) if args.format == "json" else render(report), args.out)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (RunError, ClassifyError, ChartError) as exc:
        print(f"semisym: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
