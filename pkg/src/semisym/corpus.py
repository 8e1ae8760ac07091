"""Metric charts: JSON catalogue entries with parameters, samples and expectations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import exprjet as ej
from .curvature import CurvatureBundle, curvature_bundle, frame_from_jets
from .tensor import MetricFrame, TensorError

DET_FLOOR = 1e-12


class ChartError(ValueError):
    """Validation failure, tagged with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Expectation:
    condition: str
    verdict: str
    f: str | None = None
    f_expr: ej.Expr | None = None
    f_index: int = 0
    note: str = ""


@dataclass(frozen=True)
class Component:
    """A closed-form value for one tensor component (indices 1-based, as printed)."""
    tensor: str
    index: tuple[int, ...]
    value: str
    value_expr: ej.Expr
    note: str = ""


@dataclass(frozen=True, eq=False)
class MetricChart:
    name: str
    dim: int
    coords: tuple[str, ...]
    params: dict[str, float]
    metric_src: tuple[tuple[str, ...], ...]
    metric: tuple[tuple[ej.Expr, ...], ...]
    sample_points: tuple[tuple[float, ...], ...] = ()
    boxes: dict[str, tuple[float, float]] = field(default_factory=dict)
    exclude_src: str | None = None
    exclude: ej.Expr | None = None
    expected: tuple[Expectation, ...] = ()
    candidates: dict[str, dict[str, Any]] = field(default_factory=dict)
    components: tuple[Component, ...] = ()
    signature: str = ""
    notes: str = ""
    source: str = ""

    # parameters are constants, stored in declaration order
    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(self.params)

    @property
    def param_values(self) -> tuple[float, ...]:
        return tuple(self.params.values())

    @property
    def symbols(self) -> tuple[str, ...]:
        return self.coords + self.param_names

    def point(self, coords: Iterable[float]) -> ej.ChartPoint:
        return ej.ChartPoint(tuple(float(c) for c in coords), self.param_values)

    def env(self, coords: Iterable[float]) -> dict[str, float]:
        values = dict(zip(self.coords, (float(c) for c in coords)))
        values.update(self.params)
        return values

    def parse(self, source: str) -> ej.Expr:
        return ej.parse_expr(source, self.symbols)

    def evaluate(self, e: ej.Expr, coords: Iterable[float]) -> float:
        return ej.eval_scalar(e, self.env(coords))

    def excluded(self, coords: Iterable[float]) -> bool:
        if self.exclude is None:
            return False
        try:
            return self.evaluate(self.exclude, coords) <= 0
        except (ej.ExprError, ZeroDivisionError):
            return True

    def frame(self, coords: Iterable[float]) -> MetricFrame:
        evaluator = ej.Evaluator(self.coords, self.param_names)
        pt = self.point(coords)
        env = evaluator.bindings(pt)
        n = self.dim
        cache: dict[int, ej.Jet] = {}
        jets = [[None] * n for _ in range(n)]
        for a in range(n):
            for b in range(a, n):
                e = self.metric[a][b]
                key = id(e)
                if key not in cache:
                    cache[key] = ej.evaluate(e, env, n)
                jets[a][b] = jets[b][a] = cache[key]
        return frame_from_jets(jets)

    def bundle(self, coords: Iterable[float]) -> CurvatureBundle:
        return curvature_bundle(self.frame(coords))

    def with_params(self, **overrides: float) -> "MetricChart":
        """Copy of the chart with some raw parameters replaced (derived ones recomputed)."""
        raw = dict(self._raw["params"])
        for k, v in overrides.items():
            if k not in raw:
                raise ChartError(f"params.{k}", "not a free parameter")
            raw[k] = v
        data = dict(self._raw, params=raw)
        return chart_from_dict(data, self.source)

    @property
    def _raw(self) -> dict[str, Any]:
        return self.__dict__["_raw_data"]


_ZERO = "0"


def _metric_matrix(spec: Any, n: int) -> list[list[str]]:
    if not isinstance(spec, dict) or len(spec) != 1 or not ({"diag", "full", "upper"} & set(spec)):
        raise ChartError("metric", 'expected {"diag": [...]} or {"full": [[...]]}')
    if "diag" in spec:
        diag = spec["diag"]
        if len(diag) != n:
            raise ChartError("metric.diag", f"expected {n} entries")
        return [[str(diag[a]) if a == b else _ZERO for b in range(n)] for a in range(n)]
    rows = spec.get("full", spec.get("upper"))
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ChartError("metric.full", f"expected a {n}x{n} matrix")
    mat = [[str(x) if x is not None else None for x in row] for row in rows]
    for a in range(n):
        for b in range(a):
            lower, upper = mat[a][b], mat[b][a]
            if lower in (None, "", "~"):
                mat[a][b] = upper
            elif upper in (None, "", "~"):
                mat[b][a] = lower
            elif lower.replace(" ", "") != upper.replace(" ", ""):
                raise ChartError(f"metric.full[{a}][{b}]", "matrix is not symmetric")
    return mat


def chart_from_dict(data: dict[str, Any], source: str = "") -> MetricChart:
    for key in ("name", "dim", "coords", "metric"):
        if key not in data:
            raise ChartError(key, "missing required key")
    name = str(data["name"])
    n = int(data["dim"])
    coords = tuple(data["coords"])
    if len(coords) != n:
        raise ChartError("coords", f"expected {n} coordinate names")
    if len(set(coords)) != n:
        raise ChartError("coords", "duplicate coordinate name")

    params: dict[str, float] = {}
    for k, v in (data.get("params") or {}).items():
        if not isinstance(v, (int, float)):
            raise ChartError(f"params.{k}", "must be a number")
        params[k] = float(v)
    for k, src in (data.get("derived_params") or {}).items():
        try:
            e = ej.parse_expr(str(src), tuple(params) or ("_",))
            params[k] = ej.eval_scalar(e, params)
        except (ej.ExprError, ZeroDivisionError) as exc:
            raise ChartError(f"derived_params.{k}", str(exc)) from exc
    clash = set(params) & set(coords)
    if clash:
        raise ChartError("params", f"names clash with coordinates: {sorted(clash)}")
    symbols = coords + tuple(params)

    def parse(path: str, src: str) -> ej.Expr:
        try:
            return ej.parse_expr(str(src), symbols)
        except ej.ExprError as exc:
            raise ChartError(path, str(exc)) from exc

    mat_src = _metric_matrix(data["metric"], n)
    cache: dict[str, ej.Expr] = {}
    mat = []
    for a in range(n):
        row = []
        for b in range(n):
            src = mat_src[a][b]
            if src not in cache:
                cache[src] = parse(f"metric[{a}][{b}]", src)
            row.append(cache[src])
        mat.append(tuple(row))

    exclude_src = data.get("exclude")
    exclude = parse("exclude", exclude_src) if exclude_src else None

    boxes = {}
    for k, v in (data.get("boxes") or {}).items():
        if k not in coords:
            raise ChartError(f"boxes.{k}", "not a coordinate")
        lo, hi = float(v[0]), float(v[1])
        if not lo <= hi:
            raise ChartError(f"boxes.{k}", "empty interval")
        boxes[k] = (lo, hi)

    from .classify import REGISTRY, VERDICTS

    known_verdicts = set(VERDICTS) | {"holds", "holds-or-vacuous", "holds-nontrivially"}
    expected = []
    for i, item in enumerate(data.get("expected") or []):
        if item.get("condition") not in REGISTRY:
            raise ChartError(f"expected[{i}].condition", f"unknown condition {item.get('condition')!r}")
        if item.get("verdict") not in known_verdicts:
            raise ChartError(f"expected[{i}].verdict", f"unknown verdict {item.get('verdict')!r}")
        f_src = item.get("f")
        expected.append(Expectation(
            condition=item["condition"],
            verdict=item["verdict"],
            f=f_src,
            f_expr=parse(f"expected[{i}].f", f_src) if f_src else None,
            f_index=int(item.get("f_index", 0)),
            note=item.get("note", ""),
        ))

    components = []
    for i, item in enumerate(data.get("components") or []):
        index = tuple(int(k) for k in item["index"])
        if any(not 1 <= k <= n for k in index):
            raise ChartError(f"components[{i}].index", f"indices must lie in 1..{n}")
        components.append(Component(str(item["tensor"]), index, str(item["value"]),
                                    parse(f"components[{i}].value", item["value"]),
                                    item.get("note", "")))

    chart = MetricChart(
        name=name, dim=n, coords=coords, params=params,
        metric_src=tuple(tuple(r) for r in mat_src), metric=tuple(mat),
        boxes=boxes, exclude_src=exclude_src, exclude=exclude,
        expected=tuple(expected), candidates=dict(data.get("candidates") or {}),
        components=tuple(components),
        signature=str(data.get("signature", "")), notes=str(data.get("notes", "")),
        source=source,
    )
    object.__setattr__(chart, "_raw_data", data)

    points = []
    for i, p in enumerate(data.get("sample_points") or []):
        if len(p) != n:
            raise ChartError(f"sample_points[{i}]", f"expected {n} coordinates")
        p = tuple(float(x) for x in p)
        if chart.excluded(p):
            raise ChartError(f"sample_points[{i}]", "point violates the exclusion predicate")
        try:
            chart.frame(p)
        except (TensorError, ej.ExprError, ZeroDivisionError, ValueError) as exc:
            raise ChartError(f"sample_points[{i}]", f"metric not usable here: {exc}") from exc
        points.append(p)
    object.__setattr__(chart, "sample_points", tuple(points))
    return chart


def load_chart(path: str | Path) -> MetricChart:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ChartError("<file>", f"invalid JSON: {exc}") from exc
    return chart_from_dict(data, str(path))


def corpus_dir() -> Path:
    return Path(str(resources.files("semisym") / "charts"))


def corpus_paths() -> list[Path]:
    return sorted(corpus_dir().glob("*.json"))


def load_corpus() -> list[MetricChart]:
    return [load_chart(p) for p in corpus_paths()]


# short names for charts whose file stem names the coordinate system
ALIASES = {"schwarzschild": "schwarzschild_ef"}


def find_chart(name: str) -> MetricChart:
    """Load a chart by file stem or path."""
    p = Path(name)
    if p.suffix == ".json" and p.exists():
        return load_chart(p)
    stem = p.name.removesuffix(".json").removesuffix(".chart")
    stem = ALIASES.get(stem, stem)
    candidate = corpus_dir() / f"{stem}.json"
    if not candidate.exists():
        raise FileNotFoundError(f"no chart named {name!r}")
    return load_chart(candidate)


def default_samples(chart: MetricChart, count: int, seed: int = 0) -> list[tuple[float, ...]]:
    """Deterministic points inside the chart's sampling boxes."""
    missing = [c for c in chart.coords if c not in chart.boxes]
    if missing:
        raise ChartError("boxes", f"no sampling box for {missing}")
    rng = np.random.default_rng(seed)
    lo = np.array([chart.boxes[c][0] for c in chart.coords])
    hi = np.array([chart.boxes[c][1] for c in chart.coords])
    points: list[tuple[float, ...]] = []
    attempts = 0
    while len(points) < count:
        attempts += 1
        if attempts > 100 * count:
            raise ChartError("boxes", f"rejection cap exceeded after {attempts - 1} attempts")
        p = tuple(float(x) for x in lo + (hi - lo) * rng.random(chart.dim))
        if chart.excluded(p):
            continue
        try:
            chart.frame(p)
        except (TensorError, ej.ExprError, ZeroDivisionError, ValueError):
            continue
        points.append(p)
    return points


def chart_points(chart: MetricChart, count: int | None = None, seed: int = 0) -> list[tuple[float, ...]]:
    """Declared sample points, topped up from the boxes when ``count`` asks for more."""
    pts = list(chart.sample_points)
    if count is None:
        return pts if pts else default_samples(chart, 8, seed)
    if len(pts) >= count:
        return pts[:count]
    return pts + default_samples(chart, count - len(pts), seed)


def is_close(a: float, b: float, rel: float) -> bool:
    return math.isclose(a, b, rel_tol=rel, abs_tol=rel * 1e-3)
