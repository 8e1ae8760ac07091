import copy
import json
import math

import pytest

from semisym.classify import audit_implications, check_components, check_expectations, run_registry
from semisym.corpus import (
    ChartError,
    chart_from_dict,
    chart_points,
    corpus_paths,
    default_samples,
    find_chart,
    load_chart,
    load_corpus,
)

CORPUS = load_corpus()

BASE = {
    "name": "toy",
    "dim": 2,
    "coords": ["t", "r"],
    "params": {"m": 1.0},
    "metric": {"diag": ["-(1-2*m/r)", "1/(1-2*m/r)"]},
    "boxes": {"t": [0, 1], "r": [3, 5]},
    "exclude": "r-2*m",
    "sample_points": [[0.5, 3.0]],
    "signature": "lorentzian",
}


def make(**over):
    d = copy.deepcopy(BASE)
    d.update(over)
    return chart_from_dict(d)


def test_corpus_is_nonempty_and_named_after_files():
    assert len(CORPUS) >= 30
    for path, chart in zip(corpus_paths(), CORPUS):
        assert path.stem == chart.name


@pytest.mark.parametrize("chart", CORPUS, ids=lambda c: c.name)
def test_chart_expectations_components_and_audit(chart):
    reps = run_registry(chart)
    bad = [e for e in check_expectations(chart, reps) if not e.ok]
    assert not bad, bad
    comps = [c for c in check_components(chart) if not c.ok]
    assert not comps, comps
    findings = [f for f in audit_implications(reps, chart) if not f.ok]
    assert not findings, findings


@pytest.mark.parametrize("chart", CORPUS, ids=lambda c: c.name)
def test_charts_declare_expectations_and_points(chart):
    assert chart.expected
    assert chart.sample_points
    assert chart.signature in ("lorentzian", "riemannian", "semi-riemannian")


def test_full_matrix_with_mirror_entries():
    c = make(metric={"full": [["-1", "x0"], ["~", "1"]]}, params={"x0": 0.5}, exclude=None)
    assert c.metric_src[1][0] == c.metric_src[0][1] == "x0"


def test_asymmetric_matrix_rejected():
    with pytest.raises(ChartError) as info:
        make(metric={"full": [["-1", "t"], ["r", "1"]]})
    assert info.value.path == "metric.full[0][1]" or "symmetric" in str(info.value)


def test_sample_point_on_singularity_rejected():
    with pytest.raises(ChartError) as info:
        make(sample_points=[[0.5, 2.0]])
    assert info.value.path == "sample_points[0]"


def test_sample_point_at_origin_rejected():
    with pytest.raises(ChartError):
        make(exclude=None, sample_points=[[0.5, 0.0]])


@pytest.mark.parametrize("field, value, path", [
    ("expected", [{"condition": "hyper", "verdict": "fails"}], "expected[0].condition"),
    ("expected", [{"condition": "flat", "verdict": "maybe"}], "expected[0].verdict"),
    ("components", [{"tensor": "R", "index": [1, 2, 1, 3], "value": "0"}], "components[0].index"),
    ("coords", ["t", "t"], "coords"),
    ("params", {"r": 1.0}, "params"),
    ("boxes", {"q": [0, 1]}, "boxes.q"),
    ("boxes", {"t": [1, 0]}, "boxes.t"),
    ("metric", {"diag": ["1"]}, "metric.diag"),
])
def test_validation_errors_name_the_field(field, value, path):
    with pytest.raises(ChartError) as info:
        make(**{field: value})
    assert info.value.path.startswith(path)


def test_missing_key_and_bad_expression():
    d = copy.deepcopy(BASE)
    del d["metric"]
    with pytest.raises(ChartError):
        chart_from_dict(d)
    with pytest.raises(ChartError) as info:
        make(metric={"diag": ["-(1-2*m/r", "1"]})
    assert info.value.path == "metric[0][0]"


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ChartError):
        load_chart(p)


def test_kasner_derived_parameters():
    c = find_chart("kasner")
    a = c.param_values
    assert sum(a) == pytest.approx(1.0, abs=1e-14)
    assert sum(x * x for x in a) == pytest.approx(1.0, abs=1e-14)
    other = c.with_params(a1=0.5)
    b = other.param_values
    assert b[0] == 0.5
    assert sum(b) == pytest.approx(1.0, abs=1e-14)
    assert sum(x * x for x in b) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ChartError):
        c.with_params(a2=0.1)


def test_find_chart_aliases_and_paths():
    assert find_chart("schwarzschild").name == "schwarzschild_ef"
    assert find_chart("schwarzschild.chart").name == "schwarzschild_ef"
    assert find_chart(str(corpus_paths()[0])).name == corpus_paths()[0].stem
    with pytest.raises(FileNotFoundError):
        find_chart("no_such_metric")


def test_default_samples_are_deterministic_and_valid():
    c = find_chart("schwarzschild_ef")
    a = default_samples(c, 6, seed=3)
    assert a == default_samples(c, 6, seed=3)
    assert a != default_samples(c, 6, seed=4)
    for p in a:
        for name, x in zip(c.coords, p):
            lo, hi = c.boxes[name]
            assert lo <= x <= hi
        assert not c.excluded(p)


def test_rejection_cap():
    c = make(exclude="-1", sample_points=[])
    with pytest.raises(ChartError, match="rejection cap"):
        default_samples(c, 3)


def test_chart_points_topping_up():
    c = find_chart("godel")
    assert chart_points(c) == list(c.sample_points)
    assert chart_points(c, 2) == list(c.sample_points[:2])
    more = chart_points(c, len(c.sample_points) + 3)
    assert more[: len(c.sample_points)] == list(c.sample_points)
    assert len(more) == len(c.sample_points) + 3


def test_with_params_changes_curvature():
    c = find_chart("schwarzschild_ef")
    p = (0.1, 4.0, 1.0, 0.3)
    r1 = c.bundle(p).R4.data[0, 1, 0, 1]
    r2 = c.with_params(m=2.0).bundle(p).R4.data[0, 1, 0, 1]
    assert r2 == pytest.approx(2 * r1, rel=1e-13)
    assert r1 == pytest.approx(-2 / 4.0**3, rel=1e-13)


def test_chart_files_are_plain_json():
    for p in corpus_paths():
        d = json.loads(p.read_text())
        assert d["name"] == p.stem
        for pt in d["sample_points"]:
            assert all(math.isfinite(x) for x in pt)
