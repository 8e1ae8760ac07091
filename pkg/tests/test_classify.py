import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semisym import classify as cl
from semisym.corpus import find_chart
from semisym.tensor import DOWN, Tensor, tachibana

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def bundle(name, i=0):
    c = find_chart(name)
    return c.bundle(c.sample_points[i])


def cov(a):
    return Tensor.covariant(np.asarray(a, dtype=float))


# --- least squares ----------------------------------------------------------------


def test_self_fit():
    b = bundle("godel")
    fit = cl.solve_combo(b.R4, [b.R4])
    assert fit.coefficients == (pytest.approx(1.0, abs=1e-15),)
    assert fit.residual_rel < 1e-15
    assert not fit.degenerate_basis


@settings(max_examples=60)
@given(arrays(float, (3, 4, 4), elements=finite), st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.floats(0.01, 100))
def test_combination_recovered_and_scale_invariant(raw, coeffs, scale):
    basis = [cov(m) for m in raw]
    gram = np.array([[np.vdot(a, b) for b in raw] for a in raw])
    if np.linalg.cond(gram) > 1e6:
        return
    target = sum((t * c for t, c in zip(basis, coeffs)), cov(np.zeros((4, 4))))
    fit = cl.solve_combo(target, basis)
    if target.zero_ratio() < cl.TOL_ZERO:
        return
    np.testing.assert_allclose(fit.coefficients, coeffs, atol=1e-8 * max(1, max(map(abs, coeffs))))
    again = cl.solve_combo(target * scale, [t * (1 / scale) for t in basis])
    np.testing.assert_allclose(again.coefficients, np.array(coeffs) * scale**2, rtol=1e-7, atol=1e-7)
    assert abs(again.residual_rel - fit.residual_rel) < 1e-9


def test_degenerate_basis_is_flagged():
    b = bundle("godel")
    fit = cl.solve_combo(b.R4, [b.R4, b.R4 * 2.0])
    assert fit.degenerate_basis
    assert fit.residual_rel < 1e-12
    zero = cl.solve_combo(b.R4, [b.R4, b.R4 * 0.0])
    assert zero.degenerate_basis and zero.coefficients[1] == 0.0


def test_solve_combo_errors():
    b = bundle("godel")
    with pytest.raises(cl.ClassifyError):
        cl.solve_combo(b.R4, [])
    with pytest.raises(cl.ClassifyError):
        cl.solve_combo(b.R4, [b.Ric])


def test_pinned_fit():
    b = bundle("otsuki")
    basis = [b.gg, b.gS]
    free = cl.solve_combo(b.R4, basis)
    pinned = cl.solve_pinned(b.R4, basis, {0: free.coefficients[0]})
    assert pinned.coefficients[0] == free.coefficients[0]
    assert pinned.residual_rel < 1e-9
    wrong = cl.solve_pinned(b.R4, basis, {0: 2 * free.coefficients[0] + 1, 1: 0.0})
    assert wrong.residual_rel > 1e-3


# --- zero test and recipes ------------------------------------------------------


def test_zero_test_uses_term_magnitudes():
    t = Tensor.covariant(np.array([[1e-12, 0.0], [0.0, 0.0]]), np.array([[1.0, 0], [0, 0]]))
    assert cl.check_zero(t) == (True, pytest.approx(1e-12))
    assert not cl.check_zero(t, tol=1e-13)[0]
    assert cl.check_zero(cov(np.zeros((2, 2))))[0]


def test_recipe_linear_combination():
    b = bundle("schwarzschild_ef")
    t = cl.tensor_recipe(b, "R.R - 0.5*Q(g,R)")
    ref = cl.tensor_recipe(b, "R.R").data - 0.5 * tachibana(b.g, b.R4).data
    np.testing.assert_allclose(t.data, ref, atol=1e-15)
    assert cl.tensor_recipe(b, "R·R") is cl.tensor_recipe(b, "R.R")
    assert cl.tensor_recipe(b, "Rdot S").variance == (DOWN,) * 4


@pytest.mark.parametrize("bad", ["R..R", "Q(g,)", "X.R", "Q(g,Z)", "R R"])
def test_recipe_errors(bad):
    with pytest.raises(cl.ClassifyError):
        cl.tensor_recipe(bundle("godel"), bad)


def test_unknown_condition():
    with pytest.raises(cl.ClassifyError):
        cl.get_spec("hyper_semisym")
    with pytest.raises(cl.ClassifyError):
        cl.run_registry(find_chart("godel"), names=["nope"])


def test_tolerances_must_be_positive():
    with pytest.raises(cl.ClassifyError):
        cl.Tolerances(zero=0.0)
    with pytest.raises(cl.ClassifyError):
        cl.Tolerances(fit=-1.0)


# --- condition runs ---------------------------------------------------------------


def test_pseudosymmetry_function_scales_with_radius():
    base = find_chart("nariai")
    r0 = base.params["R0"]
    fs = {}
    for c in (1.0, 1.7):
        chart = base.with_params(R0=r0 * c)
        rep = cl.run_registry(chart, names=["c_pseudo"])["c_pseudo"]
        assert rep.verdict == cl.HOLDS_CONSTANT
        fs[c] = rep.on_set()[0].coefficients[0]
    assert fs[1.7] == pytest.approx(fs[1.0] / 1.7**2, rel=1e-9)
    assert fs[1.0] == pytest.approx(1 / (3 * r0**2), rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-14, 1e-2), st.floats(1e-14, 1e-2))
def test_verdicts_are_monotone_in_fit_tolerance(t1, t2):
    lo, hi = sorted((t1, t2))
    chart = find_chart("robinson_trautman")
    names = ["pseudosym", "ricci_pseudo", "ricci_gen_pseudo", "c_pseudo", "roter", "ein2"]
    strict = cl.run_registry(chart, names=names, tol=cl.Tolerances(fit=lo), count=3)
    loose = cl.run_registry(chart, names=names, tol=cl.Tolerances(fit=hi), count=3)
    for n in names:
        if strict[n].holds:
            assert loose[n].holds, n


def test_einstein_level_one_on_einstein_data():
    b = bundle("nariai")
    rep = cl.check_ein_level(b, 1)
    assert rep.residual_rel < 1e-12
    assert rep.coefficients[0] == pytest.approx(-float(b.kappa.data) / 4, rel=1e-12)
    with pytest.raises(cl.ClassifyError):
        cl.check_ein_level(b, 5)


def test_rank_probe_on_einstein_data():
    b = bundle("nariai")
    ranks = cl.rank_probe(b)
    k = float(b.kappa.data) / 4
    assert any(abs(p - k) < 1e-9 and r == 0 for p, r in ranks.items())


def test_quasi_einstein_candidate_validation():
    b = bundle("van_stockum")
    with pytest.raises(cl.ClassifyError):
        cl.verify_qe(b, {"p": 1.0, "rho": 1.0, "sigma": [1.0, 0.0]})
    with pytest.raises(cl.ClassifyError):
        cl.verify_qe(b, {"rho": 1.0, "sigma": [1.0, 0.0, 0.0, 0.0]})
    assert cl.verify_qe(b, None).mode == "rank-probe"


def test_recurrence_special_cases():
    assert cl.check_recurrence(bundle("minkowski")).vacuous
    assert cl.check_recurrence(bundle("barriola_vilenkin"), "nablaR").trivial
    with pytest.raises(cl.ClassifyError):
        cl.check_recurrence(bundle("godel"), "nablaC")


def test_roter_kind_errors():
    with pytest.raises(cl.ClassifyError):
        cl.check_roter(bundle("godel"), "XRT")


def test_minkowski_is_flat_and_everything_trivial():
    reps = cl.run_registry(find_chart("minkowski"))
    assert reps["flat"].verdict == cl.HOLDS_TRIVIALLY
    for name, rep in reps.items():
        assert rep.verdict in (cl.HOLDS_TRIVIALLY, cl.VACUOUS), name


def test_report_json_round_trip():
    reps = cl.run_registry(find_chart("vaidya"), count=3)
    for rep in reps.values():
        again = cl.ConditionReport.from_json(json.loads(json.dumps(rep.to_json())))
        assert again == rep


def test_verdict_aliases():
    assert cl.verdict_matches("holds", cl.HOLDS_TRIVIALLY)
    assert not cl.verdict_matches("holds", cl.VACUOUS)
    assert cl.verdict_matches("holds-or-vacuous", cl.VACUOUS)
    assert cl.verdict_matches("holds-nontrivially", cl.HOLDS_VARIABLE)
    assert not cl.verdict_matches("holds-nontrivially", cl.HOLDS_TRIVIALLY)
    assert not cl.verdict_matches(cl.HOLDS_CONSTANT, cl.HOLDS_VARIABLE)


# --- implication audit --------------------------------------------------------------


def _rep(name, verdict, coeffs=None):
    recs = [cl.PointRecord((float(i),), True, [c], 0.0, True) for i, c in enumerate(coeffs or [])]
    return cl.ConditionReport(name, recs, verdict, 0.0)


def _base_reports(**over):
    reps = {n: _rep(n, cl.FAILS) for n in ("flat", "semisym", "pseudosym", "ricci_pseudo")}
    reps.update(over)
    return reps


def test_audit_flags_broken_arrow():
    reps = _base_reports(semisym=_rep("semisym", cl.HOLDS_TRIVIALLY),
                         ricci_semisym=_rep("ricci_semisym", cl.FAILS))
    bad = [f for f in cl.audit_implications(reps) if not f.ok]
    assert [f.arrow for f in bad] == ["semisym => ricci_semisym", "semisym => pseudosym"]


def test_audit_flags_different_functions():
    reps = _base_reports(pseudosym=_rep("pseudosym", cl.HOLDS_CONSTANT, [1.0, 1.0]),
                         ricci_pseudo=_rep("ricci_pseudo", cl.HOLDS_CONSTANT, [1.0, 1.5]))
    bad = [f for f in cl.audit_implications(reps) if not f.ok]
    assert [f.arrow for f in bad] == ["pseudosym => ricci_pseudo (same f)"]


def test_audit_passes_consistent_reports():
    reps = _base_reports(pseudosym=_rep("pseudosym", cl.HOLDS_CONSTANT, [2.0]),
                         ricci_pseudo=_rep("ricci_pseudo", cl.HOLDS_CONSTANT, [2.0]))
    assert all(f.ok for f in cl.audit_implications(reps))


def test_audit_requires_core_conditions():
    with pytest.raises(cl.ClassifyError):
        cl.audit_implications({"flat": _rep("flat", cl.FAILS)})
