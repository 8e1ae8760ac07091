import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import derivation_loops, kn_loops, tachibana_loops
from semisym.classify import solve_combo
from semisym.corpus import find_chart, load_corpus
from semisym.tensor import (
    DOWN,
    UP,
    MetricFrame,
    Tensor,
    TensorError,
    contract,
    derivation_action,
    frobenius_norm,
    invert,
    invert_with_magnitude,
    kulkarni_nomizu,
    matrix_product,
    outer,
    raise_lower,
    tachibana,
)

MINK = Tensor.covariant(np.diag([-1.0, 1.0, 1.0, 1.0]))

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def sym_matrix(n):
    return arrays(float, (n, n), elements=finite).map(lambda a: (a + a.T) / 2)


def bundle(name, i=0):
    c = find_chart(name)
    return c.bundle(c.sample_points[i])


# --- Kulkarni-Nomizu ----------------------------------------------------------


@given(sym_matrix(3), sym_matrix(3))
def test_kulkarni_nomizu_matches_loops_and_symmetries(e, d):
    t = kulkarni_nomizu(Tensor.covariant(e), Tensor.covariant(d)).data
    np.testing.assert_allclose(t, kn_loops(e, d), atol=1e-12)
    np.testing.assert_allclose(t, -t.transpose(1, 0, 2, 3), atol=1e-12)
    np.testing.assert_allclose(t, t.transpose(2, 3, 0, 1), atol=1e-12)
    bianchi = t + t.transpose(0, 2, 3, 1) + t.transpose(0, 3, 1, 2)
    assert np.max(np.abs(bianchi)) < 1e-11


def test_minkowski_g_wedge_g():
    gg = kulkarni_nomizu(MINK, MINK).data
    # hand expansion of the component formula: -2 g_11 g_22 for the (1,2,1,2) slot
    assert gg[0, 1, 0, 1] == -2 * MINK.data[0, 0] * MINK.data[1, 1] == 2.0
    np.testing.assert_array_equal(gg, kn_loops(MINK.data, MINK.data))


def test_wedge_with_zero():
    z = Tensor.covariant(np.zeros((4, 4)))
    assert not np.any(kulkarni_nomizu(MINK, z).data)


def test_wedge_dimension_mismatch():
    with pytest.raises(TensorError):
        kulkarni_nomizu(MINK, Tensor.covariant(np.eye(3)))


def test_constant_curvature_is_multiple_of_g_wedge_g():
    b = bundle("otsuki")
    fit = solve_combo(b.R4, [b.gg])
    assert fit.residual_rel < 1e-9
    assert abs(fit.coefficients[0]) > 1e-3


# --- Tachibana ----------------------------------------------------------------


def test_q_g_g_vanishes():
    b = bundle("godel")
    assert np.max(np.abs(tachibana(b.g, b.g).data)) < 1e-14


def test_q_g_s_vanishes_on_einstein_data():
    b = bundle("nariai")
    q = tachibana(b.g, b.Ric)
    assert q.zero_ratio() < 1e-12


def test_q_g_r_matches_loops_on_schwarzschild():
    b = bundle("schwarzschild_ef")
    q = tachibana(b.g, b.R4).data
    np.testing.assert_allclose(q, tachibana_loops(b.g.data, b.R4.data), atol=1e-13)
    np.testing.assert_allclose(q, -np.swapaxes(q, 4, 5), atol=1e-14)
    assert np.max(np.abs(q)) > 1e-3


@given(sym_matrix(3), arrays(float, (3, 3), elements=finite))
def test_tachibana_matches_loops(nt, u):
    q = tachibana(Tensor.covariant(nt), Tensor.covariant(u)).data
    np.testing.assert_allclose(q, tachibana_loops(nt, u), atol=1e-12)


def test_tachibana_rejects_contravariant_input():
    with pytest.raises(TensorError):
        tachibana(MINK, Tensor(np.eye(4), (UP, DOWN)))


@pytest.mark.parametrize("chart", load_corpus(), ids=lambda c: c.name)
def test_tachibana_antisymmetric_on_corpus(chart):
    b = chart.bundle(chart.sample_points[0])
    for u in (b.Ric, b.R4):
        q = tachibana(b.g, u).data
        assert np.max(np.abs(q + np.swapaxes(q, -1, -2))) == 0.0
    q = tachibana(b.Ric, b.R4).data
    assert np.max(np.abs(q + np.swapaxes(q, -1, -2))) == 0.0


# --- derivation action ---------------------------------------------------------


def test_derivation_matches_loops():
    b = bundle("kantowski_sachs")
    got = derivation_action(b.R4, b.g_inv, b.Ric).data
    np.testing.assert_allclose(got, derivation_loops(b.R4.data, b.g_inv.data, b.Ric.data),
                               atol=1e-12 * np.max(np.abs(got)))


def test_derivation_is_linear_and_leibniz():
    b = bundle("robinson_trautman")
    rng = np.random.default_rng(5)
    u = Tensor(rng.normal(size=4), (DOWN,))
    v = Tensor(rng.normal(size=4), (DOWN,))
    act = lambda t: derivation_action(b.R4, b.g_inv, t)  # noqa: E731
    np.testing.assert_allclose(act(u * 2.0 + v).data, 2 * act(u).data + act(v).data, atol=1e-12)
    lhs = act(outer(u, v)).data
    rhs = (np.einsum("iab,j->ijab", act(u).data, v.data)
           + np.einsum("i,jab->ijab", u.data, act(v).data))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("chart", load_corpus(), ids=lambda c: c.name)
def test_curvature_operator_annihilates_metric(chart):
    b = chart.bundle(chart.sample_points[0])
    for lt in (b.R4, b.C4, b.gS):
        t = derivation_action(lt, b.g_inv, b.g)
        assert t.zero_ratio() < 1e-9


def test_derivation_supports_upper_first_slot():
    b = bundle("projective_r4")
    t = derivation_action(b.P4, b.g_inv, b.R13)
    assert t.variance == (UP, DOWN, DOWN, DOWN, DOWN, DOWN)


def test_derivation_rejects_other_variance():
    b = bundle("projective_r4")
    with pytest.raises(TensorError):
        derivation_action(b.R4, b.g_inv, Tensor(np.eye(4), (DOWN, UP)))
    with pytest.raises(TensorError):
        derivation_action(b.R4, b.g_inv, Tensor(np.asarray(1.0), ()))


# --- contraction, raising, norms -------------------------------------------------


def test_trace_of_identity():
    b = bundle("godel")
    mixed = contract(outer(b.g, b.g_inv), 1, 2)
    assert mixed.variance == (DOWN, UP)
    np.testing.assert_allclose(mixed.data, np.eye(4), atol=1e-13)
    assert float(contract(mixed, 0, 1).data) == pytest.approx(4.0, abs=1e-13)


def test_ricci_by_contraction_on_kasner():
    c = find_chart("kasner")
    b = c.bundle((1.3, 0.0, 0.0, 0.0))
    s = contract(b.R4, 0, 3, b.frame)
    assert s.zero_ratio() < 1e-10
    np.testing.assert_allclose(s.data, b.Ric.data, atol=1e-14)


def test_contraction_errors():
    b = bundle("godel")
    with pytest.raises(TensorError):
        contract(b.R4, 0, 0, b.frame)
    with pytest.raises(TensorError):
        contract(b.R4, 0, 7, b.frame)
    with pytest.raises(TensorError):
        contract(b.R4, 0, 1)


def test_raise_then_lower_round_trip():
    b = bundle("van_stockum")
    up = raise_lower(b.R4, 2, UP, b.frame)
    back = raise_lower(up, 2, DOWN, b.frame)
    np.testing.assert_allclose(back.data, b.R4.data, atol=1e-12 * np.max(np.abs(b.R4.data)))
    with pytest.raises(TensorError):
        raise_lower(b.R4, 4, UP, b.frame)


def test_ricci_operator_is_scalar_on_einstein_data():
    b = bundle("nariai")
    k = float(b.kappa.data)
    np.testing.assert_allclose(b.ricci_operator.data, np.eye(4) * k / 4, atol=1e-12)


def test_ricci_square_matches_loops():
    b = bundle("sultana_dyer")
    s, gi = b.Ric.data, b.g_inv.data
    ref = np.zeros((4, 4))
    for a in range(4):
        for c in range(4):
            ref[a, c] = sum(s[a, x] * gi[x, y] * s[y, c] for x in range(4) for y in range(4))
    np.testing.assert_allclose(b.Ric2.data, ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(matrix_product(b.Ric, b.Ric, b.g_inv).data, ref, rtol=1e-12, atol=1e-14)


def test_frobenius_norm():
    assert frobenius_norm(Tensor.covariant(np.zeros((4, 4)))) == 0.0
    assert frobenius_norm(MINK) == 2.0


# --- inversion and frames --------------------------------------------------------


@settings(max_examples=50)
@given(arrays(float, (4, 4), elements=finite))
def test_gauss_jordan_inverse(a):
    g = a + a.T + np.diag([-9.0, 9.0, 9.0, 9.0])
    if abs(np.linalg.det(g)) < 1e-3:
        return
    inv, mag = invert_with_magnitude(g)
    np.testing.assert_allclose(inv, np.linalg.inv(g), rtol=1e-9, atol=1e-12)
    assert np.all(mag >= np.abs(inv))


def test_null_block_inverse_is_exact():
    g = np.array([[2.7, 1.0], [1.0, 0.0]])
    inv, mag = invert_with_magnitude(g)
    assert inv[1, 1] == pytest.approx(-2.7)
    assert abs(inv[0, 0]) < 1e-15
    assert mag[0, 0] > 0


def test_singular_matrix():
    with pytest.raises(TensorError):
        invert(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_frame_validation():
    z = np.zeros((2, 2, 2))
    with pytest.raises(TensorError, match="symmetric"):
        MetricFrame.from_arrays(np.array([[1.0, 0.5], [0.0, 1.0]]), z, z[..., None], z[..., None, None])
    with pytest.raises(TensorError, match="singular"):
        MetricFrame.from_arrays(np.array([[1.0, 1.0], [1.0, 1.0]]), z, z[..., None], z[..., None, None])
    f = MetricFrame.from_arrays(np.diag([-1.0, 1.0]), z, z[..., None], z[..., None, None])
    np.testing.assert_array_equal(f.g_inv.data, np.diag([-1.0, 1.0]))


def test_tensor_validation():
    with pytest.raises(TensorError):
        Tensor(np.zeros((4, 4)), (DOWN,))
    with pytest.raises(TensorError):
        Tensor(np.zeros((4, 4)), (DOWN, "sideways"))
    with pytest.raises(TensorError):
        Tensor(np.zeros((4, 3)), (DOWN, DOWN))
    with pytest.raises(TensorError):
        Tensor.covariant(np.eye(4)) + Tensor(np.eye(4), (UP, UP))
