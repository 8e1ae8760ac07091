"""Curvature tower of a coordinate metric at a single point.

The metric enters as an order-3 matrix jet.  Christoffel symbols are formed as
an order-2 jet, the Riemann tensor as an order-1 jet, so its first partials
(and hence the covariant derivative) come out of the same pass without any
explicit second derivative of the connection.

Sign and slot conventions:

    R_abcd = g_a.  (d_c G^._bd - d_d G^._bc + G^e_bd G^._ec - G^e_bc G^._ed)
    S_ab   = g^{cd} R_cabd,    kappa = g^ab S_ab

A space of constant curvature k has R = k (g wedge g) and kappa = 2n(n-1)k;
with this sign the round sphere has negative k.  The derivative slot of
nabla R and nabla S is the last slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from itertools import combinations

import numpy as np

from . import exprjet as ej
from .tensor import UP, DOWN, MetricFrame, Tensor, einsum_mag, kulkarni_nomizu, matrix_product


class CurvatureError(ValueError):
    pass


def metric_jet(frame: MetricFrame) -> ej.Jet:
    n = frame.dim
    return ej.Jet([frame.g.data, frame.dg, frame.d2g, frame.d3g], n)


def _abs_jet(j: ej.Jet) -> ej.Jet:
    return ej.Jet([np.abs(p) for p in j.parts], j.n)


def _inverse_magnitude(g: ej.Jet, m0: np.ndarray) -> ej.Jet:
    """Term magnitudes of the inverse-metric jet, seeded with those of the inverse itself."""
    letters = "pqrs"
    parts = [m0]
    for k in range(1, g.order + 1):
        lk = letters[:k]
        acc = np.zeros(m0.shape + (g.n,) * k)
        for m in range(1, k + 1):
            for subset in combinations(range(k), m):
                la = "".join(lk[i] for i in subset)
                lb = "".join(lk[i] for i in range(k) if i not in subset)
                acc = acc + np.einsum(f"ab{la},bc{lb}->ac{lk}", np.abs(g.parts[m]), parts[k - m])
        parts.append(np.einsum(f"ab,bc{lk}->ac{lk}", m0, acc))
    return ej.Jet(parts, g.n)


def frame_from_jets(components: list[list[ej.Jet]]) -> MetricFrame:
    n = len(components)
    flat = [components[a][b] for a in range(n) for b in range(n)]
    g = ej.Jet.stack(flat, (n, n))
    if g.order < 3:
        raise CurvatureError("metric jets must be of order 3")
    return MetricFrame.from_arrays(*g.parts[:4])


def _christoffel_from(g: ej.Jet, ginv: ej.Jet, absolute: bool = False) -> ej.Jet:
    dg = g.grad()  # value axes (a, b, e): d_e g_ab
    # first kind: G_dbc = (d_b g_dc + d_c g_db - d_d g_bc) / 2
    last = dg.transpose((2, 0, 1))
    first = (dg.transpose((0, 2, 1)) + dg + (last if absolute else -last)) * 0.5
    return ej.einsum("ad,dbc->abc", ginv, first)


def christoffel_jet(frame: MetricFrame) -> ej.Jet:
    """Order-2 jet of Gamma^a_bc (value axes a, b, c)."""
    g = metric_jet(frame)
    return _christoffel_from(g, ej.inverse(g.truncate(2), frame.g_inv.data))


def christoffel(frame: MetricFrame) -> tuple[np.ndarray, np.ndarray]:
    """Gamma[a, b, c] = Gamma^a_bc and dGamma[a, b, c, e] = d_e Gamma^a_bc."""
    gam = christoffel_jet(frame)
    return gam.parts[0], gam.parts[1]


def _riemann_from(g1: ej.Jet, gam: ej.Jet, absolute: bool = False) -> ej.Jet:
    gam1 = gam.truncate(1)
    dgam = gam.grad()  # (alpha, b, c, d): d_d Gamma^alpha_bc
    swapped = dgam.transpose((0, 1, 3, 2))
    # Gamma^beta_bc Gamma^alpha_beta d -> (alpha, b, c, d)
    quad = ej.einsum("ebc,aed->abcd", gam1, gam1)
    qswap = quad.transpose((0, 1, 3, 2))
    if absolute:
        mixed = dgam + swapped + quad + qswap
    else:
        # overall sign chosen so that S is minus the usual Ricci contraction and the
        # listed exact-solution components (e.g. Schwarzschild R_1212 = -2m/r^3) hold
        mixed = -(dgam - swapped + quad - qswap)
    return ej.einsum("ae,ebcd->abcd", g1, mixed)


def riemann_jet(frame: MetricFrame, gam: ej.Jet | None = None) -> ej.Jet:
    """Order-1 jet of R_abcd."""
    if gam is None:
        gam = christoffel_jet(frame)
    return _riemann_from(metric_jet(frame).truncate(1), gam)


def magnitude_jets(frame: MetricFrame) -> tuple[ej.Jet, ej.Jet, ej.Jet]:
    """Term-magnitude jets of g^-1, Gamma and R: the same formulas on absolute values."""
    g = metric_jet(frame)
    ginv_abs = _inverse_magnitude(g.truncate(2), frame.g_inv.mag)
    gabs = _abs_jet(g)
    gam_abs = _christoffel_from(gabs, ginv_abs, absolute=True)
    r_abs = _riemann_from(gabs.truncate(1), gam_abs, absolute=True)
    return ginv_abs, gam_abs, r_abs


def _sym_curvature(r: np.ndarray) -> np.ndarray:
    r = 0.5 * (r - r.transpose(1, 0, 2, 3))
    r = 0.5 * (r + r.transpose(2, 3, 0, 1))
    # copy one representative per orbit so the symmetries hold bit for bit
    n = r.shape[0]
    a, b, c, d = np.indices(r.shape)
    sign = np.sign(b - a) * np.sign(d - c)
    p1, q1 = np.minimum(a, b), np.maximum(a, b)
    p2, q2 = np.minimum(c, d), np.maximum(c, d)
    swap = p1 * n + q1 > p2 * n + q2
    i, j = np.where(swap, p2, p1), np.where(swap, q2, q1)
    k, m = np.where(swap, p1, p2), np.where(swap, q1, q2)
    return (sign * r[i, j, k, m]) + 0.0


def riemann(frame: MetricFrame) -> Tensor:
    """Riemann tensor (0,4) with its term magnitudes."""
    return curvature_bundle(frame).R4


def _riemann_tensor(rj: ej.Jet, r_abs: ej.Jet) -> Tensor:
    # exact antisymmetrisation in the last pair is structural; enforce the rest
    mag = r_abs.parts[0]
    mag = 0.25 * (mag + mag.transpose(1, 0, 2, 3) + mag.transpose(2, 3, 0, 1) + mag.transpose(3, 2, 1, 0))
    return Tensor.covariant(_sym_curvature(rj.parts[0]), mag)


def ricci(frame: MetricFrame, r4: Tensor) -> Tensor:
    data, mag = einsum_mag("cabd,cd->ab", r4.data, r4.mag, frame.g_inv.data, frame.g_inv.mag)
    return Tensor.covariant(0.5 * (data + data.T), 0.5 * (mag + mag.T))


def scalar_curvature(frame: MetricFrame, ric: Tensor) -> Tensor:
    val, mag = einsum_mag("ab,ab->", ric.data, ric.mag, frame.g_inv.data, frame.g_inv.mag)
    return Tensor(np.asarray(val), (), np.asarray(mag))


FAMILY_COEFFS = {
    # name: (a1, a2 / kappa, a3) for H = a1 R + a2 (g wedge g) + a3 (g wedge S)
    "gaussian": (0.0, None, lambda n: 0.0),
    "weyl": (1.0, lambda n: 1.0 / (2 * (n - 1) * (n - 2)), lambda n: -1.0 / (n - 2)),
    "conharmonic": (1.0, lambda n: 0.0, lambda n: -1.0 / (n - 2)),
    "concircular": (1.0, lambda n: -1.0 / (2 * n * (n - 1)), lambda n: 0.0),
}


def linear_family(r4: Tensor, gg: Tensor, gs: Tensor, kappa: Tensor, n: int, name: str) -> Tensor:
    """Member of the family a1 R + a2 (g wedge g) + a3 (g wedge S)."""
    a1, a2f, a3f = FAMILY_COEFFS[name]
    if name in ("weyl", "conharmonic") and n < 3:
        raise CurvatureError(f"{name} tensor needs dimension >= 3")
    if name == "concircular" and n < 2:
        raise CurvatureError("concircular tensor needs dimension >= 2")
    if a2f is None:
        return gg * 0.5
    c = a2f(n)
    k = float(kappa.data)
    # kappa is itself computed: its magnitude enters the g wedge g term
    kterm = Tensor(gg.data * (c * k), gg.variance,
                   abs(c) * (abs(k) * gg.mag + float(kappa.mag) * np.abs(gg.data)))
    out = r4 * a1 + kterm
    a3 = a3f(n)
    if a3:
        out = out + gs * a3
    return out


def projective(frame: MetricFrame, r4: Tensor, ric: Tensor) -> tuple[Tensor, Tensor]:
    """P_abcd = R_abcd - (g_ad S_bc - g_bd S_ac)/(n-1), and its (1,3) form.

    The (1,3) form raises the last slot (g(P(X,Y)Z, W) = P(X,Y,Z,W)) and
    stores the contravariant index first: P13[w, x, y, z] = g^{wd} P_xyzd.
    """
    n = frame.dim
    if n < 2:
        raise CurvatureError("projective tensor needs dimension >= 2")
    g = frame.g
    v1, m1 = einsum_mag("ad,bc->abcd", g.data, g.mag, ric.data, ric.mag)
    v2, m2 = einsum_mag("bd,ac->abcd", g.data, g.mag, ric.data, ric.mag)
    corr = Tensor.covariant((v1 - v2) / (n - 1), (m1 + m2) / (n - 1))
    p4 = r4 - corr
    return p4, raise_last(p4, frame)


def raise_last(t4: Tensor, frame: MetricFrame) -> Tensor:
    data, mag = einsum_mag("xyzd,wd->wxyz", t4.data, t4.mag, frame.g_inv.data, frame.g_inv.mag)
    return Tensor(data, (UP, DOWN, DOWN, DOWN), mag)


def covariant_derivative(t: np.ndarray, dt: np.ndarray, gamma: np.ndarray,
                         tm: np.ndarray | None = None, dtm: np.ndarray | None = None,
                         gm: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """nabla_e T_{a1..ak} with the derivative slot appended last.

    ``dt[..., e]`` is the coordinate partial of the covariant tensor ``t``;
    the optional ``*m`` arrays are term magnitudes.  Returns values and magnitudes.
    """
    tm = np.abs(t) if tm is None else tm
    dtm = np.abs(dt) if dtm is None else dtm
    gm = np.abs(gamma) if gm is None else gm
    k = t.ndim
    out = dt.copy()
    mag = dtm.copy()
    idx = "abcdfgh"[:k]
    for j in range(k):
        src = idx[:j] + "z" + idx[j + 1:]
        v, m = einsum_mag(f"ze{idx[j]},{src}->{idx}e", gamma, gm, t, tm)
        out -= v
        mag += m
    return out, mag


@dataclass(frozen=True, eq=False)
class CurvatureBundle:
    """All curvature tensors at one point; derived tensors are computed on demand."""

    frame: MetricFrame
    gamma: np.ndarray
    dgamma: np.ndarray
    riemann_jet: ej.Jet
    R4: Tensor
    magnitudes: tuple[ej.Jet, ej.Jet, ej.Jet] | None = None

    @property
    def dim(self) -> int:
        return self.frame.dim

    @property
    def g(self) -> Tensor:
        return self.frame.g

    @property
    def g_inv(self) -> Tensor:
        return self.frame.g_inv

    @cached_property
    def Ric(self) -> Tensor:
        return ricci(self.frame, self.R4)

    @cached_property
    def kappa(self) -> Tensor:
        return scalar_curvature(self.frame, self.Ric)

    @cached_property
    def Ric2(self) -> Tensor:
        return matrix_product(self.Ric, self.Ric, self.g_inv)

    @cached_property
    def Ric3(self) -> Tensor:
        return matrix_product(self.Ric2, self.Ric, self.g_inv)

    @cached_property
    def Ric4(self) -> Tensor:
        return matrix_product(self.Ric3, self.Ric, self.g_inv)

    @cached_property
    def ricci_operator(self) -> Tensor:
        """Ricci operator S^a_b = g^{ac} S_cb (contravariant slot first)."""
        data, mag = einsum_mag("ac,cb->ab", self.g_inv.data, self.g_inv.mag, self.Ric.data, self.Ric.mag)
        return Tensor(data, (UP, DOWN), mag)

    @cached_property
    def gg(self) -> Tensor:
        return kulkarni_nomizu(self.g, self.g)

    @cached_property
    def gS(self) -> Tensor:
        return kulkarni_nomizu(self.g, self.Ric)

    def _family(self, name: str) -> Tensor:
        return linear_family(self.R4, self.gg, self.gS, self.kappa, self.dim, name)

    @cached_property
    def C4(self) -> Tensor:
        return self._family("weyl")

    @cached_property
    def K4(self) -> Tensor:
        return self._family("conharmonic")

    @cached_property
    def W4(self) -> Tensor:
        return self._family("concircular")

    @cached_property
    def G4(self) -> Tensor:
        return self._family("gaussian")

    @cached_property
    def _projective(self) -> tuple[Tensor, Tensor]:
        return projective(self.frame, self.R4, self.Ric)

    @property
    def P4(self) -> Tensor:
        return self._projective[0]

    @property
    def P13(self) -> Tensor:
        return self._projective[1]

    @cached_property
    def R13(self) -> Tensor:
        """Curvature (1,3) tensor, g(R(X,Y)Z, W) = R(X,Y,Z,W), upper index first."""
        return raise_last(self.R4, self.frame)

    def _mags(self) -> tuple[ej.Jet, ej.Jet, ej.Jet]:
        if self.magnitudes is None:
            return magnitude_jets(self.frame)
        return self.magnitudes

    @cached_property
    def dR(self) -> Tensor:
        """nabla R as a (0,5) tensor, derivative slot last."""
        _, gam_abs, r_abs = self._mags()
        r = self.riemann_jet
        data, mag = covariant_derivative(r.parts[0], r.parts[1], self.gamma,
                                         self.R4.mag, r_abs.parts[1], gam_abs.parts[0])
        return Tensor.covariant(data, mag)

    @cached_property
    def dS(self) -> Tensor:
        """nabla S as a (0,3) tensor, derivative slot last."""
        ginv_abs, gam_abs, r_abs = self._mags()
        ginv = ej.inverse(metric_jet(self.frame).truncate(1), self.frame.g_inv.data)
        sj = ej.einsum("cabd,cd->ab", self.riemann_jet, ginv)
        sj_abs = ej.einsum("cabd,cd->ab", r_abs, ginv_abs.truncate(1))
        s0 = 0.5 * (sj.parts[0] + sj.parts[0].T)
        ds = 0.5 * (sj.parts[1] + sj.parts[1].transpose(1, 0, 2))
        data, mag = covariant_derivative(s0, ds, self.gamma, self.Ric.mag,
                                         sj_abs.parts[1], gam_abs.parts[0])
        return Tensor.covariant(data, mag)


def curvature_bundle(frame: MetricFrame) -> CurvatureBundle:
    gam = christoffel_jet(frame)
    rj = riemann_jet(frame, gam)
    mags = magnitude_jets(frame)
    r4 = _riemann_tensor(rj, mags[2])
    return CurvatureBundle(frame, gam.parts[0], gam.parts[1], rj, r4, mags)


def curvature_family(b: CurvatureBundle) -> dict[str, Tensor]:
    return {"C": b.C4, "K": b.K4, "W": b.W4, "G": b.G4}


def covariant_derivatives(b: CurvatureBundle) -> tuple[Tensor, Tensor]:
    return b.dR, b.dS
