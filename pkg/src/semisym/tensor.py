"""Dense component tensors and the products used to state curvature identities.

Every :class:`Tensor` carries, besides its components, a componentwise
magnitude: the sum of absolute values of the terms each component was
accumulated from.  Rounding error in a component is bounded by a small multiple
of machine epsilon times its magnitude, so a tensor that is zero only up to
rounding (e.g. the Weyl tensor of a conformally flat metric) is recognised as
zero, while a genuinely small tensor built from small inputs is not.  Working
per component keeps the test insensitive to coordinate charts whose metric
components differ by orders of magnitude.

Index conventions follow the component formulas in the module functions: the
extra slots produced by :func:`tachibana` and :func:`derivation_action` are
appended after the slots of the acted-on tensor.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

UP, DOWN = "u", "d"


class TensorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Tensor:
    """Components in row-major multi-index order plus per-slot variance.

    ``mag`` holds, per component, the sum of absolute values of the terms the
    component was accumulated from (a running error bound up to a factor of
    machine epsilon).  It defaults to ``|data|`` for exact inputs.
    """

    data: np.ndarray
    variance: tuple[str, ...]
    mag: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        variance = tuple(self.variance)
        if data.ndim != len(variance):
            raise TensorError(f"{data.ndim}-slot data with variance {variance}")
        if any(v not in (UP, DOWN) for v in variance):
            raise TensorError(f"bad variance {variance}")
        if data.ndim and len(set(data.shape)) != 1:
            raise TensorError(f"non-square component array {data.shape}")
        mag = np.abs(data) if self.mag is None else np.maximum(np.asarray(self.mag, float), np.abs(data))
        if mag.shape != data.shape:
            raise TensorError("magnitude array does not match the data shape")
        data.setflags(write=False)
        mag.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "variance", variance)
        object.__setattr__(self, "mag", mag)

    @classmethod
    def covariant(cls, data, mag=None) -> "Tensor":
        data = np.asarray(data, dtype=float)
        return cls(data, (DOWN,) * data.ndim, mag)

    @property
    def rank(self) -> int:
        return len(self.variance)

    @property
    def dim(self) -> int:
        return self.data.shape[0] if self.data.ndim else 0

    @property
    def scale(self) -> float:
        """Frobenius norm of the term magnitudes."""
        return float(np.sqrt(np.sum(self.mag * self.mag)))

    def zero_ratio(self) -> float:
        """Largest |component| relative to its own term magnitude (0 for exact zeros)."""
        if not self.data.size:
            return 0.0
        a = np.abs(self.data)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.mag > 0, a / np.where(self.mag > 0, self.mag, 1.0), 0.0)
        return float(np.max(r))

    def __getitem__(self, idx):
        return self.data[idx]

    def _check_same(self, other: "Tensor"):
        if self.variance != other.variance or self.data.shape != other.data.shape:
            raise TensorError(f"shape mismatch {self.variance} vs {other.variance}")

    def __add__(self, other: "Tensor") -> "Tensor":
        self._check_same(other)
        return Tensor(self.data + other.data, self.variance, self.mag + other.mag)

    def __sub__(self, other: "Tensor") -> "Tensor":
        self._check_same(other)
        return Tensor(self.data - other.data, self.variance, self.mag + other.mag)

    def __neg__(self) -> "Tensor":
        return Tensor(-self.data, self.variance, self.mag)

    def __mul__(self, c: float) -> "Tensor":
        c = float(c)
        return Tensor(c * self.data, self.variance, abs(c) * self.mag)

    __rmul__ = __mul__

    def __truediv__(self, c: float) -> "Tensor":
        return self * (1.0 / float(c))

    def permute(self, perm: Sequence[int]) -> "Tensor":
        """Reorder slots: result slot i is input slot ``perm[i]``."""
        return Tensor(self.data.transpose(perm), tuple(self.variance[p] for p in perm),
                      self.mag.transpose(perm))

    def __repr__(self) -> str:
        return f"Tensor(dim={self.dim}, variance={''.join(self.variance)!r}, norm={frobenius_norm(self):.3e})"


def einsum_mag(spec: str, a: np.ndarray, am: np.ndarray, b: np.ndarray, bm: np.ndarray
          ) -> tuple[np.ndarray, np.ndarray]:
    """einsum of two arrays together with its first-order term magnitude."""
    val = np.einsum(spec, a, b)
    mag = np.einsum(spec, am, np.abs(b)) + np.einsum(spec, np.abs(a), bm)
    return val, mag


@dataclass(frozen=True, eq=False)
class MetricFrame:
    """Metric, inverse and raw coordinate partials at one chart point.

    ``dg[a, b, e]`` is the partial of ``g[a, b]`` along coordinate ``e``; the
    higher partials append further derivative axes.
    """

    g: Tensor
    g_inv: Tensor
    dg: np.ndarray
    d2g: np.ndarray
    d3g: np.ndarray

    @classmethod
    def from_arrays(cls, g, dg, d2g, d3g) -> "MetricFrame":
        g = np.asarray(g, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise TensorError("metric must be a square matrix")
        asym = np.max(np.abs(g - g.T)) if g.size else 0.0
        if asym > 1e-12:
            raise TensorError(f"metric not symmetric (max asymmetry {asym:.2e})")
        scale = np.max(np.abs(g)) ** g.shape[0]
        det = np.linalg.det(g)
        if not np.isfinite(det) or abs(det) <= 1e-12 * scale:
            raise TensorError(f"metric is singular (det = {det:.3e})")
        g_inv, g_inv_mag = invert_with_magnitude(g)
        resid = np.max(np.abs(g @ g_inv - np.eye(g.shape[0])))
        if resid > 1e-10:
            raise TensorError(f"metric inverse inaccurate (residual {resid:.2e})")
        return cls(Tensor.covariant(g), Tensor(g_inv, (UP, UP), g_inv_mag),
                   np.asarray(dg, float), np.asarray(d2g, float), np.asarray(d3g, float))

    @property
    def dim(self) -> int:
        return self.g.dim


def invert(g: np.ndarray) -> np.ndarray:
    """Inverse by Gauss-Jordan elimination with partial pivoting; no definiteness assumed."""
    return invert_with_magnitude(g)[0]


def invert_with_magnitude(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jordan inverse together with the term magnitudes of every entry.

    Entries that vanish exactly but come out as rounding noise (null blocks
    such as [[h, 1], [1, 0]]) keep the magnitude of the terms that cancelled.
    """
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    a = np.hstack([g, np.eye(n)])
    m = np.abs(a)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if a[piv, col] == 0.0:
            raise TensorError("metric is singular")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            m[[col, piv]] = m[[piv, col]]
        p = a[col, col]
        mp = m[col, col]
        row = a[col] / p
        m[col] = (m[col] + np.abs(row) * mp) / abs(p)
        a[col] = row
        for i in range(n):
            if i == col or a[i, col] == 0.0:
                continue
            f = a[i, col]
            mf = m[i, col]
            a[i] = a[i] - f * row
            m[i] = m[i] + abs(f) * m[col] + mf * np.abs(row)
        a[:, col] = 0.0
        a[col, col] = 1.0
    return a[:, n:].copy(), np.maximum(m[:, n:], np.abs(a[:, n:]))


def frobenius_norm(t: Tensor, frame: MetricFrame | None = None) -> float:
    """Root-sum-square of the raw coordinate components."""
    return float(np.sqrt(np.sum(t.data * t.data)))


def _letters(k: int, skip: str = "") -> str:
    pool = [c for c in string.ascii_lowercase if c not in skip]
    return "".join(pool[:k])


def _require_covariant2(t: Tensor, name: str):
    if t.variance != (DOWN, DOWN):
        raise TensorError(f"{name} must be a (0,2) tensor, got variance {t.variance}")


def kulkarni_nomizu(e: Tensor, d: Tensor) -> Tensor:
    """(E wedge D)_abcd = E_ad D_bc + E_bc D_ad - E_ac D_bd - E_bd D_ac."""
    _require_covariant2(e, "E")
    _require_covariant2(d, "D")
    if e.dim != d.dim:
        raise TensorError("dimension mismatch")
    out = np.zeros((e.dim,) * 4)
    mag = np.zeros_like(out)
    for spec, sign in (("ad,bc->abcd", 1), ("bc,ad->abcd", 1), ("ac,bd->abcd", -1), ("bd,ac->abcd", -1)):
        v, m = einsum_mag(spec, e.data, e.mag, d.data, d.mag)
        out += sign * v
        mag += m
    return Tensor.covariant(out, mag)


def tachibana(n_t: Tensor, u: Tensor) -> Tensor:
    """Tachibana tensor Q(N, U) = -(X wedge_N Y) . U, trailing slots (a, b).

    Component form: sum over slots j of U of N_{a i_j} U_{..b..} - N_{b i_j} U_{..a..},
    where (X wedge_N Y)Z = N(Y, Z) X - N(X, Z) Y acts as a derivation.
    """
    _require_covariant2(n_t, "N")
    k = u.rank
    if k < 1 or any(v != DOWN for v in u.variance):
        raise TensorError("U must be a (0,k) tensor with k >= 1")
    if n_t.dim != u.dim:
        raise TensorError("dimension mismatch")
    idx = _letters(k + 2)
    ii, a, b = idx[:k], idx[k], idx[k + 1]
    out = np.zeros((u.dim,) * (k + 2))
    mag = np.zeros_like(out)
    for j in range(k):
        ua = ii[:j] + a + ii[j + 1:]
        ub = ii[:j] + b + ii[j + 1:]
        v1, m1 = einsum_mag(f"{a}{ii[j]},{ub}->{ii}{a}{b}", n_t.data, n_t.mag, u.data, u.mag)
        v2, m2 = einsum_mag(f"{b}{ii[j]},{ua}->{ii}{a}{b}", n_t.data, n_t.mag, u.data, u.mag)
        out += v1 - v2
        mag += m1 + m2
    return Tensor.covariant(out, mag)


def derivation_action(l4: Tensor, g_inv: Tensor, u: Tensor) -> Tensor:
    """L.U: the curvature operator of L acting on U as a derivation, (a, b) appended.

    Covariant slots contribute -g^{ab} L_{ab i_j alpha} U_{..beta..}; a leading
    contravariant slot contributes +g^{e alpha} L_{ab beta alpha} U^{beta}_{...}.
    Supported variances are (0,k) and (1,k) with the upper slot first.
    """
    if l4.variance != (DOWN,) * 4:
        raise TensorError("L must be a (0,4) tensor")
    if g_inv.variance != (UP, UP):
        raise TensorError("g_inv must be a (2,0) tensor")
    if not (l4.dim == g_inv.dim == u.dim):
        raise TensorError("dimension mismatch")
    k = u.rank
    if k < 1:
        raise TensorError("U must have at least one slot")
    upper = [i for i, v in enumerate(u.variance) if v == UP]
    if upper not in ([], [0]):
        raise TensorError(f"unsupported variance pattern {u.variance}")
    # M[a, b, i, beta] = L[a, b, i, alpha] g^{alpha beta}
    m, mm = einsum_mag("abiz,zy->abiy", l4.data, l4.mag, g_inv.data, g_inv.mag)
    idx = _letters(k + 3)
    ii, a, b, z = idx[:k], idx[k], idx[k + 1], idx[k + 2]
    out = np.zeros((u.dim,) * (k + 2))
    mag = np.zeros_like(out)
    for j in range(k):
        src = ii[:j] + z + ii[j + 1:]
        if j in upper:
            v, vm = einsum_mag(f"{a}{b}{z}{ii[j]},{src}->{ii}{a}{b}", m, mm, u.data, u.mag)
            out += v
        else:
            v, vm = einsum_mag(f"{a}{b}{ii[j]}{z},{src}->{ii}{a}{b}", m, mm, u.data, u.mag)
            out -= v
        mag += vm
    return Tensor(out, u.variance + (DOWN, DOWN), mag)


def contract(t: Tensor, slot_a: int, slot_b: int, metric: MetricFrame | None = None) -> Tensor:
    """Trace over two slots; like-variance slots are contracted through the metric."""
    r = t.rank
    if not (0 <= slot_a < r and 0 <= slot_b < r) or slot_a == slot_b:
        raise TensorError(f"bad contraction slots ({slot_a}, {slot_b}) for rank {r}")
    va, vb = t.variance[slot_a], t.variance[slot_b]
    idx = list(_letters(r, skip="z"))
    keep = [i for i in range(r) if i not in (slot_a, slot_b)]
    out_idx = "".join(idx[i] for i in keep)
    variance = tuple(t.variance[i] for i in keep)
    if va != vb:
        idx[slot_b] = idx[slot_a]
        spec = f"{''.join(idx)}->{out_idx}"
        return Tensor(np.einsum(spec, t.data), variance, np.einsum(spec, t.mag))
    if metric is None:
        raise TensorError("like-variance contraction needs a metric")
    mt = metric.g_inv if va == DOWN else metric.g
    idx[slot_b] = "z"
    data, mag = einsum_mag(f"{''.join(idx)},{idx[slot_a]}z->{out_idx}", t.data, t.mag, mt.data, mt.mag)
    return Tensor(data, variance, mag)


def raise_lower(t: Tensor, slot: int, to: str, frame: MetricFrame) -> Tensor:
    """Flip the variance of one slot using g or its inverse."""
    if not 0 <= slot < t.rank:
        raise TensorError(f"slot {slot} out of range for rank {t.rank}")
    if to not in (UP, DOWN):
        raise TensorError(f"bad target variance {to!r}")
    if t.variance[slot] == to:
        return t
    mt = frame.g_inv if to == UP else frame.g
    idx = _letters(t.rank, skip="z")
    src = idx[:slot] + "z" + idx[slot + 1:]
    data, mag = einsum_mag(f"{src},z{idx[slot]}->{idx}", t.data, t.mag, mt.data, mt.mag)
    variance = t.variance[:slot] + (to,) + t.variance[slot + 1:]
    return Tensor(data, variance, mag)


def outer(s: Tensor, t: Tensor) -> Tensor:
    data = np.multiply.outer(s.data, t.data)
    mag = np.multiply.outer(s.mag, np.abs(t.data)) + np.multiply.outer(np.abs(s.data), t.mag)
    return Tensor(data, s.variance + t.variance, mag)


def matrix_product(s: Tensor, t: Tensor, g_inv: Tensor) -> Tensor:
    """(S T)_ab = S_a alpha g^{alpha beta} T_beta b; used for powers of the Ricci tensor."""
    _require_covariant2(s, "S")
    _require_covariant2(t, "T")
    left, lm = einsum_mag("ax,xy->ay", s.data, s.mag, g_inv.data, g_inv.mag)
    data, mag = einsum_mag("ay,yb->ab", left, lm, t.data, t.mag)
    return Tensor.covariant(data, mag)
