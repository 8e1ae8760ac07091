"""Pointwise decision of curvature identities.

A condition names a *target* tensor built from the curvature bundle and an
optional *basis* of tensors it should be a combination of.  At every sample
point the target is first tested for being zero against the term magnitudes of
its ingredients; otherwise the coefficients are recovered by least squares
over all components.  Coefficients are per point: constancy across points is
reported, never assumed.

Tensor recipes are small expressions such as ``"R.C - C.R"`` or ``"Q(S,C)"``:

========  =====================================================
g, R, S   metric, Riemann (0,4), Ricci (0,2); ``kappa`` scalar curvature
C K W G   Weyl, conharmonic, concircular, Gaussian tensors
P         projective (0,4); ``Pop``/``Rop`` are the (1,3) forms
Sop       Ricci operator (1,1); ``S2``..``S4`` powers of Ricci
S0        traceless Ricci S - (kappa/n) g
X.Y       derivation action of X's curvature operator on Y
Q(N,U)    Tachibana tensor
========  =====================================================
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import exprjet as ej
from .curvature import CurvatureBundle
from .tensor import DOWN, Tensor, derivation_action, kulkarni_nomizu, outer, tachibana

TOL_ZERO = 1e-9
TOL_FIT = 1e-8
TOL_F_MATCH = 1e-6
ABS_FLOOR = 1e-9
COND_LIMIT = 1e12

HOLDS_CONSTANT = "holds-with-constant-f"
HOLDS_VARIABLE = "holds-with-variable-f"
HOLDS_TRIVIALLY = "holds-trivially"
FAILS = "fails"
VACUOUS = "vacuous"
VERDICTS = (HOLDS_CONSTANT, HOLDS_VARIABLE, HOLDS_TRIVIALLY, FAILS, VACUOUS)
HOLDS = (HOLDS_CONSTANT, HOLDS_VARIABLE, HOLDS_TRIVIALLY)


class ClassifyError(ValueError):
    pass


@dataclass(frozen=True)
class Tolerances:
    zero: float = TOL_ZERO
    fit: float = TOL_FIT
    f_match: float = TOL_F_MATCH

    def __post_init__(self):
        if min(self.zero, self.fit, self.f_match) <= 0:
            raise ClassifyError("tolerances must be positive")


DEFAULT_TOL = Tolerances()


# ---------------------------------------------------------------------------
# Tensor recipes
# ---------------------------------------------------------------------------

_BASE: dict[str, Callable[[CurvatureBundle], Tensor]] = {
    "g": lambda b: b.g,
    "kappa": lambda b: b.kappa,
    "R": lambda b: b.R4,
    "S": lambda b: b.Ric,
    "C": lambda b: b.C4,
    "K": lambda b: b.K4,
    "W": lambda b: b.W4,
    "G": lambda b: b.G4,
    "P": lambda b: b.P4,
    "S2": lambda b: b.Ric2,
    "S3": lambda b: b.Ric3,
    "S4": lambda b: b.Ric4,
    "Rop": lambda b: b.R13,
    "Pop": lambda b: b.P13,
    "Sop": lambda b: b.ricci_operator,
    "nablaR": lambda b: b.dR,
    "nablaS": lambda b: b.dS,
}

_ALIASES = {"·": ".", "𝓡": "Rop", "ℛ": "Rop", "𝒮": "Sop", "𝒫": "Pop", "∇R": "nablaR",
            "∇S": "nablaS", "−": "-"}


def _traceless_ricci(b: CurvatureBundle) -> Tensor:
    k = float(b.kappa.data)
    n = b.dim
    shift = Tensor(b.g.data * (k / n), b.g.variance,
                   (abs(k) * b.g.mag + float(b.kappa.mag) * np.abs(b.g.data)) / n)
    return b.Ric - shift


_BASE["S0"] = _traceless_ricci


def normalize_recipe(recipe: str) -> str:
    for k, v in _ALIASES.items():
        recipe = recipe.replace(k, v)
    recipe = re.sub(r"\b([A-Za-z0-9]+)dot([A-Za-z0-9]+)\b", r"\1.\2", recipe)
    return recipe.replace(" ", "")


_TERM = re.compile(r"([+-]?)(?:(\d+(?:\.\d*)?)\*)?(Q\((\w+),(\w+)\)|(\w+)\.(\w+)|(\w+))")


def _recipe_terms(recipe: str) -> list[tuple[float, str, tuple[str, ...]]]:
    text = normalize_recipe(recipe)
    terms = []
    pos = 0
    while pos < len(text):
        m = _TERM.match(text, pos)
        if m is None or (pos > 0 and not m.group(1)):
            raise ClassifyError(f"cannot parse tensor recipe {recipe!r} at {text[pos:]!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        coef = float(m.group(2)) if m.group(2) else 1.0
        if m.group(4):
            terms.append((sign * coef, "Q", (m.group(4), m.group(5))))
        elif m.group(6):
            terms.append((sign * coef, "dot", (m.group(6), m.group(7))))
        else:
            terms.append((sign * coef, "name", (m.group(8),)))
        pos = m.end()
    if not terms:
        raise ClassifyError(f"empty tensor recipe {recipe!r}")
    return terms


def _base(b: CurvatureBundle, name: str) -> Tensor:
    try:
        return _BASE[name](b)
    except KeyError:
        raise ClassifyError(f"unknown tensor name {name!r}") from None


def tensor_recipe(b: CurvatureBundle, recipe: str) -> Tensor:
    """Evaluate a recipe, memoised on the bundle."""
    cache = b.__dict__.setdefault("_recipes", {})
    key = normalize_recipe(recipe)
    if key in cache:
        return cache[key]
    out = None
    for coef, kind, args in _recipe_terms(key):
        if kind == "Q":
            t = tachibana(_base(b, args[0]), _base(b, args[1]))
        elif kind == "dot":
            t = derivation_action(_base(b, args[0]), b.g_inv, _base(b, args[1]))
        else:
            t = _base(b, args[0])
        t = t * coef if coef != 1.0 else t
        out = t if out is None else out + t
    cache[key] = out
    return out


# ---------------------------------------------------------------------------
# Primitive decisions
# ---------------------------------------------------------------------------


def check_zero(t: Tensor, tol: float = TOL_ZERO) -> tuple[bool, float]:
    """True when every component is negligible against its own term magnitude."""
    resid = t.zero_ratio()
    return resid < tol, resid


@dataclass(frozen=True)
class ComboFit:
    coefficients: tuple[float, ...]
    residual_rel: float
    degenerate_basis: bool


def solve_combo(t: Tensor, basis: Sequence[Tensor], zero_tol: float = TOL_ZERO) -> ComboFit:
    """Least squares ``t ~ sum c_i basis_i`` over all components.

    Columns are equilibrated before forming the normal equations; a Gram
    condition number above 1e12 (or a numerically zero basis tensor) switches
    to the minimum-norm SVD solution and flags the basis as degenerate.
    """
    if not basis:
        raise ClassifyError("basis must be nonempty")
    for bt in basis:
        if bt.data.shape != t.data.shape or bt.variance != t.variance:
            raise ClassifyError(f"shape mismatch {bt.variance} vs {t.variance}")
    y = t.data.ravel()
    cols = np.stack([bt.data.ravel() for bt in basis], axis=1)
    norms = np.linalg.norm(cols, axis=0)
    live = np.array([norms[i] > 0 and bt.zero_ratio() >= zero_tol for i, bt in enumerate(basis)])
    coeffs = np.zeros(len(basis))
    degenerate = not live.all()
    if live.any():
        a = cols[:, live] / norms[live]
        gram = a.T @ a
        cond = np.linalg.cond(gram)
        if np.isfinite(cond) and cond <= COND_LIMIT:
            sol = np.linalg.solve(gram, a.T @ y)
        else:
            degenerate = True
            sol = np.linalg.lstsq(a, y, rcond=None)[0]
        coeffs[live] = sol / norms[live]
    fit = cols @ coeffs
    denom = max(np.linalg.norm(y), np.linalg.norm(fit), ABS_FLOOR)
    resid = float(np.linalg.norm(y - fit) / denom)
    return ComboFit(tuple(float(c) for c in coeffs), resid, bool(degenerate))


def solve_pinned(t: Tensor, basis: Sequence[Tensor], pinned: Mapping[int, float]) -> ComboFit:
    """Least squares with some coefficients held fixed."""
    free = [i for i in range(len(basis)) if i not in pinned]
    rest = t
    for i, c in pinned.items():
        rest = rest - basis[i] * c
    coeffs = np.zeros(len(basis))
    for i, c in pinned.items():
        coeffs[i] = c
    degenerate = False
    if free:
        sub = solve_combo(rest, [basis[i] for i in free])
        degenerate = sub.degenerate_basis
        for i, c in zip(free, sub.coefficients):
            coeffs[i] = c
    y = t.data.ravel()
    fit = sum(basis[i].data.ravel() * coeffs[i] for i in range(len(basis)))
    denom = max(np.linalg.norm(y), np.linalg.norm(fit), ABS_FLOOR)
    resid = float(np.linalg.norm(y - fit) / denom)
    return ComboFit(tuple(float(c) for c in coeffs), resid, degenerate)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class PointRecord:
    point: tuple[float, ...]
    on_defining_set: bool
    coefficients: list[float]
    residual_rel: float
    holds: bool
    trivial: bool = False
    degenerate_basis: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "point": list(self.point),
            "on_defining_set": self.on_defining_set,
            "coefficients": list(self.coefficients),
            "residual_rel": self.residual_rel,
            "holds": self.holds,
            "trivial": self.trivial,
            "degenerate_basis": self.degenerate_basis,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "PointRecord":
        return cls(tuple(d["point"]), d["on_defining_set"], list(d["coefficients"]),
                   d["residual_rel"], d["holds"], d.get("trivial", False),
                   d.get("degenerate_basis", False))


@dataclass
class ConditionReport:
    condition: str
    records: list[PointRecord]
    verdict: str
    f_constancy: float
    detail: dict[str, Any] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.verdict in HOLDS

    def on_set(self) -> list[PointRecord]:
        return [r for r in self.records if r.on_defining_set]

    def coefficient_series(self, index: int = 0) -> list[tuple[tuple[float, ...], float]]:
        return [(r.point, r.coefficients[index]) for r in self.on_set()
                if not r.trivial and r.coefficients]

    def to_json(self) -> dict[str, Any]:
        return {
            "condition": self.condition,
            "verdict": self.verdict,
            "f_constancy": self.f_constancy,
            "records": [r.to_json() for r in self.records],
            "detail": self.detail,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "ConditionReport":
        return cls(d["condition"], [PointRecord.from_json(r) for r in d["records"]],
                   d["verdict"], d["f_constancy"], dict(d.get("detail", {})))


@dataclass(frozen=True)
class RoterReport:
    kind: str
    coefficients: tuple[float, ...]
    residual_rel: float
    degenerate_basis: bool


@dataclass(frozen=True)
class EinLevelReport:
    level: int
    coefficients: tuple[float, ...]
    residual_rel: float
    degenerate_basis: bool = False


@dataclass(frozen=True)
class QEReport:
    mode: str
    residual_rel: float
    supplied: dict[str, Any]
    rank_of_S_minus_pg: dict[float, int]


@dataclass(frozen=True)
class RecurrenceReport:
    target: str
    pi: tuple[float, ...]
    residual_rel: float
    vacuous: bool = False
    trivial: bool = False


# ---------------------------------------------------------------------------
# Algebraic classes
# ---------------------------------------------------------------------------

ROTER_BASES = {
    "RT": (("g", "g"), ("g", "S"), ("S", "S")),
    "GRT": (("g", "g"), ("g", "S"), ("g", "S2"), ("S", "S"), ("S", "S2"), ("S2", "S2")),
}


def roter_basis(b: CurvatureBundle, kind: str) -> list[Tensor]:
    try:
        pairs = ROTER_BASES[kind]
    except KeyError:
        raise ClassifyError(f"unknown Roter kind {kind!r}") from None
    return [kulkarni_nomizu(_base(b, x), _base(b, y)) for x, y in pairs]


def check_roter(b: CurvatureBundle, kind: str = "RT", pinned: Mapping[int, float] | None = None) -> RoterReport:
    """Fit R against the Kulkarni-Nomizu basis of Roter (3) or generalized Roter (6) type."""
    basis = roter_basis(b, kind)
    fit = solve_pinned(b.R4, basis, pinned) if pinned else solve_combo(b.R4, basis)
    return RoterReport(kind, fit.coefficients, fit.residual_rel, fit.degenerate_basis)


def check_ein_level(b: CurvatureBundle, k: int) -> EinLevelReport:
    """Fit S^k + c_1 S^(k-1) + ... + c_k g = 0; residual relative to |S^k|."""
    if k not in (1, 2, 3, 4):
        raise ClassifyError("Einstein level must be 1..4")
    powers = [b.g, b.Ric, b.Ric2, b.Ric3, b.Ric4]
    top = powers[k]
    basis = [powers[k - i] for i in range(1, k + 1)]
    fit = solve_combo(-top, basis)
    return EinLevelReport(k, fit.coefficients, fit.residual_rel, fit.degenerate_basis)


def _one_form(values: Sequence[float], n: int) -> Tensor:
    v = np.asarray(values, dtype=float)
    if v.shape != (n,):
        raise ClassifyError(f"one-form must have {n} components")
    return Tensor(v, (DOWN,))


def rank_probe(b: CurvatureBundle, rel: float = 1e-8) -> dict[float, int]:
    """Numerical rank of S - p g for every real eigenvalue p of the Ricci operator."""
    s = b.Ric.data
    eig = np.linalg.eigvals(b.ricci_operator.data)
    snorm = max(np.linalg.norm(s), ABS_FLOOR)
    out: dict[float, int] = {}
    for lam in eig:
        if abs(lam.imag) > 1e-9 * max(1.0, abs(lam)):
            continue
        p = float(lam.real)
        sv = np.linalg.svd(s - p * b.g.data, compute_uv=False)
        out[p] = int(np.sum(sv > rel * snorm))
    return out


def verify_qe(b: CurvatureBundle, candidate: Mapping[str, Any] | None) -> QEReport:
    """Residual of S - [p g + rho s(x)s + rhobar (s(x)d + d(x)s)] relative to |S|.

    ``candidate`` holds evaluated numbers: ``p``, ``rho``, ``sigma`` and
    optionally ``rhobar``, ``delta``.  Without a candidate only the rank probe runs.
    """
    ranks = rank_probe(b)
    if not candidate:
        return QEReport("rank-probe", math.nan, {}, ranks)
    n = b.dim
    try:
        p, rho = float(candidate["p"]), float(candidate["rho"])
        sigma = _one_form(candidate["sigma"], n)
    except (KeyError, TypeError) as exc:
        raise ClassifyError(f"malformed quasi-Einstein candidate: {exc}") from exc
    model = b.g * p + outer(sigma, sigma) * rho
    if "delta" in candidate:
        delta = _one_form(candidate["delta"], n)
        rhobar = float(candidate.get("rhobar", 1.0))
        model = model + (outer(sigma, delta) + outer(delta, sigma)) * rhobar
    diff = b.Ric.data - model.data
    resid = float(np.linalg.norm(diff) / max(np.linalg.norm(b.Ric.data), ABS_FLOOR))
    return QEReport("verify-decomposition", resid, dict(candidate), ranks)


def check_recurrence(b: CurvatureBundle, target: str = "nablaS", tol: float = TOL_ZERO) -> RecurrenceReport:
    """Least-squares one-form Pi with nabla T = T (x) Pi (derivative slot last)."""
    if target in ("nablaS", "S", "∇S"):
        base, deriv, name = b.Ric, b.dS, "nablaS"
    elif target in ("nablaR", "R", "∇R"):
        base, deriv, name = b.R4, b.dR, "nablaR"
    else:
        raise ClassifyError(f"unknown recurrence target {target!r}")
    n = b.dim
    zero, _ = check_zero(base, tol=tol)
    if zero:
        return RecurrenceReport(name, (0.0,) * n, 0.0, vacuous=True)
    dzero, _ = check_zero(deriv, tol=tol)
    if dzero:
        return RecurrenceReport(name, (0.0,) * n, 0.0, trivial=True)
    t = base.data.ravel()
    d = deriv.data.reshape(-1, n)
    pi = (t @ d) / (t @ t)
    model = np.multiply.outer(base.data, pi)
    denom = max(np.linalg.norm(deriv.data), np.linalg.norm(model), ABS_FLOOR)
    resid = float(np.linalg.norm(deriv.data - model) / denom)
    return RecurrenceReport(name, tuple(float(x) for x in pi), resid)


# ---------------------------------------------------------------------------
# Condition registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    kind: str  # zero | combo | ein | roter | qe | gqe | recurrence
    target: str = ""
    basis: tuple[str, ...] = ()
    defining_set: tuple[str, ...] = ()
    extra_targets: tuple[str, ...] = ()
    level: int = 0
    description: str = ""


def _zero(name, target, desc, extra=()):
    return ConditionSpec(name, "zero", target, extra_targets=tuple(extra), description=desc)


def _combo(name, target, basis, desc, defining=None):
    basis = tuple(basis)
    return ConditionSpec(name, "combo", target, basis,
                         tuple(defining) if defining else (basis[0],), description=desc)


_SPECS = [
    _zero("flat", "R", "R = 0"),
    _zero("ricci_flat", "S", "S = 0"),
    _zero("conf_flat", "C", "C = 0"),
    _zero("const_curv", "W", "R = k (g wedge g)"),
    _zero("einstein", "S0", "S = (kappa/n) g"),
    ConditionSpec("ein2", "ein", level=2, description="S^2 + l1 S + l2 g = 0"),
    ConditionSpec("ein3", "ein", level=3, description="S^3 + r1 S^2 + r2 S + r3 g = 0"),
    ConditionSpec("ein4", "ein", level=4, description="S^4 + ... + c4 g = 0"),
    ConditionSpec("roter", "roter", "RT", description="R = m1 g^g + m2 g^S + m3 S^S"),
    ConditionSpec("grt", "roter", "GRT", description="R in span of KN products of g, S, S^2"),
    ConditionSpec("qe_verify", "qe", description="S = p g + rho s(x)s"),
    ConditionSpec("gqe_verify", "gqe", description="S = p g + rho s(x)s + rhobar (s(x)d + d(x)s)"),
    _zero("semisym", "R.R", "R.R = 0"),
    _zero("ricci_semisym", "R.S", "R.S = 0"),
    _zero("weyl_semisym", "R.C", "R.C = 0"),
    _zero("projective_semisym", "R.P", "R.P = 0"),
    _combo("pseudosym", "R.R", ["Q(g,R)"], "R.R = f Q(g,R) on U_R", ["W"]),
    _combo("ricci_pseudo", "R.S", ["Q(g,S)"], "R.S = f Q(g,S) on U_S", ["S0"]),
    _combo("weyl_pseudo", "R.C", ["Q(g,C)"], "R.C = f Q(g,C) on U_C"),
    _combo("ricci_gen_pseudo", "R.R", ["Q(S,R)"], "R.R = f Q(S,R)"),
    _combo("ricci_gen_weyl_pseudo", "R.C", ["Q(S,C)"], "R.C = f Q(S,C)"),
    _zero("c_semisym", "C.R", "C.R = 0"),
    _zero("c_ricci_semisym", "C.S", "C.S = 0"),
    _zero("cc_semisym", "C.C", "C.C = 0"),
    _combo("c_pseudo", "C.R", ["Q(g,R)"], "C.R = f Q(g,R) on U_R", ["W"]),
    _combo("cc_pseudo", "C.C", ["Q(g,C)"], "C.C = f Q(g,C) on U_C"),
    _combo("c_ricci_gen", "C.R", ["Q(S,R)"], "C.R = f Q(S,R)"),
    _combo("cc_ricci_gen", "C.C", ["Q(S,C)"], "C.C = f Q(S,C)"),
    _combo("einstein_metric_1", "R.C-C.R", ["Q(g,R)"], "R.C - C.R = f Q(g,R)"),
    _combo("einstein_metric_2", "R.C-C.R", ["Q(g,C)"], "R.C - C.R = f Q(g,C)"),
    _combo("einstein_metric_3", "R.C-C.R", ["Q(S,R)"], "R.C - C.R = f Q(S,R)"),
    _combo("einstein_metric_4", "R.C-C.R", ["Q(S,C)"], "R.C - C.R = f Q(S,C)"),
    _combo("einstein_metric_gr_sr", "R.C-C.R", ["Q(g,R)", "Q(S,R)"],
           "R.C - C.R = f1 Q(g,R) + f2 Q(S,R)"),
    _combo("einstein_metric_gc_sc", "R.C-C.R", ["Q(g,C)", "Q(S,C)"],
           "R.C - C.R = f1 Q(g,C) + f2 Q(S,C)"),
    _combo("sum_mixed", "R.C+C.R", ["Q(g,C)", "Q(S,C)"], "R.C + C.R = f1 Q(g,C) + f2 Q(S,C)"),
    _combo("deficit", "R.R-Q(S,R)", ["Q(g,C)"], "R.R - Q(S,R) = f Q(g,C) on U_C"),
    _combo("kk_pseudo", "K.K", ["Q(g,K)"], "K.K = f Q(g,K)"),
    _combo("kc_pseudo", "K.C", ["Q(g,C)"], "K.C = f Q(g,C)"),
    _combo("ck_pseudo", "C.K", ["Q(g,K)"], "C.K = f Q(g,K)"),
    _combo("proj_pseudo", "R.P", ["Q(g,P)"], "R.P = f Q(g,P)"),
    _combo("pp_ricci_gen", "P.P", ["Q(S,P)"], "P.P = f Q(S,P)"),
    _combo("pr_pseudo", "P.R", ["Q(g,R)"], "P.R = f Q(g,R)"),
    _combo("pr_ricci_gen", "P.R", ["Q(S,R)"], "P.R = f Q(S,R)"),
    _combo("ps_pseudo", "P.S", ["Q(g,S)"], "P.S = f Q(g,S)", ["S0"]),
    _zero("pr_semisym", "P.R", "P.R = 0"),
    _zero("ps_semisym", "P.S", "P.S = 0"),
    _zero("psop_zero", "P.Sop", "P.Sop = 0 (Ricci operator)"),
    _zero("prop_zero", "P.Rop", "P.Rop = 0 ((1,3) curvature tensor)"),
    _zero("ps_zero", "P.S", "P.S = 0 and P.Sop = 0", ["P.Sop"]),
    _zero("nabla_R_zero", "nablaR", "nabla R = 0"),
    _zero("nabla_S_zero", "nablaS", "nabla S = 0"),
    ConditionSpec("ricci_recurrent", "recurrence", "nablaS", description="nabla S = Pi (x) S"),
    ConditionSpec("riemann_recurrent", "recurrence", "nablaR", description="nabla R = Pi (x) R"),
]

REGISTRY: dict[str, ConditionSpec] = {s.name: s for s in _SPECS}


def get_spec(name: str) -> ConditionSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ClassifyError(f"unknown condition {name!r}") from None


# ---------------------------------------------------------------------------
# Running conditions
# ---------------------------------------------------------------------------


def _spread(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    lo, hi = min(values), max(values)
    ref = max(abs(lo), abs(hi))
    if ref == 0:
        return 0.0
    return (hi - lo) / ref


def _aggregate(name: str, records: list[PointRecord], tol: Tolerances,
               with_coefficients: bool = True, detail: dict | None = None) -> ConditionReport:
    on = [r for r in records if r.on_defining_set]
    detail = detail or {}
    if not on:
        return ConditionReport(name, records, VACUOUS, 0.0, detail)
    if not all(r.holds for r in on):
        verdict = FAILS
    elif all(r.trivial for r in on):
        verdict = HOLDS_TRIVIALLY
    else:
        verdict = HOLDS_CONSTANT
    nontrivial = [r for r in on if not r.trivial and r.coefficients]
    spread = 0.0
    if with_coefficients and nontrivial:
        ncoef = len(nontrivial[0].coefficients)
        spread = max(_spread([r.coefficients[i] for r in nontrivial]) for i in range(ncoef))
    if verdict == HOLDS_CONSTANT and spread > tol.f_match:
        verdict = HOLDS_VARIABLE
    if verdict == HOLDS_CONSTANT and not with_coefficients:
        verdict = HOLDS_TRIVIALLY
    return ConditionReport(name, records, verdict, spread, detail)


def _zero_record(b: CurvatureBundle, spec: ConditionSpec, point, tol: Tolerances) -> PointRecord:
    worst = 0.0
    ok = True
    for recipe in (spec.target,) + spec.extra_targets:
        z, resid = check_zero(tensor_recipe(b, recipe), tol=tol.zero)
        ok &= z
        worst = max(worst, resid)
    return PointRecord(tuple(point), True, [], worst, ok, trivial=ok)


def _combo_record(b: CurvatureBundle, spec: ConditionSpec, point, tol: Tolerances) -> PointRecord:
    on = True
    for recipe in spec.defining_set:
        z, _ = check_zero(tensor_recipe(b, recipe), tol=tol.zero)
        if z:
            on = False
    target = tensor_recipe(b, spec.target)
    basis = [tensor_recipe(b, r) for r in spec.basis]
    tz, tres = check_zero(target, tol=tol.zero)
    if tz:
        return PointRecord(tuple(point), on, [0.0] * len(basis), tres, True, trivial=True)
    fit = solve_combo(target, basis, tol.zero)
    return PointRecord(tuple(point), on, list(fit.coefficients), fit.residual_rel,
                       fit.residual_rel < tol.fit, degenerate_basis=fit.degenerate_basis)


def _fit_record(point, coefficients, resid, degenerate, tol: Tolerances, trivial=False) -> PointRecord:
    return PointRecord(tuple(point), True, list(coefficients), resid, resid < tol.fit,
                       trivial=trivial, degenerate_basis=degenerate)


def evaluate_candidate(chart, coords, prefix: str) -> dict[str, Any] | None:
    """Evaluate a chart's quasi-Einstein candidate expressions at a point."""
    cand = getattr(chart, "candidates", {}).get(prefix) if chart is not None else None
    if not cand:
        return None
    out: dict[str, Any] = {}
    for key, val in cand.items():
        if isinstance(val, list):
            out[key] = [chart.evaluate(chart.parse(str(v)), coords) for v in val]
        else:
            out[key] = chart.evaluate(chart.parse(str(val)), coords)
    return out


def run_condition(spec: ConditionSpec, bundles: Sequence[CurvatureBundle],
                  points: Sequence[Sequence[float]] | None = None, tol: Tolerances = DEFAULT_TOL,
                  chart=None) -> ConditionReport:
    """Evaluate one condition at every point and aggregate a verdict."""
    if not bundles:
        raise ClassifyError("need at least one bundle")
    if points is None:
        points = [()] * len(bundles)
    records: list[PointRecord] = []
    detail: dict[str, Any] = {}
    with_coef = True
    for b, pt in zip(bundles, points):
        if spec.kind == "zero":
            records.append(_zero_record(b, spec, pt, tol))
            with_coef = False
        elif spec.kind == "combo":
            records.append(_combo_record(b, spec, pt, tol))
        elif spec.kind == "ein":
            rep = check_ein_level(b, spec.level)
            top = _base(b, "S0") if spec.level == 1 else [b.Ric, b.Ric2, b.Ric3, b.Ric4][spec.level - 1]
            scale_zero = check_zero(top, tol=tol.zero)[0]
            records.append(_fit_record(pt, rep.coefficients, rep.residual_rel,
                                       rep.degenerate_basis, tol, scale_zero))
        elif spec.kind == "roter":
            rz, _ = check_zero(b.R4, tol=tol.zero)
            if rz:
                records.append(_fit_record(pt, [0.0] * len(ROTER_BASES[spec.target]), 0.0,
                                           False, tol, trivial=True))
                continue
            rep = check_roter(b, spec.target)
            records.append(_fit_record(pt, rep.coefficients, rep.residual_rel,
                                       rep.degenerate_basis, tol))
        elif spec.kind in ("qe", "gqe"):
            cand = evaluate_candidate(chart, pt, spec.kind)
            rep = verify_qe(b, cand)
            if rep.mode == "verify-decomposition":
                coefs = [cand["p"], cand["rho"]] + ([cand.get("rhobar", 1.0)] if "delta" in cand else [])
                records.append(_fit_record(pt, coefs, rep.residual_rel, False, tol))
            else:
                limit = 1 if spec.kind == "qe" else 2
                best = min(rep.rank_of_S_minus_pg.items(), key=lambda kv: kv[1],
                           default=(math.nan, b.dim))
                ok = best[1] <= limit
                # rank 0 means Einstein data, where rho = 0 makes the class trivial
                records.append(PointRecord(tuple(pt), True, [best[0]], float(best[1]), ok,
                                           trivial=best[1] == 0))
            detail["mode"] = rep.mode
        elif spec.kind == "recurrence":
            rep = check_recurrence(b, spec.target, tol.zero)
            records.append(PointRecord(tuple(pt), not rep.vacuous, list(rep.pi), rep.residual_rel,
                                       rep.vacuous or rep.trivial or rep.residual_rel < tol.fit,
                                       trivial=rep.trivial))
        else:
            raise ClassifyError(f"unknown condition kind {spec.kind!r}")
    return _aggregate(spec.name, records, tol, with_coef, detail)


def run_registry(chart, points=None, names: Sequence[str] | None = None,
                 tol: Tolerances = DEFAULT_TOL, count: int | None = None, seed: int = 0
                 ) -> dict[str, ConditionReport]:
    """Run conditions (default: the whole registry) over a chart's sample points."""
    from .corpus import chart_points

    if points is None:
        points = chart_points(chart, count, seed)
    bundles = [chart.bundle(p) for p in points]
    names = list(names) if names else list(REGISTRY)
    out = {}
    for name in names:
        spec = get_spec(name)
        if spec.kind in ("zero", "combo") and chart.dim < 3 and any(
                t in spec.target + "".join(spec.basis) for t in "CK"):
            continue
        out[name] = run_condition(spec, bundles, points, tol, chart)
    return out


# ---------------------------------------------------------------------------
# Expectations and implication audit
# ---------------------------------------------------------------------------


def verdict_matches(expected: str, actual: str) -> bool:
    if expected == "holds":
        return actual in HOLDS
    if expected == "holds-or-vacuous":
        return actual in HOLDS or actual == VACUOUS
    if expected == "holds-nontrivially":
        return actual in (HOLDS_CONSTANT, HOLDS_VARIABLE)
    return expected == actual


@dataclass(frozen=True)
class ExpectationResult:
    condition: str
    expected: str
    actual: str
    verdict_ok: bool
    f_ok: bool | None
    f_max_rel_err: float | None

    @property
    def ok(self) -> bool:
        return self.verdict_ok and self.f_ok is not False


def check_expectations(chart, reports: Mapping[str, ConditionReport],
                       tol: Tolerances = DEFAULT_TOL) -> list[ExpectationResult]:
    results = []
    for exp in chart.expected:
        rep = reports.get(exp.condition)
        if rep is None:
            results.append(ExpectationResult(exp.condition, exp.verdict, "missing", False, None, None))
            continue
        vok = verdict_matches(exp.verdict, rep.verdict)
        f_ok, worst = None, None
        if exp.f_expr is not None:
            series = rep.coefficient_series(exp.f_index)
            worst = 0.0
            for pt, c in series:
                ref = chart.evaluate(exp.f_expr, pt)
                worst = max(worst, abs(c - ref) / max(abs(ref), 1e-300))
            f_ok = bool(series) and worst <= tol.f_match
        results.append(ExpectationResult(exp.condition, exp.verdict, rep.verdict, vok, f_ok, worst))
    return results


@dataclass(frozen=True)
class ComponentResult:
    tensor: str
    index: tuple[int, ...]
    max_rel_err: float
    ok: bool


def check_components(chart, points=None, tol: float = TOL_F_MATCH) -> list[ComponentResult]:
    """Relative error of the chart's closed-form components at every point."""
    from .corpus import chart_points

    if points is None:
        points = chart_points(chart)
    bundles = [chart.bundle(p) for p in points]
    results = []
    for comp in chart.components:
        worst = 0.0
        idx = tuple(k - 1 for k in comp.index)
        for b, pt in zip(bundles, points):
            t = tensor_recipe(b, comp.tensor)
            value = float(t.data[idx])
            ref = chart.evaluate(comp.value_expr, pt)
            # a zero reference is judged against the component's term magnitude
            denom = abs(ref) if ref != 0 else max(float(t.mag[idx]), ABS_FLOOR)
            worst = max(worst, abs(value - ref) / denom)
        results.append(ComponentResult(comp.tensor, comp.index, worst, worst <= tol))
    return results


@dataclass(frozen=True)
class Finding:
    arrow: str
    chart: str
    ok: bool
    message: str = ""


def _ok(rep: ConditionReport | None) -> bool:
    return rep is None or rep.verdict in HOLDS or rep.verdict == VACUOUS


def _holds(rep: ConditionReport | None) -> bool:
    return rep is not None and rep.verdict in HOLDS


def _same_f(a: ConditionReport, b: ConditionReport, tol: float) -> tuple[bool, float]:
    """Compare coefficients at points where both reports recovered a nontrivial value."""
    bmap = {r.point: r for r in b.records}
    worst = 0.0
    for ra in a.records:
        rb = bmap.get(ra.point)
        if rb is None or not (ra.on_defining_set and rb.on_defining_set):
            continue
        if ra.trivial or rb.trivial or not ra.coefficients or not rb.coefficients:
            continue
        fa, fb = ra.coefficients[0], rb.coefficients[0]
        worst = max(worst, abs(fa - fb) / max(abs(fa), abs(fb), 1e-300))
    return worst <= tol, worst


IMPLICATIONS: list[tuple[str, tuple[str, ...]]] = [
    ("flat", ("ricci_flat", "conf_flat", "const_curv", "semisym", "ricci_semisym",
              "weyl_semisym", "projective_semisym", "c_semisym", "c_ricci_semisym",
              "cc_semisym", "nabla_R_zero", "einstein")),
    ("ricci_flat", ("einstein", "ricci_semisym")),
    ("const_curv", ("einstein", "conf_flat", "semisym", "nabla_R_zero")),
    ("conf_flat", ("roter", "weyl_semisym", "c_semisym", "cc_semisym")),
    ("einstein", ("ein2", "einstein_metric_1", "einstein_metric_2", "einstein_metric_3",
                  "einstein_metric_4", "ricci_semisym")),
    ("roter", ("ein2", "grt")),
    ("ein2", ("ein3",)),
    ("ein3", ("ein4",)),
    ("grt", ("ein4",)),
    ("nabla_R_zero", ("semisym",)),
    ("semisym", ("ricci_semisym", "weyl_semisym", "projective_semisym", "pseudosym",
                 "ricci_gen_pseudo")),
    ("projective_semisym", ("semisym",)),
    ("ricci_semisym", ("ricci_pseudo",)),
    ("weyl_semisym", ("weyl_pseudo", "ricci_gen_weyl_pseudo")),
    ("pseudosym", ("ricci_pseudo", "weyl_pseudo", "proj_pseudo")),
    ("proj_pseudo", ("pseudosym",)),
    ("c_semisym", ("c_ricci_semisym", "cc_semisym", "c_pseudo", "c_ricci_gen")),
    ("cc_semisym", ("cc_pseudo", "cc_ricci_gen")),
    ("c_pseudo", ("cc_pseudo",)),
]

SAME_F = [("pseudosym", "ricci_pseudo"), ("pseudosym", "weyl_pseudo"),
          ("pseudosym", "proj_pseudo"), ("c_pseudo", "cc_pseudo")]


def _lorentzian_equivalence(reports: Mapping[str, ConditionReport], name: str) -> list[Finding]:
    """R.R = 0 iff R.C = 0, compared point by point where the Weyl tensor is nonzero."""
    needed = ("semisym", "weyl_semisym", "conf_flat")
    if any(n not in reports for n in needed):
        return []
    weyl = {r.point: r.holds for r in reports["conf_flat"].records}
    rc = {r.point: r.holds for r in reports["weyl_semisym"].records}
    bad = [r.point for r in reports["semisym"].records
           if r.point in rc and not weyl.get(r.point, True) and r.holds != rc[r.point]]
    return [Finding("semisym <=> weyl_semisym (4-dim Lorentzian, C != 0)", name, not bad,
                    f"disagree at {len(bad)} point(s)" if bad else "")]


def audit_implications(reports: Mapping[str, ConditionReport], chart=None,
                       tol: Tolerances = DEFAULT_TOL) -> list[Finding]:
    """Check the implication arrows between classes as consistency assertions."""
    missing = [n for n in ("flat", "semisym", "pseudosym", "ricci_pseudo") if n not in reports]
    if missing:
        raise ClassifyError(f"incomplete registry run: missing {missing}")
    name = getattr(chart, "name", "")
    findings: list[Finding] = []
    for premise, consequences in IMPLICATIONS:
        if not _holds(reports.get(premise)):
            continue
        for c in consequences:
            if c not in reports:
                continue
            ok = _ok(reports[c])
            findings.append(Finding(f"{premise} => {c}", name, ok,
                                    "" if ok else f"{c} is {reports[c].verdict}"))
    if _holds(reports.get("flat")):
        for n, rep in reports.items():
            if REGISTRY.get(n) and REGISTRY[n].kind == "zero" and n not in ("einstein",):
                findings.append(Finding(f"flat => {n}", name, rep.holds,
                                        "" if rep.holds else f"{n} is {rep.verdict}"))
    for a, b in SAME_F:
        ra, rb = reports.get(a), reports.get(b)
        if ra is None or rb is None or ra.verdict not in (HOLDS_CONSTANT, HOLDS_VARIABLE):
            continue
        ok, worst = _same_f(ra, rb, tol.f_match)
        findings.append(Finding(f"{a} => {b} (same f)", name, ok, f"max rel diff {worst:.2e}"))
    if _holds(reports.get("conf_flat")) and _holds(reports.get("ricci_pseudo")):
        ok = _ok(reports.get("pseudosym"))
        findings.append(Finding("conf_flat & ricci_pseudo => pseudosym", name, ok,
                                "" if ok else f"pseudosym is {reports['pseudosym'].verdict}"))
    if _holds(reports.get("einstein")) and _holds(reports.get("pseudosym")) and "deficit" in reports:
        ok = _ok(reports["deficit"])
        findings.append(Finding("einstein & pseudosym => deficit", name, ok))
    if chart is not None and chart.dim == 4 and chart.signature == "lorentzian":
        findings.extend(_lorentzian_equivalence(reports, name))
    return findings
