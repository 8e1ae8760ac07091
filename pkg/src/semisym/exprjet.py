"""Metric-component expressions and third-order Taylor jets.

Expressions are parsed by a small recursive-descent parser into an immutable
AST.  Evaluating an AST at a chart point yields a :class:`Jet`, which carries
the value and every partial derivative through third order with respect to
the chart coordinates.  Parameters are constants of the jet.

Jets store raw partials (not Taylor coefficients divided by factorials) as
dense symmetric arrays.  The same class is used for array-valued jets, which
the curvature pipeline relies on to differentiate Christoffel symbols and the
Riemann tensor without finite differences.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from itertools import combinations, combinations_with_replacement
from typing import Callable, Mapping, Sequence

import numpy as np

MAX_ORDER = 3

FUNCTIONS = ("sin", "cos", "tan", "sinh", "cosh", "tanh", "exp", "log", "sqrt", "abs")


class ExprError(ValueError):
    """Base class for expression and jet errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownSymbolError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown symbol {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset


class JetDomainError(ExprError):
    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in {unparse(subexpr)!r}")
        self.subexpr = subexpr


class JetOrderError(ExprError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Sym:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Num | Sym | Neg | BinOp | Call


def symbols_of(e: Expr) -> set[str]:
    if isinstance(e, Sym):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg, Call)):
        return symbols_of(e.arg)
    return symbols_of(e.left) | symbols_of(e.right)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    rb"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    rb"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    rb"|(?P<op>[-+*/^()]))"
)


def _tokenize(data: bytes) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(data):
        if data[pos:].strip() == b"":
            break
        m = _TOKEN.match(data, pos)
        if m is None:
            off = pos + (len(data[pos:]) - len(data[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {data[off:off + 1]!r}", off)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind).decode(), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(data)))
    return tokens


class _Parser:
    def __init__(self, source: str, symbols: Sequence[str]):
        self.tokens = _tokenize(source.encode("utf-8"))
        self.i = 0
        self.symbols = set(symbols)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, val, off = self.take()
        if val != text or kind != "op":
            raise ExprSyntaxError(f"expected {text!r}, found {val or 'end of input'!r}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.factor())
        return e

    def factor(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", off)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val in FUNCTIONS:
                raise ExprSyntaxError(f"function {val!r} used without argument", off)
            if val not in self.symbols:
                raise UnknownSymbolError(val, off)
            return Sym(val)
        if (kind, val) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", off)


def parse_expr(source: str, symbols: Sequence[str]) -> Expr:
    """Parse ``source`` into an AST, resolving identifiers against ``symbols``."""
    if not symbols:
        raise ValueError("symbol list must be nonempty")
    return _Parser(source, symbols).parse()


# precedence levels: sum 1, product 2, unary minus 3, power 4, atom 5
def _level(e: Expr) -> int:
    if isinstance(e, BinOp):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[e.op]
    if isinstance(e, Neg):
        return 3
    return 5


def unparse(e: Expr) -> str:
    """Render an AST with the minimal parentheses that re-parse to the same tree."""
    if isinstance(e, Num):
        text = repr(float(e.value))
        return text
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({unparse(e.arg)})"
    if isinstance(e, Neg):
        inner = unparse(e.arg)
        return "-" + (inner if _level(e.arg) >= 3 else f"({inner})")
    left, right = unparse(e.left), unparse(e.right)
    if e.op == "^":
        if _level(e.left) < 5:
            left = f"({left})"
        if _level(e.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    lvl = _level(e)
    if _level(e.left) < lvl:
        left = f"({left})"
    # right operand of a left-associative operator must bind strictly tighter
    if _level(e.right) <= lvl:
        right = f"({right})"
    return f"{left}{e.op}{right}"


# ---------------------------------------------------------------------------
# Jets
# ---------------------------------------------------------------------------

_DERIV_LETTERS = "XYZ"


def _split_spec(spec: str) -> tuple[str, str, str]:
    ins, out = spec.split("->")
    a, b = ins.split(",")
    return a, b, out


class Jet:
    """Truncated Taylor expansion through ``order`` of a (possibly array-valued) field.

    ``parts[k]`` has shape ``shape + (n,) * k`` and holds the raw k-th partials,
    symmetric in the trailing derivative axes.
    """

    __slots__ = ("parts", "n")

    def __init__(self, parts: Sequence[np.ndarray], n: int):
        self.parts = tuple(np.asarray(p, dtype=float) for p in parts)
        self.n = n
        for p in self.parts:
            p.setflags(write=False)

    # construction -----------------------------------------------------------
    @classmethod
    def constant(cls, value, n: int, order: int = MAX_ORDER) -> "Jet":
        v = np.asarray(value, dtype=float)
        return cls([v] + [np.zeros(v.shape + (n,) * k) for k in range(1, order + 1)], n)

    @classmethod
    def variable(cls, value: float, index: int, n: int, order: int = MAX_ORDER) -> "Jet":
        parts = [np.asarray(float(value))]
        if order >= 1:
            d1 = np.zeros(n)
            d1[index] = 1.0
            parts.append(d1)
        parts += [np.zeros((n,) * k) for k in range(2, order + 1)]
        return cls(parts, n)

    @classmethod
    def stack(cls, jets: Sequence["Jet"], shape: tuple[int, ...]) -> "Jet":
        n = jets[0].n
        order = min(j.order for j in jets)
        parts = []
        for k in range(order + 1):
            arr = np.stack([j.parts[k] for j in jets])
            parts.append(arr.reshape(shape + (n,) * k))
        return cls(parts, n)

    # basic properties -------------------------------------------------------
    @property
    def order(self) -> int:
        return len(self.parts) - 1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.parts[0].shape

    @property
    def value(self):
        v = self.parts[0]
        return float(v) if v.ndim == 0 else v

    def is_constant(self) -> bool:
        return all(not np.any(p) for p in self.parts[1:])

    def truncate(self, order: int) -> "Jet":
        return Jet(self.parts[: order + 1], self.n)

    def grad(self) -> "Jet":
        """Jet of the gradient; the derivative axis is appended to the value axes."""
        if self.order < 1:
            raise JetOrderError("cannot differentiate an order-0 jet")
        return Jet(self.parts[1:], self.n)

    def partial(self, multi_index: Sequence[int]) -> float:
        """Partial derivative for a multi-index of per-coordinate derivative counts."""
        return jet_partial(self, multi_index)

    def coefficients(self) -> dict[tuple[int, ...], float]:
        """Table of partials keyed by sorted coordinate-index tuples (scalar jets only)."""
        if self.shape != ():
            raise ValueError("coefficient table is defined for scalar jets")
        table = {}
        for k in range(self.order + 1):
            for idx in combinations_with_replacement(range(self.n), k):
                table[idx] = float(self.parts[k][idx])
        return table

    # structural ops ---------------------------------------------------------
    def transpose(self, perm: Sequence[int]) -> "Jet":
        r = len(self.shape)
        parts = []
        for k, p in enumerate(self.parts):
            parts.append(p.transpose(tuple(perm) + tuple(range(r, r + k))))
        return Jet(parts, self.n)

    def _map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Jet":
        return Jet([fn(p) for p in self.parts], self.n)

    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet([p[idx] for p in self.parts], self.n)

    # arithmetic -------------------------------------------------------------
    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.n, self.order)

    def __add__(self, other) -> "Jet":
        other = self._coerce(other)
        k = min(self.order, other.order)
        return Jet([a + b for a, b in zip(self.parts[: k + 1], other.parts)], self.n)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return self._map(np.negative)

    def __sub__(self, other) -> "Jet":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Jet":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            c = float(other)
            return self._map(lambda p: c * p)
        if self.shape != () or other.shape != ():
            raise ValueError("use einsum for array jets")
        return einsum(",->", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            return self * (1.0 / float(other))
        return self * reciprocal(other)

    def __rtruediv__(self, other) -> "Jet":
        return self._coerce(other) * reciprocal(self)

    def __repr__(self) -> str:
        return f"Jet(shape={self.shape}, n={self.n}, order={self.order}, value={self.parts[0]!r})"


def jet_partial(j: Jet, multi_index: Sequence[int]) -> float:
    alpha = tuple(int(a) for a in multi_index)
    if len(alpha) != j.n or any(a < 0 for a in alpha):
        raise ValueError(f"multi-index must have {j.n} non-negative entries")
    k = sum(alpha)
    if k > MAX_ORDER or k > j.order:
        raise JetOrderError(f"total order {k} exceeds jet order {min(j.order, MAX_ORDER)}")
    idx = tuple(i for i, a in enumerate(alpha) for _ in range(a))
    return float(j.parts[k][(Ellipsis,) + idx])


def einsum(spec: str, a: Jet, b: Jet) -> Jet:
    """Leibniz-rule product of two jets contracted over value axes by ``spec``.

    ``spec`` is a two-operand einsum string over value indices only; the
    derivative axes are handled here.  Letters X, Y, Z are reserved.
    """
    sa, sb, so = _split_spec(spec)
    order = min(a.order, b.order)
    parts = []
    for k in range(order + 1):
        letters = _DERIV_LETTERS[:k]
        total = None
        for m in range(k + 1):
            for subset in combinations(range(k), m):
                la = "".join(letters[i] for i in subset)
                lb = "".join(letters[i] for i in range(k) if i not in subset)
                term = np.einsum(f"{sa}{la},{sb}{lb}->{so}{letters}", a.parts[m], b.parts[k - m])
                total = term if total is None else total + term
        parts.append(total)
    return Jet(parts, a.n)


def compose(f: Jet, derivs: Sequence[np.ndarray]) -> Jet:
    """Elementwise chain rule: ``derivs[k]`` is the k-th derivative of the outer function at f."""
    order = f.order
    d0, d1, d2, d3 = [np.asarray(d, dtype=float) for d in (list(derivs) + [0.0] * 4)[:4]]
    parts = [np.asarray(d0, dtype=float)]
    f1 = f.parts[1] if order >= 1 else None
    if order >= 1:
        parts.append(d1[..., None] * f1)
    if order >= 2:
        f2 = f.parts[2]
        outer = np.einsum("...i,...j->...ij", f1, f1)
        parts.append(d2[..., None, None] * outer + d1[..., None, None] * f2)
    if order >= 3:
        f3 = f.parts[3]
        t1 = np.einsum("...i,...j,...k->...ijk", f1, f1, f1)
        t2 = np.einsum("...ij,...k->...ijk", f2, f1)
        t2 = t2 + t2.transpose(_cyc(t2.ndim, 1)) + t2.transpose(_cyc(t2.ndim, 2))
        parts.append(d3[..., None, None, None] * t1 + d2[..., None, None, None] * t2
                     + d1[..., None, None, None] * f3)
    return Jet(parts, f.n)


def _cyc(ndim: int, shift: int) -> tuple[int, ...]:
    base = list(range(ndim - 3))
    tail = [ndim - 3, ndim - 2, ndim - 1]
    tail = tail[shift:] + tail[:shift]
    return tuple(base + tail)


def reciprocal(f: Jet) -> Jet:
    x = f.parts[0]
    if np.any(x == 0):
        raise ZeroDivisionError("reciprocal of zero")
    return compose(f, [1 / x, -1 / x**2, 2 / x**3, -6 / x**4])


def inverse(g: Jet, y0: np.ndarray | None = None) -> Jet:
    """Matrix inverse of a square-matrix-valued jet.

    ``y0`` may supply an already computed inverse of the value; otherwise LU
    with partial pivoting is used at order 0.
    """
    y0 = np.linalg.inv(g.parts[0]) if y0 is None else np.asarray(y0, dtype=float)
    n = g.n
    parts = [y0]
    letters = _DERIV_LETTERS
    for k in range(1, g.order + 1):
        lk = letters[:k]
        acc = np.zeros(g.shape + (n,) * k)
        for m in range(1, k + 1):
            for subset in combinations(range(k), m):
                la = "".join(lk[i] for i in subset)
                lb = "".join(lk[i] for i in range(k) if i not in subset)
                acc = acc + np.einsum(f"ab{la},bc{lb}->ac{lk}", g.parts[m], parts[k - m])
        parts.append(-np.einsum(f"ab,bc{lk}->ac{lk}", y0, acc))
    return Jet(parts, n)


# ---------------------------------------------------------------------------
# Expression evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChartPoint:
    coords: tuple[float, ...]
    params: tuple[float, ...] = ()


def _ipow(base: Jet, k: int) -> Jet:
    result = None
    sq = base
    while k:
        if k & 1:
            result = sq if result is None else result * sq
        k >>= 1
        if k:
            sq = sq * sq
    return result if result is not None else Jet.constant(1.0, base.n, base.order)


def _function(name: str, f: Jet, node: Expr) -> Jet:
    x = float(f.parts[0])
    if name == "sin":
        s, c = math.sin(x), math.cos(x)
        return compose(f, [s, c, -s, -c])
    if name == "cos":
        s, c = math.sin(x), math.cos(x)
        return compose(f, [c, -s, -c, s])
    if name == "tan":
        c = math.cos(x)
        if c == 0.0:
            raise JetDomainError("tan at a pole", node)
        t = math.tan(x)
        sec2 = 1 + t * t
        return compose(f, [t, sec2, 2 * t * sec2, 2 * sec2 * (1 + 3 * t * t)])
    if name == "sinh":
        s, c = math.sinh(x), math.cosh(x)
        return compose(f, [s, c, s, c])
    if name == "cosh":
        s, c = math.sinh(x), math.cosh(x)
        return compose(f, [c, s, c, s])
    if name == "tanh":
        t = math.tanh(x)
        s2 = 1 - t * t
        return compose(f, [t, s2, -2 * t * s2, s2 * (6 * t * t - 2)])
    if name == "exp":
        e = math.exp(x)
        return compose(f, [e, e, e, e])
    if name == "log":
        if x <= 0:
            raise JetDomainError("log of non-positive value", node)
        return compose(f, [math.log(x), 1 / x, -1 / x**2, 2 / x**3])
    if name == "sqrt":
        if x < 0 or (x == 0 and not f.is_constant()):
            raise JetDomainError("sqrt of negative value", node)
        r = math.sqrt(x)
        if x == 0:
            return Jet.constant(0.0, f.n, f.order)
        return compose(f, [r, 0.5 / r, -0.25 / (r * x), 0.375 / (r * x * x)])
    if name == "abs":
        if x == 0 and not f.is_constant():
            raise JetDomainError("abs is not differentiable at zero", node)
        s = 1.0 if x >= 0 else -1.0
        return compose(f, [abs(x), s, 0.0, 0.0])
    raise JetDomainError(f"unknown function {name!r}", node)


def _power(base: Jet, expo: Jet, node: BinOp) -> Jet:
    b = float(base.parts[0])
    if expo.is_constant():
        y = float(expo.parts[0])
        if y == int(y) and abs(y) <= 64:
            k = int(y)
            if k >= 0:
                return _ipow(base, k)
            if b == 0:
                raise JetDomainError("division by zero", node)
            return reciprocal(_ipow(base, -k))
        if b <= 0:
            raise JetDomainError("fractional power of non-positive base", node)
        return compose(base, [b**y, y * b ** (y - 1), y * (y - 1) * b ** (y - 2),
                              y * (y - 1) * (y - 2) * b ** (y - 3)])
    if b <= 0:
        raise JetDomainError("fractional power of non-positive base", node)
    lg = compose(base, [math.log(b), 1 / b, -1 / b**2, 2 / b**3])
    prod = expo * lg
    e = math.exp(float(prod.parts[0]))
    return compose(prod, [e, e, e, e])


class Evaluator:
    """Evaluates ASTs as jets, given coordinate and parameter bindings."""

    def __init__(self, coords: Sequence[str], params: Sequence[str] = (), order: int = MAX_ORDER):
        self.coords = tuple(coords)
        self.params = tuple(params)
        self.order = order

    def bindings(self, point: ChartPoint) -> dict[str, Jet]:
        if len(point.coords) != len(self.coords) or len(point.params) != len(self.params):
            raise ValueError("chart point does not match declared coordinates/parameters")
        n = len(self.coords)
        env = {name: Jet.variable(v, i, n, self.order) for i, (name, v) in
               enumerate(zip(self.coords, point.coords))}
        env.update({name: Jet.constant(v, n, self.order) for name, v in
                    zip(self.params, point.params)})
        return env

    def __call__(self, e: Expr, point: ChartPoint) -> Jet:
        return evaluate(e, self.bindings(point), len(self.coords), self.order)


def evaluate(e: Expr, env: Mapping[str, Jet], n: int, order: int = MAX_ORDER) -> Jet:
    if isinstance(e, Num):
        return Jet.constant(e.value, n, order)
    if isinstance(e, Sym):
        try:
            return env[e.name]
        except KeyError:
            raise UnknownSymbolError(e.name, -1) from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env, n, order)
    if isinstance(e, Call):
        return _function(e.fn, evaluate(e.arg, env, n, order), e)
    left = evaluate(e.left, env, n, order)
    right = evaluate(e.right, env, n, order)
    if e.op == "+":
        return left + right
    if e.op == "-":
        return left - right
    if e.op == "*":
        return left * right
    if e.op == "/":
        if float(right.parts[0]) == 0.0:
            raise JetDomainError("division by zero", e)
        return left / right
    return _power(left, right, e)


def eval_jet(e: Expr, p: ChartPoint, coords: Sequence[str], params: Sequence[str] = ()) -> Jet:
    """Order-3 jet of ``e`` in the chart coordinates at ``p``."""
    return Evaluator(coords, params)(e, p)


def eval_scalar(e: Expr, values: Mapping[str, float]) -> float:
    """Plain float evaluation (order-0 jets), used for parameters and predicates."""
    env = {k: Jet.constant(v, 1, 0) for k, v in values.items()}
    return float(evaluate(e, env, 1, 0).parts[0])
