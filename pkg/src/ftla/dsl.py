"""Textual vector-field definitions with forward-mode AD Jacobians.

A field is written as one infix expression per component, separated by
newlines or semicolons::

    -x1 ; -g*x2 + ((g-1)*x1 + g*x1^2)/(1+x1)^2

State variables are ``x1 .. xn``; any other identifier must be a bound
parameter.  ``^`` is right-associative and binds tighter than unary minus,
so ``-x1^2`` is ``-(x1^2)``.  Implicit multiplication is rejected.

Expressions are compiled once to a Python function.  The same function is
called with plain floats/arrays (field values) or with :class:`Dual`
arguments (one directional pass per coordinate for the Jacobian).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "FieldError",
    "DSLSyntaxError",
    "UnknownIdentifierError",
    "DimensionError",
    "EvaluationError",
    "Const",
    "Var",
    "Param",
    "Unary",
    "Binary",
    "Dual",
    "VectorField",
    "parse_expression",
    "parse_field",
    "load_field",
    "parse_field_file",
    "to_source",
    "eval_field",
    "eval_jacobian",
    "linear_field",
]


class FieldError(ValueError):
    """Base class for vector-field definition and evaluation errors."""


class DSLSyntaxError(FieldError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownIdentifierError(FieldError):
    def __init__(self, name: str, line: int = 0, column: int = 0):
        where = f" (line {line}, column {column})" if line else ""
        super().__init__(f"unknown identifier {name!r}{where}")
        self.name = name
        self.line = line
        self.column = column


class DimensionError(FieldError):
    pass


class EvaluationError(FieldError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# expression tree

UNARY_FUNCS = ("sin", "cos", "exp", "ln", "sqrt")
BINARY_OPS = ("+", "-", "*", "/", "^")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of UNARY_FUNCS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Const | Var | Param | Unary | Binary


def variables(expr: Expr) -> set[int]:
    if isinstance(expr, Var):
        return {expr.index}
    if isinstance(expr, Unary):
        return variables(expr.arg)
    if isinstance(expr, Binary):
        return variables(expr.left) | variables(expr.right)
    return set()


def parameters(expr: Expr) -> set[str]:
    if isinstance(expr, Param):
        return {expr.name}
    if isinstance(expr, Unary):
        return parameters(expr.arg)
    if isinstance(expr, Binary):
        return parameters(expr.left) | parameters(expr.right)
    return set()


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)

_STATE_RE = re.compile(r"x([1-9][0-9]*)$")


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str, line: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", line, pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), line, pos + 1))
        pos = m.end()
    tokens.append(_Token("end", "", line, len(text) + 1))
    return tokens


class _Parser:
    """Recursive descent over one component expression."""

    def __init__(self, tokens: list[_Token], n: int | None, params: Mapping[str, float] | None):
        self.toks = tokens
        self.i = 0
        self.n = n
        self.params = params

    def peek(self) -> _Token:
        return self.toks[self.i]

    def take(self) -> _Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, tok: _Token, what: str = "unexpected token"):
        shown = tok.text if tok.kind != "end" else "end of expression"
        raise DSLSyntaxError(f"{what}: {shown!r}", tok.line, tok.col)

    def expect(self, text: str) -> _Token:
        tok = self.take()
        if tok.text != text:
            self.fail(tok, f"expected {text!r}")
        return tok

    def parse(self) -> Expr:
        if self.peek().kind == "end":
            self.fail(self.peek(), "empty expression")
        expr = self.sum()
        tok = self.peek()
        if tok.kind != "end":
            self.fail(tok)
        return expr

    def sum(self) -> Expr:
        left = self.product()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            left = Binary(op, left, self.product())
        return left

    def product(self) -> Expr:
        left = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            return Unary("neg", self.unary())
        if tok.kind == "op" and tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            if tok.text in UNARY_FUNCS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return Unary(tok.text, arg)
            if self.peek().text == "(":
                raise UnknownIdentifierError(tok.text, tok.line, tok.col)
            m = _STATE_RE.match(tok.text)
            if m:
                k = int(m.group(1))
                if self.n is not None and k > self.n:
                    raise DimensionError(
                        f"state variable {tok.text} exceeds dimension n={self.n} "
                        f"(line {tok.line}, column {tok.col})"
                    )
                return Var(k)
            if self.params is not None and tok.text not in self.params:
                raise UnknownIdentifierError(tok.text, tok.line, tok.col)
            return Param(tok.text)
        if tok.kind == "op" and tok.text == "(":
            inner = self.sum()
            self.expect(")")
            return inner
        self.fail(tok)


def parse_expression(
    text: str,
    n: int | None = None,
    params: Mapping[str, float] | None = None,
    line: int = 1,
) -> Expr:
    """Parse a single component expression."""
    return _Parser(_tokenize(text, line), n, params).parse()


def _split_components(source: str) -> list[tuple[str, int]]:
    pieces = []
    for lineno, raw in enumerate(source.splitlines() or [""], start=1):
        text = raw.split("#", 1)[0]
        for chunk in text.split(";"):
            if chunk.strip():
                pieces.append((chunk, lineno))
    return pieces


def _tokenize_piece(chunk: str, lineno: int, source_line: str) -> list[_Token]:
    # keep columns relative to the full source line
    offset = source_line.find(chunk)
    toks = _tokenize(chunk, lineno)
    for t in toks:
        t.col += max(offset, 0)
    return toks


# ---------------------------------------------------------------------------
# printing


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(expr: Expr) -> str:
    """Render an expression back to DSL text; re-parses to the same tree."""
    return _render(expr)


def _render(e: Expr) -> str:
    if isinstance(e, Const):
        s = repr(float(e.value))
        if s in ("inf", "nan", "-inf"):
            raise FieldError(f"cannot print non-finite constant {s}")
        return f"({s})" if s.startswith("-") else s
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"-{_wrap(e.arg, _PREC['neg'], right=True)}"
        return f"{e.op}({_render(e.arg)})"
    p = _PREC[e.op]
    if e.op == "^":
        # right-associative: left operand needs parens at equal precedence
        left = _wrap(e.left, p + 1)
        right = _wrap(e.right, p, right=True)
        return f"{left}^{right}"
    left = _wrap(e.left, p)
    right = _wrap(e.right, p + 1)
    return f"{left} {e.op} {right}"


def _prec_of(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    return 10


def _wrap(e: Expr, min_prec: int, right: bool = False) -> str:
    s = _render(e)
    prec = _prec_of(e)
    if prec < min_prec:
        return f"({s})"
    # a negation cannot start the right operand of ^ ambiguously, but
    # nested unary minus after a binary operator is fine in this grammar
    return s


# ---------------------------------------------------------------------------
# dual numbers


class Dual:
    """Value plus one directional derivative; value/tangent may be arrays."""

    __slots__ = ("v", "d")
    # make ndarray operands defer to the reflected Dual operators
    __array_ufunc__ = None

    def __init__(self, v, d=0.0):
        self.v = v
        self.d = d

    @staticmethod
    def lift(a) -> "Dual":
        return a if isinstance(a, Dual) else Dual(a, 0.0)

    def __add__(self, o):
        o = Dual.lift(o)
        return Dual(self.v + o.v, self.d + o.d)

    __radd__ = __add__

    def __sub__(self, o):
        o = Dual.lift(o)
        return Dual(self.v - o.v, self.d - o.d)

    def __rsub__(self, o):
        return Dual.lift(o) - self

    def __mul__(self, o):
        o = Dual.lift(o)
        return Dual(self.v * o.v, self.d * o.v + self.v * o.d)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = Dual.lift(o)
        q = self.v / o.v
        return Dual(q, (self.d - q * o.d) / o.v)

    def __rtruediv__(self, o):
        return Dual.lift(o) / self

    def __neg__(self):
        return Dual(-self.v, -self.d)

    def __pow__(self, o):
        if isinstance(o, Dual):
            val = self.v**o.v
            # d(a^b) = b a^(b-1) da + a^b ln(a) db ; the db term only when db != 0
            d = o.v * self.v ** (o.v - 1) * self.d
            if np.any(o.d != 0):
                d = d + val * np.log(self.v) * o.d
            return Dual(val, d)
        return Dual(self.v**o, o * self.v ** (o - 1) * self.d)

    def __rpow__(self, o):
        return Dual.lift(o) ** self

    def __repr__(self):
        return f"Dual({self.v!r}, {self.d!r})"


def _neg(a):
    return -a


def _sin(a):
    if isinstance(a, Dual):
        return Dual(np.sin(a.v), np.cos(a.v) * a.d)
    return np.sin(a)


def _cos(a):
    if isinstance(a, Dual):
        return Dual(np.cos(a.v), -np.sin(a.v) * a.d)
    return np.cos(a)


def _exp(a):
    if isinstance(a, Dual):
        e = np.exp(a.v)
        return Dual(e, e * a.d)
    return np.exp(a)


def _ln(a):
    if isinstance(a, Dual):
        return Dual(np.log(a.v), a.d / a.v)
    return np.log(a)


def _sqrt(a):
    if isinstance(a, Dual):
        s = np.sqrt(a.v)
        return Dual(s, 0.5 * a.d / s)
    return np.sqrt(a)


def _pow(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return Dual.lift(a) ** b
    return np.power(a, b)


_RUNTIME = {
    "_neg": _neg,
    "_sin": _sin,
    "_cos": _cos,
    "_exp": _exp,
    "_ln": _ln,
    "_sqrt": _sqrt,
    "_pow": _pow,
}


def _codegen(e: Expr, pnames: dict[str, str]) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Param):
        return pnames[e.name]
    if isinstance(e, Unary):
        return f"_{e.op}({_codegen(e.arg, pnames)})"
    a = _codegen(e.left, pnames)
    b = _codegen(e.right, pnames)
    if e.op == "^":
        if isinstance(e.right, Const) and float(e.right.value).is_integer():
            # integer powers stay real for negative bases
            return f"_pow({a}, {int(e.right.value)})"
        return f"_pow({a}, {b})"
    return f"({a} {e.op} {b})"


def _compile(components: Sequence[Expr], n: int, param_order: Sequence[str]) -> Callable:
    pnames = {name: f"p{i}" for i, name in enumerate(param_order)}
    args = ", ".join([f"x{i}" for i in range(1, n + 1)] + list(pnames.values()))
    body = ", ".join(_codegen(c, pnames) for c in components)
    src = f"def _field({args}):\n    return ({body},)\n"
    ns = dict(_RUNTIME)
    exec(compile(src, "<ftla-field>", "exec"), ns)
    return ns["_field"]


# ---------------------------------------------------------------------------
# vector field


@dataclass(frozen=True, eq=False)
class VectorField:
    """Autonomous vector field f: R^n -> R^n built from expressions.

    Parameters are bound at evaluation time; :meth:`with_params` returns a
    new field sharing the parsed expressions.  ``jacobian_fn`` may hold a
    hand-written Jacobian; by default the AD Jacobian is used.
    """

    n: int
    components: tuple
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = "field"
    jacobian_fn: Callable | None = None
    _fn: Callable | None = field(default=None, repr=False)
    _porder: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.n < 2:
            raise DimensionError(f"dimension n must be >= 2, got {self.n}")
        if len(self.components) != self.n:
            raise DimensionError(
                f"{len(self.components)} component expressions for dimension n={self.n}"
            )
        used = set()
        for c in self.components:
            bad = [k for k in variables(c) if k > self.n]
            if bad:
                raise DimensionError(f"x{max(bad)} exceeds dimension n={self.n}")
            used |= parameters(c)
        missing = sorted(used - set(self.params))
        if missing:
            raise UnknownIdentifierError(missing[0])
        porder = tuple(sorted(used))
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "_porder", porder)
        if self._fn is None:
            object.__setattr__(self, "_fn", _compile(self.components, self.n, porder))

    def __reduce__(self):
        # the compiled function is rebuilt on unpickling
        return (VectorField, (self.n, self.components, dict(self.params), self.name, self.jacobian_fn))

    @property
    def analytic_jacobian(self) -> bool:
        return self.jacobian_fn is not None

    def with_params(self, **overrides: float) -> "VectorField":
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise UnknownIdentifierError(sorted(unknown)[0])
        params = {**self.params, **{k: float(v) for k, v in overrides.items()}}
        return VectorField(self.n, self.components, params, self.name, self.jacobian_fn, self._fn)

    def _pvals(self):
        return [self.params[p] for p in self._porder]

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise DimensionError(f"state has length {x.shape[-1]}, field dimension is {self.n}")
        return x

    def __call__(self, x) -> np.ndarray:
        """Field value(s); ``x`` has shape ``(n,)`` or ``(..., n)``."""
        x = self._check_x(x)
        cols = [x[..., i] for i in range(self.n)]
        res = np.empty(x.shape)
        with np.errstate(all="ignore"):
            out = self._fn(*cols, *self._pvals())
            for i, c in enumerate(out):
                res[..., i] = c
        return res

    def jacobian(self, x) -> np.ndarray:
        """Jacobian(s) of shape ``(..., n, n)`` by forward-mode AD."""
        x = self._check_x(x)
        if self.jacobian_fn is not None:
            with np.errstate(all="ignore"):
                return np.asarray(self.jacobian_fn(x, self.params), dtype=float)
        return self.ad_jacobian(x)

    def ad_jacobian(self, x) -> np.ndarray:
        x = self._check_x(x)
        batch = x.shape[:-1]
        jac = np.empty(batch + (self.n, self.n))
        cols = [x[..., i] for i in range(self.n)]
        pv = self._pvals()
        with np.errstate(all="ignore"):
            for j in range(self.n):
                args = [Dual(c, 1.0) if i == j else c for i, c in enumerate(cols)]
                out = self._fn(*args, *pv)
                for i, comp in enumerate(out):
                    d = comp.d if isinstance(comp, Dual) else 0.0
                    jac[..., i, j] = d
        return jac

    def source(self) -> str:
        return "\n".join(to_source(c) for c in self.components)


def parse_field(
    source: str,
    n: int,
    params: Mapping[str, float] | None = None,
    name: str = "field",
) -> VectorField:
    """Parse ``n`` component expressions separated by newlines or ``;``."""
    params = dict(params or {})
    lines = source.splitlines() or [""]
    pieces = _split_components(source)
    if n < 2 or len(pieces) != n:
        raise DimensionError(f"{len(pieces)} component expressions for dimension n={n}")
    comps = []
    for chunk, lineno in pieces:
        toks = _tokenize_piece(chunk, lineno, lines[lineno - 1])
        comps.append(_Parser(toks, n, params).parse())
    return VectorField(n, tuple(comps), params, name)


def parse_field_file(text: str, name: str = "field") -> VectorField:
    """Parse the DSL file format.

    ``#`` starts a comment.  An optional ``params:`` block holds
    ``name = value`` lines; the ``field:`` block holds the components, one
    per line (or ``;``-separated).  The dimension is the component count.
    """
    params: dict[str, float] = {}
    section = None
    field_lines: list[str] = []
    field_start = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        low = stripped.lower()
        if low == "params:":
            section = "params"
            continue
        if low == "field:":
            section = "field"
            field_start = lineno
            continue
        if section == "field":
            field_lines.append(raw)
            continue
        if not stripped:
            continue
        if section != "params":
            raise DSLSyntaxError("expected 'params:' or 'field:' header", lineno, 1)
        if "=" not in stripped:
            raise DSLSyntaxError("expected 'name = value'", lineno, 1)
        key, val = (s.strip() for s in stripped.split("=", 1))
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", key) or _STATE_RE.match(key):
            raise DSLSyntaxError(f"invalid parameter name {key!r}", lineno, 1)
        try:
            params[key] = float(val)
        except ValueError:
            raise DSLSyntaxError(f"invalid parameter value {val!r}", lineno, raw.find(val) + 1) from None
    if field_start is None:
        raise DSLSyntaxError("missing 'field:' block", len(text.splitlines()) + 1, 1)
    # pad so reported line numbers refer to the file
    body = "\n" * field_start + "\n".join(field_lines)
    n = len(_split_components(body))
    return parse_field(body, n, params, name=name)


def load_field(path: str | Path) -> VectorField:
    path = Path(path)
    return parse_field_file(path.read_text(encoding="utf-8"), name=path.stem)


def eval_field(vf: VectorField, x) -> np.ndarray:
    """f(x), raising :class:`EvaluationError` on non-finite output."""
    out = vf(x)
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"non-finite field value at x={np.asarray(x).tolist()}")
    return out


def eval_jacobian(vf: VectorField, x) -> np.ndarray:
    """Df(x), raising :class:`EvaluationError` on non-finite entries."""
    jac = vf.jacobian(x)
    if not np.all(np.isfinite(jac)):
        raise EvaluationError(f"non-finite Jacobian entry at x={np.asarray(x).tolist()}")
    return jac


def linear_field(A, name: str = "linear") -> VectorField:
    """The linear field x' = A x with entries bound as parameters a{i}_{j}."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    params = {}
    comps = []
    for i in range(n):
        row = []
        for j in range(n):
            pname = f"a{i + 1}_{j + 1}"
            params[pname] = float(A[i, j])
            row.append(f"{pname}*x{j + 1}")
        comps.append(" + ".join(row))
    return parse_field("\n".join(comps), n, params, name=name)

