"""
Small arithmetic expression language for dynamics and costs.

Grammar (``^`` binds tighter than unary minus; all binary operators are
left-associative)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' operand)*
    operand := '-' operand | primary
    primary := NUMBER | VAR | FUNC '(' expr (',' expr)* ')' | '(' expr ')'

Variables are ``y1..yn`` (state) and ``u1..um`` (control). Functions are
``sin cos exp log abs min max``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from .errors import DifferentiationError, ExpressionError, ExpressionSyntaxError

FUNCTIONS: dict[str, int] = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "abs": 1, "min": 2, "max": 2}
NONSMOOTH = frozenset({"abs", "min", "max"})
_VAR_RE = re.compile(r"^[yu][1-9][0-9]*$")


@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self) -> str:
        text = repr(float(self.value))
        return f"({text})" if self.value < 0 else text


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Neg:
    arg: "Expression"

    def __str__(self) -> str:
        return f"(-{self.arg})"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expression"
    right: "Expression"

    def __str__(self) -> str:
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expression", ...]

    def __str__(self) -> str:
        return f"{self.func}({', '.join(str(a) for a in self.args)})"


Expression = Union[Num, Var, Neg, Bin, Call]


# --- tokenizer / parser -----------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionSyntaxError(f"unexpected character {text[start]!r}", start, text)
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: _Token | None = None) -> ExpressionSyntaxError:
        tok = tok or self.tok
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        return ExpressionSyntaxError(f"{message}: unexpected {what}", tok.pos, self.text)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            raise self.error(f"expected {text!r}")

    def parse(self) -> Expression:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.error("trailing input")
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Expression:
        if self.accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expression:
        node = self.primary()
        while self.accept("^"):
            node = Bin("^", node, self.operand())
        return node

    def operand(self) -> Expression:
        if self.accept("-"):
            return Neg(self.operand())
        return self.primary()

    def primary(self) -> Expression:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            if tok.text in FUNCTIONS:
                if not (self.tok.kind == "op" and self.tok.text == "("):
                    raise self.error(f"function {tok.text!r} must be called with parentheses")
                self.i += 1
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[tok.text]:
                    raise ExpressionSyntaxError(
                        f"{tok.text} takes {FUNCTIONS[tok.text]} argument(s), got {len(args)}", tok.pos, self.text
                    )
                return Call(tok.text, tuple(args))
            if _VAR_RE.match(tok.text):
                return Var(tok.text)
            raise ExpressionSyntaxError(f"unknown identifier {tok.text!r}", tok.pos, self.text)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        raise self.error("expected a number, variable, function call or '('")


def parse_expression(text: str) -> Expression:
    if not isinstance(text, str):
        raise ExpressionError(f"expression must be a string, got {type(text).__name__}")
    return _Parser(text).parse()


def to_string(expr: Expression) -> str:
    return str(expr)


def variables(expr: Expression) -> set[str]:
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Neg):
        return variables(expr.arg)
    if isinstance(expr, Bin):
        return variables(expr.left) | variables(expr.right)
    out: set[str] = set()
    for a in expr.args:
        out |= variables(a)
    return out


# --- evaluation ---------------------------------------------------------------

_NP_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}
_NP_OPS = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power}


def evaluate(expr: Expression, env: Mapping[str, float | np.ndarray]):
    """Evaluate ``expr`` with numpy semantics (division by zero gives inf/nan)."""
    with np.errstate(all="ignore"):
        return _eval(expr, env)


def _eval(expr: Expression, env):
    if isinstance(expr, Num):
        return np.float64(expr.value)
    if isinstance(expr, Var):
        try:
            return np.asarray(env[expr.name], dtype=float)
        except KeyError:
            raise ExpressionError(f"no value supplied for variable {expr.name!r}") from None
    if isinstance(expr, Neg):
        return np.negative(_eval(expr.arg, env))
    if isinstance(expr, Bin):
        return _NP_OPS[expr.op](_eval(expr.left, env), _eval(expr.right, env))
    return _NP_FUNCS[expr.func](*(_eval(a, env) for a in expr.args))


def _codegen(expr: Expression, columns: Mapping[str, str]) -> str:
    if isinstance(expr, Num):
        return repr(float(expr.value))
    if isinstance(expr, Var):
        return columns[expr.name]
    if isinstance(expr, Neg):
        return f"_neg({_codegen(expr.arg, columns)})"
    if isinstance(expr, Bin):
        name = {"+": "_add", "-": "_sub", "*": "_mul", "/": "_div", "^": "_pow"}[expr.op]
        return f"{name}({_codegen(expr.left, columns)}, {_codegen(expr.right, columns)})"
    args = ", ".join(_codegen(a, columns) for a in expr.args)
    return f"_{expr.func}({args})"


_CODEGEN_NS = {
    "_neg": np.negative,
    "_add": np.add,
    "_sub": np.subtract,
    "_mul": np.multiply,
    "_div": np.divide,
    "_pow": np.power,
    **{f"_{k}": v for k, v in _NP_FUNCS.items()},
}


def compile_expression(expr: Expression, n: int, m: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Build ``fn(Y, U) -> (P,)`` for state rows ``Y (P, n)`` and control rows ``U (P, m)``."""
    columns = {}
    for name in variables(expr):
        idx = int(name[1:])
        limit = n if name[0] == "y" else m
        if idx > limit:
            kind = "state" if name[0] == "y" else "control"
            raise ExpressionError(f"variable {name!r} exceeds the {kind} dimension {limit}")
        columns[name] = f"{'Y' if name[0] == 'y' else 'U'}[:, {idx - 1}]"
    body = _codegen(expr, columns)
    code = compile(f"lambda Y, U: {body}", f"<expr {to_string(expr)[:60]}>", "eval")
    raw = eval(code, dict(_CODEGEN_NS))

    def fn(Y: np.ndarray, U: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = raw(Y, U)
        if getattr(out, "shape", None) == (Y.shape[0],):
            return out
        return np.broadcast_to(out, (Y.shape[0],))

    fn.expression = expr  # type: ignore[attr-defined]
    return fn


# --- symbolic differentiation -----------------------------------------------

def _is_const(e: Expression, value: float | None = None) -> bool:
    return isinstance(e, Num) and (value is None or e.value == value)


def _add(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Num(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Bin("+", a, b)


def _sub(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Num(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Bin("-", a, b)


def _neg(a: Expression) -> Expression:
    if _is_const(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Num(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Num(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Bin("*", a, b)


def _div(a: Expression, b: Expression) -> Expression:
    if _is_const(a, 0.0):
        return Num(0.0)
    if _is_const(b, 1.0):
        return a
    return Bin("/", a, b)


def _pow(a: Expression, b: Expression) -> Expression:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return Num(1.0)
    return Bin("^", a, b)


def differentiate(expr: Expression, var: str) -> Expression:
    """Partial derivative of ``expr`` with respect to the variable ``var``."""
    if not _VAR_RE.match(var):
        raise ExpressionError(f"cannot differentiate with respect to {var!r}")
    return _d(expr, var)


def _d(e: Expression, var: str) -> Expression:
    if var not in variables(e):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0)
    if isinstance(e, Neg):
        return _neg(_d(e.arg, var))
    if isinstance(e, Bin):
        a, b = e.left, e.right
        if e.op == "+":
            return _add(_d(a, var), _d(b, var))
        if e.op == "-":
            return _sub(_d(a, var), _d(b, var))
        if e.op == "*":
            return _add(_mul(_d(a, var), b), _mul(a, _d(b, var)))
        if e.op == "/":
            return _div(_sub(_mul(_d(a, var), b), _mul(a, _d(b, var))), _pow(b, Num(2.0)))
        # power
        if var not in variables(b):
            return _mul(_mul(b, _pow(a, _sub(b, Num(1.0)))), _d(a, var))
        if var not in variables(a):
            return _mul(_mul(e, Call("log", (a,))), _d(b, var))
        return _mul(e, _add(_mul(_d(b, var), Call("log", (a,))), _div(_mul(b, _d(a, var)), a)))
    # Call
    if e.func in NONSMOOTH:
        raise DifferentiationError(f"{e.func} is not differentiable: cannot differentiate {to_string(e)!r} in {var}")
    (a,) = e.args
    da = _d(a, var)
    if e.func == "sin":
        return _mul(Call("cos", (a,)), da)
    if e.func == "cos":
        return _mul(_neg(Call("sin", (a,))), da)
    if e.func == "exp":
        return _mul(e, da)
    if e.func == "log":
        return _div(da, a)
    raise DifferentiationError(f"no derivative rule for {e.func}")  # pragma: no cover


def gradient(expr: Expression, n: int) -> list[Expression]:
    return [differentiate(expr, f"y{j}") for j in range(1, n + 1)]


def const(value: float) -> Num:
    if not math.isfinite(value):
        raise ExpressionError("literal must be finite")
    return Num(float(value))
