"""A small expression language for real scalar fields on the real chart.

Grammar (whitespace-insensitive)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right-associative, constant exponent
    atom    := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'
    VAR     := 'x' INDEX | 're(z' INDEX ')' | 'im(z' INDEX ')'
    FUNC    := exp | ln | sqrt | sin | cos | tan | tanh | abs

``re(zj)`` is ``x{2j-1}`` and ``im(zj)`` is ``x{2j}``.
"""

import math
import re
from dataclasses import dataclass

FUNCTIONS = ("exp", "ln", "sqrt", "sin", "cos", "tan", "tanh", "abs")


class ParseError(ValueError):
    def __init__(self, offset, expected, text):
        self.offset = offset
        self.expected = expected
        lo = max(0, offset - 10)
        self.excerpt = text[lo : offset + 10]
        super().__init__(f"at offset {offset}: expected {expected} near {self.excerpt!r}")


class EvalError(ArithmeticError):
    """Domain fault during evaluation (log of non-positive, division by zero, ...)."""


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # zero-based real chart index


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


# -- lexer / parser -------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    toks = []
    pos = 0
    while True:
        m = _TOKEN.match(text, pos)
        if m is None:
            rest = text[pos:]
            if rest.strip() == "":
                break
            off = pos + len(rest) - len(rest.lstrip())
            raise ParseError(off, "a number, name or operator", text)
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text, n):
        self.text = text
        self.n = n
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if val != value:
            raise ParseError(off, repr(value), self.text)

    def fail(self, expected):
        raise ParseError(self.peek()[2], expected, self.text)

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail("an operator or end of input")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Bin(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Bin(op, e, self.unary())
        return e

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            off = self.peek()[2]
            exponent = self.unary()
            if variables(exponent):
                raise ParseError(off, "a constant exponent", self.text)
            return Bin("^", base, exponent)
        return base

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return Call(val, e)
            if val in ("re", "im"):
                self.expect("(")
                k2, v2, o2 = self.take()
                if k2 != "name" or not v2.startswith("z") or not v2[1:].isdigit():
                    raise ParseError(o2, "a complex coordinate like z1", self.text)
                j = int(v2[1:])
                if not 1 <= j <= self.n:
                    raise ParseError(o2, f"z1..z{self.n}", self.text)
                self.expect(")")
                return Var(2 * (j - 1) + (0 if val == "re" else 1))
            if val.startswith("x") and val[1:].isdigit():
                j = int(val[1:])
                if not 1 <= j <= 2 * self.n:
                    raise ParseError(off, f"x1..x{2 * self.n}", self.text)
                return Var(j - 1)
            raise ParseError(off, "a known variable or function", self.text)
        raise ParseError(off, "a number, variable, function or '('", self.text)


def parse(text, n):
    """Parse ``text`` as a scalar field on the real chart of complex dimension ``n``."""
    return _Parser(text, n).parse()


def variables(e):
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg, Call)):
        return variables(e.arg)
    return variables(e.left) | variables(e.right)


# -- printing -------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(e):
    if isinstance(e, Bin):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Num) and e.value < 0:
        return 3
    return 5


def _num(v):
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_string(e):
    if isinstance(e, Num):
        return _num(e.value) if e.value >= 0 else f"-{_num(-e.value)}"
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.arg)})"
    if isinstance(e, Neg):
        s = to_string(e.arg)
        return f"-({s})" if _prec(e.arg) < 3 else f"-{s}"
    p = _PREC[e.op]
    ls, rs = to_string(e.left), to_string(e.right)
    if e.op == "^":
        if _prec(e.left) <= 4:
            ls = f"({ls})"
        if _prec(e.right) < 3:
            rs = f"({rs})"
        return f"{ls}^{rs}"
    if _prec(e.left) < p:
        ls = f"({ls})"
    if _prec(e.right) <= p:
        rs = f"({rs})"
    return f"{ls} {e.op} {rs}" if p == 1 else f"{ls}*{rs}" if e.op == "*" else f"{ls}/{rs}"


# -- evaluation -----------------------------------------------------------------


def _ln(v):
    if v <= 0:
        raise EvalError(f"ln of non-positive value {v}")
    return math.log(v)


def _sqrt(v):
    if v < 0:
        raise EvalError(f"sqrt of negative value {v}")
    return math.sqrt(v)


def _div(a, b):
    if b == 0:
        raise EvalError("division by zero")
    return a / b


def _pow(a, b):
    if a == 0 and b < 0:
        raise EvalError("zero to a negative power")
    if a < 0 and not float(b).is_integer():
        raise EvalError(f"negative base {a} with non-integer exponent {b}")
    try:
        return math.pow(a, b)
    except OverflowError as exc:
        raise EvalError(str(exc)) from None


def _exp(v):
    try:
        return math.exp(v)
    except OverflowError as exc:
        raise EvalError(str(exc)) from None


def _tan(v):
    if math.cos(v) == 0:
        raise EvalError("tan pole")
    return math.tan(v)


_FN = {
    "exp": _exp,
    "ln": _ln,
    "sqrt": _sqrt,
    "sin": math.sin,
    "cos": math.cos,
    "tan": _tan,
    "tanh": math.tanh,
    "abs": abs,
}


def evaluate(e, point):
    """Evaluate by walking the tree; domain faults raise :class:`EvalError`."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return float(point[e.index])
    if isinstance(e, Neg):
        return -evaluate(e.arg, point)
    if isinstance(e, Call):
        return _FN[e.fn](evaluate(e.arg, point))
    a, b = evaluate(e.left, point), evaluate(e.right, point)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return _div(a, b)
    return _pow(a, b)


def _source(e):
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return f"x[{e.index}]"
    if isinstance(e, Neg):
        return f"(-{_source(e.arg)})"
    if isinstance(e, Call):
        return f"_{e.fn}({_source(e.arg)})"
    a, b = _source(e.left), _source(e.right)
    if e.op == "/":
        return f"_div({a}, {b})"
    if e.op == "^":
        return f"_pow({a}, {b})"
    return f"({a} {e.op} {b})"


def compile_expr(e):
    """Compile to a Python callable ``f(x) -> float`` with the same fault semantics."""
    env = {f"_{k}": v for k, v in _FN.items()}
    env.update(_div=_div, _pow=_pow)
    code = compile(f"lambda x: {_source(e)}", "<expr>", "eval")
    fn = eval(code, env)  # noqa: S307 - source generated from a validated AST

    def f(x):
        try:
            return float(fn(x))
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise EvalError(str(exc)) from None

    return f


# -- differentiation --------------------------------------------------------------

ZERO, ONE = Num(0.0), Num(1.0)


def _is(e, v):
    return isinstance(e, Num) and e.value == v


def add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def div(a, b):
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    return Bin("/", a, b)


def power(a, c):
    if c == 0:
        return ONE
    if c == 1:
        return a
    return Bin("^", a, Num(float(c)))


def call(fn, a):
    return Call(fn, a)


def diff(e, j):
    """Exact derivative with respect to the zero-based real coordinate ``j``."""
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == j else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, j))
    if isinstance(e, Call):
        a = e.arg
        da = diff(a, j)
        if _is(da, 0):
            return ZERO
        if e.fn == "exp":
            return mul(e, da)
        if e.fn == "ln":
            return div(da, a)
        if e.fn == "sqrt":
            return div(da, mul(Num(2.0), e))
        if e.fn == "sin":
            return mul(call("cos", a), da)
        if e.fn == "cos":
            return neg(mul(call("sin", a), da))
        if e.fn == "tan":
            return div(da, power(call("cos", a), 2))
        if e.fn == "tanh":
            return mul(sub(ONE, power(e, 2)), da)
        if e.fn == "abs":
            return mul(div(a, e), da)
        raise AssertionError(e.fn)
    a, b = e.left, e.right
    if e.op == "+":
        return add(diff(a, j), diff(b, j))
    if e.op == "-":
        return sub(diff(a, j), diff(b, j))
    if e.op == "*":
        return add(mul(diff(a, j), b), mul(a, diff(b, j)))
    if e.op == "/":
        da, db = diff(a, j), diff(b, j)
        return sub(div(da, b), div(mul(a, db), power(b, 2)))
    c = evaluate(b, ())
    return mul(mul(Num(c), power(a, c - 1)), diff(a, j))
