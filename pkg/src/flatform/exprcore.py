"""Small symbolic kernel: expression trees over chart variables.

Expressions are immutable trees built through simplifying constructors
(:func:`add`, :func:`mul`, :func:`div`, :func:`power`, :func:`func`).  Constants
are exact rationals; evaluation is double precision.  Simplification is
deliberately light: constant folding, 0/1 identities, flattening of sums and
products, and collection of structurally equal terms and factors.

Expressions can be evaluated pointwise (:func:`evaluate`, with domain errors
that name the offending sub-expression) or compiled into vectorised numpy
functions (:func:`lambdify`).
"""
from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt")


class ParseError(ValueError):
    """Raised for malformed input; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UndeclaredVariableError(ParseError):
    pass


class DomainError(ArithmeticError):
    """Evaluation hit a singular sub-expression (division by zero, ln of x <= 0, ...)."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{message} at {path}")
        self.path = path


# ---------------------------------------------------------------------------
# node types


class Expr:
    __slots__ = ("_hash",)
    precedence = 100

    def _key(self):
        raise NotImplementedError

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__,) + self._key())
            object.__setattr__(self, "_hash", h)
            return h

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._key() == other._key()

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    def __repr__(self):
        return f"{type(self).__name__}({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    # operator sugar; everything goes through the simplifying constructors
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    @property
    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        object.__setattr__(self, "value", Fraction(value))

    def _key(self):
        return (self.value,)


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    def _key(self):
        return (self.name,)


class Add(Expr):
    __slots__ = ("terms",)
    precedence = 10

    def __init__(self, terms: tuple):
        object.__setattr__(self, "terms", tuple(terms))

    def _key(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)
    precedence = 20

    def __init__(self, factors: tuple):
        object.__setattr__(self, "factors", tuple(factors))

    def _key(self):
        return self.factors


class Neg(Expr):
    __slots__ = ("arg",)
    precedence = 15

    def __init__(self, arg: Expr):
        object.__setattr__(self, "arg", arg)

    def _key(self):
        return (self.arg,)


class Div(Expr):
    __slots__ = ("num", "den")
    precedence = 20

    def __init__(self, num: Expr, den: Expr):
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def _key(self):
        return (self.num, self.den)


class Pow(Expr):
    __slots__ = ("base", "exp")
    precedence = 30

    def __init__(self, base: Expr, exp: int):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exp", int(exp))

    def _key(self):
        return (self.base, self.exp)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ValueError(f"unknown function {name!r}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "arg", arg)

    def _key(self):
        return (self.name, self.arg)


ZERO = Const(0)
ONE = Const(1)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return Const(x)
    if isinstance(x, float):
        return Const(Fraction(x).limit_denominator(10**12))
    if isinstance(x, str):
        raise TypeError("use parse() to turn text into an expression")
    raise TypeError(f"cannot convert {type(x).__name__} to an expression")


# ---------------------------------------------------------------------------
# simplifying constructors


def _split_coeff(e: Expr) -> tuple[Fraction, Expr | None]:
    """Write e as coeff * core, core None meaning the constant 1."""
    if isinstance(e, Const):
        return e.value, None
    if isinstance(e, Neg):
        c, core = _split_coeff(e.arg)
        return -c, core
    if isinstance(e, Mul) and isinstance(e.factors[0], Const):
        rest = e.factors[1:]
        return e.factors[0].value, rest[0] if len(rest) == 1 else Mul(rest)
    return Fraction(1), e


def _scale(c: Fraction, core: Expr | None) -> Expr:
    if core is None or c == 0:
        return Const(c)
    if c == 1:
        return core
    if c == -1:
        return Neg(core)
    if isinstance(core, Mul):
        return Mul((Const(c),) + core.factors)
    return Mul((Const(c), core))


def add(*terms) -> Expr:
    coeffs: dict = {}
    order: list = []
    const = Fraction(0)
    stack = [as_expr(t) for t in terms]
    flat: list[Expr] = []
    for t in stack:
        if isinstance(t, Add):
            flat.extend(t.terms)
        else:
            flat.append(t)
    for t in flat:
        c, core = _split_coeff(t)
        if core is None:
            const += c
            continue
        if core in coeffs:
            coeffs[core] += c
        else:
            coeffs[core] = c
            order.append(core)
    out = [_scale(coeffs[k], k) for k in order if coeffs[k] != 0]
    if const != 0:
        out.append(Const(const))
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    return Add(tuple(out))


def neg(e) -> Expr:
    c, core = _split_coeff(as_expr(e))
    return _scale(-c, core)


def _base_exp(e: Expr) -> tuple[Expr, int]:
    if isinstance(e, Pow):
        return e.base, e.exp
    return e, 1


def mul(*factors) -> Expr:
    coeff = Fraction(1)
    exps: dict = {}
    order: list = []
    todo = [as_expr(f) for f in factors]
    while todo:
        f = todo.pop(0)
        if isinstance(f, Const):
            coeff *= f.value
        elif isinstance(f, Neg):
            coeff = -coeff
            todo.insert(0, f.arg)
        elif isinstance(f, Mul):
            todo[0:0] = list(f.factors)
        else:
            b, k = _base_exp(f)
            if b in exps:
                exps[b] += k
            else:
                exps[b] = k
                order.append(b)
        if coeff == 0:
            return ZERO
    core = [_pow_raw(b, exps[b]) for b in order if exps[b] != 0]
    if not core:
        return Const(coeff)
    c = core[0] if len(core) == 1 else Mul(tuple(core))
    return _scale(coeff, c)


def _pow_raw(b: Expr, k: int) -> Expr:
    if k == 1:
        return b
    return Pow(b, k)


def power(base, k) -> Expr:
    base = as_expr(base)
    if isinstance(k, Const):
        k = k.value
    if isinstance(k, Fraction):
        if k.denominator != 1:
            raise ValueError("only integer exponents are supported; use sqrt()")
        k = k.numerator
    if not isinstance(k, int):
        raise ValueError("only integer exponents are supported; use sqrt()")
    if k == 0:
        return ONE
    if k == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0 and k < 0:
            raise ZeroDivisionError("0 raised to a negative power")
        return Const(base.value ** k)
    if isinstance(base, Pow):
        return power(base.base, base.exp * k)
    if isinstance(base, (Mul, Neg)):
        c, core = _split_coeff(base)
        if c != 1:
            return mul(Const(c ** k), power(core, k))
    return Pow(base, k)


def div(num, den) -> Expr:
    num, den = as_expr(num), as_expr(den)
    if isinstance(den, Const):
        if den.value == 0:
            raise ZeroDivisionError("division by the constant zero")
        return mul(Const(1 / den.value), num)
    if num.is_zero:
        return ZERO
    if num == den:
        return ONE
    if isinstance(num, Div):
        return div(num.num, mul(num.den, den))
    if isinstance(den, Div):
        return div(mul(num, den.den), den.num)
    cn, core_n = _split_coeff(num)
    cd, core_d = _split_coeff(den)
    c = cn / cd
    if core_n is None:
        core_n = ONE
    return _scale(c, Div(core_n, core_d))


def func(name: str, arg) -> Expr:
    arg = as_expr(arg)
    if isinstance(arg, Const):
        v = arg.value
        if name in ("sin",) and v == 0:
            return ZERO
        if name == "cos" and v == 0:
            return ONE
        if name == "exp" and v == 0:
            return ONE
        if name == "ln" and v == 1:
            return ZERO
        if name == "sqrt" and v >= 0:
            p, q = math.isqrt(v.numerator), math.isqrt(v.denominator)
            if p * p == v.numerator and q * q == v.denominator:
                return Const(Fraction(p, q))
    return Func(name, arg)


def sin(e):
    return func("sin", e)


def cos(e):
    return func("cos", e)


def exp(e):
    return func("exp", e)


def ln(e):
    return func("ln", e)


def sqrt(e):
    return func("sqrt", e)


def rebuild(e: Expr) -> Expr:
    """Re-run the simplifying constructors over a tree."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        return add(*[rebuild(t) for t in e.terms])
    if isinstance(e, Mul):
        return mul(*[rebuild(t) for t in e.factors])
    if isinstance(e, Neg):
        return neg(rebuild(e.arg))
    if isinstance(e, Div):
        return div(rebuild(e.num), rebuild(e.den))
    if isinstance(e, Pow):
        return power(rebuild(e.base), e.exp)
    if isinstance(e, Func):
        return func(e.name, rebuild(e.arg))
    raise TypeError(type(e))


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    memo: dict = {}

    def go(x):
        if x in memo:
            return memo[x]
        if isinstance(x, Var):
            r = mapping.get(x.name, x)
        elif isinstance(x, Const):
            r = x
        elif isinstance(x, Add):
            r = add(*[go(t) for t in x.terms])
        elif isinstance(x, Mul):
            r = mul(*[go(t) for t in x.factors])
        elif isinstance(x, Neg):
            r = neg(go(x.arg))
        elif isinstance(x, Div):
            r = div(go(x.num), go(x.den))
        elif isinstance(x, Pow):
            r = power(go(x.base), x.exp)
        else:
            r = func(x.name, go(x.arg))
        memo[x] = r
        return r

    return go(e)


def variables(e: Expr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, Var):
            out.add(x.name)
        elif isinstance(x, Add):
            stack.extend(x.terms)
        elif isinstance(x, Mul):
            stack.extend(x.factors)
        elif isinstance(x, (Neg, Func)):
            stack.append(x.arg)
        elif isinstance(x, Div):
            stack += [x.num, x.den]
        elif isinstance(x, Pow):
            stack.append(x.base)
    return out


# ---------------------------------------------------------------------------
# differentiation


def differentiate(e: Expr, var: str) -> Expr:
    """Exact derivative of ``e`` with respect to the variable ``var``."""
    memo: dict = {}

    def d(x: Expr) -> Expr:
        if x in memo:
            return memo[x]
        if isinstance(x, Const):
            r = ZERO
        elif isinstance(x, Var):
            r = ONE if x.name == var else ZERO
        elif isinstance(x, Add):
            r = add(*[d(t) for t in x.terms])
        elif isinstance(x, Neg):
            r = neg(d(x.arg))
        elif isinstance(x, Mul):
            parts = []
            fs = x.factors
            for i, f in enumerate(fs):
                df = d(f)
                if not df.is_zero:
                    parts.append(mul(*fs[:i], df, *fs[i + 1:]))
            r = add(*parts)
        elif isinstance(x, Div):
            dn, dd = d(x.num), d(x.den)
            if dd.is_zero:
                r = div(dn, x.den)
            else:
                r = div(add(mul(dn, x.den), neg(mul(x.num, dd))), power(x.den, 2))
        elif isinstance(x, Pow):
            db = d(x.base)
            r = ZERO if db.is_zero else mul(Const(x.exp), power(x.base, x.exp - 1), db)
        else:
            da = d(x.arg)
            if da.is_zero:
                r = ZERO
            elif x.name == "sin":
                r = mul(cos(x.arg), da)
            elif x.name == "cos":
                r = neg(mul(sin(x.arg), da))
            elif x.name == "exp":
                r = mul(x, da)
            elif x.name == "ln":
                r = div(da, x.arg)
            else:
                r = div(da, mul(Const(2), x))
        memo[x] = r
        return r

    return d(e)


def gradient(e: Expr, names: Sequence[str]) -> list[Expr]:
    return [differentiate(e, v) for v in names]


# ---------------------------------------------------------------------------
# printing


def _const_str(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    return f"{v.numerator}/{v.denominator}"


def to_string(e: Expr) -> str:
    return _fmt(e, 0)


def _wrap(s: str, cond: bool) -> str:
    return f"({s})" if cond else s


def _fmt(e: Expr, ctx: int) -> str:
    # ctx: precedence of the surrounding operator
    if isinstance(e, Const):
        s = _const_str(e.value)
        return _wrap(s, (e.value < 0 or e.value.denominator != 1) and ctx > 0)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        parts = [_fmt(e.terms[0], 10)]
        for t in e.terms[1:]:
            c, core = _split_coeff(t)
            if c < 0:
                parts.append(" - " + _fmt(_scale(-c, core), 11))
            else:
                parts.append(" + " + _fmt(t, 11))
        return _wrap("".join(parts), ctx > 10)
    if isinstance(e, Neg):
        return _wrap("-" + _fmt(e.arg, 20), ctx > 10)
    if isinstance(e, Mul):
        fs = list(e.factors)
        lead = ""
        if isinstance(fs[0], Const) and fs[0].value == -1:
            lead = "-"
            fs = fs[1:]
        body = "*".join(_fmt(f, 21) for f in fs)
        return _wrap(lead + body, ctx > (10 if lead else 20))
    if isinstance(e, Div):
        s = _fmt(e.num, 20) + "/" + _fmt(e.den, 21)
        return _wrap(s, ctx > 20)
    if isinstance(e, Pow):
        base = _fmt(e.base, 31)
        ex = str(e.exp) if e.exp >= 0 else f"({e.exp})"
        return _wrap(f"{base}^{ex}", ctx > 30)
    if isinstance(e, Func):
        return f"{e.name}({_fmt(e.arg, 0)})"
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str):
    pos = 0
    toks = []
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", len(text[:pos].encode()))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), len(text[:start].encode())))
        pos = m.end()
    toks.append(("end", "", len(text.encode())))
    return toks


class _Parser:
    def __init__(self, text: str, names: Iterable[str] | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.names = None if names is None else set(names)

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, op):
        t = self.take()
        if t[1] != op:
            raise ParseError(f"expected {op!r}, found {t[1] or 'end of input'!r}", t[2])
        return t

    def parse(self) -> Expr:
        e = self.expr()
        t = self.peek()
        if t[0] != "end":
            raise ParseError(f"unexpected {t[1]!r}", t[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            r = self.term()
            e = add(e, r) if op == "+" else add(e, neg(r))
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op, _, off = self.take()[1], None, self.toks[self.i - 1][2]
            r = self.unary()
            if op == "*":
                e = mul(e, r)
            else:
                if isinstance(r, Const) and r.value == 0:
                    raise ParseError("division by the constant zero", off)
                e = div(e, r)
        return e

    def unary(self):
        t = self.peek()
        if t[1] == "-":
            self.take()
            return neg(self.unary())
        if t[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        t = self.peek()
        if t[1] in ("^", "**"):
            self.take()
            ex = self.unary()
            if not isinstance(ex, Const) or ex.value.denominator != 1:
                raise ParseError("exponent must be an integer constant", t[2])
            try:
                return power(base, ex.value.numerator)
            except ZeroDivisionError as err:
                raise ParseError(str(err), t[2]) from None
        return base

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Const(Fraction(val))
        if kind == "name":
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", off)
                self.take()
                arg = self.expr()
                self.expect(")")
                return func(val, arg)
            if self.names is not None and val not in self.names:
                raise UndeclaredVariableError(f"undeclared variable {val!r}", off)
            return Var(val)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {val or 'end of input'!r}", off)


def parse(text: str, chart=None) -> Expr:
    """Parse infix text into an expression.

    ``chart`` may be a :class:`flatform.forms.Chart`, a sequence of variable
    names, or None (any identifier accepted).
    """
    names = None
    if chart is not None:
        names = getattr(chart, "names", chart)
    return _Parser(text, names).parse()


# ---------------------------------------------------------------------------
# evaluation


def _point_values(point, names=None) -> dict:
    if isinstance(point, Mapping):
        return dict(point)
    chart = getattr(point, "chart", None)
    if chart is not None:
        return dict(zip(chart.names, point.values))
    if names is None:
        raise TypeError("pass a mapping of variable values or a Point")
    return dict(zip(names, point))


def evaluate(e: Expr, point, names: Sequence[str] | None = None) -> float:
    """Evaluate at a single point; raise :class:`DomainError` on singularities."""
    env = _point_values(point, names)

    def ev(x: Expr, path: str) -> float:
        if isinstance(x, Const):
            return float(x.value)
        if isinstance(x, Var):
            try:
                return float(env[x.name])
            except KeyError:
                raise KeyError(f"no value for variable {x.name!r}") from None
        if isinstance(x, Add):
            return math.fsum(ev(t, f"{path}/add[{i}]") for i, t in enumerate(x.terms))
        if isinstance(x, Mul):
            r = 1.0
            for i, f in enumerate(x.factors):
                r *= ev(f, f"{path}/mul[{i}]")
            return r
        if isinstance(x, Neg):
            return -ev(x.arg, f"{path}/neg")
        if isinstance(x, Div):
            n = ev(x.num, f"{path}/div.num")
            d = ev(x.den, f"{path}/div.den")
            if d == 0.0:
                raise DomainError(f"division by zero in {to_string(x)!r}", path)
            return n / d
        if isinstance(x, Pow):
            b = ev(x.base, f"{path}/pow.base")
            if b == 0.0 and x.exp < 0:
                raise DomainError(f"zero to a negative power in {to_string(x)!r}", path)
            try:
                return b ** x.exp
            except OverflowError:
                raise DomainError(f"overflow in {to_string(x)!r}", path) from None
        a = ev(x.arg, f"{path}/{x.name}")
        if x.name == "sin":
            return math.sin(a)
        if x.name == "cos":
            return math.cos(a)
        if x.name == "exp":
            try:
                return math.exp(a)
            except OverflowError:
                raise DomainError(f"overflow in {to_string(x)!r}", path) from None
        if x.name == "ln":
            if a <= 0.0:
                raise DomainError(f"ln of non-positive value in {to_string(x)!r}", path)
            return math.log(a)
        if a < 0.0:
            raise DomainError(f"sqrt of negative value in {to_string(x)!r}", path)
        return math.sqrt(a)

    return ev(e, "root")


_NP_FUNC = {"sin": "np.sin", "cos": "np.cos", "exp": "np.exp", "ln": "np.log", "sqrt": "np.sqrt"}


def lambdify(exprs, names: Sequence[str]):
    """Compile an array of expressions into ``f(points) -> ndarray``.

    ``points`` has shape ``(N, len(names))``; the result has shape
    ``(N,) + shape(exprs)``.  Shared sub-expressions are evaluated once.
    Non-finite results raise :class:`DomainError` located by pointwise
    re-evaluation.
    """
    arr = np.empty(np.shape(exprs), dtype=object) if np.ndim(exprs) else None
    if arr is None:
        flat = [as_expr(exprs)]
        shape = ()
    else:
        obj = np.array(exprs, dtype=object)
        shape = obj.shape
        flat = [as_expr(x) for x in obj.ravel()]
    index = {n: i for i, n in enumerate(names)}
    lines: list[str] = []
    memo: dict = {}
    consts: dict = {}

    def emit(x: Expr) -> str:
        if x in memo:
            return memo[x]
        if isinstance(x, Const):
            key = x.value
            if key not in consts:
                consts[key] = f"c{len(consts)}"
            s = consts[key]
            memo[x] = s
            return s
        if isinstance(x, Var):
            if x.name not in index:
                raise KeyError(f"variable {x.name!r} is not a chart variable")
            s = f"v{index[x.name]}"
            memo[x] = s
            return s
        if isinstance(x, Add):
            rhs = " + ".join(emit(t) for t in x.terms)
        elif isinstance(x, Mul):
            rhs = " * ".join(emit(t) for t in x.factors)
        elif isinstance(x, Neg):
            rhs = "-" + emit(x.arg)
        elif isinstance(x, Div):
            rhs = f"{emit(x.num)} / {emit(x.den)}"
        elif isinstance(x, Pow):
            b = emit(x.base)
            if x.exp == 2:
                rhs = f"{b} * {b}"
            elif x.exp > 0:
                rhs = f"{b} ** {x.exp}"
            else:
                rhs = f"1.0 / {b} ** {-x.exp}"
        else:
            rhs = f"{_NP_FUNC[x.name]}({emit(x.arg)})"
        name = f"t{len(lines)}"
        lines.append(f"    {name} = {rhs}")
        memo[x] = name
        return name

    outs = [emit(x) for x in flat]
    src = ["def _f(P):"]
    src += [f"    v{i} = P[:, {i}]" for i in range(len(names))]
    src += [f"    {v} = {float(k)!r}" for k, v in consts.items()]
    src += lines
    src.append("    N = P.shape[0]")
    src.append(f"    out = np.empty((N, {len(flat)}))")
    for j, o in enumerate(outs):
        src.append(f"    out[:, {j}] = {o}")
    src.append("    return out")
    ns = {"np": np}
    exec("\n".join(src), ns)
    raw = ns["_f"]
    names = tuple(names)

    def f(points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if P.shape[1] != len(names):
            raise ValueError(f"points must have {len(names)} columns, got {P.shape[1]}")
        with np.errstate(all="ignore"):
            out = raw(P)
        if not np.all(np.isfinite(out)):
            bad_pt, bad_col = np.argwhere(~np.isfinite(out))[0]
            evaluate(flat[bad_col], dict(zip(names, P[bad_pt])))
            raise DomainError("non-finite value", f"output {bad_col} at point {P[bad_pt].tolist()}")
        return out.reshape((P.shape[0],) + shape)

    f.source = "\n".join(src)
    return f
