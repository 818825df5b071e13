"""
Expression language for perturbation functions.

Grammar (whitespace insignificant):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | base ('^' ['-'] integer)?
    base   := number | ident | '(' expr ')' | func '(' expr ')'
    func   := exp | log | sin | cos | sqrt

Identifiers are x1..x4 (ambient coordinates of S^3), y1..y3 (coordinates of R^3) and pi.
Expressions are evaluated on second-order jets, giving exact gradients and Hessians.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass

import numpy as np

from errors import ParseError, ExpressionError, DomainError

logger = logging.getLogger(__name__)

SPHERE_VARIABLES = ("x1", "x2", "x3", "x4")
FLAT_VARIABLES = ("y1", "y2", "y3")
FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt")

_TOKEN = re.compile(
    r"\s*(?:(?P<number>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


# --- AST ---

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class Sum:
    terms: tuple
    signs: tuple  # +1 / -1 per term, first is +1


@dataclass(frozen=True)
class Product:
    factors: tuple
    ops: tuple  # '*' or '/' per factor, first is '*'


@dataclass(frozen=True)
class Power:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: object


@dataclass(frozen=True)
class Expression:
    text: str
    ast: object
    domain: str | None  # "sphere", "flat" or None for constants


# --- parsing ---

def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(bad + 1, "number, identifier or operator", text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected):
        raise ParseError(self.peek()[2], expected, self.text)

    def expect_op(self, op):
        kind, value, _ = self.peek()
        if kind != "op" or value != op:
            self.fail(f"'{op}'")
        self.take()

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("end of input")
        return node

    def expr(self):
        terms = [self.term()]
        signs = [1]
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            signs.append(1 if self.take()[1] == "+" else -1)
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Sum(tuple(terms), tuple(signs))

    def term(self):
        factors = [self.factor()]
        ops = ["*"]
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            ops.append(self.take()[1])
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else Product(tuple(factors), tuple(ops))

    def factor(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.factor())
        base = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[0] == "op" and self.peek()[1] == "-":
                self.take()
                sign = -1
            kind, value, _ = self.peek()
            if kind != "number" or not value.isdigit():
                self.fail("integer exponent")
            self.take()
            return Power(base, sign * int(value))
        return base

    def base(self):
        kind, value, _ = self.peek()
        if kind == "number":
            self.take()
            return Num(float(value))
        if kind == "ident":
            if value in FUNCTIONS:
                self.take()
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(value, arg)
            if value == "pi":
                self.take()
                return Num(math.pi)
            if value in SPHERE_VARIABLES or value in FLAT_VARIABLES:
                self.take()
                return Var(value)
            self.fail("known identifier (x1..x4, y1..y3, pi, exp, log, sin, cos, sqrt)")
        if kind == "op" and value == "(":
            self.take()
            node = self.expr()
            self.expect_op(")")
            return node
        self.fail("number, identifier or '('")


def parse(text):
    return _Parser(text).parse()


def variables(ast):
    if isinstance(ast, Var):
        return {ast.name}
    if isinstance(ast, Num):
        return set()
    out = set()
    for child in _children(ast):
        out |= variables(child)
    return out


def infer_domain(ast):
    names = variables(ast)
    sphere = names & set(SPHERE_VARIABLES)
    flat = names & set(FLAT_VARIABLES)
    if sphere and flat:
        raise ExpressionError(f"expression mixes sphere and flat variables: {sorted(names)}")
    if sphere:
        return "sphere"
    if flat:
        return "flat"
    return None


def compile_expression(text, domain=None):
    """Parses text and checks its variables against the declared domain."""
    ast = parse(text)
    found = infer_domain(ast)
    if domain is not None and found is not None and found != domain:
        raise ExpressionError(f"expression uses {found} variables but a {domain} function was expected")
    return Expression(text=text, ast=ast, domain=found or domain)


def _children(ast):
    if isinstance(ast, Neg):
        return (ast.operand,)
    if isinstance(ast, Sum):
        return ast.terms
    if isinstance(ast, Product):
        return ast.factors
    if isinstance(ast, Power):
        return (ast.base,)
    if isinstance(ast, Call):
        return (ast.arg,)
    return ()


def node_count(ast):
    return 1 + sum(node_count(c) for c in _children(ast))


# --- printing ---

def _format_number(value):
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def to_text(ast):
    if isinstance(ast, Num):
        return _format_number(ast.value)
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Call):
        return f"{ast.func}({to_text(ast.arg)})"
    if isinstance(ast, Neg):
        inner = to_text(ast.operand)
        if isinstance(ast.operand, (Sum, Product)):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(ast, Power):
        base = to_text(ast.base)
        if not isinstance(ast.base, (Num, Var, Call)):
            base = f"({base})"
        return f"{base}^{ast.exponent}"
    if isinstance(ast, Sum):
        parts = []
        for k, (term, sign) in enumerate(zip(ast.terms, ast.signs)):
            text = to_text(term)
            if isinstance(term, Sum):
                text = f"({text})"
            if k == 0:
                parts.append(text)
            else:
                parts.append(("+ " if sign > 0 else "- ") + text)
        return " ".join(parts)
    if isinstance(ast, Product):
        parts = []
        for k, (factor, op) in enumerate(zip(ast.factors, ast.ops)):
            text = to_text(factor)
            if isinstance(factor, (Sum, Product)):
                text = f"({text})"
            parts.append(text if k == 0 else f"{op} {text}")
        return " ".join(parts)
    raise TypeError(f"not an expression node: {ast!r}")


# --- second-order jets ---

@dataclass
class Jet2:
    """Value, gradient and Hessian of a function, stacked over leading axes."""
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    @property
    def dimension(self):
        return self.grad.shape[-1]

    @property
    def laplacian(self):
        return np.trace(self.hess, axis1=-2, axis2=-1)

    @classmethod
    def constant(cls, c, shape, n):
        return cls(np.full(shape, float(c)), np.zeros(shape + (n,)), np.zeros(shape + (n, n)))

    @classmethod
    def variable(cls, values, index, n):
        values = np.asarray(values, dtype=float)
        grad = np.zeros(values.shape + (n,))
        grad[..., index] = 1.0
        return cls(values.copy(), grad, np.zeros(values.shape + (n, n)))

    def _lift(self, other):
        if isinstance(other, Jet2):
            return other
        return Jet2.constant(other, self.value.shape, self.dimension)

    def __add__(self, other):
        if not isinstance(other, Jet2):
            return Jet2(self.value + other, self.grad, self.hess)
        return Jet2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.value, -self.grad, -self.hess)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet2):
            return Jet2(self.value * other, self.grad * other, self.hess * other)
        a, b = self, other
        ga, gb = a.grad[..., :, None], b.grad[..., None, :]
        cross = ga * gb
        hess = ((a.value[..., None, None] * b.hess + b.value[..., None, None] * a.hess)
                + (cross + np.swapaxes(cross, -1, -2)))
        grad = a.value[..., None] * b.grad + b.value[..., None] * a.grad
        return Jet2(a.value * b.value, grad, hess)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * reciprocal(self._lift(other))

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, k):
        return integer_power(self, int(k))

    def chain(self, f0, f1, f2):
        """Applies a scalar function with value f0 and derivatives f1, f2 at self.value."""
        g = self.grad
        grad = f1[..., None] * g
        hess = f1[..., None, None] * self.hess + f2[..., None, None] * (g[..., :, None] * g[..., None, :])
        return Jet2(np.asarray(f0, dtype=float), grad, hess)


def reciprocal(u):
    v = u.value
    if np.any(v == 0):
        raise DomainError("division by zero")
    inv = 1.0 / v
    return u.chain(inv, -inv * inv, 2.0 * inv * inv * inv)


def integer_power(u, k):
    if k == 0:
        return Jet2.constant(1.0, u.value.shape, u.dimension)
    if k == 1:
        return u
    v = u.value
    if k < 0 and np.any(v == 0):
        raise DomainError("negative power of zero")
    return u.chain(v ** k, k * v ** (k - 1), k * (k - 1) * v ** (k - 2))


def jet_exp(u):
    e = np.exp(u.value)
    return u.chain(e, e, e)


def jet_log(u):
    if np.any(u.value <= 0):
        raise DomainError("log of a non-positive argument")
    inv = 1.0 / u.value
    return u.chain(np.log(u.value), inv, -inv * inv)


def jet_sin(u):
    s, c = np.sin(u.value), np.cos(u.value)
    return u.chain(s, c, -s)


def jet_cos(u):
    s, c = np.sin(u.value), np.cos(u.value)
    return u.chain(c, -s, -c)


def jet_sqrt(u):
    if np.any(u.value <= 0):
        raise DomainError("sqrt of a non-positive argument (derivative undefined)")
    r = np.sqrt(u.value)
    return u.chain(r, 0.5 / r, -0.25 / (r * u.value))


_FUNCTION_JETS = {"exp": jet_exp, "log": jet_log, "sin": jet_sin, "cos": jet_cos, "sqrt": jet_sqrt}


def evaluate(ast, env, shape=None, n=None):
    """
    Evaluates ast on jets. env maps variable names to Jet2 values sharing one shape
    and dimension; shape and n are only needed when env is empty.
    """
    if env:
        first = next(iter(env.values()))
        shape, n = first.value.shape, first.dimension
    return _eval(ast, env, shape, n)


def _eval(ast, env, shape, n):
    if isinstance(ast, Num):
        return Jet2.constant(ast.value, shape, n)
    if isinstance(ast, Var):
        if ast.name not in env:
            raise ExpressionError(f"variable {ast.name} is not bound in this domain")
        return env[ast.name]
    try:
        if isinstance(ast, Neg):
            return -_eval(ast.operand, env, shape, n)
        if isinstance(ast, Sum):
            total = None
            for term, sign in zip(ast.terms, ast.signs):
                jet = _eval(term, env, shape, n)
                jet = jet if sign > 0 else -jet
                total = jet if total is None else total + jet
            return total
        if isinstance(ast, Product):
            total = None
            for factor, op in zip(ast.factors, ast.ops):
                jet = _eval(factor, env, shape, n)
                if total is None:
                    total = jet
                elif op == "*":
                    total = total * jet
                else:
                    total = total * reciprocal(jet)
            return total
        if isinstance(ast, Power):
            return integer_power(_eval(ast.base, env, shape, n), ast.exponent)
        if isinstance(ast, Call):
            return _FUNCTION_JETS[ast.func](_eval(ast.arg, env, shape, n))
    except DomainError as exc:
        if exc.node is None:
            raise DomainError(str(exc), to_text(ast)) from None
        raise
    raise TypeError(f"not an expression node: {ast!r}")


def variable_jets(points, names):
    """Seeds one jet per coordinate of points (shape (..., len(names)))."""
    points = np.asarray(points, dtype=float)
    n = len(names)
    if points.shape[-1] != n:
        raise ExpressionError(f"point has {points.shape[-1]} coordinates, expected {n}")
    return {name: Jet2.variable(points[..., i], i, n) for i, name in enumerate(names)}


def eval_jet2(ast, point, domain=None):
    """Value, gradient and Hessian of ast at point (or a stack of points)."""
    domain = domain or infer_domain(ast)
    point = np.asarray(point, dtype=float)
    if domain is None:
        domain = "sphere" if point.shape[-1] == 4 else "flat"
    names = SPHERE_VARIABLES if domain == "sphere" else FLAT_VARIABLES
    return evaluate(ast, variable_jets(point, names))
