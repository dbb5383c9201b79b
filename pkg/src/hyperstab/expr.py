"""Closed-form expression language for coefficients, sources and boundary maps.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := NUMBER | IDENT | IDENT '[' INT ']' | IDENT '(' expr (',' expr)? ')'
            | '(' expr ')'

So ``-x^2`` is ``-(x^2)`` and ``2^3^2`` is ``2^(3^2)``.  ``pi`` and ``e``
are predefined in every context.

Evaluation works on Python floats and on numpy arrays alike (the simulator
evaluates a whole grid at once).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

Number = Union[float, np.ndarray]

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "tanh": 1,
    "exp": 1,
    "sqrt": 1,
    "abs": 1,
    "sign": 1,
    "min": 2,
    "max": 2,
}
CONSTANTS = {"pi": math.pi, "e": math.e}


class ExpressionError(ValueError):
    """Base class for parse and evaluation failures."""


class ParseError(ExpressionError):
    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at position {position}")


class DomainError(ExpressionError):
    def __init__(self, message: str, subexpression: str):
        self.subexpression = subexpression
        super().__init__(f"{message} in '{subexpression}'")


# --------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Indexed:
    name: str
    index: int

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("indexed variables are 1-based")


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def __post_init__(self):
        if self.func not in FUNCTIONS:
            raise ValueError(f"unknown function {self.func!r}")


Node = Union[Num, Var, Indexed, Neg, BinOp, Call]


@dataclass(frozen=True)
class VariableContext:
    """Variables an expression may reference.

    ``indexed`` maps a family name (``u``, ``I``, ``out``) to the largest
    admissible index.
    """

    role: str
    names: frozenset = frozenset()
    indexed: Mapping[str, int] = field(default_factory=dict)

    def admits(self, key: str) -> bool:
        if key in CONSTANTS or key in self.names:
            return True
        m = _INDEXED_KEY.fullmatch(key)
        return bool(m) and 1 <= int(m.group(2)) <= self.indexed.get(m.group(1), 0)

    # the fixed roles
    @classmethod
    def coefficient(cls) -> "VariableContext":
        return cls("coefficient", frozenset({"x"}))

    @classmethod
    def initial(cls) -> "VariableContext":
        return cls("initial", frozenset({"x"}))

    @classmethod
    def source(cls, n: int) -> "VariableContext":
        return cls("source", frozenset({"x"}), {"u": n, "I": n})

    @classmethod
    def boundary(cls, n: int) -> "VariableContext":
        return cls("boundary", frozenset(), {"out": n})

    @classmethod
    def disturbance_interior(cls) -> "VariableContext":
        return cls("disturbance-interior", frozenset({"t", "x"}))

    @classmethod
    def disturbance_boundary(cls) -> "VariableContext":
        return cls("disturbance-boundary", frozenset({"t"}))


_INDEXED_KEY = re.compile(r"([A-Za-z][A-Za-z0-9_]*)\[(\d+)\]")


# --------------------------------------------------------------------------
# Lexer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),\[\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", pos, source)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, context: VariableContext | None):
        self.source = source
        self.context = context
        self.tokens = tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.tok
        return ParseError(message, tok.pos, self.source)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected '{text}', found '{found}'")

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"expected operator or end of input, found '{self.tok.text}'")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.accept("-"):
            return Neg(self.factor())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.accept("^"):
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if self.accept("["):
                idx = self.tok
                if idx.kind != "number" or not idx.text.isdigit():
                    raise self.error("expected integer index")
                self.i += 1
                self.expect("]")
                index = int(idx.text)
                if index < 1:
                    raise self.error("indices are 1-based", idx)
                key = f"{tok.text}[{index}]"
                if self.context is not None and not self.context.admits(key):
                    raise self.error(f"unknown variable '{key}' in {self.context.role} context", tok)
                return Indexed(tok.text, index)
            if self.accept("("):
                if tok.text not in FUNCTIONS:
                    raise self.error(f"unknown function '{tok.text}'", tok)
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[tok.text]:
                    raise self.error(
                        f"function '{tok.text}' takes {FUNCTIONS[tok.text]} argument(s), got {len(args)}",
                        tok,
                    )
                return Call(tok.text, tuple(args))
            if self.context is not None and not self.context.admits(tok.text):
                raise self.error(f"unknown variable '{tok.text}' in {self.context.role} context", tok)
            return Var(tok.text)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        raise self.error(f"expected number, identifier or '(', found '{found}'")


def parse_expression(source: str, context: VariableContext | None = None) -> Node:
    """Parse ``source``; with a context, reject variables outside it."""
    if not source or not source.strip():
        raise ParseError("empty expression", 0, source)
    return _Parser(source, context).parse()


# --------------------------------------------------------------------------
# Inspection

def free_variables(node: Node) -> set[str]:
    out: set[str] = set()

    def walk(n):
        if isinstance(n, Var):
            if n.name not in CONSTANTS:
                out.add(n.name)
        elif isinstance(n, Indexed):
            out.add(f"{n.name}[{n.index}]")
        elif isinstance(n, Neg):
            walk(n.operand)
        elif isinstance(n, BinOp):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Call):
            for a in n.args:
                walk(a)

    walk(node)
    return out


def to_string(node: Node) -> str:
    """Fully parenthesized text that re-parses to the same tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Indexed):
        return f"{node.name}[{node.index}]"
    if isinstance(node, Neg):
        return f"(-({to_string(node.operand)}))"
    if isinstance(node, BinOp):
        return f"({to_string(node.left)} {node.op} {to_string(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_string(a) for a in node.args)})"
    raise TypeError(node)


# --------------------------------------------------------------------------
# Evaluation

def _any(mask) -> bool:
    return bool(np.any(mask))


def compile_node(node: Node) -> Callable[[Mapping[str, Number]], Number]:
    """Build a closure evaluating ``node``; works elementwise on arrays."""
    if isinstance(node, Num):
        v = node.value
        return lambda b: v
    if isinstance(node, Var):
        name = node.name
        if name in CONSTANTS:
            c = CONSTANTS[name]
            return lambda b: c
        return lambda b: b[name]
    if isinstance(node, Indexed):
        key = f"{node.name}[{node.index}]"
        return lambda b: b[key]
    if isinstance(node, Neg):
        f = compile_node(node.operand)
        return lambda b: -f(b)
    if isinstance(node, BinOp):
        lf, rf = compile_node(node.left), compile_node(node.right)
        text = to_string(node)
        if node.op == "+":
            return lambda b: lf(b) + rf(b)
        if node.op == "-":
            return lambda b: lf(b) - rf(b)
        if node.op == "*":
            return lambda b: lf(b) * rf(b)
        if node.op == "/":
            def div(b):
                den = rf(b)
                if _any(den == 0):
                    raise DomainError("division by zero", text)
                return lf(b) / den
            return div

        def pw(b):
            base, ex = lf(b), rf(b)
            if _any((base == 0) & (ex < 0)):
                raise DomainError("zero raised to a negative power", text)
            if _any((base < 0) & (np.floor(ex) != ex)):
                raise DomainError("negative base with non-integer exponent", text)
            # IEEE semantics for scalars too: overflow gives inf, not OverflowError
            return np.power(np.asarray(base, dtype=float), ex)
        return pw
    if isinstance(node, Call):
        fs = [compile_node(a) for a in node.args]
        text = to_string(node)
        name = node.func
        if name == "sqrt":
            f = fs[0]

            def sq(b):
                a = f(b)
                if _any(a < 0):
                    raise DomainError("square root of a negative number", text)
                return np.sqrt(a)
            return sq
        if name == "min":
            f, g = fs
            return lambda b: np.minimum(f(b), g(b))
        if name == "max":
            f, g = fs
            return lambda b: np.maximum(f(b), g(b))
        ufunc = {
            "sin": np.sin, "cos": np.cos, "tan": np.tan, "tanh": np.tanh,
            "exp": np.exp, "abs": np.abs, "sign": np.sign,
        }[name]
        f = fs[0]
        return lambda b: ufunc(f(b))
    raise TypeError(node)


def evaluate(node: Node, bindings: Mapping[str, Number]) -> Number:
    value = compile_node(node)(bindings)
    if isinstance(value, np.generic):
        return float(value)
    return value


class Expression:
    """A parsed expression together with its source text and compiled form."""

    __slots__ = ("text", "ast", "_fn")

    def __init__(self, text: str, context: VariableContext | None = None):
        self.text = str(text).strip()
        self.ast = parse_expression(self.text, context)
        self._fn = compile_node(self.ast)

    @classmethod
    def constant(cls, value: float) -> "Expression":
        return cls(repr(float(value)) if value >= 0 else f"-{repr(-float(value))}")

    def __call__(self, bindings: Mapping[str, Number]) -> Number:
        value = self._fn(bindings)
        if isinstance(value, np.generic):
            return float(value)
        return value

    def on_grid(self, x: np.ndarray, **extra: Number) -> np.ndarray:
        """Evaluate as a function of ``x`` and broadcast to the grid shape.

        Overflow yields inf silently; callers check finiteness themselves.
        """
        with np.errstate(over="ignore"):
            value = self({"x": x, **extra})
        return np.broadcast_to(np.asarray(value, dtype=float), np.shape(x)).copy()

    @property
    def variables(self) -> set[str]:
        return free_variables(self.ast)

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __str__(self):
        return self.text

    def __eq__(self, other):
        return isinstance(other, Expression) and self.ast == other.ast

    def __hash__(self):
        return hash(self.ast)
