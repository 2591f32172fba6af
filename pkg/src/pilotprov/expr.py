"""ClassAd-style requirement expressions.

Covers the subset used by job filters: boolean logic with undefined
propagation, comparisons, ``is``/``isnt`` identity tests, and the builtins
``isUndefined`` and ``stringListMember``.  No arithmetic.

Precedence, highest first::

    !          (unary)
    == != < <= > >= is isnt
    &&
    ||
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from typing import Any, Callable, Union


class _Undefined:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNDEFINED"

    def __reduce__(self):
        return (_Undefined, ())


UNDEFINED = _Undefined()


class ErrorValue:
    """The ClassAd ``error`` value.  All errors are identical as values; the
    message is a diagnostic only."""

    __slots__ = ("message",)

    def __init__(self, message: str = ""):
        self.message = message

    def __eq__(self, other):
        return isinstance(other, ErrorValue)

    def __hash__(self):
        return hash(ErrorValue)

    def __repr__(self):
        return f"ErrorValue({self.message!r})"


Value = Union[bool, int, float, str, _Undefined, ErrorValue]


def value_type(v: Any) -> str:
    # bool first: it subclasses int
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, int):
        return "integer"
    if isinstance(v, float):
        return "real"
    if isinstance(v, str):
        return "string"
    if v is UNDEFINED:
        return "undefined"
    if isinstance(v, ErrorValue):
        return "error"
    raise TypeError(f"not an expression value: {v!r}")


def canonical(v: Value) -> tuple:
    """Hashable, type-exact identity of a value (``1``, ``1.0`` and ``True``
    are all distinct)."""
    t = value_type(v)
    if t in ("undefined", "error"):
        return (t,)
    return (t, v)


def is_identical(a: Value, b: Value) -> bool:
    return canonical(a) == canonical(b)


class AttrBag(Mapping):
    """Immutable attribute mapping with case-insensitive names.

    Missing names look up as ``UNDEFINED`` through :meth:`lookup`; plain
    indexing keeps the usual ``KeyError`` so the Mapping protocol works.
    """

    __slots__ = ("_data",)

    def __init__(self, data: Mapping[str, Value] | Iterable[tuple[str, Value]] = (), **kwargs):
        items = data.items() if isinstance(data, Mapping) else data
        store: dict[str, tuple[str, Value]] = {}
        for name, value in list(items) + list(kwargs.items()):
            value_type(value)
            store[name.lower()] = (name, value)
        self._data = store

    def __getitem__(self, name: str) -> Value:
        return self._data[name.lower()][1]

    def __contains__(self, name) -> bool:
        return isinstance(name, str) and name.lower() in self._data

    def __iter__(self) -> Iterator[str]:
        return (name for name, _ in self._data.values())

    def __len__(self) -> int:
        return len(self._data)

    def lookup(self, name: str) -> Value:
        entry = self._data.get(name.lower())
        return UNDEFINED if entry is None else entry[1]

    def updated(self, other: Mapping[str, Value] | None = None, **kwargs) -> AttrBag:
        merged = list(self.items())
        if other is not None:
            merged.extend(other.items())
        merged.extend(kwargs.items())
        return AttrBag(merged)

    def _canon(self):
        return frozenset((k, canonical(v)) for k, (_, v) in self._data.items())

    def __eq__(self, other):
        if not isinstance(other, AttrBag):
            return NotImplemented
        return self._canon() == other._canon()

    def __hash__(self):
        return hash(self._canon())

    def __repr__(self):
        inner = ", ".join(f"{k}={format_value(v)}" for k, v in self.items())
        return f"AttrBag({inner})"


# --------------------------------------------------------------------------
# AST

LITERAL = "literal"
ATTR = "attr"
UNARY = "unary"
BINARY = "binary"
CALL = "call"

COMPARISON_OPS = ("==", "!=", "<", "<=", ">", ">=", "is", "isnt")
_PRECEDENCE = {"||": 1, "&&": 2, **{op: 3 for op in COMPARISON_OPS}}
_UNARY_PREC = 4
_ATOM_PREC = 5

ATTR_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*\Z")


@dataclass(frozen=True)
class ExprNode:
    """One node of a parsed expression.

    ``op`` holds the operator for unary/binary nodes, the canonical function
    name for calls, and the value type tag for literals.  ``span`` is a byte
    range into the source and does not take part in equality.
    """

    kind: str
    op: str = ""
    value: Any = None
    name: str = ""
    children: tuple[ExprNode, ...] = ()
    span: tuple[int, int] = field(default=(0, 0), compare=False)

    def __str__(self):
        return render(self)


def literal(v: Value, span=(0, 0)) -> ExprNode:
    t = value_type(v)
    payload = None if t in ("undefined", "error") else v
    return ExprNode(LITERAL, op=t, value=payload, span=span)


def attr(name: str, span=(0, 0)) -> ExprNode:
    if not ATTR_NAME_RE.match(name) or name.lower() in _KEYWORDS:
        raise ValueError(f"invalid attribute name {name!r}")
    return ExprNode(ATTR, name=name, span=span)


def unary(op: str, child: ExprNode, span=(0, 0)) -> ExprNode:
    return ExprNode(UNARY, op=op, children=(child,), span=span)


def binary(op: str, left: ExprNode, right: ExprNode, span=(0, 0)) -> ExprNode:
    if op not in _PRECEDENCE:
        raise ValueError(f"unknown operator {op!r}")
    return ExprNode(BINARY, op=op, children=(left, right), span=span)


def call(name: str, args: Iterable[ExprNode], span=(0, 0)) -> ExprNode:
    fn = BUILTINS.get(name.lower())
    if fn is None:
        raise ValueError(f"unknown function {name!r}")
    return ExprNode(CALL, op=fn.name, children=tuple(args), span=span)


def conjuncts(node: ExprNode) -> list[ExprNode]:
    """Flatten a chain of ``&&`` into its operands."""
    if node.kind == BINARY and node.op == "&&":
        return conjuncts(node.children[0]) + conjuncts(node.children[1])
    return [node]


TRUE_EXPR = literal(True)


# --------------------------------------------------------------------------
# Builtins


@dataclass(frozen=True)
class Builtin:
    name: str
    min_args: int
    max_args: int
    impl: Callable[..., Value]


DEFAULT_LIST_DELIMS = ", "


def string_list_member(member: Value, lst: Value, delims: Value = "") -> Value:
    """True iff ``member`` equals (case-sensitively) one element of ``lst``
    split on any character of ``delims``.  Empty ``delims`` means comma or
    space."""
    args = (member, lst, delims)
    for a in args:
        if isinstance(a, ErrorValue):
            return a
    if lst is UNDEFINED or member is UNDEFINED or delims is UNDEFINED:
        return UNDEFINED
    if not all(isinstance(a, str) for a in args):
        return ErrorValue("stringListMember expects string arguments")
    seps = delims or DEFAULT_LIST_DELIMS
    elements = [lst]
    for sep in seps:
        elements = [piece for e in elements for piece in e.split(sep)]
    return any(e.strip() == member for e in elements if e.strip())


def _is_undefined(v: Value) -> Value:
    return v is UNDEFINED


BUILTINS: dict[str, Builtin] = {
    b.name.lower(): b
    for b in (
        Builtin("isUndefined", 1, 1, _is_undefined),
        Builtin("stringListMember", 2, 3, string_list_member),
    )
}


# --------------------------------------------------------------------------
# Lexer / parser


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, expected: str | None = None):
        self.offset = offset
        self.expected = expected
        detail = f"{message} at offset {offset}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)


_KEYWORDS = {"true", "false", "undefined", "error", "is", "isnt"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<op>=\?=|=!=|&&|\|\||==|!=|<=|>=|[<>!(),])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
    """,
    re.VERBOSE | re.DOTALL,
)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "'": "'"}


@dataclass
class _Token:
    kind: str  # number | string | op | ident | kw | eof
    text: str
    start: int
    end: int


def _unescape(body: str, offset: int) -> str:
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            nxt = body[i + 1]
            if nxt not in _ESCAPES:
                raise ExprSyntaxError(f"unknown escape \\{nxt}", offset + i + 1)
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _tokenize(text: str) -> list[_Token]:
    # byte offsets: spans are reported against the UTF-8 encoding
    tokens = []
    pos = 0
    bpos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos] == '"':
                raise ExprSyntaxError("unterminated string", bpos, '"')
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", bpos)
        chunk = m.group(0)
        bend = bpos + len(chunk.encode("utf-8"))
        kind = m.lastgroup
        if kind != "ws":
            if kind == "op":
                chunk = {"=?=": "is", "=!=": "isnt"}.get(chunk, chunk)
            elif kind == "ident" and chunk.lower() in _KEYWORDS:
                kind, chunk = "kw", chunk.lower()
            tokens.append(_Token(kind, chunk, bpos, bend))
        pos = m.end()
        bpos = bend
    tokens.append(_Token("eof", "", bpos, bpos))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise ExprSyntaxError(f"unexpected {found}", tok.start, repr(text))
        return self.advance()

    def parse(self) -> ExprNode:
        node = self.parse_or()
        tok = self.peek()
        if tok.kind != "eof":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.start, "end of input")
        return node

    def _binary_level(self, ops, sub):
        left = sub()
        while True:
            tok = self.peek()
            if tok.text in ops and tok.kind in ("op", "kw"):
                self.advance()
                right = sub()
                left = binary(tok.text, left, right, span=(left.span[0], right.span[1]))
            else:
                return left

    def parse_or(self):
        return self._binary_level(("||",), self.parse_and)

    def parse_and(self):
        return self._binary_level(("&&",), self.parse_cmp)

    def parse_cmp(self):
        return self._binary_level(COMPARISON_OPS, self.parse_unary)

    def parse_unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "!":
            self.advance()
            child = self.parse_unary()
            return unary("!", child, span=(tok.start, child.span[1]))
        return self.parse_primary()

    def parse_primary(self):
        tok = self.advance()
        span = (tok.start, tok.end)
        if tok.kind == "number":
            is_real = any(c in tok.text for c in ".eE")
            return literal(float(tok.text) if is_real else int(tok.text), span)
        if tok.kind == "string":
            return literal(_unescape(tok.text[1:-1], tok.start + 1), span)
        if tok.kind == "kw":
            if tok.text in ("true", "false"):
                return literal(tok.text == "true", span)
            if tok.text == "undefined":
                return literal(UNDEFINED, span)
            if tok.text == "error":
                return literal(ErrorValue("error literal"), span)
        if tok.kind == "ident":
            if self.peek().kind == "op" and self.peek().text == "(":
                return self.parse_call(tok)
            return attr(tok.text, span)
        if tok.kind == "op" and tok.text == "(":
            inner = self.parse_or()
            self.expect_op(")")
            return inner
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {found}", tok.start, "an operand")

    def parse_call(self, name_tok: _Token):
        fn = BUILTINS.get(name_tok.text.lower())
        if fn is None:
            raise ExprSyntaxError(f"unknown function {name_tok.text!r}", name_tok.start)
        self.expect_op("(")
        args = []
        if not (self.peek().kind == "op" and self.peek().text == ")"):
            args.append(self.parse_or())
            while self.peek().kind == "op" and self.peek().text == ",":
                self.advance()
                args.append(self.parse_or())
        close = self.expect_op(")")
        if not fn.min_args <= len(args) <= fn.max_args:
            raise ExprSyntaxError(
                f"{fn.name} takes {fn.min_args}-{fn.max_args} arguments, got {len(args)}",
                name_tok.start,
            )
        return ExprNode(CALL, op=fn.name, children=tuple(args), span=(name_tok.start, close.end))


def parse(text: str) -> ExprNode:
    """Parse expression source into an :class:`ExprNode`.

    Raises :class:`ExprSyntaxError` carrying the byte offset of the problem.
    """
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# Rendering


def _render_string(s: str) -> str:
    body = (
        s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t")
    )
    return f'"{body}"'


def format_value(v: Value) -> str:
    t = value_type(v)
    if t == "boolean":
        return "true" if v else "false"
    if t == "undefined":
        return "undefined"
    if t == "error":
        return "error"
    if t == "string":
        return _render_string(v)
    return repr(v)


def _prec(node: ExprNode) -> int:
    if node.kind == BINARY:
        return _PRECEDENCE[node.op]
    if node.kind == UNARY:
        return _UNARY_PREC
    return _ATOM_PREC


def render(node: ExprNode) -> str:
    """Canonical single-line source with the minimum of parentheses."""
    if node.kind == LITERAL:
        if node.op == "undefined":
            return "undefined"
        if node.op == "error":
            return "error"
        return format_value(node.value)
    if node.kind == ATTR:
        return node.name
    if node.kind == CALL:
        return f"{node.op}({', '.join(render(c) for c in node.children)})"
    if node.kind == UNARY:
        (child,) = node.children
        inner = render(child)
        if _prec(child) < _UNARY_PREC:
            inner = f"({inner})"
        return f"{node.op}{inner}"
    left, right = node.children
    p = _PRECEDENCE[node.op]
    ls, rs = render(left), render(right)
    if _prec(left) < p:
        ls = f"({ls})"
    if _prec(right) <= p:
        rs = f"({rs})"
    return f"{ls} {node.op} {rs}"


# --------------------------------------------------------------------------
# Evaluation


def _as_logic(v: Value):
    """Map to True/False/UNDEFINED, or None for a type mismatch."""
    if isinstance(v, bool) or v is UNDEFINED:
        return v
    return None


def _and(a: Value, b: Value) -> Value:
    for v in (a, b):
        if isinstance(v, ErrorValue):
            return v
    la, lb = _as_logic(a), _as_logic(b)
    if la is None or lb is None:
        return ErrorValue(f"&& on non-boolean operand ({format_value(a)}, {format_value(b)})")
    if la is False or lb is False:
        return False
    if la is UNDEFINED or lb is UNDEFINED:
        return UNDEFINED
    return True


def _or(a: Value, b: Value) -> Value:
    for v in (a, b):
        if isinstance(v, ErrorValue):
            return v
    la, lb = _as_logic(a), _as_logic(b)
    if la is None or lb is None:
        return ErrorValue(f"|| on non-boolean operand ({format_value(a)}, {format_value(b)})")
    if la is True or lb is True:
        return True
    if la is UNDEFINED or lb is UNDEFINED:
        return UNDEFINED
    return False


def _not(a: Value) -> Value:
    if isinstance(a, ErrorValue) or a is UNDEFINED:
        return a
    if isinstance(a, bool):
        return not a
    return ErrorValue(f"! on non-boolean operand {format_value(a)}")


def _compare(op: str, a: Value, b: Value) -> Value:
    if op == "is":
        return is_identical(a, b)
    if op == "isnt":
        return not is_identical(a, b)
    for v in (a, b):
        if isinstance(v, ErrorValue):
            return v
    if a is UNDEFINED or b is UNDEFINED:
        return UNDEFINED
    ta, tb = value_type(a), value_type(b)
    numeric = ("integer", "real")
    if ta in numeric and tb in numeric:
        # Python compares int with float exactly, no overflow on huge ints
        x, y = a, b
    elif ta == tb and ta in ("string", "boolean"):
        x, y = a, b
        if ta == "boolean" and op not in ("==", "!="):
            return ErrorValue(f"ordering comparison {op} on booleans")
    else:
        return ErrorValue(f"cannot compare {ta} with {tb}")
    if op == "==":
        return x == y
    if op == "!=":
        return x != y
    if op == "<":
        return x < y
    if op == "<=":
        return x <= y
    if op == ">":
        return x > y
    return x >= y


def eval_expr(node: ExprNode, attrs: AttrBag | Mapping[str, Value] | None = None) -> Value:
    """Evaluate with three-valued logic.  Never raises for well-formed trees;
    failures come back as :class:`ErrorValue`."""
    if attrs is None:
        attrs = AttrBag()
    elif not isinstance(attrs, AttrBag):
        attrs = AttrBag(attrs)
    return _eval(node, attrs)


def _eval(node: ExprNode, attrs: AttrBag) -> Value:
    kind = node.kind
    if kind == LITERAL:
        if node.op == "undefined":
            return UNDEFINED
        if node.op == "error":
            return ErrorValue("error literal")
        return node.value
    if kind == ATTR:
        return attrs.lookup(node.name)
    if kind == UNARY:
        return _not(_eval(node.children[0], attrs))
    if kind == BINARY:
        a = _eval(node.children[0], attrs)
        b = _eval(node.children[1], attrs)
        if node.op == "&&":
            return _and(a, b)
        if node.op == "||":
            return _or(a, b)
        return _compare(node.op, a, b)
    if kind == CALL:
        fn = BUILTINS[node.op.lower()]
        return fn.impl(*(_eval(c, attrs) for c in node.children))
    raise ValueError(f"bad node kind {kind!r}")


# ``eval`` is the natural name but shadows the builtin inside this module.
evaluate = eval_expr


def matches(node: ExprNode, attrs: AttrBag | Mapping[str, Value] | None = None) -> bool:
    """True only when the expression evaluates to boolean ``true``."""
    return eval_expr(node, attrs) is True


def parse_value(text: str) -> Value:
    """Read a literal from user input such as a ``key=value`` flag.

    Anything that is not a single literal token is taken as a raw string,
    so ``SDSC-PRP,UNL`` becomes the string ``"SDSC-PRP,UNL"``.
    """
    stripped = text.strip()
    try:
        node = parse(stripped)
    except ExprSyntaxError:
        return stripped
    if node.kind != LITERAL:
        return stripped
    return _eval(node, AttrBag())


def describe_value(v: Value) -> str:
    """Human form used by the CLI: ``error(<msg>)`` carries its diagnostic."""
    if isinstance(v, ErrorValue):
        return f"error({v.message})"
    return format_value(v)
