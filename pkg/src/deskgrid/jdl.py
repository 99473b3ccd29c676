"""Job description files and the three-valued expression language inside them.

Grammar of a description file:

    file   := { assignment ";" }
    assign := Name "=" expr
    expr   := literal | list | "other." Name | Member "(" expr "," expr ")"
            | ("!" | "-") expr | expr binop expr | "(" expr ")"
    list   := "{" [ expr { "," expr } ] "}"

Strings are double-quoted, `#` starts a comment running to end of line.
Binary operators from loosest to tightest binding: `||`, `&&`, a single
comparison (`== != < <= > >=`), then the unary operators.  `true`/`false`
and `Member` are matched case-insensitively; attribute names are not.

Evaluation is three-valued.  Unbound attributes and type mismatches yield
UNDEFINED, which propagates through every operator with one exception: a
`true` left arm of `||` and a `false` left arm of `&&` decide the result
without looking at the right arm.  Comparisons are defined only between
two values of one kind (two numbers, two strings, two booleans for
equality; ordering only between numbers); anything else is UNDEFINED.

Reserved attributes are folded into the typed JobDescription; unknown
attributes are retained verbatim so descriptions survive round-trips
through tools that do not understand them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union


class JdlError(Exception):
    """Base for everything this module raises."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}, col {col}: {message}"
        super().__init__(message)


class JdlSyntaxError(JdlError):
    pass


class MissingAttribute(JdlError):
    def __init__(self, name: str):
        self.attribute = name
        super().__init__(f"required attribute {name} is missing")


# --------------------------------------------------------------------------
# values

class _Undefined:
    """The third truth value.  Refuses to be used as a python boolean so an
    accidental `if value:` fails loudly instead of treating it as false."""

    __slots__ = ()

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        raise TypeError("UNDEFINED has no python truth value")


UNDEFINED = _Undefined()

#: boolean | number | string | list-of-strings | UNDEFINED
Value = Union[bool, int, float, str, tuple, _Undefined]


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


# --------------------------------------------------------------------------
# syntax tree

@dataclass(frozen=True)
class Lit:
    value: "bool | int | float | str"


@dataclass(frozen=True)
class ListLit:
    items: tuple


@dataclass(frozen=True)
class Attr:
    """Reference to a machine attribute: other.<name>."""

    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class MemberCall:
    """Member(value, list): set membership with exact string equality."""

    value: "Expr"
    items: "Expr"


Expr = Union[Lit, ListLit, Attr, Unary, Binary, MemberCall]


# --------------------------------------------------------------------------
# lexer

_PUNCT = ("==", "!=", "<=", ">=", "&&", "||", "<", ">", "!", "-", "=",
          "{", "}", "(", ")", ",", ";", ".")


@dataclass(frozen=True)
class Token:
    kind: str  # NAME NUMBER STRING PUNCT EOF
    text: str
    line: int
    col: int
    pos: int
    end: int


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, bol = 0, 1, 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            i += 1
            bol = i
            continue
        if c in " \t\r":
            i += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        col = i - bol + 1
        if c == '"':
            j = i + 1
            out = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n and text[j + 1] in ('"', "\\"):
                    out.append(text[j + 1])
                    j += 2
                elif text[j] == "\n":
                    raise JdlSyntaxError("unterminated string", line, col)
                else:
                    out.append(text[j])
                    j += 1
            if j >= n:
                raise JdlSyntaxError("unterminated string", line, col)
            tokens.append(Token("STRING", "".join(out), line, col, i, j + 1))
            i = j + 1
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            tokens.append(Token("NUMBER", text[i:j], line, col, i, j))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token("NAME", text[i:j], line, col, i, j))
            i = j
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                tokens.append(Token("PUNCT", p, line, col, i, i + len(p)))
                i += len(p)
                break
        else:
            raise JdlSyntaxError(f"stray character {c!r}", line, col)
    tokens.append(Token("EOF", "", line, n - bol + 1, n, n))
    return tokens


# --------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise JdlSyntaxError(message, tok.line, tok.col)

    def accept_punct(self, text: str) -> bool:
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.text == text:
            self.pos += 1
            return True
        return False

    def expect_punct(self, text: str) -> Token:
        tok = self.peek()
        if tok.kind != "PUNCT" or tok.text != text:
            shown = tok.text or "end of input"
            self.fail(f"expected {text!r}, found {shown!r}", tok)
        return self.next()

    # file := { Name "=" expr ";" }
    def parse_file(self) -> list[tuple[str, Expr, str, Token]]:
        assignments = []
        while self.peek().kind != "EOF":
            name_tok = self.peek()
            if name_tok.kind != "NAME":
                self.fail(f"expected attribute name, found {name_tok.text!r}")
            self.next()
            self.expect_punct("=")
            start = self.peek().pos
            expr = self.parse_expr()
            end = self.tokens[self.pos - 1].end
            self.expect_punct(";")
            assignments.append((name_tok.text, expr, self.text[start:end], name_tok))
        return assignments

    def parse_expr(self) -> Expr:
        return self.parse_or()

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.accept_punct("||"):
            left = Binary("||", left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_cmp()
        while self.accept_punct("&&"):
            left = Binary("&&", left, self.parse_cmp())
        return left

    def parse_cmp(self) -> Expr:
        left = self.parse_unary()
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.text in ("==", "!=", "<", "<=", ">", ">="):
            self.next()
            return Binary(tok.text, left, self.parse_unary())
        return left

    def parse_unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.text in ("!", "-"):
            self.next()
            return Unary(tok.text, self.parse_unary())
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "STRING":
            self.next()
            return Lit(tok.text)
        if tok.kind == "NUMBER":
            self.next()
            if "." in tok.text:
                return Lit(float(tok.text))
            return Lit(int(tok.text))
        if self.accept_punct("("):
            inner = self.parse_expr()
            self.expect_punct(")")
            return inner
        if self.accept_punct("{"):
            items = []
            if not self.accept_punct("}"):
                items.append(self.parse_expr())
                while self.accept_punct(","):
                    items.append(self.parse_expr())
                self.expect_punct("}")
            return ListLit(tuple(items))
        if tok.kind == "NAME":
            word = tok.text.lower()
            if word == "true":
                self.next()
                return Lit(True)
            if word == "false":
                self.next()
                return Lit(False)
            if word == "member":
                self.next()
                self.expect_punct("(")
                value = self.parse_expr()
                self.expect_punct(",")
                items = self.parse_expr()
                self.expect_punct(")")
                return MemberCall(value, items)
            if word == "other":
                self.next()
                self.expect_punct(".")
                attr = self.peek()
                if attr.kind != "NAME":
                    self.fail("expected attribute name after 'other.'")
                self.next()
                return Attr(attr.text)
            self.fail(f"unknown identifier {tok.text!r}", tok)
        self.fail(f"expected an expression, found {tok.text or 'end of input'!r}", tok)


def parse_expr(text: str) -> Expr:
    """Parse one bare expression (used by tests and tools)."""
    parser = _Parser(text)
    expr = parser.parse_expr()
    if parser.peek().kind != "EOF":
        parser.fail("trailing input after expression")
    return expr


# --------------------------------------------------------------------------
# printer

_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3}
_ATOM = 5


def _prec(expr: Expr) -> int:
    if isinstance(expr, Binary):
        return _PREC[expr.op]
    if isinstance(expr, Unary):
        return 4
    return _ATOM


def expr_text(expr: Expr) -> str:
    """Canonical rendering; parse(expr_text(e)) is structurally e."""
    if isinstance(expr, Lit):
        v = expr.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            escaped = v.replace("\\", "\\\\").replace('"', '\\"')
            return f'"{escaped}"'
        return repr(v)
    if isinstance(expr, ListLit):
        return "{" + ", ".join(expr_text(i) for i in expr.items) + "}"
    if isinstance(expr, Attr):
        return f"other.{expr.name}"
    if isinstance(expr, MemberCall):
        return f"Member({expr_text(expr.value)}, {expr_text(expr.items)})"
    if isinstance(expr, Unary):
        inner = expr_text(expr.operand)
        if _prec(expr.operand) < 4:
            inner = f"({inner})"
        return f"{expr.op}{inner}"
    if isinstance(expr, Binary):
        mine = _PREC[expr.op]
        left = expr_text(expr.left)
        right = expr_text(expr.right)
        # left-associative chains keep the left child unparenthesized at
        # equal precedence; comparisons do not chain at all
        if _prec(expr.left) < mine or (mine == 3 and _prec(expr.left) == 3):
            left = f"({left})"
        if _prec(expr.right) <= mine:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    raise TypeError(f"not an expression: {expr!r}")


# --------------------------------------------------------------------------
# evaluation

def evaluate(expr: Expr, env: Mapping[str, Value] | None = None) -> Value:
    """Three-valued evaluation of `expr` against machine attributes `env`."""
    env = env or {}
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Attr):
        if expr.name not in env:
            return UNDEFINED
        value = env[expr.name]
        if isinstance(value, list):
            value = tuple(value)
        return value
    if isinstance(expr, ListLit):
        out = []
        for item in expr.items:
            v = evaluate(item, env)
            if not isinstance(v, str):
                return UNDEFINED
            out.append(v)
        return tuple(out)
    if isinstance(expr, MemberCall):
        needle = evaluate(expr.value, env)
        haystack = evaluate(expr.items, env)
        if not isinstance(needle, str) or not isinstance(haystack, tuple):
            return UNDEFINED
        return needle in haystack
    if isinstance(expr, Unary):
        v = evaluate(expr.operand, env)
        if expr.op == "!":
            if isinstance(v, bool):
                return not v
            return UNDEFINED
        if _is_number(v):
            return -v
        return UNDEFINED
    if isinstance(expr, Binary):
        return _binary(expr, env)
    raise TypeError(f"not an expression: {expr!r}")


def _binary(expr: Binary, env) -> Value:
    op = expr.op
    if op == "||":
        left = evaluate(expr.left, env)
        if left is True:
            return True  # short-circuit: right arm never examined
        if left is not False:
            return UNDEFINED
        right = evaluate(expr.right, env)
        return right if isinstance(right, bool) else UNDEFINED
    if op == "&&":
        left = evaluate(expr.left, env)
        if left is False:
            return False
        if left is not True:
            return UNDEFINED
        right = evaluate(expr.right, env)
        return right if isinstance(right, bool) else UNDEFINED

    left = evaluate(expr.left, env)
    right = evaluate(expr.right, env)
    if op in ("==", "!="):
        if _is_number(left) and _is_number(right):
            same = left == right
        elif isinstance(left, str) and isinstance(right, str):
            same = left == right
        elif isinstance(left, bool) and isinstance(right, bool):
            same = left == right
        else:
            return UNDEFINED
        return same if op == "==" else not same
    # ordering: numbers only
    if not (_is_number(left) and _is_number(right)):
        return UNDEFINED
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


def requirement_satisfied(expr: Expr, env: Mapping[str, Value] | None = None) -> bool:
    """True iff the requirement evaluates to boolean true; UNDEFINED and
    non-boolean results do not match."""
    return evaluate(expr, env) is True


# --------------------------------------------------------------------------
# job descriptions

RESERVED_ATTRIBUTES = (
    "Executable", "Arguments", "StdOutput", "StdError", "InputSandbox",
    "OutputSandbox", "Requirements", "Rank", "InputData", "ReplicaCatalog",
    "VirtualOrganisation", "Events", "JobSeed",
)


def strip_lfn_prefix(name: str) -> str:
    return name[4:] if name.startswith("lfn:") else name


@dataclass
class JobDescription:
    """Typed view of one description file.

    `extras` keeps unknown attributes as their verbatim source text, in
    declaration order, so files round-trip through this type unchanged in
    meaning."""

    executable: str
    virtual_organisation: str
    requirements: Expr
    rank: Expr | None = None
    arguments: tuple = ()
    std_output: str = "std.out"
    std_error: str = "std.err"
    input_sandbox: tuple = ()
    output_sandbox: tuple = ()
    input_data: tuple = ()
    replica_catalog: str | None = None
    events: int = 1
    job_seed: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def job_profile(self) -> str:
        """Workload profile name carried in the executable name."""
        stem = self.executable.replace("\\", "/").rsplit("/", 1)[-1]
        return stem.rsplit(".", 1)[0] if "." in stem else stem

    @property
    def input_lfns(self) -> tuple:
        return tuple(strip_lfn_prefix(x) for x in self.input_data)

    def extra_string(self, name: str) -> str | None:
        raw = self.extras.get(name)
        if raw is None:
            return None
        expr = parse_expr(raw)
        if isinstance(expr, Lit) and isinstance(expr.value, str):
            return expr.value
        return None

    def extra_int(self, name: str) -> int | None:
        raw = self.extras.get(name)
        if raw is None:
            return None
        expr = parse_expr(raw)
        if isinstance(expr, Lit) and isinstance(expr.value, int):
            return expr.value
        return None

    def production_tag(self) -> "tuple[str, int] | None":
        """(dataset, job index) when produced by the production factory."""
        dataset = self.extra_string("Dataset")
        index = self.extra_int("JobIndex")
        if dataset is None or index is None:
            return None
        return dataset, index

    def text(self) -> str:
        """Canonical file rendering of this description."""
        lines = [f'Executable = {expr_text(Lit(self.executable))};']
        if self.arguments:
            lines.append(f'Arguments = {expr_text(ListLit(tuple(Lit(a) for a in self.arguments)))};')
        lines.append(f'StdOutput = {expr_text(Lit(self.std_output))};')
        lines.append(f'StdError = {expr_text(Lit(self.std_error))};')
        if self.input_sandbox:
            lines.append(f'InputSandbox = {expr_text(ListLit(tuple(Lit(x) for x in self.input_sandbox)))};')
        if self.output_sandbox:
            lines.append(f'OutputSandbox = {expr_text(ListLit(tuple(Lit(x) for x in self.output_sandbox)))};')
        lines.append(f'Requirements = {expr_text(self.requirements)};')
        if self.rank is not None:
            lines.append(f'Rank = {expr_text(self.rank)};')
        if self.input_data:
            lines.append(f'InputData = {expr_text(ListLit(tuple(Lit(x) for x in self.input_data)))};')
        if self.replica_catalog is not None:
            lines.append(f'ReplicaCatalog = {expr_text(Lit(self.replica_catalog))};')
        lines.append(f'VirtualOrganisation = {expr_text(Lit(self.virtual_organisation))};')
        lines.append(f'Events = {self.events};')
        lines.append(f'JobSeed = {self.job_seed};')
        for name, raw in self.extras.items():
            lines.append(f'{name} = {raw};')
        return "\n".join(lines) + "\n"


def _want_string(name: str, expr: Expr, tok: Token) -> str:
    if isinstance(expr, Lit) and isinstance(expr.value, str):
        return expr.value
    raise JdlError(f"{name} must be a string literal", tok.line, tok.col)


def _want_int(name: str, expr: Expr, tok: Token) -> int:
    if isinstance(expr, Lit) and isinstance(expr.value, int) and not isinstance(expr.value, bool):
        return expr.value
    if isinstance(expr, Unary) and expr.op == "-":
        inner = expr.operand
        if isinstance(inner, Lit) and isinstance(inner.value, int):
            return -inner.value
    raise JdlError(f"{name} must be an integer literal", tok.line, tok.col)


def _want_string_list(name: str, expr: Expr, tok: Token) -> tuple:
    if isinstance(expr, Lit) and isinstance(expr.value, str):
        return (expr.value,)
    if isinstance(expr, ListLit):
        out = []
        for item in expr.items:
            if not (isinstance(item, Lit) and isinstance(item.value, str)):
                raise JdlError(f"{name} entries must be string literals", tok.line, tok.col)
            out.append(item.value)
        return tuple(out)
    raise JdlError(f"{name} must be a list of strings", tok.line, tok.col)


def parse_jdl(text: str) -> JobDescription:
    """Parse and validate one description file."""
    assignments = _Parser(text).parse_file()
    seen: dict[str, tuple[Expr, str, Token]] = {}
    order: list[str] = []
    for name, expr, raw, tok in assignments:
        if name in seen:
            raise JdlSyntaxError(f"duplicate attribute {name}", tok.line, tok.col)
        seen[name] = (expr, raw, tok)
        order.append(name)

    def take(name):
        return seen.pop(name, None)

    for required in ("Executable", "Requirements", "VirtualOrganisation"):
        if required not in seen:
            raise MissingAttribute(required)

    expr, _raw, tok = take("Executable")
    executable = _want_string("Executable", expr, tok)
    requirements = take("Requirements")[0]
    expr, _raw, tok = take("VirtualOrganisation")
    vo = _want_string("VirtualOrganisation", expr, tok)

    jd = JobDescription(executable=executable, virtual_organisation=vo,
                        requirements=requirements)

    if (got := take("Arguments")) is not None:
        jd.arguments = _want_string_list("Arguments", got[0], got[2])
    if (got := take("StdOutput")) is not None:
        jd.std_output = _want_string("StdOutput", got[0], got[2])
    if (got := take("StdError")) is not None:
        jd.std_error = _want_string("StdError", got[0], got[2])
    if (got := take("InputSandbox")) is not None:
        jd.input_sandbox = _want_string_list("InputSandbox", got[0], got[2])
    if (got := take("OutputSandbox")) is not None:
        jd.output_sandbox = _want_string_list("OutputSandbox", got[0], got[2])
    if (got := take("Rank")) is not None:
        jd.rank = got[0]
    if (got := take("InputData")) is not None:
        jd.input_data = _want_string_list("InputData", got[0], got[2])
    if (got := take("ReplicaCatalog")) is not None:
        jd.replica_catalog = _want_string("ReplicaCatalog", got[0], got[2])
    if (got := take("Events")) is not None:
        jd.events = _want_int("Events", got[0], got[2])
        if jd.events < 1:
            raise JdlError("Events must be at least 1", got[2].line, got[2].col)
    if (got := take("JobSeed")) is not None:
        jd.job_seed = _want_int("JobSeed", got[0], got[2])

    for name in order:
        if name in seen:  # whatever was not consumed above
            jd.extras[name] = seen[name][1].strip()

    if jd.input_data and jd.replica_catalog is None:
        raise JdlError("InputData requires a ReplicaCatalog")
    return jd
