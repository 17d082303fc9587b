"""Parser for the property language (a CSL/CTL subset).

Grammar (EBNF; ``{}`` repetition, ``[]`` option)::

    line      = [ name ":" ] property ;
    name      = IDENT | STRING ;
    property  = filter | prob | reward | ctl ;
    filter    = "filter" "(" KIND "," property ")" ;        KIND = count|sum|avg|print
    prob      = "P" ( "=" "?" | ( ">=" | ">" | "<=" | "<" ) NUMBER ) "[" path "]" ;
    reward    = "R" "{" STRING "}" "=" "?" "[" rform "]" ;
    rform     = "C" "<=" time | "I" "=" time | "S" ;
    ctl       = "A" "[" "G" state "]" | "E" "[" "F" state "]" ;
    path      = "X" state
              | ( "F" | "G" ) [ bound ] state
              | state "U" [ bound ] state ;
    bound     = "<=" time | "[" time "," time "]" ;
    time      = NUMBER | IDENT ;
    state     = conj { "|" conj } ;
    conj      = neg { "&" neg } ;
    neg       = "!" neg | atom ;
    atom      = "true" | "false" | STRING | "(" state ")"
              | IDENT ( "=" | "!=" | "<" | "<=" | ">" | ">=" ) ( NUMBER | IDENT ) ;

``!`` binds tighter than ``&``, which binds tighter than ``|``; ``&`` and
``|`` associate to the left, so ``a|b&c`` is ``a|(b&c)``. ``//`` starts a
comment. Identifiers on the right of a comparison or inside a time bound
(``T``, ``state``, ``level`` ...) are parameters resolved at bind time.
The letters ``X F G U`` are operators inside a path and cannot name
variables there.
"""

from __future__ import annotations

import dataclasses
import re
import warnings
from dataclasses import dataclass

Time = float | str      # a literal or a parameter name


class PropertySyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int, expected=()):
        self.line, self.col = line, col
        self.expected = tuple(sorted(set(expected)))
        exp = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"line {line}, column {col}: {message}{exp}")


class BindError(ValueError):
    def __init__(self, names):
        self.names = sorted(set(names))
        super().__init__("unresolved name(s): " + ", ".join(self.names))


# --- AST ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Label:
    name: str


@dataclass(frozen=True)
class Compare:
    var: str
    op: str
    value: int | float | str


@dataclass(frozen=True)
class Not:
    arg: object


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


@dataclass(frozen=True)
class Next:
    arg: object


@dataclass(frozen=True)
class Eventually:
    arg: object
    bound: tuple | None = None      # None, ("<=", t) or ("[]", a, b)


@dataclass(frozen=True)
class Globally:
    arg: object
    bound: tuple | None = None


@dataclass(frozen=True)
class Until:
    left: object
    right: object
    bound: tuple | None = None


@dataclass(frozen=True)
class ProbQuery:
    op: str                  # "=?", ">=", ">", "<=", "<"
    path: object
    p: float | None = None


@dataclass(frozen=True)
class Cumulative:
    t: Time


@dataclass(frozen=True)
class Instantaneous:
    t: Time


@dataclass(frozen=True)
class SteadyState:
    pass


@dataclass(frozen=True)
class RewardQuery:
    structure: str
    form: object


@dataclass(frozen=True)
class Filter:
    kind: str
    inner: object


@dataclass(frozen=True)
class CtlInvariant:
    arg: object


@dataclass(frozen=True)
class CtlReach:
    arg: object


@dataclass(frozen=True)
class NamedProperty:
    name: str | None
    prop: object
    line: int = 1


STATE_NODES = (BoolConst, Label, Compare, Not, And, Or)
FILTER_KINDS = ("count", "sum", "avg", "print")
CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")

# --- lexer -------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<number>-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<string>"[^"\n]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|[=<>?!&|()\[\]{},:])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str        # number, string, ident, op, eof
    text: str
    line: int
    col: int


def tokenize(text: str, first_line: int = 1) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, first_line, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PropertySyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        chunk = m.group()
        if "\n" in chunk:
            line += chunk.count("\n")
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# --- parser ------------------------------------------------------------------------

_PATH_OPS = {"X", "F", "G", "U"}


class _Parser:
    def __init__(self, text: str, first_line: int = 1):
        self.toks = tokenize(text, first_line)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def fail(self, msg, expected=(), tok=None):
        tok = tok or self.tok
        raise PropertySyntaxError(msg, tok.line, tok.col, expected)

    def at(self, text) -> bool:
        return self.tok.kind in ("op", "ident") and self.tok.text == text

    def eat(self, text) -> Token:
        if not self.at(text):
            got = self.tok.text or "end of input"
            self.fail(f"unexpected {got!r}", [text])
        t = self.tok
        self.i += 1
        return t

    def number(self, what="number") -> float:
        if self.tok.kind != "number":
            self.fail(f"malformed {what}: got {self.tok.text or 'end of input'!r}", ["NUMBER"])
        v = float(self.tok.text)
        self.i += 1
        return v

    def time(self) -> Time:
        t = self.tok
        if t.kind == "number":
            v = float(t.text)
            if v < 0:
                self.fail(f"time bound must be nonnegative, got {t.text}")
            self.i += 1
            return v
        if t.kind == "ident" and t.text not in _PATH_OPS:
            self.i += 1
            return t.text
        self.fail(f"malformed time bound: got {t.text or 'end of input'!r}", ["NUMBER", "IDENT"])

    # top level

    def line(self) -> NamedProperty:
        name = None
        first = self.tok
        if first.kind in ("ident", "string") and self.peek().text == ":" and self.peek().kind == "op":
            name = first.text.strip('"')
            self.i += 2
        prop = self.property()
        if self.tok.kind != "eof":
            self.fail(f"unexpected trailing input {self.tok.text!r}", ["end of input"])
        return NamedProperty(name, prop, first.line)

    def property(self):
        t = self.tok
        if t.kind == "ident":
            if t.text == "filter":
                return self.filter()
            if t.text == "P":
                return self.prob()
            if t.text == "R":
                return self.reward()
            if t.text in ("A", "E"):
                return self.ctl()
        self.fail(f"expected a property, got {t.text or 'end of input'!r}", ["filter", "P", "R", "A", "E"])

    def filter(self):
        self.eat("filter")
        self.eat("(")
        kind_tok = self.tok
        if kind_tok.kind != "ident" or kind_tok.text not in FILTER_KINDS:
            self.fail(f"unknown filter kind {kind_tok.text!r}", FILTER_KINDS)
        self.i += 1
        self.eat(",")
        inner = self.property()
        self.eat(")")
        return Filter(kind_tok.text, inner)

    def prob(self):
        self.eat("P")
        t = self.tok
        if self.at("="):
            self.i += 1
            self.eat("?")
            op, p = "=?", None
        elif t.kind == "op" and t.text in (">=", ">", "<=", "<"):
            self.i += 1
            op = t.text
            p = self.number("probability bound")
            if not 0.0 <= p <= 1.0:
                self.fail(f"probability bound {p} outside [0, 1]", tok=t)
        else:
            self.fail("malformed probability operator", ["=", ">=", ">", "<=", "<"])
        self.eat("[")
        path = self.path()
        self.eat("]")
        return ProbQuery(op, path, p)

    def reward(self):
        self.eat("R")
        self.eat("{")
        if self.tok.kind != "string":
            self.fail("expected a quoted reward structure name", ["STRING"])
        name = self.tok.text.strip('"')
        self.i += 1
        self.eat("}")
        self.eat("=")
        self.eat("?")
        self.eat("[")
        if self.at("C"):
            self.i += 1
            self.eat("<=")
            form = Cumulative(self.time())
        elif self.at("I"):
            self.i += 1
            self.eat("=")
            form = Instantaneous(self.time())
        elif self.at("S"):
            self.i += 1
            form = SteadyState()
        else:
            self.fail("expected a reward form", ["C", "I", "S"])
        self.eat("]")
        return RewardQuery(name, form)

    def ctl(self):
        if self.at("A"):
            self.i += 1
            self.eat("[")
            self.eat("G")
            node = CtlInvariant(self.state())
        else:
            self.eat("E")
            self.eat("[")
            self.eat("F")
            node = CtlReach(self.state())
        self.eat("]")
        return node

    def bound(self):
        if self.at("<="):
            self.i += 1
            return ("<=", self.time())
        if self.at("["):
            open_tok = self.tok
            self.i += 1
            a = self.time()
            self.eat(",")
            b = self.time()
            self.eat("]")
            if isinstance(a, float) and isinstance(b, float) and a > b:
                self.fail(f"interval [{a}, {b}] has lower bound above upper bound", tok=open_tok)
            return ("[]", a, b)
        return None

    def path(self):
        if self.at("X"):
            self.i += 1
            return Next(self.state())
        if self.at("F") or self.at("G"):
            op = self.tok.text
            self.i += 1
            b = self.bound()
            arg = self.state()
            return Eventually(arg, b) if op == "F" else Globally(arg, b)
        left = self.state()
        if not self.at("U"):
            self.fail(f"expected a path operator, got {self.tok.text or 'end of input'!r}",
                      ["U", "&", "|"])
        self.i += 1
        b = self.bound()
        return Until(left, self.state(), b)

    def state(self):
        node = self.conj()
        while self.at("|"):
            self.i += 1
            node = Or(node, self.conj())
        return node

    def conj(self):
        node = self.neg()
        while self.at("&"):
            self.i += 1
            node = And(node, self.neg())
        return node

    def neg(self):
        if self.at("!"):
            self.i += 1
            return Not(self.neg())
        return self.atom()

    def atom(self):
        t = self.tok
        if t.kind == "string":
            self.i += 1
            return Label(t.text.strip('"'))
        if self.at("("):
            self.i += 1
            node = self.state()
            self.eat(")")
            return node
        if t.kind == "ident" and t.text in ("true", "false"):
            self.i += 1
            return BoolConst(t.text == "true")
        if t.kind == "ident" and t.text not in _PATH_OPS:
            self.i += 1
            op = self.tok
            if op.kind != "op" or op.text not in CMP_OPS:
                self.fail(f"expected a comparison after {t.text!r}", CMP_OPS)
            self.i += 1
            v = self.tok
            if v.kind == "number":
                value = int(v.text) if re.fullmatch(r"-?\d+", v.text) else float(v.text)
            elif v.kind == "ident" and v.text not in _PATH_OPS:
                value = v.text
            else:
                self.fail(f"expected a value, got {v.text or 'end of input'!r}", ["NUMBER", "IDENT"])
            self.i += 1
            return Compare(t.text, op.text, value)
        self.fail(f"expected a state formula, got {t.text or 'end of input'!r}",
                  ["STRING", "IDENT", "(", "!", "true", "false"])


def parse(text: str):
    """Parse one property (an optional ``name:`` prefix is dropped)."""
    return _Parser(text).line().prop


def parse_named(text: str) -> NamedProperty:
    return _Parser(text).line()


def parse_file(text: str) -> list[NamedProperty]:
    """One property per non-blank, non-comment line."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        code = raw.split("//", 1)[0]
        if not code.strip():
            continue
        named = _Parser(code, lineno).line()
        out.append(dataclasses.replace(named, line=lineno))
    return out


# --- pretty printer -----------------------------------------------------------------

def _num(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _time(t) -> str:
    return t if isinstance(t, str) else _num(float(t))


def _bound(b) -> str:
    if b is None:
        return ""
    if b[0] == "<=":
        return "<=" + _time(b[1])
    return f"[{_time(b[1])},{_time(b[2])}]"


def _state(f) -> str:
    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, Label):
        return f'"{f.name}"'
    if isinstance(f, Compare):
        return f"{f.var}{f.op}{_num(f.value)}"
    if isinstance(f, Not):
        inner = _state(f.arg)
        return "!" + (f"({inner})" if isinstance(f.arg, (And, Or)) else inner)
    if isinstance(f, (And, Or)):
        sym = "&" if isinstance(f, And) else "|"
        parts = []
        for side in (f.left, f.right):
            s = _state(side)
            parts.append(f"({s})" if isinstance(side, (And, Or)) else s)
        return sym.join(parts)
    raise TypeError(f"not a state formula: {f!r}")


def _path(p) -> str:
    if isinstance(p, Next):
        return f"X {_state(p.arg)}"
    if isinstance(p, Eventually):
        return f"F{_bound(p.bound)} {_state(p.arg)}"
    if isinstance(p, Globally):
        return f"G{_bound(p.bound)} {_state(p.arg)}"
    if isinstance(p, Until):
        return f"({_state(p.left)}) U{_bound(p.bound)} ({_state(p.right)})"
    raise TypeError(f"not a path formula: {p!r}")


def unparse(node) -> str:
    if isinstance(node, NamedProperty):
        body = unparse(node.prop)
        return f'"{node.name}": {body}' if node.name else body
    if isinstance(node, ProbQuery):
        head = "P=?" if node.op == "=?" else f"P{node.op}{_num(float(node.p))}"
        return f"{head} [ {_path(node.path)} ]"
    if isinstance(node, RewardQuery):
        f = node.form
        if isinstance(f, Cumulative):
            form = f"C<={_time(f.t)}"
        elif isinstance(f, Instantaneous):
            form = f"I={_time(f.t)}"
        else:
            form = "S"
        return f'R{{"{node.structure}"}}=? [ {form} ]'
    if isinstance(node, Filter):
        return f"filter({node.kind}, {unparse(node.inner)})"
    if isinstance(node, CtlInvariant):
        return f"A[ G {_state(node.arg)} ]"
    if isinstance(node, CtlReach):
        return f"E[ F {_state(node.arg)} ]"
    if isinstance(node, STATE_NODES):
        return _state(node)
    return _path(node)


# --- binding ------------------------------------------------------------------------

BUILTIN_LABELS = ("init",)


@dataclass(frozen=True)
class BoundProperty:
    prop: object
    model: object
    warnings: tuple[str, ...] = ()
    defines: tuple = ()


def parameters(node) -> set[str]:
    """Identifiers that must be supplied as defines (sweep variables etc.)."""
    found = set()

    def walk(n):
        if isinstance(n, Compare):
            if isinstance(n.value, str):
                found.add(n.value)
        elif isinstance(n, (Cumulative, Instantaneous)):
            if isinstance(n.t, str):
                found.add(n.t)
        elif isinstance(n, tuple):
            for x in n[1:]:
                if isinstance(x, str):
                    found.add(x)
        if dataclasses.is_dataclass(n):
            for f in dataclasses.fields(n):
                v = getattr(n, f.name)
                if dataclasses.is_dataclass(v) or isinstance(v, tuple):
                    walk(v)

    walk(node)
    return found


def _substitute(node, defines, missing, problems, model):
    if isinstance(node, tuple):
        out = [node[0]]
        for x in node[1:]:
            if isinstance(x, str):
                if x in defines:
                    x = float(defines[x])
                else:
                    missing.add(x)
            out.append(x)
        return tuple(out)
    if isinstance(node, Label):
        if node.name not in model.labels and node.name not in BUILTIN_LABELS:
            missing.add(f'"{node.name}"')
        return node
    if isinstance(node, Compare):
        value = node.value
        if isinstance(value, str):
            if value in defines:
                value = defines[value]
                value = int(value) if float(value).is_integer() else float(value)
            else:
                missing.add(value)
        if node.var not in model.variables:
            missing.add(node.var)
        elif not isinstance(value, str):
            lo, hi = model.domains[node.var]
            if node.op == "=" and not lo <= value <= hi:
                problems.append(f"{node.var}={value} lies outside the domain {lo}..{hi}; "
                                "the comparison is always false")
        return Compare(node.var, node.op, value)
    if isinstance(node, (Cumulative, Instantaneous)):
        t = node.t
        if isinstance(t, str):
            if t in defines:
                t = float(defines[t])
            else:
                missing.add(t)
        return type(node)(t)
    if isinstance(node, RewardQuery):
        if node.structure not in model.rewards:
            missing.add(f'{{"{node.structure}"}}')
    if dataclasses.is_dataclass(node):
        changes = {}
        for f in dataclasses.fields(node):
            v = getattr(node, f.name)
            if dataclasses.is_dataclass(v) or isinstance(v, tuple):
                changes[f.name] = _substitute(v, defines, missing, problems, model)
        node = dataclasses.replace(node, **changes) if changes else node
        if isinstance(node, (Eventually, Globally, Until)) and node.bound and node.bound[0] == "[]":
            a, b = node.bound[1], node.bound[2]
            if isinstance(a, float) and isinstance(b, float) and a > b:
                problems.append(f"interval [{a}, {b}] is empty")
    return node


def bind(prop, model, defines: dict | None = None) -> BoundProperty:
    """Resolve labels, variables and parameters of ``prop`` against ``model``.

    Raises :class:`BindError` listing every unresolved name. Comparisons of a
    variable with a constant outside its domain are kept (they are false in
    every state) and reported as warnings.
    """
    if isinstance(prop, NamedProperty):
        prop = prop.prop
    defines = dict(defines or {})
    missing: set[str] = set()
    problems: list[str] = []
    bound = _substitute(prop, defines, missing, problems, model)
    if missing:
        raise BindError(missing)
    for msg in problems:
        warnings.warn(msg, stacklevel=2)
    return BoundProperty(bound, model, tuple(problems), tuple(sorted(defines.items())))
