"""Recursive-descent parser for the supported PRISM subset.

Supported: one ``mdp`` module with bounded integer and boolean variables,
labelled guarded commands, constants, labels and (opaque) reward blocks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from .expr import (
    FUNCTIONS,
    REL_OPS,
    Binary,
    BoolLit,
    Call,
    Cond,
    EvalError,
    Expr,
    Ident,
    Num,
    Unary,
    evaluate,
    identifiers,
)
from .model import (
    Command,
    ConstantDef,
    LabelDef,
    ModelError,
    RewardDef,
    SymbolicModel,
    Update,
    VariableDecl,
)

MAX_DEPTH = 50  # each level costs about a dozen Python frames

KEYWORDS = {
    "mdp", "dtmc", "ctmc", "pta", "probabilistic", "nondeterministic", "stochastic",
    "const", "int", "double", "bool", "module", "endmodule", "label", "rewards",
    "endrewards", "init", "endinit", "true", "false", "formula", "global", "system",
    "endsystem",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<number>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"\n]*")
  | (?P<op><=>|=>|->|\.\.|<=|>=|!=|[\[\](){};:,+\-*/=<>&|!'?])
    """,
    re.VERBOSE,
)


class ParseError(ModelError):
    """Syntax error with a 1-based source position and the tokens that would have fit."""

    def __init__(self, message: str, line: int, column: int, expected: tuple[str, ...] = ()):
        self.message = message
        self.line = line
        self.column = column
        self.expected = expected
        text = f"{line}:{column}: {message}"
        if expected:
            text += f" (expected {', '.join(expected)})"
        super().__init__(text)


@dataclass(frozen=True)
class Token:
    kind: str  # "number", "ident", "keyword", "string", "op", "eof"
    text: str
    line: int
    column: int
    offset: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            if kind == "ident" and chunk in KEYWORDS:
                kind = "keyword"
            tokens.append(Token(kind, chunk, line, pos - line_start + 1, pos))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1, pos))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.depth = 0

    # -- token helpers --

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, *expected: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.column, expected)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "keyword")

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            tok = self.tok
            self.i += 1
            return tok
        return None

    def expect(self, text: str) -> Token:
        tok = self.accept(text)
        if tok is None:
            shown = self.tok.text or "end of input"
            raise self.error(f"unexpected {shown!r}", repr(text))
        return tok

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            shown = self.tok.text or "end of input"
            raise self.error(f"unexpected {shown!r}", "identifier")
        tok = self.tok
        self.i += 1
        return tok

    # -- program --

    def program(self) -> SymbolicModel:
        if self.tok.kind == "keyword" and self.tok.text in ("dtmc", "ctmc", "pta", "probabilistic", "stochastic"):
            raise self.error(f"model type {self.tok.text!r} is not supported; only mdp models are accepted")
        if not (self.accept("mdp") or self.accept("nondeterministic")):
            raise self.error("missing model type", "'mdp'")
        constants: list[ConstantDef] = []
        labels: list[LabelDef] = []
        rewards: list[RewardDef] = []
        module = None
        while self.tok.kind != "eof":
            if self.at("const"):
                constants.append(self.constant())
            elif self.at("module"):
                if module is not None:
                    raise self.error("only one module is supported")
                module = self.module()
            elif self.at("label"):
                labels.append(self.label())
            elif self.at("rewards"):
                rewards.append(self.rewards())
            elif self.tok.kind == "keyword" and self.tok.text in ("formula", "global", "init", "system"):
                raise self.error(f"'{self.tok.text}' blocks are not supported")
            else:
                shown = self.tok.text or "end of input"
                raise self.error(f"unexpected {shown!r}", "'const'", "'module'", "'label'", "'rewards'")
        if module is None:
            raise self.error("model has no module", "'module'")
        name, variables, commands = module
        return SymbolicModel(
            module_name=name,
            constants=tuple(constants),
            variables=tuple(variables),
            commands=tuple(commands),
            labels=tuple(labels),
            rewards=tuple(rewards),
        )

    def constant(self) -> ConstantDef:
        self.expect("const")
        ctype = "int"
        for t in ("int", "double", "bool"):
            if self.accept(t):
                ctype = t
                break
        name = self.ident().text
        value = None
        if self.accept("="):
            value = self.expr()
        self.expect(";")
        return ConstantDef(name, ctype, value)

    def module(self):
        self.expect("module")
        name = self.ident().text
        variables: list[VariableDecl] = []
        commands: list[Command] = []
        while not self.at("endmodule"):
            if self.tok.kind == "ident":
                variables.append(self.variable())
            elif self.at("["):
                commands.append(self.command())
            else:
                shown = self.tok.text or "end of input"
                raise self.error(f"unexpected {shown!r}", "variable declaration", "'['", "'endmodule'")
        self.expect("endmodule")
        return name, variables, commands

    def variable(self) -> VariableDecl:
        name = self.ident().text
        self.expect(":")
        if self.accept("bool"):
            init = None
            if self.accept("init"):
                init = self.expr()
            self.expect(";")
            return VariableDecl(name, Num(0), Num(1), init, is_bool=True)
        if self.at("int"):
            raise self.error("unbounded int variables are not supported", "'['")
        self.expect("[")
        lower = self.expr()
        self.expect("..")
        upper = self.expr()
        self.expect("]")
        init = None
        if self.accept("init"):
            init = self.expr()
        self.expect(";")
        return VariableDecl(name, lower, upper, init)

    def command(self) -> Command:
        start = self.expect("[")
        if self.at("]"):
            raise self.error("unlabelled commands are not supported; every command needs an action name", "identifier")
        action = self.ident().text
        self.expect("]")
        guard = self.expr()
        self.expect("->")
        branches = [self.update()]
        while self.accept("+"):
            branches.append(self.update())
        self.expect(";")
        return Command(action, guard, tuple(branches), line=start.line)

    def update(self) -> Update:
        # a bare assignment list (or "true") means probability 1
        prob: Expr = Num(1)
        if not self._starts_assignments():
            prob = self.expr()
            self.expect(":")
        return Update(prob, tuple(self.assignments()))

    def _starts_assignments(self) -> bool:
        t0 = self.tokens[self.i]
        if t0.text == "true" and t0.kind == "keyword":
            return True
        if t0.text == "(" and self.i + 2 < len(self.tokens):
            t1, t2 = self.tokens[self.i + 1], self.tokens[self.i + 2]
            return t1.kind == "ident" and t2.text == "'"
        return False

    def assignments(self) -> list[tuple[str, Expr]]:
        if self.accept("true"):
            return []
        out: list[tuple[str, Expr]] = []
        seen: set[str] = set()
        while True:
            self.expect("(")
            tok = self.ident()
            self.expect("'")
            self.expect("=")
            value = self.expr()
            self.expect(")")
            if tok.text in seen:
                raise self.error(f"variable {tok.text!r} assigned twice in one update", tok=tok)
            seen.add(tok.text)
            out.append((tok.text, value))
            if not self.accept("&"):
                return out

    def label(self) -> LabelDef:
        self.expect("label")
        tok = self.tok
        if tok.kind != "string":
            raise self.error("label name must be a quoted string", "string")
        self.i += 1
        name = tok.text[1:-1]
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise self.error(f"invalid label name {name!r}", tok=tok)
        self.expect("=")
        cond = self.expr()
        self.expect(";")
        return LabelDef(name, cond)

    def rewards(self) -> RewardDef:
        head = self.expect("rewards")
        name = None
        if self.tok.kind == "string":
            name = self.tok.text[1:-1]
            self.i += 1
        body_start = self.tokens[self.i - 1].offset + len(self.tokens[self.i - 1].text)
        while not self.at("endrewards"):
            if self.tok.kind == "eof":
                raise self.error("unterminated rewards block", "'endrewards'", tok=head)
            self.i += 1
        end = self.expect("endrewards")
        return RewardDef(name, self.text[body_start:end.offset])

    # -- expressions, loosest binding first --

    def expr(self) -> Expr:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise self.error("expression nested too deeply")
        try:
            return self.ternary()
        finally:
            self.depth -= 1

    def ternary(self) -> Expr:
        start = self.tok
        cond = self.binary_level(0)
        if self.accept("?"):
            then = self.expr()
            self.expect(":")
            other = self.expr()
            return Cond(cond, then, other, (start.line, start.column))
        return cond

    _LEVELS = (("=>",), ("<=>",), ("|",), ("&",))

    def binary_level(self, level: int) -> Expr:
        if level == len(self._LEVELS):
            return self.negation()
        left = self.binary_level(level + 1)
        while self.tok.kind == "op" and self.tok.text in self._LEVELS[level]:
            op = self.tok
            self.i += 1
            right = self.binary_level(level + 1)
            left = Binary(op.text, left, right, (op.line, op.column))
        return left

    def negation(self) -> Expr:
        if self.at("!"):
            op = self.tok
            self.i += 1
            self.depth += 1
            if self.depth > MAX_DEPTH:
                raise self.error("expression nested too deeply")
            try:
                return Unary("!", self.negation(), (op.line, op.column))
            finally:
                self.depth -= 1
        return self.relation()

    def relation(self) -> Expr:
        left = self.additive()
        if self.tok.kind == "op" and self.tok.text in REL_OPS:
            op = self.tok
            self.i += 1
            right = self.additive()
            return Binary(op.text, left, right, (op.line, op.column))
        return left

    def additive(self) -> Expr:
        left = self.multiplicative()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.tok
            self.i += 1
            left = Binary(op.text, left, self.multiplicative(), (op.line, op.column))
        return left

    def multiplicative(self) -> Expr:
        left = self.unary_minus()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.tok
            self.i += 1
            left = Binary(op.text, left, self.unary_minus(), (op.line, op.column))
        return left

    def unary_minus(self) -> Expr:
        if self.at("-"):
            op = self.tok
            self.i += 1
            self.depth += 1
            if self.depth > MAX_DEPTH:
                raise self.error("expression nested too deeply")
            try:
                return Unary("-", self.unary_minus(), (op.line, op.column))
            finally:
                self.depth -= 1
        return self.atom()

    def atom(self) -> Expr:
        tok = self.tok
        where = (tok.line, tok.column)
        if tok.kind == "number":
            self.i += 1
            if any(c in tok.text for c in ".eE"):
                return Num(Fraction(tok.text), where)
            return Num(int(tok.text), where)
        if tok.kind == "keyword" and tok.text in ("true", "false"):
            self.i += 1
            return BoolLit(tok.text == "true", where)
        if tok.kind == "ident":
            self.i += 1
            if tok.text in FUNCTIONS and self.at("("):
                return self.call(tok)
            return Ident(tok.text, where)
        if self.accept("("):
            inner = self.expr()
            self.expect(")")
            return inner
        shown = tok.text or "end of input"
        raise self.error(f"unexpected {shown!r}", "number", "identifier", "'('", "'true'", "'false'")

    def call(self, name: Token) -> Expr:
        self.expect("(")
        args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name.text]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise self.error(f"wrong number of arguments to {name.text}()", tok=name)
        return Call(name.text, tuple(args), (name.line, name.column))


def _check_names(model: SymbolicModel) -> None:
    """Enforce unique names and that every identifier resolves."""
    seen: dict[str, str] = {}
    for kind, name in (
        [("constant", c.name) for c in model.constants]
        + [("variable", v.name) for v in model.variables]
    ):
        if name in seen:
            raise ModelError(f"duplicate identifier {name!r} ({seen[name]} and {kind})")
        seen[name] = kind
    labels: set[str] = set()
    for lab in model.labels:
        if lab.name in labels:
            raise ModelError(f"duplicate label {lab.name!r}")
        if lab.name == "init":
            raise ModelError("label name 'init' is reserved")
        labels.add(lab.name)
    actions = set(model.actions)
    clash = actions & seen.keys()
    if clash:
        raise ModelError(f"action name clashes with identifier: {sorted(clash)[0]!r}")

    const_names: set[str] = set()
    for c in model.constants:
        if c.value is not None:
            unknown = identifiers(c.value) - const_names
            if unknown:
                raise ModelError(f"unknown identifier {sorted(unknown)[0]!r} in constant {c.name!r}")
        const_names.add(c.name)
    everything = set(seen)
    for v in model.variables:
        for e in (v.lower, v.upper, v.init):
            if e is not None and identifiers(e) - const_names:
                bad = sorted(identifiers(e) - const_names)[0]
                raise ModelError(f"unknown constant {bad!r} in declaration of {v.name!r}")
    variables = set(model.variable_names)
    for cmd in model.commands:
        where = f" (line {cmd.line})" if cmd.line else ""
        exprs = [cmd.guard]
        for b in cmd.branches:
            exprs.append(b.prob)
            for target, e in b.assignments:
                if target not in variables:
                    raise ModelError(f"assignment to unknown variable {target!r}{where}")
                exprs.append(e)
        for e in exprs:
            unknown = identifiers(e) - everything
            if unknown:
                raise ModelError(f"unknown identifier {sorted(unknown)[0]!r}{where}")
    for lab in model.labels:
        unknown = identifiers(lab.condition) - everything
        if unknown:
            raise ModelError(f"unknown identifier {sorted(unknown)[0]!r} in label {lab.name!r}")


def _check_inits(model: SymbolicModel) -> None:
    env = model.constant_values()
    for v in model.variables:
        parts = [v.lower, v.upper] + ([v.init] if v.init is not None else [])
        if any(identifiers(e) - env.keys() for e in parts):
            continue  # depends on a constant that is not yet defined
        try:
            lo, hi = evaluate(v.lower, env), evaluate(v.upper, env)
            init = lo if v.init is None else evaluate(v.init, env)
        except EvalError as exc:
            raise ModelError(f"cannot evaluate declaration of {v.name!r}: {exc}") from exc
        if lo > hi:
            raise ModelError(f"variable {v.name!r} has empty range [{lo}..{hi}]")
        if not lo <= init <= hi:
            raise ModelError(f"initial value {init} of {v.name!r} outside [{lo}..{hi}]")


def parse_model(text: Union[str, bytes]) -> SymbolicModel:
    """Parse PRISM-subset source text into a :class:`SymbolicModel`.

    Raises :class:`ParseError` for syntax errors and :class:`ModelError` for
    duplicate or unknown identifiers and out-of-range initial values.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8: {exc.reason}", 1, exc.start + 1) from exc
    try:
        model = _Parser(text).program()
    except RecursionError:
        raise ParseError("expression nested too deeply", 1, 1) from None
    _check_names(model)
    try:
        _check_inits(model)
    except EvalError as exc:
        raise ModelError(str(exc)) from exc
    return model
