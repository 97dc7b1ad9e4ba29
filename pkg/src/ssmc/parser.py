"""Parser for the textual model DSL.

Grammar (see README for the full reference):

    model      := "model" STRING decl*
    decl       := entity | input | param | calc | output
    entity     := "entity" NAME "=" "[" label ("," label)* "]"
    input      := "input" varname fmt? "=" NUMBER
    param      := "param" varname fmt? ("over" NAME)? "=" (NUMBER | "[" NUMBER ("," NUMBER)* "]")
    calc       := "calc"   varname fmt? ("over" NAME)? "=" expr
    output     := "output" varname fmt? ("over" NAME)? "=" expr
    fmt        := ":" ("currency" | "percent" | "count")

Variable names may contain spaces; they parse greedily up to the next
operator or keyword, which is why the keywords are reserved. Numbers accept
`_` digit separators and a `%` suffix (divides by 100). Comments run from
`#` to end of line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .model import (
    Aggregate,
    AggregateKind,
    BinOp,
    EntityDef,
    Format,
    FormulaExpr,
    Model,
    Neg,
    NumberLiteral,
    SCALAR,
    Scope,
    VarKind,
    VarRef,
    Variable,
    format_expr,
    format_number,
)

KEYWORDS = frozenset({"model", "entity", "input", "param", "calc", "output", "over"})
DECL_KEYWORDS = frozenset({"entity", "input", "param", "calc", "output"})

_FORMATS = {"currency": Format.CURRENCY, "percent": Format.PERCENT, "count": Format.COUNT}
_AGGREGATES = {kind.value: kind for kind in AggregateKind}


@dataclass(frozen=True)
class SourceSpan:
    line: int  # 1-based
    column: int  # 1-based
    length: int = 1

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


class ParseError(Exception):
    """A syntax error with its source location.

    `code` tags machine-recognisable cases (arity and duplicate checks the
    parser can already see); plain syntax errors carry the default code.
    """

    def __init__(self, span: SourceSpan, message: str, expected: str | None = None,
                 code: str = "Syntax"):
        super().__init__(f"{span}: {message}")
        self.span = span
        self.message = message
        self.expected = expected
        self.code = code


class ParseFailure(Exception):
    """Raised by parse_model; carries every ParseError found in the source."""

    def __init__(self, errors: list[ParseError]):
        super().__init__(f"{len(errors)} syntax error(s)")
        self.errors = list(errors)


# --- tokenizer ---------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # name | number | string | punct | eof
    text: str
    value: float | str | None
    span: SourceSpan


_TOKEN_RE = re.compile(
    r"""
      (?P<ws>[ \t\r\n]+)
    | (?P<comment>\#[^\n]*)
    | (?P<number>\d[\d_]*(?:\.[\d_]*)?%?)
    | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<string>"[^"\n]*")
    | (?P<badstring>"[^"\n]*)
    | (?P<punct>[=\[\](),:+\-*/^])
    """,
    re.VERBOSE,
)


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, line_start = 1, 0
    pos = 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        span = SourceSpan(line, pos - line_start + 1)
        if m is None:
            raise ParseError(span, f"unexpected character {source[pos]!r}")
        text = m.group(0)
        kind = m.lastgroup or ""
        if kind == "ws" or kind == "comment":
            pass
        elif kind == "badstring":
            raise ParseError(span, "unterminated string")
        elif kind == "number":
            end = m.end()
            if end < n and (source[end].isdigit() or source[end] == "."):
                raise ParseError(SourceSpan(line, span.column, end - pos + 1), f"malformed number {text!r}")
            digits = text.replace("_", "")
            percent = digits.endswith("%")
            if percent:
                digits = digits[:-1]
            try:
                value = float(digits)
            except ValueError:
                raise ParseError(SourceSpan(line, span.column, len(text)), f"malformed number {text!r}") from None
            tokens.append(_Token("number", text, value / 100 if percent else value,
                                 SourceSpan(line, span.column, len(text))))
        elif kind == "string":
            tokens.append(_Token("string", text, text[1:-1], SourceSpan(line, span.column, len(text))))
        else:
            tokens.append(_Token(kind, text, None, SourceSpan(line, span.column, len(text))))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(_Token("eof", "", None, SourceSpan(line, n - line_start + 1, 0)))
    return tokens


# --- parser -------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.peek()
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def error(self, message: str, tok: _Token | None = None, expected: str | None = None,
              code: str = "Syntax") -> ParseError:
        tok = tok or self.peek()
        return ParseError(tok.span, message, expected=expected, code=code)

    def expect_punct(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != text:
            raise self.error(f"expected '{text}'", expected=f"'{text}'")
        return self.next()

    def at_punct(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.text == text

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "name" and tok.text == word

    def at_any_keyword(self) -> bool:
        tok = self.peek()
        return tok.kind == "name" and tok.text in KEYWORDS

    # names ------------------------------------------------------------------

    def parse_word(self, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != "name" or tok.text in KEYWORDS:
            raise self.error(f"expected {what}", expected=what)
        return self.next()

    def parse_varname(self) -> tuple[str, SourceSpan]:
        """Greedy multi-word name; words join with single spaces."""
        first = self.parse_word("a variable name")
        words = [first.text]
        while self.peek().kind == "name" and not self.at_any_keyword():
            words.append(self.next().text)
        return " ".join(words), first.span

    # expressions --------------------------------------------------------------

    def parse_expr(self) -> FormulaExpr:
        return self.parse_sum()

    def parse_sum(self) -> FormulaExpr:
        left = self.parse_term()
        while self.peek().kind == "punct" and self.peek().text in "+-":
            op = self.next().text
            left = BinOp(op, left, self.parse_term())
        return left

    def parse_term(self) -> FormulaExpr:
        left = self.parse_power()
        while self.peek().kind == "punct" and self.peek().text in "*/":
            op = self.next().text
            left = BinOp(op, left, self.parse_power())
        return left

    def parse_power(self) -> FormulaExpr:
        base = self.parse_unary()
        if self.at_punct("^"):
            self.next()
            return BinOp("^", base, self.parse_power())  # right-associative
        return base

    def parse_unary(self) -> FormulaExpr:
        if self.at_punct("-"):
            self.next()
            return Neg(self.parse_unary())
        return self.parse_primary()

    def parse_primary(self) -> FormulaExpr:
        tok = self.peek()
        if tok.kind == "number":
            self.next()
            return NumberLiteral(float(tok.value))
        if tok.kind == "punct" and tok.text == "(":
            self.next()
            inner = self.parse_expr()
            self.expect_punct(")")
            return inner
        if tok.kind == "name" and tok.text not in KEYWORDS:
            name, span = self.parse_varname()
            if self.at_punct("("):
                if " " in name or name not in _AGGREGATES:
                    raise self.error(f"unknown function name '{name}'", tok=tok)
                return self.parse_aggregate(_AGGREGATES[name])
            return VarRef(name)
        raise self.error(f"expected an expression, found {tok.text!r}" if tok.kind != "eof"
                         else "expected an expression, found end of input")

    def parse_aggregate(self, kind: AggregateKind) -> Aggregate:
        self.expect_punct("(")
        rate: FormulaExpr | None = None
        if kind is AggregateKind.NPV:
            rate = self.parse_expr()
            self.expect_punct(",")
        arg_tok = self.peek()
        name, _ = self.parse_varname()
        if not self.at_punct(")"):
            raise self.error("aggregate argument must be a variable name", tok=arg_tok)
        self.next()
        return Aggregate(kind, VarRef(name), rate)

    # values -------------------------------------------------------------------

    def parse_number(self) -> float:
        sign = 1.0
        if self.at_punct("-"):
            self.next()
            sign = -1.0
        tok = self.peek()
        if tok.kind != "number":
            raise self.error("expected a number", expected="a number")
        self.next()
        return sign * float(tok.value)

    def parse_number_list(self) -> list[float]:
        self.expect_punct("[")
        values = [self.parse_number()]
        while self.at_punct(","):
            self.next()
            values.append(self.parse_number())
        self.expect_punct("]")
        return values


def parse_expr(source: str) -> FormulaExpr:
    """Parse a standalone expression; raises ParseError."""
    parser = _Parser(_tokenize(source))
    expr = parser.parse_expr()
    trailing = parser.peek()
    if trailing.kind != "eof":
        raise parser.error(f"unexpected {trailing.text!r} after expression")
    return expr


class _ModelBuilder:
    """Accumulates declarations and the scope needed for contextual checks."""

    def __init__(self):
        self.title = ""
        self.entities: list[EntityDef] = []
        self.variables: list[Variable] = []
        self.declared: dict[str, SourceSpan] = {}

    def check_fresh(self, name: str, span: SourceSpan) -> None:
        if name in self.declared:
            raise ParseError(span, f"duplicate declaration '{name}' (first declared at {self.declared[name]})",
                             code="DuplicateDeclaration")
        self.declared[name] = span

    def entity(self, name: str) -> EntityDef | None:
        for ent in self.entities:
            if ent.name == name:
                return ent
        return None


def _instance_label(parser: _Parser) -> str:
    words = [parser.parse_word("an instance label").text]
    while parser.peek().kind == "name" and not parser.at_any_keyword():
        words.append(parser.next().text)
    return " ".join(words)


def parse_model(source: str) -> Model:
    """Parse a full model; raises ParseFailure listing every error found.

    Recovery is per declaration: a bad declaration is reported and skipped,
    and parsing resumes at the next declaration keyword, so one typo does
    not hide later errors. A model is only returned when there are none.
    """
    errors: list[ParseError] = []
    builder = _ModelBuilder()
    try:
        parser = _Parser(_tokenize(source))
    except ParseError as err:
        raise ParseFailure([err]) from None

    if parser.at_keyword("model"):
        parser.next()
        title_tok = parser.peek()
        if title_tok.kind == "string":
            parser.next()
            builder.title = str(title_tok.value)
        else:
            errors.append(parser.error("expected a quoted model title", expected="a string"))
    else:
        errors.append(parser.error("expected 'model'", expected="keyword 'model'"))
        _skip_to_decl(parser)

    while parser.peek().kind != "eof":
        tok = parser.peek()
        if tok.kind != "name" or tok.text not in DECL_KEYWORDS:
            errors.append(parser.error(
                f"expected a declaration keyword, found {tok.text!r}",
                expected="one of entity/input/param/calc/output"))
            parser.next()
            _skip_to_decl(parser)
            continue
        try:
            _declaration(parser, builder)
        except ParseError as err:
            errors.append(err)
            _skip_to_decl(parser)

    if errors:
        raise ParseFailure(errors)
    return Model(builder.title, tuple(builder.entities), tuple(builder.variables))


def _skip_to_decl(parser: _Parser) -> None:
    while parser.peek().kind != "eof":
        tok = parser.peek()
        if tok.kind == "name" and tok.text in DECL_KEYWORDS:
            return
        parser.next()


def _declaration(parser: _Parser, builder: _ModelBuilder) -> None:
    keyword = parser.next().text

    if keyword == "entity":
        name_tok = parser.parse_word("an entity name")
        builder.check_fresh(name_tok.text, name_tok.span)
        parser.expect_punct("=")
        parser.expect_punct("[")
        labels = [_instance_label(parser)]
        while parser.at_punct(","):
            parser.next()
            labels.append(_instance_label(parser))
        parser.expect_punct("]")
        if len(set(labels)) != len(labels):
            raise ParseError(name_tok.span, f"entity '{name_tok.text}' has duplicate instance labels",
                             code="DuplicateDeclaration")
        builder.entities.append(EntityDef(name_tok.text, tuple(labels)))
        return

    label, span = parser.parse_varname()
    builder.check_fresh(label, span)

    fmt = Format.NONE
    if parser.at_punct(":"):
        parser.next()
        fmt_tok = parser.parse_word("a format (currency, percent or count)")
        if fmt_tok.text not in _FORMATS:
            raise ParseError(fmt_tok.span, f"unknown format '{fmt_tok.text}'")
        fmt = _FORMATS[fmt_tok.text]

    scope = SCALAR
    entity: EntityDef | None = None
    if parser.at_keyword("over"):
        if keyword == "input":
            raise parser.error("inputs cannot repeat over an entity")
        parser.next()
        ent_tok = parser.parse_word("an entity name")
        entity = builder.entity(ent_tok.text)
        if entity is None:
            raise ParseError(ent_tok.span, f"unknown entity '{ent_tok.text}'")
        scope = Scope(entity.name)

    parser.expect_punct("=")

    if keyword == "input":
        value = parser.parse_number()
        builder.variables.append(Variable(label, VarKind.INPUT, SCALAR, fmt, values=value))
    elif keyword == "param":
        if parser.at_punct("[") or scope.is_repeating:
            list_tok = parser.peek()
            values = parser.parse_number_list()
            if entity is None:
                raise ParseError(list_tok.span, f"parameter '{label}' has a value list but no 'over' entity",
                                 code="ParamArity")
            if len(values) != len(entity.instances):
                raise ParseError(
                    list_tok.span,
                    f"parameter '{label}' has {len(values)} value(s) for the "
                    f"{len(entity.instances)} instance(s) of '{entity.name}'",
                    code="ParamArity")
            builder.variables.append(Variable(label, VarKind.PARAMETER, scope, fmt, values=tuple(values)))
        else:
            value = parser.parse_number()
            builder.variables.append(Variable(label, VarKind.PARAMETER, SCALAR, fmt, values=value))
    else:  # calc / output
        expr = parser.parse_expr()
        builder.variables.append(Variable(label, VarKind.CALCULATED, scope, fmt,
                                          is_output=(keyword == "output"), definition=expr))


# --- canonical source rendering ----------------------------------------------

def format_model(model: Model) -> str:
    """Render a model back to DSL source; re-parsing yields an equal Model."""
    lines = [f'model "{model.title}"']
    for ent in model.entities:
        lines.append(f"entity {ent.name} = [{', '.join(ent.instances)}]")
    for var in model.variables:
        fmt = "" if var.format is Format.NONE else f" : {var.format.value}"
        over = f" over {var.scope.entity}" if var.scope.is_repeating else ""
        if var.kind is VarKind.INPUT:
            lines.append(f"input {var.label}{fmt} = {format_number(var.values)}")
        elif var.kind is VarKind.PARAMETER:
            if isinstance(var.values, tuple):
                body = "[" + ", ".join(format_number(v) for v in var.values) + "]"
            else:
                body = format_number(var.values)
            lines.append(f"param {var.label}{fmt}{over} = {body}")
        else:
            keyword = "output" if var.is_output else "calc"
            lines.append(f"{keyword} {var.label}{fmt}{over} = {format_expr(var.definition)}")
    return "\n".join(lines) + "\n"
