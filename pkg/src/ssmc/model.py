"""Core model types: entities, scoped variables and formula expression trees.

A model is a flat list of variables. Each variable is either a scalar or
repeats once per instance of a named entity, and calculated variables carry
an expression tree over the other variables. Everything here is immutable
and purely functional; parsing, validation and evaluation live elsewhere.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Union


class VarKind(Enum):
    INPUT = "input"
    PARAMETER = "param"
    CALCULATED = "calc"


class Format(Enum):
    NONE = "none"
    CURRENCY = "currency"
    PERCENT = "percent"
    COUNT = "count"


class AggregateKind(Enum):
    SUM = "SUM"
    AVERAGE = "AVERAGE"
    MIN = "MIN"
    MAX = "MAX"
    VARIANCE = "VARIANCE"
    STDEV = "STDEV"
    NPV = "NPV"
    IRR = "IRR"


@dataclass(frozen=True)
class Scope:
    """Scalar scope (entity is None) or repeating over a named entity."""

    entity: str | None = None

    @property
    def is_repeating(self) -> bool:
        return self.entity is not None

    def __str__(self) -> str:
        return "scalar" if self.entity is None else f"repeating over {self.entity}"


SCALAR = Scope()


# --- expression trees -------------------------------------------------------

@dataclass(frozen=True)
class NumberLiteral:
    value: float


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class Neg:
    child: "FormulaExpr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "FormulaExpr"
    right: "FormulaExpr"


@dataclass(frozen=True)
class Aggregate:
    kind: AggregateKind
    arg: VarRef  # bare variable reference only
    rate: "FormulaExpr | None" = None  # NPV discount rate, scalar-scoped

    def __post_init__(self):
        if (self.kind is AggregateKind.NPV) != (self.rate is not None):
            raise ValueError("NPV takes a rate expression; other aggregates do not")


FormulaExpr = Union[NumberLiteral, VarRef, Neg, BinOp, Aggregate]

BIN_OPS = ("+", "-", "*", "/", "^")


# --- declarations -----------------------------------------------------------

@dataclass(frozen=True)
class EntityDef:
    """A repeated dimension and the ordered labels of its instances."""

    name: str
    instances: tuple[str, ...]

    def __post_init__(self):
        if not self.instances:
            raise ValueError(f"entity '{self.name}' has no instances")
        if len(set(self.instances)) != len(self.instances):
            raise ValueError(f"entity '{self.name}' has duplicate instance labels")


@dataclass(frozen=True)
class Variable:
    """One model variable.

    `label` is the display name ("Total Demand") and is the variable's
    identity throughout the model layer; `name` is the spreadsheet-safe
    mangling used for workbook defined names. Inputs and parameters store
    their literal value(s) in `values`; calculated variables store a
    `definition` expression instead.
    """

    label: str
    kind: VarKind
    scope: Scope = SCALAR
    format: Format = Format.NONE
    is_output: bool = False
    definition: FormulaExpr | None = None
    values: float | tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind is VarKind.CALCULATED:
            if self.definition is None:
                raise ValueError(f"calculated variable '{self.label}' has no definition")
            if self.values is not None:
                raise ValueError(f"calculated variable '{self.label}' cannot carry values")
        else:
            if self.definition is not None:
                raise ValueError(f"{self.kind.value} variable '{self.label}' cannot have a formula")
            if self.values is None:
                raise ValueError(f"{self.kind.value} variable '{self.label}' needs a value")

    @property
    def name(self) -> str:
        return defined_name(self.label)


@dataclass(frozen=True)
class Model:
    """A parsed formula list: title, entities and variables in declaration order."""

    title: str
    entities: tuple[EntityDef, ...] = ()
    variables: tuple[Variable, ...] = ()

    def __post_init__(self):
        seen: set[str] = set()
        for ent in self.entities:
            if ent.name in seen:
                raise ValueError(f"duplicate entity '{ent.name}'")
            seen.add(ent.name)
        for var in self.variables:
            if var.label in seen:
                raise ValueError(f"duplicate declaration '{var.label}'")
            seen.add(var.label)

    def entity(self, name: str) -> EntityDef:
        for ent in self.entities:
            if ent.name == name:
                return ent
        raise KeyError(name)

    def variable(self, label: str) -> Variable:
        for var in self.variables:
            if var.label == label:
                return var
        raise KeyError(label)

    @property
    def variable_map(self) -> dict[str, Variable]:
        return {var.label: var for var in self.variables}

    @property
    def scopes(self) -> dict[str, Scope]:
        return {var.label: var.scope for var in self.variables}


# --- pure operations on expressions ----------------------------------------

class ScopeError(ValueError):
    """Scope inference failure; `code` names the violated rule."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class InvalidLabelError(ValueError):
    pass


def referenced_names(expr: FormulaExpr) -> list[str]:
    """Every referenced variable, deduplicated, in first-appearance order."""
    out: list[str] = []

    def walk(e: FormulaExpr) -> None:
        match e:
            case NumberLiteral():
                pass
            case VarRef(name):
                if name not in out:
                    out.append(name)
            case Neg(child):
                walk(child)
            case BinOp(_, left, right):
                walk(left)
                walk(right)
            case Aggregate(_, arg, rate):
                if rate is not None:
                    walk(rate)
                walk(arg)

    walk(expr)
    return out


def free_vars(expr: FormulaExpr) -> set[str]:
    """The set of variable names the expression reads."""
    return set(referenced_names(expr))


def operator_count(expr: FormulaExpr) -> int:
    """Number of binary operators plus aggregate calls; unary minus is free."""
    match expr:
        case NumberLiteral() | VarRef():
            return 0
        case Neg(child):
            return operator_count(child)
        case BinOp(_, left, right):
            return 1 + operator_count(left) + operator_count(right)
        case Aggregate(_, _, rate):
            return 1 + (operator_count(rate) if rate is not None else 0)
    raise TypeError(f"not a formula expression: {expr!r}")


def infer_scope(expr: FormulaExpr, env: Mapping[str, Scope]) -> Scope:
    """Infer the scope of an expression given the scopes of its variables.

    Arithmetic broadcasts scalars into repeating operands; aggregates consume
    a repeating argument and yield a scalar. Mixing two entities in one
    expression outside an aggregate is an error, as is aggregating a scalar.
    """
    match expr:
        case NumberLiteral():
            return SCALAR
        case VarRef(name):
            if name not in env:
                raise ScopeError("UnknownVariable", f"unknown variable '{name}'")
            return env[name]
        case Neg(child):
            return infer_scope(child, env)
        case BinOp(op, left, right):
            ls = infer_scope(left, env)
            rs = infer_scope(right, env)
            if ls.is_repeating and rs.is_repeating and ls.entity != rs.entity:
                raise ScopeError(
                    "MixedEntities",
                    f"'{op}' mixes values repeating over '{ls.entity}' and '{rs.entity}'",
                )
            return ls if ls.is_repeating else rs
        case Aggregate(kind, arg, rate):
            inner = infer_scope(arg, env)
            if not inner.is_repeating:
                raise ScopeError(
                    "AggregateOfScalar",
                    f"{kind.value} needs a repeating argument, got scalar '{arg.name}'",
                )
            if rate is not None and infer_scope(rate, env).is_repeating:
                raise ScopeError(
                    "AggregateRateNotScalar",
                    f"{kind.value} rate must be a single value",
                )
            return SCALAR
    raise TypeError(f"not a formula expression: {expr!r}")


_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_CELL_LIKE_RE = re.compile(r"[A-Za-z]{1,3}[0-9]+\Z")
_RESERVED_NAMES = frozenset({"r", "c", "true", "false"})


def defined_name(label: str) -> str:
    """Mangle a display label into a spreadsheet defined name.

    Words are joined with underscores ("Total Demand" -> "Total_Demand").
    Idempotent. Rejects results that are not legal defined names, including
    ones a spreadsheet would read as a cell address ("B2").
    """
    words = label.split()
    if not words:
        raise InvalidLabelError("empty label")
    name = "_".join(words)
    if not _NAME_RE.match(name):
        raise InvalidLabelError(f"label '{label}' does not mangle to a legal name")
    if _CELL_LIKE_RE.match(name):
        raise InvalidLabelError(f"name '{name}' would collide with a cell address")
    if name.lower() in _RESERVED_NAMES:
        raise InvalidLabelError(f"name '{name}' is reserved in spreadsheets")
    return name


# --- canonical rendering ----------------------------------------------------

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}
_NEG_PRECEDENCE = 4


def format_number(value: float) -> str:
    """Shortest exact decimal rendering: integers bare, floats via repr."""
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def format_expr(expr: FormulaExpr) -> str:
    """Render an expression in model syntax with minimal parentheses.

    Re-parsing the result yields a structurally identical tree. Unary minus
    binds tighter than '^' (spreadsheet convention), so `-A ^ B` means
    `(-A) ^ B` and `Neg(A * B)` renders parenthesised.
    """
    return _fmt(expr, 0)


def _fmt(expr: FormulaExpr, min_prec: int) -> str:
    match expr:
        case NumberLiteral(value):
            return format_number(value)
        case VarRef(name):
            return name
        case Neg(child):
            text = "-" + _fmt(child, _NEG_PRECEDENCE)
            return text if _NEG_PRECEDENCE >= min_prec else f"({text})"
        case BinOp(op, left, right):
            prec = _PRECEDENCE[op]
            if op == "^":  # right-associative
                text = f"{_fmt(left, prec + 1)} ^ {_fmt(right, prec)}"
            else:
                text = f"{_fmt(left, prec)} {op} {_fmt(right, prec + 1)}"
            return text if prec >= min_prec else f"({text})"
        case Aggregate(kind, arg, rate):
            if rate is not None:
                return f"{kind.value}({_fmt(rate, 0)}, {arg.name})"
            return f"{kind.value}({arg.name})"
    raise TypeError(f"not a formula expression: {expr!r}")
