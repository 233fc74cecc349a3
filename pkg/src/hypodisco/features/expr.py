"""A small, closed expression language for derived columns.

Expressions are parsed with :mod:`ast` and only a whitelisted subset is
accepted: numeric literals, column names (or ``col("name with spaces")``),
arithmetic, comparisons (yielding 0/1), ``and``/``or``/``not`` and the
functions ``log``, ``log1p``, ``abs``, ``bin(x, [edges])`` and
``time_delta(a, b, unit)``. Comparisons of a categorical column against a
string literal are allowed with ``==`` and ``!=``.
"""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from ..dataset import ColumnKind

TIME_UNITS = {"seconds": 1.0, "minutes": 60.0, "hours": 3600.0, "days": 86400.0}
_FUNCTIONS = ("log", "log1p", "abs", "bin", "time_delta", "col")

_BINOPS: dict[type, Callable[[Any, Any], Any]] = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_CMPOPS: dict[type, Callable[[Any, Any], Any]] = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
}


class ExpressionError(ValueError):
    """An expression is outside the allowed language or ill-typed."""


@dataclass(frozen=True)
class _Str:
    # string literal operand, only legal inside categorical comparisons
    value: str


def _column_name(node: ast.AST) -> str | None:
    if isinstance(node, ast.Name):
        return node.id
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id == "col"
        and len(node.args) == 1
        and not node.keywords
        and isinstance(node.args[0], ast.Constant)
        and isinstance(node.args[0].value, str)
    ):
        return node.args[0].value
    return None


class Expression:
    """A parsed derived-column expression."""

    def __init__(self, source: str):
        self.source = source
        try:
            self._tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {source!r}: {exc.msg}") from None
        self._check(self._tree.body)
        self.columns: tuple[str, ...] = tuple(sorted(self._collect(self._tree.body)))

    # static structure -----------------------------------------------------

    def _check(self, node: ast.AST) -> None:
        if _column_name(node) is not None:
            return
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float, str)):
                raise ExpressionError(f"literal {node.value!r} is not allowed")
            return
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator {type(node.op).__name__} is not allowed")
            self._check(node.left)
            self._check(node.right)
            return
        if isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd, ast.Not)):
                raise ExpressionError(f"operator {type(node.op).__name__} is not allowed")
            self._check(node.operand)
            return
        if isinstance(node, ast.BoolOp):
            for v in node.values:
                self._check(v)
            return
        if isinstance(node, ast.Compare):
            for op in node.ops:
                if type(op) not in _CMPOPS:
                    raise ExpressionError(f"comparison {type(op).__name__} is not allowed")
            for v in (node.left, *node.comparators):
                self._check(v)
            return
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
                raise ExpressionError(f"only the functions {list(_FUNCTIONS[:-1])} are allowed")
            if node.keywords:
                raise ExpressionError("keyword arguments are not allowed")
            name = node.func.id
            if name in ("log", "log1p", "abs") and len(node.args) != 1:
                raise ExpressionError(f"{name} takes one argument")
            if name == "bin":
                if len(node.args) != 2 or not isinstance(node.args[1], (ast.List, ast.Tuple)):
                    raise ExpressionError("bin takes a value and a literal list of edges")
                edges = [_literal_number(e) for e in node.args[1].elts]
                if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
                    raise ExpressionError("bin edges must be a non-empty increasing list")
                self._check(node.args[0])
                return
            if name == "time_delta":
                if len(node.args) not in (2, 3):
                    raise ExpressionError("time_delta takes two timestamp columns and an optional unit")
                if len(node.args) == 3:
                    unit = node.args[2]
                    if not (isinstance(unit, ast.Constant) and unit.value in TIME_UNITS):
                        raise ExpressionError(f"time_delta unit must be one of {list(TIME_UNITS)}")
                for a in node.args[:2]:
                    if _column_name(a) is None:
                        raise ExpressionError("time_delta arguments must be column names")
                return
            if name == "col":
                raise ExpressionError('col() takes one string literal: col("column name")')
            for a in node.args:
                self._check(a)
            return
        raise ExpressionError(f"{type(node).__name__} is not allowed in expressions")

    def _collect(self, node: ast.AST) -> set[str]:
        name = _column_name(node)
        if name is not None:
            return {name}
        out: set[str] = set()
        for child in ast.iter_child_nodes(node):
            if isinstance(node, ast.Call) and child is node.func:
                continue
            out |= self._collect(child)
        return out

    def type_errors(self, schema: Mapping[str, ColumnKind]) -> list[str]:
        """Static problems given the columns available at this point."""
        errors = [f"unknown column {c!r}" for c in self.columns if c not in schema]
        if errors:
            return errors
        return self._types(self._tree.body, schema)

    def _types(self, node: ast.AST, schema: Mapping[str, ColumnKind]) -> list[str]:
        if isinstance(node, ast.Compare):
            operands = [node.left, *node.comparators]
            strings = [o for o in operands if isinstance(o, ast.Constant) and isinstance(o.value, str)]
            if strings:
                cats = [_column_name(o) for o in operands if _column_name(o) is not None]
                ok = (
                    len(operands) == 2
                    and len(cats) == 1
                    and schema[cats[0]] is ColumnKind.CATEGORICAL
                    and isinstance(node.ops[0], (ast.Eq, ast.NotEq))
                )
                return [] if ok else ["string literals only compare to a categorical column with == or !="]
        if isinstance(node, ast.Constant) and isinstance(node.value, str):
            return [f"string literal {node.value!r} used outside a comparison"]
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "time_delta":
            errs = []
            for a in node.args[:2]:
                c = _column_name(a)
                if schema[c] is not ColumnKind.TIMESTAMP:
                    errs.append(f"time_delta needs timestamp columns; {c!r} is {schema[c].value}")
            return errs
        name = _column_name(node)
        if name is not None:
            kind = schema[name]
            if not kind.is_orderable:
                return [f"column {name!r} is {kind.value}; arithmetic needs numeric or timestamp"]
            return []
        errs: list[str] = []
        for child in ast.iter_child_nodes(node):
            if isinstance(node, ast.Call) and child is node.func:
                continue
            if isinstance(node, ast.Call) and node.func.id == "bin" and child is node.args[1]:
                continue
            errs += self._types(child, schema)
        return errs

    # evaluation ------------------------------------------------------------

    def evaluate(self, columns: Mapping[str, np.ndarray], row_count: int) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = self._eval(self._tree.body, columns, row_count)
        if isinstance(out, _Str):
            raise ExpressionError("expression evaluates to a string")
        arr = np.broadcast_to(np.asarray(out, dtype=float), (row_count,)).copy()
        arr[~np.isfinite(arr)] = np.nan
        return arr

    def _eval(self, node: ast.AST, cols: Mapping[str, np.ndarray], n: int) -> Any:
        name = _column_name(node)
        if name is not None:
            return cols[name]
        if isinstance(node, ast.Constant):
            return _Str(node.value) if isinstance(node.value, str) else float(node.value)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](
                _num(self._eval(node.left, cols, n)), _num(self._eval(node.right, cols, n))
            )
        if isinstance(node, ast.UnaryOp):
            v = _num(self._eval(node.operand, cols, n))
            if isinstance(node.op, ast.USub):
                return -v
            if isinstance(node.op, ast.UAdd):
                return v
            return _mask_nan(v == 0, v)
        if isinstance(node, ast.BoolOp):
            vals = [_num(self._eval(v, cols, n)) for v in node.values]
            nan = np.zeros(n, dtype=bool)
            truth = np.full(n, isinstance(node.op, ast.And))
            for v in vals:
                v = np.broadcast_to(v, (n,))
                nan |= np.isnan(v)
                truth = truth & (v != 0) if isinstance(node.op, ast.And) else truth | (v != 0)
            out = truth.astype(float)
            out[nan] = np.nan
            return out
        if isinstance(node, ast.Compare):
            operands = [self._eval(o, cols, n) for o in (node.left, *node.comparators)]
            result = np.ones(n, dtype=float)
            for op, left, right in zip(node.ops, operands, operands[1:]):
                result = result * self._compare(op, left, right, n)
            return result
        if isinstance(node, ast.Call):
            fn = node.func.id
            if fn == "time_delta":
                unit = node.args[2].value if len(node.args) == 3 else "seconds"
                a = cols[_column_name(node.args[0])]
                b = cols[_column_name(node.args[1])]
                return (a - b) / TIME_UNITS[unit]
            if fn == "bin":
                v = np.broadcast_to(_num(self._eval(node.args[0], cols, n)), (n,))
                edges = np.array([_literal_number(e) for e in node.args[1].elts])
                out = np.searchsorted(edges, v, side="right").astype(float)
                out[np.isnan(v)] = np.nan
                return out
            v = _num(self._eval(node.args[0], cols, n))
            return {"log": np.log, "log1p": np.log1p, "abs": np.abs}[fn](v)
        raise ExpressionError(f"cannot evaluate {type(node).__name__}")

    @staticmethod
    def _compare(op: ast.cmpop, left: Any, right: Any, n: int) -> np.ndarray:
        fn = _CMPOPS[type(op)]
        if isinstance(left, _Str) or isinstance(right, _Str):
            lit, col = (left, right) if isinstance(left, _Str) else (right, left)
            null = np.array([v is None for v in col], dtype=bool)
            eq = np.array([v == lit.value for v in col], dtype=bool)
            out = (eq if isinstance(op, ast.Eq) else ~eq).astype(float)
            out[null] = np.nan
            return out
        lv = np.broadcast_to(np.asarray(left, dtype=float), (n,))
        rv = np.broadcast_to(np.asarray(right, dtype=float), (n,))
        out = fn(lv, rv).astype(float)
        out[np.isnan(lv) | np.isnan(rv)] = np.nan
        return out


def _literal_number(node: ast.AST) -> float:
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        return -_literal_number(node.operand)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    raise ExpressionError("bin edges must be numeric literals")


def _num(v: Any) -> Any:
    if isinstance(v, _Str):
        raise ExpressionError("string literals are only allowed in categorical comparisons")
    return np.asarray(v, dtype=float) if isinstance(v, np.ndarray) else v


def _mask_nan(cond: Any, v: Any) -> np.ndarray:
    out = np.asarray(cond, dtype=float)
    return np.where(np.isnan(v), np.nan, out)
