"""Tree programs: build, prune, emit, re-parse and execute.

A program is a nest of ``If`` nodes over one feature or a two-feature
difference, ending in ``Return`` leaves. Emitted text is a Python function::

    def play(ball, player):
        if ball.y - player.y <= 0.01:
            return "NOOP"
        else:
            return "UP"

Hand-edited programs are read back with :func:`parse_program`, which uses the
stdlib parser and then checks the result against the restricted grammar.
"""
from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Sequence, Union

import numpy as np

from .cart import ObliqueTree
from .core import ActionSpec, ArityMismatch, ObdistillError, StateVector


class NameArityMismatch(ObdistillError, ValueError):
    pass


class ProgramSyntaxError(ObdistillError, ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.col = col


class UnknownFeatureName(ProgramSyntaxError):
    pass


class UnknownActionName(ProgramSyntaxError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    plus: str
    minus: str | None = None

    def render(self) -> str:
        return self.plus if self.minus is None else f"{self.plus} - {self.minus}"

    def names(self) -> tuple[str, ...]:
        return (self.plus,) if self.minus is None else (self.plus, self.minus)


@dataclass(frozen=True)
class Cond:
    expr: Expr
    op: str  # "<=" or ">"
    threshold: float

    def __post_init__(self):
        if self.op not in ("<=", ">"):
            raise ValueError(f"unsupported comparator {self.op!r}")


@dataclass(frozen=True)
class Return:
    action: Union[str, tuple]


@dataclass(frozen=True)
class If:
    cond: Cond
    then: "Node"
    orelse: "Node"


Node = Union[If, Return]


def count_nodes(node: Node) -> int:
    if isinstance(node, Return):
        return 1
    return 1 + count_nodes(node.then) + count_nodes(node.orelse)


def count_ifs(node: Node) -> int:
    if isinstance(node, Return):
        return 0
    return 1 + count_ifs(node.then) + count_ifs(node.orelse)


def referenced_names(node: Node) -> set[str]:
    if isinstance(node, Return):
        return set()
    return set(node.cond.expr.names()) | referenced_names(node.then) | referenced_names(node.orelse)


def ast_to_json(node: Node):
    if isinstance(node, Return):
        a = node.action
        return {"return": a if isinstance(a, str) else list(a)}
    c = node.cond
    return {"if": {"expr": [c.expr.plus, c.expr.minus], "op": c.op, "threshold": c.threshold},
            "then": ast_to_json(node.then), "else": ast_to_json(node.orelse)}


def ast_from_json(d) -> Node:
    if "return" in d:
        a = d["return"]
        return Return(a if isinstance(a, str) else tuple(float(v) for v in a))
    c = d["if"]
    cond = Cond(Expr(c["expr"][0], c["expr"][1]), c["op"], float(c["threshold"]))
    return If(cond, ast_from_json(d["then"]), ast_from_json(d["else"]))


# ---------------------------------------------------------------------------
# Tree -> program
# ---------------------------------------------------------------------------

def tree_to_program(tree: ObliqueTree, feature_names: Sequence[str],
                    action_names: Sequence[str] | None = None) -> Node:
    """Map every internal node to an ``If`` and every leaf to a ``Return``."""
    names = list(feature_names)
    if tree.n_features is not None and len(names) != tree.n_features:
        raise NameArityMismatch(f"tree has {tree.n_features} features, got {len(names)} names")
    if tree.n_features_in > len(names):
        raise NameArityMismatch("feature names do not cover the tree's features")
    if tree.mode == "classify":
        if action_names is None or len(action_names) < tree.n_outputs:
            raise NameArityMismatch("need one action name per class")

    def build(k: int) -> Node:
        if tree.is_leaf(k):
            a = tree.leaf_action(k)
            if tree.mode == "classify":
                return Return(action_names[a])
            return Return(tuple(float(v) for v in a))
        ref = tree.feature(k)
        expr = Expr(names[ref.i], None if ref.j is None else names[ref.j])
        return If(Cond(expr, "<=", tree.threshold[k]), build(tree.left[k]), build(tree.right[k]))

    return build(0)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------

def _decide(cond: Cond, lo: float, hi: float):
    """Truth of ``cond`` for every value in ``(lo, hi]``, or None if it varies."""
    t = cond.threshold
    le = True if hi <= t else False if lo >= t else None
    if le is None or cond.op == "<=":
        return le
    return not le


def _narrow(bounds: dict, cond: Cond, truth: bool) -> dict:
    lo, hi = bounds.get(cond.expr, (-math.inf, math.inf))
    le = truth if cond.op == "<=" else not truth
    if le:
        hi = min(hi, cond.threshold)
    else:
        lo = max(lo, cond.threshold)
    out = dict(bounds)
    out[cond.expr] = (lo, hi)
    return out


def _prune_pass(node: Node, bounds: dict) -> Node:
    if isinstance(node, Return):
        return node
    lo, hi = bounds.get(node.cond.expr, (-math.inf, math.inf))
    truth = _decide(node.cond, lo, hi)
    if truth is True:
        return _prune_pass(node.then, bounds)
    if truth is False:
        return _prune_pass(node.orelse, bounds)
    then = _prune_pass(node.then, _narrow(bounds, node.cond, True))
    orelse = _prune_pass(node.orelse, _narrow(bounds, node.cond, False))
    if then == orelse:
        return then
    return If(node.cond, then, orelse)


def prune_program(node: Node) -> Node:
    """Remove branches that cannot change the returned action.

    Two exact rules are applied until nothing changes: an ``If`` whose
    branches are identical collapses to that branch, and a condition already
    decided by the enclosing conditions on the same expression is replaced by
    the branch it always takes.
    """
    for _ in range(count_nodes(node) + 1):
        pruned = _prune_pass(node, {})
        if pruned == node:
            return pruned
        node = pruned
    return node


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def format_number(x: float) -> str:
    # repr gives the shortest string that round-trips to the same double
    return repr(float(x))


def _roots(names) -> list[str]:
    return sorted({n.split(".", 1)[0] for n in names})


def _emit_return(action) -> str:
    if isinstance(action, str):
        return f"return {json.dumps(action)}"
    return "return [" + ", ".join(format_number(v) for v in action) + "]"


def emit_text(node: Node, style: str = "nested", name: str = "play") -> str:
    """Render a program as Python source.

    ``style="nested"`` writes if/else blocks; ``style="guard"`` writes each
    then-branch as an early return followed by the else-branch at the same
    indentation. Both parse back to the same AST.
    """
    if style not in ("nested", "guard"):
        raise ValueError(f"unknown style {style!r}")
    lines = [f"def {name}({', '.join(_roots(referenced_names(node)))}):"]

    def cond_text(c: Cond) -> str:
        return f"{c.expr.render()} {c.op} {format_number(c.threshold)}"

    def walk(n: Node, depth: int):
        pad = "    " * depth
        if isinstance(n, Return):
            lines.append(pad + _emit_return(n.action))
            return
        lines.append(f"{pad}if {cond_text(n.cond)}:")
        walk(n.then, depth + 1)
        if style == "nested":
            lines.append(pad + "else:")
            walk(n.orelse, depth + 1)
        else:
            walk(n.orelse, depth)

    walk(node, 1)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _dotted(node: ast.expr) -> str | None:
    if isinstance(node, ast.Name):
        return node.id
    if isinstance(node, ast.Attribute):
        base = _dotted(node.value)
        return None if base is None else f"{base}.{node.attr}"
    return None


def _number(node: ast.expr) -> float | None:
    sign = 1.0
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
        node = node.operand
    if (isinstance(node, ast.Constant) and isinstance(node.value, (int, float))
            and not isinstance(node.value, bool)):
        return sign * float(node.value)
    return None


class _Converter:
    def __init__(self, feature_names, action_names, action_dim):
        self.features = None if feature_names is None else set(feature_names)
        self.actions = None if action_names is None else set(action_names)
        self.action_dim = action_dim

    def fail(self, node, msg, cls=ProgramSyntaxError):
        raise cls(msg, getattr(node, "lineno", None),
                  None if getattr(node, "col_offset", None) is None else node.col_offset + 1)

    def feature(self, node) -> str:
        name = _dotted(node)
        if name is None:
            self.fail(node, "expected a feature name")
        if self.features is not None and name not in self.features:
            self.fail(node, f"unknown feature {name!r}", UnknownFeatureName)
        return name

    def cond(self, node) -> Cond:
        if not (isinstance(node, ast.Compare) and len(node.ops) == 1):
            self.fail(node, "condition must be a single comparison")
        op = node.ops[0]
        if isinstance(op, ast.LtE):
            op_text = "<="
        elif isinstance(op, ast.Gt):
            op_text = ">"
        else:
            self.fail(node, "only '<=' and '>' comparisons are supported")
        left = node.left
        if isinstance(left, ast.BinOp):
            if not isinstance(left.op, ast.Sub):
                self.fail(left, "only a difference of two features is allowed")
            expr = Expr(self.feature(left.left), self.feature(left.right))
        else:
            expr = Expr(self.feature(left))
        thr = _number(node.comparators[0])
        if thr is None or not math.isfinite(thr):
            self.fail(node.comparators[0], "threshold must be a finite numeric literal")
        return Cond(expr, op_text, thr)

    def ret(self, node: ast.Return) -> Return:
        v = node.value
        if isinstance(v, ast.Constant) and isinstance(v.value, str):
            if self.actions is not None and v.value not in self.actions:
                self.fail(v, f"unknown action {v.value!r}", UnknownActionName)
            return Return(v.value)
        if isinstance(v, (ast.List, ast.Tuple)):
            vals = [_number(e) for e in v.elts]
            if not vals or any(x is None for x in vals):
                self.fail(v, "vector actions must be numeric literals")
            if self.action_dim is not None and len(vals) != self.action_dim:
                self.fail(v, f"expected {self.action_dim} action values", UnknownActionName)
            return Return(tuple(vals))
        self.fail(node, "return value must be an action name or a list of numbers")

    def block(self, stmts: list, owner) -> Node:
        if not stmts:
            self.fail(owner, "block can finish without returning")
        head, rest = stmts[0], stmts[1:]
        if isinstance(head, ast.Return):
            if rest:
                self.fail(rest[0], "unreachable code after return")
            return self.ret(head)
        if isinstance(head, ast.If):
            cond = self.cond(head.test)
            then = self.block(head.body, head)
            # statements after the if run when the else branch falls through
            return If(cond, then, self.block(list(head.orelse) + rest, head))
        if isinstance(head, ast.Pass):
            return self.block(rest, head)
        self.fail(head, f"unsupported statement {type(head).__name__}")


def parse_program(text: str, feature_names: Sequence[str] | None = None,
                  action_names: Sequence[str] | None = None,
                  action_dim: int | None = None) -> Node:
    """Parse emitted or hand-edited program text back to an AST.

    Accepts ``<=`` and ``>`` comparisons of one feature or a two-feature
    difference against a literal, nested if/elif/else blocks, guard-style
    early returns, and returns of action names or numeric lists. Features
    resolve by dotted name; the header's parameter list is not checked, so a
    plain text substitution of one feature for another is enough.
    """
    try:
        module = ast.parse(text)
    except SyntaxError as exc:
        raise ProgramSyntaxError(exc.msg, exc.lineno, exc.offset) from None
    funcs = [s for s in module.body if isinstance(s, ast.FunctionDef)]
    others = [s for s in module.body if not isinstance(s, ast.FunctionDef)
              and not (isinstance(s, ast.Expr) and isinstance(getattr(s, "value", None), ast.Constant))]
    if len(funcs) != 1 or others:
        where = (others or funcs or [None])[0]
        raise ProgramSyntaxError("expected exactly one function definition",
                                 getattr(where, "lineno", 1), 1)
    body = list(funcs[0].body)
    if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) \
            and isinstance(body[0].value.value, str):
        body = body[1:]
    conv = _Converter(feature_names, action_names, action_dim)
    return conv.block(body, funcs[0])


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

class CompiledProgram:
    """Flattened program bound to a feature order, for fast repeated execution."""

    def __init__(self, node: Node, feature_names: Sequence[str]):
        self.feature_names = tuple(feature_names)
        index = {n: i for i, n in enumerate(self.feature_names)}
        self.plus, self.minus, self.le, self.thr = [], [], [], []
        self.then, self.orelse, self.action = [], [], []

        def lookup(name):
            try:
                return index[name]
            except KeyError:
                raise UnknownFeatureName(f"unknown feature {name!r}") from None

        def add(n: Node) -> int:
            k = len(self.plus)
            for lst in (self.plus, self.minus, self.le, self.thr, self.then, self.orelse,
                        self.action):
                lst.append(None)
            if isinstance(n, Return):
                self.then[k] = -1
                self.action[k] = n.action
                return k
            c = n.cond
            self.plus[k] = lookup(c.expr.plus)
            self.minus[k] = -1 if c.expr.minus is None else lookup(c.expr.minus)
            self.le[k] = c.op == "<="
            self.thr[k] = c.threshold
            self.then[k] = add(n.then)
            self.orelse[k] = add(n.orelse)
            return k

        add(node)

    def __call__(self, x):
        then, orelse, plus, minus, le, thr = (self.then, self.orelse, self.plus, self.minus,
                                              self.le, self.thr)
        k = 0
        while then[k] >= 0:
            j = minus[k]
            v = x[plus[k]] if j < 0 else x[plus[k]] - x[j]
            hit = v <= thr[k]
            if not le[k]:
                hit = not hit
            k = then[k] if hit else orelse[k]
        return self.action[k]

    def returns_batch(self, X: np.ndarray) -> np.ndarray:
        """Index of the ``Return`` reached by each row of ``X``, vectorized over rows."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ArityMismatch(f"expected rows of {len(self.feature_names)} features")
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            k, idx = stack.pop()
            if self.then[k] < 0:
                out[idx] = k
                continue
            v = X[idx, self.plus[k]]
            if self.minus[k] >= 0:
                v = v - X[idx, self.minus[k]]
            hit = v <= self.thr[k] if self.le[k] else v > self.thr[k]
            stack.append((self.then[k], idx[hit]))
            stack.append((self.orelse[k], idx[~hit]))
        return out

    def batch(self, X: np.ndarray) -> list:
        return [self.action[k] for k in self.returns_batch(X)]


def execute_program(node: Node, s, feature_names: Sequence[str] | None = None):
    """Run a program on one state and return the action name or vector.

    ``s`` is a :class:`StateVector`, or a plain vector with ``feature_names``.
    """
    if isinstance(s, StateVector):
        values, names = s.values, s.feature_names
    else:
        if feature_names is None:
            raise ValueError("feature_names are required for plain vectors")
        values, names = np.asarray(s, dtype=np.float64), tuple(feature_names)
        if values.ndim != 1 or values.size != len(names):
            raise ArityMismatch(f"expected {len(names)} features, got {values.size}")
    return CompiledProgram(node, names)(values)


def execute_program_batch(node: Node, X, feature_names: Sequence[str]) -> list:
    """Run a program on every row of ``X``; same semantics as :func:`execute_program`."""
    return CompiledProgram(node, feature_names).batch(X)


class ProgramPolicy:
    """Act with a program in an environment whose states follow ``feature_names``."""

    def __init__(self, node: Node, feature_names: Sequence[str], action_spec: ActionSpec):
        self.node = node
        self.action_spec = action_spec
        self.program = CompiledProgram(node, feature_names)
        self._index = {n: i for i, n in enumerate(action_spec.names)}
        if action_spec.is_discrete:
            missing = {a for a in self.program.action if a is not None} - set(self._index)
            if missing:
                raise UnknownActionName(f"unknown actions {sorted(missing)}")

    def act(self, s):
        a = self.program(s)
        if self.action_spec.is_discrete:
            return self._index[a]
        return np.asarray(a, dtype=np.float64)


def python_function(text: str):
    """Compile emitted program text with CPython and return the function."""
    namespace: dict = {}
    exec(compile(text, "<program>", "exec"), namespace)  # noqa: S102 - trusted local artifact
    funcs = [v for k, v in namespace.items() if callable(v) and not k.startswith("__")]
    if len(funcs) != 1:
        raise ProgramSyntaxError("expected exactly one function")
    return funcs[0]


def python_arguments(fn, values, feature_names: Sequence[str]) -> list:
    """Build positional arguments for a compiled program from a flat state."""
    groups: dict[str, dict] = {}
    plain: dict[str, float] = {}
    for name, v in zip(feature_names, values):
        root, _, attr = name.partition(".")
        if attr:
            groups.setdefault(root, {})[attr] = float(v)
        else:
            plain[root] = float(v)
    params = fn.__code__.co_varnames[:fn.__code__.co_argcount]
    return [plain[p] if p in plain else SimpleNamespace(**groups[p]) for p in params]
