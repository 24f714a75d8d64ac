"""Expression trees encoding one coordinate of a 2-D transformation.

A tree is an immutable :class:`Node`. Internal nodes are drawn from the
function set (``add sub mul div pow cos sin rotx roty rbf irbf``); leaves are
``const``, ``x``, ``y`` or ``e``. Nodes are numbered in pre-order, root = 0.

Trees are evaluated by flattening them into postfix programs and handing the
program to :func:`gpreg.kernels.eval_program`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import kernels

ARITY = {
    "add": 2,
    "sub": 2,
    "mul": 2,
    "div": 2,
    "pow": 2,
    "cos": 1,
    "sin": 1,
    "rotx": 1,
    "roty": 1,
    "rbf": 3,
    "irbf": 3,
    "const": 0,
    "x": 0,
    "y": 0,
    "e": 0,
}

FUNCTIONS = ("add", "sub", "mul", "div", "pow", "cos", "sin", "rotx", "roty", "rbf", "irbf")
TERMINALS = ("const", "x", "y", "e")
TAGS_BY_ARITY = {
    n: tuple(t for t in FUNCTIONS + TERMINALS if ARITY[t] == n) for n in sorted(set(ARITY.values()))
}

_OPCODE = {
    "const": kernels.OP_CONST,
    "x": kernels.OP_X,
    "y": kernels.OP_Y,
    "e": kernels.OP_E,
    "add": kernels.OP_ADD,
    "sub": kernels.OP_SUB,
    "mul": kernels.OP_MUL,
    "div": kernels.OP_DIV,
    "pow": kernels.OP_POW,
    "cos": kernels.OP_COS,
    "sin": kernels.OP_SIN,
    "rotx": kernels.OP_ROTX,
    "roty": kernels.OP_ROTY,
    "rbf": kernels.OP_RBF,
    "irbf": kernels.OP_IRBF,
}

DEFAULT_DEPTH_CAP = 12


@dataclass(frozen=True, slots=True)
class Node:
    """One tree node. ``value`` is only meaningful for ``const``."""

    tag: str
    children: tuple = ()
    value: float = 0.0
    size: int = field(init=False, compare=False, repr=False)
    height: int = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        arity = ARITY.get(self.tag)
        if arity is None:
            raise ValueError(f"unknown tag {self.tag!r}")
        if len(self.children) != arity:
            raise ArityError(f"{self.tag} takes {arity} children, got {len(self.children)}")
        if self.tag == "const" and not math.isfinite(self.value):
            raise ValueError(f"constant must be finite, got {self.value!r}")
        size = 1
        height = 0
        for c in self.children:
            size += c.size
            height = max(height, c.height)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "height", height + 1)

    def __str__(self):
        return serialize(self)


def const(value) -> Node:
    return Node("const", (), float(value))


def var_x() -> Node:
    return Node("x")


def var_y() -> Node:
    return Node("y")


def euler() -> Node:
    return Node("e")


def op(tag: str, *children: Node) -> Node:
    return Node(tag, tuple(children))


@dataclass(frozen=True)
class EvalContext:
    x: float
    y: float
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------


def depth(tree: Node) -> int:
    return tree.height


def node_count(tree: Node) -> int:
    return tree.size


def iter_preorder(tree: Node):
    stack = [tree]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def node_at(tree: Node, index: int) -> Node:
    if not 0 <= index < tree.size:
        raise IndexError(f"node index {index} out of range for tree of {tree.size} nodes")
    node = tree
    while index:
        index -= 1
        for child in node.children:
            if index < child.size:
                node = child
                break
            index -= child.size
    return node


def depth_at(tree: Node, index: int) -> int:
    """Depth (root = 1) of the node at pre-order ``index``."""
    if not 0 <= index < tree.size:
        raise IndexError(f"node index {index} out of range for tree of {tree.size} nodes")
    node = tree
    level = 1
    while index:
        index -= 1
        level += 1
        for child in node.children:
            if index < child.size:
                node = child
                break
            index -= child.size
    return level


def replace_at(tree: Node, index: int, subtree: Node) -> Node:
    """Return a copy of ``tree`` with the subtree at ``index`` swapped out."""
    if not 0 <= index < tree.size:
        raise IndexError(f"node index {index} out of range for tree of {tree.size} nodes")
    if index == 0:
        return subtree
    offset = 1
    for i, child in enumerate(tree.children):
        if index < offset + child.size:
            children = list(tree.children)
            children[i] = replace_at(child, index - offset, subtree)
            return Node(tree.tag, tuple(children), tree.value)
        offset += child.size
    raise AssertionError("unreachable")


def is_valid(tree: Node, depth_cap: int | None = None) -> bool:
    for node in iter_preorder(tree):
        if len(node.children) != ARITY[node.tag]:
            return False
    return depth_cap is None or tree.height <= depth_cap


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Program:
    """Postfix form of a tree, ready for the evaluation kernel."""

    ops: np.ndarray
    consts: np.ndarray
    stack_size: int

    def __call__(self, xs, ys, width, height):
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        ys = np.ascontiguousarray(ys, dtype=np.float64)
        return kernels.eval_program(self.ops, self.consts, xs, ys, float(width), float(height), self.stack_size)


def compile_tree(tree: Node) -> Program:
    ops = []
    consts = []
    # iterative post-order: children left to right, then the node
    stack = [(tree, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded or not node.children:
            ops.append(_OPCODE[node.tag])
            consts.append(node.value)
        else:
            stack.append((node, True))
            for child in reversed(node.children):
                stack.append((child, False))
    ops = np.array(ops, dtype=np.int8)
    return Program(ops, np.array(consts, dtype=np.float64), kernels.max_stack_depth(ops))


def evaluate_many(tree: Node, xs, ys, width, height) -> np.ndarray:
    """Evaluate ``tree`` at every ``(xs[i], ys[i])``; results are clamped to +-1e8."""
    return compile_tree(tree)(xs, ys, width, height)


def evaluate(tree: Node, ctx: EvalContext) -> float:
    out = evaluate_many(tree, np.array([ctx.x]), np.array([ctx.y]), ctx.width, ctx.height)
    return float(out[0])


# ---------------------------------------------------------------------------
# random generation
# ---------------------------------------------------------------------------


def constant_bound(dims) -> float:
    width, height = dims
    return float(max(width, height))


def random_terminal(rng: np.random.Generator, dims) -> Node:
    tag = TERMINALS[rng.integers(len(TERMINALS))]
    if tag == "const":
        bound = constant_bound(dims)
        return Node("const", (), float(rng.uniform(-bound, bound)))
    return Node(tag)


def random_tree(rng: np.random.Generator, max_depth: int, dims, method: str = "grow") -> Node:
    """Generate a random tree of depth at most ``max_depth``.

    ``method="full"`` places functions at every level above ``max_depth``;
    ``method="grow"`` picks uniformly from functions and terminals together.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if method not in ("grow", "full"):
        raise ValueError(f"unknown method {method!r}")
    n_prims = len(FUNCTIONS) + len(TERMINALS)

    def build(level):
        if level >= max_depth:
            return random_terminal(rng, dims)
        if method == "grow":
            pick = rng.integers(n_prims)
            if pick >= len(FUNCTIONS):
                return random_terminal(rng, dims)
            tag = FUNCTIONS[pick]
        else:
            tag = FUNCTIONS[rng.integers(len(FUNCTIONS))]
        return Node(tag, tuple(build(level + 1) for _ in range(ARITY[tag])))

    return build(1)


# ---------------------------------------------------------------------------
# text form
# ---------------------------------------------------------------------------


class ParseError(ValueError):
    """Malformed expression text. ``position`` is a 0-based character offset."""

    def __init__(self, message, text="", position=None):
        super().__init__(message if position is None else f"{message} at position {position}")
        self.message = message
        self.text = text
        self.position = position

    def caret(self):
        return f"{self.text}\n{' ' * (self.position or 0)}^"


class ArityError(ParseError):
    pass


def serialize(tree: Node) -> str:
    """Prefix s-expression, e.g. ``(add (sub (const 0.47) (const 5.11)) x)``."""
    if tree.tag == "const":
        return f"(const {tree.value!r})"
    if not tree.children:
        return tree.tag
    return "(" + tree.tag + " " + " ".join(serialize(c) for c in tree.children) + ")"


_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        if m.end() == pos:
            break
        kind = "(" if m.group(1) else ")" if m.group(2) else "atom"
        tokens.append((kind, m.group(m.lastindex), m.start(m.lastindex)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def parse(text: str) -> Node:
    tokens = _tokenize(text)
    i = 0

    def expr():
        nonlocal i
        kind, val, pos = tokens[i]
        if kind == "atom":
            i += 1
            if val in ("x", "y", "e"):
                return Node(val)
            if val in ARITY:
                raise ArityError(f"{val} requires parentheses", text, pos)
            raise ParseError(f"unknown symbol {val!r}", text, pos)
        if kind != "(":
            raise ParseError("expected expression", text, pos)
        i += 1
        kind, tag, tag_pos = tokens[i]
        if kind != "atom":
            raise ParseError("expected tag after '('", text, tag_pos)
        if tag not in ARITY:
            raise ParseError(f"unknown tag {tag!r}", text, tag_pos)
        i += 1
        if tag == "const":
            kind, val, pos = tokens[i]
            if kind != "atom":
                raise ParseError("const requires a number", text, pos)
            try:
                value = float(val)
            except ValueError:
                raise ParseError(f"invalid number {val!r}", text, pos) from None
            if not math.isfinite(value):
                raise ParseError(f"constant must be finite, got {val!r}", text, pos)
            i += 1
            kind, _, pos = tokens[i]
            if kind != ")":
                raise ArityError("const takes exactly one number", text, pos)
            i += 1
            return Node("const", (), value)
        children = []
        while tokens[i][0] not in (")", "end"):
            children.append(expr())
        kind, _, pos = tokens[i]
        if kind == "end":
            raise ParseError("unbalanced '('", text, pos)
        if len(children) != ARITY[tag]:
            raise ArityError(f"{tag} takes {ARITY[tag]} children, got {len(children)}", text, tag_pos)
        i += 1
        return Node(tag, tuple(children))

    tree = expr()
    kind, _, pos = tokens[i]
    if kind != "end":
        raise ParseError("trailing input", text, pos)
    return tree


def format_pair(tx: Node, ty: Node) -> str:
    return f"TX := {serialize(tx)} ; TY := {serialize(ty)}"


def parse_pair(line: str) -> tuple[Node, Node]:
    """Parse a ``TX := <s-expr> ; TY := <s-expr>`` line."""
    m = re.fullmatch(r"\s*TX\s*:=\s*(.*?)\s*;\s*TY\s*:=\s*(.*?)\s*", line)
    if m is None:
        raise ParseError("expected 'TX := <expr> ; TY := <expr>'", line, 0)
    trees = []
    for group in (1, 2):
        try:
            trees.append(parse(m.group(group)))
        except ParseError as exc:
            raise type(exc)(exc.message, line, m.start(group) + (exc.position or 0)) from None
    return trees[0], trees[1]
