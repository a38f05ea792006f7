"""Ideographic description sequence (IDS) parsing into binary character trees.

An IDS describes the spatial composition of a CJK character in prefix
notation: a layout operator (U+2FF0..U+2FFB) followed by its operands,
which are either nested sequences or component characters.  Ternary
operators are rewritten left-associatively into their binary horizontal or
vertical counterparts, so every parsed tree is strictly binary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    DepthExceeded,
    EmptyDatabase,
    EmptyInput,
    IoError,
    MissingOperand,
    ParseError,
    TrailingInput,
)

# The twelve ideographic description characters and their arities.
IDC_ARITY = {
    "⿰": 2,  # ⿰ left-right
    "⿱": 2,  # ⿱ above-below
    "⿲": 3,  # ⿲ left-middle-right
    "⿳": 3,  # ⿳ above-middle-below
    "⿴": 2,  # ⿴ full surround
    "⿵": 2,  # ⿵ surround from above
    "⿶": 2,  # ⿶ surround from below
    "⿷": 2,  # ⿷ surround from left
    "⿸": 2,  # ⿸ surround from upper-left
    "⿹": 2,  # ⿹ surround from upper-right
    "⿺": 2,  # ⿺ surround from lower-left
    "⿻": 2,  # ⿻ overlaid
}

# Ternary operators are binarized left-associatively and re-labelled with
# the binary operator of the same axis: ⿲ABC -> ⿰(⿰(A,B),C), ⿳ABC -> ⿱(⿱(A,B),C).
TERNARY_TO_BINARY = {"⿲": "⿰", "⿳": "⿱"}

DEFAULT_MAX_DEPTH = 16


def is_layout_op(char: str) -> bool:
    return char in IDC_ARITY


@dataclass(frozen=True)
class CharTree:
    """Binary tree node: a leaf component or an internal layout operator.

    Leaves carry ``component`` (a non-operator character); internal nodes
    carry ``op`` (a binary IDC) plus exactly two children.
    """

    component: str | None = None
    op: str | None = None
    left: CharTree | None = field(default=None)
    right: CharTree | None = field(default=None)

    def __post_init__(self):
        if self.component is not None:
            if is_layout_op(self.component):
                raise ValueError(f"leaf component {self.component!r} is a layout operator")
            if self.op is not None or self.left is not None or self.right is not None:
                raise ValueError("leaf node must not carry operator or children")
        else:
            if self.op not in IDC_ARITY or IDC_ARITY[self.op] != 2:
                raise ValueError(f"internal node operator {self.op!r} is not a binary IDC")
            if self.left is None or self.right is None:
                raise ValueError("internal node requires two children")

    @property
    def is_leaf(self) -> bool:
        return self.component is not None

    def depth(self) -> int:
        if self.is_leaf:
            return 1
        return 1 + max(self.left.depth(), self.right.depth())

    def leaf_count(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.leaf_count() + self.right.leaf_count()

    def leaves(self) -> list[str]:
        if self.is_leaf:
            return [self.component]
        return self.left.leaves() + self.right.leaves()

    def operators(self) -> set[str]:
        if self.is_leaf:
            return set()
        return {self.op} | self.left.operators() | self.right.operators()

    def to_ids(self) -> str:
        """Serialize to prefix notation. Ternary rewrites are not undone, so
        the output is the binarized form and re-parses to an identical tree."""
        if self.is_leaf:
            return self.component
        return self.op + self.left.to_ids() + self.right.to_ids()


def leaf(component: str) -> CharTree:
    return CharTree(component=component)


def internal(op: str, left: CharTree, right: CharTree) -> CharTree:
    return CharTree(op=op, left=left, right=right)


def parse_ids(ids: str, max_depth: int = DEFAULT_MAX_DEPTH) -> CharTree:
    """Parse a prefix-notation IDS into a binary CharTree.

    The whole input must be consumed.  Raises EmptyInput, MissingOperand,
    TrailingInput, or DepthExceeded.
    """
    if not ids:
        raise EmptyInput("empty IDS")
    chars = list(ids)
    tree, pos = _parse(chars, 0, 1, max_depth, ids)
    if pos != len(chars):
        raise TrailingInput(
            f"IDS {ids!r}: {len(chars) - pos} unconsumed character(s) after the root"
        )
    return tree


def _parse(chars: list[str], pos: int, depth: int, max_depth: int, ids: str) -> tuple[CharTree, int]:
    if depth > max_depth:
        raise DepthExceeded(f"IDS {ids!r}: tree deeper than {max_depth}")
    if pos >= len(chars):
        raise MissingOperand(f"IDS {ids!r}: input ended before an operand was found")
    head = chars[pos]
    if not is_layout_op(head):
        return leaf(head), pos + 1
    arity = IDC_ARITY[head]
    operands = []
    pos += 1
    for k in range(arity):
        # Binarizing a ternary operator inserts one extra level above its
        # first two operands; the third ends up directly under the root.
        child_depth = depth + 1 if arity == 2 or k == 2 else depth + 2
        node, pos = _parse(chars, pos, child_depth, max_depth, ids)
        operands.append(node)
    if arity == 2:
        return internal(head, operands[0], operands[1]), pos
    bin_op = TERNARY_TO_BINARY[head]
    return internal(bin_op, internal(bin_op, operands[0], operands[1]), operands[2]), pos


@dataclass
class LoadReport:
    """Per-file diagnostics from loading an IDS database."""

    total_lines: int = 0
    records: int = 0
    malformed: list[tuple[int, str]] = field(default_factory=list)
    fallbacks: list[tuple[int, str, str]] = field(default_factory=list)  # (line, char, reason)
    expansion_skipped: list[str] = field(default_factory=list)

    def summary(self) -> str:
        return (
            f"{self.records} record(s) from {self.total_lines} line(s); "
            f"{len(self.malformed)} malformed, {len(self.fallbacks)} fell back to single-leaf"
        )


class TreeRegistry:
    """Character -> CharTree map, immutable after load.

    Characters without an entry decompose to a single-leaf tree of
    themselves, so every vocabulary is covered by construction.
    """

    def __init__(self, trees: dict[str, CharTree]):
        self._trees = dict(trees)

    def __contains__(self, char: str) -> bool:
        return char in self._trees

    def __len__(self) -> int:
        return len(self._trees)

    @property
    def chars(self) -> list[str]:
        return sorted(self._trees)

    def tree_for(self, char: str) -> CharTree:
        t = self._trees.get(char)
        if t is None:
            return leaf(char)
        return t

    def inventories(self, chars) -> tuple[set[str], set[str]]:
        """Leaf-component and operator sets over the given characters' trees."""
        components: set[str] = set()
        operators: set[str] = set()
        for c in chars:
            t = self.tree_for(c)
            components.update(t.leaves())
            operators.update(t.operators())
        return components, operators


def load_ids_db(
    path,
    max_depth: int = DEFAULT_MAX_DEPTH,
    expand_leaves: bool = False,
) -> tuple[TreeRegistry, LoadReport]:
    """Load a tab-separated IDS database: ``U+XXXX<TAB>char<TAB>IDS`` per line,
    ``#`` comments ignored.

    Lines that fail to parse fall back to a single-leaf tree of the character
    and are reported.  With ``expand_leaves``, leaves that are themselves
    decomposable characters in the database are replaced by their own trees,
    one level deep; characters whose expansion would exceed ``max_depth``
    keep the unexpanded tree and are reported.
    """
    report = LoadReport()
    trees: dict[str, CharTree] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read IDS database {path}: {exc}") from exc

    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        report.total_lines += 1
        fields = line.split("\t")
        if len(fields) != 3:
            report.malformed.append((line_no, f"expected 3 tab-separated fields, got {len(fields)}"))
            continue
        code_field, char, ids = fields
        if not _codepoint_matches(code_field, char):
            report.malformed.append((line_no, f"codepoint field {code_field!r} does not match {char!r}"))
            continue
        try:
            tree = parse_ids(ids, max_depth=max_depth)
        except ParseError as exc:  # parse failures demote to single-leaf
            report.fallbacks.append((line_no, char, str(exc)))
            tree = leaf(char)
        trees[char] = tree
        report.records += 1

    if report.records == 0:
        raise EmptyDatabase(f"IDS database {path} contains no usable records")

    if expand_leaves:
        trees = _expand_one_level(trees, max_depth, report)

    return TreeRegistry(trees), report


def _codepoint_matches(code_field: str, char: str) -> bool:
    if not code_field.startswith("U+") or len(char) != 1:
        return False
    try:
        return int(code_field[2:], 16) == ord(char)
    except ValueError:
        return False


def _expand_one_level(
    trees: dict[str, CharTree], max_depth: int, report: LoadReport
) -> dict[str, CharTree]:
    def substitute(node: CharTree) -> CharTree:
        if node.is_leaf:
            sub = trees.get(node.component)
            if sub is not None and not sub.is_leaf:
                return sub
            return node
        return internal(node.op, substitute(node.left), substitute(node.right))

    expanded: dict[str, CharTree] = {}
    for char, tree in trees.items():
        candidate = substitute(tree)
        if candidate.depth() > max_depth:
            report.expansion_skipped.append(char)
            candidate = tree
        expanded[char] = candidate
    return expanded
