"""Claims and decomposition trees.

A decomposition tree is a claim whose children are recursively decomposed
sub-claims; leaves are atomic claims. All types here are immutable after
construction and safe for shared concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .errors import PathError, ValidationError

# Answer-block delimiters are reserved for the generation protocol and must
# never occur inside claim text.
FORBIDDEN_SUBSTRINGS = ("<answer>", "</answer>")


@dataclass(frozen=True)
class Claim:
    """A non-empty piece of claim text, trimmed of surrounding whitespace."""

    text: str

    def __post_init__(self):
        if not isinstance(self.text, str):
            raise ValidationError(f"claim text must be a string, got {type(self.text).__name__}")
        trimmed = self.text.strip()
        if not trimmed:
            raise ValidationError("claim text is empty after trimming")
        for marker in FORBIDDEN_SUBSTRINGS:
            if marker in trimmed:
                raise ValidationError(f"claim text contains forbidden substring {marker!r}")
        object.__setattr__(self, "text", trimmed)


class AtomicClaim(Claim):
    """A claim in leaf position; same invariants as Claim."""


@dataclass(frozen=True)
class NodePath:
    """Child indices from the root; the empty path addresses the root."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def child(self, index: int) -> "NodePath":
        return NodePath(self.indices + (index,))

    def to_list(self) -> list[int]:
        return list(self.indices)


@dataclass(frozen=True)
class DecompositionTree:
    """A claim node with recursively decomposed children (empty ⇒ leaf).

    Internal nodes must have at least two children: a single sub-claim means
    the parent was already atomic, so such nodes are rejected.
    """

    claim: Claim
    children: tuple["DecompositionTree", ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) == 1:
            raise ValidationError(
                f"internal node with exactly one child: {self.claim.text!r}"
            )
        for child in self.children:
            if not isinstance(child, DecompositionTree):
                raise ValidationError("children must be DecompositionTree nodes")

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def validate(self) -> None:
        """Re-check structural invariants over the whole tree.

        Construction already enforces them bottom-up; this guards against
        object-graph tampering (cycles) on trees received from elsewhere.
        """
        on_path: set[int] = set()

        def walk(node: DecompositionTree) -> None:
            if id(node) in on_path:
                raise ValidationError("tree contains a cycle")
            if len(node.children) == 1:
                raise ValidationError(
                    f"internal node with exactly one child: {node.claim.text!r}"
                )
            on_path.add(id(node))
            for child in node.children:
                walk(child)
            on_path.remove(id(node))

        walk(self)


def iter_nodes(tree: DecompositionTree) -> Iterator[tuple[NodePath, DecompositionTree]]:
    """Yield (path, node) pairs in depth-first, left-to-right order, root first."""

    def walk(node: DecompositionTree, path: NodePath):
        yield path, node
        for i, child in enumerate(node.children):
            yield from walk(child, path.child(i))

    yield from walk(tree, NodePath())


def node_at(tree: DecompositionTree, at: NodePath) -> DecompositionTree:
    """Resolve a path to its node; raises PathError when out of range."""
    node = tree
    for depth, index in enumerate(at.indices):
        if not 0 <= index < len(node.children):
            raise PathError(
                f"index {index} out of range at depth {depth} "
                f"(node has {len(node.children)} children)"
            )
        node = node.children[index]
    return node


def leaves(tree: DecompositionTree) -> list[AtomicClaim]:
    """Leaf claims in left-to-right depth-first order; never deduplicates."""
    out: list[AtomicClaim] = []
    for _, node in iter_nodes(tree):
        if node.is_leaf:
            out.append(AtomicClaim(node.claim.text))
    return out


def leaf_paths(tree: DecompositionTree) -> list[NodePath]:
    """Paths of the leaves, in the same order as leaves()."""
    return [path for path, node in iter_nodes(tree) if node.is_leaf]


def descendants(tree: DecompositionTree, at: NodePath = NodePath()) -> list[Claim]:
    """All strict descendants of the addressed node, in DFS order."""
    node = node_at(tree, at)
    return [n.claim for path, n in iter_nodes(node) if path.indices]


def descendant_paths(tree: DecompositionTree, at: NodePath = NodePath()) -> list[NodePath]:
    """Paths (relative to the whole tree) of the addressed node's strict descendants."""
    node = node_at(tree, at)
    return [
        NodePath(at.indices + path.indices)
        for path, _ in iter_nodes(node)
        if path.indices
    ]


def enumerate_subtrees(tree: DecompositionTree) -> list[DecompositionTree]:
    """Every subtree rooted at an internal node, root first, DFS order."""
    return [node for _, node in iter_nodes(tree) if not node.is_leaf]


def internal_node_paths(tree: DecompositionTree) -> list[NodePath]:
    """Paths of the internal nodes, in the same order as enumerate_subtrees()."""
    return [path for path, node in iter_nodes(tree) if not node.is_leaf]


# ---------------------------------------------------------------------------
# Serialization: nested {"claim": text, "children": [...]} records.
# ---------------------------------------------------------------------------

def tree_to_dict(tree: DecompositionTree) -> dict:
    return {
        "claim": tree.claim.text,
        "children": [tree_to_dict(child) for child in tree.children],
    }


def tree_from_dict(data: object) -> DecompositionTree:
    if not isinstance(data, dict):
        raise ValidationError(f"tree record must be an object, got {type(data).__name__}")
    unknown = set(data) - {"claim", "children"}
    if unknown:
        raise ValidationError(f"tree record has unknown fields: {sorted(unknown)}")
    if "claim" not in data:
        raise ValidationError("tree record is missing the 'claim' field")
    children_data = data.get("children", [])
    if not isinstance(children_data, list):
        raise ValidationError("'children' must be a list")
    children = tuple(tree_from_dict(child) for child in children_data)
    return DecompositionTree(Claim(data["claim"]), children)


def dumps_tree(tree: DecompositionTree, indent: int | None = 2) -> str:
    return json.dumps(tree_to_dict(tree), ensure_ascii=False, indent=indent)


def loads_tree(text: str) -> DecompositionTree:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid tree JSON: {exc}") from exc
    return tree_from_dict(data)


def read_trees(fp: IO[str], fmt: str = "tree-jsonl") -> list[DecompositionTree]:
    """Read trees from a file object; fmt is 'tree-json' or 'tree-jsonl'."""
    if fmt == "tree-json":
        return [loads_tree(fp.read())]
    if fmt == "tree-jsonl":
        trees = []
        for lineno, line in enumerate(fp, 1):
            line = line.strip()
            if not line:
                continue
            try:
                trees.append(loads_tree(line))
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
        return trees
    raise ValidationError(f"unknown tree format {fmt!r}")


def write_trees(fp: IO[str], trees: Iterable[DecompositionTree], fmt: str = "tree-jsonl") -> None:
    trees = list(trees)
    if fmt == "tree-json":
        if len(trees) != 1:
            raise ValidationError("tree-json holds exactly one tree per file")
        fp.write(dumps_tree(trees[0]) + "\n")
        return
    if fmt == "tree-jsonl":
        for tree in trees:
            fp.write(dumps_tree(tree, indent=None) + "\n")
        return
    raise ValidationError(f"unknown tree format {fmt!r}")
