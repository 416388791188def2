"""Synthetic training/evaluation data from decomposition trees.

Per-metric positive and negative examples are generated from a tree and its
subtrees: coverage pairs for completeness (leaf combinations vs the node
claim), node/descendant pairs for correctness, and ancestor-overlap pairs
for semantic entropy. Trees can be filtered through the reverse check first
and split tree-wise into train/eval sides.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence
from urllib.parse import quote

import requests

from .claims import (
    Claim,
    DecompositionTree,
    NodePath,
    descendant_paths,
    descendants,
    enumerate_subtrees,
    internal_node_paths,
    iter_nodes,
    leaf_paths,
    leaves,
)
from .decomposer import CheckVerdict, DecomposerConfig, reverse_check
from .entailment import SUPPORTED, UNSUPPORTED, request_with_retries
from .errors import (
    BackendError,
    DisambiguationError,
    ReverseCheckAborted,
    SummaryNotFoundError,
    ValidationError,
)

logger = logging.getLogger(__name__)

METRIC_COMPLETENESS = "completeness"
METRIC_CORRECTNESS = "correctness"
METRIC_ENTROPY = "semantic-entropy"
METRICS = (METRIC_COMPLETENESS, METRIC_CORRECTNESS, METRIC_ENTROPY)

PAIRING_MODES = ("direct-children", "leaf-frontier", "both")


@dataclass(frozen=True)
class LabeledExample:
    """One synthesized (premise, hypothesis, label) record for one metric."""

    metric: str
    premise: str
    hypothesis: str
    label: str
    tree_id: str = ""
    paths: tuple[NodePath, ...] = ()

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}")
        if self.label not in (SUPPORTED, UNSUPPORTED):
            raise ValidationError(f"unknown label {self.label!r}")
        if not self.premise.strip():
            raise ValidationError("premise is empty")
        if not self.hypothesis.strip():
            raise ValidationError("hypothesis is empty")
        object.__setattr__(self, "paths", tuple(self.paths))

    def to_row(self) -> dict:
        return {
            "metric": self.metric,
            "premise": self.premise,
            "hypothesis": self.hypothesis,
            "label": self.label,
            "tree_id": self.tree_id,
            "paths": [p.to_list() for p in self.paths],
        }


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for example generation and the train/eval split."""

    negatives_per_positive: int = 1
    seed: int = 0
    split_ratio: float = 0.8
    pairing_mode: str = "both"

    def __post_init__(self):
        if self.negatives_per_positive < 1:
            raise ValidationError("negatives_per_positive must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValidationError(f"split_ratio must be in (0,1), got {self.split_ratio}")
        if self.pairing_mode not in PAIRING_MODES:
            raise ValidationError(f"unknown pairing_mode {self.pairing_mode!r}")


# ---------------------------------------------------------------------------
# Entity summaries
# ---------------------------------------------------------------------------

class FileSummarySource:
    """Offline fixtures: a directory of {entity}.txt summary files."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def fetch(self, entity: str) -> str:
        path = self.directory / f"{entity}.txt"
        if not path.is_file():
            raise SummaryNotFoundError(f"no summary fixture for entity {entity!r}")
        text = path.read_text(encoding="utf-8").strip()
        if not text:
            raise SummaryNotFoundError(f"summary fixture for {entity!r} is empty")
        return text


class WikipediaSummarySource:
    """Plain-text summaries from the public page-summary endpoint."""

    def __init__(
        self,
        base_url: str = "https://en.wikipedia.org/api/rest_v1",
        timeout: float = 30.0,
        max_retries: int = 3,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries

    def fetch(self, entity: str) -> str:
        url = f"{self.base_url}/page/summary/{quote(entity, safe='')}"
        resp = request_with_retries(
            lambda: requests.get(url, timeout=self.timeout), self.max_retries
        )
        if resp.status_code == 404:
            raise SummaryNotFoundError(f"no page for entity {entity!r}")
        if resp.status_code != 200:
            raise BackendError(f"summary endpoint returned {resp.status_code} for {entity!r}")
        try:
            data = resp.json()
        except ValueError as exc:
            raise BackendError(f"summary endpoint sent non-JSON for {entity!r}") from exc
        if data.get("type") == "disambiguation":
            raise DisambiguationError(f"entity {entity!r} is a disambiguation page")
        extract = (data.get("extract") or "").strip()
        if not extract:
            raise SummaryNotFoundError(f"entity {entity!r} has no summary text")
        return extract


def fetch_summary(entity: str, source=None) -> str:
    """Fetch the plain-text summary for an entity through the given source."""
    if not entity or not entity.strip():
        raise ValidationError("entity name is empty")
    if source is None:
        source = WikipediaSummarySource()
    return source.fetch(entity.strip())


# ---------------------------------------------------------------------------
# Example generation
# ---------------------------------------------------------------------------

def _pairings(tree: DecompositionTree, mode: str):
    """(texts, paths) pairings of the tree's root per the pairing mode.

    Identical pairings (a node whose children are all leaves) collapse into
    one, so "both" never emits duplicates.
    """
    if tree.is_leaf:
        return []
    options: list[tuple[list[str], list[NodePath]]] = []
    if mode in ("direct-children", "both"):
        texts = [child.claim.text for child in tree.children]
        paths = [NodePath((i,)) for i in range(len(tree.children))]
        options.append((texts, paths))
    if mode in ("leaf-frontier", "both"):
        texts = [ac.text for ac in leaves(tree)]
        paths = leaf_paths(tree)
        if not any(texts == existing[0] for existing in options):
            options.append((texts, paths))
    return options


def gen_completeness_examples(
    tree: DecompositionTree,
    config: SynthConfig,
    rng: random.Random,
    tree_id: str = "",
    base_path: NodePath = NodePath(),
) -> list[LabeledExample]:
    """Coverage examples for the tree's root node.

    One shuffled positive per pairing (leaf texts joined by spaces against
    the node claim); each negative drops a uniformly sampled non-empty proper
    subset of the pairing's leaves. Trees with fewer than two leaves are
    skipped and reported.
    """
    if len(leaves(tree)) < 2:
        logger.info("completeness: skipping single-leaf tree %s", tree_id or "<anon>")
        return []
    out: list[LabeledExample] = []
    for texts, paths in _pairings(tree, config.pairing_mode):
        n = len(texts)
        if n < 2:
            continue
        order = list(range(n))
        rng.shuffle(order)
        out.append(
            LabeledExample(
                metric=METRIC_COMPLETENESS,
                premise=" ".join(texts[i] for i in order),
                hypothesis=tree.claim.text,
                label=SUPPORTED,
                tree_id=tree_id,
                paths=(base_path, *(_absolute(base_path, paths[i]) for i in order)),
            )
        )
        for _ in range(config.negatives_per_positive):
            mask = rng.randrange(1, 2**n - 1)  # non-empty proper subset to drop
            kept = [i for i in range(n) if not (mask >> i) & 1]
            rng.shuffle(kept)
            out.append(
                LabeledExample(
                    metric=METRIC_COMPLETENESS,
                    premise=" ".join(texts[i] for i in kept),
                    hypothesis=tree.claim.text,
                    label=UNSUPPORTED,
                    tree_id=tree_id,
                    paths=(base_path, *(_absolute(base_path, paths[i]) for i in kept)),
                )
            )
    return out


def _absolute(base: NodePath, relative: NodePath) -> NodePath:
    return NodePath(base.indices + relative.indices)


def gen_correctness_examples(
    tree: DecompositionTree,
    corpus: Sequence[DecompositionTree],
    config: SynthConfig,
    rng: random.Random,
    tree_id: str = "",
    base_path: NodePath = NodePath(),
) -> list[LabeledExample]:
    """Faithfulness examples for the tree's root node.

    Positives pair the node claim with each strict descendant; negatives pair
    it with claims sampled from other trees in the corpus. An empty negative
    pool is reported, not an error.
    """
    if tree.is_leaf:
        raise ValidationError("correctness examples need at least one internal node")
    own_texts = {tree.claim.text} | {c.text for c in descendants(tree)}
    out: list[LabeledExample] = []
    for claim_obj, path in zip(descendants(tree), descendant_paths(tree)):
        out.append(
            LabeledExample(
                metric=METRIC_CORRECTNESS,
                premise=tree.claim.text,
                hypothesis=claim_obj.text,
                label=SUPPORTED,
                tree_id=tree_id,
                paths=(base_path, _absolute(base_path, path)),
            )
        )
    pool = [
        node.claim.text
        for other in corpus
        for _, node in iter_nodes(other)
        if node.claim.text not in own_texts
    ]
    if not pool:
        logger.info("correctness: empty negative pool for tree %s", tree_id or "<anon>")
        return out
    n_negatives = config.negatives_per_positive * len(out)
    for _ in range(n_negatives):
        out.append(
            LabeledExample(
                metric=METRIC_CORRECTNESS,
                premise=tree.claim.text,
                hypothesis=rng.choice(pool),
                label=UNSUPPORTED,
                tree_id=tree_id,
                paths=(base_path,),
            )
        )
    return out


def gen_entropy_examples(
    tree: DecompositionTree,
    config: SynthConfig,
    rng: random.Random,
    tree_id: str = "",
    base_path: NodePath = NodePath(),
) -> list[LabeledExample]:
    """Overlap examples from the tree's non-root nodes.

    Supported pairs are ancestor/descendant pairs among non-root nodes;
    unsupported pairs come from disjoint subtrees, sampled at
    negatives_per_positive per supported pair. Each unordered pair appears
    at most once.
    """
    nodes = [(path, node) for path, node in iter_nodes(tree) if path.indices]
    out: list[LabeledExample] = []
    disjoint: list[tuple[NodePath, str, NodePath, str]] = []
    for i in range(len(nodes)):
        path_a, node_a = nodes[i]
        for j in range(i + 1, len(nodes)):
            path_b, node_b = nodes[j]
            if _is_prefix(path_a, path_b):
                out.append(
                    LabeledExample(
                        metric=METRIC_ENTROPY,
                        premise=node_a.claim.text,
                        hypothesis=node_b.claim.text,
                        label=SUPPORTED,
                        tree_id=tree_id,
                        paths=(_absolute(base_path, path_a), _absolute(base_path, path_b)),
                    )
                )
            elif not _is_prefix(path_b, path_a):
                disjoint.append((path_a, node_a.claim.text, path_b, node_b.claim.text))
    n_negatives = min(config.negatives_per_positive * len(out), len(disjoint))
    for path_a, text_a, path_b, text_b in (
        rng.sample(disjoint, n_negatives) if n_negatives else []
    ):
        out.append(
            LabeledExample(
                metric=METRIC_ENTROPY,
                premise=text_a,
                hypothesis=text_b,
                label=UNSUPPORTED,
                tree_id=tree_id,
                paths=(_absolute(base_path, path_a), _absolute(base_path, path_b)),
            )
        )
    return out


def _is_prefix(shorter: NodePath, longer: NodePath) -> bool:
    return (
        len(shorter.indices) < len(longer.indices)
        and longer.indices[: len(shorter.indices)] == shorter.indices
    )


def synthesize_examples(
    trees: Sequence[tuple[str, DecompositionTree]],
    config: SynthConfig,
) -> dict[str, list[LabeledExample]]:
    """Run all three generators over every tree in the set.

    Completeness and correctness walk every internal-node subtree (so every
    granularity level contributes); entropy pairs are enumerated once per
    tree to keep each unordered pair unique. A single seeded RNG threads
    through in input order, making the output a pure function of
    (trees, config).
    """
    rng = random.Random(config.seed)
    out: dict[str, list[LabeledExample]] = {m: [] for m in METRICS}
    for tree_id, tree in trees:
        others = [t for other_id, t in trees if other_id != tree_id]
        for path, subtree in zip(internal_node_paths(tree), enumerate_subtrees(tree)):
            out[METRIC_COMPLETENESS].extend(
                gen_completeness_examples(subtree, config, rng, tree_id, path)
            )
            out[METRIC_CORRECTNESS].extend(
                gen_correctness_examples(subtree, others, config, rng, tree_id, path)
            )
        out[METRIC_ENTROPY].extend(gen_entropy_examples(tree, config, rng, tree_id))
    return out


# ---------------------------------------------------------------------------
# Reverse-check filtering and the train/eval split
# ---------------------------------------------------------------------------

def filter_by_reverse_check(
    trees: Sequence[DecompositionTree],
    config: DecomposerConfig,
    client=None,
    *,
    per_subtree: bool = False,
):
    """Partition trees into (kept, rejected-with-verdicts) via the reverse check.

    Root-level by default: a tree passes when checking its root claim against
    its leaf frontier returns all three axes true. With per_subtree, every
    internal-node subtree must pass; the first failing verdict is recorded.
    A backend failure aborts with the progress made so far attached.
    """
    kept: list[DecompositionTree] = []
    rejected: list[tuple[DecompositionTree, CheckVerdict]] = []
    for i, tree in enumerate(trees):
        targets = enumerate_subtrees(tree) if per_subtree else [tree]
        if not targets:
            targets = [tree]  # a single leaf still gets a root-level check
        try:
            verdict = None
            for target in targets:
                verdict = reverse_check(config, target.claim, leaves(target), client)
                if not verdict.passed:
                    break
        except BackendError as exc:
            raise ReverseCheckAborted(
                f"reverse check failed on tree {i}: {exc}",
                completed=i,
                kept=kept,
                rejected=rejected,
            ) from exc
        if verdict.passed:
            kept.append(tree)
        else:
            rejected.append((tree, verdict))
    return kept, rejected


def split_train_eval(items: Sequence, config: SynthConfig):
    """Deterministic tree-wise split; |train| = round(split_ratio * N).

    Items may be ids or (id, payload) pairs; everything belonging to one
    tree lands on exactly one side, and sides preserve input order.
    """
    n = len(items)
    if n < 2:
        raise ValidationError(f"need at least 2 trees to split, got {n}")
    indices = list(range(n))
    random.Random(config.seed).shuffle(indices)
    n_train = round(config.split_ratio * n)
    train_idx = set(indices[:n_train])
    train = [items[i] for i in range(n) if i in train_idx]
    evaluation = [items[i] for i in range(n) if i not in train_idx]
    return train, evaluation


def sort_examples(examples: list[LabeledExample]) -> list[LabeledExample]:
    """Stable order for emission: by tree id, then node paths."""
    return sorted(examples, key=lambda e: (e.tree_id, tuple(p.indices for p in e.paths)))


def write_examples_jsonl(fp: IO[str], examples: list[LabeledExample]) -> None:
    for example in sort_examples(examples):
        fp.write(json.dumps(example.to_row(), ensure_ascii=False) + "\n")
