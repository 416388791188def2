"""Quality metrics for a (claim, atomic claims) pair.

Three scores: coverage of the original claim by the merged atomic claims
(completeness), the fraction of atomic claims the original claim entails
(correctness), and the entropy of the cluster-size distribution after
grouping mutually entailing atomic claims (semantic entropy). A weighted
sum of the three serves as a composite reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .claims import AtomicClaim, Claim
from .entailment import (
    SUPPORTED,
    BackendConfig,
    EntailmentClient,
    Judgment,
    as_client,
)
from .errors import ValidationError


@dataclass(frozen=True)
class Partition:
    """Disjoint clusters of atomic-claim indices covering {0, ..., n-1}.

    Indices ascend within each cluster and clusters are ordered by their
    smallest member.
    """

    clusters: tuple[tuple[int, ...], ...]
    n: int

    def __post_init__(self):
        clusters = tuple(tuple(c) for c in self.clusters)
        object.__setattr__(self, "clusters", clusters)
        seen: set[int] = set()
        for cluster in clusters:
            if not cluster:
                raise ValidationError("empty cluster")
            if list(cluster) != sorted(cluster):
                raise ValidationError(f"cluster indices not ascending: {cluster}")
            for i in cluster:
                if i in seen:
                    raise ValidationError(f"index {i} appears in two clusters")
                seen.add(i)
        if seen != set(range(self.n)):
            raise ValidationError(f"clusters do not cover 0..{self.n - 1} exactly")
        if list(clusters) != sorted(clusters, key=lambda c: c[0]):
            raise ValidationError("clusters not ordered by smallest member")

    @staticmethod
    def from_groups(groups: list[list[int]], n: int) -> "Partition":
        """Normalize arbitrary groups into canonical order."""
        ordered = sorted((tuple(sorted(g)) for g in groups), key=lambda c: c[0])
        return Partition(tuple(ordered), n)

    def sizes(self) -> list[int]:
        return [len(c) for c in self.clusters]


@dataclass(frozen=True)
class RewardWeights:
    """Relative importance of the three metric dimensions (defaults 1, 1, 1)."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class MetricReport:
    """All metric outputs for one (claim, atomic claims) pair.

    log_base records the base the entropy was computed in (e for nats),
    so the [0, log n] bound can be checked exactly.
    """

    completeness: float
    correctness: float
    semantic_entropy: float
    reward: float
    partition: Partition
    per_claim_verdicts: tuple[Judgment, ...] = field(default_factory=tuple)
    log_base: float = math.e

    def __post_init__(self):
        object.__setattr__(self, "per_claim_verdicts", tuple(self.per_claim_verdicts))
        if not 0.0 <= self.completeness <= 1.0:
            raise ValidationError(f"completeness out of [0,1]: {self.completeness}")
        if not 0.0 <= self.correctness <= 1.0:
            raise ValidationError(f"correctness out of [0,1]: {self.correctness}")
        n = self.partition.n
        max_entropy = math.log(n) / math.log(self.log_base) if n > 1 else 0.0
        if not -1e-12 <= self.semantic_entropy <= max_entropy + 1e-12:
            raise ValidationError(
                f"semantic entropy {self.semantic_entropy} outside [0, log n]"
            )

    def to_row(self, record_id: str) -> dict:
        """JSONL row for reports keyed by a record id."""
        return {
            "id": record_id,
            "completeness": self.completeness,
            "correctness": self.correctness,
            "semantic_entropy": self.semantic_entropy,
            "reward": self.reward,
            "n_atomic": self.partition.n,
            "clusters": [list(c) for c in self.partition.clusters],
            "verdicts": [j.label for j in self.per_claim_verdicts],
        }


class UnionFind:
    """Union-find over 0..n-1 with path compression, for cluster linking."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra

    def groups(self) -> list[list[int]]:
        by_root: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            by_root.setdefault(self.find(i), []).append(i)
        return list(by_root.values())


def merge_atomics(atomics: list[AtomicClaim]) -> str:
    """Single-space concatenation of atomic-claim texts in the given order."""
    return " ".join(ac.text for ac in atomics)


def _require_atomics(atomics: list[AtomicClaim]) -> None:
    if not atomics:
        raise ValidationError("atomic claim list is empty")


def completeness(
    backend: BackendConfig | EntailmentClient,
    claim: Claim,
    atomics: list[AtomicClaim],
) -> float:
    """Probability that the merged atomic claims cover the original claim.

    One backend call with premise = merged atomics, hypothesis = the claim.
    """
    _require_atomics(atomics)
    client = as_client(backend)
    return client.judge(merge_atomics(atomics), claim.text).p_supported


def correctness(
    backend: BackendConfig | EntailmentClient,
    claim: Claim,
    atomics: list[AtomicClaim],
) -> tuple[float, list[Judgment]]:
    """Fraction of atomic claims entailed by the claim, with per-claim verdicts."""
    _require_atomics(atomics)
    client = as_client(backend)
    verdicts = client.judge_batch([(claim.text, ac.text) for ac in atomics])
    supported = sum(1 for j in verdicts if j.label == SUPPORTED)
    return supported / len(atomics), verdicts


def cluster(
    backend: BackendConfig | EntailmentClient,
    atomics: list[AtomicClaim],
    *,
    require_both_directions: bool = False,
) -> Partition:
    """Group atomic claims into clusters of mutual entailment.

    Both directions of every unordered pair are judged (the cache collapses
    duplicates); two claims link when either direction is supported, or when
    both are if require_both_directions is set. Clusters are the connected
    components of the link graph.
    """
    _require_atomics(atomics)
    client = as_client(backend)
    n = len(atomics)
    pairs: list[tuple[str, str]] = []
    index_pairs: list[tuple[int, int]] = []
    for i in range(n):
        for j in range(i + 1, n):
            pairs.append((atomics[i].text, atomics[j].text))
            pairs.append((atomics[j].text, atomics[i].text))
            index_pairs.append((i, j))
    try:
        judgments = client.judge_batch(pairs)
    except BackendError as exc:
        if exc.index is not None:
            i, j = index_pairs[exc.index // 2]
            raise BackendError(
                f"clustering failed on atomic-claim pair ({i}, {j}): {exc}",
                index=exc.index,
            ) from exc
        raise

    uf = UnionFind(n)
    for k, (i, j) in enumerate(index_pairs):
        forward = judgments[2 * k].label == SUPPORTED
        backward = judgments[2 * k + 1].label == SUPPORTED
        linked = (forward and backward) if require_both_directions else (forward or backward)
        if linked:
            uf.union(i, j)
    return Partition.from_groups(uf.groups(), n)


def semantic_entropy(partition: Partition, log_base: float = math.e) -> float:
    """Entropy of the cluster-size distribution, in nats by default.

    P(C) = |C| / n; the 0·log 0 convention applies (clusters are non-empty,
    so it never actually triggers). log_base=2 yields bits.
    """
    if partition.n < 1:
        raise ValidationError("partition is empty")
    total = 0.0
    for size in partition.sizes():
        p = size / partition.n
        if p > 0.0:
            total -= p * math.log(p)
    if log_base != math.e:
        total /= math.log(log_base)
    # Clamp the tiny negative residue float rounding can leave behind.
    return max(total, 0.0)


def reward(
    completeness_score: float,
    correctness_score: float,
    entropy_score: float,
    weights: RewardWeights = RewardWeights(),
) -> float:
    """Composite reward: alpha·completeness + beta·correctness + gamma·entropy."""
    for name, value in (
        ("completeness", completeness_score),
        ("correctness", correctness_score),
        ("semantic entropy", entropy_score),
    ):
        if not math.isfinite(value):
            raise ValidationError(f"{name} must be finite, got {value}")
    if not 0.0 <= completeness_score <= 1.0:
        raise ValidationError(f"completeness out of [0,1]: {completeness_score}")
    if not 0.0 <= correctness_score <= 1.0:
        raise ValidationError(f"correctness out of [0,1]: {correctness_score}")
    if entropy_score < 0.0:
        raise ValidationError(f"semantic entropy must be >= 0, got {entropy_score}")
    return (
        weights.alpha * completeness_score
        + weights.beta * correctness_score
        + weights.gamma * entropy_score
    )


def evaluate(
    backend: BackendConfig | EntailmentClient,
    claim: Claim,
    atomics: list[AtomicClaim],
    weights: RewardWeights = RewardWeights(),
    *,
    log_base: float = math.e,
) -> MetricReport:
    """Run all metrics for one pair and assemble the report."""
    _require_atomics(atomics)
    client = as_client(backend)
    cp = completeness(client, claim, atomics)
    cr, verdicts = correctness(client, claim, atomics)
    partition = cluster(client, atomics)
    se = semantic_entropy(partition, log_base=log_base)
    return MetricReport(
        completeness=cp,
        correctness=cr,
        semantic_entropy=se,
        reward=reward(cp, cr, se, weights),
        partition=partition,
        per_claim_verdicts=tuple(verdicts),
        log_base=log_base,
    )
