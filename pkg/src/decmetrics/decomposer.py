"""Recursive claim decomposition through a generation backend.

The decomposition and verification prompts are versioned text assets with
literal slot markers ("[Claim]", "[Original Claim]", "[Atomic Claims]").
Replies carry their payload in an <answer>...</answer> block of "- " lines,
which is the only part that gets parsed.

A deterministic mock splitter backend makes the whole pipeline runnable
offline: it splits on sentence breaks first, then on the standalone token
"and", and treats anything else as atomic.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .claims import AtomicClaim, Claim, DecompositionTree
from .entailment import (
    SUPPORTED,
    BackendConfig,
    chat_completion,
    mock_judge,
)
from .errors import NonConvergenceError, ParseError, ValidationError

logger = logging.getLogger(__name__)

PROMPT_VERSION = "v1"

ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"

_CLAIM_SLOT = "[Claim]"
_ORIGINAL_CLAIM_SLOT = "[Original Claim]"
_ATOMIC_CLAIMS_SLOT = "[Atomic Claims]"

_SENTENCE_BREAK_RE = re.compile(r"(?<=[.!?])\s+")
_AND_TOKEN_RE = re.compile(r"\s+and\s+")

_CHECK_FIELDS = (
    ("complete", "not complete"),
    ("correct", "not correct"),
    ("independent", "not independent"),
)


@dataclass(frozen=True)
class CheckVerdict:
    """Outcome of verifying a decomposition: all three axes always present."""

    complete: bool
    correct: bool
    independent: bool

    @property
    def passed(self) -> bool:
        return self.complete and self.correct and self.independent


@dataclass(frozen=True)
class DecomposerConfig:
    """Generation backend plus recursion policy for decomposition."""

    backend: BackendConfig
    depth_cap: int = 10
    temperature: float = 0.0

    def __post_init__(self):
        if self.backend.kind not in ("chat-llm", "mock-splitter"):
            raise ValidationError(
                f"backend kind {self.backend.kind!r} cannot generate decompositions"
            )
        if self.depth_cap < 1:
            raise ValidationError("depth_cap must be >= 1")


@lru_cache(maxsize=None)
def _load_prompt(name: str) -> str:
    path = resources.files(__package__).joinpath("prompts", f"{name}.{PROMPT_VERSION}.txt")
    return path.read_text(encoding="utf-8").rstrip("\n")


def render_decomposition_prompt(claim: Claim) -> str:
    """Few-shot decomposition prompt; ends with the claim to decompose."""
    return _load_prompt("decomposition").replace(_CLAIM_SLOT, claim.text)


def render_check_prompt(claim: Claim, atomics: list[AtomicClaim]) -> str:
    """Verification prompt with the claim and its atomic claims filled in."""
    listing = "\n".join(f"- {ac.text}" for ac in atomics)
    template = _load_prompt("reverse_check")
    return template.replace(_ORIGINAL_CLAIM_SLOT, claim.text).replace(
        _ATOMIC_CLAIMS_SLOT, listing
    )


def parse_answer_block(reply: str) -> list[str]:
    """Extract the items of the first terminated answer block.

    Returns the "- "-prefixed lines with the prefix stripped and whitespace
    trimmed; empty items and unprefixed lines are dropped. Raises ParseError
    (carrying the raw reply) when there is no block, the block never closes,
    or it contains no items.
    """
    start = reply.find(ANSWER_OPEN)
    if start < 0:
        raise ParseError("no answer block in reply", reply=reply)
    end = reply.find(ANSWER_CLOSE, start + len(ANSWER_OPEN))
    if end < 0:
        raise ParseError("unterminated answer block", reply=reply)
    body = reply[start + len(ANSWER_OPEN) : end]
    items = []
    for line in body.splitlines():
        stripped = line.strip()
        if stripped.startswith("- "):
            item = stripped[2:].strip()
            if item:
                items.append(item)
    if not items:
        raise ParseError("answer block contains no items", reply=reply)
    return items


def parse_check_verdict(reply: str) -> CheckVerdict:
    """Parse the three-line complete/correct/independent conclusion."""
    items = parse_answer_block(reply)
    if len(items) != 3:
        raise ParseError(
            f"verification answer must have exactly 3 lines, got {len(items)}",
            reply=reply,
        )
    values = []
    for item, (positive, negative) in zip(items, _CHECK_FIELDS):
        norm = item.casefold().rstrip(".")
        if norm == positive:
            values.append(True)
        elif norm == negative:
            values.append(False)
        else:
            raise ParseError(
                f"expected {positive!r} or {negative!r}, got {item!r}", reply=reply
            )
    return CheckVerdict(*values)


# ---------------------------------------------------------------------------
# Generation backends
# ---------------------------------------------------------------------------

def mock_split(text: str) -> list[str]:
    """Deterministic splitter: sentence breaks first, then the token "and".

    A single-sentence claim without a standalone "and" is atomic and comes
    back as a one-element list.
    """
    whole = text.strip()
    sentences = [s.strip() for s in _SENTENCE_BREAK_RE.split(whole) if s.strip()]
    if len(sentences) >= 2:
        return sentences
    ended = whole.endswith(".")
    core = whole[:-1] if ended else whole
    parts = [p.strip() for p in _AND_TOKEN_RE.split(core) if p.strip()]
    if len(parts) >= 2:
        return [p + "." if ended else p for p in parts]
    return [whole]


class ChatGenerationClient:
    """Generation through the chat-completions protocol, temperature 0."""

    def __init__(self, config: BackendConfig, temperature: float = 0.0, sleep=time.sleep):
        self.config = config
        self.temperature = temperature
        self._sleep = sleep

    def generate(self, prompt: str) -> str:
        return chat_completion(
            self.config, prompt, temperature=self.temperature, sleep=self._sleep
        )


class MockSplitterClient:
    """Offline stand-in for the generation model.

    Answers both prompt kinds deterministically: decomposition prompts get
    the mock_split of the final claim; verification prompts get a verdict
    computed from the mock entailment oracle (merged-atomics coverage,
    per-atomic containment, and all-singleton clustering for independence).
    """

    def generate(self, prompt: str) -> str:
        if f"\n{_check_anchor()}" in prompt or prompt.startswith(_check_anchor()):
            claim_text, atomics = _extract_check_inputs(prompt)
            return _render_verdict_reply(claim_text, atomics)
        claim_text = prompt.rsplit("\nClaim: ", 1)[-1]
        parts = mock_split(claim_text)
        return _render_answer_block(parts)


def _check_anchor() -> str:
    return "Original Claim: "


def _extract_check_inputs(prompt: str) -> tuple[str, list[str]]:
    tail = prompt.rsplit(f"\n{_check_anchor()}", 1)[-1]
    claim_text, _, rest = tail.partition("\n\nAtomic Claims:\n")
    atomics = []
    for line in rest.splitlines():
        stripped = line.strip()
        if stripped.startswith("- "):
            atomics.append(stripped[2:].strip())
        elif atomics and not stripped:
            break
    return claim_text.strip(), atomics


def _render_answer_block(items: list[str]) -> str:
    lines = "\n".join(f"  - {item}" for item in items)
    return f"{ANSWER_OPEN}\n{lines}\n{ANSWER_CLOSE}"


def _render_verdict_reply(claim_text: str, atomics: list[str]) -> str:
    if not atomics:
        return _render_answer_block(["not complete", "not correct", "independent"])
    merged = " ".join(atomics)
    complete = mock_judge(merged, claim_text).label == SUPPORTED
    correct = all(mock_judge(claim_text, a).label == SUPPORTED for a in atomics)
    independent = True
    for i in range(len(atomics)):
        for j in range(i + 1, len(atomics)):
            if (
                mock_judge(atomics[i], atomics[j]).label == SUPPORTED
                or mock_judge(atomics[j], atomics[i]).label == SUPPORTED
            ):
                independent = False
                break
        if not independent:
            break
    return _render_answer_block(
        [
            "complete" if complete else "not complete",
            "correct" if correct else "not correct",
            "independent" if independent else "not independent",
        ]
    )


def make_generation_client(config: DecomposerConfig):
    if config.backend.kind == "mock-splitter":
        return MockSplitterClient()
    return ChatGenerationClient(config.backend, temperature=config.temperature)


# ---------------------------------------------------------------------------
# Decomposition operations
# ---------------------------------------------------------------------------

def decompose_once(config: DecomposerConfig, claim: Claim, client=None) -> list[Claim]:
    """One render → generate → parse round; re-asks once on a parse error."""
    client = client if client is not None else make_generation_client(config)
    prompt = render_decomposition_prompt(claim)
    reply = client.generate(prompt)
    try:
        items = parse_answer_block(reply)
    except ParseError as exc:
        logger.warning("unparseable decomposition reply, re-asking once: %s", exc)
        items = parse_answer_block(client.generate(prompt))
    return [Claim(item) for item in items]


def decompose_recursive(config: DecomposerConfig, claim: Claim, client=None) -> DecompositionTree:
    """Recursively decompose until every branch is atomic.

    A node is a leaf exactly when one sub-claim comes back (the claim itself
    is kept, not the echo). A claim that still splits at depth_cap raises
    NonConvergenceError naming it.
    """
    client = client if client is not None else make_generation_client(config)

    def build(node_claim: Claim, depth: int) -> DecompositionTree:
        sub_claims = decompose_once(config, node_claim, client)
        if len(sub_claims) == 1:
            return DecompositionTree(node_claim)
        if depth >= config.depth_cap:
            raise NonConvergenceError(node_claim.text, depth)
        children = tuple(build(sub, depth + 1) for sub in sub_claims)
        return DecompositionTree(node_claim, children)

    return build(claim, 0)


def reverse_check(
    config: DecomposerConfig,
    claim: Claim,
    atomics: list[AtomicClaim],
    client=None,
) -> CheckVerdict:
    """Verify a (claim, atomic claims) pair for the three quality axes."""
    if not atomics:
        raise ValidationError("atomic claim list is empty")
    client = client if client is not None else make_generation_client(config)
    prompt = render_check_prompt(claim, atomics)
    reply = client.generate(prompt)
    try:
        return parse_check_verdict(reply)
    except ParseError as exc:
        logger.warning("unparseable verification reply, re-asking once: %s", exc)
        return parse_check_verdict(client.generate(prompt))
