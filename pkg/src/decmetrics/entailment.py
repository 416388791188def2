"""Entailment judgments against a pluggable backend.

Three backends share one interface: a remote NLI scorer speaking a small
JSON protocol, a chat-style LLM adapter, and a deterministic offline mock
oracle based on token containment. Judgments are cached direction-sensitively
and batch calls are bounded by the configured in-flight limit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import string
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

from .errors import BackendError, ProtocolError, ValidationError

logger = logging.getLogger(__name__)

SUPPORTED = "supported"
UNSUPPORTED = "unsupported"

API_KEY_ENV = "DECMETRICS_API_KEY"

# Entailment-capable backend kinds; "mock-splitter" is a generation-only kind
# accepted by BackendConfig for the decomposer.
ENTAILMENT_KINDS = ("http-nli", "chat-llm", "mock")
GENERATION_KINDS = ("chat-llm", "mock-splitter")

RETRY_BASE_DELAY = 0.5
RETRY_FACTOR = 2.0

CHAT_JUDGMENT_INSTRUCTION = (
    "Decide whether the hypothesis is supported by the premise. "
    "Answer with exactly one word: supported or unsupported.\n\n"
    "Premise: {premise}\n"
    "Hypothesis: {hypothesis}"
)

_LABEL_RE = re.compile(r"unsupported|supported", re.IGNORECASE)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class Judgment:
    """One entailment verdict: a label plus the supported-probability."""

    label: str
    p_supported: float

    def __post_init__(self):
        if self.label not in (SUPPORTED, UNSUPPORTED):
            raise ValidationError(f"unknown judgment label {self.label!r}")
        if not 0.0 <= self.p_supported <= 1.0:
            raise ValidationError(f"p_supported out of [0,1]: {self.p_supported}")


@dataclass(frozen=True)
class BackendConfig:
    """Connection and policy settings for a judgment or generation backend."""

    kind: str = "mock"
    endpoint: str | None = None
    model_name: str | None = None
    timeout: float = 30.0
    max_in_flight: int = 4
    max_retries: int = 3
    threshold: float = 0.5

    def __post_init__(self):
        known = set(ENTAILMENT_KINDS) | set(GENERATION_KINDS)
        if self.kind not in known:
            raise ValidationError(f"unknown backend kind {self.kind!r}")
        remote = self.kind not in ("mock", "mock-splitter")
        if remote and not self.endpoint:
            raise ValidationError(f"backend kind {self.kind!r} requires an endpoint")
        if not remote and self.endpoint:
            raise ValidationError(f"backend kind {self.kind!r} takes no endpoint")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError(f"threshold out of [0,1]: {self.threshold}")


def normalize_tokens(text: str) -> frozenset[str]:
    """Case-fold, strip punctuation, split on whitespace; returns the token set."""
    return frozenset(text.casefold().translate(_PUNCT_TABLE).split())


def mock_judge(premise: str, hypothesis: str) -> Judgment:
    """Deterministic token-containment oracle.

    p_supported is the fraction of hypothesis tokens present in the premise;
    the label is supported only on exact containment (p == 1.0), so a single
    missing token flips the verdict. A hypothesis that normalizes to zero
    tokens is vacuously covered.
    """
    _require_pair(premise, hypothesis)
    hyp = normalize_tokens(hypothesis)
    if not hyp:
        return Judgment(SUPPORTED, 1.0)
    prem = normalize_tokens(premise)
    p = len(hyp & prem) / len(hyp)
    return Judgment(SUPPORTED if p == 1.0 else UNSUPPORTED, p)


def cache_key(premise: str, hypothesis: str) -> str:
    """Stable, direction-sensitive key for a (premise, hypothesis) pair."""
    payload = json.dumps([premise.strip(), hypothesis.strip()], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _require_pair(premise: str, hypothesis: str) -> None:
    if not premise or not premise.strip():
        raise ValidationError("premise is empty")
    if not hypothesis or not hypothesis.strip():
        raise ValidationError("hypothesis is empty")


class JudgmentCache:
    """Thread-safe judgment cache with read-your-writes semantics."""

    def __init__(self):
        self._data: dict[str, Judgment] = {}
        self._lock = threading.Lock()

    def get(self, key: str) -> Judgment | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, judgment: Judgment) -> None:
        with self._lock:
            self._data[key] = judgment

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)


def _is_transient(exc: Exception) -> bool:
    return isinstance(exc, (requests.Timeout, requests.ConnectionError))


def request_with_retries(
    send,
    max_retries: int,
    *,
    sleep=time.sleep,
    rng: random.Random | None = None,
) -> requests.Response:
    """Call send() until a response with status < 500 or retries run out.

    Retries timeouts, connection failures, and 5xx responses with exponential
    backoff (0.5 s base, factor 2, jittered by a uniform 0.5x-1.5x multiplier).
    """
    rng = rng or random
    attempt = 0
    while True:
        try:
            resp = send()
            if resp.status_code < 500:
                return resp
            failure = f"server error {resp.status_code}"
        except requests.RequestException as exc:
            if not _is_transient(exc):
                raise BackendError(f"request failed: {exc}") from exc
            failure = f"{type(exc).__name__}: {exc}"
        if attempt >= max_retries:
            raise BackendError(f"request failed after {attempt + 1} attempts: {failure}")
        delay = RETRY_BASE_DELAY * (RETRY_FACTOR ** attempt) * (0.5 + rng.random())
        logger.debug("transient failure (%s); retrying in %.2fs", failure, delay)
        sleep(delay)
        attempt += 1


def chat_completion(
    config: BackendConfig,
    prompt: str,
    *,
    temperature: float = 0.0,
    sleep=time.sleep,
) -> str:
    """POST a single-turn chat request and return the reply text.

    The API key, when needed, is read from the DECMETRICS_API_KEY environment
    variable and sent as a bearer token.
    """
    url = config.endpoint.rstrip("/") + "/v1/chat/completions"
    body = {
        "model": config.model_name or "",
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
    }
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    resp = request_with_retries(
        lambda: requests.post(url, json=body, headers=headers, timeout=config.timeout),
        config.max_retries,
        sleep=sleep,
    )
    if resp.status_code != 200:
        raise BackendError(f"chat backend returned {resp.status_code}: {resp.text[:500]}")
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed chat response: {exc}", body=resp.text) from exc
    if not isinstance(content, str):
        raise ProtocolError("chat response content is not text", body=resp.text)
    return content


class EntailmentClient:
    """Shareable judgment handle: one backend config plus a concurrency-safe cache.

    Subclasses implement _judge_uncached; everything else (validation, cache,
    batching, in-flight bounding) is common.
    """

    def __init__(self, config: BackendConfig, cache: JudgmentCache | None = None):
        self.config = config
        self.cache = cache if cache is not None else JudgmentCache()

    # -- single judgment ----------------------------------------------------
    def judge(self, premise: str, hypothesis: str) -> Judgment:
        _require_pair(premise, hypothesis)
        key = cache_key(premise, hypothesis)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        judgment = self._judge_uncached(premise, hypothesis)
        self.cache.put(key, judgment)
        return judgment

    # -- batched judgments --------------------------------------------------
    def judge_batch(self, pairs: list[tuple[str, str]]) -> list[Judgment]:
        """Judge many pairs; result order matches input order.

        Duplicate pairs trigger at most one backend call. At most
        config.max_in_flight requests run simultaneously. The first failing
        pair (in input order) aborts the batch with its index attached.
        """
        if not pairs:
            return []
        for i, (premise, hypothesis) in enumerate(pairs):
            try:
                _require_pair(premise, hypothesis)
            except ValidationError as exc:
                raise ValidationError(f"pair {i}: {exc}") from exc

        unique: dict[str, tuple[str, str]] = {}
        for premise, hypothesis in pairs:
            unique.setdefault(cache_key(premise, hypothesis), (premise, hypothesis))

        results: dict[str, Judgment] = {}
        failures: dict[str, Exception] = {}

        def run_one(key: str, pair: tuple[str, str]):
            try:
                results[key] = self.judge(*pair)
            except Exception as exc:  # noqa: BLE001 - reported with pair index below
                failures[key] = exc

        if len(unique) == 1 or self.config.max_in_flight == 1:
            for key, pair in unique.items():
                run_one(key, pair)
        else:
            with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
                futures = [pool.submit(run_one, k, p) for k, p in unique.items()]
                for future in futures:
                    future.result()

        if failures:
            for i, (premise, hypothesis) in enumerate(pairs):
                exc = failures.get(cache_key(premise, hypothesis))
                if exc is not None:
                    raise BackendError(f"pair {i} failed: {exc}", index=i) from exc
        return [results[cache_key(p, h)] for p, h in pairs]

    # -- hooks ---------------------------------------------------------------
    def _judge_uncached(self, premise: str, hypothesis: str) -> Judgment:
        raise NotImplementedError

    def supports(self, p_supported: float) -> bool:
        """Whether a probability maps to the supported label on this backend."""
        return p_supported >= self.config.threshold


class MockEntailmentClient(EntailmentClient):
    """Offline deterministic oracle; see mock_judge for the rule."""

    def _judge_uncached(self, premise: str, hypothesis: str) -> Judgment:
        return mock_judge(premise, hypothesis)

    def supports(self, p_supported: float) -> bool:
        return p_supported == 1.0


class HttpNliClient(EntailmentClient):
    """Remote NLI scorer speaking the /v1/entail JSON protocol."""

    def _judge_uncached(self, premise: str, hypothesis: str) -> Judgment:
        url = self.config.endpoint.rstrip("/") + "/v1/entail"
        body = {"premise": premise, "hypothesis": hypothesis}
        resp = request_with_retries(
            lambda: requests.post(url, json=body, timeout=self.config.timeout),
            self.config.max_retries,
        )
        if resp.status_code != 200:
            raise BackendError(f"NLI backend returned {resp.status_code}: {resp.text[:500]}")
        try:
            data = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"NLI response is not JSON: {exc}", body=resp.text) from exc
        if (
            not isinstance(data, dict)
            or data.get("label") not in (SUPPORTED, UNSUPPORTED)
            or not isinstance(data.get("p_supported"), (int, float))
            or not 0.0 <= data["p_supported"] <= 1.0
        ):
            raise ProtocolError("NLI response missing valid label/p_supported", body=resp.text)
        p = float(data["p_supported"])
        # The final label is the probability mapped through the configured
        # threshold, keeping label/probability coherence client-side.
        return Judgment(SUPPORTED if self.supports(p) else UNSUPPORTED, p)


class ChatLlmClient(EntailmentClient):
    """Chat-completions adapter: fixed judgment instruction, word-level parse.

    Chat backends return no calibrated score, so the probability is 1.0 or
    0.0 according to the first occurrence of supported/unsupported in the
    reply (an occurrence of "unsupported" is never read as "supported").
    """

    def _judge_uncached(self, premise: str, hypothesis: str) -> Judgment:
        prompt = CHAT_JUDGMENT_INSTRUCTION.format(premise=premise, hypothesis=hypothesis)
        reply = chat_completion(self.config, prompt, temperature=0.0)
        match = _LABEL_RE.search(reply)
        if match is None:
            raise ProtocolError("chat reply contains no supported/unsupported verdict", body=reply)
        label = match.group(0).lower()
        return Judgment(label, 1.0 if label == SUPPORTED else 0.0)


_CLIENT_CLASSES = {
    "mock": MockEntailmentClient,
    "http-nli": HttpNliClient,
    "chat-llm": ChatLlmClient,
}


def make_client(config: BackendConfig, cache: JudgmentCache | None = None) -> EntailmentClient:
    if config.kind not in _CLIENT_CLASSES:
        raise ValidationError(f"backend kind {config.kind!r} cannot judge entailment")
    return _CLIENT_CLASSES[config.kind](config, cache)


def as_client(backend: BackendConfig | EntailmentClient) -> EntailmentClient:
    if isinstance(backend, EntailmentClient):
        return backend
    return make_client(backend)


def judge(backend: BackendConfig | EntailmentClient, premise: str, hypothesis: str) -> Judgment:
    """Judge one (premise, hypothesis) pair; see EntailmentClient.judge."""
    return as_client(backend).judge(premise, hypothesis)


def judge_batch(
    backend: BackendConfig | EntailmentClient, pairs: list[tuple[str, str]]
) -> list[Judgment]:
    """Judge many pairs order-preservingly; see EntailmentClient.judge_batch."""
    return as_client(backend).judge_batch(pairs)
