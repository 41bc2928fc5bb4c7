"""Chat-completion and embedding endpoint clients.

One wire dialect (OpenAI-compatible) plus a deterministic simulated
provider, behind a shared interface with client-side rate limiting,
exponential-backoff retries, and a content-addressed response cache that
makes every audit re-run reproducible without network access.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Literal, Optional, Protocol

import httpx
from pydantic import BaseModel, Field, field_validator

from .errors import ProviderError

EMBEDDING_DIM = 256

RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class ChatMessage(BaseModel):
    role: Role
    content: str


class ChatRequest(BaseModel):
    model: str
    messages: list[ChatMessage]
    temperature: float = 0.0
    max_tokens: int = 1024
    request_tag: str = ""  # tracing only; excluded from the cache key

    @field_validator("messages")
    @classmethod
    def _has_user_message(cls, v: list[ChatMessage]) -> list[ChatMessage]:
        if not any(m.role == Role.USER for m in v):
            raise ValueError("at least one user message required")
        return v

    @field_validator("temperature")
    @classmethod
    def _temp_nonneg(cls, v: float) -> float:
        if v < 0:
            raise ValueError("temperature must be >= 0")
        return v


class ChatExchange(BaseModel):
    request: ChatRequest
    response_text: str
    provider_id: str
    timestamp: str
    cache_key: str


class SimulatedRaterSpec(BaseModel):
    """Deterministic rater used to validate the audit pipeline.

    ``group_offsets`` maps marginal keys ("female", "Black", ...) or cell
    keys ("Black/female") to additive score offsets. ``signal_channel``
    controls how the rater "sees" the group: from catalog names in the
    prompt text, or from the request's tracing tag (content channels a
    blinding step cannot remove).
    """

    seed: int = 0
    group_offsets: dict[str, float] = Field(default_factory=dict)
    signal_channel: Literal["name_only", "full_content"] = "name_only"
    noise_sd: float = 0.0
    refusal_rate: float = 0.0
    catalog_path: Optional[str] = None

    @field_validator("noise_sd")
    @classmethod
    def _sd_nonneg(cls, v: float) -> float:
        if v < 0:
            raise ValueError("noise_sd must be >= 0")
        return v

    @field_validator("refusal_rate")
    @classmethod
    def _rate_range(cls, v: float) -> float:
        if not 0 <= v < 1:
            raise ValueError("refusal_rate must be in [0, 1)")
        return v


class ProviderConfig(BaseModel):
    """Endpoint description; the API key itself lives only in the named
    environment variable and is never serialized."""

    kind: Literal["openai_compatible", "simulated"]
    base_url: str = ""
    api_key_env: str = ""
    requests_per_minute: int = 600
    max_retries: int = 4
    backoff_base_ms: int = 250
    embed_model: str = "text-embedding-small"
    simulated: Optional[SimulatedRaterSpec] = None


def canonical_chat_payload(provider_id: str, request: ChatRequest) -> dict:
    return {
        "provider_id": provider_id,
        "model": request.model,
        "messages": [{"role": m.role.value, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }


def canonical_embed_payload(provider_id: str, model: str, text: str) -> dict:
    return {
        "provider_id": provider_id,
        "kind": "embedding",
        "model": model,
        "input": text,
        "dimensions": EMBEDDING_DIM,
    }


def cache_key(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed JSON file cache: {root}/{provider}/{key[:2]}/{key}.json.

    Concurrent readers are safe; writes go through a temp file + atomic
    rename (identical keys imply identical canonical requests, so
    last-writer-wins is harmless).
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path_for(self, provider_id: str, key: str) -> Path:
        return self.root / provider_id / key[:2] / f"{key}.json"

    def get(self, provider_id: str, key: str) -> dict | None:
        path = self.path_for(provider_id, key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, provider_id: str, key: str, document: dict) -> None:
        path = self.path_for(provider_id, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(document, fh, sort_keys=True, indent=1)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


class RateLimiter:
    """Client-side token bucket; one bucket per provider client."""

    def __init__(self, requests_per_minute: int, clock=time.monotonic, sleep=time.sleep):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self.capacity = float(requests_per_minute)
        self.rate = requests_per_minute / 60.0
        self.tokens = self.capacity
        self.updated = clock()
        self.clock = clock
        self.sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self.sleep(wait)


class Provider(Protocol):
    provider_id: str

    def complete(self, request: ChatRequest) -> ChatExchange: ...

    def embed(self, texts: list[str], model: str | None = None) -> list[list[float]]: ...


class ClientStats:
    def __init__(self) -> None:
        self.cache_hits = 0
        self.cache_misses = 0
        self.network_calls = 0
        self._lock = threading.Lock()

    def record(self, hit: bool, calls: int = 0) -> None:
        with self._lock:
            if hit:
                self.cache_hits += 1
            else:
                self.cache_misses += 1
            self.network_calls += calls

    def as_dict(self) -> dict:
        return {
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "network_calls": self.network_calls,
        }


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class OpenAICompatibleProvider:
    """POSTs to {base_url}/chat/completions and {base_url}/embeddings.

    ``transport`` is injectable for tests (httpx.MockTransport); ``sleep``
    likewise so backoff tests run instantly.
    """

    def __init__(
        self,
        provider_id: str,
        config: ProviderConfig,
        cache: ResponseCache | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        self.provider_id = provider_id
        self.config = config
        self.cache = cache
        self.stats = ClientStats()
        self.limiter = RateLimiter(config.requests_per_minute, sleep=sleep)
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"), transport=transport, timeout=120.0
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "") if self.config.api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_with_retries(self, path: str, body: dict) -> tuple[dict, int]:
        attempts = 0
        last_status = None
        last_body = ""
        for attempt in range(self.config.max_retries + 1):
            self.limiter.acquire()
            attempts += 1
            try:
                resp = self._client.post(path, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                raise ProviderError(
                    f"transport failure calling {path}: {exc}",
                    code="EXHAUSTED_RETRIES",
                    attempts=attempts,
                ) from exc
            if resp.status_code in (401, 403):
                raise ProviderError(
                    f"authentication failed ({resp.status_code}) calling {path}",
                    code="AUTH_FAILED",
                    status=resp.status_code,
                    body=resp.text,
                )
            if resp.status_code in RETRYABLE_STATUSES:
                last_status, last_body = resp.status_code, resp.text
                if attempt < self.config.max_retries:
                    self._sleep(self.config.backoff_base_ms / 1000.0 * (2**attempt))
                continue
            if resp.status_code != 200:
                raise ProviderError(
                    f"unexpected status {resp.status_code} from {path}",
                    code="MALFORMED_RESPONSE",
                    status=resp.status_code,
                    body=resp.text,
                )
            try:
                return resp.json(), attempts
            except json.JSONDecodeError as exc:
                raise ProviderError(
                    f"non-JSON response from {path}",
                    code="MALFORMED_RESPONSE",
                    body=resp.text,
                ) from exc
        raise ProviderError(
            f"retries exhausted after {attempts} attempts (last status {last_status})",
            code="EXHAUSTED_RETRIES",
            attempts=attempts,
            status=last_status,
            body=last_body,
        )

    def complete(self, request: ChatRequest) -> ChatExchange:
        key = cache_key(canonical_chat_payload(self.provider_id, request))
        if self.cache is not None:
            cached = self.cache.get(self.provider_id, key)
            if cached is not None:
                self.stats.record(hit=True)
                return ChatExchange.model_validate(cached)
        body = {
            "model": request.model,
            "messages": [
                {"role": m.role.value, "content": m.content} for m in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data, attempts = self._post_with_retries("/chat/completions", body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(
                "response missing choices[0].message.content",
                code="MALFORMED_RESPONSE",
                body=json.dumps(data)[:2000],
            ) from exc
        if not isinstance(text, str):
            raise ProviderError(
                "message content is not a string",
                code="MALFORMED_RESPONSE",
                body=json.dumps(data)[:2000],
            )
        exchange = ChatExchange(
            request=request,
            response_text=text,
            provider_id=self.provider_id,
            timestamp=_utcnow(),
            cache_key=key,
        )
        self.stats.record(hit=False, calls=attempts)
        if self.cache is not None:
            self.cache.put(self.provider_id, key, exchange.model_dump(mode="json"))
        return exchange

    def embed(self, texts: list[str], model: str | None = None) -> list[list[float]]:
        if not texts:
            return []
        model = model or self.config.embed_model
        vectors: dict[int, list[float]] = {}
        missing: list[int] = []
        keys = [cache_key(canonical_embed_payload(self.provider_id, model, t)) for t in texts]
        for i, key in enumerate(keys):
            cached = self.cache.get(self.provider_id, key) if self.cache is not None else None
            if cached is not None:
                self.stats.record(hit=True)
                vectors[i] = cached["vector"]
            else:
                missing.append(i)
        if missing:
            body = {
                "model": model,
                "input": [texts[i] for i in missing],
                "dimensions": EMBEDDING_DIM,
            }
            data, attempts = self._post_with_retries("/embeddings", body)
            try:
                got = [item["embedding"] for item in data["data"]]
            except (KeyError, TypeError) as exc:
                raise ProviderError(
                    "response missing data[i].embedding",
                    code="MALFORMED_RESPONSE",
                    body=json.dumps(data)[:2000],
                ) from exc
            if len(got) != len(missing):
                raise ProviderError(
                    f"expected {len(missing)} embeddings, got {len(got)}",
                    code="MALFORMED_RESPONSE",
                )
            self.stats.record(hit=False, calls=attempts)
            for i, vec in zip(missing, got):
                if len(vec) != EMBEDDING_DIM:
                    raise ProviderError(
                        f"embedding has {len(vec)} dimensions, expected {EMBEDDING_DIM}",
                        code="MALFORMED_RESPONSE",
                    )
                vectors[i] = [float(x) for x in vec]
                if self.cache is not None:
                    self.cache.put(
                        self.provider_id,
                        keys[i],
                        {"vector": vectors[i], "model": model, "timestamp": _utcnow()},
                    )
        return [vectors[i] for i in range(len(texts))]
