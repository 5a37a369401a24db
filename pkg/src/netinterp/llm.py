"""Chat-completions client for OpenAI-compatible servers, plus a scripted mock.

Any backend exposes ``complete(request) -> ChatResponse``. The HTTP backend
speaks ``POST <base>/v1/chat/completions``; the mock answers from a script
keyed by a hash of (model, messages).
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from netinterp.errors import NetInterpError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class LLMError(NetInterpError):
    code = "llm_error"


class AuthFailure(LLMError):
    code = "auth_failure"


class BadRequest(LLMError):
    code = "bad_request"


class Exhausted(LLMError):
    code = "exhausted"


class MalformedResponse(LLMError):
    code = "malformed_response"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.2
    max_tokens: int = 1024
    stream: bool = False

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        for m in self.messages:
            if m.role not in ROLES:
                raise ValueError(f"unknown role {m.role!r}")
            if not m.content:
                raise ValueError("message content must be non-empty")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.stream:
            raise ValueError("streaming is not supported")

    @classmethod
    def for_prompt(cls, model: str, system: str, user: str, **kwargs: Any) -> "ChatRequest":
        return cls(model, (ChatMessage("system", system), ChatMessage("user", user)), **kwargs)

    def to_body(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stream": False,
        }

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"model": self.model, "messages": [m.to_dict() for m in self.messages]},
            sort_keys=True,
            ensure_ascii=False,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    model_id: str = ""
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse:
        ...


_THINK_SPAN = re.compile(r"<think>.*?</think>", re.DOTALL)


def strip_reasoning(content: str) -> str:
    """Remove ``<think>...</think>`` reasoning spans.

    An unclosed ``<think>`` drops the rest of the text. A stray ``</think>``
    with no opening tag drops everything before it, which is how
    R1-distilled models look when the chat template injects the opening tag.
    """
    text = _THINK_SPAN.sub("", content)
    start = text.find("<think>")
    if start != -1:
        text = text[:start]
    end = text.rfind("</think>")
    if end != -1:
        text = text[end + len("</think>"):]
    return text.strip()


def _finish_reason(value: Any) -> str:
    return value if value in ("stop", "length") else "other"


def parse_completion(body: Any) -> ChatResponse:
    try:
        choice = body["choices"][0]
        content = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse("response has no first choice message") from exc
    if content is None:
        content = ""
    if not isinstance(content, str):
        raise MalformedResponse("message content is not text")
    finish = _finish_reason(choice.get("finish_reason"))
    if finish == "stop" and not content:
        raise MalformedResponse("empty content with finish_reason=stop")
    usage = body.get("usage") if isinstance(body.get("usage"), Mapping) else {}
    return ChatResponse(
        content=content,
        finish_reason=finish,
        model_id=str(body.get("model") or ""),
        prompt_tokens=usage.get("prompt_tokens"),
        completion_tokens=usage.get("completion_tokens"),
    )


class HTTPChatBackend:
    """Live backend with bounded retry.

    Retries HTTP 429, 5xx, timeouts and connection errors with full-jitter
    exponential backoff. The API key is only ever placed in the
    ``Authorization`` header.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout_ms: int = 60000,
        max_attempts: int = 3,
        base_delay_s: float = 0.5,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        base = base_url.rstrip("/")
        if base.endswith("/v1"):
            base = base[: -len("/v1")]
        self.url = f"{base}/v1/chat/completions"
        self.max_attempts = max_attempts
        self.base_delay_s = base_delay_s
        self._sleep = sleep
        self._rng = rng or random.Random()
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._http = httpx.Client(timeout=timeout_ms / 1000, headers=headers, transport=transport)

    def close(self) -> None:
        self._http.close()

    def __repr__(self) -> str:
        return f"HTTPChatBackend(url={self.url!r})"

    def backoff(self, attempt: int) -> float:
        """Full jitter: uniform in [0, base * 2**attempt]."""
        return self._rng.uniform(0, self.base_delay_s * (2 ** attempt))

    def complete(self, request: ChatRequest) -> ChatResponse:
        body = request.to_body()
        last = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff(attempt - 1))
            try:
                resp = self._http.post(self.url, json=body)
            except httpx.TimeoutException:
                last = "timeout"
                log.warning("chat completion attempt %d timed out", attempt + 1)
                continue
            except httpx.TransportError as exc:
                last = type(exc).__name__
                log.warning("chat completion attempt %d failed: %s", attempt + 1, last)
                continue

            status = resp.status_code
            if status in (401, 403):
                raise AuthFailure(f"endpoint rejected credentials (HTTP {status})")
            if status == 429 or status >= 500:
                last = f"HTTP {status}"
                log.warning("chat completion attempt %d got HTTP %d", attempt + 1, status)
                continue
            if status >= 400:
                raise BadRequest(f"endpoint rejected request (HTTP {status})")
            try:
                payload = resp.json()
            except ValueError as exc:
                raise MalformedResponse("response body is not JSON") from exc
            return parse_completion(payload)
        raise Exhausted(f"gave up after {self.max_attempts} attempts (last: {last})")


def chat_complete(
    req: ChatRequest,
    endpoint: str,
    credentials: str | None = None,
    **kwargs: Any,
) -> ChatResponse:
    """One-shot call through a temporary :class:`HTTPChatBackend`."""
    backend = HTTPChatBackend(endpoint, api_key=credentials, **kwargs)
    try:
        return backend.complete(req)
    finally:
        backend.close()


DEFAULT_MOCK_CONTENT = (
    "OVERALL:\nThis is a canned response from the mock language model backend.\n"
    "METRICS:\nRECOMMENDATIONS:\n"
)


@dataclass
class MockBackend:
    """Deterministic stand-in for a model server.

    ``script`` maps request fingerprints (see :meth:`ChatRequest.fingerprint`)
    to a reply text or a full :class:`ChatResponse`. Unknown requests get
    ``default``. Every request is kept in ``calls``.
    """

    script: Mapping[str, str | ChatResponse]
    default: str | ChatResponse = DEFAULT_MOCK_CONTENT
    model_id: str = "mock-model"
    calls: list[ChatRequest] = field(default_factory=list)

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        reply = self.script.get(request.fingerprint(), self.default)
        if isinstance(reply, ChatResponse):
            return reply
        return ChatResponse(content=reply, finish_reason="stop", model_id=self.model_id)


def mock_backend(script: Mapping[str, str | ChatResponse], **kwargs: Any) -> MockBackend:
    if not script:
        raise ValueError("mock script must not be empty")
    return MockBackend(dict(script), **kwargs)


def script_entry(request: ChatRequest, reply: str) -> dict[str, str]:
    return {request.fingerprint(): reply}


def as_messages(items: Sequence[Mapping[str, str]]) -> tuple[ChatMessage, ...]:
    return tuple(ChatMessage(i["role"], i["content"]) for i in items)
