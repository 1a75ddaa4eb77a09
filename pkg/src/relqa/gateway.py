"""Chat-completion gateway with two backends.

The http backend speaks the common chat-completions wire format: POST
{endpoint_url}/chat/completions with messages/temperature/max_tokens, roles
system/user/assistant, bearer key from a named environment variable. The mock
backend replays a scripted JSON-lines file deterministically.

Responses are cached under a content hash so interrupted runs resume without
re-spending tokens. Cache writes are atomic; corrupt entries read as misses.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field

import requests

from .errors import ParseError, PipelineError
from .prompts import ChatTranscript

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 1024
_ROLE_WIRE = {"system": "system", "human": "user", "ai": "assistant"}


class GatewayError(PipelineError):
    pass


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class ScriptExhausted(MalformedResponse):
    pass


class MockMismatch(GatewayError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    messages: ChatTranscript
    model_name: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    request_tag: str = ""

    def __post_init__(self):
        if self.temperature < 0:
            raise GatewayError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens <= 0:
            raise GatewayError(f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    finish_reason: str
    usage: dict
    cached: bool = False


@dataclass(frozen=True)
class GatewayConfig:
    backend: str = "mock"
    endpoint_url: str = ""
    api_key_env: str = ""
    max_concurrency: int = 4
    max_attempts: int = 3
    backoff_base: float = 0.5
    cache_dir: str = ""
    mock_script: str = ""
    usage_log: str = ""
    timeout: float = 120.0

    def __post_init__(self):
        if self.backend not in ("http", "mock"):
            raise GatewayError(f"unknown backend {self.backend!r}")
        if self.backend == "http" and (not self.endpoint_url or not self.api_key_env):
            raise GatewayError("http backend requires endpoint_url and api_key_env")
        if self.backend == "mock" and not self.mock_script:
            raise GatewayError("mock backend requires mock_script")
        if self.max_concurrency <= 0:
            raise GatewayError("max_concurrency must be positive")
        if self.max_attempts <= 0:
            raise GatewayError("max_attempts must be positive")


def load_mock_script(path: str) -> list[dict]:
    """Parse a mock script: one {reply, match?} object per line, replies
    consumed in file order."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(rec, dict) or "reply" not in rec:
                raise ParseError(path, lineno, "entry must be an object with a reply")
            unknown = set(rec) - {"reply", "match"}
            if unknown:
                raise ParseError(path, lineno, f"unknown keys {sorted(unknown)}")
            if not isinstance(rec["reply"], str):
                raise ParseError(path, lineno, "reply must be a string")
            if "match" in rec and not isinstance(rec["match"], str):
                raise ParseError(path, lineno, "match must be a string")
            entries.append(rec)
    return entries


def cache_key(req: CompletionRequest) -> str:
    payload = {
        "messages": [[role, text] for role, text in req.messages.messages],
        "model": req.model_name,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "tag": req.request_tag,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _estimate_tokens(text: str) -> int:
    return len(text.split())


class Gateway:
    """Thread-safe completion client. At most max_concurrency live requests;
    the mock script is consumed under a lock so replay order is stable."""

    def __init__(self, cfg: GatewayConfig):
        self.cfg = cfg
        self._slots = threading.Semaphore(cfg.max_concurrency)
        self._ledger_lock = threading.Lock()
        self._mock_lock = threading.Lock()
        self._mock_entries: list[dict] = []
        self._mock_cursor = 0
        if cfg.backend == "mock":
            self._mock_entries = load_mock_script(cfg.mock_script)
        if cfg.cache_dir:
            os.makedirs(cfg.cache_dir, exist_ok=True)

    # -- cache ------------------------------------------------------------

    def _cache_path(self, key: str) -> str:
        return os.path.join(self.cfg.cache_dir, f"{key}.json")

    def _cache_read(self, key: str) -> CompletionResponse | None:
        if not self.cfg.cache_dir:
            return None
        path = self._cache_path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                rec = json.load(fh)
            return CompletionResponse(
                text=rec["text"],
                finish_reason=rec["finish_reason"],
                usage=rec["usage"],
                cached=True,
            )
        except FileNotFoundError:
            return None
        except (json.JSONDecodeError, KeyError, TypeError):
            logger.warning("discarding corrupt cache entry %s", path)
            return None

    def _cache_write(self, key: str, resp: CompletionResponse):
        if not self.cfg.cache_dir:
            return
        path = self._cache_path(key)
        tmp = f"{path}.tmp.{os.getpid()}.{threading.get_ident()}"
        rec = {"text": resp.text, "finish_reason": resp.finish_reason, "usage": resp.usage}
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(rec, fh, ensure_ascii=False)
        os.replace(tmp, path)

    def _record_usage(self, req: CompletionRequest, resp: CompletionResponse):
        if not self.cfg.usage_log:
            return
        rec = {
            "request_tag": req.request_tag,
            "model": req.model_name,
            "backend": self.cfg.backend,
            "usage": resp.usage,
        }
        line = json.dumps(rec, ensure_ascii=False) + "\n"
        with self._ledger_lock:
            with open(self.cfg.usage_log, "a", encoding="utf-8") as fh:
                fh.write(line)

    # -- backends ---------------------------------------------------------

    def _mock_complete(self, req: CompletionRequest) -> CompletionResponse:
        with self._mock_lock:
            if self._mock_cursor >= len(self._mock_entries):
                raise ScriptExhausted(
                    f"mock script exhausted after {len(self._mock_entries)} replies "
                    f"(request {req.request_tag!r})"
                )
            entry = self._mock_entries[self._mock_cursor]
            self._mock_cursor += 1
        if "match" in entry:
            final_human = req.messages.messages[-1][1]
            if entry["match"] not in final_human:
                raise MockMismatch(
                    f"request {req.request_tag!r} does not contain {entry['match']!r}"
                )
        reply = entry["reply"]
        prompt_tokens = sum(_estimate_tokens(t) for _, t in req.messages.messages)
        usage = {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": _estimate_tokens(reply),
            "total_tokens": prompt_tokens + _estimate_tokens(reply),
        }
        return CompletionResponse(text=reply, finish_reason="stop", usage=usage)

    def _http_complete(self, req: CompletionRequest) -> CompletionResponse:
        api_key = os.environ.get(self.cfg.api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {self.cfg.api_key_env} is not set")
        body = {
            "model": req.model_name,
            "messages": [
                {"role": _ROLE_WIRE[role], "content": text}
                for role, text in req.messages.messages
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        url = self.cfg.endpoint_url.rstrip("/") + "/chat/completions"
        last_error: GatewayError | None = None
        for attempt in range(1, self.cfg.max_attempts + 1):
            try:
                resp = requests.post(
                    url,
                    json=body,
                    headers={"Authorization": f"Bearer {api_key}"},
                    timeout=self.cfg.timeout,
                )
            except requests.RequestException as exc:
                last_error = TransportError(f"request failed: {exc}")
            else:
                if resp.status_code in (401, 403):
                    raise AuthError(f"endpoint returned {resp.status_code}")
                if resp.status_code == 429:
                    last_error = RateLimited("endpoint returned 429")
                elif resp.status_code >= 500:
                    last_error = TransportError(f"endpoint returned {resp.status_code}")
                elif resp.status_code != 200:
                    raise MalformedResponse(
                        f"endpoint returned {resp.status_code}: {resp.text[:200]}"
                    )
                else:
                    return self._parse_http_body(resp)
            if attempt < self.cfg.max_attempts:
                delay = self.cfg.backoff_base * (2 ** (attempt - 1))
                logger.warning(
                    "attempt %d/%d for %s failed (%s), retrying in %.1fs",
                    attempt,
                    self.cfg.max_attempts,
                    req.request_tag,
                    last_error,
                    delay,
                )
                time.sleep(delay)
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse_http_body(resp) -> CompletionResponse:
        try:
            payload = resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"response is not JSON: {exc}") from exc
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"]
            finish_reason = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response shape: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("message content is not a string")
        if finish_reason not in ("stop", "length", "error"):
            finish_reason = "stop"
        if finish_reason == "stop" and not text:
            raise MalformedResponse("empty content with finish_reason stop")
        usage = payload.get("usage") or {}
        return CompletionResponse(text=text, finish_reason=finish_reason, usage=usage)

    # -- public -----------------------------------------------------------

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        key = cache_key(req)
        hit = self._cache_read(key)
        if hit is not None:
            return hit
        with self._slots:
            if self.cfg.backend == "mock":
                resp = self._mock_complete(req)
            else:
                resp = self._http_complete(req)
        self._cache_write(key, resp)
        self._record_usage(req, resp)
        return resp
